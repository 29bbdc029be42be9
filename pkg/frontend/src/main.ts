/**
 * DOM wiring for the editor: frame image + vertex overlay canvas, orbit /
 * box-select / drag mouse tools, undo-redo buttons, status bar.
 */

import { ServiceConnection, SocketLike } from "./connection.js";
import { EditorState } from "./editor.js";
import { ImageFrame, OrbitState, dragToWorldDelta } from "./protocol.js";

type Tool = "orbit" | "pan" | "select" | "drag";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

function wsUrl(): string {
  const proto = location.protocol === "https:" ? "wss" : "ws";
  return `${proto}://${location.host}/ws`;
}

class EditorApp {
  private state!: EditorState;
  private orbit: OrbitState | null = null;
  private frameImg = byId<HTMLImageElement>("frame");
  private overlay = byId<HTMLCanvasElement>("overlay");
  private banner = byId<HTMLDivElement>("banner");
  private status = byId<HTMLDivElement>("status");
  private frameUrl: string | null = null;
  private displayedFrame: ImageFrame | null = null;
  private dragStart: { x: number; y: number; tool: Tool } | null = null;
  private dragAccum = { x: 0, y: 0 };
  private selectRect: { x0: number; y0: number; x1: number; y1: number } | null = null;
  private orbitDirty = false;
  private orbitTimer: number | null = null;
  private inputsBound = false;

  connect(): void {
    this.showBanner("connecting...", "info");
    const socket = new WebSocket(wsUrl());
    const connection = new ServiceConnection(socket as unknown as SocketLike);
    this.state = new EditorState(connection);
    this.orbit = null;
    this.displayedFrame = null;
    this.state.onChanged = () => {
      if (this.orbit === null && this.state.camera) {
        this.hideBanner();
        this.orbit = this.state.defaultOrbit();
        connection.scheduleRender();
      }
      this.displayFrame();
      this.refresh();
    };
    connection.onClose = () => {
      this.showBanner("connection lost - retrying in 2s", "error");
      setTimeout(() => this.connect(), 2000);
    };
    this.bindInputs();
  }

  private displayFrame(): void {
    const frame = this.state.lastFrame;
    if (!frame || frame === this.displayedFrame) return;
    this.displayedFrame = frame;
    const blob = new Blob([frame.png as BlobPart], { type: "image/png" });
    const url = URL.createObjectURL(blob);
    this.frameImg.src = url;
    if (this.frameUrl) URL.revokeObjectURL(this.frameUrl);
    this.frameUrl = url;
  }

  private showBanner(text: string, kind: "info" | "error"): void {
    this.banner.textContent = text;
    this.banner.className = `banner ${kind}`;
    this.banner.style.display = "block";
  }

  private hideBanner(): void {
    this.banner.style.display = "none";
  }

  private currentTool(event: MouseEvent): Tool {
    if (event.button === 2 || event.altKey) return "pan";
    if (event.shiftKey) return "select";
    if (this.state.selection.length > 0 && !event.ctrlKey) {
      // Dragging starting on/near the selection moves it; elsewhere orbits.
      const rect = this.overlay.getBoundingClientRect();
      const x = event.clientX - rect.left;
      const y = event.clientY - rect.top;
      const projected = this.state.projectedVertices();
      for (const i of this.state.selection) {
        if (Math.hypot(projected[2 * i] - x, projected[2 * i + 1] - y) < 12) {
          return "drag";
        }
      }
    }
    return "orbit";
  }

  private bindInputs(): void {
    if (this.inputsBound) return;
    this.inputsBound = true;
    this.overlay.addEventListener("contextmenu", (event) => event.preventDefault());
    this.overlay.addEventListener("mousedown", (event) => {
      const rect = this.overlay.getBoundingClientRect();
      const x = event.clientX - rect.left;
      const y = event.clientY - rect.top;
      this.dragStart = { x, y, tool: this.currentTool(event) };
      this.dragAccum = { x: 0, y: 0 };
      if (this.dragStart.tool === "select") {
        this.selectRect = { x0: x, y0: y, x1: x, y1: y };
      }
    });
    window.addEventListener("mousemove", (event) => {
      if (!this.dragStart || !this.orbit) return;
      const rect = this.overlay.getBoundingClientRect();
      const x = event.clientX - rect.left;
      const y = event.clientY - rect.top;
      const dx = x - this.dragStart.x;
      const dy = y - this.dragStart.y;
      if (this.dragStart.tool === "select" && this.selectRect) {
        this.selectRect.x1 = x;
        this.selectRect.y1 = y;
        this.drawOverlay();
      } else if (this.dragStart.tool === "orbit") {
        this.orbit.azimuth -= dx * 0.008;
        this.orbit.elevation = Math.max(
          -1.5,
          Math.min(1.5, this.orbit.elevation + dy * 0.008),
        );
        this.dragStart.x = x;
        this.dragStart.y = y;
        this.pushOrbit();
      } else if (this.dragStart.tool === "pan") {
        if (this.state.camera) {
          // Slide the orbit target opposite the drag, in the camera plane at
          // the target's depth.
          const delta = dragToWorldDelta(this.state.camera, -dx, -dy, this.orbit.radius);
          this.orbit.target = [
            this.orbit.target[0] + delta[0],
            this.orbit.target[1] + delta[1],
            this.orbit.target[2] + delta[2],
          ];
        }
        this.dragStart.x = x;
        this.dragStart.y = y;
        this.pushOrbit();
      } else {
        this.dragAccum.x += dx;
        this.dragAccum.y += dy;
        this.dragStart.x = x;
        this.dragStart.y = y;
        this.drawOverlay();
      }
    });
    window.addEventListener("mouseup", () => {
      if (!this.dragStart) return;
      const tool = this.dragStart.tool;
      this.dragStart = null;
      if (tool === "select" && this.selectRect) {
        this.state.selectRect(this.selectRect);
        this.selectRect = null;
        this.refresh();
      } else if (tool === "drag") {
        const { x, y } = this.dragAccum;
        this.dragAccum = { x: 0, y: 0 };
        this.state.dragSelection(x, y).catch(() => this.refresh());
      }
    });
    this.overlay.addEventListener("wheel", (event) => {
      event.preventDefault();
      if (!this.orbit) return;
      this.orbit.radius *= Math.exp(event.deltaY * 0.001);
      this.pushOrbit();
    });
    byId<HTMLButtonElement>("undo").addEventListener("click", () => {
      void this.state.undo();
    });
    byId<HTMLButtonElement>("redo").addEventListener("click", () => {
      void this.state.redo();
    });
    byId<HTMLButtonElement>("clear-selection").addEventListener("click", () => {
      this.state.selection = [];
      this.refresh();
    });
    byId<HTMLButtonElement>("grow").addEventListener("click", () => {
      void this.state.transformSelection({ scale: { factors: [1.25, 1.25, 1.25] } });
    });
    byId<HTMLButtonElement>("shrink").addEventListener("click", () => {
      void this.state.transformSelection({ scale: { factors: [0.8, 0.8, 0.8] } });
    });
  }

  /** Debounce orbit updates: at most one set_camera request per UI tick. */
  private pushOrbit(): void {
    this.orbitDirty = true;
    if (this.orbitTimer !== null) return;
    this.orbitTimer = window.setTimeout(() => {
      this.orbitTimer = null;
      if (!this.orbitDirty || !this.orbit) return;
      this.orbitDirty = false;
      void this.state.setOrbitCamera(this.orbit, 512, 512);
    }, 33);
  }

  private drawOverlay(): void {
    const cam = this.state.camera;
    const ctx = this.overlay.getContext("2d");
    if (!ctx || !cam) return;
    if (this.overlay.width !== cam.width || this.overlay.height !== cam.height) {
      this.overlay.width = cam.width;
      this.overlay.height = cam.height;
    }
    ctx.clearRect(0, 0, cam.width, cam.height);
    const projected = this.state.projectedVertices();
    const selected = new Set(this.state.selection);
    for (let i = 0; i < projected.length / 2; i++) {
      const x = projected[2 * i] + (selected.has(i) ? this.dragAccum.x : 0);
      const y = projected[2 * i + 1] + (selected.has(i) ? this.dragAccum.y : 0);
      if (!Number.isFinite(x) || !Number.isFinite(y)) continue;
      ctx.fillStyle = selected.has(i) ? "#ff9f40" : "rgba(120, 200, 255, 0.7)";
      ctx.fillRect(x - 1.5, y - 1.5, 3, 3);
    }
    if (this.selectRect) {
      const { x0, y0, x1, y1 } = this.selectRect;
      ctx.strokeStyle = "#ffd166";
      ctx.setLineDash([4, 3]);
      ctx.strokeRect(Math.min(x0, x1), Math.min(y0, y1), Math.abs(x1 - x0), Math.abs(y1 - y0));
      ctx.setLineDash([]);
    }
  }

  private refresh(): void {
    if (this.state.protocolWarning) {
      this.showBanner(this.state.protocolWarning, "error");
    }
    if (this.state.lastError) {
      this.showBanner(`edit rejected: ${this.state.lastError.message}`, "error");
      this.state.lastError = null;
      window.setTimeout(() => this.hideBanner(), 2500);
    }
    const s = this.state;
    this.status.textContent =
      `splats ${s.splatCount} | vertices ${s.vertexCount()} | selected ${s.selection.length}` +
      ` | undo ${s.undoDepth} / redo ${s.redoDepth}` +
      (s.renderMs !== null ? ` | render ${s.renderMs.toFixed(0)} ms` : "") +
      (s.pendingEdit ? " | edit pending..." : "");
    this.drawOverlay();
  }
}

new EditorApp().connect();
