/**
 * Editor state machine, UI-framework-free so it can be tested headless.
 *
 * The client never mutates scene geometry locally: vertex positions only
 * change when the service sends a vertex buffer, and the overlay always
 * projects with the camera the service last acknowledged, so overlay and
 * frame can never desynchronize by more than one round-trip.
 */

import { ServiceConnection, ServiceRejection } from "./connection.js";
import {
  AckMsg,
  CameraJson,
  ErrorMsg,
  HelloMsg,
  ImageFrame,
  OrbitState,
  PROTOCOL_VERSION,
  Vec3,
  cameraEye,
  dragToWorldDelta,
  orbitCamera,
  projectPoint,
  toCameraSpace,
} from "./protocol.js";

export interface ScreenRect {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

function isIdentityTransform(params: {
  rigid?: { rotation?: number[]; translation?: number[] };
  scale?: { factors: number[] };
}): boolean {
  if (params.scale) {
    return params.scale.factors.every((f) => f === 1);
  }
  if (params.rigid) {
    const r = params.rigid.rotation ?? [1, 0, 0, 0];
    const t = params.rigid.translation ?? [0, 0, 0];
    return Math.abs(r[0]) === 1 && r[1] === 0 && r[2] === 0 && r[3] === 0 && t.every((x) => x === 0);
  }
  return true;
}

export class EditorState {
  vertices: Float32Array = new Float32Array(0);
  camera: CameraJson | null = null; // exactly the last service-acknowledged camera
  selection: number[] = [];
  undoDepth = 0;
  redoDepth = 0;
  splatCount = 0;
  pendingEdit = false;
  lastFrame: ImageFrame | null = null;
  lastError: ErrorMsg | null = null;
  protocolWarning: string | null = null;
  renderMs: number | null = null;

  onChanged: (() => void) | null = null;

  constructor(public connection: ServiceConnection) {
    connection.onHello = (hello) => this.applyHello(hello);
    connection.onVertices = (vertices) => {
      this.vertices = vertices;
      this.notify();
    };
    connection.onFrame = (frame) => {
      this.lastFrame = frame;
      this.notify();
    };
    connection.onState = (ack) => this.applyState(ack);
    if (connection.hello) {
      this.applyHello(connection.hello);
    }
  }

  private notify(): void {
    this.onChanged?.();
  }

  private applyHello(hello: HelloMsg): void {
    this.camera = hello.camera;
    this.splatCount = hello.splat_count;
    this.undoDepth = hello.undo_depth;
    this.redoDepth = hello.redo_depth;
    this.selection = [];
    this.protocolWarning =
      hello.protocol === PROTOCOL_VERSION
        ? null
        : `service speaks protocol ${hello.protocol}, client expects ${PROTOCOL_VERSION}`;
    this.notify();
  }

  private applyState(ack: AckMsg): void {
    this.undoDepth = ack.undo_depth;
    this.redoDepth = ack.redo_depth;
    this.splatCount = ack.splat_count;
    if (ack.camera) {
      this.camera = ack.camera;
    }
    if (typeof ack.render_ms === "number") {
      this.renderMs = ack.render_ms;
    }
    this.notify();
  }

  vertexCount(): number {
    return this.vertices.length / 3;
  }

  vertex(i: number): Vec3 {
    return [this.vertices[3 * i], this.vertices[3 * i + 1], this.vertices[3 * i + 2]];
  }

  /** Screen positions of all vertices under the acknowledged camera;
   * entries behind the camera are NaN. */
  projectedVertices(): Float32Array {
    const out = new Float32Array(this.vertexCount() * 2).fill(NaN);
    if (!this.camera) return out;
    for (let i = 0; i < this.vertexCount(); i++) {
      const p = projectPoint(this.camera, this.vertex(i));
      out[2 * i] = p.x;
      out[2 * i + 1] = p.y;
    }
    return out;
  }

  /** Select every vertex projecting inside the screen rectangle. */
  selectRect(rect: ScreenRect): number[] {
    const xmin = Math.min(rect.x0, rect.x1);
    const xmax = Math.max(rect.x0, rect.x1);
    const ymin = Math.min(rect.y0, rect.y1);
    const ymax = Math.max(rect.y0, rect.y1);
    const projected = this.projectedVertices();
    const picked: number[] = [];
    for (let i = 0; i < this.vertexCount(); i++) {
      const x = projected[2 * i];
      const y = projected[2 * i + 1];
      if (x >= xmin && x <= xmax && y >= ymin && y <= ymax) {
        picked.push(i);
      }
    }
    this.selection = picked;
    this.notify();
    return picked;
  }

  selectionCentroid(): Vec3 | null {
    if (this.selection.length === 0) return null;
    const c: Vec3 = [0, 0, 0];
    for (const i of this.selection) {
      const v = this.vertex(i);
      c[0] += v[0];
      c[1] += v[1];
      c[2] += v[2];
    }
    const n = this.selection.length;
    return [c[0] / n, c[1] / n, c[2] / n];
  }

  /**
   * Drag the selection by a screen-space delta: back-projected to a world
   * displacement in the camera plane at the selection centroid depth. A zero
   * delta emits no request. The overlay only moves when the service confirms
   * (it sends the new vertex buffer); a rejection leaves it in place.
   */
  async dragSelection(dxPixels: number, dyPixels: number): Promise<AckMsg | null> {
    if (!this.camera || this.selection.length === 0) return null;
    if (dxPixels === 0 && dyPixels === 0) return null;
    const centroid = this.selectionCentroid()!;
    const depth = toCameraSpace(this.camera, centroid)[2];
    const delta = dragToWorldDelta(this.camera, dxPixels, dyPixels, depth);
    return this.sendEdit({ type: "move_vertices", indices: this.selection, delta });
  }

  async transformSelection(params: {
    rigid?: { rotation?: number[]; translation?: number[]; pivot?: number[] };
    scale?: { factors: number[]; pivot?: number[] };
  }): Promise<AckMsg | null> {
    if (this.selection.length === 0) return null;
    if (isIdentityTransform(params)) return null;
    return this.sendEdit({
      type: "transform_group",
      indices: this.selection,
      ...params,
    });
  }

  private async sendEdit(payload: Record<string, unknown>): Promise<AckMsg> {
    this.pendingEdit = true;
    this.notify();
    try {
      const ack = await this.connection.request(payload);
      this.connection.scheduleRender();
      return ack;
    } catch (err) {
      if (err instanceof ServiceRejection) {
        this.lastError = err.payload;
      }
      throw err;
    } finally {
      this.pendingEdit = false;
      this.notify();
    }
  }

  async undo(): Promise<boolean> {
    const ack = await this.connection.request({ type: "undo" });
    if (ack.applied) this.connection.scheduleRender();
    return ack.applied === true;
  }

  async redo(): Promise<boolean> {
    const ack = await this.connection.request({ type: "redo" });
    if (ack.applied) this.connection.scheduleRender();
    return ack.applied === true;
  }

  /** Send an orbit pose; the acknowledged camera drives the overlay. */
  async setOrbitCamera(orbit: OrbitState, width: number, height: number): Promise<AckMsg> {
    const camera = orbitCamera(orbit, width, height);
    const ack = await this.connection.request({ type: "set_camera", camera });
    this.connection.scheduleRender();
    return ack;
  }

  /** A reasonable initial orbit that frames the current vertices. */
  defaultOrbit(): OrbitState {
    const eye = this.camera ? cameraEye(this.camera) : [3, 2, 2];
    let target: Vec3 = [0, 0, 0];
    if (this.vertexCount() > 0) {
      const lo: Vec3 = [Infinity, Infinity, Infinity];
      const hi: Vec3 = [-Infinity, -Infinity, -Infinity];
      for (let i = 0; i < this.vertexCount(); i++) {
        const v = this.vertex(i);
        for (let a = 0; a < 3; a++) {
          lo[a] = Math.min(lo[a], v[a]);
          hi[a] = Math.max(hi[a], v[a]);
        }
      }
      target = [(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2];
    }
    const dx = eye[0] - target[0];
    const dy = eye[1] - target[1];
    const dz = eye[2] - target[2];
    const radius = Math.max(Math.hypot(dx, dy, dz), 1e-3);
    return {
      target,
      radius,
      azimuth: Math.atan2(dy, dx),
      elevation: Math.asin(Math.max(-1, Math.min(1, dz / radius))),
    };
  }
}
