/**
 * Request/reply plumbing over one WebSocket.
 *
 * Replies are correlated by id; binary frames are routed by kind tag. Renders
 * are debounced to one in flight: while a render is outstanding, further
 * requests collapse into a single follow-up render.
 */

import {
  AckMsg,
  ErrorMsg,
  HelloMsg,
  ImageFrame,
  ServerMsg,
  parseBinary,
  parseServerText,
} from "./protocol.js";

/** The subset of the WebSocket API the connection relies on. Both the
 * browser's WebSocket (binaryType = "arraybuffer") and the ws package fit. */
export interface SocketLike {
  binaryType: string;
  send(data: string): void;
  close(): void;
  onopen: ((event?: unknown) => void) | null;
  onmessage: ((event: { data: unknown }) => void) | null;
  onclose: ((event?: unknown) => void) | null;
  onerror: ((event?: unknown) => void) | null;
}

interface Pending {
  resolve: (ack: AckMsg) => void;
  reject: (err: Error) => void;
}

export class ServiceRejection extends Error {
  constructor(public payload: ErrorMsg) {
    super(payload.message);
  }
}

export class ServiceConnection {
  hello: HelloMsg | null = null;
  closed = false;

  onHello: ((hello: HelloMsg) => void) | null = null;
  onVertices: ((vertices: Float32Array) => void) | null = null;
  onFrame: ((frame: ImageFrame) => void) | null = null;
  onState: ((state: AckMsg) => void) | null = null;
  onClose: (() => void) | null = null;

  private nextId = 1;
  private pending = new Map<number, Pending>();
  private renderInFlight = false;
  private renderQueued = false;

  constructor(private socket: SocketLike) {
    socket.binaryType = "arraybuffer";
    socket.onmessage = (event) => this.handleMessage(event.data);
    socket.onclose = () => this.handleClose();
    socket.onerror = () => this.handleClose();
  }

  private handleClose(): void {
    if (this.closed) return;
    this.closed = true;
    for (const { reject } of this.pending.values()) {
      reject(new Error("connection closed"));
    }
    this.pending.clear();
    this.onClose?.();
  }

  private handleMessage(data: unknown): void {
    if (typeof data === "string") {
      this.handleText(parseServerText(data));
      return;
    }
    let buffer: ArrayBuffer;
    if (data instanceof ArrayBuffer) {
      buffer = data;
    } else if (ArrayBuffer.isView(data as ArrayBufferView)) {
      const view = data as ArrayBufferView;
      buffer = view.buffer.slice(view.byteOffset, view.byteOffset + view.byteLength) as ArrayBuffer;
    } else {
      return;
    }
    const frame = parseBinary(buffer);
    if (frame.kind === "vertices") {
      this.onVertices?.(frame.vertices);
    } else {
      this.onFrame?.(frame);
    }
  }

  private handleText(message: ServerMsg): void {
    if (message.type === "hello") {
      this.hello = message;
      this.onHello?.(message);
      return;
    }
    const id = message.id;
    const pending = typeof id === "number" ? this.pending.get(id) : undefined;
    if (pending && typeof id === "number") {
      this.pending.delete(id);
      if (message.type === "ack") {
        this.onState?.(message);
        pending.resolve(message);
      } else {
        pending.reject(new ServiceRejection(message));
      }
    } else if (message.type === "ack") {
      this.onState?.(message);
    }
  }

  request(payload: Record<string, unknown>): Promise<AckMsg> {
    if (this.closed) {
      return Promise.reject(new Error("connection closed"));
    }
    const id = this.nextId++;
    const promise = new Promise<AckMsg>((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
    });
    this.socket.send(JSON.stringify({ id, ...payload }));
    return promise;
  }

  /** Ask for a frame; collapses bursts into at most one outstanding render. */
  scheduleRender(): void {
    if (this.renderInFlight) {
      this.renderQueued = true;
      return;
    }
    this.renderInFlight = true;
    this.request({ type: "render" })
      .catch(() => undefined)
      .finally(() => {
        this.renderInFlight = false;
        if (this.renderQueued) {
          this.renderQueued = false;
          this.scheduleRender();
        }
      });
  }

  close(): void {
    this.socket.close();
    this.handleClose();
  }
}
