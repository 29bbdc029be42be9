/**
 * Wire types and codecs for the meshsplat editor protocol (docs/protocol.md),
 * plus the camera math shared by the overlay and the drag tools.
 *
 * Binary frames carry a one-byte kind tag: 0x01 = PNG image frame
 * (u32 width, u32 height, png bytes), 0x02 = vertex buffer (u32 count,
 * count*3 float32). All integers little-endian.
 */

export const PROTOCOL_VERSION = 1;

export const FRAME_KIND_IMAGE = 0x01;
export const FRAME_KIND_VERTICES = 0x02;

export interface CameraJson {
  world_to_camera: number[]; // row-major 4x4
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  near: number;
  far: number;
}

export interface StateInfo {
  scene_kind: "soup" | "bound";
  splat_count: number;
  vertex_count: number;
  undo_depth: number;
  redo_depth: number;
}

export interface HelloMsg extends StateInfo {
  type: "hello";
  protocol: number;
  session: number;
  max_undo: number;
  camera: CameraJson;
}

export interface AckMsg extends StateInfo {
  type: "ack";
  id?: number;
  op: string;
  camera?: CameraJson;
  indices?: number[];
  applied?: boolean;
  width?: number;
  height?: number;
  render_ms?: number;
}

export interface ErrorMsg {
  type: "error";
  id?: number;
  code: string;
  message: string;
  detail?: { face_index?: number };
}

export type ServerMsg = HelloMsg | AckMsg | ErrorMsg;

export function parseServerText(data: string): ServerMsg {
  const doc = JSON.parse(data);
  if (typeof doc !== "object" || doc === null || typeof doc.type !== "string") {
    throw new Error("malformed server message");
  }
  return doc as ServerMsg;
}

export type ImageFrame = { kind: "frame"; width: number; height: number; png: Uint8Array };
export type VertexFrame = { kind: "vertices"; vertices: Float32Array };

export function parseBinary(buffer: ArrayBuffer): ImageFrame | VertexFrame {
  const view = new DataView(buffer);
  const tag = view.getUint8(0);
  if (tag === FRAME_KIND_IMAGE) {
    const width = view.getUint32(1, true);
    const height = view.getUint32(5, true);
    return { kind: "frame", width, height, png: new Uint8Array(buffer, 9) };
  }
  if (tag === FRAME_KIND_VERTICES) {
    const count = view.getUint32(1, true);
    const vertices = new Float32Array(count * 3);
    for (let i = 0; i < count * 3; i++) {
      vertices[i] = view.getFloat32(5 + 4 * i, true);
    }
    return { kind: "vertices", vertices };
  }
  throw new Error(`unknown binary frame kind 0x${tag.toString(16)}`);
}

export type Vec3 = [number, number, number];

/** Apply the camera's world-to-camera transform. */
export function toCameraSpace(cam: CameraJson, p: Vec3): Vec3 {
  const m = cam.world_to_camera;
  return [
    m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3],
    m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
    m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11],
  ];
}

export interface ScreenPoint {
  x: number;
  y: number;
  depth: number;
}

/**
 * Pinhole projection matching the renderer: pixel (row i, col j) samples the
 * plane at (x=j, y=i). Points at or behind the camera get depth <= 0.
 */
export function projectPoint(cam: CameraJson, p: Vec3): ScreenPoint {
  const [x, y, z] = toCameraSpace(cam, p);
  if (z <= 0) {
    return { x: NaN, y: NaN, depth: z };
  }
  return { x: (cam.fx * x) / z + cam.cx, y: (cam.fy * y) / z + cam.cy, depth: z };
}

/** Camera center in world coordinates (-R^T t). */
export function cameraEye(cam: CameraJson): Vec3 {
  const m = cam.world_to_camera;
  const tx = m[3], ty = m[7], tz = m[11];
  return [
    -(m[0] * tx + m[4] * ty + m[8] * tz),
    -(m[1] * tx + m[5] * ty + m[9] * tz),
    -(m[2] * tx + m[6] * ty + m[10] * tz),
  ];
}

/**
 * Back-project a screen-space drag into a world displacement in the camera
 * plane at the given depth: the mechanism that turns mouse motion into
 * move_vertices deltas.
 */
export function dragToWorldDelta(cam: CameraJson, dx: number, dy: number, depth: number): Vec3 {
  const camDelta: Vec3 = [(dx * depth) / cam.fx, (dy * depth) / cam.fy, 0];
  const m = cam.world_to_camera;
  // Rows of the rotation are the camera axes in world coordinates.
  return [
    m[0] * camDelta[0] + m[4] * camDelta[1] + m[8] * camDelta[2],
    m[1] * camDelta[0] + m[5] * camDelta[1] + m[9] * camDelta[2],
    m[2] * camDelta[0] + m[6] * camDelta[1] + m[10] * camDelta[2],
  ];
}

export interface OrbitState {
  target: Vec3;
  radius: number;
  azimuth: number; // radians around the world +z axis
  elevation: number; // radians above the target plane
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
}

function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}

/**
 * Build the orbit camera, mirroring the service's look-at convention
 * (+z forward, y down, world up +z).
 */
export function orbitCamera(
  orbit: OrbitState,
  width: number,
  height: number,
  fovX: number = Math.PI / 3,
  near = 0.01,
  far = 1000,
): CameraJson {
  const ce = Math.cos(orbit.elevation);
  const eye: Vec3 = [
    orbit.target[0] + orbit.radius * ce * Math.cos(orbit.azimuth),
    orbit.target[1] + orbit.radius * ce * Math.sin(orbit.azimuth),
    orbit.target[2] + orbit.radius * Math.sin(orbit.elevation),
  ];
  const forward = normalize([
    orbit.target[0] - eye[0],
    orbit.target[1] - eye[1],
    orbit.target[2] - eye[2],
  ]);
  let right = cross(forward, [0, 0, 1]);
  const norm = Math.hypot(right[0], right[1], right[2]);
  right = norm < 1e-9 ? [1, 0, 0] : [right[0] / norm, right[1] / norm, right[2] / norm];
  const down = cross(forward, right);
  const fx = (0.5 * width) / Math.tan(0.5 * fovX);
  const r = right, d = down, f = forward;
  const world_to_camera = [
    r[0], r[1], r[2], -(r[0] * eye[0] + r[1] * eye[1] + r[2] * eye[2]),
    d[0], d[1], d[2], -(d[0] * eye[0] + d[1] * eye[1] + d[2] * eye[2]),
    f[0], f[1], f[2], -(f[0] * eye[0] + f[1] * eye[1] + f[2] * eye[2]),
    0, 0, 0, 1,
  ];
  return {
    world_to_camera,
    fx,
    fy: fx,
    cx: width / 2,
    cy: height / 2,
    width,
    height,
    near,
    far,
  };
}
