import { describe, expect, it } from "vitest";

import {
  CameraJson,
  FRAME_KIND_IMAGE,
  FRAME_KIND_VERTICES,
  cameraEye,
  dragToWorldDelta,
  orbitCamera,
  parseBinary,
  parseServerText,
  projectPoint,
} from "../src/protocol.js";

function identityCamera(overrides: Partial<CameraJson> = {}): CameraJson {
  return {
    world_to_camera: [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1],
    fx: 100,
    fy: 100,
    cx: 32,
    cy: 32,
    width: 64,
    height: 64,
    near: 0.01,
    far: 100,
    ...overrides,
  };
}

function binaryFrame(kind: number, body: Uint8Array): ArrayBuffer {
  const out = new Uint8Array(1 + body.length);
  out[0] = kind;
  out.set(body, 1);
  return out.buffer;
}

describe("binary codecs", () => {
  it("parses an image frame", () => {
    const header = new Uint8Array(8);
    new DataView(header.buffer).setUint32(0, 512, true);
    new DataView(header.buffer).setUint32(4, 256, true);
    const png = new Uint8Array([0x89, 0x50, 0x4e, 0x47]);
    const body = new Uint8Array(8 + png.length);
    body.set(header, 0);
    body.set(png, 8);
    const frame = parseBinary(binaryFrame(FRAME_KIND_IMAGE, body));
    expect(frame.kind).toBe("frame");
    if (frame.kind === "frame") {
      expect(frame.width).toBe(512);
      expect(frame.height).toBe(256);
      expect(Array.from(frame.png)).toEqual([0x89, 0x50, 0x4e, 0x47]);
    }
  });

  it("parses a vertex buffer", () => {
    const body = new Uint8Array(4 + 2 * 3 * 4);
    const view = new DataView(body.buffer);
    view.setUint32(0, 2, true);
    [1, 2, 3, 4, 5, 6].forEach((v, i) => view.setFloat32(4 + 4 * i, v, true));
    const frame = parseBinary(binaryFrame(FRAME_KIND_VERTICES, body));
    expect(frame.kind).toBe("vertices");
    if (frame.kind === "vertices") {
      expect(Array.from(frame.vertices)).toEqual([1, 2, 3, 4, 5, 6]);
    }
  });

  it("rejects unknown kinds", () => {
    expect(() => parseBinary(binaryFrame(0x7f, new Uint8Array(8)))).toThrow(/unknown/);
  });

  it("rejects malformed text messages", () => {
    expect(() => parseServerText("[1, 2]")).toThrow(/malformed/);
  });
});

describe("camera math", () => {
  it("projects through a pinhole exactly like the renderer", () => {
    const cam = identityCamera();
    const p = projectPoint(cam, [0.1, 0.2, 2]);
    expect(p.x).toBeCloseTo(100 * 0.05 + 32, 12);
    expect(p.y).toBeCloseTo(100 * 0.1 + 32, 12);
    expect(p.depth).toBe(2);
  });

  it("marks points behind the camera", () => {
    const p = projectPoint(identityCamera(), [0, 0, -1]);
    expect(Number.isNaN(p.x)).toBe(true);
    expect(p.depth).toBeLessThan(0);
  });

  it("recovers the camera eye", () => {
    const cam = orbitCamera({ target: [1, 2, 3], radius: 5, azimuth: 0.4, elevation: 0.3 }, 64, 64);
    const eye = cameraEye(cam);
    const distance = Math.hypot(eye[0] - 1, eye[1] - 2, eye[2] - 3);
    expect(distance).toBeCloseTo(5, 10);
  });

  it("orbit camera looks at the target", () => {
    const target: [number, number, number] = [0.5, -1, 2];
    const cam = orbitCamera({ target, radius: 4, azimuth: 1.1, elevation: -0.2 }, 128, 128);
    const p = projectPoint(cam, target);
    expect(p.x).toBeCloseTo(cam.cx, 8);
    expect(p.y).toBeCloseTo(cam.cy, 8);
    expect(p.depth).toBeCloseTo(4, 10);
  });

  it("back-projects screen deltas at depth in the camera plane", () => {
    const cam = identityCamera();
    const delta = dragToWorldDelta(cam, 10, -4, 2);
    expect(delta[0]).toBeCloseTo((10 * 2) / 100, 12);
    expect(delta[1]).toBeCloseTo((-4 * 2) / 100, 12);
    expect(delta[2]).toBeCloseTo(0, 12);
  });

  it("drag delta moves the projection by the screen delta", () => {
    const cam = orbitCamera({ target: [0, 0, 0], radius: 6, azimuth: 0.9, elevation: 0.5 }, 256, 256);
    const point: [number, number, number] = [0.3, -0.1, 0.2];
    const before = projectPoint(cam, point);
    const delta = dragToWorldDelta(cam, 12, 7, before.depth);
    const after = projectPoint(cam, [
      point[0] + delta[0],
      point[1] + delta[1],
      point[2] + delta[2],
    ]);
    expect(after.x - before.x).toBeCloseTo(12, 6);
    expect(after.y - before.y).toBeCloseTo(7, 6);
  });
});
