"""Deterministic CPU splat rasterizer.

Projects 3D Gaussians to screen-space 2D Gaussians through the local
perspective Jacobian, depth-sorts them, and alpha-composites front to back.
Determinism contract: identical inputs produce bit-identical images.

Camera frame is +z forward / y down. Pixel (row i, col j) samples the
continuous image plane at (x=j, y=i).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from io import BytesIO
from typing import Sequence

import numba
import numpy as np
from PIL import Image

from .core import SplatBatch, SplatGaussian, as_vec3, matrix_to_quat, quat_to_matrix
from .errors import ValidationError

# Low-pass floor added to the projected covariance diagonal (px^2): keeps
# edge-on flat splats renderable and bounds the footprint below one pixel.
BLUR_FLOOR = 0.3

ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0
TRANSMITTANCE_CUTOFF = 1e-4

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera: world-to-camera rigid transform plus pixel intrinsics."""

    world_to_camera: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        w2c = np.array(self.world_to_camera, dtype=np.float64)
        if w2c.shape != (4, 4):
            raise ValidationError(f"world_to_camera must be 4x4, got {w2c.shape}")
        if np.max(np.abs(w2c[3] - np.array([0, 0, 0, 1.0]))) > 1e-9:
            raise ValidationError("world_to_camera last row must be (0, 0, 0, 1)")
        w2c.flags.writeable = False
        object.__setattr__(self, "world_to_camera", w2c)
        for name in ("fx", "fy", "cx", "cy", "near", "far"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("width", "height"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValidationError("image dimensions must be at least 1 pixel")
        if not (0 < self.near < self.far):
            raise ValidationError(f"require 0 < near < far, got near={self.near}, far={self.far}")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), *, width: int, height: int,
                fov_x: float = math.radians(60.0), near: float = 0.01, far: float = 100.0) -> "Camera":
        eye = as_vec3(eye, "eye")
        target = as_vec3(target, "target")
        forward = np.asarray(target, dtype=np.float64) - eye
        norm = np.linalg.norm(forward)
        if norm < 1e-12:
            raise ValidationError("eye and target coincide")
        forward = forward / norm
        up = as_vec3(up, "up")
        right = np.cross(forward, up)
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
            if np.linalg.norm(right) < 1e-9:
                right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
        right = right / np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        w2c = np.eye(4)
        w2c[:3, :3] = rot
        w2c[:3, 3] = -rot @ eye
        fx = 0.5 * width / math.tan(0.5 * fov_x)
        return cls(w2c, fx, fx, width / 2.0, height / 2.0, width, height, near, far)

    def with_world_transform(self, rotation=None, translation=None) -> "Camera":
        """Camera that views the rigidly transformed world identically.

        If world points move by p' = Q p + t, the returned camera maps p'
        exactly where this camera maps p.
        """
        rot = np.eye(3)
        if rotation is not None:
            rot = np.asarray(rotation, dtype=np.float64)
            if rot.shape == (4,):
                rot = quat_to_matrix(rot)
        shift = np.zeros(3) if translation is None else as_vec3(translation, "translation")
        inverse = np.eye(4)
        inverse[:3, :3] = rot.T
        inverse[:3, 3] = -rot.T @ shift
        w2c = self.world_to_camera @ inverse
        return Camera(w2c, self.fx, self.fy, self.cx, self.cy, self.width, self.height,
                      self.near, self.far)


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Row-major RGBA float image with every channel clamped to [0, 1]."""

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32)
        if data.shape != (self.height, self.width, 4):
            raise ValidationError(
                f"data must have shape ({self.height}, {self.width}, 4), got {data.shape}"
            )
        data = np.clip(data, 0.0, 1.0)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def rgb(self) -> np.ndarray:
        return self.data[..., :3]

    def to_png_bytes(self) -> bytes:
        quantized = np.rint(self.data * 255.0).astype(np.uint8)
        buf = BytesIO()
        Image.fromarray(quantized, "RGBA").save(buf, format="PNG")
        return buf.getvalue()

    def save_png(self, path) -> None:
        with open(path, "wb") as handle:
            handle.write(self.to_png_bytes())

    @classmethod
    def from_png(cls, source) -> "ImageBuffer":
        if isinstance(source, (bytes, bytearray)):
            image = Image.open(BytesIO(source))
        else:
            image = Image.open(source)
        rgba = np.asarray(image.convert("RGBA"), dtype=np.float32) / 255.0
        return cls(rgba.shape[1], rgba.shape[0], rgba)


@dataclass(frozen=True, eq=False)
class Projection:
    """Screen-space footprint of one splat: pixel mean, 2x2 covariance, depth."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float


def eval_sh_batch(sh: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Evaluate SH color blocks (N, K, 3) along unit directions (N, 3).

    Reference splatting convention: DC scaled by Y00, +0.5 offset, clamp at 0.
    """
    sh = np.asarray(sh, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n, k = sh.shape[0], sh.shape[1]
    out = 0.5 + SH_C0 * sh[:, 0, :]
    if k >= 4:
        x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
        out = out - SH_C1 * y * sh[:, 1, :] + SH_C1 * z * sh[:, 2, :] - SH_C1 * x * sh[:, 3, :]
    if k >= 9:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out = (
            out
            + SH_C2[0] * xy * sh[:, 4, :]
            + SH_C2[1] * yz * sh[:, 5, :]
            + SH_C2[2] * (2.0 * zz - xx - yy) * sh[:, 6, :]
            + SH_C2[3] * xz * sh[:, 7, :]
            + SH_C2[4] * (xx - yy) * sh[:, 8, :]
        )
    if k >= 16:
        out = (
            out
            + SH_C3[0] * y * (3.0 * xx - yy) * sh[:, 9, :]
            + SH_C3[1] * xy * z * sh[:, 10, :]
            + SH_C3[2] * y * (4.0 * zz - xx - yy) * sh[:, 11, :]
            + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sh[:, 12, :]
            + SH_C3[4] * x * (4.0 * zz - xx - yy) * sh[:, 13, :]
            + SH_C3[5] * z * (xx - yy) * sh[:, 14, :]
            + SH_C3[6] * x * (xx - 3.0 * yy) * sh[:, 15, :]
        )
    return np.maximum(out, 0.0)


def eval_sh(sh: np.ndarray, direction) -> np.ndarray:
    """View-dependent RGB of one SH block along a unit direction."""
    sh = np.asarray(sh, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    return eval_sh_batch(sh[None, :, :], direction[None, :])[0]


def _project_arrays(means: np.ndarray, covariances: np.ndarray, cam: Camera):
    """Project world-space Gaussians; returns (mean2d, cov2d, depth, radius, valid)."""
    rot, shift = cam.rotation, cam.translation
    pts = means @ rot.T + shift
    depth = pts[:, 2]
    valid = (depth >= cam.near) & (depth <= cam.far)

    z = np.where(valid, depth, 1.0)  # placeholder depth avoids divide warnings
    inv_z = 1.0 / z
    mean2d = np.column_stack([cam.fx * pts[:, 0] * inv_z + cam.cx,
                              cam.fy * pts[:, 1] * inv_z + cam.cy])

    n = len(means)
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx * inv_z
    jac[:, 1, 1] = cam.fy * inv_z
    jac[:, 0, 2] = -cam.fx * pts[:, 0] * inv_z * inv_z
    jac[:, 1, 2] = -cam.fy * pts[:, 1] * inv_z * inv_z

    cov_cam = rot @ covariances @ rot.T
    cov2d = jac @ cov_cam @ np.swapaxes(jac, 1, 2)
    cov2d[:, 0, 0] += BLUR_FLOOR
    cov2d[:, 1, 1] += BLUR_FLOOR

    mid = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = 3.0 * np.sqrt(lam_max)

    inside = (
        (mean2d[:, 0] >= -radius)
        & (mean2d[:, 0] <= cam.width - 1 + radius)
        & (mean2d[:, 1] >= -radius)
        & (mean2d[:, 1] <= cam.height - 1 + radius)
    )
    return mean2d, cov2d, depth, radius, valid & inside


def project(g: SplatGaussian, cam: Camera) -> Projection | None:
    """Screen-space footprint of one splat, or None when culled.

    Culling: mean depth outside [near, far], or projected mean farther than
    the 3-sigma footprint radius outside the image bounds.
    """
    mean2d, cov2d, depth, _, valid = _project_arrays(
        g.mean[None, :], g.covariance[None, :, :], cam
    )
    if not valid[0]:
        return None
    return Projection(mean2d[0], cov2d[0], float(depth[0]))


@numba.njit(cache=True)
def _composite(order, mean2d, inv_cov, opacity, rgb, radius, width, height, color, transmit):
    for si in range(order.shape[0]):
        i = order[si]
        mx, my = mean2d[i, 0], mean2d[i, 1]
        r = radius[i]
        x0 = max(0, int(math.floor(mx - r)))
        x1 = min(width - 1, int(math.ceil(mx + r)))
        y0 = max(0, int(math.floor(my - r)))
        y1 = min(height - 1, int(math.ceil(my + r)))
        if x1 < x0 or y1 < y0:
            continue
        a, b, c = inv_cov[i, 0], inv_cov[i, 1], inv_cov[i, 2]
        op = opacity[i]
        cr, cg, cb = rgb[i, 0], rgb[i, 1], rgb[i, 2]
        for py in range(y0, y1 + 1):
            dy = py - my
            for px in range(x0, x1 + 1):
                t = transmit[py, px]
                if t < TRANSMITTANCE_CUTOFF:
                    continue
                dx = px - mx
                power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
                if power > 0.0:
                    continue
                alpha = op * math.exp(power)
                if alpha < ALPHA_SKIP:
                    continue
                if alpha > ALPHA_CLAMP:
                    alpha = ALPHA_CLAMP
                weight = t * alpha
                color[py, px, 0] += weight * cr
                color[py, px, 1] += weight * cg
                color[py, px, 2] += weight * cb
                transmit[py, px] = t * (1.0 - alpha)


def rasterize(gaussians, cam: Camera, background=(0.0, 0.0, 0.0)) -> ImageBuffer:
    """Render splats front to back over a background color.

    Splats are sorted by mean depth (stable tie-break by input index);
    per-pixel compositing stops once transmittance falls below 1e-4 and the
    remaining transmittance is filled with the background. The alpha channel
    carries accumulated splat coverage.
    """
    if not isinstance(gaussians, SplatBatch):
        gaussians = SplatBatch.from_gaussians(list(gaussians))
    bg = np.asarray(background, dtype=np.float64).reshape(3)

    color = np.zeros((cam.height, cam.width, 3))
    transmit = np.ones((cam.height, cam.width))

    if len(gaussians):
        mean2d, cov2d, depth, radius, valid = _project_arrays(
            gaussians.means, gaussians.covariances(), cam
        )
        keep = np.flatnonzero(valid)
        if len(keep):
            det = (cov2d[keep, 0, 0] * cov2d[keep, 1, 1] - cov2d[keep, 0, 1] ** 2)
            if np.any(det <= 0):
                raise RuntimeError("internal invariant violation: singular projected covariance")
            inv_cov = np.column_stack(
                [cov2d[keep, 1, 1] / det, -cov2d[keep, 0, 1] / det, cov2d[keep, 0, 0] / det]
            )
            offsets = gaussians.means[keep] - cam.position
            dirs = offsets / np.linalg.norm(offsets, axis=1, keepdims=True)
            colors = eval_sh_batch(gaussians.sh[keep], dirs)
            order = np.argsort(depth[keep], kind="stable")
            _composite(
                order,
                np.ascontiguousarray(mean2d[keep]),
                np.ascontiguousarray(inv_cov),
                np.ascontiguousarray(gaussians.opacities[keep]),
                np.ascontiguousarray(colors),
                np.ascontiguousarray(radius[keep]),
                cam.width,
                cam.height,
                color,
                transmit,
            )

    rgba = np.empty((cam.height, cam.width, 4), dtype=np.float64)
    rgba[..., :3] = color + transmit[..., None] * bg
    rgba[..., 3] = 1.0 - transmit
    return ImageBuffer(cam.width, cam.height, np.clip(rgba, 0.0, 1.0))


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """Peak signal-to-noise ratio over the RGB channels, capped at 99 dB."""
    if a.width != b.width or a.height != b.height:
        raise ValidationError(
            f"image dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    diff = a.rgb.astype(np.float64) - b.rgb.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return 99.0
    return min(99.0, 10.0 * math.log10(1.0 / mse))
