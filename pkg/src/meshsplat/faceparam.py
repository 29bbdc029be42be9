"""Build Gaussian splats from mesh faces.

A face's geometry fully determines a splat basis: the normal is the flat
axis, the centroid-to-first-vertex direction is the second axis, and the
third axis comes from one Gram-Schmidt step. Per-face splats then only need
barycentric weights, a covariance multiplier, opacity, and color.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    FLAT_SCALE,
    OrientedTriangle,
    SplatBatch,
    SplatGaussian,
    TriMesh,
    matrix_to_quat,
    normalize,
)
from .errors import DegenerateGeometryError, GeometryError, ValidationError

_ALPHA_SUM_TOL = 1e-9


def face_centroid(t: OrientedTriangle) -> np.ndarray:
    """Arithmetic mean of the three vertices."""
    return (t.v1 + t.v2 + t.v3) / 3.0


def face_normal(t: OrientedTriangle) -> np.ndarray:
    """Unit normal following the vertex order (right-hand rule)."""
    return normalize(np.cross(t.v2 - t.v1, t.v3 - t.v1), "face normal")


def orth(x: np.ndarray, r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
    """Single Gram-Schmidt step: remove the r1 and r2 components from x.

    r1 and r2 must be unit and mutually orthogonal within 1e-6. Raises a
    degeneracy error when x lies in their span (residual below 1e-12).
    """
    x = np.asarray(x, dtype=np.float64)
    r1 = np.asarray(r1, dtype=np.float64)
    r2 = np.asarray(r2, dtype=np.float64)
    for name, r in (("r1", r1), ("r2", r2)):
        if abs(float(r @ r) - 1.0) > 1e-6:
            raise ValidationError(f"{name} must be a unit vector")
    if abs(float(r1 @ r2)) > 1e-6:
        raise ValidationError("r1 and r2 must be orthogonal within 1e-6")
    out = x - (x @ r1) * r1 - (x @ r2) * r2
    if float(np.linalg.norm(out)) < 1e-12:
        raise DegenerateGeometryError("vector lies in span{r1, r2}")
    return out


def face_basis(t: OrientedTriangle) -> np.ndarray:
    """Orthonormal face-aligned basis with det +1, columns (normal, to-v1, in-plane).

    Column 1 is the face normal; column 2 points from the centroid to the
    first vertex; column 3 completes the basis and is sign-fixed so the
    matrix is a proper rotation.
    """
    n = face_normal(t)
    m = face_centroid(t)
    r2 = normalize(t.v1 - m, "centroid-to-v1")
    r3 = normalize(orth(t.v2 - m, n, r2))
    if float(r3 @ np.cross(n, r2)) < 0:
        r3 = -r3
    return np.column_stack([n, r2, r3])


def face_scales(t: OrientedTriangle) -> np.ndarray:
    """Per-axis scales implied by the face: (flat, centroid-to-v1 distance,
    in-plane extent of v2 relative to the centroid)."""
    m = face_centroid(t)
    basis = face_basis(t)
    s2 = float(np.linalg.norm(m - t.v1))
    s3 = abs(float((t.v2 - m) @ basis[:, 2]))
    return np.array([FLAT_SCALE, s2, s3])


def _validate_alphas(alphas) -> np.ndarray:
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.shape != (3,):
        raise ValidationError(f"alphas must have shape (3,), got {alphas.shape}")
    if np.any(alphas < 0):
        raise ValidationError(f"alphas must be non-negative, got {alphas}")
    if abs(float(alphas.sum()) - 1.0) > _ALPHA_SUM_TOL:
        raise ValidationError(f"alphas must sum to 1 within {_ALPHA_SUM_TOL}, got sum {alphas.sum()!r}")
    return alphas


def bind_mean(t: OrientedTriangle, alphas) -> np.ndarray:
    """Convex combination of the face vertices."""
    alphas = _validate_alphas(alphas)
    return alphas[0] * t.v1 + alphas[1] * t.v2 + alphas[2] * t.v3


@dataclass(frozen=True, eq=False)
class FaceBinding:
    """Per-splat parameters attached to one mesh face: barycentric weights,
    covariance multiplier rho, opacity, and SH color block."""

    face_index: int
    alphas: np.ndarray
    rho: float
    opacity: float
    sh: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "face_index", int(self.face_index))
        if self.face_index < 0:
            raise ValidationError("face_index must be non-negative")
        alphas = _validate_alphas(self.alphas).copy()
        alphas.flags.writeable = False
        object.__setattr__(self, "alphas", alphas)
        rho = float(self.rho)
        if not (rho > 0 and np.isfinite(rho)):
            raise ValidationError(f"rho must be positive, got {rho}")
        object.__setattr__(self, "rho", rho)
        opacity = float(self.opacity)
        if not (0.0 <= opacity <= 1.0):
            raise ValidationError(f"opacity must lie in [0, 1], got {opacity}")
        object.__setattr__(self, "opacity", opacity)
        sh = np.array(self.sh, dtype=np.float64)
        if sh.ndim != 2 or sh.shape[1] != 3 or sh.shape[0] not in (1, 4, 9, 16):
            raise ValidationError(f"sh must have shape (k, 3) with k in (1, 4, 9, 16), got {sh.shape}")
        sh.flags.writeable = False
        object.__setattr__(self, "sh", sh)


@dataclass(frozen=True, eq=False)
class BoundScene:
    """A mesh plus the splat bindings attached to its faces."""

    mesh: TriMesh
    bindings: tuple

    def __post_init__(self):
        bindings = tuple(self.bindings)
        for b in bindings:
            if not isinstance(b, FaceBinding):
                raise ValidationError(f"bindings must be FaceBinding, got {type(b).__name__}")
            if b.face_index >= self.mesh.face_count:
                raise ValidationError(
                    f"binding references face {b.face_index} but mesh has {self.mesh.face_count} faces"
                )
        object.__setattr__(self, "bindings", bindings)

    def __len__(self) -> int:
        return len(self.bindings)

    def with_mesh(self, mesh: TriMesh) -> "BoundScene":
        """Same bindings over an edited mesh (topology must be unchanged)."""
        if mesh.face_count != self.mesh.face_count:
            raise ValidationError("edited mesh must keep the same face count")
        return BoundScene(mesh, self.bindings)


def realize(mesh: TriMesh, binding: FaceBinding) -> SplatGaussian:
    """Instantiate one binding as a concrete splat from current face geometry.

    The covariance multiplier enters as sqrt(rho) on every scale component,
    so the realized covariance is exactly rho times the face covariance.
    """
    try:
        face = mesh.face(binding.face_index)
        rotation = matrix_to_quat(face_basis(face))
        scale = np.sqrt(binding.rho) * face_scales(face)
    except GeometryError as err:
        raise GeometryError(
            f"face {binding.face_index}: {err}", face_index=binding.face_index
        ) from err
    return SplatGaussian(
        bind_mean(face, binding.alphas), rotation, scale, binding.opacity, binding.sh
    )


def realize_all(scene: BoundScene) -> SplatBatch:
    """Vectorized realize over every binding; order follows the binding list."""
    if len(scene.bindings) == 0:
        return SplatBatch.from_gaussians([])
    mesh = scene.mesh
    tri = mesh.face_vertices  # (F, 3, 3)
    v1, v2, v3 = tri[:, 0], tri[:, 1], tri[:, 2]
    m = (v1 + v2 + v3) / 3.0

    n = np.cross(v2 - v1, v3 - v1)
    n_norm = np.linalg.norm(n, axis=1)
    if np.any(n_norm < 1e-12):
        idx = int(np.argmax(n_norm < 1e-12))
        raise GeometryError(f"face {idx} is degenerate", face_index=idx)
    n /= n_norm[:, None]

    to_v1 = v1 - m
    r2_norm = np.linalg.norm(to_v1, axis=1)
    if np.any(r2_norm < 1e-12):
        idx = int(np.argmax(r2_norm < 1e-12))
        raise GeometryError(f"face {idx}: v1 coincides with centroid", face_index=idx)
    r2 = to_v1 / r2_norm[:, None]

    x = v2 - m
    r3 = x - np.einsum("ij,ij->i", x, n)[:, None] * n - np.einsum("ij,ij->i", x, r2)[:, None] * r2
    r3_norm = np.linalg.norm(r3, axis=1)
    if np.any(r3_norm < 1e-12):
        idx = int(np.argmax(r3_norm < 1e-12))
        raise GeometryError(f"face {idx}: second vertex in span of normal and r2", face_index=idx)
    r3 /= r3_norm[:, None]
    handed = np.einsum("ij,ij->i", r3, np.cross(n, r2))
    r3 = np.where(handed[:, None] < 0, -r3, r3)

    basis = np.stack([n, r2, r3], axis=2)  # columns
    face_quats = matrix_to_quat(basis)
    s3 = np.abs(np.einsum("ij,ij->i", v2 - m, r3))
    scales = np.column_stack([np.full(len(tri), FLAT_SCALE), r2_norm, s3])

    face_idx = np.array([b.face_index for b in scene.bindings])
    alphas = np.stack([b.alphas for b in scene.bindings])
    rho = np.array([b.rho for b in scene.bindings])
    degrees = {b.sh.shape[0] for b in scene.bindings}
    if len(degrees) != 1:
        raise ValidationError("realize_all requires a uniform SH degree across bindings")
    sh = np.stack([b.sh for b in scene.bindings])
    opacities = np.array([b.opacity for b in scene.bindings])

    means = np.einsum("bi,bij->bj", alphas, tri[face_idx])
    return SplatBatch(
        means,
        face_quats[face_idx],
        np.sqrt(rho)[:, None] * scales[face_idx],
        opacities,
        sh,
    )


def bind_uniform(mesh: TriMesh, k: int, seed: int) -> BoundScene:
    """Attach k splats per face with simplex-uniform barycentric weights.

    Weights are drawn as sorted-uniform gaps (a symmetric Dirichlet(1,1,1)
    sample), deterministically from the seed. rho and opacity start at 1;
    the SH block is zero, which renders mid-gray under the DC offset.
    """
    if int(k) < 1:
        raise ValidationError(f"k must be a positive integer, got {k}")
    k = int(k)
    rng = np.random.default_rng(seed)
    total = mesh.face_count * k
    cuts = np.sort(rng.random((total, 2)), axis=1)
    alphas = np.column_stack([cuts[:, 0], cuts[:, 1] - cuts[:, 0], 1.0 - cuts[:, 1]])
    sh = np.zeros((1, 3))
    bindings = [
        FaceBinding(face, alphas[face * k + j], 1.0, 1.0, sh)
        for face in range(mesh.face_count)
        for j in range(k)
    ]
    return BoundScene(mesh, tuple(bindings))
