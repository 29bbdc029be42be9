"""Splat and mesh value types plus the covariance algebra shared by all modules.

Conventions used throughout the package:

* vectors are float64 numpy arrays of shape (3,)
* rotation matrices are 3x3 with the basis vectors in columns
* quaternions are (w, x, y, z), unit norm, canonicalized to w >= 0
* all value types are immutable; their arrays are locked read-only
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateGeometryError,
    GeometryError,
    HandednessError,
    ValidationError,
)

# Scale pinned to the flat axis of a 2D-like Gaussian. Small enough to render
# as a disc, large enough that the projected 2x2 covariance stays invertible.
FLAT_SCALE = 1e-8

# Faces whose squared edge cross-product norm falls below this are rejected:
# the normal formula is ill-conditioned there.
DEGENERATE_AREA_SQ = 1e-12

_QUAT_NORM_TOL = 1e-9
_ORTHONORMAL_TOL = 1e-6
_SH_COEFF_COUNTS = (1, 4, 9, 16)  # degrees 0..3


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def as_vec3(value, name: str = "vector") -> np.ndarray:
    """Coerce to an immutable float64 3-vector, rejecting non-finite input."""
    arr = np.array(value, dtype=np.float64)
    if arr.shape != (3,):
        raise ValidationError(f"{name} must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite, got {arr}")
    return _freeze(arr)


def normalize(v: np.ndarray, name: str = "vector") -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise DegenerateGeometryError(f"cannot normalize near-zero {name} (norm {n:.3e})")
    return v / n


# ---------------------------------------------------------------------------
# Quaternion / rotation-matrix algebra. All functions accept stacked inputs:
# quaternions of shape (..., 4) and matrices of shape (..., 3, 3).
# ---------------------------------------------------------------------------


def canonical_quat(q: np.ndarray) -> np.ndarray:
    """Flip quaternion sign so the scalar part is non-negative.

    Both signs encode the same rotation; a fixed representative makes
    equality tests and serialization well-defined.
    """
    q = np.asarray(q, dtype=np.float64)
    w = q[..., 0]
    # w == 0 is disambiguated by the first non-zero vector component.
    tie = np.where(q[..., 1] != 0, q[..., 1], np.where(q[..., 2] != 0, q[..., 2], q[..., 3]))
    flip = (w < 0) | ((w == 0) & (tie < 0))
    return np.where(flip[..., None], -q, q)


def quat_to_matrix(q) -> np.ndarray:
    """Unit quaternion(s) (..., 4) -> rotation matrix/matrices (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != 4:
        raise ValidationError(f"quaternion must have 4 components, got shape {q.shape}")
    norm = np.linalg.norm(q, axis=-1)
    if not np.all(np.abs(norm - 1.0) <= 1e-6):
        worst = float(np.max(np.abs(norm - 1.0)))
        raise ValidationError(f"quaternion not unit (max |norm-1| = {worst:.3e})")
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def _check_rotation(m: np.ndarray, *, require_proper: bool) -> None:
    gram = m @ np.swapaxes(m, -1, -2)
    eye = np.eye(3)
    err = np.max(np.abs(gram - eye))
    if err > _ORTHONORMAL_TOL:
        raise ValidationError(f"matrix not orthonormal (max |R R^T - I| = {float(err):.3e})")
    if require_proper:
        det = np.linalg.det(m)
        if np.any(det < 0):
            raise HandednessError("matrix has determinant -1 (left-handed basis)")


def matrix_to_quat(m) -> np.ndarray:
    """Proper rotation matrix/matrices (..., 3, 3) -> canonical unit quaternion(s).

    Raises HandednessError when det = -1 and ValidationError when the input is
    not orthonormal within 1e-6.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise ValidationError(f"rotation matrix must be 3x3, got shape {m.shape}")
    _check_rotation(m, require_proper=True)

    r00, r11, r22 = m[..., 0, 0], m[..., 1, 1], m[..., 2, 2]
    # Shepperd's method: pick the largest of the four squared components.
    cand = np.stack(
        [1 + r00 + r11 + r22, 1 + r00 - r11 - r22, 1 - r00 + r11 - r22, 1 - r00 - r11 + r22],
        axis=-1,
    )
    branch = np.argmax(cand, axis=-1)
    big = 0.5 * np.sqrt(np.maximum(np.take_along_axis(cand, branch[..., None], axis=-1)[..., 0], 0.0))
    inv = 0.25 / big

    a = m[..., 2, 1] - m[..., 1, 2]
    b = m[..., 0, 2] - m[..., 2, 0]
    c = m[..., 1, 0] - m[..., 0, 1]
    d = m[..., 1, 0] + m[..., 0, 1]
    e = m[..., 0, 2] + m[..., 2, 0]
    f = m[..., 2, 1] + m[..., 1, 2]

    q = np.empty(m.shape[:-2] + (4,), dtype=np.float64)
    for idx, comps in enumerate(
        [
            (None, a, b, c),  # branch w
            (a, None, d, e),  # branch x
            (b, d, None, f),  # branch y
            (c, e, f, None),  # branch z
        ]
    ):
        sel = branch == idx
        if not np.any(sel):
            continue
        vals = [big if comp is None else comp * inv for comp in comps]
        q[sel] = np.stack(vals, axis=-1)[sel]
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return canonical_quat(q)


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a*b; composing rotations: result rotates by b then a."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, av = a[..., 0], a[..., 1:]
    bw, bv = b[..., 0], b[..., 1:]
    w = aw * bw - np.sum(av * bv, axis=-1)
    v = aw[..., None] * bv + bw[..., None] * av + np.cross(av, bv)
    return np.concatenate([w[..., None], v], axis=-1)


def covariance_from_rs(rotation, scale) -> np.ndarray:
    """Covariance R S S^T R^T with S = diag(scale); accepts stacked inputs.

    The rotation must be orthonormal within 1e-6 and every scale component
    non-negative; the result is exactly symmetric and positive semi-definite.
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if rotation.shape[-2:] != (3, 3):
        raise ValidationError(f"rotation must be 3x3, got shape {rotation.shape}")
    if scale.shape[-1] != 3:
        raise ValidationError(f"scale must have 3 components, got shape {scale.shape}")
    if np.any(scale < 0):
        raise ValidationError("scale components must be non-negative")
    _check_rotation(rotation, require_proper=False)
    scaled = rotation * (scale[..., None, :] ** 2)
    cov = scaled @ np.swapaxes(rotation, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SplatGaussian:
    """One 3D Gaussian splat: mean, rotation (quaternion), per-axis scales,
    opacity, and spherical-harmonic RGB coefficients (DC row first)."""

    mean: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    sh: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", as_vec3(self.mean, "mean"))

        rot = np.array(self.rotation, dtype=np.float64)
        if rot.shape != (4,):
            raise ValidationError(f"rotation must be a quaternion (4,), got {rot.shape}")
        norm = float(np.linalg.norm(rot))
        if abs(norm - 1.0) > _QUAT_NORM_TOL:
            raise ValidationError(f"quaternion norm {norm!r} deviates from 1 by more than {_QUAT_NORM_TOL}")
        object.__setattr__(self, "rotation", _freeze(canonical_quat(rot)))

        scale = np.array(self.scale, dtype=np.float64)
        if scale.shape != (3,):
            raise ValidationError(f"scale must have shape (3,), got {scale.shape}")
        if np.any(~np.isfinite(scale)) or np.any(scale < 0):
            raise ValidationError(f"scale components must be finite and >= 0, got {scale}")
        object.__setattr__(self, "scale", _freeze(scale))

        opacity = float(self.opacity)
        if not (0.0 <= opacity <= 1.0):
            raise ValidationError(f"opacity must lie in [0, 1], got {opacity}")
        object.__setattr__(self, "opacity", opacity)

        sh = np.array(self.sh, dtype=np.float64)
        if sh.ndim != 2 or sh.shape[1] != 3 or sh.shape[0] not in _SH_COEFF_COUNTS:
            raise ValidationError(
                f"sh must have shape (k, 3) with k in {_SH_COEFF_COUNTS}, got {sh.shape}"
            )
        object.__setattr__(self, "sh", _freeze(sh))

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def covariance(self) -> np.ndarray:
        return covariance_from_rs(self.rotation_matrix, self.scale)

    @property
    def sh_degree(self) -> int:
        return int(np.sqrt(self.sh.shape[0])) - 1

    @property
    def is_flat(self) -> bool:
        return self.scale[0] == FLAT_SCALE

    def transformed(self, rotation=None, translation=None) -> "SplatGaussian":
        """Rigidly transform the splat; rotation is a quaternion or 3x3 matrix."""
        mean = self.mean
        quat = self.rotation
        if rotation is not None:
            rot = np.asarray(rotation, dtype=np.float64)
            if rot.shape == (3, 3):
                rot = matrix_to_quat(rot)
            elif rot.shape != (4,):
                raise ValidationError(f"rotation must be (4,) or (3, 3), got {rot.shape}")
            mean = quat_to_matrix(rot) @ mean
            quat = canonical_quat(quat_multiply(rot, quat))
        if translation is not None:
            mean = mean + as_vec3(translation, "translation")
        return SplatGaussian(mean, quat, self.scale, self.opacity, self.sh)


def flatten(g: SplatGaussian) -> SplatGaussian:
    """Pin the splat's smallest axis to FLAT_SCALE, permuting it to position 1.

    The remaining two axes keep their relative order and the permuted basis is
    sign-fixed to stay right-handed. Already-flat splats are returned as-is.
    """
    smallest = int(np.argmin(g.scale))
    if smallest == 0:
        if g.scale[0] == FLAT_SCALE:
            return g
        scale = np.array([FLAT_SCALE, g.scale[1], g.scale[2]])
        return SplatGaussian(g.mean, g.rotation, scale, g.opacity, g.sh)

    order = [smallest] + [i for i in range(3) if i != smallest]
    cols = g.rotation_matrix[:, order]
    if smallest == 1:  # (1,0,2) is an odd permutation; restore det = +1
        cols[:, 0] = -cols[:, 0]
    scale = np.array([FLAT_SCALE, g.scale[order[1]], g.scale[order[2]]])
    return SplatGaussian(g.mean, matrix_to_quat(cols), scale, g.opacity, g.sh)


@dataclass(frozen=True, eq=False)
class OrientedTriangle:
    """A single triangle with significant vertex order."""

    v1: np.ndarray
    v2: np.ndarray
    v3: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v1", as_vec3(self.v1, "v1"))
        object.__setattr__(self, "v2", as_vec3(self.v2, "v2"))
        object.__setattr__(self, "v3", as_vec3(self.v3, "v3"))
        cross = np.cross(self.v2 - self.v1, self.v3 - self.v1)
        if float(cross @ cross) <= DEGENERATE_AREA_SQ:
            raise DegenerateGeometryError(
                f"degenerate triangle (squared cross norm {float(cross @ cross):.3e})"
            )

    @classmethod
    def from_vertices(cls, vertices) -> "OrientedTriangle":
        arr = np.asarray(vertices, dtype=np.float64)
        if arr.shape != (3, 3):
            raise ValidationError(f"expected (3, 3) vertex array, got {arr.shape}")
        return cls(arr[0], arr[1], arr[2])

    @property
    def vertices(self) -> np.ndarray:
        return np.stack([self.v1, self.v2, self.v3])

    @property
    def area(self) -> float:
        cross = np.cross(self.v2 - self.v1, self.v3 - self.v1)
        return 0.5 * float(np.linalg.norm(cross))


def _validate_faces(vertices: np.ndarray, faces: np.ndarray) -> None:
    if len(faces) == 0:
        return
    out_of_range = (faces < 0) | (faces >= len(vertices))
    if np.any(out_of_range):
        idx = int(np.argmax(np.any(out_of_range, axis=1)))
        raise ValidationError(
            f"face {idx} has a vertex index out of range (vertex count {len(vertices)})"
        )
    repeated = (
        (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
    )
    if np.any(repeated):
        raise ValidationError(f"face {int(np.argmax(repeated))} repeats a vertex index")
    tri = vertices[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    sq = np.einsum("ij,ij->i", cross, cross)
    bad = sq <= DEGENERATE_AREA_SQ
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise GeometryError(
            f"{int(bad.sum())} degenerate face(s), first at index {idx}", face_index=idx
        )


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Indexed triangle mesh; face vertex order defines orientation."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(vertices)):
            raise ValidationError("mesh vertices must be finite")
        _validate_faces(vertices, faces)
        object.__setattr__(self, "vertices", _freeze(vertices))
        object.__setattr__(self, "faces", _freeze(faces))

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def face_count(self) -> int:
        return len(self.faces)

    @property
    def face_vertices(self) -> np.ndarray:
        """(F, 3, 3) array of per-face vertex triples."""
        return self.vertices[self.faces]

    def face(self, index: int) -> OrientedTriangle:
        v = self.vertices[self.faces[index]]
        return OrientedTriangle(v[0], v[1], v[2])

    def face_areas(self) -> np.ndarray:
        tri = self.face_vertices
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.sqrt(np.einsum("ij,ij->i", cross, cross))

    def with_vertices(self, vertices) -> "TriMesh":
        """Same topology with replaced vertex positions (re-validated)."""
        return TriMesh(vertices, self.faces)


@dataclass(frozen=True, eq=False)
class SplatBatch:
    """Column-packed set of splats for vectorized pipelines.

    Semantically a list of SplatGaussian; all members share one SH degree.
    """

    means: np.ndarray       # (N, 3)
    rotations: np.ndarray   # (N, 4) unit quaternions
    scales: np.ndarray      # (N, 3)
    opacities: np.ndarray   # (N,)
    sh: np.ndarray          # (N, K, 3)

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64).reshape(-1, 3)
        n = len(means)
        rotations = np.array(self.rotations, dtype=np.float64).reshape(n, 4)
        scales = np.array(self.scales, dtype=np.float64).reshape(n, 3)
        opacities = np.array(self.opacities, dtype=np.float64).reshape(n)
        sh = np.array(self.sh, dtype=np.float64)
        if sh.ndim != 3 or sh.shape[0] != n or sh.shape[2] != 3 or sh.shape[1] not in _SH_COEFF_COUNTS:
            raise ValidationError(f"sh must have shape (n, k, 3) with k in {_SH_COEFF_COUNTS}, got {sh.shape}")
        for name, arr in (("means", means), ("rotations", rotations), ("scales", scales),
                          ("opacities", opacities), ("sh", sh)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} must be finite")
            object.__setattr__(self, name, _freeze(arr))

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[SplatGaussian]) -> "SplatBatch":
        if len(gaussians) == 0:
            return cls(
                np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 1, 3))
            )
        degrees = {g.sh.shape[0] for g in gaussians}
        if len(degrees) != 1:
            raise ValidationError(f"cannot batch mixed SH degrees ({sorted(degrees)} coefficient counts)")
        return cls(
            np.stack([g.mean for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.stack([g.scale for g in gaussians]),
            np.array([g.opacity for g in gaussians]),
            np.stack([g.sh for g in gaussians]),
        )

    def to_gaussians(self) -> list[SplatGaussian]:
        return [
            SplatGaussian(self.means[i], self.rotations[i], self.scales[i],
                          float(self.opacities[i]), self.sh[i])
            for i in range(len(self))
        ]

    def covariances(self) -> np.ndarray:
        if len(self) == 0:
            return np.zeros((0, 3, 3))
        return covariance_from_rs(quat_to_matrix(self.rotations), self.scales)

    def transformed(self, rotation=None, translation=None) -> "SplatBatch":
        """Rigidly transform every splat (rotation: quaternion or 3x3 matrix)."""
        means, rotations = self.means, self.rotations
        if rotation is not None:
            rot = np.asarray(rotation, dtype=np.float64)
            if rot.shape == (3, 3):
                rot = matrix_to_quat(rot)
            means = means @ quat_to_matrix(rot).T
            rotations = canonical_quat(quat_multiply(rot[None, :], rotations))
        if translation is not None:
            means = means + as_vec3(translation, "translation")
        return SplatBatch(means, rotations, self.scales, self.opacities, self.sh)

    def __len__(self) -> int:
        return len(self.means)
