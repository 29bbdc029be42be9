"""Triangle Soup: the bidirectional bridge between flat splats and triangles.

Each flat Gaussian maps to one oriented triangle (mean plus the two planar
axes scaled by their extents) and back. The soup has no connectivity; it is
an editing proxy, not a surface.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    FLAT_SCALE,
    OrientedTriangle,
    SplatBatch,
    SplatGaussian,
    flatten,
    matrix_to_quat,
    normalize,
    quat_to_matrix,
)
from .errors import DegenerateGeometryError, SoupExtractionError, ValidationError

# Splats thinner than this along either planar axis produce sliver triangles
# that cannot be re-parameterized faithfully; they are rejected, not inflated.
MIN_PLANAR_SCALE = 10 * FLAT_SCALE


class SoupAttrs(NamedTuple):
    opacity: float
    sh: np.ndarray


@dataclass(frozen=True, eq=False)
class TriangleSoup:
    """Unconnected oriented triangles with one splat's attributes each.

    Stored column-packed; ``triangles`` / ``attrs`` views materialize the
    per-element objects. All records share one SH degree.
    """

    triangle_array: np.ndarray  # (T, 3, 3) float64, rows are v1, v2, v3
    opacities: np.ndarray       # (T,)
    sh: np.ndarray              # (T, K, 3)

    def __post_init__(self):
        tri = np.array(self.triangle_array, dtype=np.float64).reshape(-1, 3, 3)
        n = len(tri)
        opac = np.array(self.opacities, dtype=np.float64).reshape(n)
        sh = np.array(self.sh, dtype=np.float64)
        if sh.ndim != 3 or sh.shape[0] != n or sh.shape[2] != 3:
            raise ValidationError(f"sh must have shape (n, k, 3), got {sh.shape}")
        if n and sh.shape[1] not in (1, 4, 9, 16):
            raise ValidationError(f"unsupported SH coefficient count {sh.shape[1]}")
        if np.any(opac < 0) or np.any(opac > 1):
            raise ValidationError("opacities must lie in [0, 1]")
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        sq = np.einsum("ij,ij->i", cross, cross)
        if np.any(sq <= 1e-24):
            idx = int(np.argmax(sq <= 1e-24))
            raise DegenerateGeometryError(f"soup triangle {idx} is degenerate", face_index=idx)
        for name, arr in (("triangle_array", tri), ("opacities", opac), ("sh", sh)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_triangles(cls, triangles: Sequence[OrientedTriangle], attrs: Sequence[SoupAttrs]):
        if len(triangles) != len(attrs):
            raise ValidationError("triangles and attrs must have equal length")
        if len(triangles) == 0:
            return cls(np.zeros((0, 3, 3)), np.zeros(0), np.zeros((0, 1, 3)))
        return cls(
            np.stack([t.vertices for t in triangles]),
            np.array([a.opacity for a in attrs]),
            np.stack([np.asarray(a.sh, dtype=np.float64) for a in attrs]),
        )

    @property
    def triangles(self) -> list[OrientedTriangle]:
        return [OrientedTriangle.from_vertices(v) for v in self.triangle_array]

    @property
    def attrs(self) -> list[SoupAttrs]:
        return [SoupAttrs(float(o), s) for o, s in zip(self.opacities, self.sh)]

    def with_triangle_array(self, triangle_array) -> "TriangleSoup":
        """Same attributes over edited triangle vertices (re-validated)."""
        return TriangleSoup(triangle_array, self.opacities, self.sh)

    def __len__(self) -> int:
        return len(self.triangle_array)


def gaussian_to_triangle(g: SplatGaussian) -> OrientedTriangle:
    """Triangle whose vertices are the mean and the two planar axis endpoints."""
    if not g.is_flat:
        raise ValidationError(
            f"splat is not flat (scale[0] = {g.scale[0]!r}, expected {FLAT_SCALE!r}); apply flatten first"
        )
    if g.scale[1] <= MIN_PLANAR_SCALE or g.scale[2] <= MIN_PLANAR_SCALE:
        raise DegenerateGeometryError(
            f"planar scales {tuple(g.scale[1:])} too small to form a triangle"
        )
    rot = g.rotation_matrix
    return OrientedTriangle(
        g.mean, g.mean + g.scale[1] * rot[:, 1], g.mean + g.scale[2] * rot[:, 2]
    )


def triangle_to_gaussian(t: OrientedTriangle, attrs: SoupAttrs) -> SplatGaussian:
    """Re-parameterize a triangle as a flat splat anchored at its first vertex.

    The basis is (normal, v1->v2 direction, normalized in-plane residual of
    v1->v3); the third scale keeps its sign by flipping the third axis, and
    the normal is sign-fixed last so the basis stays right-handed.
    """
    e2 = t.v2 - t.v1
    e3 = t.v3 - t.v1
    r1 = normalize(np.cross(e2, e3), "triangle normal")
    s2 = float(np.linalg.norm(e2))
    r2 = e2 / s2
    r3 = normalize(e3 - (e3 @ r1) * r1 - (e3 @ r2) * r2, "in-plane residual")
    s3 = float(e3 @ r3)
    if s3 < 0:
        r3, s3 = -r3, -s3
    if float(r1 @ np.cross(r2, r3)) < 0:
        r1 = -r1
    rotation = matrix_to_quat(np.column_stack([r1, r2, r3]))
    return SplatGaussian(t.v1, rotation, (FLAT_SCALE, s2, s3), attrs.opacity, attrs.sh)


def extract_soup(
    gaussians: Sequence[SplatGaussian], skip_degenerate: bool = False
) -> TriangleSoup:
    """One triangle-plus-attributes record per splat, input order preserved.

    Non-flat splats are flattened first. Degenerate splats raise a
    SoupExtractionError listing every offending index unless
    ``skip_degenerate`` is set, in which case they are dropped.
    """
    triangles: list[OrientedTriangle] = []
    attrs: list[SoupAttrs] = []
    failed: list[int] = []
    for i, g in enumerate(gaussians):
        if not g.is_flat:
            g = flatten(g)
        try:
            triangles.append(gaussian_to_triangle(g))
        except DegenerateGeometryError:
            failed.append(i)
            continue
        attrs.append(SoupAttrs(g.opacity, g.sh))
    if failed and not skip_degenerate:
        shown = ", ".join(str(i) for i in failed[:10])
        raise SoupExtractionError(
            f"{len(failed)} splat(s) too degenerate for soup extraction "
            f"(first indices: {shown}); pass skip_degenerate to drop them",
            indices=failed,
        )
    return TriangleSoup.from_triangles(triangles, attrs)


def realize_soup(soup: TriangleSoup) -> list[SplatGaussian]:
    """triangle_to_gaussian applied per record, order preserved."""
    return [
        triangle_to_gaussian(t, a) for t, a in zip(soup.triangles, soup.attrs)
    ]


def realize_soup_batch(soup: TriangleSoup) -> SplatBatch:
    """Vectorized realize_soup; used by the renderer and the edit service."""
    n = len(soup)
    if n == 0:
        return SplatBatch.from_gaussians([])
    tri = soup.triangle_array
    e2 = tri[:, 1] - tri[:, 0]
    e3 = tri[:, 2] - tri[:, 0]

    r1 = np.cross(e2, e3)
    r1 /= np.linalg.norm(r1, axis=1)[:, None]
    s2 = np.linalg.norm(e2, axis=1)
    r2 = e2 / s2[:, None]
    r3 = e3 - np.einsum("ij,ij->i", e3, r1)[:, None] * r1 - np.einsum("ij,ij->i", e3, r2)[:, None] * r2
    norms = np.linalg.norm(r3, axis=1)
    if np.any(norms < 1e-12):
        raise DegenerateGeometryError(
            f"soup triangle {int(np.argmax(norms < 1e-12))} has no in-plane residual"
        )
    r3 /= norms[:, None]
    s3 = np.einsum("ij,ij->i", e3, r3)
    neg = s3 < 0
    r3[neg] = -r3[neg]
    s3 = np.abs(s3)
    handed = np.einsum("ij,ij->i", r1, np.cross(r2, r3))
    r1[handed < 0] = -r1[handed < 0]

    rotations = matrix_to_quat(np.stack([r1, r2, r3], axis=2))
    scales = np.column_stack([np.full(n, FLAT_SCALE), s2, s3])
    return SplatBatch(tri[:, 0], rotations, scales, soup.opacities, soup.sh)
