"""Vertex-level edits for meshes and triangle soups.

Edits only move vertices; splats are never stored per-deformation. They are
re-realized from the current vertices on demand, which is what makes the
binding mechanism adapt rotation and scale automatically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .core import TriMesh, as_vec3, quat_to_matrix
from .errors import GeometryError, RangeError, ValidationError
from .soup import TriangleSoup

_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True, eq=False)
class Selector:
    """Chooses vertex indices either explicitly or by axis-aligned box."""

    indices: np.ndarray | None = None
    box_min: np.ndarray | None = None
    box_max: np.ndarray | None = None

    def __post_init__(self):
        if self.indices is not None and (self.box_min is not None or self.box_max is not None):
            raise ValidationError("selector takes either indices or a box, not both")
        if (self.box_min is None) != (self.box_max is None):
            raise ValidationError("box selector needs both min and max corners")
        if self.indices is not None:
            idx = np.array(self.indices, dtype=np.int64).reshape(-1)
            if len(idx) and idx.min() < 0:
                raise ValidationError("selector indices must be non-negative")
            idx.flags.writeable = False
            object.__setattr__(self, "indices", idx)
        if self.box_min is not None:
            object.__setattr__(self, "box_min", as_vec3(self.box_min, "box_min"))
            object.__setattr__(self, "box_max", as_vec3(self.box_max, "box_max"))

    def resolve(self, vertices: np.ndarray) -> np.ndarray:
        if self.indices is not None:
            if len(self.indices) and self.indices.max() >= len(vertices):
                raise ValidationError(
                    f"selector index {int(self.indices.max())} out of range "
                    f"({len(vertices)} vertices)"
                )
            return self.indices
        if self.box_min is not None:
            inside = np.all((vertices >= self.box_min) & (vertices <= self.box_max), axis=1)
            return np.flatnonzero(inside)
        return np.arange(len(vertices))

    def same_as(self, other: "Selector") -> bool:
        def eq(a, b):
            if (a is None) != (b is None):
                return False
            return a is None or np.array_equal(a, b)

        return eq(self.indices, other.indices) and eq(self.box_min, other.box_min) and eq(
            self.box_max, other.box_max
        )


ALL_VERTICES = Selector()


@dataclass(frozen=True, eq=False)
class RigidStep:
    """Rotate (about an optional pivot) then translate the selected vertices."""

    rotation: np.ndarray = (1.0, 0.0, 0.0, 0.0)
    translation: np.ndarray = (0.0, 0.0, 0.0)
    pivot: np.ndarray | None = None
    select: Selector = ALL_VERTICES

    def __post_init__(self):
        q = np.array(self.rotation, dtype=np.float64)
        if q.shape != (4,) or abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValidationError("rigid rotation must be a unit quaternion (w, x, y, z)")
        q.flags.writeable = False
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", as_vec3(self.translation, "translation"))
        if self.pivot is not None:
            object.__setattr__(self, "pivot", as_vec3(self.pivot, "pivot"))

    def apply(self, vertices: np.ndarray) -> np.ndarray:
        idx = self.select.resolve(vertices)
        rot = quat_to_matrix(self.rotation)
        sel = vertices[idx]
        if self.pivot is not None:
            sel = (sel - self.pivot) @ rot.T + self.pivot
        else:
            sel = sel @ rot.T
        vertices[idx] = sel + self.translation
        return vertices


@dataclass(frozen=True, eq=False)
class ScaleStep:
    """Scale the selected vertices about a pivot, per-axis factors."""

    factors: np.ndarray
    pivot: np.ndarray = (0.0, 0.0, 0.0)
    select: Selector = ALL_VERTICES

    def __post_init__(self):
        factors = as_vec3(self.factors, "factors")
        if np.any(factors == 0):
            raise ValidationError("scale factors must be nonzero")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "pivot", as_vec3(self.pivot, "pivot"))

    def apply(self, vertices: np.ndarray) -> np.ndarray:
        idx = self.select.resolve(vertices)
        vertices[idx] = (vertices[idx] - self.pivot) * self.factors + self.pivot
        return vertices


@dataclass(frozen=True, eq=False)
class VertexSetStep:
    """Explicitly place a set of vertices."""

    indices: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64).reshape(-1)
        pos = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        if len(idx) != len(pos):
            raise ValidationError("vertex_set indices and positions must pair up")
        if len(idx) and idx.min() < 0:
            raise ValidationError("vertex_set indices must be non-negative")
        idx.flags.writeable = False
        pos.flags.writeable = False
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "positions", pos)

    def apply(self, vertices: np.ndarray) -> np.ndarray:
        if len(self.indices) and self.indices.max() >= len(vertices):
            raise ValidationError(
                f"vertex_set index {int(self.indices.max())} out of range ({len(vertices)} vertices)"
            )
        vertices[self.indices] = self.positions
        return vertices


@dataclass(frozen=True, eq=False)
class BendStep:
    """Rotate selected vertices about ``axis`` through ``pivot`` by an angle
    proportional to their coordinate along ``along``.

    ``axis`` and ``along`` are axis names; keeping them distinct bends the
    region into an arc (equal names would produce a twist).
    """

    axis: str
    rate: float
    pivot: np.ndarray = (0.0, 0.0, 0.0)
    along: str | None = None
    select: Selector = ALL_VERTICES

    def __post_init__(self):
        if self.axis not in _AXES:
            raise ValidationError(f"bend axis must be one of {sorted(_AXES)}, got {self.axis!r}")
        along = self.along if self.along is not None else {"x": "y", "y": "z", "z": "x"}[self.axis]
        if along not in _AXES:
            raise ValidationError(f"bend along-axis must be one of {sorted(_AXES)}, got {along!r}")
        object.__setattr__(self, "along", along)
        object.__setattr__(self, "rate", float(self.rate))
        object.__setattr__(self, "pivot", as_vec3(self.pivot, "pivot"))

    def apply(self, vertices: np.ndarray) -> np.ndarray:
        idx = self.select.resolve(vertices)
        if len(idx) == 0:
            return vertices
        axis_vec = np.zeros(3)
        axis_vec[_AXES[self.axis]] = 1.0
        rel = vertices[idx] - self.pivot
        theta = self.rate * rel[:, _AXES[self.along]]
        cos, sin = np.cos(theta), np.sin(theta)
        # Rodrigues rotation about the unit coordinate axis, vectorized.
        dot = rel @ axis_vec
        cross = np.cross(np.broadcast_to(axis_vec, rel.shape), rel)
        rotated = rel * cos[:, None] + cross * sin[:, None] + np.outer(dot * (1 - cos), axis_vec)
        vertices[idx] = rotated + self.pivot
        return vertices


DeformStep = Union[RigidStep, ScaleStep, VertexSetStep, BendStep]


@dataclass(frozen=True, eq=False)
class DeformSpec:
    """An ordered list of edit steps applied to vertices in sequence."""

    steps: tuple = ()

    def __post_init__(self):
        steps = tuple(self.steps)
        for s in steps:
            if not isinstance(s, (RigidStep, ScaleStep, VertexSetStep, BendStep)):
                raise ValidationError(f"unsupported step type {type(s).__name__}")
        object.__setattr__(self, "steps", steps)

    def then(self, other: "DeformSpec") -> "DeformSpec":
        return DeformSpec(self.steps + other.steps)

    def resolve(self, vertices: np.ndarray) -> np.ndarray:
        out = np.array(vertices, dtype=np.float64)
        for step in self.steps:
            out = step.apply(out)
        return out


@dataclass(frozen=True, eq=False)
class Keyframes:
    """Timestamped deform specs; times strictly increasing."""

    frames: tuple  # of (time, DeformSpec)

    def __post_init__(self):
        frames = tuple((float(t), spec) for t, spec in self.frames)
        if not frames:
            raise ValidationError("keyframes need at least one entry")
        times = [t for t, _ in frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError(f"keyframe times must be strictly increasing, got {times}")
        for _, spec in frames:
            if not isinstance(spec, DeformSpec):
                raise ValidationError("keyframe payload must be a DeformSpec")
        object.__setattr__(self, "frames", frames)

    @property
    def times(self) -> list[float]:
        return [t for t, _ in self.frames]


def apply_deform(target, spec: DeformSpec):
    """Run the edit steps over a mesh or soup; topology never changes.

    Gaussian state is untouched; adaptation happens on the next realize call.
    Edits that produce a degenerate face raise a GeometryError naming it.
    """
    if isinstance(target, TriMesh):
        return target.with_vertices(spec.resolve(target.vertices))
    if isinstance(target, TriangleSoup):
        flat = spec.resolve(target.triangle_array.reshape(-1, 3))
        return target.with_triangle_array(flat.reshape(-1, 3, 3))
    raise ValidationError(f"apply_deform expects TriMesh or TriangleSoup, got {type(target).__name__}")


def _slerp(qa: np.ndarray, qb: np.ndarray, u: float) -> np.ndarray:
    if float(qa @ qb) < 0:
        qb = -qb
    dot = min(1.0, max(-1.0, float(qa @ qb)))
    if dot > 1.0 - 1e-12:
        out = (1 - u) * qa + u * qb
        return out / np.linalg.norm(out)
    theta = math.acos(dot)
    return (math.sin((1 - u) * theta) * qa + math.sin(u * theta) * qb) / math.sin(theta)


def _lerp(a: np.ndarray, b: np.ndarray, u: float) -> np.ndarray:
    return (1 - u) * np.asarray(a) + u * np.asarray(b)


def _blend_steps(a: DeformStep, b: DeformStep, u: float) -> DeformStep:
    if type(a) is not type(b):
        raise ValidationError(
            f"cannot interpolate {type(a).__name__} against {type(b).__name__}"
        )
    if isinstance(a, RigidStep):
        if not a.select.same_as(b.select) or (a.pivot is None) != (b.pivot is None):
            raise ValidationError("rigid steps must share selector and pivot form")
        pivot = None if a.pivot is None else _lerp(a.pivot, b.pivot, u)
        return RigidStep(_slerp(a.rotation, b.rotation, u), _lerp(a.translation, b.translation, u),
                         pivot, a.select)
    if isinstance(a, ScaleStep):
        if not a.select.same_as(b.select):
            raise ValidationError("scale steps must share selector")
        return ScaleStep(_lerp(a.factors, b.factors, u), _lerp(a.pivot, b.pivot, u), a.select)
    if isinstance(a, VertexSetStep):
        if not np.array_equal(a.indices, b.indices):
            raise ValidationError("vertex_set steps must target the same indices")
        return VertexSetStep(a.indices, _lerp(a.positions, b.positions, u))
    if isinstance(a, BendStep):
        if a.axis != b.axis or a.along != b.along or not a.select.same_as(b.select):
            raise ValidationError("bend steps must share axis, along-axis, and selector")
        return BendStep(a.axis, (1 - u) * a.rate + u * b.rate, _lerp(a.pivot, b.pivot, u),
                        a.along, a.select)
    raise ValidationError(f"unsupported step type {type(a).__name__}")


def interpolate(keyframes: Keyframes, t: float) -> DeformSpec:
    """Blend the bracketing keyframes at time t into a single DeformSpec.

    Exactly at a keyframe time the stored spec is returned unchanged.
    Between keyframes, vertex_set positions interpolate linearly per vertex,
    rigid rotations by slerp, and the remaining numeric fields linearly; the
    bracketing specs must be step-wise structurally compatible.
    """
    t = float(t)
    times = keyframes.times
    if t < times[0] or t > times[-1]:
        raise RangeError(f"time {t} outside keyframe range [{times[0]}, {times[-1]}]")
    for kt, spec in keyframes.frames:
        if t == kt:
            return spec
    hi = next(i for i, kt in enumerate(times) if kt > t)
    (t0, spec0), (t1, spec1) = keyframes.frames[hi - 1], keyframes.frames[hi]
    if len(spec0.steps) != len(spec1.steps):
        raise ValidationError(
            f"keyframes at {t0} and {t1} have different step counts "
            f"({len(spec0.steps)} vs {len(spec1.steps)})"
        )
    u = (t - t0) / (t1 - t0)
    return DeformSpec(tuple(_blend_steps(a, b, u) for a, b in zip(spec0.steps, spec1.steps)))


def subdivide_large_faces(mesh: TriMesh, area_threshold: float, max_rounds: int = 6) -> TriMesh:
    """Split every face above the area threshold into 4 via edge midpoints,
    repeating until all faces fit or ``max_rounds`` is reached.

    Midpoint vertices are shared between neighbors within a round, output is
    deterministic, and total surface area is preserved exactly (children tile
    their parent). Only unbound meshes may be subdivided; how bindings should
    migrate across a face split is deliberately left undefined.
    """
    if not isinstance(mesh, TriMesh):
        raise ValidationError(
            f"subdivide_large_faces operates on a bare TriMesh before binding, got {type(mesh).__name__}"
        )
    if not (float(area_threshold) > 0):
        raise ValidationError(f"area threshold must be positive, got {area_threshold}")

    vertices = [v for v in mesh.vertices]
    faces = [tuple(int(i) for i in f) for f in mesh.faces]
    for _ in range(max_rounds):
        areas = TriMesh(np.array(vertices), np.array(faces, dtype=np.int64).reshape(-1, 3)).face_areas()
        if np.all(areas <= area_threshold):
            break
        midpoints: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            if key not in midpoints:
                vertices.append(0.5 * (vertices[i] + vertices[j]))
                midpoints[key] = len(vertices) - 1
            return midpoints[key]

        next_faces: list[tuple[int, int, int]] = []
        for face, area in zip(faces, areas):
            if area <= area_threshold:
                next_faces.append(face)
                continue
            a, b, c = face
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            next_faces.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])
        faces = next_faces
    return TriMesh(np.array(vertices), np.array(faces, dtype=np.int64).reshape(-1, 3))
