"""Bit-exact file codecs.

Formats
-------
Splat PLY  binary-little-endian PLY, one ``vertex`` element whose float32
           properties appear in exactly this order: x, y, z, nx, ny, nz,
           f_dc_0..2, f_rest_0..R-1, opacity, scale_0..2, rot_0..3. The SH
           degree is inferred from R (0, 9, 24, or 45 rest properties; the
           rest block is channel-major). Stored scale is log of world scale,
           stored opacity is a pre-sigmoid logit, stored rot is a quaternion
           normalized on load. The normal fields are written as zeros and
           ignored on read.
Soup file  magic ``GMSOUP1\\0``, u32le triangle count, then per record:
           9 float32 vertex coordinates, 1 float32 opacity (already in
           [0, 1]), 1 SH-degree byte, and 3*(degree+1)^2 float32 SH values.
Bind file  magic ``GMBIND1\\0``; mesh block (u32le vertex count, u32le face
           count, float64 vertex coordinates, u32le face indices), u32le
           binding count, then per binding: u32le face index, 3 float64
           alphas, float64 rho, float64 opacity, 1 SH-degree byte,
           3*(degree+1)^2 float64 SH values.
Deform spec / keyframes
           JSON; see docs/formats.md for the schema. Syntax errors report
           line and column, schema errors report the JSON path.
Cameras    NeRF-synthetic ``transforms.json``: camera_angle_x plus per-frame
           4x4 camera-to-world matrices in the OpenGL convention, converted
           to this package's +z-forward camera.
"""

from __future__ import annotations

import json
import math
import struct
from typing import Sequence

import numpy as np

from .core import SplatGaussian, TriMesh, canonical_quat
from .deform import (
    BendStep,
    DeformSpec,
    Keyframes,
    RigidStep,
    ScaleStep,
    Selector,
    VertexSetStep,
)
from .errors import FormatError, ValidationError
from .faceparam import BoundScene, FaceBinding
from .render import Camera
from .soup import TriangleSoup

SOUP_MAGIC = b"GMSOUP1\x00"
BIND_MAGIC = b"GMBIND1\x00"

_REST_COUNTS = {0: 0, 1: 9, 2: 24, 3: 45}
_DEGREE_BY_REST = {v: k for k, v in _REST_COUNTS.items()}


# ---------------------------------------------------------------------------
# Splat PLY
# ---------------------------------------------------------------------------


def _ply_property_names(degree: int) -> list[str]:
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(_REST_COUNTS[degree])]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def save_splats(gaussians: Sequence[SplatGaussian], path) -> None:
    """Write splats as a reference-layout binary PLY."""
    degrees = {g.sh_degree for g in gaussians}
    if len(degrees) > 1:
        raise ValidationError(f"cannot save mixed SH degrees {sorted(degrees)} in one PLY")
    degree = degrees.pop() if degrees else 0
    names = _ply_property_names(degree)

    n = len(gaussians)
    payload = np.zeros((n, len(names)), dtype="<f4")
    for i, g in enumerate(gaussians):
        rest = g.sh[1:].T.reshape(-1)  # channel-major: all R, then G, then B
        with np.errstate(divide="ignore"):
            log_scale = np.log(g.scale)
            logit = np.log(g.opacity) - np.log1p(-g.opacity) if 0 < g.opacity < 1 else (
                np.inf if g.opacity >= 1 else -np.inf
            )
        row = np.concatenate(
            [g.mean, np.zeros(3), g.sh[0], rest, [logit], log_scale, g.rotation]
        )
        payload[i] = row.astype("<f4")

    header_lines = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header_lines += [f"property float {name}" for name in names]
    header_lines.append("end_header")
    header = ("\n".join(header_lines) + "\n").encode("ascii")
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(payload.tobytes())


def load_splats(path) -> list[SplatGaussian]:
    """Read a reference-layout splat PLY.

    Scales are exponentiated, opacities pass through a sigmoid, and
    quaternions are normalized and canonicalized to a non-negative scalar
    part (re-saving a third-party file therefore writes the normalized
    rotation; files written by save_splats round-trip byte-exactly).
    """
    with open(path, "rb") as handle:
        blob = handle.read()

    offset = 0
    lines: list[str] = []
    while True:
        end = blob.find(b"\n", offset)
        if end < 0:
            raise FormatError("PLY header not terminated by end_header", offset=offset)
        line = blob[offset : end].decode("ascii", errors="replace").strip()
        offset = end + 1
        if line.startswith("comment"):
            continue
        lines.append(line)
        if line == "end_header":
            break
        if offset > 65536:
            raise FormatError("PLY header unreasonably large", offset=offset)

    if not lines or lines[0] != "ply":
        raise FormatError("not a PLY file (missing 'ply' magic)", offset=0)
    if len(lines) < 2 or lines[1] != "format binary_little_endian 1.0":
        raise FormatError("PLY must be format binary_little_endian 1.0", offset=4)
    if len(lines) < 3 or not lines[2].startswith("element vertex "):
        raise FormatError("expected a single 'element vertex' declaration", offset=0)
    try:
        count = int(lines[2].split()[-1])
    except ValueError as err:
        raise FormatError(f"bad vertex count in {lines[2]!r}", offset=0) from err

    props = []
    for line in lines[3:-1]:
        parts = line.split()
        if len(parts) != 3 or parts[0] != "property" or parts[1] != "float":
            raise FormatError(f"unsupported property declaration {line!r}", offset=0)
        props.append(parts[2])

    rest_count = sum(1 for p in props if p.startswith("f_rest_"))
    if rest_count not in _DEGREE_BY_REST:
        raise FormatError(
            f"unsupported f_rest property count {rest_count} (supported: {sorted(_DEGREE_BY_REST)})"
        )
    degree = _DEGREE_BY_REST[rest_count]
    expected = _ply_property_names(degree)
    if props != expected:
        limit = min(len(props), len(expected))
        bad = next((i for i in range(limit) if props[i] != expected[i]), limit)
        found = props[bad] if bad < len(props) else "<missing>"
        want = expected[bad] if bad < len(expected) else "<extra>"
        raise FormatError(
            f"property order mismatch at property {bad}: found {found!r}, expected {want!r}"
        )

    stride = len(expected) * 4
    body = blob[offset:]
    if len(body) < count * stride:
        raise FormatError(
            f"truncated payload: expected {count * stride} bytes for {count} splats, found {len(body)}",
            offset=offset + len(body),
        )
    raw = np.frombuffer(body[: count * stride], dtype="<f4").reshape(count, len(expected)).astype(np.float64)

    coeffs = (degree + 1) ** 2
    means = raw[:, 0:3]
    dc = raw[:, 6:9]
    rest = raw[:, 9 : 9 + rest_count]
    with np.errstate(over="ignore"):  # logit +-inf encodes opacity exactly 0 or 1
        opacity = 1.0 / (1.0 + np.exp(-raw[:, 9 + rest_count]))
    scales = np.exp(raw[:, 10 + rest_count : 13 + rest_count])
    quats = raw[:, 13 + rest_count : 17 + rest_count]
    norms = np.linalg.norm(quats, axis=1)
    if np.any(norms < 1e-12):
        raise FormatError(f"zero-norm quaternion at splat {int(np.argmax(norms < 1e-12))}")
    quats = canonical_quat(quats / norms[:, None])

    out = []
    for i in range(count):
        sh = np.empty((coeffs, 3))
        sh[0] = dc[i]
        if coeffs > 1:
            sh[1:] = rest[i].reshape(3, coeffs - 1).T
        out.append(SplatGaussian(means[i], quats[i], scales[i], float(opacity[i]), sh))
    return out


# ---------------------------------------------------------------------------
# OBJ meshes
# ---------------------------------------------------------------------------


def load_mesh_obj(path) -> TriMesh:
    """ASCII OBJ loader: v/f records, fan triangulation, winding preserved.

    Negative face indices are resolved relative to the vertices defined so
    far, per the OBJ specification.
    """
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8", errors="replace") as handle:
        for lineno, line in enumerate(handle, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            parts = stripped.split()
            if parts[0] == "v":
                if len(parts) < 4:
                    raise FormatError("vertex record needs 3 coordinates", line=lineno)
                try:
                    vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
                except ValueError as err:
                    raise FormatError(f"non-numeric vertex coordinate: {err}", line=lineno) from err
            elif parts[0] == "f":
                if len(parts) < 4:
                    raise FormatError("face record needs at least 3 vertices", line=lineno)
                idx = []
                for token in parts[1:]:
                    head = token.split("/", 1)[0]
                    try:
                        raw = int(head)
                    except ValueError as err:
                        raise FormatError(f"non-numeric face index {head!r}", line=lineno) from err
                    if raw == 0:
                        raise FormatError("face index 0 is invalid in OBJ", line=lineno)
                    resolved = raw - 1 if raw > 0 else len(vertices) + raw
                    if resolved < 0 or resolved >= len(vertices):
                        raise FormatError(
                            f"face index {raw} out of range ({len(vertices)} vertices defined)",
                            line=lineno,
                        )
                    idx.append(resolved)
                for j in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[j], idx[j + 1]))
            # All other record types (vn, vt, o, g, s, usemtl, ...) are ignored.
    return TriMesh(
        np.array(vertices, dtype=np.float64).reshape(-1, 3),
        np.array(faces, dtype=np.int64).reshape(-1, 3),
    )


# ---------------------------------------------------------------------------
# NeRF-synthetic cameras
# ---------------------------------------------------------------------------


def load_cameras(path, width: int = 800, height: int = 800,
                 near: float = 0.01, far: float = 100.0) -> list[Camera]:
    """Load a NeRF-synthetic transforms.json into renderer cameras.

    The file stores OpenGL-style camera-to-world matrices (look down -z,
    y up); flipping the y and z basis columns converts to this package's
    +z-forward, y-down camera, which is then inverted to world-to-camera.
    Image size is taken from optional ``w``/``h`` keys, else the arguments.
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
    except json.JSONDecodeError as err:
        raise FormatError(f"invalid JSON: {err.msg}", line=err.lineno, column=err.colno) from err

    if "camera_angle_x" not in doc:
        raise FormatError("missing camera_angle_x", location="camera_angle_x")
    if "frames" not in doc or not isinstance(doc["frames"], list):
        raise FormatError("missing frames list", location="frames")

    width = int(doc.get("w", width))
    height = int(doc.get("h", height))
    fx = 0.5 * width / math.tan(0.5 * float(doc["camera_angle_x"]))

    cameras = []
    for i, frame in enumerate(doc["frames"]):
        if "transform_matrix" not in frame:
            raise FormatError("frame missing transform_matrix", location=f"frames[{i}]")
        c2w = np.array(frame["transform_matrix"], dtype=np.float64)
        if c2w.shape != (4, 4):
            raise FormatError(
                f"transform_matrix must be 4x4, got {c2w.shape}", location=f"frames[{i}]"
            )
        c2w = c2w.copy()
        c2w[:3, 1:3] *= -1.0
        try:
            w2c = np.linalg.inv(c2w)
        except np.linalg.LinAlgError as err:
            raise FormatError("transform_matrix is not invertible", location=f"frames[{i}]") from err
        w2c[3] = (0.0, 0.0, 0.0, 1.0)
        cameras.append(
            Camera(w2c, fx, fx, width / 2.0, height / 2.0, width, height, near, far)
        )
    return cameras


# ---------------------------------------------------------------------------
# Soup files
# ---------------------------------------------------------------------------


def save_soup(soup: TriangleSoup, path) -> None:
    coeffs = soup.sh.shape[1] if len(soup) else 1
    degree = int(math.isqrt(coeffs)) - 1
    with open(path, "wb") as handle:
        handle.write(SOUP_MAGIC)
        handle.write(struct.pack("<I", len(soup)))
        for i in range(len(soup)):
            handle.write(soup.triangle_array[i].astype("<f4").tobytes())
            handle.write(struct.pack("<fB", float(soup.opacities[i]), degree))
            handle.write(soup.sh[i].astype("<f4").tobytes())


def load_soup(path) -> TriangleSoup:
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:8] != SOUP_MAGIC:
        raise FormatError(f"bad soup magic {blob[:8]!r}", offset=0)
    if len(blob) < 12:
        raise FormatError("soup header truncated", offset=len(blob))
    (count,) = struct.unpack_from("<I", blob, 8)
    offset = 12
    triangles = np.empty((count, 3, 3))
    opacities = np.empty(count)
    sh_blocks = []
    for i in range(count):
        if len(blob) < offset + 41:
            raise FormatError(f"soup record {i} truncated", offset=len(blob))
        triangles[i] = np.frombuffer(blob, dtype="<f4", count=9, offset=offset).reshape(3, 3)
        opacity, degree = struct.unpack_from("<fB", blob, offset + 36)
        offset += 41
        if degree > 3:
            raise FormatError(f"soup record {i} has unsupported SH degree {degree}", offset=offset - 1)
        coeffs = (degree + 1) ** 2
        size = coeffs * 3 * 4
        if len(blob) < offset + size:
            raise FormatError(f"soup record {i} SH block truncated", offset=len(blob))
        sh_blocks.append(
            np.frombuffer(blob, dtype="<f4", count=coeffs * 3, offset=offset).reshape(coeffs, 3)
        )
        opacities[i] = opacity
        offset += size
    if offset != len(blob):
        raise FormatError(f"{len(blob) - offset} trailing bytes after soup records", offset=offset)
    if count == 0:
        return TriangleSoup(np.zeros((0, 3, 3)), np.zeros(0), np.zeros((0, 1, 3)))
    sizes = {b.shape[0] for b in sh_blocks}
    if len(sizes) != 1:
        raise FormatError(f"mixed SH degrees in soup file: {sorted(sizes)}")
    return TriangleSoup(triangles, opacities, np.stack(sh_blocks).astype(np.float64))


# ---------------------------------------------------------------------------
# Binding files (mesh + bindings, self-contained)
# ---------------------------------------------------------------------------


def save_bindings(scene: BoundScene, path) -> None:
    mesh = scene.mesh
    with open(path, "wb") as handle:
        handle.write(BIND_MAGIC)
        handle.write(struct.pack("<II", mesh.vertex_count, mesh.face_count))
        handle.write(mesh.vertices.astype("<f8").tobytes())
        handle.write(mesh.faces.astype("<u4").tobytes())
        handle.write(struct.pack("<I", len(scene.bindings)))
        for b in scene.bindings:
            degree = int(math.isqrt(b.sh.shape[0])) - 1
            handle.write(struct.pack("<I", b.face_index))
            handle.write(np.asarray(b.alphas, dtype="<f8").tobytes())
            handle.write(struct.pack("<ddB", b.rho, b.opacity, degree))
            handle.write(b.sh.astype("<f8").tobytes())


def load_bindings(path) -> BoundScene:
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:8] != BIND_MAGIC:
        raise FormatError(f"bad bindings magic {blob[:8]!r}", offset=0)
    try:
        vcount, fcount = struct.unpack_from("<II", blob, 8)
        offset = 16
        vertices = np.frombuffer(blob, dtype="<f8", count=vcount * 3, offset=offset).reshape(-1, 3)
        offset += vcount * 24
        faces = np.frombuffer(blob, dtype="<u4", count=fcount * 3, offset=offset).reshape(-1, 3)
        offset += fcount * 12
        (bcount,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        bindings = []
        for _ in range(bcount):
            (face_index,) = struct.unpack_from("<I", blob, offset)
            alphas = np.frombuffer(blob, dtype="<f8", count=3, offset=offset + 4)
            rho, opacity, degree = struct.unpack_from("<ddB", blob, offset + 28)
            offset += 45
            coeffs = (degree + 1) ** 2
            sh = np.frombuffer(blob, dtype="<f8", count=coeffs * 3, offset=offset).reshape(coeffs, 3)
            offset += coeffs * 24
            bindings.append(FaceBinding(face_index, alphas, rho, opacity, sh))
    except (struct.error, ValueError) as err:
        raise FormatError(f"bindings file truncated or corrupt: {err}", offset=len(blob)) from err
    if offset != len(blob):
        raise FormatError(f"{len(blob) - offset} trailing bytes after bindings", offset=offset)
    mesh = TriMesh(vertices, faces.astype(np.int64))
    return BoundScene(mesh, tuple(bindings))


# ---------------------------------------------------------------------------
# Deform specs / keyframes (JSON)
# ---------------------------------------------------------------------------


def _parse_selector(node, where: str) -> Selector:
    if node is None:
        return Selector()
    if not isinstance(node, dict):
        raise FormatError("selector must be an object", location=where)
    if "indices" in node:
        return Selector(indices=node["indices"])
    if "box" in node:
        box = node["box"]
        if not isinstance(box, dict) or "min" not in box or "max" not in box:
            raise FormatError("box selector needs min and max", location=f"{where}.box")
        return Selector(box_min=box["min"], box_max=box["max"])
    raise FormatError("selector needs 'indices' or 'box'", location=where)


def _parse_step(node, where: str):
    if not isinstance(node, dict) or "op" not in node:
        raise FormatError("step must be an object with an 'op' field", location=where)
    op = node["op"]
    try:
        select = _parse_selector(node.get("select"), f"{where}.select")
        if op == "rigid":
            return RigidStep(
                rotation=node.get("rotation", (1.0, 0.0, 0.0, 0.0)),
                translation=node.get("translation", (0.0, 0.0, 0.0)),
                pivot=node.get("pivot"),
                select=select,
            )
        if op == "scale":
            if "factors" not in node:
                raise FormatError("scale step needs 'factors'", location=where)
            return ScaleStep(
                factors=node["factors"], pivot=node.get("pivot", (0.0, 0.0, 0.0)), select=select
            )
        if op == "vertex_set":
            if "indices" not in node or "positions" not in node:
                raise FormatError("vertex_set step needs 'indices' and 'positions'", location=where)
            return VertexSetStep(indices=node["indices"], positions=node["positions"])
        if op == "bend":
            if "axis" not in node or "rate" not in node:
                raise FormatError("bend step needs 'axis' and 'rate'", location=where)
            return BendStep(
                axis=node["axis"],
                rate=node["rate"],
                pivot=node.get("pivot", (0.0, 0.0, 0.0)),
                along=node.get("along"),
                select=select,
            )
    except (ValidationError, TypeError) as err:
        raise FormatError(str(err), location=where) from err
    raise FormatError(f"unknown step op {op!r}", location=f"{where}.op")


def _parse_steps(node, where: str) -> DeformSpec:
    if not isinstance(node, list):
        raise FormatError("'steps' must be a list", location=where)
    return DeformSpec(tuple(_parse_step(s, f"{where}[{i}]") for i, s in enumerate(node)))


def load_deform_spec(path) -> DeformSpec | Keyframes:
    """Parse a deform-spec or keyframes JSON file (schema: docs/formats.md)."""
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise FormatError(f"invalid JSON: {err.msg}", line=err.lineno, column=err.colno) from err
    if not isinstance(doc, dict):
        raise FormatError("top level must be an object", location="$")
    if "keyframes" in doc:
        if not isinstance(doc["keyframes"], list) or not doc["keyframes"]:
            raise FormatError("'keyframes' must be a non-empty list", location="keyframes")
        frames = []
        for i, frame in enumerate(doc["keyframes"]):
            where = f"keyframes[{i}]"
            if not isinstance(frame, dict) or "time" not in frame or "steps" not in frame:
                raise FormatError("keyframe needs 'time' and 'steps'", location=where)
            frames.append((float(frame["time"]), _parse_steps(frame["steps"], f"{where}.steps")))
        try:
            return Keyframes(tuple(frames))
        except ValidationError as err:
            raise FormatError(str(err), location="keyframes") from err
    if "steps" in doc:
        return _parse_steps(doc["steps"], "steps")
    raise FormatError("expected 'steps' or 'keyframes' at top level", location="$")


# ---------------------------------------------------------------------------
# Scene dispatch
# ---------------------------------------------------------------------------


def load_scene(path):
    """Load any renderable scene file by extension.

    Returns ``("splats", list[SplatGaussian])`` for .ply,
    ``("soup", TriangleSoup)`` for .gmsoup, and
    ``("bound", BoundScene)`` for .gmbind.
    """
    name = str(path).lower()
    if name.endswith(".ply"):
        return "splats", load_splats(path)
    if name.endswith(".gmsoup"):
        return "soup", load_soup(path)
    if name.endswith(".gmbind"):
        return "bound", load_bindings(path)
    raise FormatError(
        f"unrecognized scene extension for {path!r} (expected .ply, .gmsoup, or .gmbind)"
    )
