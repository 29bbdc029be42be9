"""Edit sessions and the WebSocket render service behind the editor client.

Every connection gets its own SceneSession seeded from the scene file the
server was started with. Messages on a connection are handled strictly in
order, so edits are serialized and at most one render is in flight per
session; edits arriving during a render simply queue and apply to the next
snapshot. Scene snapshots are immutable, which makes undo/redo bit-exact.

Protocol: docs/protocol.md. JSON text frames carry control messages; binary
frames carry images (kind 0x01) and vertex buffers (kind 0x02).
"""

from __future__ import annotations

import json
import os
import struct
import time
from typing import Callable

import numpy as np

from .core import SplatBatch, TriMesh
from .deform import DeformSpec, RigidStep, ScaleStep, Selector, apply_deform
from .errors import GeometryError, MeshSplatError, ValidationError
from .faceparam import BoundScene, realize_all
from .io import load_scene
from .render import Camera, rasterize
from .soup import TriangleSoup, extract_soup, realize_soup_batch
from .wire import WsConnection, WsServer

PROTOCOL_VERSION = 1
DEFAULT_PORT = 7421
DEFAULT_MAX_UNDO = 64

FRAME_KIND_IMAGE = 0x01
FRAME_KIND_VERTICES = 0x02


def max_undo_from_env() -> int:
    raw = os.environ.get("GAMES_MAX_UNDO", "")
    try:
        value = int(raw)
        return value if value > 0 else DEFAULT_MAX_UNDO
    except ValueError:
        return DEFAULT_MAX_UNDO


def camera_to_json(cam: Camera) -> dict:
    return {
        "world_to_camera": [float(x) for x in cam.world_to_camera.reshape(-1)],
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height, "near": cam.near, "far": cam.far,
    }


def camera_from_json(doc: dict) -> Camera:
    try:
        w2c = np.array(doc["world_to_camera"], dtype=np.float64).reshape(4, 4)
        return Camera(w2c, doc["fx"], doc["fy"], doc["cx"], doc["cy"],
                      doc["width"], doc["height"], doc.get("near", 0.01), doc.get("far", 100.0))
    except (KeyError, TypeError, ValueError) as err:
        raise ValidationError(f"bad camera payload: {err}") from err


def default_camera(vertices: np.ndarray, width: int = 512, height: int = 512) -> Camera:
    """Frame the scene bounds from a diagonal three-quarter view."""
    if len(vertices) == 0:
        center, radius = np.zeros(3), 1.0
    else:
        lo, hi = vertices.min(axis=0), vertices.max(axis=0)
        center = 0.5 * (lo + hi)
        radius = max(float(np.linalg.norm(hi - lo)) * 0.5, 1e-3)
    eye = center + radius * np.array([2.0, 1.4, 1.1])
    return Camera.look_at(
        eye, center, width=width, height=height,
        near=max(radius * 1e-3, 1e-4), far=radius * 40 + 10,
    )


def _scene_vertices(scene) -> np.ndarray:
    if isinstance(scene, BoundScene):
        return scene.mesh.vertices
    return scene.triangle_array.reshape(-1, 3)


def _scene_with_vertices(scene, vertices: np.ndarray):
    if isinstance(scene, BoundScene):
        return scene.with_mesh(scene.mesh.with_vertices(vertices))
    return scene.with_triangle_array(vertices.reshape(-1, 3, 3))


def load_editable_scene(path):
    """Load a scene file into an editable object.

    Raw splat PLYs are flattened and converted to Triangle Soup so their
    geometry becomes editable; soup and binding files load as-is.
    """
    kind, payload = load_scene(path)
    if kind == "splats":
        return extract_soup(payload, skip_degenerate=True)
    return payload


class SceneSession:
    """One editing session: a current snapshot, bounded undo/redo, a camera."""

    _counter = 0

    def __init__(self, scene, camera: Camera | None = None, max_undo: int | None = None):
        if not isinstance(scene, (BoundScene, TriangleSoup)):
            raise ValidationError(f"session needs a BoundScene or TriangleSoup, got {type(scene).__name__}")
        SceneSession._counter += 1
        self.session_id = SceneSession._counter
        self._current = scene
        self._undo: list = []
        self._redo: list = []
        self._max_undo = max_undo if max_undo is not None else max_undo_from_env()
        self.camera = camera or default_camera(_scene_vertices(scene))

    # -- state views ---------------------------------------------------------

    @property
    def scene(self):
        return self._current

    @property
    def scene_kind(self) -> str:
        return "bound" if isinstance(self._current, BoundScene) else "soup"

    @property
    def vertices(self) -> np.ndarray:
        return _scene_vertices(self._current)

    @property
    def splat_count(self) -> int:
        if isinstance(self._current, BoundScene):
            return len(self._current.bindings)
        return len(self._current)

    @property
    def undo_depth(self) -> int:
        return len(self._undo)

    @property
    def redo_depth(self) -> int:
        return len(self._redo)

    # -- edits -----------------------------------------------------------------

    def _commit(self, new_scene) -> None:
        self._undo.append(self._current)
        if len(self._undo) > self._max_undo:
            self._undo.pop(0)
        self._redo.clear()
        self._current = new_scene

    def apply_spec(self, spec: DeformSpec) -> None:
        """Apply an edit atomically: failures leave the snapshot unchanged."""
        if isinstance(self._current, BoundScene):
            edited = self._current.with_mesh(apply_deform(self._current.mesh, spec))
        else:
            edited = apply_deform(self._current, spec)
        self._commit(edited)

    def move_vertices(self, indices, delta) -> None:
        step = RigidStep(translation=delta, select=Selector(indices=indices))
        self.apply_spec(DeformSpec((step,)))

    def transform_group(self, indices, *, rigid: dict | None = None, scale: dict | None = None) -> None:
        if (rigid is None) == (scale is None):
            raise ValidationError("transform_group takes exactly one of rigid or scale")
        select = Selector(indices=indices)
        resolved = select.resolve(self.vertices)
        if len(resolved) == 0:
            raise ValidationError("transform_group selection is empty")
        centroid = self.vertices[resolved].mean(axis=0)
        if rigid is not None:
            step = RigidStep(
                rotation=rigid.get("rotation", (1.0, 0.0, 0.0, 0.0)),
                translation=rigid.get("translation", (0.0, 0.0, 0.0)),
                pivot=rigid["pivot"] if rigid.get("pivot") is not None else centroid,
                select=select,
            )
        else:
            step = ScaleStep(
                factors=scale["factors"],
                pivot=scale["pivot"] if scale.get("pivot") is not None else centroid,
                select=select,
            )
        self.apply_spec(DeformSpec((step,)))

    def select_box(self, box_min, box_max) -> np.ndarray:
        return Selector(box_min=box_min, box_max=box_max).resolve(self.vertices)

    def undo(self) -> bool:
        if not self._undo:
            return False
        self._redo.append(self._current)
        self._current = self._undo.pop()
        return True

    def redo(self) -> bool:
        if not self._redo:
            return False
        self._undo.append(self._current)
        self._current = self._redo.pop()
        return True

    # -- rendering ---------------------------------------------------------------

    def realize(self) -> SplatBatch:
        if isinstance(self._current, BoundScene):
            return realize_all(self._current)
        return realize_soup_batch(self._current)

    def render(self, background=(0.0, 0.0, 0.0)):
        return rasterize(self.realize(), self.camera, background)


# ---------------------------------------------------------------------------
# Protocol handler
# ---------------------------------------------------------------------------


def _encode_image_frame(png: bytes, width: int, height: int) -> bytes:
    return struct.pack("<BII", FRAME_KIND_IMAGE, width, height) + png


def _encode_vertex_frame(vertices: np.ndarray) -> bytes:
    data = np.ascontiguousarray(vertices, dtype="<f4")
    return struct.pack("<BI", FRAME_KIND_VERTICES, len(data)) + data.tobytes()


class ServiceHandler:
    """Binds one WsConnection to one SceneSession and speaks the protocol."""

    def __init__(self, conn: WsConnection, session: SceneSession, background=(0.0, 0.0, 0.0)):
        self.conn = conn
        self.session = session
        self.background = tuple(background)

    def _send(self, payload: dict) -> None:
        self.conn.send_text(json.dumps(payload))

    def _state_info(self) -> dict:
        s = self.session
        return {
            "scene_kind": s.scene_kind,
            "splat_count": s.splat_count,
            "vertex_count": len(s.vertices),
            "undo_depth": s.undo_depth,
            "redo_depth": s.redo_depth,
        }

    def send_hello(self) -> None:
        self._send({
            "type": "hello",
            "protocol": PROTOCOL_VERSION,
            "session": self.session.session_id,
            "camera": camera_to_json(self.session.camera),
            "max_undo": self.session._max_undo,
            **self._state_info(),
        })
        self.conn.send_binary(_encode_vertex_frame(self.session.vertices))

    def run(self) -> None:
        self.send_hello()
        while True:
            message = self.conn.recv()
            if message is None:
                return
            kind, payload = message
            if kind != "text":
                self._send({"type": "error", "code": "bad_request",
                            "message": "binary messages are server-to-client only"})
                continue
            try:
                request = json.loads(payload)
            except json.JSONDecodeError as err:
                self._send({"type": "error", "code": "bad_json", "message": str(err)})
                continue
            if not isinstance(request, dict) or "type" not in request:
                self._send({"type": "error", "code": "bad_request",
                            "message": "messages must be objects with a 'type'"})
                continue
            self._dispatch(request)

    def _dispatch(self, request: dict) -> None:
        rid = request.get("id")
        op = request["type"]
        try:
            handler = getattr(self, f"_op_{op}", None)
            if handler is None:
                raise ValidationError(f"unknown operation {op!r}")
            handler(rid, request)
        except (MeshSplatError, KeyError, TypeError, ValueError) as err:
            code = "degenerate_face" if isinstance(err, GeometryError) else "bad_request"
            detail = {"face_index": err.face_index} if isinstance(err, GeometryError) and err.face_index is not None else None
            message = {"type": "error", "id": rid, "code": code, "message": str(err)}
            if detail:
                message["detail"] = detail
            self._send(message)

    def _ack(self, rid, op: str, **extra) -> None:
        self._send({"type": "ack", "id": rid, "op": op, **self._state_info(), **extra})

    def _op_load(self, rid, request: dict) -> None:
        scene = load_editable_scene(request["path"])
        self.session = SceneSession(scene, max_undo=self.session._max_undo)
        self._ack(rid, "load", camera=camera_to_json(self.session.camera))
        self.conn.send_binary(_encode_vertex_frame(self.session.vertices))

    def _op_select(self, rid, request: dict) -> None:
        box = request["box"]
        indices = self.session.select_box(box["min"], box["max"])
        self._ack(rid, "select", indices=[int(i) for i in indices])

    def _op_move_vertices(self, rid, request: dict) -> None:
        self.session.move_vertices(request["indices"], request["delta"])
        self._ack(rid, "move_vertices")
        self.conn.send_binary(_encode_vertex_frame(self.session.vertices))

    def _op_transform_group(self, rid, request: dict) -> None:
        self.session.transform_group(
            request["indices"], rigid=request.get("rigid"), scale=request.get("scale")
        )
        self._ack(rid, "transform_group")
        self.conn.send_binary(_encode_vertex_frame(self.session.vertices))

    def _op_set_camera(self, rid, request: dict) -> None:
        self.session.camera = camera_from_json(request["camera"])
        self._ack(rid, "set_camera", camera=camera_to_json(self.session.camera))

    def _op_render(self, rid, request: dict) -> None:
        started = time.perf_counter()
        image = self.session.render(self.background)
        png = image.to_png_bytes()
        self._ack(rid, "render", width=image.width, height=image.height,
                  render_ms=round(1000 * (time.perf_counter() - started), 3))
        self.conn.send_binary(_encode_image_frame(png, image.width, image.height))

    def _op_undo(self, rid, request: dict) -> None:
        applied = self.session.undo()
        self._ack(rid, "undo", applied=applied)
        if applied:
            self.conn.send_binary(_encode_vertex_frame(self.session.vertices))

    def _op_redo(self, rid, request: dict) -> None:
        applied = self.session.redo()
        self._ack(rid, "redo", applied=applied)
        if applied:
            self.conn.send_binary(_encode_vertex_frame(self.session.vertices))


def serve_scene(path, host: str = "127.0.0.1", port: int = DEFAULT_PORT,
                static_dir=None, background=(0.0, 0.0, 0.0)) -> WsServer:
    """Start the editor service for a scene file; returns the running server."""
    initial = load_editable_scene(path)

    def on_connection(conn: WsConnection) -> None:
        session = SceneSession(initial)
        ServiceHandler(conn, session, background).run()

    return WsServer(host, port, on_connection, static_dir=static_dir).start()
