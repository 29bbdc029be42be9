import json
import math
import struct

import numpy as np
import pytest

from meshsplat.core import FLAT_SCALE, SplatGaussian, TriMesh
from meshsplat.deform import BendStep, DeformSpec, Keyframes, RigidStep, ScaleStep, VertexSetStep
from meshsplat.errors import FormatError, ValidationError
from meshsplat.faceparam import BoundScene, FaceBinding, bind_uniform
from meshsplat.io import (
    load_bindings,
    load_cameras,
    load_deform_spec,
    load_mesh_obj,
    load_scene,
    load_soup,
    load_splats,
    save_bindings,
    save_soup,
    save_splats,
)
from meshsplat.soup import TriangleSoup, extract_soup

from fixtures import mesh_to_obj_text, uv_sphere


def random_unit_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_splats(rng, n, coeffs=16):
    out = []
    for _ in range(n):
        out.append(
            SplatGaussian(
                rng.uniform(-5, 5, 3),
                random_unit_quat(rng),
                rng.uniform(0.01, 2.0, 3),
                float(rng.uniform(0.05, 0.95)),
                rng.normal(size=(coeffs, 3)),
            )
        )
    return out


class TestSplatPly:
    def test_save_load_save_byte_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        splats = random_splats(rng, 3)
        first, second = tmp_path / "a.ply", tmp_path / "b.ply"
        save_splats(splats, first)
        save_splats(load_splats(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_activation_conventions(self, tmp_path):
        # Hand-build a PLY with known raw values: scale_0 = 0 -> exp(0) = 1;
        # opacity logit 0 -> sigmoid 0.5.
        names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2",
                 "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
        header = ["ply", "format binary_little_endian 1.0", "element vertex 1"]
        header += [f"property float {n}" for n in names]
        header.append("end_header")
        row = np.zeros(len(names), dtype="<f4")
        row[13] = 2.0  # unnormalized quaternion (2, 0, 0, 0)
        path = tmp_path / "hand.ply"
        path.write_bytes(("\n".join(header) + "\n").encode() + row.tobytes())
        (g,) = load_splats(path)
        np.testing.assert_allclose(g.scale, [1.0, 1.0, 1.0])
        assert g.opacity == pytest.approx(0.5)
        np.testing.assert_array_equal(g.rotation, [1, 0, 0, 0])

    def test_sh_degrees_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        for coeffs in (1, 4, 9, 16):
            splats = random_splats(rng, 2, coeffs=coeffs)
            path = tmp_path / f"deg{coeffs}.ply"
            save_splats(splats, path)
            loaded = load_splats(path)
            assert loaded[0].sh.shape == (coeffs, 3)
            np.testing.assert_allclose(loaded[0].sh, splats[0].sh, atol=1e-6)

    def test_float_payload_reproduced_exactly(self, tmp_path):
        rng = np.random.default_rng(2)
        splats = random_splats(rng, 10, coeffs=4)
        path = tmp_path / "x.ply"
        save_splats(splats, path)
        blob = path.read_bytes()
        payload = blob[blob.index(b"end_header\n") + len(b"end_header\n"):]
        save_splats(load_splats(path), path)
        blob2 = path.read_bytes()
        payload2 = blob2[blob2.index(b"end_header\n") + len(b"end_header\n"):]
        assert payload == payload2

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_bytes(b"noply\nend_header\n")
        with pytest.raises(FormatError):
            load_splats(path)

    def test_wrong_property_order(self, tmp_path):
        names = ["x", "z", "y", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2",
                 "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
        header = ["ply", "format binary_little_endian 1.0", "element vertex 0"]
        header += [f"property float {n}" for n in names]
        header.append("end_header")
        path = tmp_path / "order.ply"
        path.write_bytes(("\n".join(header) + "\n").encode())
        with pytest.raises(FormatError) as info:
            load_splats(path)
        assert "property 1" in str(info.value)

    def test_truncated_payload_reports_offset(self, tmp_path):
        rng = np.random.default_rng(3)
        path = tmp_path / "trunc.ply"
        save_splats(random_splats(rng, 2, coeffs=1), path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(FormatError) as info:
            load_splats(path)
        assert info.value.offset is not None
        assert "truncated" in str(info.value)

    def test_opacity_extremes_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        base = random_splats(rng, 2, coeffs=1)
        import dataclasses

        splats = [
            dataclasses.replace(base[0], opacity=0.0),
            dataclasses.replace(base[1], opacity=1.0),
        ]
        path = tmp_path / "extreme.ply"
        save_splats(splats, path)
        loaded = load_splats(path)
        assert loaded[0].opacity == 0.0
        assert loaded[1].opacity == 1.0

    def test_reference_ply_if_provided(self, reference_ply):
        splats = load_splats(reference_ply)
        assert len(splats) > 0


class TestObj:
    def test_single_face(self, tmp_path):
        path = tmp_path / "tri.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        mesh = load_mesh_obj(path)
        assert mesh.face_count == 1
        np.testing.assert_array_equal(mesh.faces[0], [0, 1, 2])

    def test_quad_fan_triangulation(self, tmp_path):
        path = tmp_path / "quad.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        mesh = load_mesh_obj(path)
        assert mesh.face_count == 2
        np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3]])

    def test_negative_indices_against_independent_reader(self, tmp_path):
        text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\nv 2 2 0\nf 1 2 -1\n"
        path = tmp_path / "neg.obj"
        path.write_text(text)
        mesh = load_mesh_obj(path)

        # Independent minimal OBJ reader used as the oracle.
        verts, faces = [], []
        for line in text.splitlines():
            parts = line.split()
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                faces.append(idx)
        np.testing.assert_array_equal(mesh.vertices, verts)
        np.testing.assert_array_equal(mesh.faces, faces)

    def test_slash_forms_and_winding(self, tmp_path):
        path = tmp_path / "slash.obj"
        path.write_text(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\nf 3/1/1 2/1/1 1/1/1\n"
        )
        mesh = load_mesh_obj(path)
        np.testing.assert_array_equal(mesh.faces[0], [2, 1, 0])

    def test_out_of_range_index(self, tmp_path):
        path = tmp_path / "range.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
        with pytest.raises(FormatError) as info:
            load_mesh_obj(path)
        assert info.value.line == 4

    def test_non_numeric_coordinate(self, tmp_path):
        path = tmp_path / "nan.obj"
        path.write_text("v 0 zero 0\n")
        with pytest.raises(FormatError) as info:
            load_mesh_obj(path)
        assert info.value.line == 1

    def test_sphere_round_trip_via_text(self, tmp_path):
        mesh = uv_sphere()
        path = tmp_path / "sphere.obj"
        path.write_text(mesh_to_obj_text(mesh))
        loaded = load_mesh_obj(path)
        np.testing.assert_allclose(loaded.vertices, mesh.vertices, atol=1e-15)
        np.testing.assert_array_equal(loaded.faces, mesh.faces)


class TestCameras:
    def write_transforms(self, path, frames, angle=math.pi / 2):
        doc = {"camera_angle_x": angle, "frames": [{"transform_matrix": f} for f in frames]}
        path.write_text(json.dumps(doc))

    def test_focal_from_angle(self, tmp_path):
        path = tmp_path / "transforms.json"
        self.write_transforms(path, [np.eye(4).tolist()], angle=math.pi / 2)
        (cam,) = load_cameras(path, width=800, height=800)
        assert cam.fx == pytest.approx(400.0)

    def test_identity_transform_convention(self, tmp_path):
        path = tmp_path / "transforms.json"
        self.write_transforms(path, [np.eye(4).tolist()])
        (cam,) = load_cameras(path, width=100, height=100)
        # A point in front of the OpenGL camera (-z in file convention) must
        # land at positive depth in the renderer convention.
        point = np.array([0.0, 0.0, -3.0, 1.0])
        cam_space = cam.world_to_camera @ point
        assert cam_space[2] == pytest.approx(3.0)
        np.testing.assert_allclose(cam.position, [0, 0, 0], atol=1e-12)

    def test_hundred_frames(self, tmp_path):
        rng = np.random.default_rng(4)
        frames = []
        for _ in range(100):
            angle = rng.uniform(0, 2 * math.pi)
            c2w = np.eye(4)
            c2w[:3, 3] = (4 * math.cos(angle), 4 * math.sin(angle), 1.0)
            frames.append(c2w.tolist())
        path = tmp_path / "transforms_train.json"
        self.write_transforms(path, frames)
        assert len(load_cameras(path)) == 100

    def test_missing_fields(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text(json.dumps({"frames": []}))
        with pytest.raises(FormatError):
            load_cameras(path)

    def test_syntax_error_has_line(self, tmp_path):
        path = tmp_path / "syntax.json"
        path.write_text('{"camera_angle_x": 1.0,\n  "frames": [}')
        with pytest.raises(FormatError) as info:
            load_cameras(path)
        assert info.value.line == 2


class TestSoupFile:
    def make_soup(self, n=5, coeffs=4, seed=5):
        rng = np.random.default_rng(seed)
        splats = [
            SplatGaussian(rng.uniform(-2, 2, 3), random_unit_quat(rng),
                          (FLAT_SCALE, rng.uniform(0.1, 1), rng.uniform(0.1, 1)),
                          float(rng.uniform(0.2, 1)), rng.normal(size=(coeffs, 3)))
            for _ in range(n)
        ]
        return extract_soup(splats)

    def test_file_round_trip_byte_identical(self, tmp_path):
        soup = self.make_soup()
        first, second = tmp_path / "a.gmsoup", tmp_path / "b.gmsoup"
        save_soup(soup, first)
        save_soup(load_soup(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_empty_soup_is_header_only(self, tmp_path):
        path = tmp_path / "empty.gmsoup"
        save_soup(TriangleSoup(np.zeros((0, 3, 3)), np.zeros(0), np.zeros((0, 1, 3))), path)
        assert path.read_bytes() == b"GMSOUP1\x00" + struct.pack("<I", 0)
        assert len(load_soup(path)) == 0

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.gmsoup"
        path.write_bytes(b"NOTSOUP!" + struct.pack("<I", 0))
        with pytest.raises(FormatError):
            load_soup(path)

    def test_truncated_record(self, tmp_path):
        soup = self.make_soup(n=2)
        path = tmp_path / "trunc.gmsoup"
        save_soup(soup, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError):
            load_soup(path)

    def test_count_verified_against_payload(self, tmp_path):
        soup = self.make_soup(n=2)
        path = tmp_path / "count.gmsoup"
        save_soup(soup, path)
        blob = bytearray(path.read_bytes())
        blob[8:12] = struct.pack("<I", 3)  # claim one more record than present
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            load_soup(path)


class TestBindingsFile:
    def test_round_trip_exact(self, tmp_path):
        scene = bind_uniform(uv_sphere(), k=3, seed=9)
        path = tmp_path / "scene.gmbind"
        save_bindings(scene, path)
        loaded = load_bindings(path)
        assert len(loaded.bindings) == len(scene.bindings)
        assert loaded.mesh.vertices.tobytes() == scene.mesh.vertices.tobytes()
        assert loaded.mesh.faces.tobytes() == scene.mesh.faces.tobytes()
        for a, b in zip(scene.bindings, loaded.bindings):
            assert a.face_index == b.face_index
            assert a.alphas.tobytes() == b.alphas.tobytes()
            assert a.rho == b.rho and a.opacity == b.opacity
            assert a.sh.tobytes() == b.sh.tobytes()

    def test_file_level_byte_identity(self, tmp_path):
        scene = bind_uniform(uv_sphere(), k=2, seed=10)
        first, second = tmp_path / "a.gmbind", tmp_path / "b.gmbind"
        save_bindings(scene, first)
        save_bindings(load_bindings(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_count_matches_k_times_n(self, tmp_path):
        mesh = uv_sphere()
        scene = bind_uniform(mesh, k=4, seed=11)
        path = tmp_path / "kn.gmbind"
        save_bindings(scene, path)
        assert len(load_bindings(path).bindings) == 4 * mesh.face_count

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.gmbind"
        path.write_bytes(b"12345678")
        with pytest.raises(FormatError):
            load_bindings(path)


class TestDeformSpecFile:
    def test_parse_all_step_kinds(self, tmp_path):
        doc = {
            "steps": [
                {"op": "rigid", "rotation": [1, 0, 0, 0], "translation": [1, 2, 3],
                 "pivot": [0, 0, 1], "select": {"indices": [0, 1, 2]}},
                {"op": "scale", "factors": [2, 2, 2], "pivot": [0, 0, 0],
                 "select": {"box": {"min": [-1, -1, -1], "max": [1, 1, 1]}}},
                {"op": "vertex_set", "indices": [3], "positions": [[9, 9, 9]]},
                {"op": "bend", "axis": "z", "along": "x", "rate": 0.25, "pivot": [0, 0, 0]},
            ]
        }
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(doc))
        spec = load_deform_spec(path)
        assert isinstance(spec, DeformSpec)
        assert [type(s) for s in spec.steps] == [RigidStep, ScaleStep, VertexSetStep, BendStep]
        np.testing.assert_array_equal(spec.steps[0].translation, [1, 2, 3])
        assert spec.steps[3].along == "x"

    def test_parse_keyframes(self, tmp_path):
        doc = {
            "keyframes": [
                {"time": 0.0, "steps": []},
                {"time": 1.0, "steps": [{"op": "rigid", "translation": [0, 0, 1]}]},
            ]
        }
        path = tmp_path / "anim.json"
        path.write_text(json.dumps(doc))
        frames = load_deform_spec(path)
        assert isinstance(frames, Keyframes)
        assert frames.times == [0.0, 1.0]

    def test_syntax_error_reports_line_column(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "steps": [\n    {"op": }\n  ]\n}')
        with pytest.raises(FormatError) as info:
            load_deform_spec(path)
        assert info.value.line == 3
        assert info.value.column is not None

    def test_schema_error_reports_path(self, tmp_path):
        path = tmp_path / "schema.json"
        path.write_text(json.dumps({"steps": [{"op": "scale"}]}))
        with pytest.raises(FormatError) as info:
            load_deform_spec(path)
        assert info.value.location == "steps[0]"

    def test_bad_step_values_report_path(self, tmp_path):
        path = tmp_path / "badval.json"
        path.write_text(json.dumps({"steps": [{"op": "scale", "factors": [0, 1, 1]}]}))
        with pytest.raises(FormatError) as info:
            load_deform_spec(path)
        assert "steps[0]" in str(info.value)


class TestLoadScene:
    def test_dispatch(self, tmp_path):
        rng = np.random.default_rng(12)
        ply = tmp_path / "s.ply"
        save_splats(random_splats(rng, 2, coeffs=1), ply)
        kind, splats = load_scene(ply)
        assert kind == "splats" and len(splats) == 2

        soup_path = tmp_path / "s.gmsoup"
        save_soup(TestSoupFile().make_soup(3), soup_path)
        kind, soup = load_scene(soup_path)
        assert kind == "soup" and len(soup) == 3

        bind_path = tmp_path / "s.gmbind"
        save_bindings(bind_uniform(uv_sphere(), 1, 0), bind_path)
        kind, scene = load_scene(bind_path)
        assert kind == "bound" and isinstance(scene, BoundScene)

    def test_unknown_extension(self, tmp_path):
        with pytest.raises(FormatError):
            load_scene(tmp_path / "scene.xyz")
