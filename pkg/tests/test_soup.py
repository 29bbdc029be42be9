import numpy as np
import pytest

from meshsplat.core import (
    FLAT_SCALE,
    OrientedTriangle,
    SplatBatch,
    SplatGaussian,
    covariance_from_rs,
    quat_to_matrix,
)
from meshsplat.errors import DegenerateGeometryError, SoupExtractionError, ValidationError
from meshsplat.soup import (
    SoupAttrs,
    TriangleSoup,
    extract_soup,
    gaussian_to_triangle,
    realize_soup,
    realize_soup_batch,
    triangle_to_gaussian,
)


def random_unit_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_flat_splat(rng, lo=0.01, hi=10.0):
    return SplatGaussian(
        mean=rng.uniform(-10, 10, 3),
        rotation=random_unit_quat(rng),
        scale=(FLAT_SCALE, rng.uniform(lo, hi), rng.uniform(lo, hi)),
        opacity=float(rng.uniform()),
        sh=rng.normal(size=(4, 3)),
    )


class TestGaussianToTriangle:
    def test_identity_rotation(self):
        g = SplatGaussian((0, 0, 0), (1, 0, 0, 0), (FLAT_SCALE, 1, 1), 1.0, np.zeros((1, 3)))
        t = gaussian_to_triangle(g)
        np.testing.assert_allclose(t.v1, [0, 0, 0], atol=1e-15)
        np.testing.assert_allclose(t.v2, [0, 1, 0], atol=1e-15)
        np.testing.assert_allclose(t.v3, [0, 0, 1], atol=1e-15)

    def test_translation(self):
        g = SplatGaussian((5, 5, 5), (1, 0, 0, 0), (FLAT_SCALE, 1, 1), 1.0, np.zeros((1, 3)))
        t = gaussian_to_triangle(g)
        np.testing.assert_allclose(t.v1, [5, 5, 5], atol=1e-15)
        np.testing.assert_allclose(t.v2, [5, 6, 5], atol=1e-15)
        np.testing.assert_allclose(t.v3, [5, 5, 6], atol=1e-15)

    def test_edge_measurements(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            g = random_flat_splat(rng)
            t = gaussian_to_triangle(g)
            s2, s3 = g.scale[1], g.scale[2]
            assert np.linalg.norm(t.v2 - t.v1) == pytest.approx(s2, rel=1e-12)
            # Perpendicular extent of v3 above the v1->v2 edge direction.
            edge = (t.v2 - t.v1) / np.linalg.norm(t.v2 - t.v1)
            offset = t.v3 - t.v1
            perp = offset - (offset @ edge) * edge
            assert np.linalg.norm(perp) == pytest.approx(s3, rel=1e-12)

    def test_rejects_non_flat(self):
        g = SplatGaussian((0, 0, 0), (1, 0, 0, 0), (0.5, 1, 1), 1.0, np.zeros((1, 3)))
        with pytest.raises(ValidationError):
            gaussian_to_triangle(g)

    def test_rejects_sliver(self):
        g = SplatGaussian((0, 0, 0), (1, 0, 0, 0), (FLAT_SCALE, FLAT_SCALE * 5, 1), 1.0, np.zeros((1, 3)))
        with pytest.raises(DegenerateGeometryError):
            gaussian_to_triangle(g)


class TestTriangleToGaussian:
    def test_hand_computed(self):
        t = OrientedTriangle((0, 0, 0), (2, 0, 0), (0, 3, 0))
        g = triangle_to_gaussian(t, SoupAttrs(0.7, np.zeros((1, 3))))
        np.testing.assert_array_equal(g.mean, [0, 0, 0])
        rot = g.rotation_matrix
        np.testing.assert_allclose(rot[:, 0], [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(rot[:, 1], [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(rot[:, 2], [0, 1, 0], atol=1e-12)
        np.testing.assert_allclose(g.scale, [FLAT_SCALE, 2, 3], atol=1e-15)
        assert g.opacity == 0.7

    def test_mean_is_first_vertex(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            v = rng.normal(size=(3, 3))
            try:
                t = OrientedTriangle(v[0], v[1], v[2])
            except DegenerateGeometryError:
                continue
            g = triangle_to_gaussian(t, SoupAttrs(1.0, np.zeros((1, 3))))
            np.testing.assert_array_equal(g.mean, t.v1)

    def test_basis_orthonormal(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            v = rng.normal(size=(3, 3)) * 3
            try:
                t = OrientedTriangle(v[0], v[1], v[2])
            except DegenerateGeometryError:
                continue
            rot = triangle_to_gaussian(t, SoupAttrs(1.0, np.zeros((1, 3)))).rotation_matrix
            assert abs(rot[:, 1] @ rot[:, 2]) <= 1e-12
            assert np.linalg.norm(rot[:, 2]) == pytest.approx(1.0, abs=1e-12)
            assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-9)

    def test_scales_match_edge_and_height(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            v = rng.normal(size=(3, 3)) * 2
            try:
                t = OrientedTriangle(v[0], v[1], v[2])
            except DegenerateGeometryError:
                continue
            g = triangle_to_gaussian(t, SoupAttrs(1.0, np.zeros((1, 3))))
            edge = np.linalg.norm(t.v2 - t.v1)
            direction = (t.v2 - t.v1) / edge
            offset = t.v3 - t.v1
            height = np.linalg.norm(offset - (offset @ direction) * direction)
            assert g.scale[1] == pytest.approx(edge, rel=1e-12)
            assert g.scale[2] == pytest.approx(height, rel=1e-12)


class TestExtractRealizeRoundTrip:
    def test_empty(self):
        soup = extract_soup([])
        assert len(soup) == 0
        assert realize_soup(soup) == []

    def test_cardinality(self):
        rng = np.random.default_rng(5)
        gaussians = [random_flat_splat(rng) for _ in range(17)]
        assert len(extract_soup(gaussians)) == 17

    def test_round_trip_fidelity(self):
        rng = np.random.default_rng(6)
        gaussians = [random_flat_splat(rng) for _ in range(1000)]
        back = realize_soup(extract_soup(gaussians))
        for orig, rec in zip(gaussians, back):
            np.testing.assert_array_equal(rec.mean, orig.mean)
            cov_o, cov_r = orig.covariance, rec.covariance
            rel = np.linalg.norm(cov_r - cov_o) / np.linalg.norm(cov_o)
            assert rel <= 1e-9
            assert rec.opacity == orig.opacity
            assert rec.sh.tobytes() == orig.sh.tobytes()

    def test_auto_flattens_non_flat_input(self):
        rng = np.random.default_rng(7)
        g = SplatGaussian(rng.normal(size=3), random_unit_quat(rng), (0.4, 1.0, 2.0),
                          0.5, np.zeros((1, 3)))
        soup = extract_soup([g])
        assert len(soup) == 1

    def test_rigid_equivariance(self):
        rng = np.random.default_rng(8)
        gaussians = [random_flat_splat(rng) for _ in range(50)]
        q = random_unit_quat(rng)
        rot = quat_to_matrix(q)
        shift = rng.normal(size=3)
        moved = [g.transformed(rotation=q, translation=shift) for g in gaussians]
        soup_then_move = extract_soup(gaussians).triangle_array @ rot.T + shift
        move_then_soup = extract_soup(moved).triangle_array
        np.testing.assert_allclose(move_then_soup, soup_then_move, atol=1e-9)

    def test_degenerate_raises_with_indices(self):
        rng = np.random.default_rng(9)
        good = [random_flat_splat(rng) for _ in range(3)]
        bad = SplatGaussian((0, 0, 0), (1, 0, 0, 0), (FLAT_SCALE, FLAT_SCALE, 1.0),
                            1.0, np.zeros((1, 3)))
        with pytest.raises(SoupExtractionError) as info:
            extract_soup([good[0], bad, good[1], bad, good[2]])
        assert info.value.indices == [1, 3]

    def test_skip_flag_drops_offenders(self):
        rng = np.random.default_rng(10)
        good = [random_flat_splat(rng) for _ in range(3)]
        bad = SplatGaussian((0, 0, 0), (1, 0, 0, 0), (FLAT_SCALE, FLAT_SCALE, 1.0),
                            1.0, np.zeros((1, 3)))
        soup = extract_soup([bad, good[0], bad, good[1], good[2]], skip_degenerate=True)
        assert len(soup) == 3

    def test_soup_translation_moves_means(self):
        rng = np.random.default_rng(11)
        soup = extract_soup([random_flat_splat(rng) for _ in range(5)])
        moved = soup.with_triangle_array(soup.triangle_array + np.array([1.0, 2.0, 3.0]))
        for a, b in zip(realize_soup(soup), realize_soup(moved)):
            np.testing.assert_allclose(b.mean, a.mean + [1, 2, 3], atol=1e-15)


class TestRealizeSoupBatch:
    def test_matches_per_element(self):
        rng = np.random.default_rng(12)
        soup = extract_soup([random_flat_splat(rng) for _ in range(64)])
        batch = realize_soup_batch(soup)
        singles = realize_soup(soup)
        assert len(batch) == len(singles)
        for i, g in enumerate(singles):
            np.testing.assert_allclose(batch.means[i], g.mean, atol=1e-15)
            np.testing.assert_allclose(batch.rotations[i], g.rotation, atol=1e-12)
            np.testing.assert_allclose(batch.scales[i], g.scale, atol=1e-12)

    def test_empty(self):
        assert len(realize_soup_batch(TriangleSoup.from_triangles([], []))) == 0


class TestTriangleSoupType:
    def test_length_mismatch_rejected(self):
        t = OrientedTriangle((0, 0, 0), (1, 0, 0), (0, 1, 0))
        with pytest.raises(ValidationError):
            TriangleSoup.from_triangles([t], [])

    def test_rejects_degenerate_triangle_array(self):
        tri = np.zeros((1, 3, 3))
        tri[0] = [(0, 0, 0), (1, 0, 0), (2, 0, 0)]
        with pytest.raises(DegenerateGeometryError):
            TriangleSoup(tri, np.ones(1), np.zeros((1, 1, 3)))
