import numpy as np
import pytest

from neosynth.surfaces import (MeshError, TriangleMesh, gm_from_surfaces, icosphere, read_mesh,
                               splice_gm, voxelize_pv, write_off)
from neosynth.volume import Geometry, LabelVolume, ScalarVolume

BOX_FACES = [(0, 2, 1), (0, 3, 2), (4, 5, 6), (4, 6, 7), (0, 1, 5), (0, 5, 4),
             (2, 3, 7), (2, 7, 6), (1, 2, 6), (1, 6, 5), (0, 4, 7), (0, 7, 3)]


def box(lo, hi):
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    v = [(x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0),
         (x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1)]
    return TriangleMesh(np.array(v, float), np.array(BOX_FACES))


class TestMesh:
    def test_box_closed_and_volume(self):
        m = box((0, 0, 0), (2, 3, 4))
        m.check_closed()
        assert abs(m.signed_volume()) == pytest.approx(24.0)

    def test_open_mesh_rejected(self):
        m = box((0, 0, 0), (1, 1, 1))
        with pytest.raises(MeshError, match="edge"):
            TriangleMesh(m.vertices, m.faces[:-1]).check_closed()

    def test_icosphere_volume_converges(self):
        s = icosphere(10.0, subdivisions=4)
        s.check_closed()
        assert abs(s.signed_volume()) == pytest.approx(4 / 3 * np.pi * 1000, rel=0.01)

    def test_off_roundtrip(self, tmp_path):
        m = icosphere(3.0, (1, 2, 3), subdivisions=1)
        write_off(m, tmp_path / "s.off")
        back = read_mesh(str(tmp_path / "s.off"))
        np.testing.assert_allclose(back.vertices, m.vertices)
        np.testing.assert_array_equal(back.faces, m.faces)

    def test_unknown_extension(self, tmp_path):
        with pytest.raises(MeshError):
            read_mesh(str(tmp_path / "x.stl"))


class TestVoxelize:
    def test_box_on_voxel_faces_is_exact(self):
        geom = Geometry.from_spacing((12, 12, 12))
        pv = voxelize_pv(box((2.5, 3.5, 1.5), (7.5, 5.5, 9.5)), geom, supersample=3).values
        expected = np.zeros(geom.dims)
        expected[3:8, 4:6, 2:10] = 1.0
        np.testing.assert_array_equal(pv, expected)

    def test_box_partial_fraction(self):
        # x extent covers half of the voxels on either side
        geom = Geometry.from_spacing((10, 10, 10))
        pv = voxelize_pv(box((2.0, 2.5, 2.5), (6.0, 5.5, 5.5)), geom, supersample=4).values
        np.testing.assert_allclose(pv[2, 3:6, 3:6], 0.5)
        np.testing.assert_allclose(pv[3:6, 3:6, 3:6], 1.0)
        assert pv.sum() == pytest.approx(36.0)

    def test_world_affine(self):
        geom = Geometry.from_spacing((10, 10, 10), (2.0, 1.0, 0.5), origin=(-10, 0, 5))
        m = box((-7.0, 2.5, 6.25), (1.0, 6.5, 8.25))
        pv = voxelize_pv(m, geom, supersample=2).values
        assert pv.sum() * geom.voxel_volume == pytest.approx(abs(m.signed_volume()))

    def test_sphere_matches_mesh_volume(self):
        geom = Geometry.from_spacing((30, 30, 30), origin=(-14.5,) * 3)
        s = icosphere(10.0, subdivisions=3)
        pv = voxelize_pv(s, geom, supersample=4).values
        assert pv.sum() == pytest.approx(abs(s.signed_volume()), rel=0.01)
        assert pv.min() >= 0 and pv.max() <= 1

    def test_orientation_does_not_matter(self):
        geom = Geometry.from_spacing((16, 16, 16), origin=(-7.5,) * 3)
        s = icosphere(5.0, subdivisions=2)
        flipped = TriangleMesh(s.vertices, s.faces[:, ::-1])
        np.testing.assert_array_equal(voxelize_pv(s, geom).values, voxelize_pv(flipped, geom).values)

    def test_outside_grid_is_empty(self):
        geom = Geometry.from_spacing((5, 5, 5))
        assert voxelize_pv(box((20, 20, 20), (22, 22, 22)), geom).values.sum() == 0


class TestGm:
    def test_shell(self):
        geom = Geometry.from_spacing((40, 40, 40), origin=(-19.5,) * 3)
        white, pial = icosphere(10.0), icosphere(15.0)
        gm, clamped = gm_from_surfaces(white, pial, geom, return_clamped=True)
        assert clamped == 0
        shell = abs(pial.signed_volume()) - abs(white.signed_volume())
        assert gm.values.sum() == pytest.approx(shell, rel=0.01)

    def test_crossing_surfaces_are_clamped(self):
        geom = Geometry.from_spacing((20, 20, 20), origin=(-9.5,) * 3)
        gm, clamped = gm_from_surfaces(icosphere(6.0), icosphere(4.0), geom, return_clamped=True)
        assert clamped > 0 and gm.values.min() == 0.0


def test_splice_rules():
    geom = Geometry.from_spacing((1, 1, 6))
    base = LabelVolume(geom, np.array([[[2, 2, 3, 1, 7, 2]]], np.uint8),
                       {1: "CSF", 2: "GM", 3: "WM", 7: "deepGM"})
    gm = ScalarVolume(geom, np.array([[[0.0, 0.9, 0.9, 0.9, 0.9, 0.0]]]))
    white = ScalarVolume(geom, np.array([[[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]]]))
    out = splice_gm(base, gm, white).labels.ravel().tolist()
    # freed GM: WM inside white, CSF outside; deepGM is never overwritten
    assert out == [3, 2, 2, 2, 7, 1]
