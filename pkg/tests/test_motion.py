import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neosynth.motion import MotionSpec, MotionTrajectory, center_line, corrupt, sample_trajectory
from neosynth.volume import RigidTransform, apply_rigid

from conftest import smooth_volume


def _kspace_oracle(images, bounds, axis):
    """Assemble k-space line by line; line i holds frequency i - n//2."""
    spectra = [np.fft.fftn(im.astype(np.float64)) for im in images]
    n = images[0].shape[axis]
    out = np.zeros_like(spectra[0])
    for spec, (a, b) in zip(spectra, bounds):
        for line in range(a, b):
            idx = [slice(None)] * 3
            idx[axis] = (line - n // 2) % n
            out[tuple(idx)] = spec[tuple(idx)]
    return np.abs(np.fft.ifftn(out))


class TestTrajectory:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(8, 200))
    def test_demeaned_centre_segment_is_identity(self, seed, n):
        t = sample_trajectory(MotionSpec(), n, seed)
        assert t.pose_of_line(center_line(n)).is_identity()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_peak_norms_hit_drawn_maxima(self, seed):
        t = sample_trajectory(MotionSpec(), 64, seed)
        assert 3.0 <= t.max_translation_mm <= 8.0 and 3.0 <= t.max_rotation_deg <= 8.0
        tn = max(np.linalg.norm(p.translation) for p in t.poses)
        rn = max(np.linalg.norm(p.rotation) for p in t.poses)
        assert tn == pytest.approx(t.max_translation_mm)
        assert rn == pytest.approx(t.max_rotation_deg)

    def test_event_count(self):
        counts = {len(sample_trajectory(MotionSpec(), 64, s).poses) - 1 for s in range(60)}
        assert counts == {1, 2, 3}

    def test_segments_cover_all_lines(self):
        t = sample_trajectory(MotionSpec(), 50, 7)
        seg = t.segment_lines()
        assert seg[0][0] == 0 and seg[-1][1] == 50
        assert all(b == c for (_, b), (c, _) in zip(seg, seg[1:]))

    def test_dict_roundtrip(self):
        t = sample_trajectory(MotionSpec(), 40, 11)
        assert MotionTrajectory.from_dict(t.to_dict()) == t

    def test_without_demean_first_segment_is_identity(self):
        t = sample_trajectory(MotionSpec(demean=False), 40, 2)
        assert t.poses[0].is_identity()

    @pytest.mark.parametrize("kw", [dict(translation_max_range_mm=(5, 1)), dict(n_events_range=(0, 2)),
                                    dict(phase_axis=3)])
    def test_spec_validation(self, kw):
        with pytest.raises(ValueError):
            MotionSpec(**kw)

    def test_bad_fractions(self):
        with pytest.raises(ValueError):
            MotionTrajectory((0.0, 0.5, 0.5), (RigidTransform(),) * 3, 10)


class TestCorrupt:
    def test_two_translated_segments_match_line_oracle(self):
        vol = smooth_volume((16, 18, 14), seed=4)
        shift = (0.0, 3.0, -2.0)
        traj = MotionTrajectory((0.0, 0.4), (RigidTransform(), RigidTransform(shift)), 18)
        moved = np.roll(vol.values, (3, -2), axis=(1, 2))
        expected = _kspace_oracle([vol.values, moved], traj.segment_lines(), 1)
        np.testing.assert_allclose(corrupt(vol, traj).values, expected, atol=1e-5)

    @pytest.mark.parametrize("axis", [0, 2])
    def test_other_phase_axes(self, axis):
        vol = smooth_volume((15, 12, 13), seed=1)
        n = vol.values.shape[axis]
        shift = np.zeros(3)
        shift[(axis + 1) % 3] = 2.0
        traj = MotionTrajectory((0.0, 0.3, 0.7), (RigidTransform(), RigidTransform(tuple(shift)),
                                                   RigidTransform()), n, axis)
        moved = np.roll(vol.values, 2, axis=(axis + 1) % 3)
        expected = _kspace_oracle([vol.values, moved, vol.values], traj.segment_lines(), axis)
        np.testing.assert_allclose(corrupt(vol, traj).values, expected, atol=1e-5)

    def test_static_rotation_equals_image_rotation(self):
        vol = smooth_volume((20, 20, 20), seed=2, pad=4)
        pose = RigidTransform((0, 0, 0), (0.0, 0.0, 10.0))
        out = corrupt(vol, MotionTrajectory.static(20, pose))
        np.testing.assert_allclose(out.values, apply_rigid(vol, pose).values, atol=1e-5)

    def test_motion_changes_image(self):
        vol = smooth_volume((24, 24, 24), seed=3, pad=4)
        out = corrupt(vol, sample_trajectory(MotionSpec(), 24, 0))
        assert np.abs(out.values - vol.values).max() > 1e-3

    def test_large_rotation_keeps_energy(self):
        vol = smooth_volume((32, 32, 32), seed=5, pad=6)
        traj = MotionTrajectory((0.0, 0.5), (RigidTransform(), RigidTransform((0, 0, 0), (0.0, 0.0, 25.0))), 32)
        out = corrupt(vol, traj).values.astype(np.float64)
        e_in = np.sum(vol.values.astype(np.float64) ** 2)
        assert np.abs(out - vol.values).max() > 1e-2
        assert abs(np.sum(out**2) / e_in - 1) < 0.25

    def test_line_count_mismatch(self, smooth):
        with pytest.raises(ValueError, match="lines"):
            corrupt(smooth, MotionTrajectory.static(10))
