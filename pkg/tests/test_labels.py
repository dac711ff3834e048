import numpy as np
import pytest
from scipy import stats

from neosynth.labels import (AIR_ID, HEAD_CLASSES, HEAD_TARGET_ID, MERGED_CSF_NAME, GmmError,
                             dhcp_dictionary, fit_gmm_1d, fuse_head_labels, merge_for_eval,
                             subdivide_label)
from neosynth.phantom import head_phantom
from neosynth.volume import Geometry, LabelVolume, ScalarVolume


def _mixture(seed, n=20000, means=(0.2, 0.8), sd=0.02):
    rng = np.random.default_rng(seed)
    comp = rng.integers(len(means), size=n)
    return rng.normal(np.asarray(means)[comp], sd)


class TestGmm:
    def test_posterior_matches_scipy(self):
        x = _mixture(0, 3000, (0.3, 0.5, 0.9), 0.05)
        m = fit_gmm_1d(x, 3)
        dens = np.stack([w * stats.norm.pdf(x, mu, sd) for w, mu, sd in zip(m.weights, m.means, m.stds)], 1)
        np.testing.assert_array_equal(m.predict(x), dens.argmax(1))
        np.testing.assert_allclose(np.exp(m.log_joint(x)), dens, rtol=1e-9)

    def test_sorted_and_normalized(self):
        m = fit_gmm_1d(_mixture(1, means=(0.7, 0.1, 0.4)), 3)
        assert np.all(np.diff(m.means) > 0)
        assert m.weights.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(m.means, [0.1, 0.4, 0.7], atol=0.005)

    def test_loglik_monotone(self):
        m = fit_gmm_1d(_mixture(2), 2)
        assert m.converged
        assert np.all(np.diff(m.log_likelihood) >= -1e-9 * abs(m.log_likelihood[0]))

    def test_collapse_triggers_restart(self):
        # a heavy tie pulls one quantile start onto a single value
        x = np.concatenate([np.zeros(500), np.linspace(0.5, 1.5, 100)])
        m = fit_gmm_1d(x + np.random.default_rng(0).normal(0, 1e-3, x.size), 2)
        assert m.K == 2

    def test_constant_input(self):
        with pytest.raises(GmmError):
            fit_gmm_1d(np.ones(100), 2)

    def test_too_few_values(self):
        with pytest.raises(ValueError):
            fit_gmm_1d(np.arange(5.0), 2)


class TestSubdivide:
    def test_names_ids_and_groups(self, phantom32):
        labels, t2 = phantom32
        sub = subdivide_label(labels, t2, 3, 3)
        new = [i for i in sub.dictionary if i not in labels.dictionary]
        assert new == [100, 101, 102]
        assert [sub.dictionary[i] for i in new] == ["WM_1of3", "WM_2of3", "WM_3of3"]
        assert all(sub.groups["target"][i] == 3 and sub.groups["generation"][i] == i for i in new)
        assert 3 not in sub.present_ids()

    def test_clusters_follow_intensity(self, phantom32):
        labels, t2 = phantom32
        sub, model = subdivide_label(labels, t2, 3, 2, return_model=True)
        lo = t2.values[sub.labels == 100].mean()
        hi = t2.values[sub.labels == 101].mean()
        assert lo < hi
        np.testing.assert_allclose(model.means, [0.6, 0.75], atol=0.01)

    def test_first_id_clash(self, phantom32):
        labels, t2 = phantom32
        with pytest.raises(ValueError, match="in use"):
            subdivide_label(labels, t2, 3, 2, first_id=5)

    @pytest.mark.parametrize("n", [1, 7])
    def test_n_out_of_range(self, phantom32, n):
        with pytest.raises(ValueError):
            subdivide_label(*phantom32, 3, n)

    def test_absent_label(self, phantom32):
        labels, t2 = phantom32
        with pytest.raises(ValueError, match="not present"):
            subdivide_label(labels, t2, 42, 2)


class TestFuse:
    def test_rules(self, phantom32):
        labels, _ = phantom32
        head = head_phantom(labels)
        fused = fuse_head_labels(labels, head)
        brain = ~np.isin(labels.labels, (0, 4))
        np.testing.assert_array_equal(fused.labels[brain], labels.labels[brain])
        ext = ~brain
        hv = head.labels[ext].astype(int)
        np.testing.assert_array_equal(fused.labels[ext], np.where(hv == 0, AIR_ID, hv + 10))
        assert fused.dictionary[HEAD_TARGET_ID] == "head"
        assert fused.dictionary[AIR_ID] == "air"
        for k, name in enumerate(HEAD_CLASSES):
            assert fused.groups["target"][11 + k] == HEAD_TARGET_ID

    def test_target_projection(self, phantom32):
        labels, _ = phantom32
        fused = fuse_head_labels(labels, head_phantom(labels)).project("target")
        assert set(fused.present_ids()) <= set(range(1, 11)) - {4}

    def test_bad_head_ids(self, phantom32):
        labels, _ = phantom32
        bad = LabelVolume(labels.geometry, np.full(labels.labels.shape, 12, np.uint8))
        with pytest.raises(ValueError):
            fuse_head_labels(labels, bad)


class TestMerge:
    def test_merge(self, phantom32):
        labels, _ = phantom32
        m = merge_for_eval(labels)
        assert m.dictionary[1] == MERGED_CSF_NAME and 5 not in m.dictionary
        np.testing.assert_array_equal(m.labels == 1, np.isin(labels.labels, (1, 5)))

    def test_idempotent(self, phantom32):
        m = merge_for_eval(phantom32[0])
        assert merge_for_eval(m) is m

    def test_missing_ids(self):
        lab = LabelVolume(Geometry.from_spacing((2, 2, 2)), np.zeros((2, 2, 2), np.uint8), {0: "bg"})
        with pytest.raises(ValueError):
            merge_for_eval(lab)

    def test_dictionary(self):
        assert dhcp_dictionary()[9] == "HipAmy"
