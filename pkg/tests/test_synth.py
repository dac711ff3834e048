import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neosynth.synth import (BiasFieldSpec, ContrastPrior, NoiseSpec, add_noise, bias_field,
                            bias_monomials, labels_to_image, minmax_normalize, n_bias_terms,
                            sample_bias_field)
from neosynth.volume import Geometry, LabelVolume, ScalarVolume


def _two_labels(n=16):
    lab = np.zeros((n,) * 3, np.uint8)
    lab[: n // 2] = 1
    lab[n // 2 :] = 2
    return LabelVolume(Geometry.from_spacing(lab.shape), lab)


class TestContrast:
    def test_each_label_gets_its_own_gaussian(self):
        img, params = labels_to_image(_two_labels(32), seed=3)
        assert set(params) == {1, 2}
        for i, half in ((1, slice(0, 16)), (2, slice(16, 32))):
            mu, sd = params[i]
            v = img.values[half].astype(np.float64)
            assert abs(v.mean() - mu) < 5 * sd / np.sqrt(v.size)
            assert abs(v.std() - sd) < 0.05 * sd

    def test_generation_group_shares_one_draw(self):
        base = _two_labels()
        merged = LabelVolume(base.geometry, base.labels, base.dictionary,
                             {"generation": {1: 1, 2: 1}})
        img, params = labels_to_image(merged, seed=0)
        assert list(params) == [1]

    def test_draws_within_prior(self):
        prior = ContrastPrior((0.2, 0.3), (0.01, 0.02))
        for seed in range(10):
            _, params = labels_to_image(_two_labels(8), prior, seed)
            for mu, sd in params.values():
                assert 0.2 <= mu <= 0.3 and 0.01 <= sd <= 0.02

    def test_seeded(self):
        a, _ = labels_to_image(_two_labels(8), seed=5)
        b, _ = labels_to_image(_two_labels(8), seed=5)
        np.testing.assert_array_equal(a.values, b.values)

    @pytest.mark.parametrize("mean_range,std_range", [((1, 0), (0.1, 0.2)), ((0, 1), (0.0, 0.1)),
                                                      ((0, 1), (0.2, 0.1))])
    def test_rejects_bad_prior(self, mean_range, std_range):
        with pytest.raises(ValueError):
            ContrastPrior(mean_range, std_range)


class TestBias:
    def test_term_count(self):
        assert len(bias_monomials(3)) == n_bias_terms(3) == 20
        assert len(bias_monomials(0)) == 1

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-0.5, 0.5), min_size=20, max_size=20))
    def test_corner_values(self, coeffs):
        geom = Geometry.from_spacing((5, 6, 7))
        f = bias_field(geom, coeffs, 3).values.astype(np.float64)
        terms = bias_monomials(3)
        # (-1, -1, -1) corner: every monomial evaluates to (-1)^(i+j+k)
        low = np.exp(sum(c * (-1) ** sum(t) for c, t in zip(coeffs, terms)))
        high = np.exp(sum(coeffs))
        assert f[0, 0, 0] == pytest.approx(low, rel=1e-5)
        assert f[-1, -1, -1] == pytest.approx(high, rel=1e-5)

    def test_matches_direct_polynomial(self):
        geom = Geometry.from_spacing((4, 5, 6))
        rng = np.random.default_rng(1)
        c = rng.uniform(-0.5, 0.5, 20)
        u, v, w = np.meshgrid(*(np.linspace(-1, 1, n) for n in geom.dims), indexing="ij")
        direct = np.exp(sum(ci * u**i * v**j * w**k for ci, (i, j, k) in zip(c, bias_monomials(3))))
        np.testing.assert_allclose(bias_field(geom, c, 3).values, direct, rtol=1e-5)

    def test_sampled_field_is_positive_and_bounded(self):
        geom = Geometry.from_spacing((16, 16, 16))
        f, c = sample_bias_field(geom, BiasFieldSpec(3, 0.5), seed=2, return_coefficients=True)
        assert np.all(np.abs(c) <= 0.5)
        assert f.values.min() > 0
        assert f.values.max() <= np.exp(20 * 0.5) * 1.0001

    def test_zero_magnitude_is_flat(self):
        f = sample_bias_field(Geometry.from_spacing((4, 4, 4)), BiasFieldSpec(3, 0.0), seed=0)
        np.testing.assert_array_equal(f.values, 1.0)

    def test_wrong_coefficient_count(self):
        with pytest.raises(ValueError):
            bias_field(Geometry.from_spacing((2, 2, 2)), np.zeros(10), 3)


class TestNoiseAndNormalize:
    def test_noise_sigma(self):
        img = ScalarVolume(Geometry.from_spacing((40, 40, 40)), np.zeros((40,) * 3, np.float32))
        out, sigma = add_noise(img, NoiseSpec((0.05, 0.1)), seed=0, return_sigma=True)
        assert 0.05 <= sigma <= 0.1
        assert out.values.std() == pytest.approx(sigma, rel=0.02)
        assert abs(out.values.mean()) < 5 * sigma / 40**1.5

    def test_nonzero_mean_rejected(self):
        with pytest.raises(ValueError):
            NoiseSpec(mean=0.1)

    def test_minmax(self, smooth):
        out = minmax_normalize(smooth.with_values(smooth.values * 7 - 3))
        assert out.values.min() == 0.0 and out.values.max() == 1.0
        np.testing.assert_allclose(out.values, smooth.values, atol=1e-6)

    def test_minmax_idempotent(self, smooth):
        once = minmax_normalize(smooth)
        np.testing.assert_array_equal(minmax_normalize(once).values, once.values)

    def test_constant_image_rejected(self):
        img = ScalarVolume(Geometry.from_spacing((2, 2, 2)), np.ones((2, 2, 2), np.float32))
        with pytest.raises(ValueError, match="constant"):
            minmax_normalize(img)
