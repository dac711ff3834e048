"""Intensity synthesis from label maps.

Each label draws a Gaussian intensity; a smooth multiplicative field and
additive noise are layered on top.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .volume import Geometry, LabelVolume, ScalarVolume

__all__ = [
    "ContrastPrior",
    "BiasFieldSpec",
    "NoiseSpec",
    "labels_to_image",
    "sample_bias_field",
    "bias_field",
    "bias_monomials",
    "add_noise",
    "minmax_normalize",
]


def _range(r, name, lo_min=None):
    lo, hi = (float(v) for v in r)
    if lo > hi:
        raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
    if lo_min is not None and lo < lo_min:
        raise ValueError(f"{name}: lower bound must be >= {lo_min}")
    return (lo, hi)


@dataclass(frozen=True)
class ContrastPrior:
    mean_range: tuple[float, float] = (0.0, 1.0)
    std_range: tuple[float, float] = (0.02, 0.1)

    def __post_init__(self):
        object.__setattr__(self, "mean_range", _range(self.mean_range, "mean_range"))
        std = _range(self.std_range, "std_range", lo_min=0.0)
        if std[0] <= 0:
            raise ValueError("std_range: lower bound must be > 0")
        object.__setattr__(self, "std_range", std)


@dataclass(frozen=True)
class BiasFieldSpec:
    order: int = 3
    magnitude: float = 0.5

    def __post_init__(self):
        if int(self.order) < 0 or self.magnitude < 0:
            raise ValueError("bias field order and magnitude must be non-negative")
        object.__setattr__(self, "order", int(self.order))
        object.__setattr__(self, "magnitude", float(self.magnitude))


@dataclass(frozen=True)
class NoiseSpec:
    std_range: tuple[float, float] = (5e-3, 0.1)
    mean: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "std_range", _range(self.std_range, "std_range", lo_min=0.0))
        if self.mean != 0:
            raise ValueError("noise mean is fixed at 0")


def labels_to_image(labels: LabelVolume, prior: ContrastPrior = ContrastPrior(), seed=None):
    """Draw one Gaussian per generation-group id and fill its voxels.

    Returns ``(image, params)`` where ``params`` maps each generation id to
    its drawn ``(mean, std)``. Ids are visited in ascending order so the draws
    only depend on the seed and the set of ids present.
    """
    rng = np.random.default_rng(seed)
    lut = labels.group_lut("generation")
    gen = lut[labels.labels]
    ids = np.unique(gen)
    if ids.size == 0:
        raise ValueError("empty label map")
    means = np.zeros(int(ids.max()) + 1)
    stds = np.zeros_like(means)
    params = {}
    for i in ids:
        mu = rng.uniform(*prior.mean_range)
        sigma = rng.uniform(*prior.std_range)
        means[i], stds[i] = mu, sigma
        params[int(i)] = (float(mu), float(sigma))
    noise = rng.standard_normal(gen.shape, dtype=np.float32)
    values = means[gen].astype(np.float32) + stds[gen].astype(np.float32) * noise
    return ScalarVolume(labels.geometry, values), params


def bias_monomials(order: int) -> list[tuple[int, int, int]]:
    return [
        (i, j, k)
        for i in range(order + 1)
        for j in range(order + 1 - i)
        for k in range(order + 1 - i - j)
    ]


def _normalized_axis(n: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1)


def bias_field(geom: Geometry, coefficients, order: int) -> ScalarVolume:
    """Evaluate ``exp(sum c_ijk u^i v^j w^k)`` on normalized voxel coordinates."""
    terms = bias_monomials(order)
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.shape != (len(terms),):
        raise ValueError(f"expected {len(terms)} coefficients for order {order}")
    u, v, w = (_normalized_axis(n) for n in geom.dims)
    # contract w first, then v, then u to keep temporaries small
    log_field = np.zeros(geom.dims)
    upow = [u**p for p in range(order + 1)]
    vpow = [v**p for p in range(order + 1)]
    wpow = [w**p for p in range(order + 1)]
    for i in range(order + 1):
        plane = np.zeros(geom.dims[1:])
        for j in range(order + 1 - i):
            line = np.zeros(geom.dims[2])
            for k in range(order + 1 - i - j):
                line += coefficients[terms.index((i, j, k))] * wpow[k]
            plane += np.outer(vpow[j], line)
        log_field += upow[i][:, None, None] * plane[None]
    return ScalarVolume(geom, np.exp(log_field).astype(np.float32))


def sample_bias_field(geom: Geometry, spec: BiasFieldSpec = BiasFieldSpec(), seed=None,
                      return_coefficients: bool = False):
    """Random smooth multiplicative field; coefficients are U[-magnitude, magnitude]."""
    rng = np.random.default_rng(seed)
    n = len(bias_monomials(spec.order))
    coefficients = rng.uniform(-spec.magnitude, spec.magnitude, size=n)
    field = bias_field(geom, coefficients, spec.order)
    if return_coefficients:
        return field, coefficients
    return field


def add_noise(img: ScalarVolume, spec: NoiseSpec = NoiseSpec(), seed=None,
              return_sigma: bool = False):
    rng = np.random.default_rng(seed)
    sigma = float(rng.uniform(*spec.std_range))
    noise = rng.standard_normal(img.values.shape, dtype=np.float32)
    out = ScalarVolume(img.geometry, img.values + np.float32(sigma) * noise)
    if return_sigma:
        return out, sigma
    return out


def minmax_normalize(img: ScalarVolume) -> ScalarVolume:
    v = img.values.astype(np.float64)
    lo, hi = v.min(), v.max()
    if not hi > lo:
        raise ValueError("cannot normalize a constant image")
    if lo == 0.0 and hi == 1.0:
        return ScalarVolume(img.geometry, img.values.astype(np.float32, copy=True))
    return ScalarVolume(img.geometry, ((v - lo) / (hi - lo)).astype(np.float32))


def n_bias_terms(order: int) -> int:
    return math.comb(order + 3, 3)
