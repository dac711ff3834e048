"""Label-map editing on top of the dHCP tissue vocabulary.

WM is split into intensity clusters with a hand-rolled 1D EM fit. Head
tissue can be wrapped around a brain map, and ventricles folded into CSF
for scoring.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .volume import LabelVolume, ScalarVolume

log = logging.getLogger(__name__)

__all__ = [
    "DHCP_LABELS",
    "HEAD_CLASSES",
    "HEAD_TARGET_ID",
    "dhcp_dictionary",
    "GmmModel",
    "GmmError",
    "fit_gmm_1d",
    "gmm_log_density",
    "subdivide_label",
    "fuse_head_labels",
    "merge_for_eval",
]

# drawem9 tissue ids; 0 is unlabeled space outside the brain mask
DHCP_LABELS = {
    0: "Unlabeled",
    1: "CSF",
    2: "GM",
    3: "WM",
    4: "Background",
    5: "Ventricles",
    6: "Cereb",
    7: "deepGM",
    8: "Bstem",
    9: "HipAmy",
}
CSF, GM, WM, BACKGROUND, VENTRICLES, CEREB, DEEP_GM, BSTEM, HIPAMY = range(1, 10)
BRAIN_BACKGROUND_IDS = (0, BACKGROUND)

HEAD_CLASSES = ("dura", "air", "eyes", "mucosa", "muscle", "nerves", "skin", "skull", "vessel")
HEAD_TARGET_ID = 10
HEAD_ID_OFFSET = 10  # head class k (1-based in the head map) becomes id 10 + k
AIR_ID = HEAD_ID_OFFSET + 1 + HEAD_CLASSES.index("air")

MERGED_CSF_NAME = "CSF+Ventricles"


def dhcp_dictionary() -> dict[int, str]:
    return dict(DHCP_LABELS)


class GmmError(RuntimeError):
    pass


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    log_likelihood: list[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False

    @property
    def K(self) -> int:
        return len(self.means)

    def log_joint(self, x) -> np.ndarray:
        """``log w_k + log N(x | mu_k, sd_k)``, shape ``(n, K)``."""
        return gmm_log_density(np.asarray(x, dtype=np.float64), self.weights, self.means, self.stds)

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.log_joint(x), axis=1)


def gmm_log_density(x, weights, means, stds) -> np.ndarray:
    z = (x[:, None] - means[None, :]) / stds[None, :]
    return np.log(weights)[None, :] - 0.5 * z**2 - np.log(stds)[None, :] - 0.5 * np.log(2 * np.pi)


def _em(x, means, stds, weights, tol, max_iter, floor):
    history = []
    prev = None
    converged = False
    n = x.size
    for it in range(max_iter):
        lj = gmm_log_density(x, weights, means, stds)
        norm = logsumexp(lj, axis=1)
        ll = float(norm.sum())
        history.append(ll)
        if prev is not None and abs(ll - prev) <= tol * abs(prev):
            converged = True
            break
        prev = ll
        resp = np.exp(lj - norm[:, None])
        nk = resp.sum(axis=0)
        if np.any(nk <= 0):
            raise GmmError("empty component")
        weights = nk / n
        means = (resp * x[:, None]).sum(axis=0) / nk
        var = (resp * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / nk
        stds = np.sqrt(var)
        if np.any(stds < floor):
            raise GmmError("component collapse")
    return weights, means, stds, history, it + 1, converged


def fit_gmm_1d(values, K: int, tol: float = 1e-6, max_iter: int = 200, seed=0,
               max_restarts: int = 5) -> GmmModel:
    """Fit a K-component 1D Gaussian mixture by EM.

    The first attempt starts from quantile-spaced means with a shared std of
    ``std(x) / K``; after a component collapse the means are re-drawn from the
    data, up to ``max_restarts`` times. Components come back sorted by mean.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if K < 1:
        raise ValueError("K must be >= 1")
    if x.size < 10 * K:
        raise ValueError(f"need at least {10 * K} values for K={K}, got {x.size}")
    span = float(x.max() - x.min())
    if span == 0:
        raise GmmError("all values are identical")
    floor = 1e-8 * span
    rng = np.random.default_rng(seed)
    means = np.quantile(x, (np.arange(K) + 0.5) / K)
    for attempt in range(max_restarts + 1):
        stds = np.full(K, x.std() / K)
        weights = np.full(K, 1.0 / K)
        try:
            w, m, s, hist, n_iter, conv = _em(x, means, stds, weights, tol, max_iter, floor)
        except GmmError as exc:
            log.debug("EM attempt %d failed: %s", attempt, exc)
            means = np.sort(rng.choice(x, size=K, replace=False))
            continue
        order = np.argsort(m, kind="stable")
        return GmmModel(w[order], m[order], s[order], hist, n_iter, conv)
    raise GmmError(f"EM failed after {max_restarts} restarts (component collapse)")


def _next_free_ids(dictionary, n, start=None):
    base = start if start is not None else max(max(dictionary) + 1, 100)
    ids = list(range(base, base + n))
    clash = set(ids) & set(dictionary)
    if clash:
        raise ValueError(f"ids {sorted(clash)} already in use")
    return ids


def subdivide_label(labels: LabelVolume, intensities: ScalarVolume, target_label: int, N: int,
                    seed=0, first_id: int | None = None, return_model: bool = False):
    """Split one label into ``N`` intensity clusters.

    Each cluster gets a fresh id (its own generation group) whose target
    group is the target id of ``target_label``. Voxels are assigned by
    maximum posterior under a GMM fitted to the intensities inside the label.
    """
    if not 2 <= N <= 6:
        raise ValueError("N must be in [2, 6]")
    if not labels.geometry.same_as(intensities.geometry):
        raise ValueError("labels and intensities must share geometry")
    mask = labels.labels == target_label
    if not mask.any():
        raise ValueError(f"label {target_label} is not present")
    model = fit_gmm_1d(intensities.values[mask], N, seed=seed)
    cluster = model.predict(intensities.values[mask])
    new_ids = _next_free_ids(labels.dictionary, N, first_id)
    out = labels.labels.astype(np.int32)
    out[mask] = np.asarray(new_ids)[cluster]
    dictionary = dict(labels.dictionary)
    gen = dict(labels.groups["generation"])
    tgt = dict(labels.groups["target"])
    base_name = labels.dictionary[target_label]
    target_id = tgt[target_label]
    for k, i in enumerate(new_ids):
        dictionary[i] = f"{base_name}_{k + 1}of{N}"
        gen[i] = i
        tgt[i] = target_id
    groups = {**labels.groups, "generation": gen, "target": tgt}
    result = LabelVolume(labels.geometry, out, dictionary, groups)
    if return_model:
        return result, model
    return result


def fuse_head_labels(brain: LabelVolume, head: LabelVolume,
                     background_ids=BRAIN_BACKGROUND_IDS) -> LabelVolume:
    """Combine a brain label map with a head-tissue map.

    ``head`` uses 0 for background and 1..9 for :data:`HEAD_CLASSES`. Brain
    voxels (any id outside ``background_ids``) keep their labels; the rest
    take the head class, and head background becomes air. Every head class
    targets the single ``head`` id.
    """
    if not brain.geometry.same_as(head.geometry):
        raise ValueError("brain and head maps must share geometry")
    hv = head.labels.astype(np.int32)
    if hv.max(initial=0) > len(HEAD_CLASSES):
        raise ValueError(f"head map ids must be in 0..{len(HEAD_CLASSES)}")
    exterior = np.isin(brain.labels, background_ids)
    out = brain.labels.astype(np.int32)
    head_ids = np.where(hv == 0, AIR_ID, hv + HEAD_ID_OFFSET)
    out[exterior] = head_ids[exterior]
    dictionary = {i: n for i, n in brain.dictionary.items()}
    gen = dict(brain.groups["generation"])
    tgt = dict(brain.groups["target"])
    if HEAD_TARGET_ID in dictionary and dictionary[HEAD_TARGET_ID] != "head":
        raise ValueError(f"id {HEAD_TARGET_ID} is reserved for the head target")
    dictionary[HEAD_TARGET_ID] = "head"
    gen[HEAD_TARGET_ID] = HEAD_TARGET_ID
    tgt[HEAD_TARGET_ID] = HEAD_TARGET_ID
    for k, name in enumerate(HEAD_CLASSES):
        i = HEAD_ID_OFFSET + 1 + k
        dictionary[i] = name
        gen[i] = i
        tgt[i] = HEAD_TARGET_ID
    # brain background ids no longer occur; route them to head for totality
    for b in background_ids:
        if b in tgt:
            tgt[b] = HEAD_TARGET_ID
    return LabelVolume(brain.geometry, out, dictionary, {**brain.groups, "generation": gen, "target": tgt})


def merge_for_eval(labels: LabelVolume, csf_id: int = CSF, ventricle_id: int = VENTRICLES) -> LabelVolume:
    """Fold ventricles into CSF under the name ``CSF+Ventricles``.

    Already-merged maps (CSF named ``CSF+Ventricles`` and no ventricle
    entry) are returned unchanged.
    """
    d = labels.dictionary
    if d.get(csf_id) == MERGED_CSF_NAME and ventricle_id not in d:
        return labels
    if csf_id not in d or ventricle_id not in d:
        raise ValueError(f"ids {csf_id} (CSF) and {ventricle_id} (Ventricles) must be in the dictionary")
    out = labels.labels.copy()
    out[out == ventricle_id] = csf_id
    dictionary = {i: n for i, n in d.items() if i != ventricle_id}
    dictionary[csf_id] = MERGED_CSF_NAME
    groups = {}
    for name, g in labels.groups.items():
        g = {i: (csf_id if v == ventricle_id else v) for i, v in g.items() if i != ventricle_id}
        groups[name] = g
    return LabelVolume(labels.geometry, out, dictionary, groups)
