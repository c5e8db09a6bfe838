"""Diagonal-covariance Gaussian mixture back-end.

Detection uses one mixture per class; an utterance is scored by the
difference of per-frame average log-likelihoods under the two models.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

_GMM_MAGIC = b"SPGM1"
VAR_FLOOR_FRAC = 1e-4
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GmmModel:
    weights: np.ndarray     # (C,)
    means: np.ndarray       # (C, D)
    variances: np.ndarray   # (C, D)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        c, d = self.means.shape
        if self.weights.shape != (c,) or self.variances.shape != (c, d):
            raise ValueError("inconsistent GMM parameter shapes")
        if abs(self.weights.sum() - 1.0) > 1e-6 or np.any(self.weights < 0):
            raise ValueError("weights must be a probability vector")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def component_log_likelihoods(self, frames) -> np.ndarray:
        """log(w_c N(x; m_c, diag v_c)) for every frame/component, (T, C)."""
        frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
        if frames.shape[1] != self.dim:
            raise ValueError(
                f"feature dim {frames.shape[1]} != model dim {self.dim}")
        inv = 1.0 / self.variances                                   # (C, D)
        const = (np.log(self.weights)
                 - 0.5 * (self.dim * _LOG_2PI
                          + np.log(self.variances).sum(axis=1)
                          + (self.means ** 2 * inv).sum(axis=1)))    # (C,)
        quad = (frames ** 2) @ inv.T                                 # (T, C)
        cross = frames @ (self.means * inv).T                        # (T, C)
        return const[None, :] + cross - 0.5 * quad

    def frame_log_likelihoods(self, frames) -> np.ndarray:
        return logsumexp(self.component_log_likelihoods(frames), axis=1)

    def avg_log_likelihood(self, frames) -> float:
        return float(np.mean(self.frame_log_likelihoods(frames)))


def kmeans_pp_centers(frames, k, rng) -> np.ndarray:
    """k-means++ seeding: subsequent centers drawn with probability
    proportional to squared distance from the nearest existing center."""
    n = frames.shape[0]
    centers = np.empty((k, frames.shape[1]))
    centers[0] = frames[rng.integers(n)]
    d2 = ((frames - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[i] = frames[idx]
        d2 = np.minimum(d2, ((frames - centers[i]) ** 2).sum(axis=1))
    return centers


def train_gmm(frames, n_components, n_iterations=10, seed=0,
              var_floor_frac=VAR_FLOOR_FRAC, chunk_size=100_000):
    """EM for a diagonal GMM.

    Initialization: k-means++ means, uniform weights, global variances.
    Variances are floored at var_floor_frac times the global per-dimension
    variance. Returns (model, history) where history[i] is the average
    log-likelihood of the data under the model entering iteration i (a
    non-decreasing sequence, EM's fixed-point guarantee).
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    t, d = frames.shape
    if t < 1:
        raise ValueError("no frames to train on")
    if n_components < 1:
        raise ValueError("need at least one component")
    rng = np.random.default_rng(seed)
    global_var = frames.var(axis=0)
    floor = np.maximum(var_floor_frac * global_var, 1e-12)

    model = GmmModel(np.full(n_components, 1.0 / n_components),
                     kmeans_pp_centers(frames, n_components, rng),
                     np.maximum(np.tile(global_var, (n_components, 1)), floor))

    history = []
    for _ in range(n_iterations):
        nk = np.zeros(n_components)
        sum_x = np.zeros((n_components, d))
        sum_x2 = np.zeros((n_components, d))
        total_ll = 0.0
        for start in range(0, t, chunk_size):
            block = frames[start:start + chunk_size]
            comp_ll = model.component_log_likelihoods(block)
            frame_ll = logsumexp(comp_ll, axis=1)
            total_ll += float(frame_ll.sum())
            resp = np.exp(comp_ll - frame_ll[:, None])
            nk += resp.sum(axis=0)
            sum_x += resp.T @ block
            sum_x2 += resp.T @ (block ** 2)
        history.append(total_ll / t)

        safe_nk = np.maximum(nk, 1e-12)
        means = sum_x / safe_nk[:, None]
        variances = np.maximum(sum_x2 / safe_nk[:, None] - means ** 2, floor)
        model = GmmModel(nk / t, means, variances)
    return model, history


def llr_score(frames, natural_model: GmmModel, synthetic_model: GmmModel) -> float:
    """Average per-frame log-likelihood ratio, natural over synthetic."""
    return (natural_model.avg_log_likelihood(frames)
            - synthetic_model.avg_log_likelihood(frames))


def save_gmm(path, model: GmmModel):
    with open(path, "wb") as fh:
        fh.write(_GMM_MAGIC)
        fh.write(struct.pack("<II", model.n_components, model.dim))
        fh.write(model.weights.astype("<f8").tobytes())
        fh.write(model.means.astype("<f8").tobytes())
        fh.write(model.variances.astype("<f8").tobytes())


def load_gmm(path) -> GmmModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(_GMM_MAGIC))
        if magic != _GMM_MAGIC:
            raise ValueError(f"{path}: not a GMM model file")
        c, d = struct.unpack("<II", fh.read(8))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    expected = c + 2 * c * d
    if payload.size != expected:
        raise ValueError(f"{path}: truncated GMM model file")
    weights = payload[:c]
    means = payload[c:c + c * d].reshape(c, d)
    variances = payload[c + c * d:].reshape(c, d)
    return GmmModel(weights.copy(), means.copy(), variances.copy())
