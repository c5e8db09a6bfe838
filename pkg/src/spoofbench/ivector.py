"""i-vector back-end: total-variability modeling over GMM supervectors.

An utterance is summarized by zeroth/first-order Baum-Welch statistics
against a UBM; a low-rank total-variability matrix T maps a latent w to a
supervector offset, and the posterior mean of w is the i-vector. Session
compensation is WCCN followed by length normalization; scoring is cosine
against per-class mean i-vectors, or a two-covariance PLDA log-likelihood
ratio.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVectorError
from .gmm import GmmModel

_TV_MAGIC = b"SPTV1"
_WCCN_MAGIC = b"SPWC1"
_PLDA_MAGIC = b"SPPL1"


# ---------------------------------------------------------------------------
# sufficient statistics

def baum_welch_stats(frames, ubm: GmmModel):
    """Zeroth (N, per component) and first (F, component x dim) order
    statistics of the frames under the UBM posteriors."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    comp_ll = ubm.component_log_likelihoods(frames)
    comp_ll -= comp_ll.max(axis=1, keepdims=True)
    resp = np.exp(comp_ll)
    resp /= resp.sum(axis=1, keepdims=True)
    n = resp.sum(axis=0)
    f = resp.T @ frames
    return n, f


def centered_stats(n, f, ubm: GmmModel):
    """First-order stats re-centered on the UBM means: F_c - N_c m_c."""
    return f - n[:, None] * ubm.means


# ---------------------------------------------------------------------------
# total-variability model

@dataclass(frozen=True)
class TvMatrix:
    """mu = m + T w: low-rank factorization of supervector offsets."""

    matrix: np.ndarray   # (M*D, R)
    mean: np.ndarray     # (M*D,) supervector of UBM means

    def __post_init__(self):
        object.__setattr__(self, "matrix",
                           np.asarray(self.matrix, dtype=np.float64))
        object.__setattr__(self, "mean",
                           np.asarray(self.mean, dtype=np.float64))
        if self.matrix.ndim != 2 or self.mean.shape != (self.matrix.shape[0],):
            raise ValueError("inconsistent total-variability shapes")
        if not (1 <= self.matrix.shape[1] < self.matrix.shape[0]):
            raise ValueError("rank must satisfy 1 <= R < supervector size")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("total-variability matrix must be finite")

    @property
    def rank(self):
        return self.matrix.shape[1]


def _posterior(n_vec, ftilde_flat, tv_mat, inv_var_flat, gram):
    """Posterior precision L, mean E[w], and the linear term b for one
    utterance. gram holds T_c^T Sigma_c^-1 T_c per component."""
    rank = tv_mat.shape[1]
    lmat = np.eye(rank) + np.tensordot(n_vec, gram, axes=1)
    b = tv_mat.T @ (ftilde_flat * inv_var_flat)
    cov = np.linalg.inv(lmat)
    return lmat, cov @ b, b, cov


def _gram_blocks(tv_mat, ubm):
    c, d = ubm.means.shape
    blocks = tv_mat.reshape(c, d, tv_mat.shape[1])
    return np.einsum("cdr,cd,cds->crs", blocks, ubm.variances ** -1.0, blocks)


def train_tv(stats, ubm: GmmModel, rank, n_iterations=10, seed=0):
    """EM for the total-variability matrix.

    stats: list of (N, F) pairs from baum_welch_stats. Returns
    (TvMatrix, history) where history holds the per-iteration marginal
    log-likelihood terms that depend on T (non-decreasing).
    """
    c, d = ubm.means.shape
    if rank < 1 or rank >= c * d:
        raise ValueError("rank must satisfy 1 <= R < n_components * dim")
    if not stats:
        raise ValueError("no statistics to train on")
    n_all = np.stack([np.asarray(n, dtype=np.float64) for n, _ in stats])
    ft_all = np.stack([centered_stats(np.asarray(n), np.asarray(f), ubm).ravel()
                       for n, f in stats])
    inv_var = (1.0 / ubm.variances).ravel()

    rng = np.random.default_rng(seed)
    scale = np.sqrt(ubm.variances.mean())
    tv_mat = 0.1 * scale * rng.standard_normal((c * d, rank))

    history = []
    for _ in range(n_iterations):
        gram = _gram_blocks(tv_mat, ubm)
        a_acc = np.zeros((c, rank, rank))
        b_acc = np.zeros((c * d, rank))
        objective = 0.0
        for i in range(n_all.shape[0]):
            lmat, mean_w, b, cov = _posterior(n_all[i], ft_all[i], tv_mat,
                                              inv_var, gram)
            second = cov + np.outer(mean_w, mean_w)
            a_acc += n_all[i][:, None, None] * second[None, :, :]
            b_acc += np.outer(ft_all[i], mean_w)
            _, logdet = np.linalg.slogdet(lmat)
            objective += -0.5 * logdet + 0.5 * float(b @ mean_w)
        history.append(objective)
        b_blocks = b_acc.reshape(c, d, rank)
        for comp in range(c):
            tv_mat.reshape(c, d, rank)[comp] = np.linalg.solve(
                a_acc[comp], b_blocks[comp].T).T
    return TvMatrix(tv_mat, ubm.means.ravel()), history


def extract_ivector(frames, ubm: GmmModel, tv: TvMatrix) -> np.ndarray:
    """Posterior mean of the total-variability latent for one utterance."""
    n, f = baum_welch_stats(frames, ubm)
    return ivector_from_stats(n, f, ubm, tv)


def ivector_from_stats(n, f, ubm: GmmModel, tv: TvMatrix) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    c, d = ubm.means.shape
    ftilde = (f - n[:, None] * tv.mean.reshape(c, d)).ravel()
    inv_var = (1.0 / ubm.variances).ravel()
    gram = _gram_blocks(tv.matrix, ubm)
    _, mean_w, _, _ = _posterior(n, ftilde, tv.matrix, inv_var, gram)
    return mean_w


# ---------------------------------------------------------------------------
# session compensation and scoring

def train_wccn(ivectors, labels) -> np.ndarray:
    """Within-class covariance normalization.

    Returns B, lower-triangular with B B^T = W^-1 (W the pooled within-class
    covariance); apply as B.T @ w, after which the within-class covariance of
    the training set is the identity. A small diagonal ridge is added only
    when W is ill-conditioned, so the well-posed case stays exact.
    """
    ivectors = np.atleast_2d(np.asarray(ivectors, dtype=np.float64))
    labels = np.asarray(labels)
    if len(labels) != ivectors.shape[0]:
        raise ValueError("one label per i-vector required")
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2 or counts.min() < 2:
        raise ValueError("WCCN needs >= 2 classes with >= 2 vectors each")
    rank = ivectors.shape[1]
    w = np.zeros((rank, rank))
    for lab in classes:
        group = ivectors[labels == lab]
        diff = group - group.mean(axis=0)
        w += diff.T @ diff
    w /= ivectors.shape[0]
    cond = np.linalg.cond(w)
    if not np.isfinite(cond) or cond > 1e10:
        ridge = 1e-6 * np.trace(w) / rank
        w += max(ridge, 1e-12) * np.eye(rank)
    b = np.linalg.cholesky(np.linalg.inv(w))
    return b


def apply_wccn(b, ivectors) -> np.ndarray:
    return np.asarray(ivectors) @ b


def length_normalize(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    norm = np.linalg.norm(w, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise DegenerateVectorError("cannot length-normalize a zero vector")
    return w / norm


def cosine_score(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise DegenerateVectorError("cosine of a zero vector is undefined")
    return float(a @ b / (na * nb))


def class_mean_ivectors(ivectors, labels) -> dict:
    """Per-class mean of length-normalized i-vectors, re-normalized."""
    ivectors = np.atleast_2d(np.asarray(ivectors, dtype=np.float64))
    labels = np.asarray(labels)
    means = {}
    for lab in np.unique(labels):
        mean = length_normalize(ivectors[labels == lab]).mean(axis=0)
        means[str(lab)] = length_normalize(mean)
    return means


def detection_score(w, mean_natural, mean_synthetic) -> float:
    """Cosine to the natural-class mean minus cosine to the synthetic one."""
    return cosine_score(w, mean_natural) - cosine_score(w, mean_synthetic)


# ---------------------------------------------------------------------------
# PLDA (two-covariance, tied across classes)

@dataclass
class PldaModel:
    mu: np.ndarray       # (R,)
    factors: np.ndarray  # (R, q) between-class loading
    sigma: np.ndarray    # (R, R) within-class covariance

    @property
    def rank(self):
        return self.mu.shape[0]


def train_plda(ivectors, labels, latent_rank=None, n_iterations=10, seed=0):
    """EM for w = mu + F v + eps with v ~ N(0, I_q), eps ~ N(0, Sigma).

    The latent rank is clamped to n_classes - 1; with a single class the
    between-class term is degenerate and a warning is issued.
    """
    ivectors = np.atleast_2d(np.asarray(ivectors, dtype=np.float64))
    labels = np.asarray(labels)
    n, r = ivectors.shape
    classes = np.unique(labels)
    q = min(latent_rank if latent_rank is not None else r,
            max(len(classes) - 1, 1), r)
    if len(classes) < 2:
        warnings.warn("PLDA trained on a single class: between-class "
                      "variance is degenerate", RuntimeWarning)

    mu = ivectors.mean(axis=0)
    centered = ivectors - mu
    rng = np.random.default_rng(seed)

    # moment-based initialization: within-class covariance for Sigma and the
    # leading eigenpairs of the between-class scatter for F -- EM then only
    # applies small corrections instead of crawling from a random start
    within = np.zeros((r, r))
    between = np.zeros((r, r))
    for lab in classes:
        group = centered[labels == lab]
        gm = group.mean(axis=0)
        diff = group - gm
        within += diff.T @ diff
        between += len(group) * np.outer(gm, gm)
    within /= n
    between /= n
    evals, evecs = np.linalg.eigh(between)
    top = np.maximum(evals[-q:], 0.0)
    factors = evecs[:, -q:] * np.sqrt(top)[None, :]
    factors += 1e-4 * np.sqrt(max(np.trace(within) / r, 1e-12)) \
        * rng.standard_normal((r, q))
    sigma = within + 1e-6 * np.eye(r)

    groups = [(centered[labels == lab].sum(axis=0), int((labels == lab).sum()))
              for lab in classes]
    sum_uu = centered.T @ centered                     # constant over EM
    for _ in range(n_iterations):
        sigma_inv = np.linalg.inv(sigma)
        lam = factors.T @ sigma_inv @ factors          # (q, q)
        proj = factors.T @ sigma_inv                   # (q, R)
        sum_wv = np.zeros((r, q))
        sum_vv = np.zeros((q, q))
        for group_sum, count in groups:
            lmat = np.eye(q) + count * lam
            ev = np.linalg.solve(lmat, proj @ group_sum)
            evv = np.linalg.inv(lmat) + np.outer(ev, ev)
            sum_wv += np.outer(group_sum, ev)
            sum_vv += count * evv
        factors = np.linalg.solve(sum_vv, sum_wv.T).T
        # with the refreshed factors the cross terms collapse, leaving
        # Sigma = (sum_uu - F sum_wv^T) / n, which stays symmetric
        sigma = (sum_uu - factors @ sum_wv.T) / n
        sigma = 0.5 * (sigma + sigma.T) + 1e-9 * np.eye(r)
    return PldaModel(mu, factors, sigma)


def plda_llr(model: PldaModel, w1, w2) -> float:
    """log p(w1, w2 | same class) - log p(w1, w2 | different classes)."""
    r = model.rank
    between = model.factors @ model.factors.T
    total = between + model.sigma
    same = np.block([[total, between], [between, total]])
    diff = np.block([[total, np.zeros((r, r))], [np.zeros((r, r)), total]])
    u = np.concatenate([np.asarray(w1) - model.mu, np.asarray(w2) - model.mu])

    def _logpdf(cov):
        _, logdet = np.linalg.slogdet(cov)
        return -0.5 * (logdet + u @ np.linalg.solve(cov, u))

    return float(_logpdf(same) - _logpdf(diff))


def plda_detection_score(model: PldaModel, w, mean_natural, mean_synthetic):
    """PLDA analog of the cosine detection score: pair LLR against the
    natural-class representative minus the synthetic one."""
    return (plda_llr(model, mean_natural, w)
            - plda_llr(model, mean_synthetic, w))


# ---------------------------------------------------------------------------
# serialization

def save_tv(path, tv: TvMatrix, n_components: int):
    """Header (M, D, R) then the mean supervector m and T, all <f8."""
    rows = tv.matrix.shape[0]
    if rows % n_components:
        raise ValueError("supervector size not divisible by component count")
    with open(path, "wb") as fh:
        fh.write(_TV_MAGIC)
        fh.write(struct.pack("<III", n_components, rows // n_components,
                             tv.rank))
        fh.write(tv.mean.astype("<f8").tobytes())
        fh.write(tv.matrix.astype("<f8").tobytes())


def load_tv(path) -> TvMatrix:
    with open(path, "rb") as fh:
        if fh.read(len(_TV_MAGIC)) != _TV_MAGIC:
            raise ValueError(f"{path}: not a total-variability file")
        m, d, rank = struct.unpack("<III", fh.read(12))
        data = np.frombuffer(fh.read(), dtype="<f8")
    size = m * d
    if data.size != size + size * rank:
        raise ValueError(f"{path}: truncated total-variability file")
    mean = data[:size].copy()
    matrix = data[size:].reshape(size, rank).copy()
    return TvMatrix(matrix, mean)


def save_wccn(path, b):
    b = np.asarray(b, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_WCCN_MAGIC)
        fh.write(struct.pack("<I", b.shape[0]))
        fh.write(b.astype("<f8").tobytes())


def load_wccn(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(len(_WCCN_MAGIC)) != _WCCN_MAGIC:
            raise ValueError(f"{path}: not a WCCN file")
        rank, = struct.unpack("<I", fh.read(4))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != rank * rank:
        raise ValueError(f"{path}: truncated WCCN file")
    return data.reshape(rank, rank).copy()


def save_plda(path, model: PldaModel):
    with open(path, "wb") as fh:
        fh.write(_PLDA_MAGIC)
        fh.write(struct.pack("<II", model.rank, model.factors.shape[1]))
        fh.write(model.mu.astype("<f8").tobytes())
        fh.write(model.factors.astype("<f8").tobytes())
        fh.write(model.sigma.astype("<f8").tobytes())


def load_plda(path) -> PldaModel:
    with open(path, "rb") as fh:
        if fh.read(len(_PLDA_MAGIC)) != _PLDA_MAGIC:
            raise ValueError(f"{path}: not a PLDA file")
        r, q = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != r + r * q + r * r:
        raise ValueError(f"{path}: truncated PLDA file")
    mu = data[:r].copy()
    factors = data[r:r + r * q].reshape(r, q).copy()
    sigma = data[r + r * q:].reshape(r, r).copy()
    return PldaModel(mu, factors, sigma)


def save_class_means(path, means: dict):
    """Plain-text class representatives: one `label v1 v2 ...` per line."""
    with open(path, "w") as fh:
        fh.write("# i-vector class means\n")
        for label in sorted(means):
            vec = " ".join(f"{v:.17g}" for v in np.asarray(means[label]))
            fh.write(f"{label} {vec}\n")


def save_ivectors(path, utt_ids, ivectors):
    """Per-utterance embeddings in the same text layout as class means."""
    ivectors = np.atleast_2d(np.asarray(ivectors, dtype=np.float64))
    if len(utt_ids) != ivectors.shape[0]:
        raise ValueError("one utterance id per i-vector required")
    with open(path, "w") as fh:
        fh.write("# i-vectors\n")
        for utt_id, vec in zip(utt_ids, ivectors):
            joined = " ".join(f"{v:.17g}" for v in vec)
            fh.write(f"{utt_id} {joined}\n")


def load_ivectors(path):
    utt_ids, rows = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            utt_ids.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    if not rows:
        raise ValueError(f"{path}: no i-vectors found")
    return utt_ids, np.array(rows)


def load_class_means(path) -> dict:
    means = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            means[parts[0]] = np.array([float(v) for v in parts[1:]])
    if not means:
        raise ValueError(f"{path}: no class means found")
    return means
