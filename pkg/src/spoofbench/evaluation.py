"""Detection metrics: EER on the ROC convex hull, DET curve points,
per-attack aggregation, and long-term average spectrum diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import AudioSignal
from . import dsp
from .errors import NoActiveSpeechError
from .scores import HUMAN, SPOOF, ScoreSet


@dataclass(frozen=True)
class EvalReport:
    eer_percent: float
    det_points: tuple        # ((p_miss, p_fa), ...) ordered by threshold
    n_target: int
    n_nontarget: int
    grouping: str = "pooled"


def _roc_vertices(target_scores, nontarget_scores):
    """Step-ROC operating points (p_fa, p_miss) swept from the accept-all
    threshold to the reject-all one; tied scores collapse to one vertex."""
    tar = np.sort(np.asarray(target_scores, dtype=np.float64))
    non = np.sort(np.asarray(nontarget_scores, dtype=np.float64))
    if tar.size == 0 or non.size == 0:
        raise ValueError("need at least one target and one non-target trial")
    thresholds = np.unique(np.concatenate([tar, non]))
    points = [(1.0, 0.0)]
    for th in thresholds:
        p_fa = (non.size - np.searchsorted(non, th, side="left")) / non.size
        p_miss = np.searchsorted(tar, th, side="left") / tar.size
        if (p_fa, p_miss) != points[-1]:
            points.append((p_fa, p_miss))
    if points[-1] != (0.0, 1.0):
        points.append((0.0, 1.0))
    return points


def _lower_hull(points):
    """Lower-left convex frontier over (p_fa, p_miss), p_fa ascending."""
    pts = sorted(points)
    hull = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


def rocch_eer(target_scores, nontarget_scores) -> float:
    """EER as the intersection of the ROC convex hull with p_miss = p_fa.

    Returned as a fraction in [0, 0.5].
    """
    hull = _lower_hull(_roc_vertices(target_scores, nontarget_scores))
    for (x1, y1), (x2, y2) in zip(hull[:-1], hull[1:]):
        d1, d2 = y1 - x1, y2 - x2
        if d1 == 0.0:
            return x1
        if d1 > 0 >= d2 or d1 < 0 <= d2:
            t = d1 / (d1 - d2)
            return x1 + t * (x2 - x1)
    return hull[-1][0] if hull[-1][1] == hull[-1][0] else 0.0


def det_points(target_scores, nontarget_scores):
    """(p_miss, p_fa) operating points ordered by rising threshold."""
    return [(p_miss, p_fa)
            for p_fa, p_miss in _roc_vertices(target_scores, nontarget_scores)]


def compute_eer_rocch(scores: ScoreSet, grouping="pooled") -> EvalReport:
    tar = scores.target_scores
    non = scores.nontarget_scores
    eer = rocch_eer(tar, non)
    return EvalReport(100.0 * eer, tuple(det_points(tar, non)),
                      tar.size, non.size, grouping)


def per_attack_eers(scores: ScoreSet, average_over=None):
    """One report per attack (targets shared, non-targets filtered), plus a
    macro-average over `average_over` (default: every attack present)."""
    labels = np.asarray(scores.labels)
    attacks = np.asarray(scores.attack_ids)
    tar = scores.scores[labels == HUMAN]
    present = sorted(set(attacks[labels == SPOOF]))
    if not present:
        raise ValueError("no spoof trials with attack tags")
    reports = {}
    for attack in present:
        non = scores.scores[(labels == SPOOF) & (attacks == attack)]
        eer = rocch_eer(tar, non)
        reports[attack] = EvalReport(100.0 * eer,
                                     tuple(det_points(tar, non)),
                                     tar.size, non.size,
                                     grouping=f"attack:{attack}")
    chosen = present if average_over is None else list(average_over)
    if not chosen:
        raise ValueError("empty attack subset for averaging")
    missing = set(chosen) - set(present)
    if missing:
        raise ValueError(f"attacks not present in scores: {sorted(missing)}")
    macro = float(np.mean([reports[a].eer_percent for a in chosen]))
    return reports, macro


# ---------------------------------------------------------------------------
# long-term average spectrum

@dataclass(frozen=True)
class LtasProfile:
    power: np.ndarray    # per-bin mean power over speech frames
    n_frames: int
    dft_size: int


def compute_ltas(signal: AudioSignal, vad=None, frame_ms=20.0,
                 dft_size=512, vad_threshold_db=30.0) -> LtasProfile:
    """Mean short-term power spectrum over speech frames.

    Frames do not overlap, so the profile of a concatenation of whole-frame
    segments is the frame-count-weighted mean of the parts' profiles.
    """
    frames = dsp.frame_signal(signal.samples, signal.sample_rate,
                              frame_ms=frame_ms, shift_ms=frame_ms)
    if vad is None:
        vad = dsp.energy_vad(frames, threshold_db=vad_threshold_db)
    vad = np.asarray(vad, dtype=bool)
    if vad.shape[0] != frames.frames.shape[0]:
        raise ValueError("VAD length does not match frame count")
    if not np.any(vad):
        raise NoActiveSpeechError("no speech frames for LTAS")
    power = dsp.power_spectrum(frames, dft_size=dft_size)
    return LtasProfile(power[vad].mean(axis=0), int(vad.sum()), dft_size)


def combine_ltas(profiles) -> LtasProfile:
    """Frame-count-weighted mean of several profiles."""
    profiles = list(profiles)
    if not profiles:
        raise ValueError("no profiles to combine")
    dft = profiles[0].dft_size
    if any(p.dft_size != dft for p in profiles):
        raise ValueError("profiles use different DFT sizes")
    total = sum(p.n_frames for p in profiles)
    power = sum(p.power * (p.n_frames / total) for p in profiles)
    return LtasProfile(power, total, dft)


def save_ltas_csv(path, profile: LtasProfile, sample_rate):
    bins = np.arange(profile.power.shape[0])
    freqs = bins * sample_rate / profile.dft_size
    table = np.column_stack([freqs, profile.power])
    np.savetxt(path, table, delimiter=",", header="freq_hz,power",
               comments="")
