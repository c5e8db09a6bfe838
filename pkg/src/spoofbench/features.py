"""The eight acoustic front-ends used by the workbench.

Magnitude-domain: MFCC, IMFCC (inverted mel), SCMC (subband spectral centroid
magnitudes), CQCC (constant-Q cepstra), MHEC (gammatone Hilbert-envelope
cepstra). Phase-domain: RPS (relative phase shift of harmonics), MGD
(modified group delay), CosPhase (cosine of the unwrapped phase).

All extractors share the 20 ms / 10 ms analysis grid, 512-point spectra,
32 filters and 32 cepstral coefficients including c0. Post-processing is
deltas -> cepstral mean subtraction -> VAD frame dropping; the per-feature
defaults follow the usual practice of applying dynamics+CMS to the
magnitude-style features and leaving RPS / CosPhase raw.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.interpolate
import scipy.signal

from . import dsp, filterbanks
from .audio import AudioSignal
from .errors import EmptyFeaturesError

FEATURE_KINDS = ("mfcc", "imfcc", "scmc", "cqcc", "mhec", "rps", "mgd", "cosphase")

# features that get deltas + CMS by default; the phase-pattern features
# (rps, cosphase) are used raw
_DYNAMIC_DEFAULT = {
    "mfcc": True, "imfcc": True, "scmc": True, "cqcc": True,
    "mhec": True, "mgd": True, "rps": False, "cosphase": False,
}


@dataclass(frozen=True)
class FeatureConfig:
    kind: str
    n_coeffs: int = 32
    n_filters: int = 32
    frame_ms: float = 20.0
    shift_ms: float = 10.0
    dft_size: int = 512
    window: str = "hamming"
    add_delta: bool | None = None        # None -> per-kind default
    add_deltadelta: bool | None = None
    apply_cms: bool | None = None
    vad_threshold_db: float = 30.0
    # modified group delay shaping
    mgd_alpha: float = 0.3
    mgd_gamma: float = 0.1
    mgd_cep_lifter: int = 30
    # constant-Q geometry (f_max = Nyquist, f_min = f_max / 2**octaves)
    cqt_bins_per_octave: int = 96
    cqt_octaves: int = 9
    # pitch tracking for RPS
    f0_min: float = 50.0
    f0_max: float = 500.0
    f0_frame_ms: float = 100.0
    f0_voicing_threshold: float = 0.3
    # MHEC gammatone span and envelope smoothing
    gt_f_lo: float = 100.0
    gt_f_hi: float = 8000.0
    envelope_cutoff_hz: float = 20.0

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.n_coeffs < 1:
            raise ValueError("n_coeffs must be positive")
        if self.want_deltadelta and not self.want_delta:
            raise ValueError("delta-delta requires delta")

    @property
    def want_delta(self) -> bool:
        if self.add_delta is None:
            return _DYNAMIC_DEFAULT[self.kind]
        return self.add_delta

    @property
    def want_deltadelta(self) -> bool:
        if self.add_deltadelta is None:
            return _DYNAMIC_DEFAULT[self.kind] if self.add_delta is None else False
        return self.add_deltadelta

    @property
    def want_cms(self) -> bool:
        if self.apply_cms is None:
            return _DYNAMIC_DEFAULT[self.kind]
        return self.apply_cms

    @property
    def dimension(self) -> int:
        mult = 1 + int(self.want_delta) + int(self.want_deltadelta)
        return self.n_coeffs * mult


def coefficient_labels(config: FeatureConfig) -> str:
    parts = [config.kind]
    if config.want_delta:
        parts.append("d")
    if config.want_deltadelta:
        parts.append("dd")
    if config.want_cms:
        parts.append("cms")
    return "+".join(parts)


@lru_cache(maxsize=32)
def _mel_bank(n_filters, dft_size, rate):
    return filterbanks.mel_filterbank(n_filters, dft_size, rate)


@lru_cache(maxsize=32)
def _imel_bank(n_filters, dft_size, rate):
    return filterbanks.inverted_mel_filterbank(n_filters, dft_size, rate)


@lru_cache(maxsize=32)
def _linear_bank(n_filters, dft_size, rate):
    return filterbanks.linear_filterbank(n_filters, dft_size, rate)


@lru_cache(maxsize=8)
def _gt_bank(rate, n_filters, f_lo, f_hi):
    return filterbanks.gammatone_bank(rate, n_filters, f_lo, f_hi)


@lru_cache(maxsize=8)
def _cqt_kern(rate, bins_per_octave, octaves):
    f_max = rate / 2.0
    return filterbanks.cqt_kernel(rate, bins_per_octave, f_max / 2.0 ** octaves, f_max)


def compute_vad_mask(signal: AudioSignal, config: FeatureConfig) -> np.ndarray:
    """Energy VAD on the feature analysis grid (used to drop silence frames).

    For noisy or enhanced variants of an utterance the mask should be computed
    once on the clean signal and passed into extract() explicitly.
    """
    fm = dsp.frame_signal(signal.samples, signal.sample_rate,
                          config.frame_ms, config.shift_ms, config.window)
    return dsp.energy_vad(fm, config.vad_threshold_db)


def _finalize(raw: np.ndarray, config: FeatureConfig, vad: np.ndarray) -> np.ndarray:
    feats = raw
    if config.want_delta:
        feats = dsp.append_deltas(feats, order=2 if config.want_deltadelta else 1)
    if config.want_cms:
        feats = dsp.cepstral_mean_subtract(feats)
    return dsp.apply_vad(feats, vad)


def _frames_and_vad(signal, config, vad):
    fm = dsp.frame_signal(signal.samples, signal.sample_rate,
                          config.frame_ms, config.shift_ms, config.window)
    if fm.n_frames == 0:
        raise EmptyFeaturesError("signal shorter than one analysis frame")
    if vad is None:
        vad = dsp.energy_vad(fm, config.vad_threshold_db)
    return fm, np.asarray(vad, dtype=bool)


def extract(signal: AudioSignal, config: FeatureConfig, vad=None) -> np.ndarray:
    """Dispatch to the configured extractor. Returns a (frames x dim) matrix."""
    fn = {
        "mfcc": extract_mfcc, "imfcc": extract_imfcc, "scmc": extract_scmc,
        "cqcc": extract_cqcc, "mhec": extract_mhec, "rps": extract_rps,
        "mgd": extract_mgd, "cosphase": extract_cosphase,
    }[config.kind]
    return fn(signal, config, vad)


# --- magnitude-domain cepstra -------------------------------------------------

def extract_mfcc(signal, config=None, vad=None):
    config = config or FeatureConfig("mfcc")
    fm, vad = _frames_and_vad(signal, config, vad)
    power = dsp.power_spectrum(fm, config.dft_size)
    bank = _mel_bank(config.n_filters, config.dft_size, signal.sample_rate)
    raw = dsp.dct_features(dsp.safe_log(bank.apply(power)), config.n_coeffs)
    return _finalize(raw, config, vad)


def extract_imfcc(signal, config=None, vad=None):
    config = config or FeatureConfig("imfcc")
    fm, vad = _frames_and_vad(signal, config, vad)
    power = dsp.power_spectrum(fm, config.dft_size)
    bank = _imel_bank(config.n_filters, config.dft_size, signal.sample_rate)
    raw = dsp.dct_features(dsp.safe_log(bank.apply(power)), config.n_coeffs)
    return _finalize(raw, config, vad)


def subband_centroid_magnitudes(magnitude, bank) -> np.ndarray:
    """Per band: mean magnitude weighted by normalized frequency.

    SCM_i = sum_k f[k] |X[k]| w_i[k] / sum_k f[k] w_i[k] with f[k] = k/(K/2).
    """
    n_bins = magnitude.shape[1]
    f = np.arange(n_bins) / (n_bins - 1)
    denom = bank.weights @ f
    num = (magnitude * f) @ bank.weights.T
    out = np.zeros_like(num)
    ok = denom > 0
    out[:, ok] = num[:, ok] / denom[ok]
    return out


def extract_scmc(signal, config=None, vad=None):
    config = config or FeatureConfig("scmc")
    fm, vad = _frames_and_vad(signal, config, vad)
    mag = dsp.magnitude_spectrum(fm, config.dft_size)
    bank = _linear_bank(config.n_filters, config.dft_size, signal.sample_rate)
    scm = subband_centroid_magnitudes(mag, bank)
    raw = dsp.dct_features(dsp.safe_log(scm), config.n_coeffs)
    return _finalize(raw, config, vad)


def resample_log_spectrum(rows, geo_freqs, n_points=None) -> np.ndarray:
    """Cubic-spline resampling from a geometric frequency grid to a uniform one.

    Used to put constant-Q log spectra on a linear axis before the DCT.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    geo_freqs = np.asarray(geo_freqs, dtype=np.float64)
    if n_points is None:
        n_points = geo_freqs.size
    uniform = np.linspace(geo_freqs[0], geo_freqs[-1], n_points)
    spline = scipy.interpolate.CubicSpline(geo_freqs, rows, axis=1)
    return spline(uniform)


def extract_cqcc(signal, config=None, vad=None):
    config = config or FeatureConfig("cqcc")
    fm, vad = _frames_and_vad(signal, config, vad)
    kern = _cqt_kern(signal.sample_rate, config.cqt_bins_per_octave, config.cqt_octaves)
    power = filterbanks.cqt(signal, kern, config.frame_ms, config.shift_ms)
    logp = dsp.safe_log(power)
    linear = resample_log_spectrum(logp, kern.center_freqs)
    raw = dsp.dct_features(linear, config.n_coeffs)
    return _finalize(raw, config, vad)


def extract_mhec(signal, config=None, vad=None):
    """Gammatone channels -> squared Hilbert envelope -> 20 Hz smoothing ->
    frame-averaged energies -> log -> DCT."""
    config = config or FeatureConfig("mhec")
    fm, vad = _frames_and_vad(signal, config, vad)
    bank = _gt_bank(signal.sample_rate, config.n_filters, config.gt_f_lo, config.gt_f_hi)
    channels = bank.filter(signal.samples)
    env = np.abs(scipy.signal.hilbert(channels, axis=1)) ** 2
    b, a = scipy.signal.butter(2, config.envelope_cutoff_hz / (signal.sample_rate / 2.0))
    smooth = scipy.signal.filtfilt(b, a, env, axis=1)

    n = dsp.frame_length_samples(config.frame_ms, signal.sample_rate)
    shift = dsp.frame_shift_samples(config.shift_ms, signal.sample_rate)
    idx = shift * np.arange(fm.n_frames)[:, None] + np.arange(n)[None, :]
    w = dsp.window_function(config.window, n)
    w = w / w.sum()
    energies = smooth[:, idx] @ w          # (M, T)
    raw = dsp.dct_features(dsp.safe_log(energies.T), config.n_coeffs)
    return _finalize(raw, config, vad)


# --- pitch tracking and relative phase shifts ---------------------------------

@dataclass(frozen=True)
class F0Track:
    """Autocorrelation pitch track on its own (longer-window) grid."""

    f0: np.ndarray        # Hz, 0 where unvoiced
    voiced: np.ndarray    # bool
    frame_ms: float
    shift_ms: float


def estimate_f0(signal: AudioSignal, config: FeatureConfig | None = None) -> F0Track:
    """Normalized-autocorrelation pitch tracker with parabolic peak refinement.

    The signal is low-passed first so the autocorrelation peak stays a few
    samples wide, and submultiples of the best lag are checked to avoid
    octave-down errors on strongly harmonic material.
    """
    config = config or FeatureConfig("rps")
    rate = signal.sample_rate
    cutoff = min(1500.0, 0.45 * rate)
    b, a = scipy.signal.butter(4, cutoff / (rate / 2.0))
    lowpassed = scipy.signal.lfilter(b, a, signal.samples)
    fm = dsp.frame_signal(lowpassed, rate, config.f0_frame_ms,
                          config.shift_ms, window="rect")
    lag_min = max(2, int(np.floor(rate / config.f0_max)))
    lag_max = int(np.ceil(rate / config.f0_min))
    n = fm.frame_length
    if lag_max >= n:
        raise ValueError("pitch window too short for f0_min")

    f0 = np.zeros(fm.n_frames)
    voiced = np.zeros(fm.n_frames, dtype=bool)
    size = int(2 ** np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(fm.frames, n=size, axis=1)
    corr = np.fft.irfft(np.abs(spec) ** 2, n=size, axis=1)[:, :lag_max + 2]
    for t in range(fm.n_frames):
        r = corr[t]
        if r[0] <= 0:
            continue
        seg = r[lag_min:lag_max + 1] / r[0]
        best = lag_min + int(np.argmax(seg))
        strength = r[best] / r[0]
        if strength < config.f0_voicing_threshold:
            continue
        # prefer the shortest submultiple lag that is nearly as strong
        lag = best
        for div in (2, 3, 4):
            cand = best / div
            if cand < lag_min:
                break
            lo = max(lag_min, int(round(cand)) - 2)
            hi = min(lag_max, int(round(cand)) + 2)
            local = lo + int(np.argmax(r[lo:hi + 1]))
            if r[local] / r[0] >= 0.9 * strength:
                lag = min(lag, local)
        y0, y1, y2 = r[lag - 1] / r[0], r[lag] / r[0], r[lag + 1] / r[0]
        denom = y0 - 2.0 * y1 + y2
        delta = 0.0 if denom == 0 else np.clip(0.5 * (y0 - y2) / denom, -1.0, 1.0)
        voiced[t] = True
        f0[t] = rate / (lag + delta)
    return F0Track(f0, voiced, config.f0_frame_ms, config.shift_ms)


def _f0_on_analysis_grid(track: F0Track, config: FeatureConfig, n_frames, rate):
    """Map the pitch track onto the short analysis grid by center alignment."""
    if track.f0.size == 0:
        return np.zeros(n_frames), np.zeros(n_frames, dtype=bool)
    long_n = dsp.frame_length_samples(track.frame_ms, rate)
    short_n = dsp.frame_length_samples(config.frame_ms, rate)
    shift = dsp.frame_shift_samples(config.shift_ms, rate)
    offset = int(round((long_n - short_n) / 2.0 / shift))
    src = np.clip(np.arange(n_frames) - offset, 0, track.f0.size - 1)
    return track.f0[src], track.voiced[src]


def relative_phase_row(spectrum_row, f0: float, sample_rate: int, dft_size: int):
    """Relative phase shift theta_k of each harmonic of f0 (theta_1 = 0).

    The instantaneous phase of harmonic k is read off the frame's DFT at
    k*f0 by interpolating the angle between the two neighbouring bins, and
    the linear-in-k time reference is removed by theta_k = phi_k - k*phi_1.
    Harmonics are taken strictly below Nyquist. Angles are wrapped to
    (-pi, pi].
    """
    if f0 <= 0:
        raise ValueError("f0 must be positive")
    nyquist = sample_rate / 2.0
    k_max = int(np.floor((nyquist - 1e-9) / f0))
    if k_max < 1:
        return np.zeros(0)
    ks = np.arange(1, k_max + 1)
    pos = ks * f0 * dft_size / sample_rate
    i0 = np.floor(pos).astype(int)
    frac = pos - i0
    a0 = np.angle(spectrum_row[i0])
    a1 = np.angle(spectrum_row[i0 + 1])
    a1 = a1 + 2.0 * np.pi * np.round((a0 - a1) / (2.0 * np.pi))
    phi = (1.0 - frac) * a0 + frac * a1
    theta = phi - ks * phi[0]
    return (theta + np.pi) % (2.0 * np.pi) - np.pi


def rps_band_row(theta, f0, bank) -> np.ndarray:
    """Unwrap theta over harmonic index, differentiate, interpolate onto the
    DFT bin grid and integrate with the triangular bank."""
    n_bins = bank.weights.shape[1]
    bin_freqs = np.arange(n_bins) * bank.sample_rate / bank.dft_size
    if theta.size >= 2:
        un = np.unwrap(theta)
        deriv = np.diff(un)
        mid = (np.arange(1, theta.size) + 0.5) * f0
        values = np.interp(bin_freqs, mid, deriv)
    else:
        values = np.zeros(n_bins)
    return bank.weights @ values


def extract_rps(signal, config=None, vad=None):
    """Relative-phase-shift features; unvoiced frames are dropped."""
    config = config or FeatureConfig("rps")
    fm, vad = _frames_and_vad(signal, config, vad)
    spec = np.fft.rfft(fm.frames, n=config.dft_size, axis=1)
    track = estimate_f0(signal, config)
    f0s, voiced = _f0_on_analysis_grid(track, config, fm.n_frames, signal.sample_rate)
    bank = _mel_bank(config.n_filters, config.dft_size, signal.sample_rate)

    rows = []
    kept_vad = []
    for t in range(fm.n_frames):
        if not voiced[t]:
            continue
        theta = relative_phase_row(spec[t], f0s[t], signal.sample_rate, config.dft_size)
        rows.append(rps_band_row(theta, f0s[t], bank))
        kept_vad.append(vad[t])
    if not rows:
        raise EmptyFeaturesError("no voiced frames for RPS")
    raw = dsp.dct_features(np.vstack(rows), config.n_coeffs)
    return _finalize(raw, config, np.asarray(kept_vad, dtype=bool))


# --- group delay and phase cepstra ---------------------------------------------

def _cepstrally_smoothed_magnitude(full_spectrum, lifter: int) -> np.ndarray:
    """Smooth |X| by keeping only the first `lifter` real-cepstrum coefficients."""
    logmag = dsp.safe_log(np.abs(full_spectrum))
    cep = np.fft.ifft(logmag, axis=1).real
    k = cep.shape[1]
    keep = np.zeros_like(cep)
    keep[:, :lifter] = cep[:, :lifter]
    if lifter > 1:
        keep[:, k - lifter + 1:] = cep[:, k - lifter + 1:]
    smooth = np.fft.fft(keep, axis=1).real
    half = k // 2 + 1
    return np.exp(smooth[:, :half])


def mgd_spectrum(frames: dsp.FrameMatrix, dft_size: int = 512,
                 alpha: float = 0.3, gamma: float = 0.1,
                 cep_lifter: int | None = 30) -> np.ndarray:
    """Modified group delay function per frame.

    tau(k) = sign(X_R Y_R + X_I Y_I) * |(X_R Y_R + X_I Y_I) / H(k)^(2 gamma)|^alpha
    where Y is the DFT of n*x[n] and H is the cepstrally smoothed |X|
    (H = |X| exactly when cep_lifter is None). With alpha = gamma = 1 and no
    smoothing this reduces to the classical group delay in samples.
    """
    x = frames.frames
    full = np.fft.fft(x, n=dft_size, axis=1)
    half = dft_size // 2 + 1
    xs = full[:, :half]
    ys = np.fft.rfft(x * np.arange(x.shape[1]), n=dft_size, axis=1)
    num = xs.real * ys.real + xs.imag * ys.imag
    if cep_lifter is None:
        h = np.abs(xs)
    else:
        h = _cepstrally_smoothed_magnitude(full, cep_lifter)
    denom = np.maximum(h, dsp.LOG_FLOOR) ** (2.0 * gamma)
    return np.sign(num) * np.abs(num / denom) ** alpha


def extract_mgd(signal, config=None, vad=None):
    config = config or FeatureConfig("mgd")
    fm, vad = _frames_and_vad(signal, config, vad)
    tau = mgd_spectrum(fm, config.dft_size, config.mgd_alpha,
                       config.mgd_gamma, config.mgd_cep_lifter)
    raw = dsp.dct_features(tau, config.n_coeffs)
    return _finalize(raw, config, vad)


def extract_cosphase(signal, config=None, vad=None):
    """Cosine of the frequency-unwrapped phase spectrum, decorrelated by DCT."""
    config = config or FeatureConfig("cosphase")
    fm, vad = _frames_and_vad(signal, config, vad)
    phase = dsp.phase_spectrum(fm, config.dft_size)
    raw = dsp.dct_features(np.cos(np.unwrap(phase, axis=1)), config.n_coeffs)
    return _finalize(raw, config, vad)


def default_config(kind: str, **overrides) -> FeatureConfig:
    return replace(FeatureConfig(kind), **overrides) if overrides else FeatureConfig(kind)
