"""Per-frame acoustic conditioning features: LSF(40), F0, log gain, voicing."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .signal_core import (
    FrameSpec,
    LsfConversionError,
    Waveform,
    frame_signal,
    lpc_from_frames,
    lpc_to_lsf,
)

log = logging.getLogger(__name__)

LPC_ORDER = 40
F0_MIN = 50.0
F0_MAX = 500.0
VOICING_THRESHOLD = 0.45
SILENCE_DB = -60.0
GAIN_EPS = 1e-9
STD_FLOOR = 1e-6
LSF_MIN_GAP = 1e-3
WHITE_NOISE = 1e-4  # -40 dB floor on the LP fit keeps synthesis poles off the unit circle
# pitch contour smoothing: candidates per frame, cost per octave of lag, cost per octave of jump
CANDIDATES = 10
LAG_PENALTY = 0.02
OCTAVE_COST = 1.0
MIN_VOICED_FRAMES = 3  # shorter runs are window leakage at syllable edges

# column layout of a feature matrix
F0_COL = LPC_ORDER
GAIN_COL = LPC_ORDER + 1
VUV_COL = LPC_ORDER + 2
FEATURE_DIM = LPC_ORDER + 3


@dataclass(frozen=True)
class AcousticFrame:
    lsf: np.ndarray
    f0_hz: float
    gain: float
    vuv: bool


@dataclass
class FeatureTrack:
    """Columnar store of per-frame features for one utterance."""

    lsf: np.ndarray          # (n, 40) ascending radian frequencies
    f0: np.ndarray           # (n,) Hz, 0 where unvoiced
    gain: np.ndarray         # (n,) ln(frame RMS + 1e-9)
    vuv: np.ndarray          # (n,) bool
    spec: FrameSpec
    sample_rate: int
    speaker_id: str = ""

    def __post_init__(self):
        self.lsf = np.asarray(self.lsf, dtype=np.float64)
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        self.gain = np.asarray(self.gain, dtype=np.float64)
        self.vuv = np.asarray(self.vuv, dtype=bool)
        n = len(self.f0)
        if self.lsf.shape[0] != n or len(self.gain) != n or len(self.vuv) != n:
            raise ValueError("feature columns disagree on the frame count")

    @property
    def n_frames(self) -> int:
        return len(self.f0)

    def frame(self, i: int) -> AcousticFrame:
        return AcousticFrame(self.lsf[i].copy(), float(self.f0[i]), float(self.gain[i]),
                             bool(self.vuv[i]))

    def matrix(self, interpolate_f0: bool = True) -> np.ndarray:
        """(n, 43) matrix: lsf_1..lsf_40, f0, gain, vuv.

        With ``interpolate_f0`` unvoiced frames carry F0 linearly
        interpolated from their voiced neighbours (the vuv column keeps the
        truth).
        """
        f0 = interpolate_unvoiced(self.f0, self.vuv) if interpolate_f0 else self.f0
        return np.column_stack([self.lsf, f0, self.gain, self.vuv.astype(np.float64)])

    @classmethod
    def from_matrix(cls, m, spec, sample_rate, speaker_id=""):
        m = np.asarray(m, dtype=np.float64)
        vuv = m[:, VUV_COL] > 0.5
        f0 = np.where(vuv, m[:, F0_COL], 0.0)
        return cls(m[:, :LPC_ORDER].copy(), f0, m[:, GAIN_COL].copy(), vuv, spec,
                   sample_rate, speaker_id)

    def copy(self) -> "FeatureTrack":
        return replace(self, lsf=self.lsf.copy(), f0=self.f0.copy(), gain=self.gain.copy(),
                       vuv=self.vuv.copy())

    def equals(self, other: "FeatureTrack") -> bool:
        return (self.spec == other.spec and self.sample_rate == other.sample_rate
                and np.array_equal(self.lsf, other.lsf) and np.array_equal(self.f0, other.f0)
                and np.array_equal(self.gain, other.gain) and np.array_equal(self.vuv, other.vuv))


def interpolate_unvoiced(f0, vuv):
    f0 = np.asarray(f0, dtype=np.float64)
    voiced = np.flatnonzero(vuv)
    if voiced.size == 0:
        return np.zeros_like(f0)
    return np.interp(np.arange(len(f0)), voiced, f0[voiced])


# ---------------------------------------------------------------------------
# pitch and voicing


def _normalized_autocorrelation(frames, max_lag):
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    n = frames.shape[1]
    n_fft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(frames, n_fft, axis=1)
    r = np.fft.irfft(spec * np.conj(spec), n_fft, axis=1)[:, : max_lag + 1]
    sq = frames ** 2
    csum = np.concatenate([np.zeros((len(frames), 1)), np.cumsum(sq, axis=1)], axis=1)
    lags = np.arange(max_lag + 1)
    head = csum[:, n - lags]                    # energy of x[0 : n-lag]
    tail = csum[:, -1:] - csum[:, lags]         # energy of x[lag : n]
    denom = np.sqrt(head * tail)
    with np.errstate(divide="ignore", invalid="ignore"):
        nac = np.where(denom > 1e-20, r / np.maximum(denom, 1e-300), 0.0)
    return nac


def _lag_range(n, sample_rate, f0_min, f0_max):
    lo = max(int(np.floor(sample_rate / f0_max)), 2)
    # at least half the frame must overlap for a trustworthy normalisation
    hi = min(int(np.ceil(sample_rate / f0_min)), n - n // 2)
    return lo, hi


def _peaks(frames, lo, hi):
    nac = _normalized_autocorrelation(frames, hi + 1)
    mid = nac[:, lo:hi + 1]
    is_peak = (mid >= nac[:, lo - 1:hi]) & (mid >= nac[:, lo + 1:hi + 2]) & (mid > 0)
    return nac, mid, is_peak


def _refine(nac, rows, idx):
    """Parabolic interpolation around integer lags -> (lag, peak value)."""
    y0, y1, y2 = nac[rows, idx - 1], nac[rows, idx], nac[rows, idx + 1]
    curv = y0 - 2.0 * y1 + y2
    with np.errstate(divide="ignore", invalid="ignore"):
        shift = np.where(curv < 0, 0.5 * (y0 - y2) / curv, 0.0)
    shift = np.clip(shift, -0.5, 0.5)
    return idx + shift, y1 - 0.25 * (y0 - y2) * shift


def _chunked(fn, frames, *args):
    parts = [fn(frames[i:i + 1024], *args) for i in range(0, len(frames), 1024)]
    return tuple(np.concatenate([p[j] for p in parts]) for j in range(len(parts[0])))


def estimate_f0_batch(frames, sample_rate, f0_min=F0_MIN, f0_max=F0_MAX):
    """Vectorised :func:`estimate_f0` over rows of ``frames``."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if len(frames) > 1024:
        return _chunked(estimate_f0_batch, frames, sample_rate, f0_min, f0_max)
    lo, hi = _lag_range(frames.shape[1], sample_rate, f0_min, f0_max)
    if hi <= lo:
        return np.zeros(len(frames)), np.zeros(len(frames))
    nac, mid, is_peak = _peaks(frames, lo, hi)
    score = np.where(is_peak, mid, -np.inf)
    best = score.max(axis=1)
    # smallest lag whose peak is close to the best one avoids octave errors
    ok = is_peak & (mid >= 0.97 * best[:, None])
    rows = np.arange(len(frames))
    lag, peak = _refine(nac, rows, np.argmax(ok, axis=1) + lo)
    voiced_like = np.isfinite(best) & (best > 0)
    f0 = np.where(voiced_like, sample_rate / lag, 0.0)
    periodicity = np.where(voiced_like, np.clip(peak, 0.0, 1.0), 0.0)
    return f0, periodicity


def f0_candidates(frames, sample_rate, f0_min=F0_MIN, f0_max=F0_MAX, k=CANDIDATES):
    """Up to ``k`` strongest correlation peaks per row -> (f0, value), padded with 0 / -inf."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if len(frames) > 1024:
        return _chunked(f0_candidates, frames, sample_rate, f0_min, f0_max, k)
    lo, hi = _lag_range(frames.shape[1], sample_rate, f0_min, f0_max)
    f0 = np.zeros((len(frames), k))
    val = np.full((len(frames), k), -np.inf)
    if hi <= lo:
        return f0, val
    nac, mid, is_peak = _peaks(frames, lo, hi)
    score = np.where(is_peak, mid, -np.inf)
    order = np.argsort(-score, axis=1, kind="stable")[:, :k]
    rows = np.arange(len(frames))
    for j in range(order.shape[1]):
        present = np.isfinite(score[rows, order[:, j]])
        lag, peak = _refine(nac, rows, order[:, j] + lo)
        f0[:, j] = np.where(present, sample_rate / lag, 0.0)
        val[:, j] = np.where(present, peak, -np.inf)
    return f0, val


def smooth_f0_track(cand_f0, cand_val, voiced, f0_max=F0_MAX):
    """Viterbi choice among candidates per voiced run.

    Local cost favours strong, short-lag peaks (the single-frame rule);
    transitions cost in proportion to the octave distance, so isolated
    octave jumps lose to a continuous contour.
    """
    n, k = cand_f0.shape
    out = np.zeros(n)
    valid = np.isfinite(cand_val) & (cand_f0 > 0)
    with np.errstate(divide="ignore"):
        logf = np.where(valid, np.log2(np.maximum(cand_f0, 1e-9)), 0.0)
    local = np.where(valid, (1.0 - cand_val) + LAG_PENALTY * (np.log2(f0_max) - logf), np.inf)
    edges = np.flatnonzero(np.diff(np.concatenate([[0], voiced.astype(np.int8), [0]])))
    for start, stop in zip(edges[::2], edges[1::2]):
        cost = local[start].copy()
        back = np.zeros((stop - start, k), dtype=np.int64)
        for i in range(start + 1, stop):
            jump = OCTAVE_COST * np.abs(logf[i][:, None] - logf[i - 1][None, :])
            total = cost[None, :] + jump
            back[i - start] = np.argmin(total, axis=1)
            cost = total[np.arange(k), back[i - start]] + local[i]
        j = int(np.argmin(cost))
        for i in range(stop - 1, start - 1, -1):
            out[i] = cand_f0[i, j]
            j = back[i - start, j]
    return out


def estimate_f0(frame, sample_rate, f0_min=F0_MIN, f0_max=F0_MAX):
    """Normalised-autocorrelation pitch estimate -> (f0_hz, periodicity)."""
    f0, per = estimate_f0_batch(np.asarray(frame)[None, :], sample_rate, f0_min, f0_max)
    return float(f0[0]), float(per[0])


def gain_to_db(gain):
    return 20.0 * np.asarray(gain) / np.log(10.0)


def detect_voicing(periodicity, gain_db):
    """Voiced iff periodic enough and above the silence gate (gain in dB)."""
    voiced = (np.asarray(periodicity) >= VOICING_THRESHOLD) & (np.asarray(gain_db) >= SILENCE_DB)
    return bool(voiced) if voiced.ndim == 0 else voiced


def drop_short_runs(vuv, min_len=MIN_VOICED_FRAMES):
    """Unvoice voiced runs shorter than ``min_len`` frames."""
    vuv = np.array(vuv, dtype=bool)
    edges = np.flatnonzero(np.diff(np.concatenate([[0], vuv.astype(np.int8), [0]])))
    for start, stop in zip(edges[::2], edges[1::2]):
        if stop - start < min_len:
            vuv[start:stop] = False
    return vuv


# ---------------------------------------------------------------------------
# extraction


def _lsf_rows(lpc):
    try:
        return lpc_to_lsf(lpc)
    except LsfConversionError:
        pass
    out = np.empty_like(lpc)
    powers = np.arange(1, lpc.shape[1] + 1)
    for i, a in enumerate(lpc):
        gamma = 1.0
        while True:
            try:
                out[i] = lpc_to_lsf(a * gamma ** powers)
                break
            except LsfConversionError:
                if gamma < 0.9:
                    raise
                # bandwidth expansion pulls near-coincident roots apart
                gamma *= 0.998
        if gamma < 1.0:
            log.debug("frame %d: LSF conversion needed bandwidth expansion %.4f", i, gamma)
    return out


def _pitch_windows(x, spec, n_frames):
    # 2x frame length centred on each analysis frame: reaches f0_min = 50 Hz
    # at the canonical 20 ms frame with half-window overlap
    length = 2 * spec.frame_len
    centers = np.arange(n_frames) * spec.hop + spec.frame_len // 2
    pad = spec.frame_len
    xp = np.pad(x, (pad, pad + length))
    idx = (centers + pad - spec.frame_len)[:, None] + np.arange(length)[None, :]
    return xp[idx]


def extract_features(w: Waveform, spec: FrameSpec | None = None, order: int = LPC_ORDER,
                     speaker_id: str = "", f0_min=F0_MIN, f0_max=F0_MAX) -> FeatureTrack:
    spec = spec or FrameSpec.for_rate(w.sample_rate)
    x = w.samples
    raw = frame_signal(x, spec.with_window("rectangular"))
    lpc = lpc_from_frames(raw * spec.with_window("hann").window_array(), order,
                          w.sample_rate, WHITE_NOISE)
    lsf = _lsf_rows(lpc)
    gain = np.log(np.sqrt(np.mean(raw ** 2, axis=1)) + GAIN_EPS)
    windows = _pitch_windows(x, spec, len(raw))
    _, per = estimate_f0_batch(windows, w.sample_rate, f0_min, f0_max)
    vuv = drop_short_runs(np.atleast_1d(detect_voicing(per, gain_to_db(gain))))
    f0 = smooth_f0_track(*f0_candidates(windows, w.sample_rate, f0_min, f0_max), vuv, f0_max)
    f0 = np.where(vuv, np.clip(f0, f0_min, f0_max), 0.0)
    return FeatureTrack(lsf, f0, gain, vuv, spec, w.sample_rate, speaker_id)


# ---------------------------------------------------------------------------
# normalisation


@dataclass
class NormalizationStats:
    """Per-dimension z-scoring constants; vuv is passed through (mean 0, std 1)."""

    mean: np.ndarray
    std: np.ndarray
    dims: tuple = field(default=tuple([f"lsf{i + 1}" for i in range(LPC_ORDER)] + ["f0", "gain", "vuv"]))

    def to_dict(self):
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std],
                "dims": list(self.dims)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
                   tuple(d.get("dims", cls.__dataclass_fields__["dims"].default)))


def compute_norm_stats(tracks) -> NormalizationStats:
    tracks = list(tracks)
    if not tracks:
        raise ValueError("need at least one track")
    m = np.concatenate([t.matrix() for t in tracks], axis=0)
    mean = m.mean(axis=0)
    std = np.maximum(m.std(axis=0), STD_FLOOR)
    mean[VUV_COL], std[VUV_COL] = 0.0, 1.0
    return NormalizationStats(mean, std)


def normalize_track(t: FeatureTrack, stats: NormalizationStats) -> np.ndarray:
    """Track -> z-scored (n, 43) matrix (vuv column stays {0, 1})."""
    return (t.matrix() - stats.mean) / stats.std


def denormalize_track(m, stats: NormalizationStats, spec: FrameSpec, sample_rate: int,
                      speaker_id: str = "") -> FeatureTrack:
    return FeatureTrack.from_matrix(np.asarray(m) * stats.std + stats.mean, spec, sample_rate,
                                    speaker_id)


def upsample_features(t, hop: int | None = None) -> np.ndarray:
    """Repeat each frame row ``hop`` times (frame -> sample duplication)."""
    if isinstance(t, FeatureTrack):
        hop = t.spec.hop if hop is None else hop
        t = t.matrix()
    if hop is None:
        raise ValueError("hop is required for a bare matrix")
    return np.repeat(np.asarray(t), hop, axis=0)


# ---------------------------------------------------------------------------
# modification


def scale_f0(t: FeatureTrack, factor: float) -> FeatureTrack:
    if not factor > 0:
        raise ValueError("F0 scaling factor must be positive")
    out = t.copy()
    out.f0 = np.where(t.vuv, t.f0 * factor, t.f0)
    return out


def _enforce_lsf_order(lsf, gap=LSF_MIN_GAP):
    lsf = np.sort(lsf, axis=1)
    p = lsf.shape[1]
    steps = np.arange(p) * gap
    lsf = np.maximum.accumulate(np.maximum(lsf, gap) - steps, axis=1) + steps
    top = np.pi - gap - steps[::-1]
    lsf = lsf - top
    lsf = np.minimum.accumulate(np.minimum(lsf, 0.0)[:, ::-1], axis=1)[:, ::-1] + top
    return lsf


def perturb_features(t: FeatureTrack, noise_std: float, seed: int,
                     stats: NormalizationStats | None = None,
                     f0_min=F0_MIN, f0_max=F0_MAX) -> FeatureTrack:
    """Add seeded Gaussian noise (std in normalised units) to lsf/f0/gain."""
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    if noise_std == 0:
        return t.copy()
    stats = stats or compute_norm_stats([t])
    rng = np.random.default_rng(seed)
    m = normalize_track(t, stats)
    m[:, :VUV_COL] += rng.normal(0.0, noise_std, size=(len(m), VUV_COL))
    out = denormalize_track(m, stats, t.spec, t.sample_rate, t.speaker_id)
    out.lsf = _enforce_lsf_order(out.lsf)
    out.f0 = np.where(out.vuv, np.clip(out.f0, f0_min, f0_max), 0.0)
    return out
