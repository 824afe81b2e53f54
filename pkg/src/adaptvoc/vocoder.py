"""WaveNet and ExcitNet pipelines: training targets, neural synthesis, copy synthesis.

WaveNet models the mu-law codes of the speech samples themselves. ExcitNet
models the codes of the LP residual (scaled into the quantiser's range) and
recovers speech through the LP synthesis filter built from the conditioning
LSFs.
"""
from __future__ import annotations

import enum
import logging
import zlib
from dataclasses import dataclass

import numpy as np

from .features import (FeatureTrack, NormalizationStats, compute_norm_stats, extract_features,
                       interpolate_unvoiced, normalize_track, upsample_features)
from .network import IncrementalSampler, choose_codes
from .signal_core import (Waveform, decode_mulaw, encode_mulaw, lp_analysis_filter,
                          lp_synthesis_filter, lsf_to_lpc)

log = logging.getLogger(__name__)

SCALE_PERCENTILE = 99.0
MIN_SCALE = 1e-6


class VocoderKind(str, enum.Enum):
    WAVENET = "wavenet"
    EXCITNET = "excitnet"

    @classmethod
    def parse(cls, kind) -> "VocoderKind":
        try:
            return cls(str(getattr(kind, "value", kind)).lower())
        except ValueError:
            raise ValueError(f"unknown vocoder kind {kind!r}") from None


class KindMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ExcitationScaling:
    scale: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError("excitation scale must be positive and finite")


@dataclass
class PreparedTargets:
    codes: np.ndarray        # (n,) int64 in [0, 255]
    conditions: np.ndarray   # (n, 43) normalised, upsampled
    scaling: ExcitationScaling


def track_lpc(t: FeatureTrack) -> np.ndarray:
    return lsf_to_lpc(t.lsf)


def residual(w: Waveform, t: FeatureTrack) -> np.ndarray:
    """LP residual of ``w`` under the track's (LSF-derived) coefficients."""
    return lp_analysis_filter(w.samples, track_lpc(t), t.spec)


def mean_voiced_gain(t: FeatureTrack) -> float:
    g = t.gain[t.vuv] if t.vuv.any() else t.gain
    return float(np.mean(g))


def scale_from_gain(t: FeatureTrack, calibration: float) -> ExcitationScaling:
    """Synthesis-time residual scale: exp(mean voiced log-gain) x calibration."""
    return ExcitationScaling(max(float(np.exp(mean_voiced_gain(t)) * calibration), MIN_SCALE))


def fit_calibration(tracks, scalings) -> float:
    """Median ratio of measured residual scale to exp(mean voiced log-gain)."""
    ratios = [s.scale / np.exp(mean_voiced_gain(t)) for t, s in zip(tracks, scalings)]
    if not ratios:
        raise ValueError("need at least one utterance to calibrate")
    return float(np.median(ratios))


def _aligned_length(w: Waveform, t: FeatureTrack) -> int:
    n_cond = t.n_frames * t.spec.hop
    n = min(len(w), n_cond)
    if n_cond != len(w):
        # frames*hop stops short of the signal end by up to frame_len - hop samples by design
        level = logging.DEBUG if 0 <= len(w) - n_cond <= t.spec.frame_len else logging.WARNING
        log.log(level, "conditions cover %d samples, waveform has %d: trimming to %d",
                n_cond, len(w), n)
    return n


def prepare_targets(w: Waveform, t: FeatureTrack, kind, stats: NormalizationStats | None = None):
    """(codes, upsampled normalised conditions, scaling) for one utterance."""
    kind = VocoderKind.parse(kind)
    if w.sample_rate != t.sample_rate:
        raise ValueError("waveform and features disagree on the sample rate")
    stats = stats or compute_norm_stats([t])
    n = _aligned_length(w, t)
    cond = upsample_features(normalize_track(t, stats), t.spec.hop)[:n]
    if kind is VocoderKind.WAVENET:
        return PreparedTargets(encode_mulaw(w.samples[:n]), cond, ExcitationScaling(1.0))
    e = residual(w, t)[:n]
    scale = max(float(np.percentile(np.abs(e), SCALE_PERCENTILE)), MIN_SCALE)
    codes = encode_mulaw(np.clip(e / scale, -1.0, 1.0))
    return PreparedTargets(codes, cond, ExcitationScaling(scale))


def decode_targets(codes, t: FeatureTrack, kind, scaling: ExcitationScaling,
                   check_stability: bool = True) -> np.ndarray:
    """Codes -> speech samples (ExcitNet: rescale then LP synthesis filter)."""
    kind = VocoderKind.parse(kind)
    x = decode_mulaw(np.asarray(codes))
    if kind is VocoderKind.WAVENET:
        return x
    return lp_synthesis_filter(x * scaling.scale, track_lpc(t), t.spec, check_stability)


def _clamp(x, label=""):
    x = np.asarray(x, dtype=np.float64)
    clipped = int(np.count_nonzero(np.abs(x) > 1.0))
    if clipped:
        log.info("%s: clamped %d of %d samples to [-1, 1]", label or "output", clipped, len(x))
    return np.clip(x, -1.0, 1.0)


# ---------------------------------------------------------------------------
# neural synthesis


def utterance_seed(seed: int, key: str) -> int:
    """Stable per-utterance seed (independent of evaluation order)."""
    return (int(seed) * 1_000_003 + zlib.crc32(key.encode("utf-8"))) % (2 ** 63)


def synthesize_batch(ckpt, tracks, mode: str = "random", seeds=None) -> list[Waveform]:
    """Generate one waveform per track, running all streams in one sampler batch.

    Every stream draws from its own generator, so a stream's random choices
    depend only on its seed.
    """
    kind = VocoderKind.parse(ckpt.kind)
    tracks = list(tracks)
    if not tracks:
        return []
    seeds = list(range(len(tracks))) if seeds is None else list(seeds)
    for t in tracks:
        if t.sample_rate != ckpt.sample_rate:
            raise ValueError(f"features at {t.sample_rate} Hz, checkpoint trained at {ckpt.sample_rate} Hz")
    lengths = [t.n_frames * t.spec.hop for t in tracks]
    T = max(lengths)
    C = ckpt.config.condition_dim
    dtype = ckpt.params["embed"].dtype
    cond = np.zeros((len(tracks), T, C), dtype=dtype)
    for b, t in enumerate(tracks):
        cond[b, :lengths[b]] = upsample_features(normalize_track(t, ckpt.stats), t.spec.hop)
    rngs = [np.random.default_rng(s) for s in seeds]
    sampler = IncrementalSampler(ckpt.params, ckpt.config, batch=len(tracks))
    codes = np.empty((len(tracks), T), dtype=np.int64)
    prev = None
    for i in range(T):
        logits = sampler.logits(prev, cond[:, i])
        if mode == "greedy":
            prev = choose_codes(logits, None, "greedy")
        else:
            prev = np.array([choose_codes(logits[b:b + 1], rngs[b], mode)[0]
                             for b in range(len(tracks))])
        codes[:, i] = prev
    out = []
    for b, t in enumerate(tracks):
        c = codes[b, :lengths[b]]
        scaling = ExcitationScaling(1.0) if kind is VocoderKind.WAVENET \
            else scale_from_gain(t, ckpt.calibration)
        x = decode_targets(c, t, kind, scaling)
        out.append(Waveform(_clamp(x, t.speaker_id or "synth"), t.sample_rate))
    return out


def synthesize(ckpt, t: FeatureTrack, mode: str = "random", seed: int = 0,
               kind=None) -> Waveform:
    """Neural vocoding of one feature track; length = frames * hop."""
    if kind is not None and VocoderKind.parse(kind) is not VocoderKind.parse(ckpt.kind):
        raise KindMismatchError(f"checkpoint holds a {ckpt.kind} model, {VocoderKind.parse(kind).value} requested")
    return synthesize_batch(ckpt, [t], mode, [seed])[0]


# ---------------------------------------------------------------------------
# copy synthesis and pitch modification without a model


def _voiced_runs(voiced):
    edges = np.flatnonzero(np.diff(np.concatenate([[0], voiced.astype(np.int8), [0]])))
    return list(zip(edges[::2], edges[1::2]))


def _epoch_strength(x, voiced):
    """Short-smoothed signal oriented so glottal pulses are positive peaks."""
    k = np.hanning(7)
    s = np.convolve(np.asarray(x, dtype=np.float64), k / k.sum(), mode="same")
    v = s[voiced] if voiced.any() else s
    skew = np.mean((v - v.mean()) ** 3)
    return s if skew >= 0 else -s


def _pitch_marks(speech, strength, period, start, stop):
    """Pitch-synchronous marks in [start, stop).

    The first mark sits on the strongest glottal epoch within one period of
    the run start; each following mark is the shift in +-15% of a period
    that best matches the previous period of ``speech`` (normalised
    cross-correlation), which keeps the chain phase-locked where residual
    peaks alone are too noisy. The finished chain is then shifted by the one
    offset that puts it on the strongest epochs overall.
    """
    p0 = max(int(period[start]), 1)
    m = start + int(np.argmax(strength[start:min(start + p0, stop)]))
    marks = []
    n = len(speech)
    while m < stop:
        marks.append(m)
        p = max(int(round(period[m])), 2)
        lo, hi = m + max(int(0.85 * p), 1), m + int(1.15 * p) + 1
        a0, a1 = m - p // 2, m + p - p // 2
        if a0 < 0 or hi + p - p // 2 > n or lo >= stop:
            if m + p >= stop:
                break
            m += p
            continue
        tmpl = speech[a0:a1]
        lags = np.arange(lo, hi)
        cand = np.lib.stride_tricks.sliding_window_view(speech[lo - p // 2:hi - 1 + p - p // 2], p)
        score = cand @ tmpl / np.maximum(np.sqrt(np.sum(cand ** 2, axis=1) * (tmpl @ tmpl)), 1e-20)
        m = int(lags[int(np.argmax(score))])
    marks = np.asarray(marks, dtype=np.int64)
    if len(marks) > 1:
        # the chain inherits the phase of its first mark, which often sits in a
        # weak onset; re-anchor the whole chain where the epochs agree best
        half = max(int(np.median(np.diff(marks))) // 2, 1)
        offsets = np.arange(-half, half + 1)
        idx = np.clip(marks[None, :] + offsets[:, None], start, stop - 1)
        marks = marks + offsets[int(np.argmax(strength[idx].sum(axis=1)))]
        marks = marks[(marks >= start) & (marks < stop)]
    return marks


def _sample_contours(t: FeatureTrack, n: int):
    """Per-sample F0 (interpolated through unvoiced frames) and a voicing mask.

    The mask follows frame centres and is widened by one frame length on
    each side, so weakly periodic onsets and tails get re-pitched together
    with the frames the tracker calls voiced.
    """
    half = t.spec.frame_len / 2.0
    centers = np.arange(t.n_frames) * t.spec.hop + half
    f0 = interpolate_unvoiced(t.f0, t.vuv)
    pos = np.arange(n)
    f0s = np.interp(pos, centers, f0) if t.vuv.any() else np.zeros(n)
    nearest = np.clip(np.round((pos - half) / t.spec.hop).astype(np.int64), 0, t.n_frames - 1)
    voiced = t.vuv[nearest]
    k = t.spec.frame_len
    if k and voiced.any():
        voiced = np.convolve(voiced.astype(np.int64), np.ones(2 * k + 1, dtype=np.int64), "same") > 0
    return f0s, voiced


def psola(x, t: FeatureTrack, factor: float, speech=None, epoch_signal=None) -> np.ndarray:
    """Time-domain PSOLA pitch scaling of ``x`` by ``factor``, duration kept.

    Voiced stretches are rebuilt from two-period Hann grains taken at
    glottal epochs and re-spaced at the scaled period; unvoiced samples pass
    through unchanged. Marks follow ``speech`` (default ``x``) and are
    anchored on peaks of ``epoch_signal`` (default ``x``); the LP residual
    gives far sharper epochs than the speech itself.
    """
    x = np.asarray(x, dtype=np.float64)
    if factor == 1.0 or not t.vuv.any():
        return x.copy()
    if not factor > 0:
        raise ValueError("pitch factor must be positive")
    n = len(x)
    f0, voiced = _sample_contours(t, n)
    period = np.where(f0 > 0, t.sample_rate / np.maximum(f0, 1e-6), 0.0)
    out = np.where(voiced, 0.0, x)
    strength = _epoch_strength(x if epoch_signal is None else epoch_signal, voiced)
    for start, stop in _voiced_runs(voiced):
        run_marks = _pitch_marks(x if speech is None else speech, strength, period, start, stop)
        if len(run_marks) == 0:
            continue
        ts = float(run_marks[0])
        while ts < stop:
            # blend the two epoch-aligned grains around ts so consecutive
            # output periods evolve smoothly instead of repeating or skipping
            k = int(np.searchsorted(run_marks, ts, side="right")) - 1
            if k < 0:
                pair, alpha = (run_marks[0], run_marks[0]), 0.0
            elif k >= len(run_marks) - 1:
                pair, alpha = (run_marks[-1], run_marks[-1]), 0.0
            else:
                pair = (run_marks[k], run_marks[k + 1])
                alpha = (ts - pair[0]) / max(pair[1] - pair[0], 1)
            # two synthesis periods at most: longer grains carry the previous
            # analysis period's ringing into the new, shorter spacing
            p_a = period[min(int(ts), n - 1)]
            half = max(int(round(min(p_a, p_a / factor))), 2)
            win = np.hanning(2 * half + 1)
            grain = np.zeros(2 * half + 1)
            for a, wgt in zip(pair, (1.0 - alpha, alpha)):
                if wgt == 0.0:
                    continue
                lo_a = int(a) - half
                src_lo, src_hi = max(lo_a, 0), min(int(a) + half + 1, n)
                grain[src_lo - lo_a:src_hi - lo_a] += wgt * x[src_lo:src_hi]
            grain *= win
            dst = int(round(ts)) - half
            d_lo, d_hi = max(dst, start), min(dst + len(grain), stop)
            if d_hi > d_lo:
                out[d_lo:d_hi] += grain[d_lo - dst:d_hi - dst]
            ts += max(period[min(int(ts), n - 1)] / factor, 1.0)
    return out


def pitch_scaled_speech(w: Waveform, t: FeatureTrack, factor: float) -> Waveform:
    """PSOLA-scaled copy of ``w`` (epochs from the track's LP residual)."""
    n = _aligned_length(w, t)
    y = psola(w.samples[:n], t, factor, epoch_signal=residual(w, t)[:n])
    return Waveform(_clamp(y, "psola"), w.sample_rate)


def copy_synthesis(w: Waveform, kind, t: FeatureTrack | None = None,
                   f0_factor: float = 1.0) -> Waveform:
    """Ground-truth pipeline: targets straight back through the decoder, no network.

    With ``f0_factor`` != 1 the speech is first pitch-scaled by PSOLA and
    then coded with the original track's features (the LP filter keeps the
    original envelope), which gives a model-free reference system for F0
    modification.
    """
    kind = VocoderKind.parse(kind)
    t = t if t is not None else extract_features(w)
    if f0_factor != 1.0:
        w = pitch_scaled_speech(w, t, f0_factor)
    prep = prepare_targets(w, t, kind)
    x = decode_targets(prep.codes, t, kind, prep.scaling)
    return Waveform(_clamp(x, "copy-synthesis"), w.sample_rate)
