"""Objective metrics and the system-comparison / F0-scaling experiment grids.

A *system* is either a trained :class:`~adaptvoc.checkpoint.Checkpoint` or a
:class:`CopySystem`, which re-synthesises the reference through the codec
(and, for ExcitNet, the LP filter) with no model in the loop.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

from .features import FeatureTrack, extract_features, perturb_features, scale_f0
from .fileio import atomic_write_text
from .signal_core import FrameSpec, Waveform, frame_signal
from .vocoder import copy_synthesis, synthesize_batch, utterance_seed

log = logging.getLogger(__name__)

FFT_SIZE = 512
SPECTRAL_FLOOR = 1e-10
F0_FACTORS = (0.6, 0.8, 1.0, 1.2)
AGGREGATE = "mean"
DEFAULT_PERTURB_SIGMA = 0.1  # normalised units; stands in for acoustic-model error
COMPARISON_HEADER = ("speaker", "system", "utterance", "lsd_db", "f0_rmse_hz")
F0MOD_HEADER = ("speaker", "system", "factor", "f0_rmse_hz")


# ---------------------------------------------------------------------------
# metrics


def log_spectra(x, spec: FrameSpec, n_fft: int = FFT_SIZE) -> np.ndarray:
    mag = np.abs(np.fft.rfft(frame_signal(x, spec), n_fft, axis=1))
    return 20.0 * np.log10(np.maximum(mag, SPECTRAL_FLOOR))


def lsd(reference: Waveform, test: Waveform, spec: FrameSpec | None = None) -> float:
    """Mean over Hann frames of the RMS log-magnitude difference (dB), 512-point FFT."""
    if reference.sample_rate != test.sample_rate:
        raise ValueError(f"sample rates differ: {reference.sample_rate} vs {test.sample_rate}")
    n = min(len(reference), len(test))
    if n == 0:
        raise ValueError("signals do not overlap")
    spec = spec or FrameSpec.for_rate(reference.sample_rate)
    if spec.frame_len > FFT_SIZE:
        raise ValueError(f"frame length {spec.frame_len} exceeds the {FFT_SIZE}-point FFT")
    d = log_spectra(reference.samples[:n], spec) - log_spectra(test.samples[:n], spec)
    return float(np.mean(np.sqrt(np.mean(d * d, axis=1))))


def f0_rmse(ref: FeatureTrack, test: FeatureTrack) -> float:
    """RMSE (Hz) over frames voiced in both tracks."""
    n = min(ref.n_frames, test.n_frames)
    both = ref.vuv[:n] & test.vuv[:n]
    if not both.any():
        log.warning("no frames voiced in both tracks; F0 RMSE reported as 0")
        return 0.0
    d = ref.f0[:n][both] - test.f0[:n][both]
    return float(np.sqrt(np.mean(d * d)))


# ---------------------------------------------------------------------------
# systems


@dataclass(frozen=True)
class CopySystem:
    """Codec-only pseudo-system: ground-truth targets decoded without a model."""

    kind: str = "wavenet"


def _synthesize(system, utterances, tracks, seed, mode):
    """One waveform per utterance, conditioned on ``tracks`` (aligned lists)."""
    if isinstance(system, CopySystem):
        raise TypeError("copy systems are synthesised from audio, not features")
    seeds = [utterance_seed(seed, u.utt_id) for u in utterances]
    return synthesize_batch(system, tracks, mode, seeds)


def _reference_tracks(utterances, tracks):
    tracks = dict(tracks or {})
    return [tracks.get(u.utt_id) or extract_features(u.wave, speaker_id=u.speaker)
            for u in utterances]


def _speaker_label(utterances) -> str:
    speakers = sorted({u.speaker for u in utterances})
    return speakers[0] if len(speakers) == 1 else "+".join(speakers)


# ---------------------------------------------------------------------------
# comparison grid


@dataclass(frozen=True)
class MetricRow:
    speaker: str
    system: str
    utterance: str
    lsd_db: float
    f0_rmse_hz: float
    count: int = 1

    def __post_init__(self):
        for v in (self.lsd_db, self.f0_rmse_hz):
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"metrics must be finite and nonnegative, got {v}")


def run_comparison(utterances, systems: dict, seed: int = 0, mode: str = "random",
                   perturb_sigma: float | None = None, tracks: dict | None = None) -> list[MetricRow]:
    """LSD and F0 RMSE per test utterance for every system, plus a mean row per system.

    With ``perturb_sigma`` the models are driven by seeded noisy features
    (an acoustic-model stand-in); metrics are always taken against the
    clean reference.
    """
    utterances = sorted(utterances, key=lambda u: u.utt_id)
    if not utterances:
        raise ValueError("no test utterances")
    refs = _reference_tracks(utterances, tracks)
    cond = refs
    if perturb_sigma:
        cond = [perturb_features(t, perturb_sigma, utterance_seed(seed, "perturb:" + u.utt_id))
                for u, t in zip(utterances, refs)]
    speaker = _speaker_label(utterances)
    rows = []
    for label in sorted(systems):
        system = systems[label]
        if isinstance(system, CopySystem):
            outs = [copy_synthesis(u.wave, system.kind, t) for u, t in zip(utterances, refs)]
        else:
            outs = _synthesize(system, utterances, cond, seed, mode)
        per = []
        for u, ref, out in zip(utterances, refs, outs):
            test = extract_features(out)
            per.append(MetricRow(u.speaker, label, u.utt_id, lsd(u.wave, out), f0_rmse(ref, test)))
        rows.extend(per)
        rows.append(MetricRow(speaker, label, AGGREGATE, float(np.mean([r.lsd_db for r in per])),
                              float(np.mean([r.f0_rmse_hz for r in per])), len(per)))
    return rows


def aggregate(rows, metric: str = "lsd_db") -> dict:
    """system -> aggregate value of ``metric``."""
    return {r.system: getattr(r, metric) for r in rows if r.utterance == AGGREGATE}


# ---------------------------------------------------------------------------
# F0 scaling grid


@dataclass(frozen=True)
class F0ModRow:
    speaker: str
    system: str
    factor: float
    f0_rmse_hz: float

    def __post_init__(self):
        if not (np.isfinite(self.f0_rmse_hz) and self.f0_rmse_hz >= 0):
            raise ValueError(f"F0 RMSE must be finite and nonnegative, got {self.f0_rmse_hz}")


def run_f0_modification(utterances, systems: dict, factors=F0_FACTORS, seed: int = 0,
                        mode: str = "random", tracks: dict | None = None) -> list[F0ModRow]:
    """Mean F0 RMSE against the scaled trajectory, for every (system, factor).

    Synthesis uses the same per-utterance seeds and batching as
    :func:`run_comparison`, so factor 1.0 reproduces its F0 column exactly.
    """
    utterances = sorted(utterances, key=lambda u: u.utt_id)
    if not utterances:
        raise ValueError("no test utterances")
    factors = [float(f) for f in factors]
    if any(not f > 0 for f in factors):
        raise ValueError("scaling factors must be positive")
    refs = _reference_tracks(utterances, tracks)
    speaker = _speaker_label(utterances)
    rows = []
    for label in sorted(systems):
        system = systems[label]
        for factor in factors:
            scaled = [scale_f0(t, factor) for t in refs]
            if isinstance(system, CopySystem):
                outs = [copy_synthesis(u.wave, system.kind, t, f0_factor=factor)
                        for u, t in zip(utterances, refs)]
            else:
                outs = _synthesize(system, utterances, scaled, seed, mode)
            errs = [f0_rmse(s, extract_features(out)) for s, out in zip(scaled, outs)]
            rows.append(F0ModRow(speaker, label, factor, float(np.mean(errs))))
    return rows


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def rows_to_csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(getattr(r, h)) for h in header])
    return buf.getvalue()


def write_rows(rows, path, header) -> None:
    atomic_write_text(path, rows_to_csv(rows, header))


def parse_comparison_csv(text: str) -> list[MetricRow]:
    rd = csv.DictReader(io.StringIO(text))
    if tuple(rd.fieldnames or ()) != COMPARISON_HEADER:
        raise ValueError(f"unexpected header {rd.fieldnames}")
    return [MetricRow(r["speaker"], r["system"], r["utterance"], float(r["lsd_db"]),
                      float(r["f0_rmse_hz"])) for r in rd]


def parse_f0mod_csv(text: str) -> list[F0ModRow]:
    rd = csv.DictReader(io.StringIO(text))
    if tuple(rd.fieldnames or ()) != F0MOD_HEADER:
        raise ValueError(f"unexpected header {rd.fieldnames}")
    return [F0ModRow(r["speaker"], r["system"], float(r["factor"]), float(r["f0_rmse_hz"]))
            for r in rd]

