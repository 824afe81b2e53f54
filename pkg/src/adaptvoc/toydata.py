"""Synthetic glottal-pulse speakers for desk-scale experiments.

Each voice is a Rosenberg glottal pulse train (with lip-radiation
differencing) driven by a smooth intonation contour and passed through a
time-varying cascade of four formant resonators. Fricative bursts of band
passed noise and pauses break utterances into syllables. Speakers differ in
pitch register, vocal-tract length (formant scaling), open quotient and
breathiness, which is enough structure for speaker-dependent vs. adapted
models to behave differently.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.signal

from .corpus import Utterance
from .signal_core import FrameSpec, Waveform, lp_synthesis_filter

TOY_RATE = 16000

# F1..F4 (Hz) for an adult male-sized tract
VOWELS = {
    "a": (730.0, 1090.0, 2440.0, 3400.0),
    "e": (530.0, 1840.0, 2480.0, 3500.0),
    "i": (300.0, 2250.0, 3000.0, 3700.0),
    "o": (570.0, 840.0, 2410.0, 3400.0),
    "u": (320.0, 870.0, 2240.0, 3300.0),
}
BANDWIDTHS = (70.0, 100.0, 140.0, 180.0)


@dataclass(frozen=True)
class Speaker:
    name: str
    f0_hz: float
    formant_scale: float = 1.0
    open_quotient: float = 0.6
    breathiness: float = 0.1  # aspiration noise relative to the pulse level
    intonation: float = 0.15  # relative F0 excursion


# 4 speaker-independent training voices and one held-out target voice
SI_SPEAKERS = (
    Speaker("m1", 125.0, 1.00, 0.65, 0.10, 0.15),
    Speaker("f1", 225.0, 1.18, 0.55, 0.15, 0.18),
    Speaker("m2", 150.0, 1.06, 0.70, 0.12, 0.12),
    Speaker("f2", 195.0, 1.14, 0.60, 0.10, 0.20),
)
TARGET_SPEAKER = Speaker("t1", 175.0, 1.10, 0.50, 0.08, 0.16)


def _rosenberg(phase, open_quotient):
    rise = 0.6 * open_quotient
    fall = 0.4 * open_quotient
    g = np.zeros_like(phase)
    up = phase < rise
    g[up] = 0.5 * (1.0 - np.cos(np.pi * phase[up] / rise))
    down = (phase >= rise) & (phase < rise + fall)
    g[down] = np.cos(0.5 * np.pi * (phase[down] - rise) / fall)
    return g


def _smooth_envelope(n, attack):
    env = np.ones(n)
    k = min(attack, n // 2)
    if k > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(k) / k))
        env[:k] = ramp
        env[n - k:] = ramp[::-1]
    return env


def _formant_filter_coeffs(formants, sample_rate, bandwidth_scale=1.0):
    """Order-8 all-pole predictor coefficients for 4 resonators per block."""
    a_poly = np.ones((len(formants), 1))
    for j in range(4):
        r = np.exp(-np.pi * BANDWIDTHS[j] * bandwidth_scale / sample_rate)
        theta = 2.0 * np.pi * formants[:, j] / sample_rate
        sec = np.stack([np.ones(len(formants)), -2.0 * r * np.cos(theta),
                        np.full(len(formants), r * r)], axis=1)
        a_poly = np.stack([np.convolve(p, s) for p, s in zip(a_poly, sec)])
    return -a_poly[:, 1:]


def synth_utterance(speaker: Speaker, seed: int, duration_s: float = 2.0,
                    sample_rate: int = TOY_RATE, background: float = 2e-4,
                    fricatives: bool = True, return_truth: bool = False):
    """Generate one utterance of roughly ``duration_s`` seconds.

    With ``return_truth`` also returns the per-sample F0 contour and voicing
    envelope used to build it.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    block = sample_rate // 200  # 5 ms control rate
    n_blocks = -(-n // block)
    n = n_blocks * block

    # syllable plan: (start, end, vowel, voiced)
    lead = int(0.08 * sample_rate)
    bounds = [lead]
    plan = []
    t = lead
    while t < n - lead:
        fric = fricatives and rng.random() < 0.35
        if fric:
            flen = int(rng.uniform(0.05, 0.09) * sample_rate)
            plan.append((t, min(t + flen, n - lead), None))
            t += flen
        vlen = int(rng.uniform(0.14, 0.26) * sample_rate)
        plan.append((t, min(t + vlen, n - lead), rng.choice(list(VOWELS))))
        t += vlen
        if rng.random() < 0.2:
            t += int(rng.uniform(0.04, 0.1) * sample_rate)
        bounds.append(t)

    # formant trajectories at block rate, gliding between vowel targets
    centers, targets = [], []
    for s, e, v in plan:
        if v is not None and e > s:
            centers.append((s + e) / 2 / block)
            targets.append(np.asarray(VOWELS[v]) * speaker.formant_scale)
    if not centers:
        centers, targets = [n / 2 / block], [np.asarray(VOWELS["a"]) * speaker.formant_scale]
    centers = np.asarray(centers)
    targets = np.asarray(targets)
    bidx = np.arange(n_blocks) + 0.5
    formants = np.column_stack([np.interp(bidx, centers, targets[:, j]) for j in range(4)])
    formants *= 1.0 + 0.02 * rng.standard_normal((1, 4))

    # intonation: declination plus one smooth accent per syllable
    tt = np.arange(n) / n
    f0 = speaker.f0_hz * (1.0 + speaker.intonation * (0.5 - tt))
    for s, e, v in plan:
        if v is not None and e > s:
            c = (s + e) / 2 / n
            width = (e - s) / n
            f0 *= 1.0 + speaker.intonation * rng.uniform(-0.3, 0.6) * np.exp(-0.5 * ((tt - c) / width) ** 2)
    phase = np.cumsum(f0 / sample_rate) % 1.0
    glottal = _rosenberg(phase, speaker.open_quotient)
    source = np.diff(glottal, prepend=0.0)
    # aspiration noise relative to the pulse-derivative level, gated by the glottis
    level = np.sqrt(np.mean(source ** 2))
    source += speaker.breathiness * level * rng.standard_normal(n) * (0.5 + glottal)

    voicing = np.zeros(n)
    for s, e, v in plan:
        if v is not None and e > s:
            voicing[s:e] = _smooth_envelope(e - s, int(0.015 * sample_rate))
    source *= voicing

    spec = FrameSpec(block, block, "rectangular")
    coeffs = _formant_filter_coeffs(formants, sample_rate)
    voiced = lp_synthesis_filter(source, coeffs, spec)
    voiced /= max(np.max(np.abs(voiced)), 1e-12)

    x = voiced
    for s, e, v in plan:
        if v is None and e > s:
            lo = rng.uniform(2000.0, 3500.0) * min(speaker.formant_scale, 1.3)
            hi = min(lo * 2.0, 0.45 * sample_rate)
            sos = scipy.signal.butter(2, [lo, hi], btype="bandpass", fs=sample_rate, output="sos")
            burst = scipy.signal.sosfilt(sos, rng.standard_normal(e - s))
            burst *= 0.12 / max(np.std(burst), 1e-12) * _smooth_envelope(e - s, int(0.01 * sample_rate))
            x[s:e] += burst
    x += background * rng.standard_normal(n)
    x *= 0.6 / max(np.max(np.abs(x)), 1e-12)
    w = Waveform(np.clip(x, -1.0, 1.0), sample_rate)
    if return_truth:
        return w, f0, voicing
    return w


ToyUtterance = Utterance


def make_corpus(speakers=SI_SPEAKERS, minutes_total: float = 5.0, utt_seconds: float = 2.0,
                dev_per_speaker: int = 2, test_per_speaker: int = 0, seed: int = 0,
                sample_rate: int = TOY_RATE):
    """Utterances for several speakers, ``minutes_total`` of training audio."""
    per_spk = max(1, int(round(minutes_total * 60.0 / utt_seconds / len(speakers))))
    out = []
    for si, spk in enumerate(speakers):
        counts = (("train", per_spk), ("dev", dev_per_speaker), ("test", test_per_speaker))
        k = 0
        for split, count in counts:
            for _ in range(count):
                w = synth_utterance(spk, seed=seed * 100_003 + si * 10_007 + k,
                                    duration_s=utt_seconds, sample_rate=sample_rate)
                out.append(ToyUtterance(f"{spk.name}_{k:04d}", spk.name, split, w))
                k += 1
    return out


def make_target_corpus(speaker=TARGET_SPEAKER, train_seconds: float = 30.0,
                       utt_seconds: float = 2.0, dev: int = 3, test: int = 3, seed: int = 1,
                       sample_rate: int = TOY_RATE):
    n_train = max(1, int(round(train_seconds / utt_seconds)))
    out = []
    for k in range(n_train + dev + test):
        split = "train" if k < n_train else ("dev" if k < n_train + dev else "test")
        w = synth_utterance(speaker, seed=seed * 100_003 + 77_777 + k, duration_s=utt_seconds,
                            sample_rate=sample_rate)
        out.append(ToyUtterance(f"{speaker.name}_{k:04d}", speaker.name, split, w))
    return out
