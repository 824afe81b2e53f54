"""Speaker-dependent, speaker-independent and speaker-adapted training.

A training step consumes one contiguous segment of about
``batch_target_samples`` samples. Each segment carries up to
``receptive_field - 1`` samples of left context that are run through the
network but not scored, so a segment's loss matches what the model would
see inside the full utterance.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .checkpoint import Checkpoint, ConfigMismatchError
from .corpus import check_corpus, select
from .features import NormalizationStats, compute_norm_stats, extract_features
from .network import (AdamState, NetConfig, adam_step, forward_teacher_forced, loss_and_grad,
                      nll_loss, receptive_field, xavier_init)
from .vocoder import VocoderKind, fit_calibration, prepare_targets

log = logging.getLogger(__name__)

EVAL_CHUNK = 16000


class TrainMode(str, enum.Enum):
    SD = "sd"
    SI = "si"
    SA = "sa"

    @classmethod
    def parse(cls, mode) -> "TrainMode":
        try:
            return cls(str(getattr(mode, "value", mode)).lower())
        except ValueError:
            raise ValueError(f"unknown training mode {mode!r}") from None


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_target_samples: int = 30000
    steps: int = 1000
    lr: float = 1e-4
    seed: int = 0
    dev_eval_interval: int = 100
    kind: str = "wavenet"

    def __post_init__(self):
        if self.batch_target_samples <= 0 or self.dev_eval_interval <= 0:
            raise ValueError("batch_target_samples and dev_eval_interval must be positive")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        VocoderKind.parse(self.kind)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


# ---------------------------------------------------------------------------
# data


@dataclass
class PreparedUtterance:
    utt_id: str
    speaker: str
    split: str
    codes: np.ndarray
    conditions: np.ndarray


@dataclass
class PreparedCorpus:
    utterances: list
    stats: NormalizationStats
    kind: VocoderKind
    calibration: float
    sample_rate: int
    frame: tuple

    def split(self, name: str) -> list:
        return [u for u in self.utterances if u.split == name]


def extract_tracks(corpus, tracks: dict | None = None) -> dict:
    """utt_id -> FeatureTrack, reusing entries already present in ``tracks``."""
    out = dict(tracks or {})
    for u in corpus:
        if u.utt_id not in out:
            out[u.utt_id] = extract_features(u.wave, speaker_id=u.speaker)
    return out


def prepare_corpus(corpus, kind, tracks: dict | None = None,
                   stats: NormalizationStats | None = None) -> PreparedCorpus:
    """Codes and normalised conditions for every utterance.

    Normalisation stats and the ExcitNet calibration are fitted on the train
    split unless ``stats`` is given.
    """
    corpus = list(corpus)
    rate = check_corpus(corpus)
    kind = VocoderKind.parse(kind)
    tracks = extract_tracks(corpus, tracks)
    train = select(corpus, "train")
    if not train:
        raise ValueError("corpus has no train utterances")
    if stats is None:
        stats = compute_norm_stats([tracks[u.utt_id] for u in train])
    prepared, scalings = [], {}
    for u in corpus:
        p = prepare_targets(u.wave, tracks[u.utt_id], kind, stats)
        scalings[u.utt_id] = p.scaling
        prepared.append(PreparedUtterance(u.utt_id, u.speaker, u.split, p.codes,
                                          p.conditions.astype(np.float32)))
    calibration = 1.0
    if kind is VocoderKind.EXCITNET:
        calibration = fit_calibration([tracks[u.utt_id] for u in train],
                                      [scalings[u.utt_id] for u in train])
    spec = tracks[corpus[0].utt_id].spec
    return PreparedCorpus(prepared, stats, kind, calibration, rate, (spec.frame_len, spec.hop))


@dataclass
class Segment:
    utt_id: str
    codes: np.ndarray       # context + scored samples
    conditions: np.ndarray
    start: int              # first scored row
    prev_code: int | None   # code preceding codes[0], None at the utterance start

    @property
    def targets(self) -> np.ndarray:
        return self.codes

    @property
    def n_scored(self) -> int:
        return len(self.codes) - self.start


def utterance_segments(u: PreparedUtterance, batch_samples: int, rf: int) -> list[Segment]:
    n = len(u.codes)
    if n < rf + 1:
        log.warning("skipping %s: %d samples is shorter than the receptive field + 1 (%d)",
                    u.utt_id, n, rf + 1)
        return []
    count = max(1, n // batch_samples)
    out = []
    for k in range(count):
        s = k * batch_samples
        e = n if k == count - 1 else s + batch_samples  # the tail joins the last segment
        ctx = min(rf - 1, s)
        a = s - ctx
        prev = int(u.codes[a - 1]) if a > 0 else None
        out.append(Segment(u.utt_id, u.codes[a:e], u.conditions[a:e], ctx, prev))
    return out


def assemble_batches(utterances, config: TrainConfig, mode, epoch_seed: int, rf: int) -> list[Segment]:
    """All segments of ``utterances`` in a seeded shuffled order.

    The shuffle mixes speakers for SI/SA; SD is shuffled the same way.
    """
    TrainMode.parse(mode)
    segs = [s for u in utterances for s in utterance_segments(u, config.batch_target_samples, rf)]
    order = np.random.default_rng(epoch_seed).permutation(len(segs))
    return [segs[i] for i in order]


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(epoch)]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# evaluation


def nll_sum(params, config: NetConfig, u: PreparedUtterance, chunk: int = EVAL_CHUNK) -> tuple[float, int]:
    """(summed NLL in nats, sample count) for one utterance, evaluated in chunks."""
    rf = receptive_field(config)
    total, count = 0.0, 0
    n = len(u.codes)
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        a = max(0, s - (rf - 1))
        prev = int(u.codes[a - 1]) if a > 0 else None
        logits, _ = forward_teacher_forced(params, config, u.codes[a:e], u.conditions[a:e], prev)
        total += nll_loss(logits[s - a:], u.codes[s:e]) * (e - s)
        count += e - s
    return total, count


def eval_nll(ckpt: Checkpoint, utterances) -> float:
    """Teacher-forced NLL in nats per sample over all samples of ``utterances``."""
    total, count = 0.0, 0
    for u in utterances:
        t, c = nll_sum(ckpt.params, ckpt.config, u)
        total += t
        count += c
    if count == 0:
        raise ValueError("no samples to evaluate")
    return total / count


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainLog:
    train_nll: list = field(default_factory=list)  # (step, nll) per step
    dev_nll: list = field(default_factory=list)    # (step, nll) every dev_eval_interval
    best_step: int = 0

    def to_dict(self) -> dict:
        return {"train_nll": [[s, v] for s, v in self.train_nll],
                "dev_nll": [[s, v] for s, v in self.dev_nll], "best_step": self.best_step}


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: TrainLog


def _copy(params):
    return {k: v.copy() for k, v in params.items()}


def _run(params, adam: AdamState, net: NetConfig, data: PreparedCorpus, config: TrainConfig,
         mode: TrainMode, provenance: dict) -> TrainResult:
    train_utts, dev_utts = data.split("train"), data.split("dev")
    rf = receptive_field(net)
    history = TrainLog()

    def snapshot(p, state):
        return Checkpoint(net, p, state, data.stats, state.step, data.kind.value, data.calibration,
                          data.sample_rate, data.frame, config.to_dict(), provenance)

    def dev_loss():
        return eval_nll(snapshot(params, adam), dev_utts) if dev_utts else None

    best_nll = dev_loss()
    best = (_copy(params), replace(adam, m=_copy(adam.m), v=_copy(adam.v)))
    if best_nll is not None:
        history.dev_nll.append((0, best_nll))
    segments, epoch, pos = [], -1, 0
    for step in range(1, config.steps + 1):
        if pos >= len(segments):
            epoch += 1
            segments = assemble_batches(train_utts, config, mode, epoch_seed(config.seed, epoch), rf)
            pos = 0
            if not segments:
                raise ValueError("no training utterance is longer than the receptive field")
        seg = segments[pos]
        pos += 1
        loss, grads = loss_and_grad(params, net, seg.codes, seg.conditions, None, seg.start,
                                    seg.prev_code)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss at step {step} on segment from "
                                        f"{seg.utt_id} (epoch {epoch})")
        adam_step(params, grads, adam)
        history.train_nll.append((step, loss))
        if step % config.dev_eval_interval == 0 or step == config.steps:
            d = dev_loss()
            if d is None:
                continue
            history.dev_nll.append((step, d))
            if d < best_nll:
                best_nll = d
                best = (_copy(params), replace(adam, m=_copy(adam.m), v=_copy(adam.v)))
    if best_nll is None:
        best = (params, adam)
        history.best_step = adam.step
    else:
        history.best_step = best[1].step
        log.info("best dev NLL %.4f at step %d", best_nll, history.best_step)
    p, state = best
    return TrainResult(snapshot(p, state), history)


def train(corpus, net: NetConfig, config: TrainConfig, mode, tracks: dict | None = None) -> TrainResult:
    """Train from a Xavier initialisation (SD or SI)."""
    mode = TrainMode.parse(mode)
    if mode is TrainMode.SA:
        raise ValueError("speaker adaptation starts from a checkpoint; use adapt()")
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    data = prepare_corpus(corpus, config.kind, tracks)
    params = xavier_init(net, config.seed)
    adam = AdamState.zeros_like(params, config.lr)
    speakers = sorted({u.speaker for u in corpus if u.split == "train"})
    prov = {"mode": mode.value, "speakers": speakers, "seed": config.seed}
    return _run(params, adam, net, data, config, mode, prov)


def adapt(si: Checkpoint, corpus, config: TrainConfig, net: NetConfig | None = None,
          tracks: dict | None = None) -> TrainResult:
    """Fine-tune every weight of ``si`` on the target corpus with fresh Adam moments.

    Normalisation stats (and the ExcitNet calibration) are refitted on the
    target's train split.
    """
    if net is not None and net != si.config:
        raise ConfigMismatchError(f"checkpoint config {si.config.to_dict()} does not match "
                                  f"requested {net.to_dict()}")
    if VocoderKind.parse(config.kind) is not VocoderKind.parse(si.kind):
        raise ConfigMismatchError(f"checkpoint holds a {si.kind} model, config asks for {config.kind}")
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    data = prepare_corpus(corpus, config.kind, tracks)
    params = _copy(si.params)
    adam = AdamState.zeros_like(params, config.lr)
    speakers = sorted({u.speaker for u in corpus if u.split == "train"})
    prov = {"mode": TrainMode.SA.value, "speakers": speakers, "seed": config.seed,
            "parent_digest": si.digest(), "parent_provenance": si.provenance,
            "stats": "refit on target"}
    return _run(params, adam, si.config, data, config, TrainMode.SA, prov)
