"""Utterance records and the JSON corpus manifest."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .fileio import read_json, read_wav, write_json
from .signal_core import Waveform

SPLITS = ("train", "dev", "test")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Utterance:
    utt_id: str
    speaker: str
    split: str
    wave: Waveform

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")


def select(corpus, split=None, speaker=None) -> list[Utterance]:
    return [u for u in corpus if (split is None or u.split == split)
            and (speaker is None or u.speaker == speaker)]


def check_corpus(corpus) -> int:
    """Unique ids and one shared sample rate; returns that rate."""
    corpus = list(corpus)
    if not corpus:
        raise ManifestError("corpus is empty")
    ids = [u.utt_id for u in corpus]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ManifestError(f"duplicate utterance ids: {dup[:5]}")
    rates = {u.wave.sample_rate for u in corpus}
    if len(rates) != 1:
        raise ManifestError(f"mixed sample rates in corpus: {sorted(rates)}")
    return rates.pop()


def read_manifest(path) -> list[Utterance]:
    """Load every entry; relative audio paths resolve against the manifest's directory."""
    path = Path(path)
    entries = read_json(path)
    if not isinstance(entries, list):
        raise ManifestError(f"{path}: manifest must be a JSON array")
    out = []
    for k, e in enumerate(entries):
        try:
            uid, audio, spk, split = e["id"], e["path"], e["speaker"], e["split"]
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"{path}: entry {k} lacks id/path/speaker/split") from exc
        audio = Path(audio)
        if not audio.is_absolute():
            audio = path.parent / audio
        if not audio.is_file():
            raise ManifestError(f"{path}: entry {uid!r}: missing audio file {audio}")
        if split not in SPLITS:
            raise ManifestError(f"{path}: entry {uid!r}: bad split {split!r}")
        out.append(Utterance(str(uid), str(spk), split, read_wav(audio)))
    check_corpus(out)
    return out


def write_manifest(entries, path) -> None:
    """``entries``: iterable of (id, audio path, speaker, split)."""
    rows = [{"id": i, "path": str(p), "speaker": s, "split": sp} for i, p, s, sp in entries]
    ids = [r["id"] for r in rows]
    if len(set(ids)) != len(ids):
        raise ManifestError("duplicate utterance ids")
    write_json(rows, path)
