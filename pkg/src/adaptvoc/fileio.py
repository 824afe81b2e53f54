"""WAV, feature-file and JSON-config I/O with atomic writes."""
from __future__ import annotations

import json
import os
import struct
import tempfile
import wave
from pathlib import Path

import numpy as np

from .features import FeatureTrack
from .signal_core import FrameSpec, Waveform

FEATURE_MAGIC = b"EXKF"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIIIIIII")  # magic, version, frames, dims, frame_len, hop, window, rate
_WINDOWS = ("hann", "rectangular")


class WavFormatError(ValueError):
    pass


class FeatureFormatError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# WAV


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV file; samples are mapped by /32768."""
    try:
        with wave.open(str(path), "rb") as f:
            channels, width, rate, n = f.getnchannels(), f.getsampwidth(), f.getframerate(), f.getnframes()
            payload = f.readframes(n)
    except wave.Error as exc:
        raise WavFormatError(f"{path}: not a PCM WAV file ({exc})") from exc
    except EOFError as exc:
        raise WavFormatError(f"{path}: truncated header") from exc
    if channels != 1:
        raise WavFormatError(f"{path}: expected mono, found {channels} channels")
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit PCM, found {8 * width}-bit samples")
    if len(payload) != 2 * n:
        raise WavFormatError(f"{path}: truncated, header claims {n} samples but payload holds "
                             f"{len(payload) // 2}")
    pcm = np.frombuffer(payload, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def to_pcm16(samples) -> np.ndarray:
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    return np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")


def wav_bytes(w: Waveform) -> bytes:
    pcm = to_pcm16(w.samples).tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, w.sample_rate, 2 * w.sample_rate, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(pcm)) + pcm
    return b"RIFF" + struct.pack("<I", len(body)) + body


def write_wav(w: Waveform, path) -> None:
    atomic_write_bytes(path, wav_bytes(w))


# ---------------------------------------------------------------------------
# feature files


def feature_bytes(t: FeatureTrack) -> bytes:
    m = t.matrix(interpolate_f0=False).astype("<f4")
    speaker = t.speaker_id.encode("utf-8")
    head = _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, m.shape[0], m.shape[1],
                                t.spec.frame_len, t.spec.hop, _WINDOWS.index(t.spec.window),
                                t.sample_rate)
    return head + struct.pack("<I", len(speaker)) + speaker + m.tobytes()


def parse_features(data: bytes, name: str = "<bytes>") -> FeatureTrack:
    if len(data) < _FEATURE_HEADER.size + 4:
        raise FeatureFormatError(f"{name}: file too short for a feature header")
    magic, version, n, dims, flen, hop, win, rate = _FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise FeatureFormatError(f"{name}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FeatureFormatError(f"{name}: unsupported feature file version {version}")
    if win >= len(_WINDOWS):
        raise FeatureFormatError(f"{name}: unknown window code {win}")
    off = _FEATURE_HEADER.size
    (slen,) = struct.unpack_from("<I", data, off)
    off += 4
    speaker = data[off:off + slen].decode("utf-8")
    off += slen
    if len(data) - off != 4 * n * dims:
        raise FeatureFormatError(f"{name}: payload holds {len(data) - off} bytes, header implies "
                                 f"{4 * n * dims}")
    m = np.frombuffer(data, dtype="<f4", offset=off).reshape(n, dims).astype(np.float64)
    return FeatureTrack.from_matrix(m, FrameSpec(flen, hop, _WINDOWS[win]), rate, speaker)


def write_features(t: FeatureTrack, path, sidecar: bool = False) -> None:
    atomic_write_bytes(path, feature_bytes(t))
    if sidecar:
        info = {"frames": t.n_frames, "frame_len": t.spec.frame_len, "hop": t.spec.hop,
                "window": t.spec.window, "sample_rate": t.sample_rate, "speaker": t.speaker_id,
                "voiced_frames": int(t.vuv.sum())}
        atomic_write_text(str(path) + ".json", json.dumps(info, indent=2, sort_keys=True) + "\n")


def read_features(path) -> FeatureTrack:
    return parse_features(Path(path).read_bytes(), str(path))


# ---------------------------------------------------------------------------
# JSON


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(obj, path) -> None:
    atomic_write_text(path, dump_json(obj))


def read_json(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)
