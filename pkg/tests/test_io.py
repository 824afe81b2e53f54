import json
import struct

import numpy as np
import pytest

from adaptvoc.checkpoint import (MAGIC, Checkpoint, CheckpointError, DigestError,
                                 UnsupportedVersionError, checkpoint_from_bytes, file_digest,
                                 load_checkpoint, save_checkpoint)
from adaptvoc.corpus import ManifestError, Utterance, check_corpus, read_manifest, select, write_manifest
from adaptvoc.features import compute_norm_stats, extract_features
from adaptvoc.fileio import (FeatureFormatError, WavFormatError, feature_bytes, parse_features,
                             read_features, read_wav, to_pcm16, wav_bytes, write_features,
                             write_wav)
from adaptvoc.network import AdamState, NetConfig, xavier_init
from adaptvoc.signal_core import Waveform
from adaptvoc.toydata import TARGET_SPEAKER, synth_utterance

CFG = NetConfig(1, 2, 4, 4, 256, 43)


# --- WAV ----------------------------------------------------------------------

def test_square_wave_round_trip_is_bit_exact(tmp_path):
    x = np.where(np.arange(480) % 48 < 24, 32767 / 32768, -1.0)
    write_wav(Waveform(x, 24000), tmp_path / "sq.wav")
    back = read_wav(tmp_path / "sq.wav")
    assert np.array_equal(to_pcm16(back.samples), to_pcm16(x))
    assert np.array_equal(back.samples, x)


def test_wav_quantisation_error(tmp_path):
    x = np.random.default_rng(0).uniform(-1, 1, 5000)
    write_wav(Waveform(x, 16000), tmp_path / "r.wav")
    back = read_wav(tmp_path / "r.wav")
    assert np.max(np.abs(back.samples - x)) <= 2 ** -15
    assert back.sample_rate == 16000


def test_wav_duration(tmp_path):
    write_wav(Waveform(np.zeros(24000), 24000), tmp_path / "z.wav")
    assert read_wav(tmp_path / "z.wav").duration == 1.0


def test_wav_truncated(tmp_path):
    data = wav_bytes(Waveform(np.zeros(1000), 16000))
    (tmp_path / "t.wav").write_bytes(data[:-200])
    with pytest.raises(WavFormatError, match="truncated"):
        read_wav(tmp_path / "t.wav")


def test_wav_rejects_stereo_and_8bit(tmp_path):
    import wave
    for channels, width in ((2, 2), (1, 1)):
        path = tmp_path / f"{channels}_{width}.wav"
        with wave.open(str(path), "wb") as f:
            f.setnchannels(channels)
            f.setsampwidth(width)
            f.setframerate(8000)
            f.writeframes(b"\x00" * 400)
        with pytest.raises(WavFormatError):
            read_wav(path)
    (tmp_path / "junk.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(WavFormatError):
        read_wav(tmp_path / "junk.wav")


def test_wav_bytes_match_stdlib_writer(tmp_path):
    import wave
    pcm = to_pcm16(np.linspace(-0.5, 0.5, 101))
    path = tmp_path / "ref.wav"
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(22050)
        f.writeframes(pcm.tobytes())
    assert wav_bytes(Waveform(pcm / 32768.0, 22050)) == path.read_bytes()


# --- feature files --------------------------------------------------------------

@pytest.fixture(scope="module")
def track():
    return extract_features(synth_utterance(TARGET_SPEAKER, 0, duration_s=0.5), speaker_id="t1")


def test_feature_round_trip(track, tmp_path):
    write_features(track, tmp_path / "a.feat", sidecar=True)
    back = read_features(tmp_path / "a.feat")
    assert back.spec == track.spec and back.sample_rate == track.sample_rate
    assert back.speaker_id == "t1"
    assert np.array_equal(back.vuv, track.vuv)
    assert np.allclose(back.lsf, track.lsf.astype(np.float32), atol=0)
    assert np.array_equal(back.f0, track.f0.astype(np.float32).astype(np.float64))
    info = json.loads((tmp_path / "a.feat.json").read_text())
    assert info["frames"] == track.n_frames


def test_feature_file_validation(track):
    data = feature_bytes(track)
    with pytest.raises(FeatureFormatError, match="magic"):
        parse_features(b"XXXX" + data[4:])
    with pytest.raises(FeatureFormatError, match="version"):
        parse_features(data[:4] + struct.pack("<I", 9) + data[8:])
    with pytest.raises(FeatureFormatError, match="payload"):
        parse_features(data[:-4])
    with pytest.raises(FeatureFormatError):
        parse_features(data[:10])


# --- manifest ---------------------------------------------------------------------

def test_manifest_round_trip(tmp_path):
    w = Waveform(np.zeros(1600), 16000)
    write_wav(w, tmp_path / "audio" / "a.wav")
    write_wav(w, tmp_path / "audio" / "b.wav")
    write_manifest([("a", "audio/a.wav", "s1", "train"), ("b", "audio/b.wav", "s2", "dev")],
                   tmp_path / "m.json")
    corpus = read_manifest(tmp_path / "m.json")
    assert [u.utt_id for u in corpus] == ["a", "b"]
    assert [u.utt_id for u in select(corpus, "dev")] == ["b"]
    assert [u.utt_id for u in select(corpus, speaker="s1")] == ["a"]


def test_manifest_errors(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps([{"id": "a", "path": "nope.wav", "speaker": "s",
                                                  "split": "train"}]))
    with pytest.raises(ManifestError, match="missing"):
        read_manifest(tmp_path / "m.json")
    (tmp_path / "m.json").write_text(json.dumps({"id": "a"}))
    with pytest.raises(ManifestError):
        read_manifest(tmp_path / "m.json")
    with pytest.raises(ManifestError, match="duplicate"):
        write_manifest([("a", "x", "s", "train"), ("a", "y", "s", "dev")], tmp_path / "d.json")


def test_corpus_checks():
    a = Utterance("a", "s", "train", Waveform(np.zeros(10), 16000))
    b = Utterance("a", "s", "dev", Waveform(np.zeros(10), 16000))
    c = Utterance("c", "s", "dev", Waveform(np.zeros(10), 24000))
    with pytest.raises(ManifestError, match="duplicate"):
        check_corpus([a, b])
    with pytest.raises(ManifestError, match="sample rates"):
        check_corpus([a, c])
    with pytest.raises(ValueError):
        Utterance("x", "s", "holdout", a.wave)


# --- checkpoints ------------------------------------------------------------------

@pytest.fixture()
def ckpt(track):
    params = xavier_init(CFG, 0)
    adam = AdamState.zeros_like(params, 1e-3)
    adam.m["embed"] += 0.25
    adam.step = 3
    return Checkpoint(CFG, params, adam, compute_norm_stats([track]), step=3, kind="excitnet",
                      calibration=1.5, sample_rate=16000, frame=(320, 80),
                      train_config={"lr": 1e-3}, provenance={"mode": "sd"})


def test_checkpoint_round_trip_is_bit_exact(ckpt, tmp_path):
    digest = save_checkpoint(ckpt, tmp_path / "c.ckpt")
    data = (tmp_path / "c.ckpt").read_bytes()
    assert data[:4] == MAGIC
    back = load_checkpoint(tmp_path / "c.ckpt")
    assert back.to_bytes() == data
    assert file_digest(tmp_path / "c.ckpt") == digest == back.digest()
    assert back.kind == "excitnet" and back.calibration == 1.5 and back.frame == (320, 80)
    assert back.adam.step == 3 and np.all(back.adam.m["embed"] == 0.25)
    assert all(np.array_equal(back.params[k], ckpt.params[k]) for k in ckpt.params)


def test_checkpoint_corruption_detected(ckpt):
    data = bytearray(ckpt.to_bytes())
    data[len(data) // 2] ^= 0x01
    with pytest.raises(DigestError):
        checkpoint_from_bytes(bytes(data))


def test_checkpoint_version_refused(ckpt):
    data = ckpt.to_bytes()
    bumped = data[:4] + struct.pack("<I", 2) + data[8:]
    with pytest.raises(UnsupportedVersionError):
        checkpoint_from_bytes(bumped)
    with pytest.raises(CheckpointError):
        checkpoint_from_bytes(b"EXKF" + data[4:])
