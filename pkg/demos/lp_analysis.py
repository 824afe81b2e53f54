"""LP analysis of a synthetic voice and the two copy-synthesis paths.

Run:  python demos/lp_analysis.py [out_dir]

Extracts the 43-dim conditioning track (40 LSFs, F0, log gain, voicing),
inverse-filters the speech into its LP residual, and pushes the signal
through both 8-bit codecs without any network: the WaveNet path quantises
the speech itself, the ExcitNet path quantises the residual and rebuilds the
speech through the LP synthesis filter.
"""
import sys
from pathlib import Path

import numpy as np

from adaptvoc.evaluation import f0_rmse, lsd
from adaptvoc.features import extract_features
from adaptvoc.fileio import write_wav
from adaptvoc.signal_core import Waveform
from adaptvoc.toydata import TARGET_SPEAKER, synth_utterance
from adaptvoc.vocoder import copy_synthesis, residual

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

w = synth_utterance(TARGET_SPEAKER, seed=3, duration_s=2.0)
track = extract_features(w, speaker_id=TARGET_SPEAKER.name)
print(f"{len(w)} samples @ {w.sample_rate} Hz -> {track.n_frames} frames")
print(f"voiced frames: {track.vuv.mean():.0%}, median F0 {np.median(track.f0[track.vuv]):.1f} Hz")
print(f"LSFs strictly increasing in every frame: {bool(np.all(np.diff(track.lsf, axis=1) > 0))}")

# the residual is much flatter than the speech: that is what ExcitNet models
e = residual(w, track)
flat = lambda x: np.std(20 * np.log10(np.abs(np.fft.rfft(x[:4096] * np.hanning(4096))) + 1e-9))
print(f"spectral spread (dB std): speech {flat(w.samples):.1f}, residual {flat(e):.1f}")

for kind in ("wavenet", "excitnet"):
    y = copy_synthesis(w, kind, track)
    print(f"{kind:9s} copy synthesis: LSD {lsd(w, y):.2f} dB, "
          f"F0 RMSE {f0_rmse(track, extract_features(y)):.2f} Hz")
    write_wav(y, out / f"copy_{kind}.wav")

write_wav(w, out / "original.wav")
write_wav(Waveform(np.clip(e / np.max(np.abs(e)), -1, 1), w.sample_rate), out / "residual.wav")
print(f"wavs written to {out}/")
