"""Pitch scaling with the model-free reference systems.

Run:  python demos/f0_modification.py

The speech is pitch-scaled by PSOLA and then passed through each codec with
the original spectral envelope. The tracker is run on the result and
compared with the scaled reference contour, frame by frame.
"""
from adaptvoc.evaluation import F0_FACTORS, CopySystem, rows_to_csv, run_f0_modification, F0MOD_HEADER
from adaptvoc.corpus import Utterance
from adaptvoc.toydata import TARGET_SPEAKER, synth_utterance

test = [Utterance(f"t1_demo{k}", TARGET_SPEAKER.name, "test",
                  synth_utterance(TARGET_SPEAKER, seed=40 + k, duration_s=1.5)) for k in range(2)]
systems = {"copy-wavenet": CopySystem("wavenet"), "copy-excitnet": CopySystem("excitnet")}
rows = run_f0_modification(test, systems, F0_FACTORS, seed=0)
print(rows_to_csv(rows, F0MOD_HEADER), end="")

# at factor 1.0 nothing is pitch-scaled, so the codec-only copy is the
# measurement floor of the whole protocol
floor = next(r.f0_rmse_hz for r in rows if r.system == "copy-wavenet" and r.factor == 1.0)
print(f"\nmeasurement floor (codec copy, factor 1.0): {floor:.3f} Hz")
