"""SI training, speaker adaptation and a speaker-dependent baseline in miniature.

Run:  python demos/speaker_adaptation.py        (a few minutes on one core)

Four toy voices train a speaker-independent (SI) model. A held-out voice
with 30 s of audio is then fitted two ways for the same number of steps:
SA fine-tunes the SI weights, SD starts from a fresh initialisation. The
acceptance suite runs the same protocol with bigger budgets and 3 seeds.
"""
import logging

from adaptvoc import evaluation as ev
from adaptvoc.corpus import select
from adaptvoc.network import NetConfig, receptive_field
from adaptvoc.toydata import make_corpus, make_target_corpus
from adaptvoc.training import TrainConfig, adapt, extract_tracks, train

logging.basicConfig(level=logging.WARNING)

net = NetConfig(2, 5, 16, 16)
print(f"network: {net.blocks}x{net.layers_per_block} layers, receptive field {receptive_field(net)} samples")

si_corpus = make_corpus(minutes_total=2.0, dev_per_speaker=1)
target = make_target_corpus(train_seconds=30.0, dev=2, test=2)
tracks = extract_tracks(si_corpus + target)

kind = "excitnet"
si = train(si_corpus, net, TrainConfig(4000, 300, 1e-3, 0, 100, kind), "si", tracks)
print(f"SI dev NLL {si.log.dev_nll[-1][1]:.3f} nat/sample")

cfg = TrainConfig(4000, 150, 1e-3, 0, 50, kind)
sa = adapt(si.checkpoint, target, cfg, tracks=tracks)
sd = train(target, net, cfg, "sd", tracks)
for name, res in (("SA", sa), ("SD", sd)):
    curve = "  ".join(f"{step}:{nll:.3f}" for step, nll in res.log.dev_nll)
    print(f"{name} target dev NLL by step  {curve}")

systems = {"SA": sa.checkpoint, "SD": sd.checkpoint, "SI": si.checkpoint}
rows = ev.run_comparison(select(target, "test"), systems, seed=0, tracks=tracks)
for system, value in ev.aggregate(rows).items():
    print(f"{system}: mean LSD {value:.2f} dB")
