"""Write a small toy corpus (wavs + manifest + config) for the CLI walkthrough.

Run:  python demos/make_toy_corpus.py toy

Produces toy/audio/*.wav, toy/manifest.json and toy/small.json: four SI
voices plus the target voice t1, with train/dev/test splits.
"""
import json
import sys
from pathlib import Path

from adaptvoc.corpus import write_manifest
from adaptvoc.fileio import write_wav
from adaptvoc.toydata import make_corpus, make_target_corpus

root = Path(sys.argv[1] if len(sys.argv) > 1 else "toy")
corpus = make_corpus(minutes_total=1.0, dev_per_speaker=1) + \
    make_target_corpus(train_seconds=10.0, dev=1, test=2)
entries = []
for u in corpus:
    path = f"audio/{u.utt_id}.wav"
    write_wav(u.wave, root / path)
    entries.append((u.utt_id, path, u.speaker, u.split))
write_manifest(entries, root / "manifest.json")

config = {"net": {"blocks": 2, "layers_per_block": 4, "residual_channels": 16, "skip_channels": 16},
          "train": {"batch_target_samples": 4000, "steps": 50, "lr": 1e-3, "dev_eval_interval": 25}}
(root / "small.json").write_text(json.dumps(config, indent=2) + "\n")
print(f"{len(entries)} utterances -> {root}/manifest.json, config {root}/small.json")
