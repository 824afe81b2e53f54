import json

import pytest

from adaptvoc.corpus import write_manifest
from adaptvoc.fileio import write_wav
from adaptvoc.toydata import SI_SPEAKERS, TARGET_SPEAKER, synth_utterance

TINY_CONFIG = {"net": {"blocks": 1, "layers_per_block": 2, "residual_channels": 4,
                       "skip_channels": 4},
               "train": {"batch_target_samples": 2000, "steps": 3, "dev_eval_interval": 2}}


def write_toy_corpus(root, seconds=0.4):
    """Two train + one dev + one test utterance for t1 and one SI speaker."""
    entries = []
    for k, spk in enumerate((TARGET_SPEAKER, SI_SPEAKERS[0])):
        for j, split in enumerate(("train", "train", "dev", "test")):
            uid = f"{spk.name}_{j}"
            write_wav(synth_utterance(spk, 50 * k + j, duration_s=seconds), root / "audio" / f"{uid}.wav")
            entries.append((uid, f"audio/{uid}.wav", spk.name, split))
    write_manifest(entries, root / "manifest.json")
    (root / "tiny.json").write_text(json.dumps(TINY_CONFIG))
    return root / "manifest.json", root / "tiny.json"


@pytest.fixture(scope="session")
def toy_files(tmp_path_factory):
    return write_toy_corpus(tmp_path_factory.mktemp("toy"))


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
