"""Speaker-adaptive WaveNet and ExcitNet neural vocoders in numpy."""
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .corpus import Utterance, read_manifest
from .evaluation import CopySystem, f0_rmse, lsd, run_comparison, run_f0_modification
from .features import FeatureTrack, extract_features
from .network import NetConfig, receptive_field
from .signal_core import FrameSpec, Waveform
from .training import TrainConfig, TrainMode, adapt, eval_nll, train
from .vocoder import VocoderKind, copy_synthesis, synthesize

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "CopySystem", "FeatureTrack", "FrameSpec", "NetConfig", "TrainConfig",
    "TrainMode", "Utterance", "VocoderKind", "Waveform", "adapt", "copy_synthesis", "eval_nll",
    "extract_features", "f0_rmse", "load_checkpoint", "lsd", "read_manifest", "receptive_field",
    "run_comparison", "run_f0_modification", "save_checkpoint", "synthesize", "train",
]
