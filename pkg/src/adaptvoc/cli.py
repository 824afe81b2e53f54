"""Command-line interface.

Every command is a pure function of its flags, input files and seed.
Failures print a single ``error: <kind>: <message>`` line and exit 1;
usage errors exit 2.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import evaluation as ev
from .checkpoint import CheckpointError, ConfigMismatchError, load_checkpoint, save_checkpoint
from .corpus import ManifestError, read_manifest
from .features import compute_norm_stats, extract_features, perturb_features
from .fileio import (FeatureFormatError, WavFormatError, read_features, read_json, read_wav,
                     write_features, write_json, write_wav)
from .network import NetConfig
from .signal_core import FrameSpec
from .training import TrainConfig, TrainingDivergedError, adapt, train
from .vocoder import KindMismatchError, VocoderKind, copy_synthesis, synthesize

KNOWN_ERRORS = (ValueError, OSError, CheckpointError, ConfigMismatchError, ManifestError,
                WavFormatError, FeatureFormatError, KindMismatchError, TrainingDivergedError,
                ArithmeticError, KeyError)


# ---------------------------------------------------------------------------
# config


def load_config(path) -> dict:
    """JSON with optional sections ``net`` (NetConfig), ``train`` (TrainConfig)
    and ``frame`` ({"frame_ms", "hop_ms"})."""
    if path is None:
        return {}
    cfg = read_json(path)
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    unknown = set(cfg) - {"net", "train", "frame"}
    if unknown:
        raise ValueError(f"{path}: unknown config sections {sorted(unknown)}")
    return cfg


def net_config(cfg: dict) -> NetConfig:
    return NetConfig(**cfg.get("net", {})) if "net" in cfg else NetConfig.desk()


def train_config(cfg: dict, args) -> TrainConfig:
    d = dict(cfg.get("train", {}))
    for key in ("steps", "lr", "kind", "batch_target_samples", "dev_eval_interval"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    if args.seed is not None:
        d["seed"] = args.seed
    return TrainConfig.from_dict(d)


def frame_spec(cfg: dict, sample_rate: int) -> FrameSpec:
    f = cfg.get("frame", {})
    return FrameSpec.for_rate(sample_rate, f.get("frame_ms", 20.0), f.get("hop_ms", 5.0))


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def _corpus(args, speakers=None, splits=None):
    if not args.manifest:
        raise ValueError("this command needs --manifest")
    corpus = read_manifest(args.manifest)
    if speakers:
        corpus = [u for u in corpus if u.speaker in set(speakers)]
    if splits:
        corpus = [u for u in corpus if u.split in set(splits)]
    if not corpus:
        raise ManifestError("no utterances match the requested speakers/splits")
    return corpus


def _tracks(corpus, cfg):
    return {u.utt_id: extract_features(u.wave, frame_spec(cfg, u.wave.sample_rate), speaker_id=u.speaker)
            for u in corpus}


# ---------------------------------------------------------------------------
# commands


def cmd_extract(args, cfg):
    if args.input:
        w = read_wav(args.input)
        if not args.output:
            raise ValueError("extract needs an output path")
        write_features(extract_features(w, frame_spec(cfg, w.sample_rate), speaker_id=args.speaker or ""),
                       args.output, args.sidecar)
        return
    if not args.out_dir:
        raise ValueError("extract --manifest needs --out-dir")
    out = Path(args.out_dir)
    for u in _corpus(args):
        t = extract_features(u.wave, frame_spec(cfg, u.wave.sample_rate), speaker_id=u.speaker)
        write_features(t, out / f"{u.utt_id}.feat", args.sidecar)


def cmd_stats(args, cfg):
    tracks = [read_features(p) for p in args.features]
    write_json(compute_norm_stats(tracks).to_dict(), args.output)


def cmd_train(args, cfg):
    corpus = _corpus(args, args.speaker)
    result = train(corpus, net_config(cfg), train_config(cfg, args), args.mode, _tracks(corpus, cfg))
    save_checkpoint(result.checkpoint, args.output)
    if args.log:
        write_json(result.log.to_dict(), args.log)


def cmd_adapt(args, cfg):
    si = load_checkpoint(args.parent)
    corpus = _corpus(args, args.speaker)
    net = net_config(cfg) if "net" in cfg else None
    tc = train_config(cfg, args)
    if args.kind is None and "kind" not in cfg.get("train", {}):
        tc = replace(tc, kind=si.kind)  # an unset kind follows the parent
    result = adapt(si, corpus, tc, net, _tracks(corpus, cfg))
    save_checkpoint(result.checkpoint, args.output)
    if args.log:
        write_json(result.log.to_dict(), args.log)


def cmd_synth(args, cfg):
    ckpt = load_checkpoint(args.checkpoint)
    t = read_features(args.features)
    write_wav(synthesize(ckpt, t, args.mode, _seed(args), kind=args.kind), args.output)


def cmd_copy_synth(args, cfg):
    w = read_wav(args.input)
    t = extract_features(w, frame_spec(cfg, w.sample_rate))
    write_wav(copy_synthesis(w, args.kind, t, f0_factor=args.f0_factor), args.output)


def cmd_perturb(args, cfg):
    if args.sigma < 0:
        raise ValueError("--sigma must be nonnegative")
    t = read_features(args.features)
    write_features(perturb_features(t, args.sigma, _seed(args)), args.output)


def _systems(args):
    systems = {}
    for spec in args.system or []:
        label, sep, path = spec.partition("=")
        if not sep or not label or not path:
            raise ValueError(f"--system expects LABEL=CHECKPOINT, got {spec!r}")
        if label in systems:
            raise ValueError(f"duplicate system label {label!r}")
        systems[label] = load_checkpoint(path)
    for kind in args.copy or []:
        kind = VocoderKind.parse(kind).value
        systems[f"copy-{kind}"] = ev.CopySystem(kind)
    if not systems:
        raise ValueError("give at least one --system or --copy")
    return systems


def cmd_eval(args, cfg):
    systems = _systems(args)
    corpus = _corpus(args, args.speaker, [args.split])
    tracks = _tracks(corpus, cfg)
    if args.eval_cmd == "compare":
        rows = ev.run_comparison(corpus, systems, _seed(args), args.mode, args.perturb, tracks)
        ev.write_rows(rows, args.output, ev.COMPARISON_HEADER)
    else:
        factors = [float(f) for f in args.factors.split(",") if f.strip()]
        rows = ev.run_f0_modification(corpus, systems, factors, _seed(args), args.mode, tracks)
        ev.write_rows(rows, args.output, ev.F0MOD_HEADER)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    def global_flags(default):
        g = argparse.ArgumentParser(add_help=False, argument_default=default)
        g.add_argument("--config", help="JSON config file (sections: net, train, frame)")
        g.add_argument("--seed", type=int, help="random seed (default 0)")
        g.add_argument("--manifest", help="JSON corpus manifest")
        g.add_argument("-v", "--verbose", action="store_true", default=default or False)
        return g

    # accepted before or after the subcommand; the subcommand copy only sets what it sees
    common = global_flags(argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="adaptvoc", parents=[global_flags(None)],
                                description="Speaker-adaptive WaveNet/ExcitNet vocoders")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("extract", parents=[common], help="wav -> feature file(s)")
    s.add_argument("input", nargs="?")
    s.add_argument("output", nargs="?")
    s.add_argument("--out-dir")
    s.add_argument("--speaker")
    s.add_argument("--sidecar", action="store_true", help="also write a JSON summary")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("stats", parents=[common], help="feature files -> normalisation stats")
    s.add_argument("features", nargs="+")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_stats)

    def training_flags(s):
        s.add_argument("-o", "--output", required=True, help="checkpoint path")
        s.add_argument("--speaker", action="append", help="restrict to speaker (repeatable)")
        s.add_argument("--kind", choices=[k.value for k in VocoderKind])
        s.add_argument("--steps", type=int)
        s.add_argument("--lr", type=float)
        s.add_argument("--batch-target-samples", dest="batch_target_samples", type=int)
        s.add_argument("--dev-eval-interval", dest="dev_eval_interval", type=int)
        s.add_argument("--log", help="write the NLL history as JSON")

    s = sub.add_parser("train", parents=[common], help="train from scratch (sd or si)")
    s.add_argument("--mode", choices=["sd", "si"], required=True)
    training_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("adapt", parents=[common], help="fine-tune an si checkpoint on a target")
    s.add_argument("--from", dest="parent", required=True, help="si checkpoint")
    training_flags(s)
    s.set_defaults(func=cmd_adapt)

    s = sub.add_parser("synth", parents=[common], help="features -> waveform with a checkpoint")
    s.add_argument("features")
    s.add_argument("-c", "--checkpoint", required=True)
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--kind", choices=[k.value for k in VocoderKind])
    s.add_argument("--mode", choices=["random", "greedy"], default="random")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("copy-synth", parents=[common], help="codec-only resynthesis of a wav")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--kind", choices=[k.value for k in VocoderKind], default="excitnet")
    s.add_argument("--f0-factor", type=float, default=1.0)
    s.set_defaults(func=cmd_copy_synth)

    s = sub.add_parser("perturb", parents=[common], help="add seeded noise to a feature file")
    s.add_argument("features")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--sigma", type=float, required=True, help="noise std in normalised units")
    s.set_defaults(func=cmd_perturb)

    s = sub.add_parser("eval", parents=[common], help="objective evaluation grids")
    esub = s.add_subparsers(dest="eval_cmd", required=True)
    for name, help_ in (("compare", "LSD / F0 RMSE per system"),
                        ("f0mod", "F0 RMSE under F0 scaling")):
        e = esub.add_parser(name, parents=[common], help=help_)
        e.add_argument("-o", "--output", required=True, help="CSV path")
        e.add_argument("--system", action="append", help="LABEL=CHECKPOINT (repeatable)")
        e.add_argument("--copy", action="append", choices=[k.value for k in VocoderKind],
                       help="add a codec-only pseudo-system")
        e.add_argument("--speaker", action="append")
        e.add_argument("--split", default="test")
        e.add_argument("--mode", choices=["random", "greedy"], default="random")
        if name == "compare":
            e.add_argument("--perturb", type=float, nargs="?", const=ev.DEFAULT_PERTURB_SIGMA,
                           metavar="SIGMA", help="drive models with noisy features "
                           f"(default sigma {ev.DEFAULT_PERTURB_SIGMA} when given bare)")
        else:
            e.add_argument("--factors", default=",".join(str(f) for f in ev.F0_FACTORS))
        e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args, load_config(args.config))
    except KNOWN_ERRORS as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
