"""``egobn`` command line: one subcommand per pipeline stage plus ``sweep`` and ``e2e``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, archive
from .acoustic import Variant
from .bottleneck import BNTarget
from .config import PipelineConfig, parse_config
from .corpus import generate_corpus, load_corpus, write_corpus
from .evaluation import edit_distance, per, read_transcripts
from .frontend import cmn, concat_features, mfcc, one_hot_motor
from .pipeline import (
    OUTPUT_ROOT_ENV,
    decode_split,
    default_output_root,
    extract_bn_features,
    mix_file,
    run_e2e,
    stage_featurize,
    stage_mix,
    train_am_model,
    train_bn_model,
)
from .signal import NoiseKind, read_motor_track, read_wav
from .sweep import SweepGrid, SweepSettings, run_sweep


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"error: {message}\n")


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand without clobbering each other
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global random seed")
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON pipeline config")
    p.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="cap on parallel worker processes")
    p.add_argument("--log-level", default=argparse.SUPPRESS, choices=("debug", "info", "warning", "error"))
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = _Parser(prog="egobn", description=__doc__, parents=[common])
    parser.add_argument("--version", action="version", version=f"egobn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_text):
        return sub.add_parser(name, help=help_text, parents=[common])

    p = cmd("gen-corpus", "synthesize a clean labelled corpus")
    p.add_argument("--utterances", type=int, required=True)
    p.add_argument("--out", required=True)

    p = cmd("mix", "mix clean speech with ego-noise (one file, or a whole corpus)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--clean", help="clean WAV")
    src.add_argument("--corpus", help="corpus directory from gen-corpus")
    p.add_argument("--noise-kind", choices=[k.value for k in NoiseKind])
    p.add_argument("--snr", type=float)
    p.add_argument("--out", required=True, help="mixed WAV (file mode) or directory (corpus mode)")

    p = cmd("featurize", "MFCC features (one file, or a mixed corpus directory)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--wav", help="mixed WAV")
    src.add_argument("--mixed", help="directory written by 'mix --corpus'")
    p.add_argument("--motor", help="motor-state CSV; appends the (off, on) one-hot columns")
    p.add_argument("--cmn", action="store_true", help="cepstral mean normalization (file mode)")
    p.add_argument("--csv", action="store_true", help="also write a CSV export next to the archive")
    p.add_argument("--out", required=True)

    p = cmd("train-bn", "train a bottleneck network")
    p.add_argument("--target", required=True, choices=[t.value for t in BNTarget])
    p.add_argument("--bn-dim", type=int)
    p.add_argument("--bn-pos", type=int, choices=(1, 2, 3, 4))
    p.add_argument("--features", required=True, help="feature root with train/ (and dev/) sets")
    p.add_argument("--out", required=True)

    p = cmd("extract-bn", "write bottleneck activations for every split")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)

    p = cmd("train-am", "train an acoustic model")
    p.add_argument("--variant", required=True, choices=[v.value for v in Variant])
    p.add_argument("--bn-model")
    p.add_argument("--bn-features", help="cached activations from extract-bn (preferred over --bn-model)")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)

    p = cmd("decode", "greedy phoneme decoding of a feature split")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--bn-model", help="override the bottleneck model recorded in the acoustic model")
    p.add_argument("--bn-features")
    p.add_argument("--out", required=True, help="hypothesis file")

    p = cmd("evaluate", "pooled phoneme error rate of a hypothesis file")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)

    p = cmd("sweep", "train and score a grid of systems")
    p.add_argument("--grid", required=True, help="JSON grid file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=1, help="number of training seeds, counting up from --seed")

    p = cmd("e2e", "run every stage end to end with caching")
    p.add_argument("--out", help=f"output directory (default under ${OUTPUT_ROOT_ENV})")
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _config(args, need_seed: bool = False) -> PipelineConfig:
    seed = getattr(args, "seed", None)
    if getattr(args, "config", None):
        cfg = parse_config(args.config)
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=seed)
        return cfg
    if seed is None and need_seed:
        raise CliError(f"{args.command} needs --seed (or a --config with a seed)")
    return PipelineConfig(seed=seed or 0)


def _existing(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} {str(p)!r} does not exist")
    return p


def _workers(args) -> int:
    w = getattr(args, "workers", 1)
    if w < 1:
        raise CliError(f"--workers must be >= 1, got {w}")
    return w


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_corpus(args) -> None:
    cfg = _config(args, need_seed=True)
    if args.utterances < 1:
        raise CliError("--utterances must be positive")
    out = write_corpus(generate_corpus(args.utterances, cfg.seed, cfg.corpus.split_fractions), args.out, cfg.framing)
    print(out)


def cmd_mix(args) -> None:
    if args.corpus:
        cfg = _config(args)
        stage_mix(_existing(args.corpus, "corpus"), args.out, cfg.snr_list, cfg.motors, cfg.framing)
    else:
        if args.noise_kind is None or args.snr is None:
            raise CliError("file mode needs --noise-kind and --snr")
        cfg = _config(args, need_seed=True)
        mix_file(_existing(args.clean, "clean WAV"), args.noise_kind, args.snr, cfg.seed, args.out, cfg.framing)
    print(args.out)


def cmd_featurize(args) -> None:
    cfg = _config(args)
    if args.mixed:
        stage_featurize(_existing(args.mixed, "mixed directory"), args.out, cfg.framing)
        print(args.out)
        return
    feats = mfcc(read_wav(_existing(args.wav, "WAV")), cfg.framing)
    if args.cmn:
        feats = cmn(feats)
    if args.motor:
        feats = concat_features(feats, one_hot_motor(read_motor_track(_existing(args.motor, "motor track"))))
    archive.write_features(args.out, feats)
    if args.csv:
        archive.export_csv(str(args.out) + ".csv", feats)
    print(args.out)


def cmd_train_bn(args) -> None:
    cfg = _config(args)
    target = BNTarget(args.target)
    bn = dataclasses.replace(cfg.bn, target=target, bn_dim=args.bn_dim or cfg.bn.bn_dim,
                             bn_position=args.bn_pos or cfg.bn.bn_position)
    which = "bn_train" if target.is_classification else "bn_regression_train"
    train_bn_model(_existing(args.features, "features"), bn, cfg.train_config(which), args.out, cfg.context)
    print(args.out)


def cmd_extract_bn(args) -> None:
    cfg = _config(args)
    extract_bn_features(_existing(args.model, "model"), _existing(args.features, "features"), args.out, cfg.context)
    print(args.out)


def cmd_train_am(args) -> None:
    cfg = _config(args)
    bn_model = _existing(args.bn_model, "bottleneck model") if args.bn_model else None
    bn_features = _existing(args.bn_features, "bottleneck features") if args.bn_features else None
    if not Variant(args.variant).uses_bn and (bn_model or bn_features):
        raise CliError(f"variant {args.variant} takes no bottleneck input")
    train_am_model(args.variant, _existing(args.features, "features"), cfg.train_config("train"), args.out,
                   bn_features, bn_model, cfg.am.width, cfg.am.hidden_layers, cfg.context)
    print(args.out)


def cmd_decode(args) -> None:
    cfg = _config(args)
    decode_split(_existing(args.model, "model"), _existing(args.features, "features"), args.out, args.split,
                 _existing(args.bn_features, "bottleneck features") if args.bn_features else None,
                 _existing(args.bn_model, "bottleneck model") if args.bn_model else None, cfg.context)
    print(args.out)


def cmd_evaluate(args) -> None:
    refs = read_transcripts(_existing(args.ref, "reference"))
    hyps = read_transcripts(_existing(args.hyp, "hypothesis"))
    rate = per(refs, hyps)
    s = d = i = 0
    for key in refs:
        a, b, c = edit_distance(refs[key], hyps[key])
        s, d, i = s + a, d + b, i + c
    n_ref = sum(len(r) for r in refs.values())
    print(f"per={rate:.6f} sub={s} del={d} ins={i} n_ref={n_ref} utterances={len(refs)}")


def cmd_sweep(args) -> None:
    cfg = _config(args)
    grid_path = _existing(args.grid, "grid file")
    try:
        grid = SweepGrid.from_dict(json.loads(grid_path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise CliError(f"{grid_path}: invalid JSON ({exc})") from exc
    if args.seeds < 1:
        raise CliError("--seeds must be positive")
    settings = SweepSettings(
        am_train=cfg.train, bn_train=cfg.bn_train, bn_regression_train=cfg.bn_regression_train,
        am_width=cfg.am.width, am_hidden=cfg.am.hidden_layers, bn_wide_dim=cfg.bn.wide_dim, context=cfg.context,
    )
    corpus = load_corpus(_existing(args.corpus, "corpus"))
    seeds = [cfg.seed + k for k in range(args.seeds)]
    report = run_sweep(grid, corpus, settings, seeds, args.out, _workers(args))
    print(f"{len(report.rows)} rows, {len(report.failures)} failures -> {args.out}")
    if report.failures:
        raise CliError(f"{len(report.failures)} sweep job(s) failed; see {Path(args.out) / 'failures.json'}")


def cmd_e2e(args) -> None:
    cfg = _config(args, need_seed=True)
    out = args.out or cfg.output_dir or default_output_root() / f"e2e-{cfg.hash()}"
    report = run_e2e(cfg, out)
    print(f"{len(report.rows)} rows -> {Path(out) / 'report' / 'report.csv'}")


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "mix": cmd_mix,
    "featurize": cmd_featurize,
    "train-bn": cmd_train_bn,
    "extract-bn": cmd_extract_bn,
    "train-am": cmd_train_am,
    "decode": cmd_decode,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "e2e": cmd_e2e,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(args, "log_level", "warning").upper(), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # every failure becomes one parseable line
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        if os.environ.get("EGOBN_DEBUG"):
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
