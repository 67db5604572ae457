"""On-disk pipeline stages and the end-to-end runner.

Every stage writes into its own directory and leaves a ``.stage.json``
stamp holding a key chained from the config hash and the previous stage's
key. A stage whose stamp matches is skipped, so deleting a directory
recomputes just that stage, and since all stages are deterministic the
downstream artifacts stay valid.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import shutil
from pathlib import Path

import numpy as np

from . import __version__, archive
from .acoustic import (
    AcousticModel,
    Variant,
    assemble_am_input,
    bn_inputs,
    bn_targets,
    greedy_decode,
    posteriors,
    train_am,
)
from .bottleneck import BNTarget, BottleneckModel, extract_bottleneck, train_bottleneck
from .config import PipelineConfig
from .corpus import (
    SPLITS,
    Condition,
    FeatureSet,
    condition_grid,
    featurize,
    generate_corpus,
    load_corpus,
    mix_utterance,
    training_condition,
    write_corpus,
)
from .evaluation import (
    REPORT_SCHEMA_VERSION,
    EvalReport,
    ReportRow,
    frame_accuracy,
    per,
    read_report_csv,
    read_transcripts,
    write_transcripts,
)
from .frontend import concat_features, stack_context
from .framing import DEFAULT_FRAMING, FramingParams
from .signal import NoiseKind, mix_at_snr, read_motor_track, read_wav, synth_ego_noise, write_motor_track, write_wav

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "EGOBN_OUTPUT_ROOT"
STAGES = ("gen-corpus", "mix", "featurize", "train-bn", "extract-bn", "train-am", "decode", "evaluate")
STAGE_DIRS = dict(zip(STAGES, ("corpus", "mixed", "features", "bn-models", "bn-features", "am-models", "decode",
                               "report")))


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {type(cause).__name__}: {cause}")
        self.stage = stage


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "egobn-out"))


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# mixing
# ---------------------------------------------------------------------------


def mix_file(clean_path, kind: NoiseKind | str, snr_db: float, seed: int, out_path,
             framing: FramingParams = DEFAULT_FRAMING) -> Path:
    """Mix one WAV with synthetic ego-noise; the motor track goes to ``<out>.motor.csv``."""
    clean = read_wav(clean_path)
    noise, track = synth_ego_noise(kind, clean.duration_ms, seed, sample_rate_hz=clean.sample_rate_hz,
                                   framing=framing)
    out_path = Path(out_path)
    write_wav(out_path, mix_at_snr(clean, noise, snr_db))
    write_motor_track(out_path.with_name(out_path.name + ".motor.csv"), track)
    return out_path


def _read_table(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if parts:
                out[parts[0]] = [int(p) for p in parts[1:]]
    return out


def stage_mix(corpus_dir, out_dir, snr_list, motors, framing: FramingParams = DEFAULT_FRAMING) -> None:
    """Mix every split: train/dev once under their training condition, test under the full grid."""
    corpus = load_corpus(corpus_dir)
    out = Path(out_dir)
    grid = condition_grid(snr_list, motors)
    for split in SPLITS:
        utts = corpus.split(split)
        if not utts:
            continue
        d = out / split
        d.mkdir(parents=True, exist_ok=True)
        labels = _read_table(Path(corpus_dir) / split / "labels.txt")
        index = []
        for utt in utts:
            clean = read_wav(Path(corpus_dir) / split / f"{utt.utt_id}.wav")
            if split == "test":
                todo = [(f"{utt.utt_id}@{c.tag}", c) for c in grid]
            else:
                todo = [(utt.utt_id, training_condition(corpus.seed, utt, snr_list))]
            for utt_id, cond in todo:
                mixed, track = mix_utterance(clean, corpus.seed, utt, cond, framing)
                write_wav(d / f"{utt_id}.wav", mixed)
                write_motor_track(d / f"{utt_id}.motor.csv", track)
                index.append({"id": utt_id, "phonemes": list(utt.spec.phonemes), "labels": labels[utt.utt_id],
                              "snr_db": cond.snr_db, "motor": cond.motor})
        (d / "index.json").write_text(json.dumps(index) + "\n", encoding="utf-8")


def stage_featurize(mixed_dir, out_dir, framing: FramingParams = DEFAULT_FRAMING) -> None:
    for split in SPLITS:
        src = Path(mixed_dir) / split
        if not (src / "index.json").exists():
            continue
        fs = FeatureSet()
        for rec in json.loads((src / "index.json").read_text(encoding="utf-8")):
            feats = featurize(read_wav(src / f"{rec['id']}.wav"), framing)
            track = read_motor_track(src / f"{rec['id']}.motor.csv")
            fs.append(rec["id"], feats, track.states, rec["labels"], rec["phonemes"],
                      Condition(rec["snr_db"], rec["motor"]))
        fs.save(Path(out_dir) / split)


# ---------------------------------------------------------------------------
# bottleneck / acoustic stages
# ---------------------------------------------------------------------------


def load_split(features_dir, split: str) -> FeatureSet:
    return FeatureSet.load(Path(features_dir) / split)


def train_bn_model(features_dir, bn_config, train_config, out_path, context: int = 11) -> BottleneckModel:
    train = load_split(features_dir, "train")
    model = train_bottleneck(bn_inputs(train, context), bn_targets(bn_config.target, train), bn_config, train_config)
    model.save(out_path)
    return model


def extract_bn_features(model_path, features_dir, out_dir, context: int = 11) -> None:
    """Write ``<out>/<split>/bn.egnf`` with the bottleneck activations of every frame."""
    model = BottleneckModel.load(model_path)
    for split in SPLITS:
        if not (Path(features_dir) / split / "index.json").exists():
            continue
        fs = load_split(features_dir, split)
        d = Path(out_dir) / split
        d.mkdir(parents=True, exist_ok=True)
        if len(fs):
            archive.write_features(d / "bn.egnf", extract_bottleneck(model, bn_inputs(fs, context)))


def _split_rows(matrix: np.ndarray, fs: FeatureSet) -> list:
    bounds = np.cumsum([len(l) for l in fs.labels])[:-1]
    return np.split(matrix, bounds)


def variant_inputs(variant: Variant, fs: FeatureSet, split: str, bn_features_dir=None, bn_model=None,
                   context: int = 11) -> list:
    """Per-utterance AM inputs; BN variants read cached activations when ``bn_features_dir`` is set."""
    variant = Variant(variant)
    if variant.uses_bn and bn_features_dir is not None:
        bn = _split_rows(archive.read_features(Path(bn_features_dir) / split / "bn.egnf"), fs)
        return [concat_features(stack_context(f, context), b) for f, b in zip(fs.mfcc, bn)]
    return [assemble_am_input(variant, f, m, bn_model, context) for f, m in zip(fs.mfcc, fs.motor)]


def train_am_model(variant, features_dir, train_config, out_path, bn_features_dir=None, bn_model_path=None,
                   width: int = 512, n_hidden: int = 5, context: int = 11) -> AcousticModel:
    variant = Variant(variant)
    if variant.uses_bn and bn_features_dir is None and bn_model_path is None:
        raise ValueError(f"variant {variant.value} needs --bn-model or --bn-features")
    bn_model = BottleneckModel.load(bn_model_path) if bn_model_path and bn_features_dir is None else None
    train, dev = load_split(features_dir, "train"), load_split(features_dir, "dev")
    x = variant_inputs(variant, train, "train", bn_features_dir, bn_model, context)
    val = None
    if len(dev):
        val = (variant_inputs(variant, dev, "dev", bn_features_dir, bn_model, context), dev.labels)
    am = train_am(x, train.labels, train_config, n_hidden=n_hidden, width=width, validation=val, variant=variant)
    if bn_model_path is not None:
        # relative to the acoustic model so a run directory can be moved as a whole
        rel = os.path.relpath(Path(bn_model_path).resolve(), Path(out_path).resolve().parent)
        am.bn_reference = {"path": Path(rel).as_posix(), "sha256": sha256_file(bn_model_path)}
    am.save(out_path)
    return am


def _bn_model_for(am: AcousticModel, model_path, bn_model_path=None) -> BottleneckModel | None:
    if not am.variant.uses_bn:
        return None
    path = bn_model_path
    if path is None:
        ref = am.bn_reference.get("path")
        if ref is None:
            raise ValueError(f"variant {am.variant.value} needs its bottleneck model (--bn-model)")
        path = Path(model_path).parent / ref
        if not path.exists():
            raise ValueError(f"bottleneck model {str(path)!r} recorded in {model_path} is missing; pass --bn-model")
    digest = am.bn_reference.get("sha256")
    if bn_model_path is None and digest and sha256_file(path) != digest:
        raise ValueError(f"bottleneck model {path} changed since the acoustic model was trained")
    return BottleneckModel.load(path)


def frames_path(hyp_path) -> Path:
    hyp_path = Path(hyp_path)
    return hyp_path.with_name(hyp_path.name + ".frames.egnf")


def decode_split(model_path, features_dir, hyp_path, split: str = "test", bn_features_dir=None, bn_model_path=None,
                 context: int = 11) -> dict:
    """Write hypotheses to ``hyp_path`` and argmax frame labels next to it."""
    am = AcousticModel.load(model_path)
    fs = load_split(features_dir, split)
    bn_model = None if bn_features_dir is not None else _bn_model_for(am, model_path, bn_model_path)
    inputs = variant_inputs(am.variant, fs, split, bn_features_dir, bn_model, context)
    hyp_path = Path(hyp_path)
    hyp_path.parent.mkdir(parents=True, exist_ok=True)
    hyps, frames = {}, []
    for utt_id, x in zip(fs.utt_ids, inputs):
        post = posteriors(am, x)
        hyps[utt_id] = greedy_decode(post)
        frames.append(np.argmax(post, axis=1))
    write_transcripts(hyp_path, hyps)
    if frames:
        archive.write_features(frames_path(hyp_path), np.concatenate(frames).astype(np.float64)[:, None])
    return hyps


def evaluate_decoding(variant: Variant, hyp_path, features_dir, seed: int, bn_config=None) -> list[ReportRow]:
    """Per-condition report rows for one decoded test split."""
    variant = Variant(variant)
    fs = load_split(features_dir, "test")
    hyps = {k: [int(p) for p in v] for k, v in read_transcripts(hyp_path).items()}
    frames = _split_rows(archive.read_features(frames_path(hyp_path))[:, 0].astype(np.int64), fs)
    by_id = dict(zip(fs.utt_ids, frames))
    rows = []
    for cond in fs.condition_set():
        sub = fs.select(cond)
        acc = frame_accuracy(np.concatenate([by_id[u] for u in sub.utt_ids]), sub.all_labels())
        rows.append(ReportRow(
            variant.value, cond.snr_db, cond.motor,
            variant.bn_target.value if variant.uses_bn else "",
            bn_config.bn_dim if variant.uses_bn else "",
            bn_config.bn_position if variant.uses_bn else "",
            seed, acc, per(sub.references(), {u: hyps[u] for u in sub.utt_ids if u in hyps}), len(sub),
        ))
    return rows


# ---------------------------------------------------------------------------
# end to end
# ---------------------------------------------------------------------------


def _stage_key(config_hash: str, stage: str, upstream: str) -> str:
    return hashlib.sha256(f"{__version__}|{config_hash}|{stage}|{upstream}".encode()).hexdigest()[:16]


def dir_digest(root) -> str:
    """Digest of every file under ``root`` (paths and bytes), ignoring stage stamps."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file() and p.name != ".stage.json"):
        h.update(path.relative_to(root).as_posix().encode() + b"\0")
        h.update(hashlib.sha256(path.read_bytes()).digest())
    return h.hexdigest()


def _read_stamp(stage_dir: Path) -> dict:
    try:
        return json.loads((stage_dir / ".stage.json").read_text(encoding="utf-8"))
    except (FileNotFoundError, json.JSONDecodeError):
        return {}


def _needed_bn_targets(config: PipelineConfig) -> list[BNTarget]:
    targets = {Variant(v).bn_target for v in config.variants if Variant(v).uses_bn}
    return [t for t in BNTarget if t in targets]


def _bn_config(config: PipelineConfig, target: BNTarget):
    return dataclasses.replace(config.bn, target=target)


def run_e2e(config: PipelineConfig, out_dir=None) -> EvalReport:
    """Run gen-corpus through evaluate, reusing stages whose stamps match.

    A stage's key covers the config hash and the output digest of the stage
    before it, so a recomputed stage that yields different bytes invalidates
    everything downstream.
    """
    chash = config.hash()
    out = Path(out_dir or config.output_dir or default_output_root() / f"e2e-{chash}")
    out.mkdir(parents=True, exist_ok=True)
    dirs = {s: out / STAGE_DIRS[s] for s in STAGES}
    seed = config.seed
    variants = [Variant(v) for v in config.variants]

    def gen_corpus(d):
        if config.corpus.dir is not None:
            src = Path(config.corpus.dir)
            shutil.copytree(src, d, dirs_exist_ok=True)
        else:
            write_corpus(generate_corpus(config.corpus.utterances, seed, config.corpus.split_fractions), d,
                         config.framing)

    def train_bn(d):
        d.mkdir(parents=True, exist_ok=True)
        for target in _needed_bn_targets(config):
            which = "bn_train" if target.is_classification else "bn_regression_train"
            train_bn_model(dirs["featurize"], _bn_config(config, target), config.train_config(which),
                           d / f"bn-{target.value}.egnn", config.context)

    def extract_bn(d):
        for target in _needed_bn_targets(config):
            extract_bn_features(dirs["train-bn"] / f"bn-{target.value}.egnn", dirs["featurize"], d / target.value,
                                config.context)

    def train_ams(d):
        d.mkdir(parents=True, exist_ok=True)
        for v in variants:
            bnf = dirs["extract-bn"] / v.bn_target.value if v.uses_bn else None
            bnm = dirs["train-bn"] / f"bn-{v.bn_target.value}.egnn" if v.uses_bn else None
            train_am_model(v, dirs["featurize"], config.train_config("train"), d / f"am-{v.value}.egnn", bnf, bnm,
                           config.am.width, config.am.hidden_layers, config.context)

    def decode(d):
        for v in variants:
            bnf = dirs["extract-bn"] / v.bn_target.value if v.uses_bn else None
            decode_split(dirs["train-am"] / f"am-{v.value}.egnn", dirs["featurize"], d / f"{v.value}.hyp.txt", "test", bnf,
                         context=config.context)

    def evaluate(d):
        rows = []
        for v in variants:
            rows += evaluate_decoding(v, dirs["decode"] / f"{v.value}.hyp.txt", dirs["featurize"], seed,
                                      _bn_config(config, v.bn_target) if v.uses_bn else None)
        report = EvalReport(rows, [], _report_metadata(config))
        report.write(d)

    actions = {
        "gen-corpus": gen_corpus,
        "mix": lambda d: stage_mix(dirs["gen-corpus"], d, config.snr_list, config.motors, config.framing),
        "featurize": lambda d: stage_featurize(dirs["mix"], d, config.framing),
        "train-bn": train_bn,
        "extract-bn": extract_bn,
        "train-am": train_ams,
        "decode": decode,
        "evaluate": evaluate,
    }
    upstream, record = "", []
    for stage in STAGES:
        key = _stage_key(chash, stage, upstream)
        d = dirs[stage]
        stamp = _read_stamp(d)
        recomputed = stamp.get("key") != key or "digest" not in stamp
        if recomputed:
            if d.exists():
                shutil.rmtree(d)
            d.mkdir(parents=True)
            log.info("stage %s: running", stage)
            try:
                actions[stage](d)
            except Exception as exc:
                raise StageError(stage, exc) from exc
            stamp = {"stage": stage, "key": key, "digest": dir_digest(d)}
            (d / ".stage.json").write_text(json.dumps(stamp) + "\n", encoding="utf-8")
        else:
            log.info("stage %s: up to date", stage)
        record.append({"stage": stage, "dir": d.name, "key": key, "digest": stamp["digest"], "recomputed": recomputed})
        upstream = f"{key}:{stamp['digest']}"

    report_csv = dirs["evaluate"] / "report.csv"
    manifest = {
        "version": __version__,
        "config_hash": chash,
        "seeds": {"corpus": seed, "train": seed},
        "config": config.to_dict(),
        "stages": record,
        "report_sha256": sha256_file(report_csv),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return load_report(dirs["evaluate"])


def _report_metadata(config: PipelineConfig) -> dict:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "version": __version__,
        "config_hash": config.hash(),
        "seeds": [config.seed],
        "per": "corpus-level pooled (S+D+I)/N_ref",
        "snr_reference": "total noise (fan + movement)",
    }


def load_report(report_dir) -> EvalReport:
    return EvalReport(read_report_csv(Path(report_dir) / "report.csv"))
