"""Training/evaluation of system variants over a grid of cells and seeds.

Trained models are cached under ``<out>/models/<data+settings hash>/`` by
cell and seed, so an interrupted sweep resumes where it stopped and produces
the same CSV as an uninterrupted one.
"""

from __future__ import annotations

import difflib
import hashlib
import json
import logging
import multiprocessing
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .acoustic import (
    CONTEXT,
    DEFAULT_AM_TRAIN,
    AcousticModel,
    Variant,
    am_inputs,
    bn_inputs,
    bn_targets,
    decode_feature_set,
    train_am,
)
from .bottleneck import DEFAULT_BN_REGRESSION_TRAIN, DEFAULT_BN_TRAIN, BNTarget, BottleneckConfig, BottleneckModel, train_bottleneck
from .corpus import DEFAULT_SNRS, MOTOR_CONDITIONS, Corpus, FeatureSet, build_feature_set, condition_grid
from .evaluation import REPORT_SCHEMA_VERSION, EvalReport, ReportRow, emit_position_curve, frame_accuracy, per
from .framing import DEFAULT_FRAMING
from .nn import TrainConfig

log = logging.getLogger(__name__)

VARIANT_ORDER = tuple(Variant)
BN_DIMS = (40, 80)
BN_POSITIONS = (1, 2, 3, 4)


@dataclass(frozen=True)
class GridCell:
    variant: Variant
    bn_dim: int | None = None
    bn_position: int | None = None

    def __post_init__(self):
        v = Variant(self.variant)
        object.__setattr__(self, "variant", v)
        if v.uses_bn:
            object.__setattr__(self, "bn_dim", int(self.bn_dim if self.bn_dim is not None else 40))
            object.__setattr__(self, "bn_position", int(self.bn_position if self.bn_position is not None else 2))
        elif self.bn_dim is not None or self.bn_position is not None:
            raise ValueError(f"variant {v.value} has no bottleneck settings")

    def sort_key(self) -> tuple:
        return (VARIANT_ORDER.index(self.variant), self.bn_dim or 0, self.bn_position or 0)

    @property
    def name(self) -> str:
        if not self.variant.uses_bn:
            return self.variant.value
        return f"{self.variant.value}-d{self.bn_dim}-p{self.bn_position}"


@dataclass(frozen=True)
class SweepGrid:
    cells: tuple
    snr_list: tuple = DEFAULT_SNRS
    motors: tuple = tuple(MOTOR_CONDITIONS)

    def __post_init__(self):
        cells = tuple(sorted(set(self.cells), key=GridCell.sort_key))
        if not cells:
            raise ValueError("grid has no cells")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "snr_list", tuple(float(s) for s in self.snr_list))
        for m in self.motors:
            if m not in MOTOR_CONDITIONS:
                raise ValueError(f"unknown motor condition {m!r}")

    @classmethod
    def full_grid(cls, position_sweep: bool = True) -> "SweepGrid":
        """Both baselines, every BN target at 40/80 dims, optionally across positions 1-4."""
        cells = [GridCell(Variant.MFCC), GridCell(Variant.MFCC_MS)]
        positions = BN_POSITIONS if position_sweep else (2,)
        for v in (Variant.BN_PHN, Variant.BN_MS, Variant.BN_MFCC):
            cells += [GridCell(v, d, p) for d in BN_DIMS for p in positions]
        return cls(tuple(cells))

    @classmethod
    def from_dict(cls, d: dict) -> "SweepGrid":
        """Grid from ``{"variants", "bn_dims", "bn_positions", "snr_db", "motor"}``; unknown keys rejected."""
        allowed = ("variants", "bn_dims", "bn_positions", "snr_db", "motor")
        for key in d:
            if key not in allowed:
                hint = difflib.get_close_matches(key, allowed, n=1)
                raise ValueError(f"unknown grid key {key!r}" + (f" (did you mean {hint[0]!r}?)" if hint else ""))
        variants = [Variant(v) for v in d.get("variants", [v.value for v in Variant])]
        dims = d.get("bn_dims", [40])
        positions = d.get("bn_positions", [2])
        cells = []
        for v in variants:
            if v.uses_bn:
                cells += [GridCell(v, dim, pos) for dim in dims for pos in positions]
            else:
                cells.append(GridCell(v))
        return cls(tuple(cells), tuple(d.get("snr_db", DEFAULT_SNRS)), tuple(d.get("motor", tuple(MOTOR_CONDITIONS))))

    def to_dict(self) -> dict:
        return {
            "cells": [[c.variant.value, c.bn_dim, c.bn_position] for c in self.cells],
            "snr_db": list(self.snr_list),
            "motor": list(self.motors),
        }


@dataclass(frozen=True)
class SweepSettings:
    am_train: TrainConfig = DEFAULT_AM_TRAIN
    bn_train: TrainConfig = DEFAULT_BN_TRAIN
    bn_regression_train: TrainConfig = DEFAULT_BN_REGRESSION_TRAIN
    am_width: int = 512
    am_hidden: int = 5
    bn_wide_dim: int = 512
    context: int = CONTEXT

    def to_dict(self) -> dict:
        return asdict(self)

    def bn_train_for(self, target: BNTarget) -> TrainConfig:
        return self.bn_train if BNTarget(target).is_classification else self.bn_regression_train


@dataclass
class SweepData:
    train: FeatureSet
    dev: FeatureSet
    test: FeatureSet
    corpus_seed: int | None = None

    @classmethod
    def from_corpus(cls, corpus: Corpus, snr_list=DEFAULT_SNRS, motors=tuple(MOTOR_CONDITIONS)) -> "SweepData":
        return cls(
            build_feature_set(corpus, "train", snr_list=snr_list),
            build_feature_set(corpus, "dev", snr_list=snr_list),
            build_feature_set(corpus, "test", condition_grid(snr_list, motors)),
            corpus.seed,
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for fs in (self.train, self.dev, self.test):
            for utt, feats, motor, labels in zip(fs.utt_ids, fs.mfcc, fs.motor, fs.labels):
                h.update(utt.encode())
                h.update(np.ascontiguousarray(feats).tobytes())
                h.update(np.ascontiguousarray(motor).tobytes())
                h.update(np.ascontiguousarray(labels).tobytes())
        return h.hexdigest()


def config_hash(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _atomic_write(path: Path, blob: bytes) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def train_system(
    cell: GridCell,
    data: SweepData,
    settings: SweepSettings,
    seed: int,
    cache_dir: Path | None = None,
) -> tuple[AcousticModel, BottleneckModel | None]:
    """Train (or load from ``cache_dir``) the bottleneck and acoustic models of one cell."""
    bn_model = None
    if cell.variant.uses_bn:
        bcfg = BottleneckConfig(cell.variant.bn_target, cell.bn_dim, cell.bn_position, settings.bn_wide_dim)
        path = cache_dir / f"bn-{bcfg.target.value}-d{cell.bn_dim}-p{cell.bn_position}-s{seed}.egnn" if cache_dir else None
        if path is not None and path.exists():
            bn_model = BottleneckModel.load(path)
        else:
            bn_model = train_bottleneck(
                bn_inputs(data.train, settings.context), bn_targets(bcfg.target, data.train), bcfg,
                replace(settings.bn_train_for(bcfg.target), seed=seed),
            )
            if path is not None:
                _atomic_write(path, bn_model.to_bytes())
    path = cache_dir / f"am-{cell.name}-s{seed}.egnn" if cache_dir else None
    if path is not None and path.exists():
        return AcousticModel.load(path), bn_model
    am = train_am(
        am_inputs(cell.variant, data.train, bn_model, settings.context), data.train.labels,
        replace(settings.am_train, seed=seed), n_hidden=settings.am_hidden, width=settings.am_width,
        validation=(am_inputs(cell.variant, data.dev, bn_model, settings.context), data.dev.labels)
        if len(data.dev) else None,
        variant=cell.variant,
    )
    if path is not None:
        _atomic_write(path, am.to_bytes())
    return am, bn_model


def evaluate_system(
    cell: GridCell, am: AcousticModel, bn_model: BottleneckModel | None, test: FeatureSet, seed: int,
    conditions=None, context: int = CONTEXT,
) -> list[ReportRow]:
    rows = []
    for cond in conditions or test.condition_set():
        subset = test.select(cond)
        if not len(subset):
            continue
        hyps, frames = decode_feature_set(am, subset, bn_model, context)
        acc = frame_accuracy(np.concatenate([frames[u] for u in subset.utt_ids]), subset.all_labels())
        rows.append(ReportRow(
            cell.variant.value, cond.snr_db, cond.motor,
            cell.variant.bn_target.value if cell.variant.uses_bn else "",
            cell.bn_dim if cell.bn_dim is not None else "",
            cell.bn_position if cell.bn_position is not None else "",
            seed, acc, per(subset.references(), hyps), len(subset),
        ))
    return rows


# worker state is inherited through fork rather than pickled per job
_JOB_STATE: dict = {}


def _run_job(job: tuple[GridCell, int]):
    cell, seed = job
    st = _JOB_STATE
    try:
        am, bn = train_system(cell, st["data"], st["settings"], seed, st["cache_dir"])
        return evaluate_system(cell, am, bn, st["data"].test, seed, st["conditions"], st["settings"].context), None
    except Exception as exc:  # a failing cell is recorded, the sweep goes on
        log.error("cell %s seed %d failed: %s", cell.name, seed, exc)
        return [], {"cell": cell.name, "seed": seed, "error": f"{type(exc).__name__}: {exc}",
                    "traceback": traceback.format_exc()}


def run_sweep(
    grid: SweepGrid,
    data: SweepData | Corpus,
    settings: SweepSettings = SweepSettings(),
    seeds: Sequence[int] = (0,),
    out_dir=None,
    workers: int = 1,
) -> EvalReport:
    """Train and score every (cell, seed); one report row per cell, seed and condition."""
    if isinstance(data, Corpus):
        data = SweepData.from_corpus(data, grid.snr_list, grid.motors)
    conditions = condition_grid(grid.snr_list, grid.motors)
    digest = config_hash(data.digest(), settings.to_dict(), __version__)
    cache_dir = None
    if out_dir is not None:
        cache_dir = Path(out_dir) / "models" / digest
        cache_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cell, int(seed)) for seed in seeds for cell in grid.cells]
    _JOB_STATE.update(data=data, settings=settings, cache_dir=cache_dir, conditions=conditions)
    try:
        if workers > 1 and len(jobs) > 1:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                results = list(pool.map(_run_job, jobs))
        else:
            results = [_run_job(job) for job in jobs]
    finally:
        _JOB_STATE.clear()
    rows = [r for rs, _ in results for r in rs]
    failures = [f for _, f in results if f is not None]
    metadata = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "version": __version__,
        "config_hash": config_hash(grid.to_dict(), settings.to_dict(), [int(s) for s in seeds], data.digest()),
        "seeds": [int(s) for s in seeds],
        "corpus_seed": data.corpus_seed,
        "per": "corpus-level pooled (S+D+I)/N_ref",
        "snr_reference": "total noise (fan + movement)",
        "framing": DEFAULT_FRAMING.to_dict(),
    }
    report = EvalReport(rows, failures, metadata)
    if out_dir is not None:
        write_sweep_outputs(report, Path(out_dir), grid, settings)
    return report


def write_sweep_outputs(report: EvalReport, out: Path, grid: SweepGrid, settings: SweepSettings) -> None:
    report.write(out)
    emit_position_curve(report, out / "position_curve.csv")
    meta = dict(report.metadata, grid=grid.to_dict(), settings=settings.to_dict())
    (out / "sweep.json").write_text(json.dumps(meta, indent=1, sort_keys=True, default=str) + "\n", encoding="utf-8")
    (out / "failures.json").write_text(
        json.dumps([{k: v for k, v in f.items() if k != "traceback"} for f in report.failures], indent=1) + "\n",
        encoding="utf-8",
    )


def motor_condition_means(rows: Sequence[ReportRow]) -> dict:
    """Mean PER over SNRs per (variant, motor, seed) from per-condition rows."""
    groups: dict = {}
    for r in rows:
        if r.snr_db == "avg":
            continue
        groups.setdefault((r.variant, r.motor, r.seed), []).append(r.per)
    return {k: float(np.mean(v)) for k, v in groups.items()}

