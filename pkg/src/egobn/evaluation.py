"""Phoneme error rate, frame accuracy and the sweep report format."""

from __future__ import annotations

import csv
import io
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Hashable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("variant", "snr_db", "motor", "bn_target", "bn_dim", "bn_pos", "seed", "frame_acc", "per")
REPORT_SCHEMA_VERSION = 1
CURVE_COLUMNS = ("bn_target", "bn_dim", "bn_pos", "per", "n_rows", "complete")


def edit_distance(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> tuple[int, int, int]:
    """Unit-cost Levenshtein alignment of ``hyp`` against ``ref``.

    Returns ``(substitutions, deletions, insertions)``. Among equal-cost
    alignments the backtrace prefers a diagonal step (match/substitution),
    then a deletion, then an insertion.
    """
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        ri = ref[i - 1]
        for j in range(1, m + 1):
            diag = d[i - 1, j - 1] + (ri != hyp[j - 1])
            d[i, j] = min(diag, d[i - 1, j] + 1, d[i, j - 1] + 1)
    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return int(subs), dels, ins


def per(refs: Mapping[str, Sequence], hyps: Mapping[str, Sequence]) -> float:
    """Corpus-level PER: total edit errors over total reference length."""
    missing = [k for k in refs if k not in hyps]
    if missing:
        raise KeyError(f"no hypothesis for {len(missing)} reference(s), e.g. {missing[0]!r}")
    extra = [k for k in hyps if k not in refs]
    if extra:
        log.warning("ignoring %d hypotheses without a reference", len(extra))
    errors = n_ref = 0
    for key in sorted(refs):
        errors += sum(edit_distance(refs[key], hyps[key]))
        n_ref += len(refs[key])
    if n_ref == 0:
        raise ValueError("references are empty")
    return errors / n_ref


def frame_accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    if predicted.shape != labels.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {labels.shape}")
    return float(np.mean(predicted == labels))


# ---------------------------------------------------------------------------
# transcript files: one utterance per line, "utt_id sym sym ..."
# ---------------------------------------------------------------------------


def read_transcripts(path) -> dict[str, list[str]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if parts:
                out[parts[0]] = parts[1:]
    return out


def write_transcripts(path, transcripts: Mapping[str, Sequence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(transcripts):
            fh.write(" ".join([key, *map(str, transcripts[key])]) + "\n")


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportRow:
    variant: str
    snr_db: object  # float, or "avg" in summary rows
    motor: str
    bn_target: str = ""
    bn_dim: object = ""
    bn_pos: object = ""
    seed: int = 0
    frame_acc: float = float("nan")
    per: float = float("nan")
    n_utterances: int = 0  # carried in memory only; not part of the frozen CSV schema

    def csv_values(self) -> list[str]:
        def fmt(v):
            if isinstance(v, float):
                return repr(round(v, 10))
            return str(v)
        return [fmt(getattr(self, c)) for c in REPORT_COLUMNS]

    def condition_key(self) -> tuple:
        return (self.variant, self.motor, self.bn_target, str(self.bn_dim), str(self.bn_pos), self.seed)


@dataclass
class EvalReport:
    rows: list
    failures: list = None
    metadata: dict = None

    def __post_init__(self):
        self.failures = self.failures or []
        self.metadata = self.metadata or {}

    def sorted_rows(self) -> list:
        return sorted(self.rows, key=lambda r: (*r.condition_key(), float(r.snr_db)))

    def averages(self) -> list:
        """Arithmetic mean over the SNR conditions of each (system, motor, seed)."""
        groups = defaultdict(list)
        for row in self.rows:
            groups[row.condition_key()].append(row)
        out = []
        for key in sorted(groups):
            rows = groups[key]
            first = rows[0]
            out.append(ReportRow(
                first.variant, "avg", first.motor, first.bn_target, first.bn_dim, first.bn_pos, first.seed,
                float(np.mean([r.frame_acc for r in rows])), float(np.mean([r.per for r in rows])),
                sum(r.n_utterances for r in rows),
            ))
        return out

    def to_csv(self, summary: bool = False) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in (self.averages() if summary else self.sorted_rows()):
            writer.writerow(row.csv_values())
        return buf.getvalue()

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(self.to_csv(), encoding="utf-8")
        (out / "summary.csv").write_text(self.to_csv(summary=True), encoding="utf-8")


def read_report_csv(path) -> list[ReportRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = []
        for rec in reader:
            snr = rec["snr_db"]
            rows.append(ReportRow(
                rec["variant"], snr if snr == "avg" else float(snr), rec["motor"], rec["bn_target"],
                rec["bn_dim"], rec["bn_pos"], int(rec["seed"]), float(rec["frame_acc"]), float(rec["per"]),
            ))
    return rows


def position_curve(rows: Sequence[ReportRow], positions=(1, 2, 3, 4)) -> list[dict]:
    """Mean PER per (target, bn_dim, position) over all conditions and seeds of the BN rows."""
    groups = defaultdict(list)
    for r in rows:
        if r.bn_target and r.bn_pos not in ("", None) and r.snr_db != "avg":
            groups[(r.bn_target, int(r.bn_dim), int(r.bn_pos))].append(r.per)
    series = sorted({(t, d) for t, d, _ in groups})
    out = []
    for target, dim in series:
        complete = all((target, dim, p) in groups for p in positions)
        for pos in positions:
            vals = groups.get((target, dim, pos))
            if vals is None:
                continue
            out.append({"bn_target": target, "bn_dim": dim, "bn_pos": pos,
                        "per": float(np.mean(vals)), "n_rows": len(vals), "complete": int(complete)})
    return out


def emit_position_curve(report: EvalReport | Sequence[ReportRow], path=None) -> str:
    """Plot-ready CSV of PER against bottleneck position, one series per (target, bn_dim).

    Series lacking a position are kept but flagged with ``complete = 0``.
    """
    rows = report.rows if isinstance(report, EvalReport) else list(report)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_COLUMNS)
    points = position_curve(rows)
    for p in points:
        writer.writerow([p["bn_target"], p["bn_dim"], p["bn_pos"], repr(round(p["per"], 10)), p["n_rows"], p["complete"]])
    partial = sorted({(p["bn_target"], p["bn_dim"]) for p in points if not p["complete"]})
    if partial:
        log.warning("incomplete position series: %s", partial)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def curve_minima(points: Sequence[dict]) -> dict:
    """Best bottleneck position per (target, bn_dim) series."""
    best = {}
    for p in points:
        key = (p["bn_target"], p["bn_dim"])
        if key not in best or p["per"] < best[key][1]:
            best[key] = (p["bn_pos"], p["per"])
    return {k: v[0] for k, v in best.items()}


def row_from_dict(d: dict) -> ReportRow:
    names = {f.name for f in fields(ReportRow)}
    return ReportRow(**{k: v for k, v in d.items() if k in names})


def row_to_dict(r: ReportRow) -> dict:
    return asdict(r)
