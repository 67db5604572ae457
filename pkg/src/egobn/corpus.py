"""Synthetic corpus: utterance inventory, noisy conditions and feature sets.

A corpus is a list of utterance specs split into train/dev/test. Clean audio
is rendered from the specs, so the on-disk WAVs are a convenience, not the
source of truth. Noise seeds derive from ``(corpus seed, split, utterance
index, noise kind)`` so every condition of one utterance shares the same
noise realization and only the gain differs between SNRs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import archive
from .framing import DEFAULT_FRAMING, FramingParams
from .frontend import mfcc
from .signal import (
    MotorStateTrack,
    NoiseKind,
    UtteranceSpec,
    Waveform,
    mix_at_snr,
    random_utterance_spec,
    synth_ego_noise,
    synth_speech,
    write_wav,
)

CORPUS_VERSION = 1
SPLITS = ("train", "dev", "test")
DEFAULT_SNRS = (5.0, 10.0, 15.0, 20.0)
MOTOR_CONDITIONS = {"motor_off": NoiseKind.FAN_ONLY, "motor_on": NoiseKind.FAN_PLUS_MOVEMENT}


@dataclass(frozen=True)
class Condition:
    snr_db: float
    motor: str  # "motor_off" (fan only) or "motor_on" (fan + movement)

    def __post_init__(self):
        if self.motor not in MOTOR_CONDITIONS:
            raise ValueError(f"motor condition must be one of {sorted(MOTOR_CONDITIONS)}, got {self.motor!r}")
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        object.__setattr__(self, "snr_db", float(self.snr_db))

    @property
    def kind(self) -> NoiseKind:
        return MOTOR_CONDITIONS[self.motor]

    @property
    def tag(self) -> str:
        return f"{self.motor}@{self.snr_db:g}"


def condition_grid(snr_list: Iterable[float] = DEFAULT_SNRS, motors: Iterable[str] = tuple(MOTOR_CONDITIONS)):
    return [Condition(s, m) for m in motors for s in snr_list]


@dataclass(frozen=True)
class Utterance:
    utt_id: str
    split: str
    index: int
    spec: UtteranceSpec


@dataclass
class Corpus:
    seed: int
    utterances: list
    split_fractions: tuple = (0.8, 0.1, 0.1)

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [u for u in self.utterances if u.split == name]

    def __len__(self) -> int:
        return len(self.utterances)

    def to_dict(self) -> dict:
        return {
            "version": CORPUS_VERSION,
            "seed": self.seed,
            "split_fractions": list(self.split_fractions),
            "utterances": [
                {"id": u.utt_id, "split": u.split, "index": u.index, "phonemes": list(u.spec.phonemes),
                 "durations_ms": list(u.spec.durations_ms), "seed": u.spec.seed}
                for u in self.utterances
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Corpus":
        if d.get("version") != CORPUS_VERSION:
            raise ValueError(f"unsupported corpus version {d.get('version')!r}")
        utts = [
            Utterance(r["id"], r["split"], int(r["index"]),
                      UtteranceSpec(tuple(r["phonemes"]), tuple(r["durations_ms"]), int(r["seed"])))
            for r in d["utterances"]
        ]
        return cls(int(d["seed"]), utts, tuple(d["split_fractions"]))


def _split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not np.isclose(sum(fractions), 1.0):
        raise ValueError("split_fractions must be three non-negative numbers summing to 1")
    n_dev = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    # keep every requested split non-empty once there is enough data
    if n >= 3:
        n_dev = max(n_dev, 1) if fractions[1] > 0 else 0
        n_test = max(n_test, 1) if fractions[2] > 0 else 0
    return n - n_dev - n_test, n_dev, n_test


def generate_corpus(n_utterances: int, seed: int, split_fractions=(0.8, 0.1, 0.1)) -> Corpus:
    if n_utterances < 1:
        raise ValueError("n_utterances must be positive")
    rng = np.random.default_rng(seed)
    sizes = _split_sizes(n_utterances, split_fractions)
    utts = []
    for split, size in zip(SPLITS, sizes):
        for i in range(size):
            utts.append(Utterance(f"{split}-{i:04d}", split, i, random_utterance_spec(rng)))
    return Corpus(seed, utts, tuple(split_fractions))


def write_corpus(corpus: Corpus, out_dir, framing: FramingParams = DEFAULT_FRAMING) -> Path:
    """Write ``corpus.json`` plus clean WAVs, transcripts and frame labels per split."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        utts = corpus.split(split)
        if not utts:
            continue
        d = out / split
        d.mkdir(exist_ok=True)
        text, labels = [], []
        for u in utts:
            w, lab = synth_speech(u.spec, framing=framing)
            write_wav(d / f"{u.utt_id}.wav", w)
            text.append(" ".join([u.utt_id, *map(str, u.spec.phonemes)]))
            labels.append(" ".join([u.utt_id, *map(str, lab.tolist())]))
        (d / "text.txt").write_text("\n".join(text) + "\n", encoding="utf-8")
        (d / "labels.txt").write_text("\n".join(labels) + "\n", encoding="utf-8")
    (out / "corpus.json").write_text(json.dumps(corpus.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_corpus(corpus_dir) -> Corpus:
    path = Path(corpus_dir) / "corpus.json"
    if not path.exists():
        raise FileNotFoundError(f"{corpus_dir}: no corpus.json (not a corpus directory)")
    return Corpus.from_dict(json.loads(path.read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# noisy conditions
# ---------------------------------------------------------------------------


def _split_id(split: str) -> int:
    return SPLITS.index(split)


def noise_seed(corpus_seed: int, utt: Utterance, kind: NoiseKind) -> int:
    kind_id = 0 if NoiseKind(kind) is NoiseKind.FAN_ONLY else 1
    ss = np.random.SeedSequence([corpus_seed, _split_id(utt.split), utt.index, kind_id])
    return int(ss.generate_state(1)[0])


def training_condition(corpus_seed: int, utt: Utterance, snr_list: Sequence[float] = DEFAULT_SNRS) -> Condition:
    """The single condition a train/dev utterance is mixed under (multi-condition training)."""
    rng = np.random.default_rng(np.random.SeedSequence([corpus_seed, _split_id(utt.split), utt.index, 7]))
    motor = tuple(MOTOR_CONDITIONS)[int(rng.integers(len(MOTOR_CONDITIONS)))]
    return Condition(float(snr_list[int(rng.integers(len(snr_list)))]), motor)


def mix_utterance(
    clean: Waveform, corpus_seed: int, utt: Utterance, condition: Condition,
    framing: FramingParams = DEFAULT_FRAMING,
) -> tuple[Waveform, MotorStateTrack]:
    noise, track = synth_ego_noise(condition.kind, clean.duration_ms, noise_seed(corpus_seed, utt, condition.kind),
                                   sample_rate_hz=clean.sample_rate_hz, framing=framing)
    return mix_at_snr(clean, noise, condition.snr_db), track


def featurize(w: Waveform, framing: FramingParams = DEFAULT_FRAMING) -> np.ndarray:
    # features are held at archive (float32) precision so disk and memory agree
    return mfcc(w, framing).astype(np.float32).astype(np.float64)


@dataclass
class FeatureSet:
    """Per-utterance MFCCs, motor states, frame labels and reference phonemes."""

    utt_ids: list = field(default_factory=list)
    mfcc: list = field(default_factory=list)
    motor: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    phonemes: list = field(default_factory=list)
    conditions: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.utt_ids)

    def append(self, utt_id, feats, motor, labels, phonemes, condition) -> None:
        motor = np.asarray(motor, dtype=bool)
        labels = np.asarray(labels, dtype=np.int64)
        if not (feats.shape[0] == motor.shape[0] == labels.shape[0]):
            raise ValueError(f"{utt_id}: frame-count mismatch: {feats.shape[0]} vs {motor.shape[0]} vs {labels.shape[0]}")
        self.utt_ids.append(utt_id)
        self.mfcc.append(feats)
        self.motor.append(motor)
        self.labels.append(labels)
        self.phonemes.append(tuple(int(p) for p in phonemes))
        self.conditions.append(condition)

    def select(self, condition: Condition) -> "FeatureSet":
        out = FeatureSet()
        for i, c in enumerate(self.conditions):
            if c == condition:
                out.append(self.utt_ids[i], self.mfcc[i], self.motor[i], self.labels[i], self.phonemes[i], c)
        return out

    def condition_set(self) -> list:
        return sorted(set(self.conditions), key=lambda c: (c.motor, c.snr_db))

    def all_labels(self) -> np.ndarray:
        return np.concatenate(self.labels)

    def references(self) -> dict:
        return dict(zip(self.utt_ids, self.phonemes))

    @property
    def n_frames(self) -> int:
        return int(sum(len(l) for l in self.labels))

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        index = [
            {"id": u, "n_frames": int(len(l)), "phonemes": list(p), "snr_db": c.snr_db, "motor": c.motor}
            for u, l, p, c in zip(self.utt_ids, self.labels, self.phonemes, self.conditions)
        ]
        (out / "index.json").write_text(json.dumps(index, indent=0) + "\n", encoding="utf-8")
        if self.utt_ids:
            archive.write_features(out / "mfcc.egnf", np.concatenate(self.mfcc))
            archive.write_features(out / "motor.egnf", np.concatenate(self.motor).astype(np.float64)[:, None])
            archive.write_features(out / "labels.egnf", np.concatenate(self.labels).astype(np.float64)[:, None])
        with open(out / "ref.txt", "w", encoding="utf-8") as fh:
            for u, p in zip(self.utt_ids, self.phonemes):
                fh.write(" ".join([u, *map(str, p)]) + "\n")
        return out

    @classmethod
    def load(cls, in_dir) -> "FeatureSet":
        d = Path(in_dir)
        if not (d / "index.json").exists():
            raise FileNotFoundError(f"{in_dir}: no index.json (not a feature set directory)")
        index = json.loads((d / "index.json").read_text(encoding="utf-8"))
        out = cls()
        if not index:
            return out
        feats = archive.read_features(d / "mfcc.egnf")
        motor = archive.read_features(d / "motor.egnf")[:, 0] > 0.5
        labels = archive.read_features(d / "labels.egnf")[:, 0].astype(np.int64)
        total = sum(r["n_frames"] for r in index)
        if feats.shape[0] != total or motor.shape[0] != total or labels.shape[0] != total:
            raise ValueError(f"{in_dir}: archives hold {feats.shape[0]} frames, index lists {total}")
        start = 0
        for r in index:
            stop = start + r["n_frames"]
            out.append(r["id"], feats[start:stop], motor[start:stop], labels[start:stop], r["phonemes"],
                       Condition(r["snr_db"], r["motor"]))
            start = stop
        return out


def build_feature_set(
    corpus: Corpus,
    split: str,
    conditions: Sequence[Condition] | None = None,
    snr_list: Sequence[float] = DEFAULT_SNRS,
    framing: FramingParams = DEFAULT_FRAMING,
) -> FeatureSet:
    """Mix and featurize one split.

    With ``conditions=None`` each utterance is mixed once under its own
    seeded training condition; otherwise every utterance is mixed under every
    listed condition and its id is suffixed with the condition tag.
    """
    out = FeatureSet()
    for utt in corpus.split(split):
        clean, labels = synth_speech(utt.spec, framing=framing)
        if conditions is None:
            todo = [(utt.utt_id, training_condition(corpus.seed, utt, snr_list))]
        else:
            todo = [(f"{utt.utt_id}@{c.tag}", c) for c in conditions]
        for utt_id, cond in todo:
            mixed, track = mix_utterance(clean, corpus.seed, utt, cond, framing)
            out.append(utt_id, featurize(mixed, framing), track.states, labels, utt.spec.phonemes, cond)
    return out
