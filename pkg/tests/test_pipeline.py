import json
import shutil

import numpy as np
import pytest

from egobn import __version__
from egobn import pipeline
from egobn.acoustic import AcousticModel
from egobn.archive import read_features
from egobn.config import config_from_dict
from egobn.corpus import FeatureSet, featurize, generate_corpus, load_corpus, write_corpus
from egobn.pipeline import STAGE_DIRS, STAGES, StageError, dir_digest, mix_file, run_e2e
from egobn.signal import read_motor_track, read_wav

TINY = {
    "seed": 3,
    "corpus": {"utterances": 20},
    "snr_list": [5, 20],
    "train": {"epochs": 2},
    "bn_train": {"epochs": 2},
    "bn_regression_train": {"epochs": 2},
    "bn": {"wide_dim": 32, "bn_dim": 8},
    "am": {"width": 32, "hidden_layers": 2},
}


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("e2e") / "run"
    cfg = config_from_dict(TINY)
    report = run_e2e(cfg, out)
    return cfg, out, report


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


class TestEndToEnd:
    def test_report_non_empty(self, tiny_run):
        _, out, report = tiny_run
        assert len(report.rows) == 5 * 2 * 2
        assert (out / "report" / "report.csv").read_text().startswith("variant,snr_db,motor")

    def test_every_stage_has_artifacts(self, tiny_run):
        _, out, _ = tiny_run
        for stage in STAGES:
            d = out / STAGE_DIRS[stage]
            assert (d / ".stage.json").exists()
            assert any(p.name != ".stage.json" for p in d.rglob("*"))

    def test_manifest(self, tiny_run):
        cfg, out, _ = tiny_run
        m = manifest(out)
        assert m["config_hash"] == cfg.hash()
        assert m["version"] == __version__
        assert m["seeds"] == {"corpus": 3, "train": 3}
        assert [s["stage"] for s in m["stages"]] == list(STAGES)
        assert m["report_sha256"] == pipeline.sha256_file(out / "report" / "report.csv")

    def test_bn_reference_recorded(self, tiny_run):
        _, out, _ = tiny_run
        am = AcousticModel.load(out / "am-models" / "am-bn-phn.egnn")
        assert am.bn_reference["sha256"] == pipeline.sha256_file(out / "bn-models" / "bn-phn.egnn")
        assert AcousticModel.load(out / "am-models" / "am-mfcc.egnn").bn_reference == {}

    def test_rerun_skips_everything(self, tiny_run):
        cfg, out, _ = tiny_run
        before = (out / "report" / "report.csv").read_bytes()
        run_e2e(cfg, out)
        assert not any(s["recomputed"] for s in manifest(out)["stages"])
        assert (out / "report" / "report.csv").read_bytes() == before

    def test_fresh_run_identical(self, tiny_run, tmp_path):
        cfg, out, _ = tiny_run
        run_e2e(cfg, tmp_path / "again")
        assert manifest(tmp_path / "again")["report_sha256"] == manifest(out)["report_sha256"]
        for stage in STAGES:
            assert dir_digest(tmp_path / "again" / STAGE_DIRS[stage]) == dir_digest(out / STAGE_DIRS[stage])

    @pytest.mark.parametrize("stage", ["mix", "featurize", "train-bn", "extract-bn", "decode"])
    def test_deleted_stage_recomputed_downstream_identical(self, tiny_run, tmp_path, stage):
        cfg, out, _ = tiny_run
        work = tmp_path / "run"
        shutil.copytree(out, work)
        before = dir_digest(work / STAGE_DIRS[stage])
        report = (work / "report" / "report.csv").read_bytes()
        shutil.rmtree(work / STAGE_DIRS[stage])
        run_e2e(cfg, work)
        flags = {s["stage"]: s["recomputed"] for s in manifest(work)["stages"]}
        assert flags[stage]
        assert sum(flags.values()) == 1
        assert dir_digest(work / STAGE_DIRS[stage]) == before
        assert (work / "report" / "report.csv").read_bytes() == report

    def test_changed_upstream_output_invalidates_downstream(self, tiny_run, tmp_path):
        cfg, out, _ = tiny_run
        work = tmp_path / "run"
        shutil.copytree(out, work)
        stamp = json.loads((work / "bn-models" / ".stage.json").read_text())
        stamp["digest"] = "0" * 64
        (work / "bn-models" / ".stage.json").write_text(json.dumps(stamp))
        run_e2e(cfg, work)
        flags = [s["recomputed"] for s in manifest(work)["stages"]]
        assert flags == [False] * 4 + [True] * 4

    def test_config_change_recomputes(self, tiny_run, tmp_path):
        _, out, _ = tiny_run
        work = tmp_path / "run"
        shutil.copytree(out, work)
        cfg = config_from_dict({**TINY, "train": {"epochs": 1}})
        run_e2e(cfg, work)
        assert all(s["recomputed"] for s in manifest(work)["stages"])

    def test_failure_names_stage_and_keeps_artifacts(self, tmp_path, monkeypatch):
        def boom(*args, **kwargs):
            raise RuntimeError("disk on fire")

        cfg = config_from_dict({**TINY, "variants": ["mfcc", "bn-ms"]})
        monkeypatch.setattr(pipeline, "train_bn_model", boom)
        with pytest.raises(StageError, match="stage train-bn failed: RuntimeError: disk on fire") as info:
            run_e2e(cfg, tmp_path)
        assert info.value.stage == "train-bn"
        assert (tmp_path / "features" / ".stage.json").exists()
        assert (tmp_path / "bn-models").is_dir()
        assert not (tmp_path / "bn-models" / ".stage.json").exists()
        assert not (tmp_path / "manifest.json").exists()
        monkeypatch.undo()
        run_e2e(cfg, tmp_path)
        flags = {s["stage"]: s["recomputed"] for s in manifest(tmp_path)["stages"]}
        assert not flags["featurize"] and flags["train-bn"]

    def test_existing_corpus_dir(self, tmp_path):
        write_corpus(generate_corpus(12, 9), tmp_path / "c")
        cfg = config_from_dict({**TINY, "variants": ["mfcc"], "corpus": {"dir": str(tmp_path / "c")}})
        run_e2e(cfg, tmp_path / "out")
        assert load_corpus(tmp_path / "out" / "corpus").to_dict() == load_corpus(tmp_path / "c").to_dict()


class TestStages:
    def test_mix_file(self, tmp_path):
        write_corpus(generate_corpus(3, 1), tmp_path / "c")
        src = next((tmp_path / "c" / "train").glob("*.wav"))
        out = mix_file(src, "move", 5.0, 7, tmp_path / "m.wav")
        mixed, clean = read_wav(out), read_wav(src)
        assert len(mixed.samples) == len(clean.samples)
        track = read_motor_track(tmp_path / "m.wav.motor.csv")
        assert len(track) == (len(clean.samples) - 400) // 160 + 1

    def test_featurize_stage_matches_mixed_wavs(self, tiny_run):
        _, out, _ = tiny_run
        fs = FeatureSet.load(out / "features" / "test")
        # every test utterance under 2 SNRs x 2 motor conditions
        assert len(fs) == 4 * len(load_corpus(out / "corpus").split("test"))
        first = fs.utt_ids[0]
        w = read_wav(out / "mixed" / "test" / f"{first}.wav")
        assert np.array_equal(featurize(w), fs.mfcc[0])

    def test_bn_features_cover_every_frame(self, tiny_run):
        _, out, _ = tiny_run
        for split in ("train", "dev", "test"):
            fs = FeatureSet.load(out / "features" / split)
            bn = read_features(out / "bn-features" / "phn" / split / "bn.egnf")
            assert bn.shape == (fs.n_frames, 8)
