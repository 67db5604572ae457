import json

import pytest

from egobn.acoustic import Variant
from egobn.corpus import condition_grid, generate_corpus
from egobn.nn import TrainConfig
from egobn.sweep import GridCell, SweepData, SweepGrid, SweepSettings, motor_condition_means, run_sweep

TINY = SweepSettings(
    am_train=TrainConfig(0.05, 32, 1),
    bn_train=TrainConfig(0.5, 32, 1),
    bn_regression_train=TrainConfig(0.02, 32, 1),
    am_width=16,
    am_hidden=1,
    bn_wide_dim=32,
)


@pytest.fixture(scope="module")
def data():
    return SweepData.from_corpus(generate_corpus(10, seed=5), (5.0, 20.0))


def small_grid(**kw):
    return SweepGrid.from_dict({"variants": ["mfcc", "bn-ms"], "bn_dims": [8], "snr_db": [5, 20], **kw})


class TestGrid:
    def test_full_grid_cells(self):
        grid = SweepGrid.full_grid()
        assert len(grid.cells) == 2 + 3 * 2 * 4
        assert len({c.name for c in grid.cells}) == 26

    def test_full_grid_without_positions_gives_64_rows(self):
        grid = SweepGrid.full_grid(position_sweep=False)
        assert len(grid.cells) * len(condition_grid(grid.snr_list, grid.motors)) == 64

    def test_duplicates_removed_and_sorted(self):
        cells = (GridCell("bn-ms", 40, 2), GridCell("mfcc"), GridCell("bn-ms", 40, 2))
        assert SweepGrid(cells).cells == (GridCell("mfcc"), GridCell("bn-ms", 40, 2))

    def test_bn_defaults(self):
        c = GridCell("bn-phn")
        assert (c.bn_dim, c.bn_position, c.name) == (40, 2, "bn-phn-d40-p2")

    def test_baseline_rejects_bn_settings(self):
        with pytest.raises(ValueError):
            GridCell(Variant.MFCC, 40)

    def test_unknown_key_hint(self):
        with pytest.raises(ValueError, match="did you mean 'bn_dims'"):
            SweepGrid.from_dict({"bn_dim": [40]})

    def test_unknown_motor(self):
        with pytest.raises(ValueError):
            SweepGrid.from_dict({"motor": ["idle"]})

    def test_empty(self):
        with pytest.raises(ValueError):
            SweepGrid(())


class TestRun:
    def test_one_cell_one_condition_one_row(self, data):
        grid = SweepGrid.from_dict({"variants": ["mfcc"], "snr_db": [5], "motor": ["motor_on"]})
        report = run_sweep(grid, data, TINY, seeds=[0])
        assert len(report.rows) == 1
        row = report.rows[0]
        assert (row.variant, row.snr_db, row.motor, row.seed) == ("mfcc", 5.0, "motor_on", 0)
        assert 0.0 <= row.frame_acc <= 1.0

    def test_row_count(self, data):
        report = run_sweep(small_grid(), data, TINY, seeds=[0, 1])
        assert len(report.rows) == 2 * 2 * 4
        assert not report.failures

    def test_outputs_written(self, data, tmp_path):
        run_sweep(small_grid(), data, TINY, seeds=[0], out_dir=tmp_path)
        for name in ("report.csv", "summary.csv", "position_curve.csv", "sweep.json", "failures.json"):
            assert (tmp_path / name).exists()
        meta = json.loads((tmp_path / "sweep.json").read_text())
        assert meta["seeds"] == [0]
        assert len(meta["config_hash"]) == 16

    def test_resume_reproduces_csv(self, data, tmp_path):
        run_sweep(small_grid(), data, TINY, seeds=[0], out_dir=tmp_path / "a")
        first = (tmp_path / "a" / "report.csv").read_bytes()
        models = sorted((tmp_path / "a" / "models").rglob("*.egnn"))
        assert len(models) == 3  # one BN model, two acoustic models
        # simulate an interruption: lose the report and one cell's models
        (tmp_path / "a" / "report.csv").unlink()
        for m in models:
            if "bn-ms" in m.name:
                m.unlink()
        run_sweep(small_grid(), data, TINY, seeds=[0], out_dir=tmp_path / "a")
        assert (tmp_path / "a" / "report.csv").read_bytes() == first
        run_sweep(small_grid(), data, TINY, seeds=[0], out_dir=tmp_path / "b")
        assert (tmp_path / "b" / "report.csv").read_bytes() == first

    def test_parallel_matches_serial(self, data, tmp_path):
        run_sweep(small_grid(), data, TINY, seeds=[0, 1], out_dir=tmp_path / "s", workers=1)
        run_sweep(small_grid(), data, TINY, seeds=[0, 1], out_dir=tmp_path / "p", workers=2)
        assert (tmp_path / "s" / "report.csv").read_bytes() == (tmp_path / "p" / "report.csv").read_bytes()

    def test_failure_recorded_sweep_continues(self, data, tmp_path):
        grid = SweepGrid.from_dict({"variants": ["mfcc", "bn-phn"], "bn_dims": [64], "snr_db": [5]})
        report = run_sweep(grid, data, TINY, seeds=[0], out_dir=tmp_path)
        assert [f["cell"] for f in report.failures] == ["bn-phn-d64-p2"]
        assert "narrower" in report.failures[0]["error"]
        assert {r.variant for r in report.rows} == {"mfcc"}
        assert json.loads((tmp_path / "failures.json").read_text())[0]["cell"] == "bn-phn-d64-p2"

    def test_accepts_corpus(self):
        grid = SweepGrid.from_dict({"variants": ["mfcc"], "snr_db": [5], "motor": ["motor_off"]})
        report = run_sweep(grid, generate_corpus(10, seed=5), TINY, seeds=[0])
        assert len(report.rows) == 1


def test_motor_condition_means(data):
    report = run_sweep(small_grid(), data, TINY, seeds=[0])
    means = motor_condition_means(report.rows)
    assert set(means) == {(v, m, 0) for v in ("mfcc", "bn-ms") for m in ("motor_off", "motor_on")}
    rows = [r for r in report.rows if r.variant == "mfcc" and r.motor == "motor_on"]
    assert means[("mfcc", "motor_on", 0)] == pytest.approx(sum(r.per for r in rows) / len(rows))
