import csv

import pytest

from rpol.cli import main
from rpol.harness import SUMMARY_COLUMNS


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv("RPOL_OUTPUT_ROOT", str(tmp_path))
    return tmp_path


def only_run_dir(root):
    dirs = [p.parent for p in root.rglob("trace.csv")]
    assert len(dirs) == 1
    return dirs[0]


class TestRun:
    def test_writes_artifacts(self, out, capsys):
        assert main(["run", "--T", "15", "--seed", "2"]) == 0
        d = only_run_dir(out)
        assert {p.name for p in d.iterdir()} == {"trace.csv", "config.yaml", "metrics.csv"}
        assert "seed2" in capsys.readouterr().out

    def test_flags_mirror_keys(self, out):
        assert main(["run", "--T", "12", "--environment", "scbwc-delayed",
                     "--variant", "rpol-censored-ucb", "--m", "3", "--B-f", "1.5",
                     "--reward-noise-var", "0.01", "--seed", "1"]) == 0
        text = (only_run_dir(out) / "config.yaml").read_text()
        assert "B_f: 1.5" in text and "m: 3" in text and "reward_noise_var: 0.01" in text

    def test_config_file(self, out, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("T: 8\nseed: 4\n")
        assert main(["run", "--config", str(cfg)]) == 0
        assert "seed4" in only_run_dir(out).name

    def test_rerun_identical(self, out, tmp_path):
        assert main(["run", "--T", "20", "--seed", "6", "--output-dir", str(tmp_path / "a")]) == 0
        assert main(["run", "--T", "20", "--seed", "6", "--output-dir", str(tmp_path / "b")]) == 0
        a = next((tmp_path / "a").rglob("trace.csv")).read_bytes()
        b = next((tmp_path / "b").rglob("trace.csv")).read_bytes()
        assert a == b

    @pytest.mark.parametrize("argv", [["run", "--T", "0"], ["run", "--bogus", "1"],
                                      ["run", "--p", "3"], ["oracle", "mars"]])
    def test_config_errors_exit_1(self, out, argv, capsys):
        assert main(argv) == 1

    def test_runtime_error_exit_2(self, out, monkeypatch):
        import rpol.harness

        def boom(*a, **k):
            raise RuntimeError("run failed at round 1: boom")

        monkeypatch.setattr(rpol.harness, "run", boom)
        assert main(["run", "--T", "3"]) == 2


class TestVerify:
    def test_clean_run(self, out, capsys):
        main(["run", "--T", "25", "--seed", "1"])
        assert main(["verify", str(out)]) == 0
        assert "PASS penalty" in capsys.readouterr().out

    def test_tampered_q(self, out, capsys):
        main(["run", "--T", "25", "--seed", "1"])
        path = only_run_dir(out) / "trace.csv"
        rows = list(csv.reader(path.open()))
        qcol = rows[0].index("Q")
        rows[10][qcol] = repr(float(rows[9][qcol]) - 0.5)  # round 10
        with path.open("w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        assert main(["verify", str(path.parent)]) == 3
        assert "round 10" in capsys.readouterr().out

    def test_missing(self, out):
        assert main(["verify", str(out / "nowhere")]) == 1


def test_oracle_fixture(out):
    assert main(["oracle", "scbwc", "--resolution", "101"]) == 0
    import json

    fx = json.loads((out / "oracle_scbwc.json").read_text())
    assert fx["segments"][0]["f_star"] < 0 and len(fx["segments"][0]["x_star"]) == 2


def test_sweep_summary(out):
    assert main(["sweep", "--T", "10", "--n-seeds", "2"]) == 0
    summary = next(out.rglob("summary.csv"))
    rows = list(csv.reader(summary.open()))
    assert rows[0] == list(SUMMARY_COLUMNS) and len(rows) == 11


def test_repro_three_summaries(out):
    assert main(["repro", "--n-seeds", "2", "--T", "12"]) == 0
    files = sorted((out / "repro").glob("*_summary.csv"))
    assert [f.name for f in files] == ["delayed_summary.csv", "nonstationary_summary.csv",
                                       "stationary_summary.csv"]
    for f in files:
        rows = list(csv.reader(f.open()))
        assert rows[0] == list(SUMMARY_COLUMNS) and len(rows) == 13
    assert sorted(p.name for p in (out / "repro").glob("*.yaml")) == [
        "delayed.yaml", "nonstationary.yaml", "stationary.yaml"]
