import json

import numpy as np
import pytest

from qdcascade import analysis as ana
from qdcascade import polarization as pol
from qdcascade.cli import EXIT_ESTIMATION, EXIT_INVALID, EXIT_IO, EXIT_OK, main
from qdcascade.pttg import read_pttg


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def simulate_small(tmp_path, capsys, **overrides):
    argv = ["simulate", "--cycles", "20000", "--fss", "0", "--seed", "5",
            "--out", str(tmp_path / "run")]
    for k, v in overrides.items():
        argv += [f"--{k}", str(v)]
    code, _, err = run(capsys, *argv)
    assert code == EXIT_OK, err
    return tmp_path / "run"


class TestSimulate:
    def test_produces_streams_and_manifest(self, tmp_path, capsys):
        out = simulate_small(tmp_path, capsys)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["cycles"] == 20000
        assert len(manifest["settings"]) == 3
        for entry in manifest["settings"]:
            stream = read_pttg(out / entry["file"])
            assert len(stream) == entry["n_tags"]
            assert stream.is_sorted()

    def test_invalid_cycles(self, tmp_path, capsys):
        code, _, err = run(capsys, "simulate", "--cycles", "0",
                           "--out", str(tmp_path / "x"))
        assert code == EXIT_INVALID
        doc = json.loads(err)
        assert doc["error"] == "invalid-input"

    def test_unknown_preset(self, tmp_path, capsys):
        code, _, err = run(capsys, "simulate", "--settings", "bogus",
                           "--out", str(tmp_path / "x"))
        assert code == EXIT_INVALID

    def test_deterministic_bytes(self, tmp_path, capsys):
        a = simulate_small(tmp_path / "a", capsys)
        b = simulate_small(tmp_path / "b", capsys)
        for name in ("setting_00_HH.pttg", "setting_01_DD.pttg", "setting_02_RR.pttg"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_worker_count_invariance(self, tmp_path, capsys):
        a = simulate_small(tmp_path / "a", capsys, workers=1)
        b = simulate_small(tmp_path / "b", capsys, workers=4)
        for name in ("setting_00_HH.pttg", "setting_01_DD.pttg", "setting_02_RR.pttg"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


class TestAnalyzeCorrelate:
    def test_histogram_files(self, tmp_path, capsys):
        out = simulate_small(tmp_path, capsys)
        code, _, err = run(capsys, "analyze", "correlate",
                           "--input", str(out / "setting_00_HH.pttg"),
                           "--normalize", "pulsed", "--rep-period-ns", "12.5",
                           "--bin-width-ps", "250",
                           "--out", str(tmp_path / "corr"))
        assert code == EXIT_OK, err
        hist = json.loads((tmp_path / "corr" / "histogram.json").read_text())
        assert sum(hist["counts"]) > 0
        g2_lines = (tmp_path / "corr" / "g2.csv").read_text().splitlines()
        assert g2_lines[0] == "tau_ps,g2"
        assert len(g2_lines) > 5

    def test_missing_input(self, tmp_path, capsys):
        code, _, err = run(capsys, "analyze", "correlate",
                           "--input", str(tmp_path / "nope.pttg"),
                           "--out", str(tmp_path / "c"))
        assert code == EXIT_IO

    def test_corrupt_input(self, tmp_path, capsys):
        bad = tmp_path / "bad.pttg"
        bad.write_bytes(b"JUNKJUNKJUNKJUNKJUNK")
        code, _, err = run(capsys, "analyze", "correlate", "--input", str(bad),
                           "--out", str(tmp_path / "c"))
        assert code == EXIT_IO
        doc = json.loads(err)
        assert doc["error"] == "io-error"
        assert doc["file"] == str(bad)


class TestPipeline:
    def test_counts_and_tomography(self, tmp_path, capsys):
        out = simulate_small(tmp_path, capsys, cycles=10000, settings="tomo36")
        code, _, err = run(capsys, "analyze", "counts",
                           "--manifest", str(out / "manifest.json"),
                           "--window-ns", "6.25",
                           "--out", str(tmp_path / "counts"))
        assert code == EXIT_OK, err
        table = json.loads((tmp_path / "counts" / "counts.json").read_text())
        assert len(table["entries"]) == 36

        code, _, err = run(capsys, "analyze", "tomo",
                           "--counts", str(tmp_path / "counts" / "counts.json"),
                           "--out", str(tmp_path / "tomo"))
        assert code == EXIT_OK, err
        report = json.loads((tmp_path / "tomo" / "report.json").read_text())
        # fss = 0 run: the reconstructed state is the ideal Bell state
        assert report["fidelity"] > 0.98
        rho = pol.rho_from_json((tmp_path / "tomo" / "rho.json").read_text())
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-9)

    def test_tomo_rank_deficient_counts(self, tmp_path, capsys):
        counts = tmp_path / "counts.csv"
        counts.write_text("xx_outcome,x_outcome,count\nH,H,10\nH,V,10\nV,H,10\nV,V,10\n")
        code, _, err = run(capsys, "analyze", "tomo", "--counts", str(counts),
                           "--out", str(tmp_path / "t"))
        assert code == EXIT_INVALID


class TestGateScanCli:
    def test_writes_csv(self, tmp_path, capsys):
        out = tmp_path / "scan.csv"
        code, _, err = run(capsys, "analyze", "gate-scan", "--fss", "2.5",
                           "--gates", "0.5,1,2", "--out", str(out))
        assert code == EXIT_OK, err
        lines = out.read_text().splitlines()
        assert lines[0] == "gate_ns,fidelity,retained_fraction"
        assert len(lines) == 4


class TestChargeSweepCli:
    def test_writes_csv_and_svg(self, tmp_path, capsys):
        code, _, err = run(capsys, "analyze", "charge-sweep",
                           "--grid-points", "11", "--out", str(tmp_path / "sweep"))
        assert code == EXIT_OK, err
        csv_text = (tmp_path / "sweep" / "sweep.csv").read_text()
        assert csv_text.splitlines()[0] == "power,I_X,I_Xplus,I_Xminus,I_XX"
        svg = (tmp_path / "sweep" / "sweep.svg").read_text()
        assert svg.startswith("<svg ") and "polyline" in svg


class TestFssFitCli:
    def test_fit_from_csv(self, tmp_path, capsys):
        series = ana.synthetic_series(7.5, axis_angle_deg=15.0)
        path = tmp_path / "series.csv"
        path.write_text("angle_deg,e_x_uev,e_xx_uev,sigma_uev\n" + "\n".join(
            f"{a},{x},{xx},{s}" for a, x, xx, s in zip(
                series.angles_deg, series.e_x_uev, series.e_xx_uev, series.sigma_uev)))
        code, out, err = run(capsys, "analyze", "fss-fit", "--input", str(path))
        assert code == EXIT_OK, err
        doc = json.loads(out)
        assert doc["fss_uev"] == pytest.approx(7.5, abs=1e-6)
        assert doc["ok"]


class TestStatsCli:
    def test_fixture_stats(self, tmp_path, capsys):
        import importlib.resources
        fixture = importlib.resources.files("qdcascade") / "fixtures" / "table1_fss.csv"
        out = tmp_path / "stats.csv"
        code, _, err = run(capsys, "analyze", "stats", str(fixture), "--out", str(out))
        assert code == EXIT_OK, err
        lines = out.read_text().splitlines()
        assert lines[0] == "sample_id,n,mean_fss_uev,std_fss_uev,flagged"
        assert len(lines) == 6

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(capsys, "analyze", "stats", str(tmp_path / "nope.csv"))
        assert code == EXIT_IO


class TestConfigFile:
    def test_config_supplies_defaults(self, tmp_path, capsys):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[simulate]\ncycles = 5000\nseed = 9\n")
        out = tmp_path / "run"
        code, _, err = run(capsys, "--config", str(cfg), "simulate", "--out", str(out))
        assert code == EXIT_OK, err
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["cycles"] == 5000
        assert manifest["seed"] == 9

    def test_flag_overrides_config(self, tmp_path, capsys):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[simulate]\ncycles = 5000\n")
        out = tmp_path / "run"
        code, _, err = run(capsys, "--config", str(cfg), "simulate",
                           "--cycles", "3000", "--out", str(out))
        assert code == EXIT_OK, err
        assert json.loads((out / "manifest.json").read_text())["cycles"] == 3000

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[simulate]\nbananas = 7\n")
        code, _, err = run(capsys, "--config", str(cfg), "simulate",
                           "--out", str(tmp_path / "x"))
        assert code == EXIT_INVALID

    def test_missing_config_file(self, tmp_path, capsys):
        code, _, err = run(capsys, "--config", str(tmp_path / "none.ini"),
                           "simulate", "--out", str(tmp_path / "x"))
        assert code == EXIT_IO


class TestEstimationExit:
    def test_pulsed_normalization_without_side_peaks(self, tmp_path, capsys):
        out = simulate_small(tmp_path, capsys)
        # a tau range narrower than one repetition period has no side peaks
        code, _, err = run(capsys, "analyze", "correlate",
                           "--input", str(out / "setting_00_HH.pttg"),
                           "--normalize", "pulsed", "--rep-period-ns", "12.5",
                           "--tau-min-ns", "-5", "--tau-max-ns", "5",
                           "--bin-width-ps", "250",
                           "--out", str(tmp_path / "c"))
        assert code == EXIT_ESTIMATION
        assert json.loads(err)["error"] == "estimation-failure"
