import csv
import json

import numpy as np
import pytest

from covderev import cli
from covderev.model import NumericalBreakdown
from covderev.stft import read_wav

SMALL = ["--duration", "1.0", "--rt60", "0.2"]


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert cli.main(["simulate", "--out-dir", str(out), "--seed", "3"] + SMALL) == 0
    return out


class TestConfig:
    def test_defaults(self):
        cfg = cli.build_config("dereverb")
        assert cfg.method == "proposed2"
        assert cfg.frame_size == 1024 and cfg.hop == 512
        m = cfg.model_config()
        assert (m.n_mics, m.tap_length, m.stack_length, m.n_iterations) == (2, 6, 6, 20)
        assert cfg.scenario.snr_db == 20.0

    def test_precedence_cli_over_file_over_defaults(self):
        file_data = {"method": "proposed1", "hop": 256, "model": {"n_iterations": 7, "tap_length": 4},
                     "scenario": {"rt60": 0.4, "seed": 9}}
        cli_data = {"hop": 128, "model": {"n_iterations": 3, "tap_length": None}, "scenario": {"seed": 11}}
        cfg = cli.build_config("bench", file_data, cli_data)
        assert cfg.method == "proposed1"
        assert cfg.hop == 128
        assert cfg.frame_size == 1024
        assert cfg.model == {"n_iterations": 3, "tap_length": 4}
        assert cfg.scenario.rt60 == 0.4 and cfg.scenario.seed == 11

    def test_yaml_and_json_files(self, tmp_path):
        y = tmp_path / "c.yaml"
        y.write_text("method: tiv\nmodel:\n  n_iterations: 5\nseeds: [1, 2]\n")
        j = tmp_path / "c.json"
        j.write_text(json.dumps({"method": "tiv", "model": {"n_iterations": 5}, "seeds": [1, 2]}))
        assert cli.load_config(y) == cli.load_config(j)

    @pytest.mark.parametrize(
        "data",
        [
            {"bogus": 1},
            {"model": {"taps": 3}},
            {"scenario": {"scenario": "moving"}},
            {"method": "wpe"},
            {"method": "proposed1", "model": {"stack_length": 3}},
            {"methods": ["unprocessed", "magic"]},
            {"model": 5},
        ],
    )
    def test_invalid_config(self, data):
        with pytest.raises(cli.ConfigError):
            cli.build_config("bench", data)

    def test_exit_codes_for_config(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("model: [1, 2\n")
        assert cli.main(["dereverb", "--config", str(bad), "-i", "x.wav", "-o", "y.wav"]) == cli.EXIT_CONFIG
        bad.write_text("colour: blue\n")
        assert cli.main(["dereverb", "--config", str(bad), "-i", "x.wav", "-o", "y.wav"]) == cli.EXIT_CONFIG
        assert cli.main(["dereverb", "--config", str(tmp_path / "none.yaml")]) == cli.EXIT_MISSING
        assert cli.main(["dereverb", "-o", "y.wav"]) == cli.EXIT_CONFIG


class TestCommands:
    def test_simulate_outputs(self, simulated):
        mix = read_wav(simulated / "mixture.wav")
        ref = read_wav(simulated / "reference.wav")
        assert mix.samples.shape == (16000, 2) and ref.samples.shape == (16000, 1)
        manifest = json.loads((simulated / "manifest.json").read_text())
        assert manifest["config"]["scenario"]["seed"] == 3
        assert manifest["scenario"]["config"]["snr_db"] == 20.0
        assert "version" in manifest

    def test_simulate_is_byte_identical(self, simulated, tmp_path):
        assert cli.main(["simulate", "--out-dir", str(tmp_path), "--seed", "3"] + SMALL) == 0
        for name in ("mixture.wav", "reference.wav"):
            assert (tmp_path / name).read_bytes() == (simulated / name).read_bytes()
        a = json.loads((tmp_path / "manifest.json").read_text())
        b = json.loads((simulated / "manifest.json").read_text())
        assert a["config"].pop("out_dir") != b["config"].pop("out_dir")
        assert a == b

    def test_missing_input_names_path(self, tmp_path, caplog):
        missing = tmp_path / "absent.wav"
        assert cli.main(["dereverb", "-i", str(missing), "-o", str(tmp_path / "o.wav")]) == cli.EXIT_MISSING
        assert str(missing) in caplog.text

    def test_dereverb_outputs(self, simulated, tmp_path):
        out = tmp_path / "out.wav"
        args = ["dereverb", "-i", str(simulated / "mixture.wav"), "-o", str(out), "--iterations", "2",
                "--frame-size", "256", "--hop", "128", "--checkpoint", str(tmp_path / "m.npz")]
        assert cli.main(args) == 0
        y = read_wav(out)
        assert y.samples.shape == (16000, 2)
        rows = list(csv.DictReader(open(tmp_path / "out.cost.csv")))
        assert len(rows) == 2 * 129
        assert {int(r["iteration"]) for r in rows} == {1, 2}
        assert (tmp_path / "m.npz").is_file()
        manifest = json.loads((tmp_path / "out.manifest.json").read_text())
        assert manifest["model"]["n_iterations"] == 2
        assert len(manifest["inputs"]) == 1

    def test_dereverb_mono_and_nctf(self, simulated, tmp_path):
        args = ["dereverb", "-i", str(simulated / "mixture.wav"), "--iterations", "1", "--frame-size", "256",
                "--hop", "128"]
        assert cli.main(args + ["-o", str(tmp_path / "a.wav"), "--mono"]) == 0
        assert read_wav(tmp_path / "a.wav").samples.shape == (16000, 1)
        assert cli.main(args + ["-o", str(tmp_path / "b.wav"), "--method", "nctf_mono"]) == 0
        assert read_wav(tmp_path / "b.wav").samples.shape == (16000, 1)

    def test_breakdown_exit_code(self, simulated, tmp_path, monkeypatch, caplog):
        def broken(*args, **kwargs):
            raise NumericalBreakdown("non-finite mixture covariance", 17, 4)

        monkeypatch.setattr(cli, "dereverberate", broken)
        args = ["dereverb", "-i", str(simulated / "mixture.wav"), "-o", str(tmp_path / "o.wav")]
        assert cli.main(args) == cli.EXIT_BREAKDOWN
        assert "frequency=17" in caplog.text and "frame=4" in caplog.text

    def test_evaluate(self, simulated, tmp_path):
        out = tmp_path / "metrics.csv"
        args = ["evaluate", "-r", str(simulated / "reference.wav"), "-e", str(simulated / "reference.wav"),
                "-e", str(simulated / "mixture.wav"), "-o", str(out)]
        assert cli.main(args) == 0
        rows = list(csv.DictReader(open(out)))
        assert [r["utterance"] for r in rows] == ["reference", "mixture"]
        assert float(rows[0]["cd_db"]) == 0.0 and float(rows[0]["fwsegsnr_db"]) == 35.0
        assert float(rows[1]["cd_db"]) > 0.0
        assert cli.main(args[:-2] + ["-e", str(tmp_path / "gone.wav"), "-o", str(out)]) == cli.EXIT_MISSING

    def test_bench_is_byte_identical(self, tmp_path, capsys):
        args = ["bench", "--seeds", "0", "1", "--methods", "unprocessed", "proposed1", "--iterations", "2",
                "--frame-size", "256", "--hop", "128"] + SMALL
        assert cli.main(args + ["--out-dir", str(tmp_path / "a")]) == 0
        assert cli.main(args + ["--out-dir", str(tmp_path / "b")]) == 0
        a, b = tmp_path / "a", tmp_path / "b"
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
        assert (a / "summary.txt").read_bytes() == (b / "summary.txt").read_bytes()
        rows = list(csv.DictReader(open(a / "metrics.csv")))
        assert len(rows) == 4
        assert "FWSegSNR" in capsys.readouterr().out
        manifest = json.loads((a / "manifest.json").read_text())
        assert manifest["bench"]["seeds"] == [0, 1]
        assert np.isfinite([float(r["fwsegsnr_db"]) for r in rows]).all()
