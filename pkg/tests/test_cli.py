import csv
import json
import shutil
import subprocess

import numpy as np
import pytest

from dsm_bnn import cli
from dsm_bnn.config import ConfigError, load_config, parse_config
from dsm_bnn.nuts import SamplerInitError

SMALL_SAMPLER = {"chains": 1, "warmup": 60, "draws": 40}


def write_config(tmp_path, name="cfg.json", **cfg):
    cfg.setdefault("output_dir", str(tmp_path / "out"))
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read_rows(path):
    with open(path) as fh:
        header = [line for line in fh if line.startswith("#")]
    with open(path) as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return header, rows


def linreg_config(tmp_path, **extra):
    return write_config(tmp_path, dataset={"generator": "linreg", "N": 60, "rho": 0.5},
                        model={"linear": True, "prior": {"family": "RHS"}}, sampler=SMALL_SAMPLER, seed=4,
                        **extra)


class TestConfig:
    def test_defaults(self):
        cfg = parse_config({"dataset": {"generator": "friedman"}})
        assert cfg.model.hidden == 16 and cfg.sampler.chains == 2 and cfg.analyses == ["metrics"]

    @pytest.mark.parametrize("data, field", [
        ({"dataset": {"generator": "friedman"}, "sampler": {"chains": 0}}, "sampler.chains"),
        ({"dataset": {"generator": "nope"}}, "dataset.generator"),
        ({"dataset": {"generator": "friedman"}, "extra": 1}, "extra"),
        ({"dataset": {"generator": "friedman"}, "model": {"prior": {"family": "XYZ"}}}, "model.prior"),
        ({"dataset": {}}, "dataset"),
    ])
    def test_errors_name_the_field(self, data, field):
        with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
            parse_config(data)

    def test_task_checks(self):
        with pytest.raises(ConfigError, match="classification"):
            parse_config({"dataset": {"generator": "friedman"}, "analyses": ["robustness"]})
        with pytest.raises(ConfigError, match="regression"):
            parse_config({"dataset": {"generator": "logistic_toy"}, "model": {"linear": True}})

    def test_replicate_seed_clash(self):
        with pytest.raises(ConfigError, match="test_seed"):
            parse_config({"dataset": {"generator": "friedman", "test_seed": 2,
                                      "replicates": {"sizes": [10], "seeds": [1, 2]}}})

    def test_digest_and_overrides(self, tmp_path):
        path = write_config(tmp_path, dataset={"generator": "friedman"})
        a, b = load_config(path), load_config(path, seed=9)
        assert a.digest() == load_config(path).digest() != b.digest()
        assert b.seed == 9

    def test_bad_files(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(bad)


class TestExitCodes:
    def test_bad_config(self, tmp_path, capsys):
        path = write_config(tmp_path, dataset={"generator": "friedman"}, sampler={"warmup": -1})
        assert cli.main(["fit", "--config", path]) == cli.EXIT_CONFIG
        assert "sampler.warmup" in capsys.readouterr().err

    def test_missing_tau0_for_small_p(self, tmp_path, capsys):
        path = write_config(tmp_path, dataset={"generator": "logistic_toy", "N": 20}, sampler=SMALL_SAMPLER)
        assert cli.main(["fit", "--config", path]) == cli.EXIT_CONFIG
        assert "tau0" in capsys.readouterr().err

    def test_numerical_failure(self, tmp_path, monkeypatch):
        def fail(*args, **kwargs):
            raise SamplerInitError("no finite starting point")
        monkeypatch.setattr(cli, "run_nuts", fail)
        assert cli.main(["fit", "--config", linreg_config(tmp_path)]) == cli.EXIT_NUMERIC

    def test_trace_mismatch(self, tmp_path, capsys):
        path = linreg_config(tmp_path)
        assert cli.main(["fit", "--config", path]) == cli.EXIT_OK
        other = write_config(tmp_path, "net.json", dataset={"generator": "linreg", "N": 60},
                             model={"hidden": 2, "prior": {"family": "RHS"}}, sampler=SMALL_SAMPLER,
                             output_dir=str(tmp_path / "out"))
        assert cli.main(["analyze", "--config", other]) == cli.EXIT_CONFIG
        assert "coordinates" in capsys.readouterr().err

    def test_attack_needs_classification(self, tmp_path):
        path = linreg_config(tmp_path)
        assert cli.main(["attack", "--config", path]) == cli.EXIT_CONFIG


class TestCommands:
    def test_gen_data(self, tmp_path):
        path = write_config(tmp_path, dataset={"generator": "friedman", "test_N": 15, "test_seed": 100,
                                               "replicates": {"sizes": [10, 20], "seeds": [0, 1]}})
        assert cli.main(["gen-data", "--config", path]) == 0
        files = sorted(p.name for p in (tmp_path / "out").iterdir())
        assert len(files) == 5 and "friedman_test_N15_seed100.csv" in files
        header, rows = read_rows(tmp_path / "out" / "friedman_N20_seed1.csv")
        assert len(rows) == 20
        assert any("config_hash=" in h for h in header) and any("data_seed=1" in h for h in header)

    def test_fit_deterministic(self, tmp_path):
        path = linreg_config(tmp_path)
        assert cli.main(["fit", "--config", path, "--out", str(tmp_path / "a")]) == 0
        assert cli.main(["fit", "--config", path, "--out", str(tmp_path / "b")]) == 0
        for name in ("trace.csv", "metrics.csv"):
            assert (tmp_path / "a" / name).read_text() == (tmp_path / "b" / name).read_text()
        diag = json.loads((tmp_path / "a" / "diagnostics.json").read_text())
        assert diag["_header"]["seed"] == "4" and diag["family"] == "RHS"

    def test_analyze_prune_and_metrics(self, tmp_path):
        path = linreg_config(tmp_path, analyses=["metrics", "prune_sweep", "m_eff"],
                             prune={"levels": [0.0, 0.5]}, m_eff_thin=5)
        out = tmp_path / "out"
        assert cli.main(["fit", "--config", path]) == 0
        assert cli.main(["analyze", "--config", path]) == 0
        _, fit_rows = read_rows(out / "metrics.csv")
        _, prune_rows = read_rows(out / "prune_sweep.csv")
        fit = {r["metric"]: float(r["value"]) for r in fit_rows}
        for r in prune_rows:
            if float(r["sparsity"]) == 0.0:
                assert float(r["value"]) == pytest.approx(fit[r["metric"]], abs=1e-12)
        _, m_rows = read_rows(out / "m_eff.csv")
        assert len(m_rows) == 8
        summary = json.loads((out / "analysis.json").read_text())
        assert 0 <= summary["m_eff"]["median"] <= 10

    def test_kappa_tables(self, tmp_path):
        path = write_config(tmp_path, dataset={"generator": "friedman"}, analyses=["kappa_tables"],
                            kappa_tables={"z": [1.0], "alpha": [0.5], "p": [1, 3], "nu": [2.0],
                                          "grid_size": 801})
        assert cli.main(["analyze", "--config", path]) == 0
        _, rows = read_rows(tmp_path / "out" / "kappa_density.csv")
        for label in {r["prior"] for r in rows}:
            sel = [r for r in rows if r["prior"] == label]
            u = np.array([float(r["u"]) for r in sel])
            g = np.array([float(r["density_logit"]) for r in sel])
            assert np.trapezoid(g, u) == pytest.approx(1.0, abs=1e-3)

    def test_dependence_sweep(self, tmp_path):
        path = write_config(tmp_path, dataset={"generator": "friedman"}, analyses=["dependence_sweep"],
                            dependence={"prior": "half_normal", "values": [1.0], "draws": 10_000})
        assert cli.main(["analyze", "--config", path]) == 0
        _, rows = read_rows(tmp_path / "out" / "dependence_sweep.csv")
        assert rows

    def test_classification_attack(self, tmp_path):
        path = write_config(tmp_path, dataset={"generator": "logistic_toy", "N": 30, "test_N": 20},
                            model={"hidden": 2, "prior": {"family": "Gaussian"}}, sampler=SMALL_SAMPLER,
                            robustness={"epsilons": [0.0, 0.3], "subset_size": 10, "n_draws": 10})
        assert cli.main(["fit", "--config", path]) == 0
        assert cli.main(["attack", "--config", path]) == 0
        header, rows = read_rows(tmp_path / "out" / "robustness_p2.csv")
        assert any("lower bounds" in h for h in header)
        assert float(rows[0]["safe"]) == 1.0

    def test_console_script(self, tmp_path):
        exe = shutil.which("dsm-bnn")
        assert exe is not None
        bad = write_config(tmp_path, dataset={"generator": "friedman"}, sampler={"chains": 0})
        proc = subprocess.run([exe, "fit", "--config", bad], capture_output=True, text=True)
        assert proc.returncode == 2 and "sampler.chains" in proc.stderr
