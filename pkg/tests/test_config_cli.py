import csv
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from breakage_profiles import ConfigError, DensityField
from breakage_profiles.cli import main, oracle_compare
from breakage_profiles.config import config_from_dict, load_config
from breakage_profiles.operator import read_field_csv, write_field_csv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def base_config(cells=64, **blocks):
    data = {
        "kernel": {"lambda1": 1.0, "lambda2": 1.0, "k0": 0.0},
        "breakage": {"variant": "power_law", "nu": 0.0},
        "grid": {"xmin": 1e-4, "xmax": 40.0, "cells": cells},
        "solver": {"cfl": 0.9, "stationarity_tol": 1e-8, "tau_end": 400.0},
        "seed": 7,
    }
    data.update(blocks)
    return data


def write_config(tmp_path, data, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    @pytest.mark.parametrize("name", ["reference.yaml", "sublinear.yaml", "asymmetric.yaml"])
    def test_shipped_configs_load(self, name):
        cfg = load_config(CONFIGS / name)
        assert cfg.make_grid().n == cfg.grid["cells"]

    @pytest.mark.parametrize("patch", [
        {"kernel": {"lambda1": 0.5, "lambda2": 0.5}},
        {"kernel": {"lambda1": 1.0, "lambda2": 1.0, "mu": 2.0}},
        {"breakage": {"variant": "power_law", "nu": -1.5}},
        {"grid": {"xmin": 1.0, "xmax": 0.5, "cells": 8}},
        {"grid": {"xmin": 1e-4, "xmax": 40.0, "cells": 8.5}},
        {"solver": {"cfl": 2.0}},
        {"extra": {}},
        {"simulate": {"mode": "sideways"}},
        {"output": {"formats": ["xml"]}},
    ])
    def test_rejections(self, patch):
        with pytest.raises(ConfigError):
            config_from_dict(base_config(**patch))

    def test_missing_block(self):
        data = base_config()
        del data["breakage"]
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_overrides(self, tmp_path):
        cfg = config_from_dict(base_config()).with_overrides(cells=32, tol=1e-6, out=tmp_path)
        assert cfg.make_grid().n == 32
        assert cfg.solver_config().stationarity_tol == 1e-6
        assert cfg.out_dir == tmp_path.resolve()


class TestExitCodes:
    @pytest.mark.parametrize("patch", [
        {"kernel": {"lambda1": 0.5, "lambda2": 0.5}},
        {"breakage": {"variant": "power_law", "nu": -1.5}},
        {"kernel": {"lambda1": 1.0, "lambda2": 1.0, "colour": "red"}},
    ])
    def test_invalid_config_exits_2(self, tmp_path, patch):
        path = write_config(tmp_path, base_config(**patch))
        assert main(["find-profile", "--config", str(path), "--out", str(tmp_path / "o")]) == 2

    def test_oracle_cell_limit_exits_2(self, tmp_path):
        path = write_config(tmp_path, base_config())
        assert main(["oracle-compare", "--config", str(path), "--cells", "65"]) == 2

    def test_nonconvergence_exits_3(self, tmp_path):
        data = base_config(solver={"tau_end": 0.5})
        path = write_config(tmp_path, data)
        assert main(["find-profile", "--config", str(path), "--out", str(tmp_path / "o")]) == 3


class TestFindProfile:
    def test_writes_outputs(self, tmp_path):
        path = write_config(tmp_path, base_config(cells=128))
        out = tmp_path / "out"
        assert main(["find-profile", "--config", str(path), "--out", str(out)]) == 0
        for name in ("profile.csv", "history.csv", "report.json", "report.txt", "manifest.json"):
            assert (out / name).exists(), name
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["converged"] and manifest["seed"] == 7
        assert manifest["mass_budget"]["clipped"] == 0.0
        profile, tau = read_field_csv(out / "profile.csv")
        assert profile.moment(1.0) == pytest.approx(1.0, abs=1e-12) and tau > 0

    def test_bit_identical_reruns(self, tmp_path):
        path = write_config(tmp_path, base_config(cells=64))
        for d in ("a", "b"):
            assert main(["find-profile", "--config", str(path), "--out", str(tmp_path / d)]) == 0
        for name in ("profile.csv", "history.csv", "report.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestVerifyCommand:
    def _analytic(self, tmp_path, cells=256):
        path = write_config(tmp_path, base_config(cells=cells))
        assert main(["emit-analytic", "--config", str(path), "--out", str(tmp_path)]) == 0
        return path, tmp_path / "analytic_profile.csv"

    def test_analytic_profile_passes(self, tmp_path):
        path, prof = self._analytic(tmp_path)
        assert main(["verify", "--config", str(path), "--profile", str(prof), "--out", str(tmp_path / "r")]) == 0
        report = json.loads((tmp_path / "r" / "report.json").read_text())
        assert all(c["passed"] for c in report["checks"])

    def test_scaled_profile_fails(self, tmp_path, capsys):
        path, prof = self._analytic(tmp_path)
        field, _ = read_field_csv(prof)
        write_field_csv(field.scaled(1.1), tmp_path / "bad.csv")
        assert main(["verify", "--config", str(path), "--profile", str(tmp_path / "bad.csv")]) == 4
        assert "precondition" in capsys.readouterr().out

    def test_negative_cell_fails(self, tmp_path):
        path, prof = self._analytic(tmp_path)
        field, _ = read_field_csv(prof)
        v = field.values.copy()
        v[10] = -v[10]
        write_field_csv(DensityField(field.grid, v), tmp_path / "neg.csv")
        assert main(["verify", "--config", str(path), "--profile", str(tmp_path / "neg.csv")]) == 4

    def test_grid_mismatch_exits_2(self, tmp_path):
        path, prof = self._analytic(tmp_path)
        assert main(["verify", "--config", str(path), "--cells", "128", "--profile", str(prof)]) == 2


class TestSimulate:
    def test_physical_conserves_mass(self, tmp_path):
        data = base_config(cells=64, simulate={"mode": "physical", "t_end": 5.0, "output_times": [1.0, 5.0]})
        path = write_config(tmp_path, data)
        out = tmp_path / "phys"
        assert main(["simulate", "--config", str(path), "--out", str(out)]) == 0
        m1 = np.array([float(r["M_1"]) for r in read_csv(out / "history.csv")])
        assert np.max(np.abs(m1 / m1[0] - 1.0)) <= 1e-10
        dist = [float(r["distance"]) for r in read_csv(out / "distance.csv")]
        assert len(dist) == 2 and dist[1] < dist[0]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["relative_mass_drift"] <= 1e-10

    def test_rescaled_residual_monotone(self, tmp_path):
        data = base_config(cells=64, simulate={"mode": "rescaled", "tau_end": 20.0})
        path = write_config(tmp_path, data)
        out = tmp_path / "resc"
        assert main(["simulate", "--config", str(path), "--out", str(out)]) == 0
        res = np.array([float(r["residual"]) for r in read_csv(out / "history.csv")][1:])
        tail = res[len(res) // 10:]
        assert np.all(np.diff(tail) <= 0.0)

    def test_resume_is_deterministic(self, tmp_path):
        data = base_config(cells=64, simulate={"mode": "rescaled", "tau_end": 2.0, "output_times": [1.0, 2.0]})
        path = write_config(tmp_path, data)
        assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "full")]) == 0
        first = tmp_path / "full" / "snapshots" / "snapshot_00001.csv"
        assert read_field_csv(first)[1] == 1.0
        assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "resumed"),
                     "--resume", str(first)]) == 0
        a, ta = read_field_csv(tmp_path / "full" / "snapshots" / "snapshot_00002.csv")
        b, tb = read_field_csv(tmp_path / "resumed" / "snapshots" / "snapshot_00001.csv")
        assert ta == tb == 2.0
        assert np.max(np.abs(a.values - b.values)) <= 1e-12


class TestOracleCompare:
    def test_loss_agreement_and_ladder(self, tmp_path):
        cfg = config_from_dict(base_config())
        result = oracle_compare(cfg, 32, fields=20)
        assert result["loss_max_relative_error"] <= 1e-12
        defects = [row["max_factor_minus_one"] for row in result["ladder"]]
        assert defects[0] > defects[1] > defects[2]

    def test_command(self, tmp_path):
        path = write_config(tmp_path, base_config())
        assert main(["oracle-compare", "--config", str(path), "--cells", "16", "--fields", "5",
                     "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "oracle.json").exists()
