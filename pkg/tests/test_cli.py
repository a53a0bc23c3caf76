import csv
import io
import json
import math
from pathlib import Path

import numpy as np
import pytest

from korteweg_lab import fieldio
from korteweg_lab.cli import main
from korteweg_lab.experiments import EXPERIMENTS, compare_runs, load_config, parse_config
from korteweg_lab.errors import ConfigurationError
from korteweg_lab.spectral import Field, Grid, VectorField

REPO = Path(__file__).resolve().parents[1]
L = 2 * math.pi


def write(path: Path, cfg: dict) -> Path:
    path.write_text(json.dumps(cfg))
    return path


def small(experiment: str) -> dict:
    """A fast config for each experiment."""
    base = {"schema": 1, "experiment": experiment, "grid": {"dim": 1, "n": 64, "length": L}, "seed": 1}
    if experiment in ("simulate-1.5", "simulate-1.7"):
        base.update(
            time={"T": 0.02, "dt": 0.002, "snapshot_every": 5},
            initial={"preset": "gaussian-bump", "amplitude": 0.2, "velocity_amplitude": 0.05},
        )
    elif experiment == "picard":
        base.update(time={"T": 0.05}, initial={"preset": "gaussian-bump", "amplitude": 1e-3}, options={"n_iters": 3, "n_steps": 20, "reference_dt": 0.005})
    elif experiment == "linear-verify":
        base.update(time={"T": 2.0}, initial={"preset": "gaussian-bump", "velocity_amplitude": 0.1}, options={"n_times": 30})
    elif experiment == "divergence-subsystem":
        base.update(time={"T": 0.5}, options={"n_times": 20})
    elif experiment == "blowup-scan":
        base.update(options={"k_max": 4})
    elif experiment == "illposed-sweep":
        base.update(grid={"dim": 1, "n": 1024, "length": L}, options={"n_values": [4, 5, 6], "nonlinear": True})
    elif experiment == "lp-selftest":
        base.update(options={"samples": 5})
    return base


def run(tmp_path, cfg, name="cfg.json", *extra):
    p = write(tmp_path / name, cfg)
    out = tmp_path / (name + ".out")
    code = main(["--quiet", "run", str(p), "--out", str(out), *extra])
    return code, out


def read_csv(path):
    return list(csv.DictReader(io.StringIO(Path(path).read_text())))


# ---------------------------------------------------------------------------
# config validation


class TestConfig:
    def test_shipped_presets_parse(self):
        """[TRIVIAL]"""
        files = sorted((REPO / "configs").glob("*.json"))
        assert {json.loads(f.read_text())["experiment"] for f in files} >= {"simulate-1.5", "simulate-1.7", "illposed-sweep"}
        for f in files:
            load_config(f)

    @pytest.mark.parametrize(
        "patch",
        [
            {"grid": {"dim": 1, "n": 4}},
            {"experiment": "nope"},
            {"schema": 2},
            {"colour": "red"},
            {"params": {"mu_bar": -1}},
            {"params": {"pressure": {"kind": "van-der-waals"}}},
            {"params": {"viscosity": 1}},
            {"time": {"T": 0}},
            {"time": {"dt": -1}},
            {"time": {"snapshot_every": 0}},
            {"initial": {"preset": "unknown"}},
            {"initial": {"files": {"q": "missing.bin"}}},
            {"initial": {"something": 1}},
            {"seed": "abc"},
        ],
    )
    def test_rejects(self, patch):
        """[TRIVIAL]"""
        cfg = small("simulate-1.5")
        cfg.update(patch)
        with pytest.raises(ConfigurationError):
            parse_config(cfg)

    def test_resolved_config_roundtrip(self):
        """[TRIVIAL]"""
        cfg = parse_config(small("simulate-1.5"))
        again = parse_config(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()


# ---------------------------------------------------------------------------
# exit codes


class TestExitCodes:
    def test_too_few_shells(self, tmp_path, capsys):
        """[TRIVIAL]"""
        code, out = run(tmp_path, {"experiment": "lp-selftest", "grid": {"dim": 1, "n": 4}})
        assert code == 2
        assert "shells" in capsys.readouterr().err
        assert not out.exists()

    def test_bad_json(self, tmp_path):
        """[TRIVIAL]"""
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert main(["--quiet", "run", str(p)]) == 2

    def test_missing_config(self, tmp_path):
        """[TRIVIAL]"""
        assert main(["--quiet", "run", str(tmp_path / "absent.json")]) == 2

    def test_lp_selftest_n256(self, tmp_path):
        """[DERIVED]"""
        cfg = {"experiment": "lp-selftest", "grid": {"dim": 2, "n": 256}, "options": {"samples": 3}}
        code, out = run(tmp_path, cfg)
        assert code == 0
        rep = json.loads((out / "lp_selftest.json").read_text())
        assert rep["partition_defect"]["homogeneous"] < 1e-10
        assert rep["reconstruction_defect"] < 1e-10 and rep["bernstein_ok"]

    def test_gaussian_bump_smoke(self, tmp_path):
        """[DERIVED]"""
        cfg = small("simulate-1.5")
        cfg["time"] = {"T": 0.1, "dt": 0.005, "snapshot_every": 5}
        code, out = run(tmp_path, cfg)
        assert code == 0
        rows = read_csv(out / "energy.csv")
        assert len(rows) == 21 and float(rows[-1]["t"]) == pytest.approx(0.1)
        assert len(list((out / "snapshots").glob("q_*.bin"))) == 5
        assert fieldio.read_binary(out / "snapshots" / "u_0004.bin").grid == Grid(1, 64)
        diag = [json.loads(line) for line in (out / "diagnostics.jsonl").read_text().splitlines()]
        assert len(diag) == 5 and all(d["blowup"]["inv_rho_besov"] >= 0 for d in diag)

    def field_files(self, tmp_path, q, u):
        g = Grid(1, 64)
        fieldio.write_binary(tmp_path / "q.bin", Field(g, q))
        fieldio.write_binary(tmp_path / "u.bin", VectorField(g, u[None]))
        return {"files": {"q": "q.bin", "u": "u.bin"}}

    def test_vacuum_exit(self, tmp_path):
        """[DERIVED]"""
        x = Grid(1, 64).coords()[0]
        cfg = small("simulate-1.5")
        cfg["initial"] = self.field_files(tmp_path, np.log(1e-8 + 0.5 * (1 + np.cos(x))), 2 * np.sin(x))
        cfg["time"] = {"T": 0.05, "dt": 0.01}
        code, out = run(tmp_path, cfg)
        assert code == 3
        man = json.loads((out / "manifest.json").read_text())
        assert man["termination"] == "vacuum" and man["exit_code"] == 3

    def test_nan_exit(self, tmp_path):
        """[DERIVED]"""
        cfg = small("simulate-1.5")
        cfg["initial"] = self.field_files(tmp_path, np.full(64, 710.0), np.zeros(64))
        cfg["params"] = {"pressure": {"kind": "gamma", "gamma": 2.0}}
        with np.errstate(over="ignore", invalid="ignore"):
            code, out = run(tmp_path, cfg)
        assert code == 4
        assert json.loads((out / "manifest.json").read_text())["termination"] == "nan"

    def test_grid_mismatch_in_files(self, tmp_path):
        """[TRIVIAL]"""
        cfg = small("simulate-1.5")
        cfg["initial"] = self.field_files(tmp_path, np.zeros(64), np.zeros(64))
        cfg["grid"] = {"dim": 1, "n": 128}
        code, _ = run(tmp_path, cfg)
        assert code == 2


# ---------------------------------------------------------------------------
# artifacts


class TestArtifacts:
    @pytest.mark.parametrize("experiment", EXPERIMENTS)
    def test_deterministic_and_traceable(self, tmp_path, experiment):
        """[TRIVIAL]"""
        cfg = small(experiment)
        c1, o1 = run(tmp_path, cfg, "a.json")
        c2, o2 = run(tmp_path, cfg, "b.json")
        assert c1 == c2 == 0
        files1 = sorted(p.relative_to(o1) for p in o1.rglob("*") if p.is_file())
        files2 = sorted(p.relative_to(o2) for p in o2.rglob("*") if p.is_file())
        assert files1 == files2
        for f in files1:
            assert (o1 / f).read_bytes() == (o2 / f).read_bytes(), f
        man_text = (o1 / "manifest.json").read_text()
        man = json.loads(man_text)
        # every file is listed, nothing is orphaned, nothing absolute or time-stamped
        assert {str(f) for f in files1} == set(man["artifacts"]) | {"manifest.json"}
        assert str(tmp_path) not in man_text
        assert set(man["versions"]) == {"korteweg_lab", "numpy", "scipy", "python"}
        assert man["config"]["experiment"] == experiment

    def test_seed_override(self, tmp_path):
        """[TRIVIAL]"""
        cfg = small("simulate-1.5")
        _, o1 = run(tmp_path, cfg, "a.json")
        _, o2 = run(tmp_path, cfg, "b.json", "--seed", "9")
        assert json.loads((o2 / "manifest.json").read_text())["config"]["seed"] == 9
        assert (o1 / "energy.csv").read_bytes() != (o2 / "energy.csv").read_bytes()

    @pytest.mark.parametrize("cells", [2, 4, 8])
    def test_interface_width_robust(self, tmp_path, cells):
        """[PAPER]"""
        cfg = small("simulate-1.7")
        cfg["grid"] = {"dim": 2, "n": 64}
        cfg["params"] = {"pressure": {"kind": "gamma", "gamma": 1.4}}
        cfg["initial"] = {"preset": "two-phase-interface", "interface_cells": cells}
        cfg["time"] = {"T": 0.05, "dt": 5e-4, "snapshot_every": 10}
        code, out = run(tmp_path, cfg)
        assert code == 0
        row = read_csv(out / "summary.csv")[0]
        assert float(row["energy_violation_relative"]) < 1e-5
        assert float(row["mean_rho_drift"]) < 1e-10

    def test_two_phase_profile(self):
        """[DERIVED]"""
        from korteweg_lab.experiments import initial_state

        cfg = small("simulate-1.5")
        cfg["initial"] = {"preset": "two-phase-interface", "rho_in": 2.0, "rho_out": 1.0, "interface_cells": 2}
        s = initial_state(parse_config(cfg))
        rho = np.exp(s.q.values)
        assert rho.max() == pytest.approx(2.0, abs=1e-6) and rho.min() == pytest.approx(1.0, abs=1e-6)


# ---------------------------------------------------------------------------
# compare


class TestCompare:
    def test_self_is_zero(self, tmp_path):
        """[TRIVIAL]"""
        _, out = run(tmp_path, small("simulate-1.5"))
        text = compare_runs(out, out / "manifest.json")
        rows = list(csv.DictReader(io.StringIO(text)))
        assert len(rows) == 3
        assert all(float(v) == 0 for r in rows for k, v in r.items() if k not in ("index", "t"))

    def test_cli_writes_file(self, tmp_path):
        """[TRIVIAL]"""
        _, out = run(tmp_path, small("simulate-1.5"))
        dest = tmp_path / "diff.csv"
        assert main(["--quiet", "compare", str(out / "manifest.json"), str(out), "--out", str(dest)]) == 0
        assert dest.read_text().startswith("index,t,q_sup,q_L2,u_sup,u_L2")

    def test_cross_system_table(self, tmp_path):
        """[DERIVED]"""
        # a (q, u) run converted to (ρ, v) against the effective-velocity run from the same data
        a, b = small("simulate-1.5"), small("simulate-1.7")
        for c in (a, b):
            c["grid"] = {"dim": 1, "n": 128}
            c["time"] = {"T": 0.05, "dt": 5e-4, "snapshot_every": 25}
            c["initial"] = {"preset": "gaussian-bump", "amplitude": 0.05, "velocity_amplitude": 0.05}
        _, oa = run(tmp_path, a, "a.json")
        _, ob = run(tmp_path, b, "b.json")
        rows = list(csv.DictReader(io.StringIO(compare_runs(oa, ob))))
        assert list(rows[0])[2] == "rho_sup"
        assert float(rows[0]["rho_sup"]) < 1e-14
        assert all(float(r["rho_sup"]) < 1e-5 and float(r["v_sup"]) < 1e-5 for r in rows)

    def test_richardson_table(self, tmp_path):
        """[DERIVED]"""
        # halving dt shrinks the gap to a fine reference by about four
        outs = {}
        for m in (10, 20, 160):
            c = small("simulate-1.5")
            c["time"] = {"T": 0.1, "dt": 0.1 / m, "snapshot_every": m}
            _, outs[m] = run(tmp_path, c, f"r{m}.json")
        e = [float(list(csv.DictReader(io.StringIO(compare_runs(outs[m], outs[160]))))[-1]["u_sup"]) for m in (10, 20)]
        assert 1.8 < math.log2(e[0] / e[1]) < 2.2

    def test_incompatible(self, tmp_path):
        """[TRIVIAL]"""
        a = small("simulate-1.5")
        b = small("simulate-1.5")
        b["grid"] = {"dim": 1, "n": 128}
        _, oa = run(tmp_path, a, "a.json")
        _, ob = run(tmp_path, b, "b.json")
        assert main(["--quiet", "compare", str(oa), str(ob)]) == 2
        b["grid"] = a["grid"]
        b["time"] = dict(a["time"], snapshot_every=2)
        _, oc = run(tmp_path, b, "c.json")
        with pytest.raises(ConfigurationError):
            compare_runs(oa, oc)

    def test_missing_manifest(self, tmp_path):
        """[TRIVIAL]"""
        assert main(["--quiet", "compare", str(tmp_path / "x"), str(tmp_path / "y")]) == 2
