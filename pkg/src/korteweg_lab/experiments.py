"""Named experiments driven by a JSON configuration.

Config schema (version 1)::

    {
      "schema": 1,
      "experiment": "simulate-1.5",
      "grid": {"dim": 2, "n": 64, "length": 6.283185307179586},
      "params": {"mu_bar": 1.0, "lambda_bar": 0.0, "kappa": 1.0,
                 "pressure": {"kind": "linear", "K": 1.0}, "rho_ref": 1.0,
                 "form": "derived"},
      "time": {"T": 0.1, "dt": "auto", "snapshot_every": 10, "cfl": 0.4},
      "initial": {"preset": "gaussian-bump", "amplitude": 0.2},
      "seed": 0,
      "output": "runs/bump",
      "options": {}
    }

``initial`` is either a preset (``gaussian-bump``, ``two-phase-interface``,
``lacunary-family``) with its options, or ``{"files": {"q": ..., "u": ...}}``
(``rho``/``v`` for the effective-velocity system) naming field binaries or
CSV files relative to the config file.

Every run writes its artifacts into the output directory together with
``manifest.json``, which lists each artifact with its SHA-256.  Nothing
written depends on wall-clock time or on absolute paths.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__, fieldio
from .diagnostics import (
    EnergyTracker,
    blowup_monitor,
    energy_dissipation_check,
)
from .errors import ConfigurationError
from .illposed import build_family, measure_density_growth, measure_linear_growth
from .linear import (
    decay_summary_json,
    divergence_lemma_check,
    divergence_subsystem,
    shell_table_csv,
    solve_linear,
    verify_decay_all,
    default_alpha,
)
from .littlewood_paley import bernstein_ratios, block, build_partition, heat_times
from .picard import picard_iterate
from .solver import (
    CFL,
    PhysParams,
    PressureLaw,
    State,
    StateV,
    effective_velocity,
    integrate,
    inverse_effective_velocity,
)
from .spectral import Field, Grid, VectorField, random_field

__all__ = [
    "SCHEMA_VERSION",
    "EXPERIMENTS",
    "PRESETS",
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_VACUUM",
    "EXIT_NAN",
    "ExperimentConfig",
    "Outcome",
    "parse_config",
    "load_config",
    "initial_state",
    "run_experiment",
    "write_outcome",
    "compare_runs",
]

SCHEMA_VERSION = 1
EXPERIMENTS = (
    "simulate-1.5",
    "simulate-1.7",
    "picard",
    "linear-verify",
    "divergence-subsystem",
    "blowup-scan",
    "illposed-sweep",
    "lp-selftest",
)
PRESETS = ("gaussian-bump", "two-phase-interface", "lacunary-family")
EXIT_OK, EXIT_CONFIG, EXIT_VACUUM, EXIT_NAN = 0, 2, 3, 4
TERMINATION_CODES = {"completed": EXIT_OK, "non-contracting": EXIT_OK, "vacuum": EXIT_VACUUM, "nan": EXIT_NAN}

_TOP_KEYS = {"schema", "experiment", "grid", "params", "time", "initial", "seed", "output", "options"}


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    grid: Grid
    params: PhysParams
    T: float
    dt: float | None
    snapshot_every: int
    cfl: float
    initial: dict
    seed: int
    output: str
    options: dict
    base_dir: Path = field(default=Path("."), compare=False)

    def to_dict(self) -> dict:
        """Resolved config; file references stay as written, the output directory is left out."""
        return {
            "schema": SCHEMA_VERSION,
            "experiment": self.experiment,
            "grid": self.grid.to_dict(),
            "params": self.params.to_dict(),
            "time": {
                "T": self.T,
                "dt": "auto" if self.dt is None else self.dt,
                "snapshot_every": self.snapshot_every,
                "cfl": self.cfl,
            },
            "initial": self.initial,
            "seed": self.seed,
            "options": self.options,
        }


def _num(d: dict, key: str, default, kind=float):
    v = d.get(key, default)
    try:
        out = kind(v)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{key!r} must be a number, got {v!r}") from None
    if kind is float and not math.isfinite(out):
        raise ConfigurationError(f"{key!r} must be finite, got {v!r}")
    return out


def _section(raw: dict, key: str) -> dict:
    v = raw.get(key, {})
    if not isinstance(v, dict):
        raise ConfigurationError(f"{key!r} must be an object")
    return v


def _parse_params(p: dict) -> PhysParams:
    pr = p.get("pressure", {})
    if not isinstance(pr, dict):
        raise ConfigurationError("'pressure' must be an object")
    kind = pr.get("kind", "linear")
    if kind == "linear":
        law = PressureLaw("linear", K=_num(pr, "K", 1.0))
    elif kind == "gamma":
        law = PressureLaw("gamma", a=_num(pr, "a", 1.0), gamma=_num(pr, "gamma", 2.0))
    else:
        raise ConfigurationError(f"unknown pressure kind {kind!r}")
    unknown = set(p) - {"mu_bar", "lambda_bar", "kappa", "pressure", "rho_ref", "form", "viscous", "capillary", "linear"}
    if unknown:
        raise ConfigurationError(f"unknown params keys {sorted(unknown)}")
    opt = {k: _num(p, k, None) for k in ("viscous", "capillary") if p.get(k) is not None}
    return PhysParams(
        mu_bar=_num(p, "mu_bar", 1.0),
        kappa=_num(p, "kappa", 1.0),
        lambda_bar=_num(p, "lambda_bar", 0.0),
        pressure=law,
        rho_ref=_num(p, "rho_ref", 1.0),
        form=p.get("form", "derived"),
        **opt,
    )


def parse_config(raw: dict, base_dir: Path | str = ".", seed: int | None = None, output: str | None = None) -> ExperimentConfig:
    """Validate a config mapping; ``seed``/``output`` override the file values."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
    if raw.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported schema {raw.get('schema')!r}, expected {SCHEMA_VERSION}")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigurationError(f"unknown experiment {exp!r}; choose one of {', '.join(EXPERIMENTS)}")
    gr = _section(raw, "grid")
    if _num(gr, "n", 64, int) < 8:
        raise ConfigurationError(f"grid n={gr.get('n')} resolves too few dyadic shells (need n >= 8)")
    try:
        grid = Grid(_num(gr, "dim", 2, int), _num(gr, "n", 64, int), _num(gr, "length", 2 * math.pi))
    except ValueError as exc:
        raise ConfigurationError(f"bad grid: {exc}") from None
    build_partition(grid)  # rejects grids with too few dyadic shells
    params = _parse_params(_section(raw, "params"))
    params.check_dim(grid.dim)
    tm = _section(raw, "time")
    T = _num(tm, "T", 0.1)
    if not T > 0:
        raise ConfigurationError(f"T must be positive, got {T}")
    dt_raw = tm.get("dt", "auto")
    dt = None if dt_raw in ("auto", None) else _num(tm, "dt", None)
    if dt is not None and not dt > 0:
        raise ConfigurationError(f"dt must be positive or 'auto', got {dt_raw!r}")
    every = _num(tm, "snapshot_every", 10, int)
    if every < 1:
        raise ConfigurationError("snapshot_every must be >= 1")
    cfl = _num(tm, "cfl", CFL)
    if not 0 < cfl <= 1:
        raise ConfigurationError(f"cfl must lie in (0, 1], got {cfl}")
    initial = _section(raw, "initial") or {"preset": "gaussian-bump"}
    if "preset" in initial and initial["preset"] not in PRESETS:
        raise ConfigurationError(f"unknown preset {initial['preset']!r}; choose one of {', '.join(PRESETS)}")
    if "preset" not in initial and "files" not in initial:
        raise ConfigurationError("initial needs a 'preset' or 'files' entry")
    base = Path(base_dir)
    if "files" in initial:
        files = initial["files"]
        if not isinstance(files, dict) or not files:
            raise ConfigurationError("initial.files must map field names to paths")
        for name, rel in files.items():
            if name not in ("q", "u", "rho", "v"):
                raise ConfigurationError(f"unknown initial field {name!r}")
            if not (base / rel).is_file():
                raise ConfigurationError(f"initial field file {rel!r} does not exist")
    s = raw.get("seed", 0) if seed is None else seed
    try:
        s = int(s)
    except (TypeError, ValueError):
        raise ConfigurationError(f"seed must be an integer, got {s!r}") from None
    opts = _section(raw, "options")
    out = output if output is not None else raw.get("output", "out")
    return ExperimentConfig(exp, grid, params, T, dt, every, cfl, initial, s, str(out), opts, base)


def load_config(path, seed: int | None = None, output: str | None = None) -> ExperimentConfig:
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file {str(path)!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from None
    return parse_config(raw, p.parent, seed, output)


# ---------------------------------------------------------------------------
# initial data


def _opt(d: dict, key: str, default, kind=float):
    return _num(d, key, default, kind)


def _periodic_distance(g: Grid, center) -> np.ndarray:
    xs = g.coords()
    d2 = 0.0
    for x, c in zip(xs, center):
        dd = np.abs(x - c)
        d2 = d2 + np.minimum(dd, g.length - dd) ** 2
    return np.broadcast_to(np.sqrt(d2), g.shape)


def _random_velocity(g: Grid, rng: np.random.Generator, amp: float) -> VectorField:
    if amp == 0:
        return VectorField.zeros(g)
    comps = [amp * random_field(g, rng, kmax=4).values for _ in range(g.dim)]
    return VectorField(g, np.stack(comps))


def _gaussian_bump(g: Grid, ini: dict, rng) -> State:
    amp = _opt(ini, "amplitude", 0.2)
    width = _opt(ini, "width", 0.1) * g.length
    center = ini.get("center", [0.5] * g.dim)
    if len(center) != g.dim:
        raise ConfigurationError(f"center needs {g.dim} entries")
    if not (width > 0 and 1 + amp > 0 and amp > -1):
        raise ConfigurationError("gaussian-bump needs width > 0 and amplitude > -1")
    r = _periodic_distance(g, [c * g.length for c in center])
    rho = 1.0 + amp * np.exp(-0.5 * (r / width) ** 2)
    u = _random_velocity(g, rng, _opt(ini, "velocity_amplitude", 0.0))
    return State(Field(g, np.log(rho)), u, 0.0)


def _two_phase(g: Grid, ini: dict, rng) -> State:
    """Slab of density rho_in inside |x_1 − L/2| < half_width·L, tanh interfaces of width cells·dx."""
    rho_in = _opt(ini, "rho_in", 1.5)
    rho_out = _opt(ini, "rho_out", 1.0)
    cells = _opt(ini, "interface_cells", 4.0)
    half = _opt(ini, "half_width", 0.25) * g.length
    if not (rho_in > 0 and rho_out > 0):
        raise ConfigurationError("densities must be positive")
    if not cells >= 1:
        raise ConfigurationError(f"interface_cells must be >= 1, got {cells}")
    if not 0 < half < g.length / 2:
        raise ConfigurationError("half_width must lie in (0, 0.5)")
    delta = cells * g.dx
    x = g.coords()[0]
    dd = np.abs(x - g.length / 2)
    dist = np.minimum(dd, g.length - dd)
    prof = 0.5 * (1 + np.tanh((half - dist) / delta))
    rho = np.broadcast_to(rho_out + (rho_in - rho_out) * prof, g.shape)
    u = _random_velocity(g, rng, _opt(ini, "velocity_amplitude", 0.0))
    return State(Field(g, np.log(rho)), u, 0.0)


def _lacunary(g: Grid, ini: dict, seed: int) -> State:
    fam = build_family(
        _opt(ini, "member", 8, int),
        _opt(ini, "r", 2.0),
        g,
        seed=seed,
        first_shell=_opt(ini, "first_shell", 3, int),
    )
    return State(*fam.data, 0.0)


def _read_field(path: Path):
    if path.suffix == ".csv":
        return fieldio.read_csv(path)
    return fieldio.read_binary(path)


def initial_state(cfg: ExperimentConfig):
    """State (or StateV when ρ/v files are given) described by ``cfg.initial``."""
    ini, g = cfg.initial, cfg.grid
    rng = np.random.default_rng(cfg.seed)
    if "files" in ini:
        f = {k: _read_field(cfg.base_dir / v) for k, v in ini["files"].items()}
        for k, v in f.items():
            if v.grid != g:
                raise ConfigurationError(f"field {k!r} lives on {v.grid.to_dict()}, config grid is {g.to_dict()}")
        if "rho" in f:
            return StateV(f["rho"], f.get("v", VectorField.zeros(g)), 0.0)
        return State(f.get("q", Field(g, np.zeros(g.shape))), f.get("u", VectorField.zeros(g)), 0.0)
    name = ini["preset"]
    if name == "gaussian-bump":
        return _gaussian_bump(g, ini, rng)
    if name == "two-phase-interface":
        return _two_phase(g, ini, rng)
    return _lacunary(g, ini, cfg.seed)


def _as_state(s, params: PhysParams) -> State:
    return s if isinstance(s, State) else inverse_effective_velocity(s, params)


def _as_statev(s, params: PhysParams) -> StateV:
    return s if isinstance(s, StateV) else effective_velocity(s, params)


# ---------------------------------------------------------------------------
# artifact helpers


@dataclass
class Outcome:
    """Artifacts (relative name -> bytes) plus the termination cause."""

    termination: str = "completed"
    message: str = ""
    artifacts: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return TERMINATION_CODES.get(self.termination, EXIT_OK)

    def add_text(self, name: str, text: str) -> None:
        self.artifacts[name] = text.encode()

    def add_json(self, name: str, obj) -> None:
        self.add_text(name, _dumps(obj) + "\n")

    def add_jsonl(self, name: str, rows) -> None:
        self.add_text(name, "".join(_dumps(r) + "\n" for r in rows))

    def add_csv(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(x) for x in r])
        self.add_text(name, buf.getvalue())

    def add_field(self, name: str, obj) -> None:
        self.artifacts[name] = fieldio.to_bytes(obj)


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else ("nan" if x != x else ("inf" if x > 0 else "-inf"))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True)


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _snapshot_names(i: int, names) -> list[str]:
    return [f"snapshots/{n}_{i:04d}.bin" for n in names]


def _versions() -> dict:
    return {
        "korteweg_lab": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


# ---------------------------------------------------------------------------
# experiments


def _simulate(cfg: ExperimentConfig, system: str) -> Outcome:
    p = cfg.params
    s0 = initial_state(cfg)
    s0 = _as_state(s0, p) if system == "1.5" else _as_statev(s0, p)
    tracker = EnergyTracker(p)
    run = integrate(s0, p, cfg.T, cfg.dt, cfg.snapshot_every, cfg.cfl, monitor=tracker)
    out = Outcome(run.termination, run.message)
    names = ("q", "u") if system == "1.5" else ("rho", "v")
    part = build_partition(cfg.grid)
    snaps, diag = [], []
    by_t = {r.t: r for r in tracker.reports}
    for i, s in enumerate(run.snapshots):
        a, b = (s.q, s.u) if system == "1.5" else (s.rho, s.v)
        files = _snapshot_names(i, names)
        out.add_field(files[0], a)
        out.add_field(files[1], b)
        snaps.append({"index": i, "t": s.t, "files": files})
        row = {"index": i, "t": s.t, "energy": by_t[s.t].to_dict() if s.t in by_t else None}
        row["blowup"] = blowup_monitor(s, part=part).to_dict()
        if system == "1.7":
            row["mean_rho"] = float(np.mean(s.rho.values))
        diag.append(row)
    out.add_csv(
        "energy.csv",
        ["t", "kinetic", "potential", "capillary", "dissipation_integral", "total"],
        [[r.t, r.kinetic, r.potential, r.capillary, r.dissipation_integral, r.total] for r in tracker.reports],
    )
    out.add_jsonl("diagnostics.jsonl", diag)
    if len(tracker.reports) >= 2:
        check = energy_dissipation_check(tracker.reports)
    else:  # stopped before the first step
        e0 = tracker.reports[0].total if tracker.reports else math.nan
        check = {"E0": e0, "E_final": e0, "relative": math.nan}
    summary = {
        "system": system,
        "termination": run.termination,
        "steps": run.steps,
        "dt": run.dt,
        "snapshots": len(run.snapshots),
        "E0": check["E0"],
        "E_final": check["E_final"],
        "energy_violation_relative": check["relative"],
    }
    if system == "1.7":
        means = [float(np.mean(r.rho.values)) for r in run.snapshots]
        summary["mean_rho_drift"] = max(abs(m - means[0]) for m in means)
    out.add_csv("summary.csv", list(summary), [list(summary.values())])
    out.summary = {"snapshots": snaps, "dt": run.dt, "steps": run.steps, "system": system}
    return out


def _picard(cfg: ExperimentConfig) -> Outcome:
    o = cfg.options
    s0 = _as_state(initial_state(cfg), cfg.params)
    lev = o.get("smoothing_level")
    res = picard_iterate(
        s0.q,
        s0.u,
        cfg.params,
        cfg.T,
        n_iters=_opt(o, "n_iters", 10, int),
        n_steps=_opt(o, "n_steps", 100, int),
        smoothing_level=None if lev is None else int(lev),
    )
    out = Outcome(res.status)
    rows = []
    ratios = [math.nan] + res.ratios
    for i, (gap, rt, pieces) in enumerate(zip(res.gaps, ratios, res.split_norms), start=1):
        rows.append([i, gap, rt] + list(pieces))
    out.add_csv("picard.csv", ["iteration", "gap", "ratio", "F_LL", "F_bL", "F_Lb", "F_bb"], rows)
    report = res.to_dict()
    ref_dt = o.get("reference_dt")
    if ref_dt is not None:
        ref = integrate(s0, cfg.params, cfg.T, float(ref_dt), snapshot_every=10**9)
        fin = res.finals[-1]
        report["reference"] = {
            "dt": ref.dt,
            "termination": ref.termination,
            "q_sup_diff": float(np.max(np.abs(fin.q.values - ref.final.q.values))),
            "u_sup_diff": float(np.max(np.abs(fin.u.values - ref.final.u.values))),
        }
    out.add_json("picard.json", report)
    fin = res.finals[-1]
    files = _snapshot_names(0, ("q", "u"))
    out.add_field(files[0], fin.q)
    out.add_field(files[1], fin.u)
    out.summary = {"snapshots": [{"index": 0, "t": fin.t, "files": files}], "system": "1.5"}
    return out


def _linear_verify(cfg: ExperimentConfig) -> Outcome:
    o = cfg.options
    s0 = _as_state(initial_state(cfg), cfg.params)
    coeffs = cfg.params.linear_coeffs()
    ts = heat_times(cfg.T, _opt(o, "n_times", 65, int))
    tr = solve_linear(s0.q, s0.u, coeffs, cfg.T, ts)
    part = build_partition(cfg.grid)
    al = default_alpha(coeffs)
    fits = verify_decay_all(tr, part, al)
    out = Outcome()
    out.add_text("shell_table.csv", shell_table_csv(tr, part, al, coeffs.c))
    out.add_text("decay_summary.json", decay_summary_json(fits) + "\n")
    ok = all(f.ok and f.K > 0 for f in fits)
    out.add_json("linear_verify.json", {"alpha": al, "all_shells_ok": ok, "coeffs": vars(coeffs)})
    return out


def _divergence(cfg: ExperimentConfig) -> Outcome:
    o = cfg.options
    p = cfg.params
    rng = np.random.default_rng(cfg.seed)
    kmax = _opt(o, "kmax", 8, int)
    c0 = random_field(cfg.grid, rng, kmax=kmax)
    v0 = random_field(cfg.grid, rng, kmax=kmax)
    tr = divergence_subsystem(c0, v0, p.mu_bar, p.lambda_bar, p.kappa, cfg.T, heat_times(cfg.T, _opt(o, "n_times", 129, int)))
    g = cfg.grid
    rows = []
    for i, t in enumerate(tr.times):
        rows.append([t, float(np.sqrt(np.sum(tr.c(i).values ** 2) * g.cell_volume)), float(np.sqrt(np.sum(tr.v(i).values ** 2) * g.cell_volume))])
    out = Outcome()
    out.add_csv("divergence.csv", ["t", "c_L2", "v_L2"], rows)
    out.add_json("lemma.json", divergence_lemma_check(tr, _opt(o, "s", 0.0), _opt(o, "r", 2.0)))
    return out


def vacuum_family(g: Grid, k: int, width: float = 0.1) -> Field:
    """ρ = 1 − (1 − 2^{−k})·exp(−|x − c|²/(2w²)), so min ρ = 2^{−k}."""
    r = _periodic_distance(g, [g.length / 2] * g.dim)
    bump = np.exp(-0.5 * (r / (width * g.length)) ** 2)
    return Field(g, 1.0 - (1.0 - 2.0**-k) * bump)


def _blowup_scan(cfg: ExperimentConfig) -> Outcome:
    o = cfg.options
    part = build_partition(cfg.grid)
    eps = _opt(o, "eps", 0.5)
    width = _opt(o, "width", 0.1)
    rows = []
    for k in range(1, _opt(o, "k_max", 10, int) + 1):
        rep = blowup_monitor(vacuum_family(cfg.grid, k, width), eps, part)
        rows.append([k, rep.rho_min, rep.inv_rho_besov, rep.inv_sqrt_L1, rep.sqrt_L1, rep.q_linf])
    out = Outcome()
    out.add_csv("blowup_scan.csv", ["k", "rho_min", "inv_rho_besov", "inv_sqrt_L1", "sqrt_L1", "q_linf"], rows)
    vals = [r[2] for r in rows]
    out.add_json("blowup_scan.json", {"monotone": all(b > a for a, b in zip(vals, vals[1:])), "eps": eps})
    return out


def _illposed(cfg: ExperimentConfig) -> Outcome:
    o = cfg.options
    ns = [int(n) for n in o.get("n_values", list(range(4, 13)))]
    r = _opt(o, "r", 2.0)
    rule = o.get("t_n_rule", "1/n")
    part = build_partition(cfg.grid)
    fams = [build_family(n, r, cfg.grid, part, seed=cfg.seed) for n in ns]
    lin = measure_linear_growth(fams, rule, cfg.params.linear_coeffs())
    header = ["n", "t_n", "B2r", "B21", "div_L1_Linf", "q_linf_max_linear"]
    nonlinear = bool(o.get("nonlinear", False))
    if nonlinear:
        header += ["q_linf_max", "div_integral_max", "adv_integral_max", "termination"]
    rows = []
    for fam, row in zip(fams, lin):
        vals = [fam.n_max, row["t_n"], fam.norms["B2r"], fam.norms["B21"], row["div_L1_Linf"], row["q_linf_max"]]
        if nonlinear:
            d = measure_density_growth(fam, row["t_n"], cfg.params, cfg.cfl)
            vals += [d["q_linf_max"], d["div_integral_max"], d["adv_integral_max"], d["termination"]]
        rows.append(vals)
    out = Outcome()
    out.add_csv("illposed.csv", header, rows)
    out.add_jsonl("family.jsonl", [f.to_dict() for f in fams])
    return out


def _lp_selftest(cfg: ExperimentConfig) -> Outcome:
    g = cfg.grid
    part = build_partition(g)
    rng = np.random.default_rng(cfg.seed)
    samples = _opt(cfg.options, "samples", 100, int)
    defect = part.defect()
    recon, bern = 0.0, []
    for i in range(samples):
        f = random_field(g, rng)
        total = sum(block(f, l, part).values for l in part.levels)
        recon = max(recon, float(np.max(np.abs(total - (f.values - np.mean(f.values))))))
        for l, ratio in bernstein_ratios(f, part).items():
            bern.append([i, l, ratio])
    lo = min(r[2] for r in bern)
    hi = max(r[2] for r in bern)
    out = Outcome()
    out.add_csv("bernstein.csv", ["sample", "shell", "ratio"], bern)
    out.add_json(
        "lp_selftest.json",
        {
            "levels": [part.j_min, part.j_max],
            "partition_defect": defect,
            "reconstruction_defect": recon,
            "bernstein_min": lo,
            "bernstein_max": hi,
            "bernstein_ok": bool(lo >= 0.75 - 1e-12 and hi <= 8 / 3 + 1e-12),
            "samples": samples,
        },
    )
    return out


_RUNNERS: dict[str, Callable[[ExperimentConfig], Outcome]] = {
    "simulate-1.5": lambda c: _simulate(c, "1.5"),
    "simulate-1.7": lambda c: _simulate(c, "1.7"),
    "picard": _picard,
    "linear-verify": _linear_verify,
    "divergence-subsystem": _divergence,
    "blowup-scan": _blowup_scan,
    "illposed-sweep": _illposed,
    "lp-selftest": _lp_selftest,
}


def run_experiment(cfg: ExperimentConfig) -> Outcome:
    return _RUNNERS[cfg.experiment](cfg)


def write_outcome(cfg: ExperimentConfig, out: Outcome, out_dir: Path | str | None = None) -> Path:
    """Write artifacts and ``manifest.json``; returns the manifest path."""
    root = Path(out_dir if out_dir is not None else cfg.output)
    root.mkdir(parents=True, exist_ok=True)
    listing = {}
    for name in sorted(out.artifacts):
        data = out.artifacts[name]
        path = root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        listing[name] = hashlib.sha256(data).hexdigest()
    manifest = {
        "schema": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "versions": _versions(),
        "termination": out.termination,
        "message": out.message,
        "exit_code": out.exit_code,
        "artifacts": listing,
        "run": out.summary,
    }
    mp = root / "manifest.json"
    mp.write_text(_dumps(manifest) + "\n")
    return mp


# ---------------------------------------------------------------------------
# comparison


def _load_manifest(path) -> tuple[dict, Path]:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    try:
        return json.loads(p.read_text()), p.parent
    except FileNotFoundError:
        raise ConfigurationError(f"manifest {str(path)!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"manifest {str(path)!r} is not valid JSON: {exc}") from None


def _params_from(m: dict) -> PhysParams:
    p = dict(m["config"]["params"])
    p.pop("linear", None)
    lin = m["config"]["params"].get("linear", {})
    if p.get("form") == "display":
        p["viscous"], p["capillary"] = lin.get("a"), lin.get("c")
    return _parse_params(p)


def _snapshot_states(m: dict, root: Path) -> list:
    run = m.get("run") or {}
    snaps = run.get("snapshots")
    if not snaps:
        raise ConfigurationError("manifest lists no snapshots")
    out = []
    for s in snaps:
        a, b = (fieldio.read_binary(root / f) for f in s["files"])
        out.append(State(a, b, s["t"]) if run["system"] == "1.5" else StateV(a, b, s["t"]))
    return out


def _norms(g: Grid, d: np.ndarray) -> tuple[float, float]:
    return float(np.max(np.abs(d))), float(np.sqrt(np.sum(d**2) * g.cell_volume))


def compare_runs(manifest_a, manifest_b) -> str:
    """Per-snapshot sup and L² differences of two runs as CSV.

    Runs of different systems are compared in the (ρ, v) variables, converting
    the (q, u) run with its own parameters.  Grids, snapshot counts and
    snapshot times must agree.
    """
    ma, ra = _load_manifest(manifest_a)
    mb, rb = _load_manifest(manifest_b)
    if ma["config"]["grid"] != mb["config"]["grid"]:
        raise ConfigurationError("runs live on different grids")
    sa, sb = _snapshot_states(ma, ra), _snapshot_states(mb, rb)
    if len(sa) != len(sb):
        raise ConfigurationError(f"snapshot counts differ: {len(sa)} vs {len(sb)}")
    mixed = type(sa[0]) is not type(sb[0])
    if mixed:
        pa, pb = _params_from(ma), _params_from(mb)
        sa = [_as_statev(s, pa) for s in sa]
        sb = [_as_statev(s, pb) for s in sb]
    v1 = isinstance(sa[0], StateV)
    names = ("rho", "v") if v1 else ("q", "u")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "t", f"{names[0]}_sup", f"{names[0]}_L2", f"{names[1]}_sup", f"{names[1]}_L2"])
    for i, (a, b) in enumerate(zip(sa, sb)):
        if not math.isclose(a.t, b.t, rel_tol=1e-12, abs_tol=1e-14):
            raise ConfigurationError(f"snapshot {i} times differ: {a.t} vs {b.t}")
        g = a.grid
        fa, va = (a.rho.values, a.v.values) if v1 else (a.q.values, a.u.values)
        fb, vb = (b.rho.values, b.v.values) if v1 else (b.q.values, b.u.values)
        w.writerow([i, repr(float(a.t))] + [repr(x) for x in _norms(g, fa - fb) + _norms(g, va - vb)])
    return buf.getvalue()

