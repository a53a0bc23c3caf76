"""Energy, blow-up and integrability monitors.

Energy of a state (ρ, u) with κ(ρ) = κ/ρ::

    E = ∫ ½ρ|u|² + ∫ (Π(ρ) − Π(ρ̄)) + ∫ κ|∇ρ|²/(2ρ)

and its dissipation rate ½∫ μ̄ρ|D(u)|² + ∫ λ̄ρ(div u)² with D(u) = ∇u + ᵗ∇u.
For the derived coefficients the solver satisfies dE/dt = −rate exactly, so
E(t) + ∫₀ᵗ rate − E(0) only measures discretization error.

Weighted L^p balance for the effective-velocity system, p ≥ 2::

    (1/p) d/dt ∫ρ|v|^p + μ̄∫ρ|v|^{p−2}|∇v|²
        + μ̄(p−2)∫ρ|v|^{p−4} Σ_i (v·∂_i v)² + ∫|v|^{p−2} v·∇P(ρ) = 0

with Σ_i (v·∂_i v)² = ¼ Σ_i (∂_i|v|²)².
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from .littlewood_paley import (
    BesovSpec,
    ChemLernerSpec,
    DyadicPartition,
    besov_norm,
    block_norm_series,
    build_partition,
    chemin_lerner_from_blocks,
)
from .solver import VACUUM_FLOOR, PhysParams, PressureLaw, State, StateV, inverse_effective_velocity
from .spectral import Field, Grid, VectorField

__all__ = [
    "EnergyReport",
    "total_energy",
    "dissipation_rate",
    "EnergyTracker",
    "energy_dissipation_check",
    "BlowupReport",
    "blowup_monitor",
    "gradient_identity_residual",
    "weighted_lp_terms",
    "weighted_lp_energy",
    "integrability_gain",
    "regularity_transfer_check",
    "rescaling_family",
    "interpolation_fit",
    "orlicz_equivalence",
]


def _grad(g: Grid, values: np.ndarray) -> np.ndarray:
    fh = g.fft(values)
    return g.ifft(np.stack([1j * k * fh for k in g.k_odd]))


def _as_qu(state, params: PhysParams) -> State:
    return inverse_effective_velocity(state, params, floor=0.0) if isinstance(state, StateV) else state


def _integral(g: Grid, values: np.ndarray) -> float:
    return float(np.sum(values) * g.cell_volume)


# ---------------------------------------------------------------------------
# energy


@dataclass(frozen=True)
class EnergyReport:
    t: float
    kinetic: float
    potential: float
    capillary: float
    dissipation_integral: float = 0.0

    @property
    def total(self) -> float:
        return self.kinetic + self.potential + self.capillary

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total"] = self.total
        return d


def total_energy(state, params: PhysParams, dissipation_integral: float = 0.0) -> EnergyReport:
    s = _as_qu(state, params)
    g = s.grid
    rho = np.exp(s.q.values)
    if not np.min(rho) > 0:
        raise ValueError("total_energy needs a positive density")
    kin = _integral(g, 0.5 * rho * np.sum(s.u.values**2, axis=0))
    pot = _integral(g, params.pressure.potential(rho, params.rho_ref))
    grad_rho = _grad(g, rho)
    cap = _integral(g, 0.5 * params.kappa * np.sum(grad_rho**2, axis=0) / rho)
    return EnergyReport(float(s.t), kin, pot, cap, float(dissipation_integral))


def dissipation_rate(state, params: PhysParams) -> float:
    """½∫μ̄ρ|D(u)|² + ∫λ̄ρ(div u)²."""
    s = _as_qu(state, params)
    g = s.grid
    rho = np.exp(s.q.values)
    uh = g.fft(s.u.values)
    gu = g.ifft(np.stack([1j * k * uh for k in g.k_odd]))  # gu[j, i] = ∂_j u_i
    dim = g.dim
    D2 = sum((gu[j, i] + gu[i, j]) ** 2 for i in range(dim) for j in range(dim))
    div = sum(gu[i, i] for i in range(dim))
    return _integral(g, 0.5 * params.mu_bar * rho * D2 + params.lambda_bar * rho * div**2)


class EnergyTracker:
    """Solver monitor: records E(t) and the trapezoid dissipation integral."""

    def __init__(self, params: PhysParams):
        self.params = params
        self.reports: list[EnergyReport] = []
        self._last: tuple[float, float] | None = None
        self._acc = 0.0

    def __call__(self, state) -> None:
        rate = dissipation_rate(state, self.params)
        t = float(state.t)
        if self._last is not None:
            t0, r0 = self._last
            self._acc += 0.5 * (t - t0) * (r0 + rate)
        self._last = (t, rate)
        self.reports.append(total_energy(state, self.params, self._acc))


def energy_dissipation_check(trajectory, params: PhysParams | None = None) -> dict:
    """Worst margin max_t [E(t) + ∫₀ᵗ rate − E(0)].

    ``trajectory`` is a sequence of :class:`EnergyReport` or of states (then
    the dissipation integral uses the trapezoid rule on the snapshots).
    """
    items = list(getattr(trajectory, "snapshots", trajectory))
    if len(items) < 2:
        raise ValueError("need at least two snapshots")
    if isinstance(items[0], EnergyReport):
        reports = items
    else:
        if params is None:
            raise ValueError("params are required for state trajectories")
        tracker = EnergyTracker(params)
        for s in items:
            tracker(s)
        reports = tracker.reports
    e0 = reports[0].total + reports[0].dissipation_integral
    margins = np.array([r.total + r.dissipation_integral - e0 for r in reports])
    worst = float(np.max(margins))
    return {
        "max_violation": worst,
        "relative": worst / e0 if e0 > 0 else (0.0 if worst <= 0 else math.inf),
        "E0": e0,
        "E_final": reports[-1].total,
        "dissipation_final": reports[-1].dissipation_integral,
    }


# ---------------------------------------------------------------------------
# blow-up criterion quantities


@dataclass(frozen=True)
class BlowupReport:
    t: float
    inv_rho_besov: float
    inv_sqrt_L1: float
    sqrt_L1: float
    q_linf: float
    rho_min: float
    vacuum: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def blowup_monitor(
    state, eps: float = 0.5, part: DyadicPartition | None = None, floor: float = VACUUM_FLOOR
) -> BlowupReport:
    """Blow-up criterion quantities of a density (State, StateV or Field).

    The Besov quantity is ‖1/ρ − 1‖ in homogeneous Ḃ⁰_{N+ε,1}.  Below the
    vacuum floor the report is flagged; non-positive densities give ``inf``.
    """
    if isinstance(state, State):
        rho, t = np.exp(state.q.values), state.t
    elif isinstance(state, StateV):
        rho, t = state.rho.values, state.t
    else:
        rho, t = state.values, 0.0
    g = state.grid
    rmin = float(np.min(rho))
    vacuum = not rmin >= floor
    if not rmin > 0:
        return BlowupReport(float(t), math.inf, math.inf, math.inf, math.inf, rmin, True)
    part = part or build_partition(g)
    spec = BesovSpec(0.0, g.dim + eps, 1.0, homogeneous=True)
    besov = besov_norm(Field(g, 1.0 / rho - 1.0), spec, part)
    return BlowupReport(
        float(t),
        float(besov),
        _integral(g, np.abs(1.0 / np.sqrt(rho) - 1.0)),
        _integral(g, np.abs(np.sqrt(rho) - 1.0)),
        float(np.max(np.abs(np.log(rho)))),
        rmin,
        vacuum,
    )


# ---------------------------------------------------------------------------
# weighted L^p energy


def _jacobian(v: VectorField) -> np.ndarray:
    """J[i, j] = ∂_i v_j."""
    g = v.grid
    vh = g.fft(v.values)
    return g.ifft(np.stack([1j * k * vh for k in g.k_odd]))


def gradient_identity_residual(v: VectorField) -> dict:
    """Pointwise Σ_{ijk} v_j v_k ∂_i v_j ∂_i v_k = Σ_i (v·∂_i v)² = ¼Σ_i (∂_i|v|²)².

    ∂_i|v|² is formed pointwise as 2 v·∂_i v, so all three sides share the
    same derivative samples and agree to round-off.
    """
    J = _jacobian(v)
    vv = v.values
    lhs = np.einsum("j...,k...,ij...,ik...->...", vv, vv, J, J)
    mid = np.sum(np.einsum("j...,ij...->i...", vv, J) ** 2, axis=0)
    d_sq = 2.0 * np.einsum("j...,ij...->i...", vv, J)
    quarter = 0.25 * np.sum(d_sq**2, axis=0)
    scale = max(float(np.max(np.abs(lhs))), np.finfo(float).tiny)
    return {
        "lhs_vs_mid": float(np.max(np.abs(lhs - mid)) / scale),
        "mid_vs_quarter": float(np.max(np.abs(mid - quarter)) / scale),
    }


def weighted_lp_terms(state: StateV, p: float, params: PhysParams) -> dict:
    """Integrals of the weighted L^p balance at one state."""
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    g = state.grid
    rho = state.rho.values
    vv = state.v.values
    J = _jacobian(state.v)
    speed = np.sqrt(np.sum(vv**2, axis=0))
    w2 = speed ** (p - 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        w4 = np.where(speed > 0, speed ** (p - 4), 0.0) if p < 4 else speed ** (p - 4)
    grad2 = np.sum(J**2, axis=(0, 1))
    cross = np.sum(np.einsum("j...,ij...->i...", vv, J) ** 2, axis=0)
    gradP = _grad(g, params.pressure.P(rho))
    return {
        "energy": _integral(g, rho * speed**p) / p,
        "dissipation_grad": params.mu_bar * _integral(g, rho * w2 * grad2),
        "dissipation_cross": params.mu_bar * (p - 2) * _integral(g, rho * w4 * cross),
        "pressure": _integral(g, w2 * np.sum(vv * gradP, axis=0)),
    }


def _time_derivative(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    # centered differences inside, one-sided at the ends
    return np.gradient(values, times, edge_order=2)


def weighted_lp_energy(trajectory, p: float, params: PhysParams) -> dict:
    """Balance of the weighted L^p identity along a sequence of StateV.

    Returns the time derivative of (1/p)∫ρ|v|^p (``lhs_rate``), the other
    three terms, the residual of their sum and its maximum relative to the
    largest term.  A single state yields only the terms.
    """
    if isinstance(trajectory, StateV):
        return {"rhs_terms": weighted_lp_terms(trajectory, p, params), "lhs_rate": None, "residual": None}
    states = list(getattr(trajectory, "snapshots", trajectory))
    if len(states) < 3:
        raise ValueError("need at least three snapshots for time derivatives")
    times = np.array([s.t for s in states])
    rows = [weighted_lp_terms(s, p, params) for s in states]
    energy = np.array([r["energy"] for r in rows])
    rate = _time_derivative(times, energy)
    other = {k: np.array([r[k] for r in rows]) for k in ("dissipation_grad", "dissipation_cross", "pressure")}
    residual = rate + other["dissipation_grad"] + other["dissipation_cross"] + other["pressure"]
    scale = np.max(np.abs(np.stack([rate] + list(other.values()))))
    # interior points use the centered stencil; report them separately
    inner = slice(1, -1)
    rel = float(np.max(np.abs(residual[inner])) / scale) if scale > 0 else 0.0
    return {
        "times": times,
        "lhs_rate": rate,
        "rhs_terms": other,
        "residual": residual,
        "max_relative_residual": rel,
        "scale": float(scale),
    }


def integrability_gain(trajectory, p_list: Sequence[float]) -> dict:
    """sup over snapshots of ‖ρ^{1/p} v‖_{L^p} for each p."""
    states = list(getattr(trajectory, "snapshots", trajectory))
    out = {}
    for p in p_list:
        best = 0.0
        for s in states:
            g = s.grid
            speed = np.sqrt(np.sum(s.v.values**2, axis=0))
            val = _integral(g, s.rho.values * speed**p) ** (1.0 / p)
            best = max(best, val)
        out[float(p)] = best
    return out


# ---------------------------------------------------------------------------
# regularity transfer through the density heat equation


def regularity_transfer_check(trajectory, p: float, part: DyadicPartition | None = None) -> dict:
    """Empirical constant in the heat-equation bound for q′ = ρ − 1.

    C = ‖q′‖_{L̃^∞(Ḃ¹_{p,∞})} / (‖q′₀‖_{Ḃ¹_{p,∞}} + ‖ρv‖_{L̃^∞(Ḃ⁰_{p,∞})}).
    """
    states = list(getattr(trajectory, "snapshots", trajectory))
    g = states[0].grid
    part = part or build_partition(g)
    times = np.array([s.t for s in states])
    qtraj = [(s.t, s.q_prime) for s in states]
    mtraj = [(s.t, s.momentum) for s in states]
    _, levels, tq = block_norm_series(qtraj, part, p, True)
    _, _, tm = block_norm_series(mtraj, part, p, True)
    spec1 = ChemLernerSpec(BesovSpec(1.0, p, np.inf), np.inf)
    spec0 = ChemLernerSpec(BesovSpec(0.0, p, np.inf), np.inf)
    lhs = chemin_lerner_from_blocks(times, tq, levels, spec1)
    data = float(np.max(2.0 ** np.asarray(levels, dtype=float) * tq[0]))
    src = chemin_lerner_from_blocks(times, tm, levels, spec0)
    rhs = data + src
    return {"lhs": lhs, "data": data, "source": src, "C": lhs / rhs if rhs > 0 else 0.0}


def rescaling_family(grid: Grid, rng: np.random.Generator, lambdas: Sequence[float], bumps: int = 6, width: float | None = None):
    """Copies f(λ(x − x_c)) of one random sum of Gaussians, centered in the box.

    The base profile is evaluated in closed form at every λ, so each member is
    an exact dilation (up to the negligible periodic tails).
    """
    L = grid.length
    w0 = width if width is not None else L / 12
    centers = rng.uniform(-w0, w0, size=(bumps, grid.dim))
    widths = w0 * rng.uniform(0.5, 1.0, size=bumps)
    amps = rng.uniform(0.5, 1.0, size=bumps) * rng.choice([-1.0, 1.0], size=bumps)
    xs = np.meshgrid(*[np.arange(grid.n) * grid.dx - L / 2] * grid.dim, indexing="ij")
    out = []
    for lam in lambdas:
        vals = np.zeros(grid.shape)
        for c, w, a in zip(centers, widths, amps):
            r2 = sum((lam * x - cc) ** 2 for x, cc in zip(xs, c))
            vals += a * np.exp(-r2 / (2 * w * w))
        out.append(Field(grid, vals))
    return out


def interpolation_fit(fields: Sequence[Field], p: float, part: DyadicPartition | None = None) -> dict:
    """Fit α in ‖f‖_{L^∞} ≤ C ‖f‖^{1−α}_{Ḃ¹_{p,∞}} ‖f‖^α_{L²} over a family.

    Least squares on ln(‖f‖_∞/‖f‖_2) = ln C + (1−α) ln(‖f‖_{Ḃ¹}/‖f‖_2); C is
    then the smallest constant valid for every member.
    """
    g = fields[0].grid
    part = part or build_partition(g)
    spec = BesovSpec(1.0, p, np.inf, homogeneous=True)
    rows = []
    for f in fields:
        linf = float(np.max(np.abs(f.values)))
        l2 = math.sqrt(_integral(g, f.values**2))
        b = besov_norm(f, spec, part)
        rows.append((linf, b, l2))
    arr = np.array(rows)
    x = np.log(arr[:, 1] / arr[:, 2])
    y = np.log(arr[:, 0] / arr[:, 2])
    slope, intercept = np.polyfit(x, y, 1)
    alpha = 1.0 - slope
    ratios = arr[:, 0] / (arr[:, 1] ** (1 - alpha) * arr[:, 2] ** alpha)
    return {
        "alpha": float(alpha),
        "C": float(np.max(ratios)),
        "spread": float(np.max(ratios) / np.min(ratios)),
        "rows": [{"linf": r[0], "besov": r[1], "l2": r[2]} for r in rows],
    }


# ---------------------------------------------------------------------------
# Orlicz potential


def orlicz_equivalence(rho: Field, gamma: float, rho_ref: float = 1.0, delta: float = 0.5, a: float = 1.0) -> dict:
    """Ratios of Π(ρ) − Π(ρ̄) to |ρ − ρ̄|² (near) or |ρ − ρ̄|^γ (far).

    Near means |ρ − ρ̄| ≤ δρ̄.  γ = 1 uses the linear law with K = a.
    Returns the empirical ν (smallest ratio) and C (largest ratio).
    """
    if gamma < 1:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    law = PressureLaw("linear", K=a) if gamma == 1 else PressureLaw("gamma", a=a, gamma=gamma)
    r = rho.values
    j = law.potential(r, rho_ref)
    dev = np.abs(r - rho_ref)
    near = dev <= delta * rho_ref
    comp = np.where(near, dev**2, dev**gamma)
    nz = dev > 0
    if not np.any(nz):
        return {"nu": 0.0, "C": 0.0, "delta": delta, "potential_integral": 0.0, "points": 0}
    ratio = j[nz] / comp[nz]
    out = {
        "nu": float(np.min(ratio)),
        "C": float(np.max(ratio)),
        "delta": delta,
        "potential_integral": _integral(rho.grid, j),
        "points": int(np.sum(nz)),
    }
    for name, sel in (("near", near & nz), ("far", ~near & nz)):
        if np.any(sel):
            rr = j[sel] / comp[sel]
            out[f"nu_{name}"], out[f"C_{name}"] = float(np.min(rr)), float(np.max(rr))
    return out
