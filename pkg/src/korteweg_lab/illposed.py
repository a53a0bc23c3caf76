"""Lacunary data families and the norm growth they drive.

Member n carries a potential velocity

    Qu₀ⁿ = Σ_{l=l₀}^{n} (2^{−l(N/2−1)}/l) ∇ψ_l

where ψ_l is a wave packet whose Fourier support lies in the plateau
[4/3, 3/2]·2^l of the dyadic profile, so it belongs to exactly one block, and
‖∇ψ_l‖_{L²} = 1.  The B^{N/2−1}_{2,r} ladder then reads (1/l)_l: bounded for
r > 1, harmonic (divergent) for r = 1.  All packets peak at one point x₀ with
div Qu₀ⁿ(x₀) < 0, so the shells compress the fluid together.

q₀ and Pu₀ are small, fixed and smooth (Pu₀ vanishes in one dimension).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .errors import ConfigurationError, StepFailure, VacuumError
from .linear import LinearCoeffs, LinearPropagator
from .littlewood_paley import BesovSpec, DyadicPartition, besov_norm, build_partition
from .solver import PhysParams, State, Stepper15
from .spectral import Field, Grid, VectorField, project_P

__all__ = [
    "IllposedFamily",
    "shell_packet",
    "build_family",
    "t_n",
    "measure_linear_growth",
    "measure_density_growth",
]

PLATEAU = (4.0 / 3.0, 1.5)


def shell_packet(grid: Grid, l: int, x0) -> np.ndarray:
    """Transformed ∇ψ_l, normalized to unit L², for a packet centered at x0.

    ψ_l = Σ cos(ξ·(x − x0)) over the grid wavevectors with |ξ| in the plateau
    band of level l; then Δψ_l(x0) < 0.
    """
    r = grid.kmag / 2.0**l
    band = (r >= PLATEAU[0]) & (r <= PLATEAU[1])
    # drop Nyquist rows: odd derivatives vanish there
    for m in grid.integer_wavenumbers:
        band &= np.abs(m) < grid.n // 2
    if not np.any(band):
        raise ConfigurationError(f"level {l} has no grid modes in its plateau band")
    phase = sum(k * c for k, c in zip(grid.k, np.atleast_1d(x0)))
    coef = np.where(band, np.exp(-1j * phase), 0.0)
    gh = np.stack([1j * k * coef for k in grid.k_odd])
    norm = grid.l2_hat(gh)
    return gh / norm


@dataclass(eq=False)
class IllposedFamily:
    n_max: int
    r: float
    shells: list
    amplitudes: list
    seed: int
    grid: Grid
    x0: tuple
    q0: Field = field(repr=False)
    u0: VectorField = field(repr=False)
    qu0: VectorField = field(repr=False)
    norms: dict = field(default_factory=dict)

    @property
    def data(self) -> tuple[Field, VectorField]:
        return self.q0, self.u0

    def to_dict(self) -> dict:
        return {
            "n_max": self.n_max,
            "r": self.r,
            "shells": list(self.shells),
            "amplitudes": [float(a) for a in self.amplitudes],
            "seed": self.seed,
            "x0": [float(x) for x in self.x0],
            "grid": self.grid.to_dict(),
            "norms": self.norms,
        }


def _smooth_fields(grid: Grid, rng: np.random.Generator, q_amp: float, p_amp: float):
    xs = grid.coords()
    ph = rng.uniform(0, 2 * np.pi, size=(grid.dim, 2))
    k0 = grid.k0
    q = q_amp * sum(np.cos(k0 * x + p[0]) for x, p in zip(xs, ph)) / grid.dim
    q = np.broadcast_to(q, grid.shape)
    if grid.dim == 1:
        pu = np.zeros((1,) + grid.shape)
    else:
        comps = [np.broadcast_to(np.sin(k0 * xs[(i + 1) % grid.dim] + ph[i, 1]), grid.shape) for i in range(grid.dim)]
        pu = project_P(VectorField(grid, p_amp * np.stack(comps))).values
    return Field(grid, q), pu


def build_family(
    n: int,
    r: float,
    grid: Grid,
    part: DyadicPartition | None = None,
    seed: int = 0,
    first_shell: int = 3,
    q_amp: float = 1e-2,
    p_amp: float = 1e-2,
) -> IllposedFamily:
    """Member n of the lacunary family (shells ``first_shell..n``).

    The two norm invariants of Qu₀ⁿ are computed on the grid and checked:
    the B^{N/2−1}_{2,r} norm equals (Σ l^{−r})^{1/r} and the B^{N/2−1}_{2,1}
    norm equals Σ 1/l, both to 1e-9 relative.
    """
    part = part or build_partition(grid)
    if not r > 1:
        raise ConfigurationError(f"r must exceed 1, got {r}")
    if n < first_shell:
        raise ConfigurationError(f"n={n} is below the first shell {first_shell}")
    top = part.j_max - 1
    if n > top:
        raise ConfigurationError(f"n={n} exceeds the highest usable shell {top} on this grid")
    band_max = PLATEAU[1] * 2.0**n
    if 3 * band_max / grid.k0 >= grid.n:
        raise ConfigurationError(f"shell {n} is not inside the dealiased band of n={grid.n}")
    rng = np.random.default_rng(seed)
    x0 = tuple(rng.uniform(0, grid.length, size=grid.dim))
    N = grid.dim
    shells = list(range(first_shell, n + 1))
    amps = [2.0 ** (-l * (N / 2 - 1)) / l for l in shells]
    qh = sum(a * shell_packet(grid, l, x0) for a, l in zip(amps, shells))
    qu = VectorField(grid, grid.ifft(qh))
    q0, pu = _smooth_fields(grid, rng, q_amp, p_amp)
    u0 = VectorField(grid, qu.values + pu)

    s = N / 2 - 1
    b_r = besov_norm(qu, BesovSpec(s, 2.0, r, homogeneous=False), part)
    b_1 = besov_norm(qu, BesovSpec(s, 2.0, 1.0, homogeneous=False), part)
    pred_r = sum(l ** (-r) for l in shells) ** (1 / r)
    pred_1 = sum(1.0 / l for l in shells)
    bound_r = sum(l ** (-r) for l in range(first_shell, 100000)) ** (1 / r)
    norms = {
        "B2r": b_r,
        "B21": b_1,
        "B2r_predicted": pred_r,
        "B21_predicted": pred_1,
        "B2r_uniform_bound": bound_r,
    }
    if abs(b_r - pred_r) > 1e-9 * pred_r or abs(b_1 - pred_1) > 1e-9 * pred_1:
        raise RuntimeError(f"family norms off the lacunary ladder: {norms}")
    return IllposedFamily(n, float(r), shells, amps, seed, grid, x0, q0, u0, qu, norms)


def t_n(n: int, rule: str | Callable = "1/n") -> float:
    if callable(rule):
        return float(rule(n))
    if rule == "1/n":
        return 1.0 / n
    if rule == "2^-n":
        return 2.0**-n
    raise ValueError(f"unknown t_n rule {rule!r}")


def _time_grid(tn: float, top_shell: int, n_times: int) -> np.ndarray:
    # the fastest shell decays on the scale 4^-l; start three decades below it
    t_min = min(tn, 4.0**-top_shell) * 1e-3
    return np.concatenate([[0.0], np.geomspace(t_min, tn, n_times)])


def measure_linear_growth(
    families: Sequence[IllposedFamily],
    t_n_rule: str | Callable = "1/n",
    coeffs: LinearCoeffs | None = None,
    n_times: int = 300,
) -> list[dict]:
    """Rows (n, t_n, ‖div u_L‖_{L¹_{t_n}(L^∞)}, sup_t ‖q_L‖_{L^∞}) per member.

    The linear flow includes the pressure term (d > 0).  Time integrals use the
    trapezoid rule on a geometric time grid resolving the fastest shell.
    """
    coeffs = coeffs or PhysParams().linear_coeffs()
    rows = []
    props: dict = {}
    for fam in families:
        g = fam.grid
        prop = props.get(g)
        if prop is None:
            prop = props[g] = LinearPropagator(g, coeffs)
        tn = t_n(fam.n_max, t_n_rule)
        ts = _time_grid(tn, fam.n_max, n_times)
        qh0, uh0 = g.fft(fam.q0.values), g.fft(fam.u0.values)
        div_inf = np.empty(ts.size)
        q_inf = np.empty(ts.size)
        for i, t in enumerate(ts):
            qh, uh = prop.apply(qh0, uh0, t)
            div = g.ifft(sum(1j * k * uh[j] for j, k in enumerate(g.k_odd)))
            div_inf[i] = np.max(np.abs(div))
            q_inf[i] = np.max(np.abs(g.ifft(qh)))
        rows.append(
            {
                "n": fam.n_max,
                "t_n": tn,
                "div_L1_Linf": float(trapezoid(div_inf, ts)),
                "q_linf_max": float(np.max(q_inf)),
            }
        )
    return rows


def measure_density_growth(
    family: IllposedFamily,
    T: float,
    params: PhysParams | None = None,
    cfl: float = 0.4,
    growth: float = 1.2,
    max_steps: int = 200000,
) -> dict:
    """Run the nonlinear (q, u) solver on one member up to time T.

    The step adapts to the state: h ≤ cfl·Δx / (max|u| + (μ̄+|λ̄|)max|∇q|)
    and h ≤ cfl / ((a+b)k²) with k² = ‖∇div u‖²/‖div u‖² the dominant squared
    wavenumber of div u, so the decay of each shell is resolved; h grows by at
    most ``growth`` per step.  Along the run the pointwise
    integrals −∫div u and −∫u·∇q are accumulated by the trapezoid rule; the
    row records the running max of ‖q‖_{L^∞} and the largest |value| of each
    integral, plus the closure residual max|q − q₀ − ∫div − ∫adv| that
    measures the quadrature error.  Vacuum or NaN ends the member early and
    is recorded.
    """
    params = params or PhysParams()
    g = family.grid
    st = Stepper15(g, params)
    qh, uh = st.to_hat(State(*family.data))

    coeffs = st.coeffs
    diffusion = coeffs.a + coeffs.b

    def transport(qh, uh):
        u = g.ifft(uh)
        gq = g.ifft(np.stack([1j * k * qh for k in g.k_odd]))
        divh = sum(1j * k * uh[j] for j, k in enumerate(g.k_odd))
        e_div = g.l2_hat(divh)
        e_grad = g.l2_hat(np.stack([1j * k * divh for k in g.k_odd]))
        k2 = (e_grad / e_div) ** 2 if e_div > 0 else 0.0
        return u, gq, g.ifft(divh), k2

    q_init = g.ifft(qh)
    u, gq, div, k2 = transport(qh, uh)
    adv = np.sum(u * gq, axis=0)
    i_div = np.zeros(g.shape)
    i_adv = np.zeros(g.shape)
    q_max = float(np.max(np.abs(g.ifft(qh))))
    div_max = adv_max = 0.0
    t = 0.0
    h_prev = None
    steps = 0
    status = "completed"
    slow = params.mu_bar + abs(params.lambda_bar)
    while t < T * (1 - 1e-12):
        speed = float(np.max(np.sqrt(np.sum(u**2, axis=0)))) + slow * float(np.max(np.sqrt(np.sum(gq**2, axis=0))))
        h = cfl * g.dx / speed if speed > 0 else T
        if k2 > 0:
            h = min(h, cfl / (diffusion * k2))
        if h_prev is not None:
            h = min(h, growth * h_prev)
        h = min(h, T - t)
        try:
            qh, uh = st.step(qh, uh, h)
        except VacuumError:
            status = "vacuum"
            break
        except StepFailure:
            status = "nan"
            break
        u_new, gq_new, div_new, k2 = transport(qh, uh)
        adv_new = np.sum(u_new * gq_new, axis=0)
        i_div -= 0.5 * h * (div + div_new)
        i_adv -= 0.5 * h * (adv + adv_new)
        u, gq, div, adv = u_new, gq_new, div_new, adv_new
        t += h
        h_prev = h
        steps += 1
        q_max = max(q_max, float(np.max(np.abs(g.ifft(qh)))))
        div_max = max(div_max, float(np.max(np.abs(i_div))))
        adv_max = max(adv_max, float(np.max(np.abs(i_adv))))
        if steps >= max_steps:
            status = "max_steps"
            break
    closure = float(np.max(np.abs(g.ifft(qh) - q_init - i_div - i_adv)))
    return {
        "n": family.n_max,
        "t_n": T,
        "t_reached": t,
        "q_linf_max": q_max,
        "div_integral_max": div_max,
        "adv_integral_max": adv_max,
        "closure": closure,
        "steps": steps,
        "termination": status,
    }
