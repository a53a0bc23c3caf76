"""Nonlinear pseudo-spectral solvers for the capillary system.

Two formulations are integrated.

``(q, u)`` with q = ln ρ::

    ∂_t q + u·∇q + div u = 0
    ∂_t u + u·∇u − aΔu − b∇div u − μ̄D(u)∇q − λ̄ div u ∇q + ∇F(ρ)
        = c(∇Δq + ½∇|∇q|²)

with D(u) = ∇u + ᵗ∇u.  Dividing the momentum equation with μ(ρ) = μ̄ρ,
λ(ρ) = λ̄ρ and κ(ρ) = κ/ρ by ρ gives a = μ̄, b = μ̄ + λ̄, c = κ ("derived"
coefficients, the default).  The "display" form keeps unit Laplacian and unit
capillarity and no ∇div term; its coefficients can be overridden.

``(ρ, v)`` with v = u + (κ/μ̄)∇ln ρ and κ = μ̄²::

    ∂_t ρ − νΔρ = −div(ρv),                  ν = κ/μ̄
    ∂_t v + u·∇v − μ̄Δv − μ̄∇ln ρ·∇v + ∇F(ρ) = 0

Both are advanced by a second-order integrating-factor Runge-Kutta scheme
(Heun in the integrating-factor variables).  The stiff linear part is exact:
the full (q, u) generator from :mod:`korteweg_lab.linear` for the first
system and the heat semigroup for the second.  Products are dealiased with
the 2/3 rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import ConfigurationError, StepFailure, VacuumError
from .linear import LinearCoeffs, LinearPropagator
from .littlewood_paley import DyadicPartition, low_cutoff
from .spectral import Field, Grid, VectorField, gradient

VACUUM_FLOOR = 1e-8
CFL = 0.4

__all__ = [
    "VACUUM_FLOOR",
    "PressureLaw",
    "PhysParams",
    "State",
    "StateV",
    "capillary_force",
    "laplacian_identity_residual",
    "pressure_gradient",
    "rhs_system_1_5",
    "rhs_system_1_7",
    "Stepper15",
    "Stepper17",
    "step_imex",
    "stable_dt",
    "Run",
    "integrate",
    "effective_velocity",
    "inverse_effective_velocity",
    "smooth_data",
    "scale_state",
]


@dataclass(frozen=True)
class PressureLaw:
    """P(ρ) = Kρ (``linear``) or aρ^γ (``gamma``)."""

    kind: str = "linear"
    K: float = 1.0
    a: float = 1.0
    gamma: float = 2.0

    def __post_init__(self) -> None:
        if self.kind not in ("linear", "gamma"):
            raise ConfigurationError(f"unknown pressure law {self.kind!r}")
        if self.kind == "linear" and not self.K > 0:
            raise ConfigurationError(f"linear pressure needs K > 0, got {self.K}")
        if self.kind == "gamma" and not (self.a > 0 and self.gamma > 1):
            raise ConfigurationError(f"gamma law needs a > 0 and gamma > 1, got a={self.a}, gamma={self.gamma}")

    def P(self, rho):
        rho = np.asarray(rho, dtype=float)
        return self.K * rho if self.kind == "linear" else self.a * rho**self.gamma

    def dP(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.kind == "linear":
            return np.full_like(rho, self.K)
        return self.a * self.gamma * rho ** (self.gamma - 1)

    def enthalpy(self, rho):
        """F with F′(ρ) = P′(ρ)/ρ and F(1) = 0, so that ∇F(ρ) = (1/ρ)∇P(ρ)."""
        rho = np.asarray(rho, dtype=float)
        if self.kind == "linear":
            return self.K * np.log(rho)
        g = self.gamma
        return self.a * g / (g - 1) * np.expm1((g - 1) * np.log(rho))

    def enthalpy_q(self, q):
        """F(e^q), evaluated without forming ρ."""
        q = np.asarray(q, dtype=float)
        if self.kind == "linear":
            return self.K * q
        g = self.gamma
        return self.a * g / (g - 1) * np.expm1((g - 1) * q)

    def potential(self, s, rho_ref: float = 1.0):
        """Π(s) − Π(ρ̄), normalized by sΠ′ − Π = P − P(ρ̄) and Π′(ρ̄) = 0."""
        s = np.asarray(s, dtype=float)
        rb = float(rho_ref)
        if self.kind == "linear":
            return self.K * (s * np.log(s / rb) - s + rb)
        g = self.gamma
        return self.a / (g - 1) * (s**g - rb**g - g * rb ** (g - 1) * (s - rb))

    def scaled(self, factor: float) -> "PressureLaw":
        if self.kind == "linear":
            return replace(self, K=self.K * factor)
        return replace(self, a=self.a * factor)

    def to_dict(self) -> dict:
        if self.kind == "linear":
            return {"kind": "linear", "K": self.K}
        return {"kind": "gamma", "a": self.a, "gamma": self.gamma}


@dataclass(frozen=True)
class PhysParams:
    """Physical coefficients: μ(ρ) = μ̄ρ, λ(ρ) = λ̄ρ, κ(ρ) = κ/ρ and a pressure law.

    ``form`` selects how the (q, u) momentum equation is normalized.  With
    ``"derived"`` the linear coefficients follow from the physical ones; with
    ``"display"`` they default to a = 1, b = 0, c = 1 and can be overridden via
    ``viscous`` and ``capillary``.
    """

    mu_bar: float = 1.0
    kappa: float = 1.0
    lambda_bar: float = 0.0
    pressure: PressureLaw = field(default_factory=PressureLaw)
    rho_ref: float = 1.0
    form: str = "derived"
    viscous: float | None = None
    capillary: float | None = None

    def __post_init__(self) -> None:
        if not self.mu_bar > 0:
            raise ConfigurationError(f"mu_bar must be positive, got {self.mu_bar}")
        if not self.kappa > 0:
            raise ConfigurationError(f"kappa must be positive, got {self.kappa}")
        if not self.rho_ref > 0:
            raise ConfigurationError(f"rho_ref must be positive, got {self.rho_ref}")
        if self.form not in ("derived", "display"):
            raise ConfigurationError(f"form must be 'derived' or 'display', got {self.form!r}")
        if self.form == "derived" and (self.viscous is not None or self.capillary is not None):
            raise ConfigurationError("viscous/capillary overrides only apply to the display form")
        self.check_dim(1)

    def check_dim(self, dim: int) -> None:
        if 2 * self.mu_bar + dim * self.lambda_bar < 0:
            raise ConfigurationError(
                f"need 2*mu_bar + {dim}*lambda_bar >= 0, got mu_bar={self.mu_bar}, lambda_bar={self.lambda_bar}"
            )

    @property
    def nu(self) -> float:
        """Diffusivity κ/μ̄ of the density in the effective-velocity system."""
        return self.kappa / self.mu_bar

    def effective_ok(self, rtol: float = 1e-12) -> bool:
        return abs(self.kappa - self.mu_bar**2) <= rtol * max(self.kappa, self.mu_bar**2)

    def linear_coeffs(self) -> LinearCoeffs:
        d = float(self.pressure.dP(self.rho_ref))
        if self.form == "derived":
            return LinearCoeffs(self.mu_bar, self.mu_bar + self.lambda_bar, self.kappa, d)
        a = 1.0 if self.viscous is None else self.viscous
        c = 1.0 if self.capillary is None else self.capillary
        return LinearCoeffs(a, 0.0, c, d)

    def with_pressure_scaled(self, factor: float) -> "PhysParams":
        return replace(self, pressure=self.pressure.scaled(factor))

    def to_dict(self) -> dict:
        c = self.linear_coeffs()
        return {
            "mu_bar": self.mu_bar,
            "lambda_bar": self.lambda_bar,
            "kappa": self.kappa,
            "pressure": self.pressure.to_dict(),
            "rho_ref": self.rho_ref,
            "form": self.form,
            "linear": {"a": c.a, "b": c.b, "c": c.c, "d": c.d},
        }


@dataclass(frozen=True, eq=False)
class State:
    q: Field
    u: VectorField
    t: float = 0.0

    def __post_init__(self) -> None:
        if self.q.grid != self.u.grid:
            raise ValueError("q and u live on different grids")

    @property
    def grid(self) -> Grid:
        return self.q.grid

    @property
    def rho(self) -> np.ndarray:
        return np.exp(self.q.values)


@dataclass(frozen=True, eq=False)
class StateV:
    rho: Field
    v: VectorField
    t: float = 0.0

    def __post_init__(self) -> None:
        if self.rho.grid != self.v.grid:
            raise ValueError("rho and v live on different grids")
        if not np.all(self.rho.values > 0):
            raise VacuumError("density must be positive", float(np.min(self.rho.values)), None)

    @property
    def grid(self) -> Grid:
        return self.rho.grid

    @property
    def momentum(self) -> VectorField:
        return VectorField(self.grid, self.rho.values * self.v.values)

    @property
    def q_prime(self) -> Field:
        return Field(self.grid, self.rho.values - 1.0)


def _check_floor(rho_min: float, state=None, floor: float = VACUUM_FLOOR) -> None:
    if not rho_min >= floor:
        raise VacuumError(f"min density {rho_min:.3e} below floor {floor:.0e}", float(rho_min), state)


def _grad_hat(g: Grid, fh: np.ndarray) -> np.ndarray:
    """Stack of i k_j f̂ along a new leading axis (f̂ may carry leading axes)."""
    return np.stack([1j * k * fh for k in g.k_odd])


# ---------------------------------------------------------------------------
# capillary tensor


def capillary_force(rho: Field, form: str = "log_form", kappa: float = 1.0) -> VectorField:
    """div K for κ(ρ) = κ/ρ in one of three algebraic forms.

    ``general`` evaluates the tensor formula with κ(ρ) and κ′(ρ) literally,
    ``log_form`` is κρ(∇Δln ρ + ½∇|∇ln ρ|²) and ``divergence_form`` is
    κ div(ρ∇∇ln ρ).  No dealiasing: these are accuracy oracles.
    """
    g = rho.grid
    r = rho.values
    _check_floor(float(np.min(r)))
    if form == "general":
        kap = kappa / r
        dkap = -kappa / r**2
        rh = g.fft(r)
        grad = g.ifft(_grad_hat(g, rh))
        lap = g.ifft(-g.k2 * rh)
        s = r * kap * lap + 0.5 * (kap + r * dkap) * np.sum(grad**2, axis=0)
        out = g.ifft(_grad_hat(g, g.fft(s)))
        for i in range(g.dim):
            Th = g.fft(kap * grad[i] * grad)
            out[i] -= g.ifft(sum(1j * g.k_odd[j] * Th[j] for j in range(g.dim)))
    elif form == "log_form":
        qh = g.fft(np.log(r))
        grad_lap = g.ifft(_grad_hat(g, -g.k2 * qh))
        gq = g.ifft(_grad_hat(g, qh))
        half = g.ifft(_grad_hat(g, g.fft(0.5 * np.sum(gq**2, axis=0))))
        out = kappa * r * (grad_lap + half)
    elif form == "divergence_form":
        qh = g.fft(np.log(r))
        hess_h = np.stack([_grad_hat(g, 1j * k * qh) for k in g.k_odd])  # [i, j]
        hess = g.ifft(hess_h)
        out = np.empty((g.dim,) + g.shape)
        for i in range(g.dim):
            Th = g.fft(r * hess[i])
            out[i] = kappa * g.ifft(sum(1j * g.k_odd[j] * Th[j] for j in range(g.dim)))
    else:
        raise ValueError(f"unknown capillary form {form!r}")
    return VectorField(g, out)


def laplacian_identity_residual(rho: Field) -> float:
    """max |Δρ − ρΔln ρ − |∇ρ|²/ρ|, relative to max |Δρ|."""
    g = rho.grid
    r = rho.values
    _check_floor(float(np.min(r)))
    rh = g.fft(r)
    lap = g.ifft(-g.k2 * rh)
    laplog = g.ifft(-g.k2 * g.fft(np.log(r)))
    grad = g.ifft(_grad_hat(g, rh))
    res = lap - r * laplog - np.sum(grad**2, axis=0) / r
    scale = max(float(np.max(np.abs(lap))), np.finfo(float).tiny)
    return float(np.max(np.abs(res)) / scale)


def pressure_gradient(q: Field, params: PhysParams) -> VectorField:
    """∇F(ρ) as a function of q = ln ρ (so K∇q for the linear law)."""
    g = q.grid
    return VectorField(g, g.ifft(_grad_hat(g, g.fft(params.pressure.enthalpy_q(q.values)))))


# ---------------------------------------------------------------------------
# (q, u) system


class Stepper15:
    """Integrating-factor RK2 for the (q, u) system on a fixed grid."""

    def __init__(self, grid: Grid, params: PhysParams, floor: float = VACUUM_FLOOR):
        params.check_dim(grid.dim)
        self.grid = grid
        self.params = params
        self.coeffs = params.linear_coeffs()
        self.prop = LinearPropagator(grid, self.coeffs)
        self.mask = grid.dealias
        self.ln_floor = math.log(floor)
        self.floor = floor

    def linear(self, qh, uh):
        g, c = self.grid, self.coeffs
        ik = _grad_hat(g, np.ones(g.spectral_shape))
        divh = np.sum(ik * uh, axis=0)
        dq = -divh
        du = -c.a * g.k2 * uh + c.b * ik * divh + ik * (-c.c * g.k2 - c.d) * qh
        return dq, du

    def nonlinear(self, qh, uh):
        g, p = self.grid, self.params
        dim = g.dim
        u = g.ifft(uh)
        gq = g.ifft(_grad_hat(g, qh))
        gu = g.ifft(_grad_hat(g, uh))  # gu[j, i] = ∂_j u_i
        q = g.ifft(qh) if p.pressure.kind != "linear" else None
        adv_q = -np.sum(u * gq, axis=0)
        divu = sum(gu[i, i] for i in range(dim))
        vec = np.empty((dim,) + g.shape)
        for i in range(dim):
            conv = -sum(u[j] * gu[j, i] for j in range(dim))
            strain = sum((gu[j, i] + gu[i, j]) * gq[j] for j in range(dim))
            vec[i] = conv + p.mu_bar * strain + p.lambda_bar * divu * gq[i]
        scal = 0.5 * self.coeffs.c * np.sum(gq**2, axis=0)
        if p.pressure.kind != "linear":
            scal = scal - (p.pressure.enthalpy_q(q) - self.coeffs.d * q)
        nq = self.mask * g.fft(adv_q)
        nu = self.mask * (g.fft(vec) + _grad_hat(g, g.fft(scal)))
        if not (np.all(np.isfinite(nq)) and np.all(np.isfinite(nu))):
            raise StepFailure("non-finite nonlinear term")
        return nq, nu

    def check(self, qh) -> None:
        qmin = float(np.min(self.grid.ifft(qh)))
        if not np.isfinite(qmin):
            raise StepFailure("non-finite log-density")
        if qmin < self.ln_floor:
            raise VacuumError(f"min density {math.exp(qmin):.3e} below floor", math.exp(qmin))

    def step(self, qh, uh, h: float):
        nq0, nu0 = self.nonlinear(qh, uh)
        aq, au = self.prop.apply(qh + h * nq0, uh + h * nu0, h)
        nq1, nu1 = self.nonlinear(aq, au)
        bq, bu = self.prop.apply(qh + 0.5 * h * nq0, uh + 0.5 * h * nu0, h)
        qn, un = bq + 0.5 * h * nq1, bu + 0.5 * h * nu1
        if not (np.all(np.isfinite(qn)) and np.all(np.isfinite(un))):
            raise StepFailure("non-finite state after step")
        self.check(qn)
        return qn, un

    def to_hat(self, state: State):
        return self.grid.fft(state.q.values), self.grid.fft(state.u.values)

    def from_hat(self, y, t: float) -> State:
        g = self.grid
        return State(Field(g, g.ifft(y[0])), VectorField(g, g.ifft(y[1])), t)


def rhs_system_1_5(state: State, params: PhysParams) -> tuple[Field, VectorField]:
    """Time derivative (∂_t q, ∂_t u) of the (q, u) system at ``state``."""
    st = _stepper(Stepper15, state.grid, params)
    qh, uh = st.to_hat(state)
    lq, lu = st.linear(qh, uh)
    nq, nu = st.nonlinear(qh, uh)
    g = state.grid
    return Field(g, g.ifft(lq + nq)), VectorField(g, g.ifft(lu + nu))


# ---------------------------------------------------------------------------
# (ρ, v) system


class Stepper17:
    """Integrating-factor RK2 for the effective-velocity system."""

    def __init__(self, grid: Grid, params: PhysParams, floor: float = VACUUM_FLOOR):
        if not params.effective_ok():
            raise ConfigurationError(
                f"the effective-velocity system needs kappa = mu_bar**2, got kappa={params.kappa}, mu_bar={params.mu_bar}"
            )
        params.check_dim(grid.dim)
        self.grid = grid
        self.params = params
        self.mask = grid.dealias
        self.floor = floor
        self._rate_rho = -params.nu * grid.k2
        self._rate_v = -params.mu_bar * grid.k2
        self._cache: dict[float, tuple] = {}

    def factors(self, h: float):
        hit = self._cache.get(h)
        if hit is None:
            hit = (np.exp(self._rate_rho * h), np.exp(self._rate_v * h))
            if len(self._cache) > 8:
                self._cache.clear()
            self._cache[h] = hit
        return hit

    def linear(self, rh, vh):
        return self._rate_rho * rh, self._rate_v * vh

    def nonlinear(self, rh, vh):
        g, p = self.grid, self.params
        dim = g.dim
        rho = g.ifft(rh)
        rmin = float(np.min(rho))
        if not np.isfinite(rmin):
            raise StepFailure("non-finite density")
        _check_floor(rmin, floor=self.floor)
        v = g.ifft(vh)
        w = g.ifft(_grad_hat(g, rh)) / rho  # ∇ln ρ
        gv = g.ifft(_grad_hat(g, vh))  # gv[j, i] = ∂_j v_i
        coef = p.mu_bar + p.nu
        vec = np.empty((dim,) + g.shape)
        for i in range(dim):
            vec[i] = sum((coef * w[j] - v[j]) * gv[j, i] for j in range(dim))
        flux_h = g.fft(rho * v)
        nr = self.mask * -sum(1j * g.k_odd[j] * flux_h[j] for j in range(dim))
        nv = self.mask * (g.fft(vec) - _grad_hat(g, g.fft(p.pressure.enthalpy(rho))))
        if not (np.all(np.isfinite(nr)) and np.all(np.isfinite(nv))):
            raise StepFailure("non-finite nonlinear term")
        return nr, nv

    def step(self, rh, vh, h: float):
        er, ev = self.factors(float(h))
        nr0, nv0 = self.nonlinear(rh, vh)
        nr1, nv1 = self.nonlinear(er * (rh + h * nr0), ev * (vh + h * nv0))
        rn = er * (rh + 0.5 * h * nr0) + 0.5 * h * nr1
        vn = ev * (vh + 0.5 * h * nv0) + 0.5 * h * nv1
        if not (np.all(np.isfinite(rn)) and np.all(np.isfinite(vn))):
            raise StepFailure("non-finite state after step")
        rmin = float(np.min(self.grid.ifft(rn)))
        _check_floor(rmin, floor=self.floor)
        return rn, vn

    def to_hat(self, state: StateV):
        return self.grid.fft(state.rho.values), self.grid.fft(state.v.values)

    def from_hat(self, y, t: float) -> StateV:
        g = self.grid
        return StateV(Field(g, g.ifft(y[0])), VectorField(g, g.ifft(y[1])), t)


def rhs_system_1_7(state: StateV, params: PhysParams) -> tuple[Field, VectorField]:
    """Time derivative (∂_t ρ, ∂_t v) of the effective-velocity system."""
    st = _stepper(Stepper17, state.grid, params)
    rh, vh = st.to_hat(state)
    lr, lv = st.linear(rh, vh)
    nr, nv = st.nonlinear(rh, vh)
    g = state.grid
    return Field(g, g.ifft(lr + nr)), VectorField(g, g.ifft(lv + nv))


@lru_cache(maxsize=16)
def _stepper(cls, grid: Grid, params: PhysParams):
    return cls(grid, params)


def _stepper_for(state):
    return Stepper15 if isinstance(state, State) else Stepper17


def step_imex(state, dt: float, params: PhysParams):
    """One integrating-factor RK2 step of either system.

    Raises :class:`StepFailure` (non-finite values) or :class:`VacuumError`
    with ``state`` set to the input state.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    st = _stepper(_stepper_for(state), state.grid, params)
    try:
        y = st.step(*st.to_hat(state), dt)
    except (StepFailure, VacuumError) as exc:
        exc.state = state
        raise
    return st.from_hat(y, state.t + dt)


def stable_dt(state, params: PhysParams, cfl: float = CFL) -> float:
    """Step bound cfl / (advective + explicit-coupling + explicit-pressure rates).

    First-order explicit terms (transport, μ̄D(u)∇q, λ̄ div u∇q) give a Δx
    bound, the explicit capillary residual c∇|∇q|²/2 a Δx² bound and the
    explicitly treated pressure an acoustic Δx bound.  Returns ``inf`` on a
    state with no explicit dynamics.
    """
    g = state.grid
    dx = g.dx
    if isinstance(state, State):
        q = state.q
        vel = state.u.magnitude()
        gq = gradient(q).magnitude()
        rho = np.exp(q.values)
        c = params.linear_coeffs()
        r1 = (np.max(vel) + (params.mu_bar + abs(params.lambda_bar)) * np.max(gq)) / dx
        r2 = c.c * np.max(gq) / dx**2
        r3 = math.sqrt(float(np.max(np.abs(params.pressure.dP(rho) - c.d)))) / dx
    else:
        rho = state.rho.values
        vel = state.v.magnitude()
        gq = gradient(state.rho).magnitude() / rho
        r1 = (np.max(vel) + (params.mu_bar + params.nu) * np.max(gq)) / dx
        r2 = 0.0
        r3 = math.sqrt(float(np.max(params.pressure.dP(rho)))) / dx
    rate = float(r1 + r2 + r3)
    return math.inf if rate == 0 else cfl / rate


@dataclass(eq=False)
class Run:
    """Result of :func:`integrate`.

    ``termination`` is ``completed``, ``vacuum`` or ``nan``; on failure the
    last snapshot is the last state that passed the checks.
    """

    system: str
    params: PhysParams
    dt: float
    steps: int
    snapshots: list = field(default_factory=list)
    termination: str = "completed"
    message: str = ""
    rho_min: float | None = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def final(self):
        return self.snapshots[-1]


def integrate(
    state,
    params: PhysParams,
    T: float,
    dt: float | None = None,
    snapshot_every: int = 1,
    cfl: float = CFL,
    monitor: Callable | None = None,
    floor: float = VACUUM_FLOOR,
) -> Run:
    """Advance ``state`` to time ``state.t + T`` with a constant step.

    With ``dt=None`` the step is ``min(stable_dt, T/10)`` evaluated on the
    initial state; in every case the step is shrunk so that an integer number
    of steps lands on T.  ``monitor(state)`` is called on the initial state
    and after every accepted step.  Vacuum and NaN failures end the run early
    and are recorded, not raised.
    """
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    if snapshot_every < 1:
        raise ValueError("snapshot_every must be >= 1")
    if dt is None:
        dt = min(stable_dt(state, params, cfl), T / 10)
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    nsteps = max(1, math.ceil(T / dt - 1e-9))
    h = T / nsteps
    cls = _stepper_for(state)
    st = cls(state.grid, params, floor)
    system = "1.5" if cls is Stepper15 else "1.7"
    run = Run(system, params, h, nsteps, [state])
    if monitor is not None:
        monitor(state)
    y = st.to_hat(state)
    t0 = state.t
    for k in range(1, nsteps + 1):
        try:
            y_next = st.step(*y, h)
        except (VacuumError, StepFailure) as exc:
            if isinstance(exc, VacuumError):
                run.termination, run.rho_min = "vacuum", exc.rho_min
            else:
                run.termination = "nan"
            run.message = str(exc)
            t_prev = t0 + (k - 1) * h
            if run.snapshots[-1].t != t_prev:
                run.snapshots.append(st.from_hat(y, t_prev))
            break
        y = y_next
        t = t0 + k * h
        keep = k % snapshot_every == 0 or k == nsteps
        if monitor is not None or keep:
            snap = st.from_hat(y, t)
            if monitor is not None:
                monitor(snap)
            if keep:
                run.snapshots.append(snap)
    return run


# ---------------------------------------------------------------------------
# change of variables and data smoothing


def effective_velocity(state: State, params: PhysParams, floor: float = VACUUM_FLOOR) -> StateV:
    """(q, u) -> (ρ, v) with v = u + (κ/μ̄)∇q."""
    rho = np.exp(state.q.values)
    _check_floor(float(np.min(rho)), state, floor)
    g = state.grid
    v = state.u.values + params.nu * gradient(state.q).values
    return StateV(Field(g, rho), VectorField(g, v), state.t)


def inverse_effective_velocity(state: StateV, params: PhysParams, floor: float = VACUUM_FLOOR) -> State:
    """(ρ, v) -> (q, u) with q = ln ρ and u = v − (κ/μ̄)∇q."""
    _check_floor(float(np.min(state.rho.values)), state, floor)
    g = state.grid
    q = Field(g, np.log(state.rho.values))
    u = state.v.values - params.nu * gradient(q).values
    return State(q, VectorField(g, u), state.t)


def smooth_data(f, n: int, part: DyadicPartition):
    """S_n f: the low-frequency cutoff below level n (identity above the top shell)."""
    return low_cutoff(f, n, part)


def scale_state(state: State, lam: float) -> State:
    """Scaled copy (q, λu)(λ²t, λx) realized on the grid shrunk by λ.

    Samples are reused unchanged, so the map is exact on the grid.
    """
    g = state.grid
    h = Grid(g.dim, g.n, g.length / lam)
    return State(Field(h, state.q.values), VectorField(h, lam * state.u.values), state.t / lam**2)
