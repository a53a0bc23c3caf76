"""Picard iteration for the (q, u) system.

Iterate n solves the linear system with zero data and forcings built from
iterate n−1::

    q^n = q_L + q̄^n,   u^n = u_L + ū^n,   (q̄^0, ū^0) = (0, 0)

where (q_L, u_L) is the free linear evolution of the (optionally smoothed)
data.  The pressure is kept in the forcing, so the linear part has d = 0.
F is assembled from its four pieces over the q_L/q̄ and u_L/ū splitting.
Time integrals use the trapezoid Duhamel rule of
:func:`korteweg_lab.linear.solve_linear` on a uniform grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import trapezoid

from .linear import LinearPropagator
from .littlewood_paley import (
    BesovSpec,
    ChemLernerSpec,
    DyadicPartition,
    block_norms_hat,
    build_partition,
    chemin_lerner_from_blocks,
)
from .solver import PhysParams, State, smooth_data
from .spectral import Field, Grid, VectorField

__all__ = ["PicardResult", "picard_iterate", "ft_norm"]


def _grad(g: Grid, fh: np.ndarray) -> np.ndarray:
    return np.stack([1j * k * fh for k in g.k_odd])


def ft_norm(times, qh, uh, part: DyadicPartition) -> float:
    """Norm of a (q, u) trajectory in the solution space F_T.

    Sum of the Chemin-Lerner norms L̃^∞(B^{N/2}) and L̃^1(B^{N/2+2}) of q and
    L̃^∞(B^{N/2−1}) and L̃^1(B^{N/2+1}) of u, all non-homogeneous with r = ∞.
    """
    half = part.grid.dim / 2
    levels = part.levels_for(False)
    bq = block_norms_hat(qh, part, 2.0, homogeneous=False)
    bu = block_norms_hat(uh, part, 2.0, homogeneous=False, vector=True)
    total = 0.0
    for table, s0 in ((bq, half), (bu, half - 1)):
        for s, rho in ((s0, np.inf), (s0 + 2, 1.0)):
            spec = ChemLernerSpec(BesovSpec(s, 2.0, np.inf, homogeneous=False), rho)
            total += chemin_lerner_from_blocks(times, table, levels, spec)
    return float(total)


@dataclass(eq=False)
class PicardResult:
    times: np.ndarray
    finals: list  # State at T per iterate, index 0 is the free linear solution
    gaps: list  # ‖(δq^n, δu^n)‖_{F_T} for n = 1, 2, ...
    split_norms: list  # per iterate: time-L¹ grid-L² norms of the four F pieces
    status: str
    qh: np.ndarray = field(repr=False, default=None)
    uh: np.ndarray = field(repr=False, default=None)

    @property
    def ratios(self) -> list:
        out = []
        for a, b in zip(self.gaps[:-1], self.gaps[1:]):
            out.append(b / a if a > 0 else 0.0)
        return out

    @property
    def contracting(self) -> bool:
        return self.status != "non-contracting"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "iterations": len(self.finals) - 1,
            "gaps": [float(x) for x in self.gaps],
            "ratios": [float(x) for x in self.ratios],
            "split_norms": self.split_norms,
        }


class _Forcing:
    def __init__(self, grid: Grid, params: PhysParams):
        self.g = grid
        self.p = params
        self.c = params.linear_coeffs().c
        self.mask = grid.dealias

    def __call__(self, qLh, uLh, qbh, ubh):
        """(F̂, Ĝ, piece norms) at one time from the split iterate."""
        g, p = self.g, self.p
        dim = g.dim
        uL, ub = g.ifft(uLh), g.ifft(ubh)
        gqL, gqb = g.ifft(_grad(g, qLh)), g.ifft(_grad(g, qbh))
        pieces = (
            -np.sum(uL * gqL, axis=0),
            -np.sum(ub * gqL, axis=0),
            -np.sum(uL * gqb, axis=0),
            -np.sum(ub * gqb, axis=0),
        )
        F = pieces[0] + pieces[1] + pieces[2] + pieces[3]
        qh, uh = qLh + qbh, uLh + ubh
        u = uL + ub
        gq = gqL + gqb
        gu = g.ifft(_grad(g, uh))
        divu = sum(gu[i, i] for i in range(dim))
        vec = np.empty((dim,) + g.shape)
        for i in range(dim):
            conv = -sum(u[j] * gu[j, i] for j in range(dim))
            strain = sum((gu[j, i] + gu[i, j]) * gq[j] for j in range(dim))
            vec[i] = conv + p.mu_bar * strain + p.lambda_bar * divu * gq[i]
        if p.pressure.kind == "linear":
            scal = 0.5 * self.c * np.sum(gq**2, axis=0)
            Gh = g.fft(vec) + _grad(g, g.fft(scal)) - p.pressure.K * _grad(g, qh)
        else:
            scal = 0.5 * self.c * np.sum(gq**2, axis=0) - p.pressure.enthalpy_q(g.ifft(qh))
            Gh = g.fft(vec) + _grad(g, g.fft(scal))
        norms = [float(np.sqrt(np.sum(x**2) * g.cell_volume)) for x in pieces]
        return self.mask * g.fft(F), self.mask * Gh, norms


def picard_iterate(
    q0: Field,
    u0: VectorField,
    params: PhysParams,
    T: float,
    n_iters: int = 10,
    n_steps: int = 100,
    smoothing_level: int | None = None,
    part: DyadicPartition | None = None,
    growth_window: int = 3,
) -> PicardResult:
    """Run ``n_iters`` Picard iterations on [0, T] with ``n_steps`` time steps.

    ``smoothing_level`` applies S_n to the data first (None keeps the data).
    Iteration stops early with status ``non-contracting`` once the gap has
    grown over ``growth_window`` consecutive iterations; otherwise the status
    is ``completed``.
    """
    g = q0.grid
    part = part or build_partition(g)
    if smoothing_level is not None:
        q0 = smooth_data(q0, smoothing_level, part)
        u0 = smooth_data(u0, smoothing_level, part)
    coeffs = replace(params.linear_coeffs(), d=0.0)
    prop = LinearPropagator(g, coeffs)
    times = np.linspace(0.0, T, n_steps + 1)
    h = T / n_steps

    qh0, uh0 = g.fft(q0.values), g.fft(u0.values)
    qL = np.empty((n_steps + 1,) + qh0.shape, dtype=complex)
    uL = np.empty((n_steps + 1,) + uh0.shape, dtype=complex)
    qL[0], uL[0] = qh0, uh0
    for k in range(n_steps):
        qL[k + 1], uL[k + 1] = prop.apply(qL[k], uL[k], h)

    qb = np.zeros_like(qL)
    ub = np.zeros_like(uL)
    forcing = _Forcing(g, params)

    def final_state(qbar, ubar):
        return State(Field(g, g.ifft(qL[-1] + qbar[-1])), VectorField(g, g.ifft(uL[-1] + ubar[-1])), T)

    finals = [final_state(qb, ub)]
    gaps: list[float] = []
    split_norms: list[list[float]] = []
    status = "completed"
    for _ in range(n_iters):
        Fh = np.empty_like(qL)
        Gh = np.empty_like(uL)
        piece = np.zeros((n_steps + 1, 4))
        for k in range(n_steps + 1):
            Fh[k], Gh[k], piece[k] = forcing(qL[k], uL[k], qb[k], ub[k])
        split_norms.append([float(x) for x in trapezoid(piece, times, axis=0)])
        nq = np.empty_like(qb)
        nu = np.empty_like(ub)
        nq[0], nu[0] = 0.0, 0.0
        for k in range(n_steps):
            aq, au = prop.apply(nq[k], nu[k], h)
            bq, bu = prop.apply(Fh[k], Gh[k], h)
            nq[k + 1] = aq + 0.5 * h * (bq + Fh[k + 1])
            nu[k + 1] = au + 0.5 * h * (bu + Gh[k + 1])
        gaps.append(ft_norm(times, nq - qb, nu - ub, part))
        qb, ub = nq, nu
        finals.append(final_state(qb, ub))
        if len(gaps) > growth_window and all(
            gaps[-i] > gaps[-i - 1] for i in range(1, growth_window + 1)
        ):
            status = "non-contracting"
            break
    return PicardResult(times, finals, gaps, split_norms, status, qL + qb, uL + ub)
