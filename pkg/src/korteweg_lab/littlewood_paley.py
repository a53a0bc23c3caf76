"""Littlewood-Paley blocks, Besov and Chemin-Lerner norms on the torus.

The radial profile is the telescoping normalization

.. math::

    \\varphi(r) = \\frac{\\theta(r)}{\\sum_{k\\in\\mathbb Z}\\theta(2^{-k} r)},

with :math:`\\theta` a :math:`C^\\infty` bump supported in :math:`(3/4, 8/3)`.
Because the denominator is invariant under :math:`r\\mapsto 2r`, the blocks
:math:`\\varphi(2^{-l}|\\xi|)` sum to one up to round-off on every nonzero
wavenumber.  The profile equals one exactly on :math:`[4/3, 3/2]`, where no
neighbouring dilate overlaps.

On a torus the homogeneous sums only range over the shells that meet the
resolved band ``[2π/L, max|ξ|]``; every :class:`NormReport` records that
range.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .spectral import Field, Grid, VectorField

R_IN = 0.75
R_OUT = 8.0 / 3.0
MIN_SHELLS = 4


def theta(r) -> np.ndarray:
    """Smooth bump, positive exactly on the open interval (3/4, 8/3)."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = (r > R_IN) & (r < R_OUT)
    ri = r[inside]
    out[inside] = np.exp(-1.0 / (ri - R_IN) - 1.0 / (R_OUT - ri))
    return out


def _theta_sum(r: np.ndarray) -> np.ndarray:
    # Σ_k θ(2^{-k} r): only k with 2^{-k} r in (3/4, 8/3) contribute, at most two.
    total = np.zeros_like(r)
    pos = r > 0
    rp = r[pos]
    k0 = np.floor(np.log2(rp / R_OUT))
    acc = np.zeros_like(rp)
    for shift in range(4):
        acc += theta(rp * 2.0 ** -(k0 + shift))
    total[pos] = acc
    return total


def phi_profile(r) -> np.ndarray:
    """Radial annulus cutoff φ(|ξ|), supported in [3/4, 8/3]."""
    r = np.abs(np.asarray(r, dtype=float))
    out = np.zeros_like(r)
    th = theta(r)
    nz = th > 0
    out[nz] = th[nz] / _theta_sum(r[nz])
    return out


def chi_profile(r) -> np.ndarray:
    """Low-frequency cutoff χ(|ξ|) = Σ_{l<0} φ(2^{-l}|ξ|), with χ(0) = 1.

    Supported in B(0, 4/3).  Built from the negative-level dilates rather than
    as 1 − Σ_{l≥0}φ so that the non-homogeneous unity check is not a tautology.
    """
    r = np.abs(np.asarray(r, dtype=float))
    out = np.zeros_like(r)
    out[r == 0] = 1.0
    pos = (r > 0) & (r < 2 * R_OUT)
    rp = r[pos]
    l0 = np.floor(np.log2(R_IN / rp))
    acc = np.zeros_like(rp)
    for shift in range(-1, 3):
        l = l0 + shift
        acc += np.where(l >= 1, phi_profile(rp * 2.0**l), 0.0)
    out[pos] = acc
    return out


@dataclass(frozen=True, eq=False)
class DyadicPartition:
    """Per-grid block multipliers ``φ(2^{-l}|ξ|)`` for ``l = j_min..j_max``.

    ``phi[i]`` is the multiplier of level ``j_min + i`` in the grid's spectral
    layout; ``chi`` is the non-homogeneous low block (level −1).
    """

    grid: Grid
    j_min: int
    j_max: int
    phi: np.ndarray
    chi: np.ndarray

    @property
    def levels(self) -> range:
        return range(self.j_min, self.j_max + 1)

    @property
    def shell_count(self) -> int:
        return self.j_max - self.j_min + 1

    def levels_for(self, homogeneous: bool) -> list[int]:
        if homogeneous:
            return list(self.levels)
        return [-1] + [l for l in self.levels if l >= 0]

    def multiplier(self, l: int, homogeneous: bool = True) -> np.ndarray:
        if not homogeneous and l == -1:
            return self.chi
        if not homogeneous and l < -1:
            raise ValueError(f"non-homogeneous blocks start at -1, got {l}")
        if l < self.j_min or l > self.j_max:
            raise ValueError(f"level {l} outside partition range [{self.j_min}, {self.j_max}]")
        return self.phi[l - self.j_min]

    def multipliers(self, homogeneous: bool = True) -> np.ndarray:
        if homogeneous:
            return self.phi
        return np.stack([self.multiplier(l, False) for l in self.levels_for(False)])

    def defect(self) -> dict:
        """Partition-of-unity defects on the resolved modes."""
        g = self.grid
        nz = g.kmag > 0
        total = np.sum(self.phi, axis=0)
        homog = float(np.max(np.abs(total[nz] - 1.0)))
        nh = self.chi + np.sum(self.phi[np.array(list(self.levels)) >= 0], axis=0)
        return {
            "homogeneous": homog,
            "non_homogeneous": float(np.max(np.abs(nh - 1.0))),
            "chi_at_zero": float(self.chi.flat[0]),
        }


def shell_range(xi_min: float, xi_max: float) -> tuple[int, int]:
    """Levels l whose annulus 2^l·(3/4, 8/3) meets [xi_min, xi_max]."""
    j_min = math.floor(math.log2(xi_min / R_OUT)) + 1
    j_max = math.ceil(math.log2(xi_max / R_IN)) - 1
    return j_min, j_max


def build_partition(grid: Grid) -> DyadicPartition:
    """Dyadic partition covering every resolved nonzero wavenumber of ``grid``."""
    kmag = grid.kmag
    xi_min = grid.k0
    xi_max = float(np.max(kmag))
    j_min, j_max = shell_range(xi_min, xi_max)
    if j_max - j_min + 1 < MIN_SHELLS:
        raise ConfigurationError(
            f"grid {grid.to_dict()} resolves {j_max - j_min + 1} dyadic shells, need {MIN_SHELLS}"
        )
    phi = np.stack([phi_profile(kmag * 2.0**-l) for l in range(j_min, j_max + 1)])
    chi = chi_profile(kmag)
    for a in (phi, chi):
        a.setflags(write=False)
    return DyadicPartition(grid, j_min, j_max, phi, chi)


# ---------------------------------------------------------------------------
# blocks


def _as_hat(f) -> tuple[Grid, np.ndarray, bool]:
    g = f.grid
    return g, g.fft(f.values), isinstance(f, VectorField)


def _wrap(g: Grid, values: np.ndarray, vector: bool):
    return VectorField(g, values) if vector else Field(g, values)


def block(f, l: int, part: DyadicPartition, homogeneous: bool = True):
    """Δ_l f for a Field or VectorField (level −1 with ``homogeneous=False`` is χ(D)f)."""
    g, fh, vec = _as_hat(f)
    return _wrap(g, g.ifft(part.multiplier(l, homogeneous) * fh), vec)


def low_cutoff(f, l: int, part: DyadicPartition):
    """S_l f = mean(f) + Σ_{k≤l−1} Δ_k f.

    The mean is kept so that S_l tends to the identity; on mean-free data this
    is exactly the sum of the blocks below ``l``.  ``l > j_max`` returns f.
    """
    if l < part.j_min:
        raise ValueError(f"level {l} below partition range start {part.j_min}")
    g, fh, vec = _as_hat(f)
    if l > part.j_max:
        return _wrap(g, np.array(f.values), vec)
    mult = np.sum(part.phi[: l - part.j_min], axis=0)
    mult = mult.copy()
    mult.flat[0] = 1.0
    return _wrap(g, g.ifft(mult * fh), vec)


def block_norms_hat(
    fh: np.ndarray,
    part: DyadicPartition,
    p: float = 2.0,
    homogeneous: bool = True,
    vector: bool = False,
) -> np.ndarray:
    """Block L^p norms from transformed data of shape ``(*batch, [dim], *spectral)``.

    With ``vector=True`` the axis before the spatial ones holds components and
    the norm is taken of the Euclidean magnitude.  Returns ``(*batch, nblocks)``.
    """
    return _block_norms(fh, part, p, homogeneous, vector)


def _block_norms(fh: np.ndarray, part: DyadicPartition, p: float, homogeneous: bool, vector: bool):
    """Block norms for ``fh`` of shape ``(*batch, [ncomp], *spectral)`` -> ``(*batch, nblocks)``."""
    g = part.grid
    mults = part.multipliers(homogeneous)
    sdim = g.dim
    if vector:
        batch_shape = fh.shape[: fh.ndim - sdim - 1]
    else:
        batch_shape = fh.shape[: fh.ndim - sdim]
    nb = mults.shape[0]
    if p == 2:
        energy = np.abs(fh) ** 2
        if vector:
            energy = energy.sum(axis=-sdim - 1)
        weights = (mults**2 * g.parseval_weights).reshape(nb, -1)
        e = energy.reshape(batch_shape + (-1,)) @ weights.T
        return np.sqrt(np.maximum(e, 0.0) * g.cell_volume / g.node_count)
    out = np.empty(batch_shape + (nb,))
    for i in range(nb):
        vals = g.ifft(mults[i] * fh)
        if vector:
            mag = np.sqrt(np.sum(vals**2, axis=-sdim - 1))
        else:
            mag = np.abs(vals)
        flat = mag.reshape(batch_shape + (-1,))
        out[..., i] = lp_norm(flat, p, g.cell_volume)
    return out


def lp_norm(values: np.ndarray, p: float, cell_volume: float) -> np.ndarray:
    """Grid L^p norm over the last axis: (Σ|f|^p dx)^{1/p}, max for p=∞."""
    a = np.abs(values)
    if np.isinf(p):
        return np.max(a, axis=-1)
    scale = np.max(a, axis=-1, keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    return scale[..., 0] * (np.sum((a / scale) ** p, axis=-1) * cell_volume) ** (1.0 / p)


def block_norms(f, part: DyadicPartition, p: float = 2.0, homogeneous: bool = True):
    """(levels, ‖Δ_l f‖_{L^p}) for a Field or VectorField."""
    _, fh, vec = _as_hat(f)
    return np.array(part.levels_for(homogeneous)), _block_norms(fh, part, p, homogeneous, vec)


def bernstein_ratios(f, part: DyadicPartition) -> dict[int, float]:
    """‖∇Δ_l f‖_{L²} / (2^l ‖Δ_l f‖_{L²}) on every nonempty block."""
    g, fh, vec = _as_hat(f)
    grads = np.stack([1j * kk * fh for kk in g.k_odd], axis=0 if not vec else 1)
    if vec:
        grads = grads.reshape((-1,) + g.spectral_shape)
        fv = fh.reshape((-1,) + g.spectral_shape)
    else:
        fv = fh[None]
    base = _block_norms(fv, part, 2.0, True, True)
    der = _block_norms(grads, part, 2.0, True, True)
    out = {}
    for i, l in enumerate(part.levels):
        if base[i] > 1e-14 * max(1.0, float(np.max(base))):
            out[l] = float(der[i] / (2.0**l * base[i]))
    return out


# ---------------------------------------------------------------------------
# norms


def _check_exponent(name: str, v: float) -> float:
    v = float(v)
    if not (v >= 1.0):
        raise ValueError(f"{name} must be >= 1 or inf, got {v}")
    return v


@dataclass(frozen=True)
class BesovSpec:
    s: float
    p: float = 2.0
    r: float = 2.0
    homogeneous: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "p", _check_exponent("p", self.p))
        object.__setattr__(self, "r", _check_exponent("r", self.r))
        object.__setattr__(self, "s", float(self.s))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("p", "r"):
            if np.isinf(d[k]):
                d[k] = "inf"
        return d


@dataclass(frozen=True)
class ChemLernerSpec:
    besov: BesovSpec
    rho: float = np.inf

    def __post_init__(self) -> None:
        object.__setattr__(self, "rho", _check_exponent("rho", self.rho))

    def to_dict(self) -> dict:
        return {"besov": self.besov.to_dict(), "rho": "inf" if np.isinf(self.rho) else self.rho}


def lr_sum(x: np.ndarray, r: float, axis: int = -1) -> np.ndarray:
    """ℓ^r norm along ``axis``; sup for r=∞."""
    x = np.abs(x)
    if np.isinf(r):
        return np.max(x, axis=axis)
    scale = np.max(x, axis=axis, keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    return np.squeeze(scale, axis) * np.sum((x / scale) ** r, axis=axis) ** (1.0 / r)


def time_lp(times: np.ndarray, values: np.ndarray, rho: float) -> np.ndarray:
    """Trapezoid L^ρ norm in time along axis 0; max for ρ=∞."""
    values = np.abs(values)
    if np.isinf(rho):
        return np.max(values, axis=0)
    dt = np.diff(times)
    shape = (-1,) + (1,) * (values.ndim - 1)
    integ = np.sum(0.5 * dt.reshape(shape) * (values[1:] ** rho + values[:-1] ** rho), axis=0)
    return integ ** (1.0 / rho)


@dataclass
class NormReport:
    spec: dict
    value: float
    levels: list[int]
    block_norms: list[float]
    weighted: list[float]
    note: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        rec = {
            "spec": self.spec,
            "value": self.value,
            "per_block_table": [
                {"l": l, "block_norm": b, "weighted": w}
                for l, b, w in zip(self.levels, self.block_norms, self.weighted)
            ],
            "note": self.note,
        }
        rec.update(self.extra)
        return json.dumps(rec, sort_keys=True)

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["l", "block_norm", "weighted"])
        for row in zip(self.levels, self.block_norms, self.weighted):
            w.writerow([row[0], repr(float(row[1])), repr(float(row[2]))])
        return buf.getvalue()


def _truncation_note(part: DyadicPartition, homogeneous: bool) -> str:
    if homogeneous:
        return f"homogeneous sum over resolved shells l={part.j_min}..{part.j_max}"
    return f"non-homogeneous sum over l=-1..{part.j_max} (chi block at l=-1)"


def besov_report(f, spec: BesovSpec, part: DyadicPartition) -> NormReport:
    levels, norms = block_norms(f, part, spec.p, spec.homogeneous)
    weighted = 2.0 ** (spec.s * levels) * norms
    return NormReport(
        spec=spec.to_dict(),
        value=float(lr_sum(weighted, spec.r)),
        levels=[int(l) for l in levels],
        block_norms=[float(x) for x in norms],
        weighted=[float(x) for x in weighted],
        note=_truncation_note(part, spec.homogeneous),
    )


def besov_norm(f, spec: BesovSpec, part: DyadicPartition) -> float:
    """ℓ^r over blocks of 2^{ls}‖Δ_l f‖_{L^p}."""
    levels, norms = block_norms(f, part, spec.p, spec.homogeneous)
    return float(lr_sum(2.0 ** (spec.s * levels) * norms, spec.r))


def _unpack_traj(traj) -> tuple[np.ndarray, list]:
    if len(traj) < 2:
        raise ValueError("a trajectory needs at least two samples")
    times = np.array([float(t) for t, _ in traj])
    if np.any(np.diff(times) <= 0):
        raise ValueError("trajectory times must be strictly increasing")
    return times, [f for _, f in traj]


def chemin_lerner_from_blocks(
    times: np.ndarray, norms: np.ndarray, levels: Sequence[int], spec: ChemLernerSpec
) -> float:
    """Chemin-Lerner aggregate from a (ntimes, nblocks) table of block L^p norms."""
    per_block = time_lp(np.asarray(times), norms, spec.rho)
    w = 2.0 ** (spec.besov.s * np.asarray(levels, dtype=float))
    return float(lr_sum(w * per_block, spec.besov.r))


def block_norm_series(traj, part: DyadicPartition, p: float = 2.0, homogeneous: bool = True):
    """(times, levels, table[ntimes, nblocks]) of block L^p norms along a trajectory."""
    times, fields = _unpack_traj(traj)
    vec = isinstance(fields[0], VectorField)
    g = part.grid
    fh = g.fft(np.stack([f.values for f in fields]))
    return times, np.array(part.levels_for(homogeneous)), _block_norms(fh, part, p, homogeneous, vec)


def chemin_lerner_norm(traj, spec: ChemLernerSpec, part: DyadicPartition) -> float:
    """‖f‖ in L̃^ρ_T(B^s_{p,r}): time L^ρ per block (trapezoid), then weighted ℓ^r."""
    times, levels, table = block_norm_series(traj, part, spec.besov.p, spec.besov.homogeneous)
    return chemin_lerner_from_blocks(times, table, levels, spec)


def lebesgue_besov_norm(traj, spec: ChemLernerSpec, part: DyadicPartition) -> float:
    """‖f‖ in L^ρ_T(B^s_{p,r}): Besov norm at each time, then time L^ρ."""
    times, levels, table = block_norm_series(traj, part, spec.besov.p, spec.besov.homogeneous)
    per_time = lr_sum(2.0 ** (spec.besov.s * levels) * table, spec.besov.r, axis=-1)
    return float(time_lp(times, per_time, spec.rho))


def heat_times(T: float, n_times: int = 129, t_min_ratio: float = 1e-7) -> np.ndarray:
    """0 followed by geometric samples up to T, resolving every decay rate."""
    return np.concatenate([[0.0], np.geomspace(T * t_min_ratio, T, n_times - 1)])


@dataclass
class HeatCheckReport:
    data_norm: float
    lhs: dict
    constants: dict
    spec: dict
    mu: float
    T: float


def heat_semigroup_check(
    u0, mu: float, T: float, spec: BesovSpec, part: DyadicPartition | None = None,
    n_times: int = 129,
) -> HeatCheckReport:
    """Empirical constants in ‖u‖_{L̃^ρ_T(B^{s+2/ρ})} ≤ C‖u0‖_{B^s}, ρ ∈ {1, ∞}.

    The free heat flow is evaluated exactly per mode at geometric sample times.
    """
    g = u0.grid
    part = part or build_partition(g)
    vec = isinstance(u0, VectorField)
    fh0 = g.fft(u0.values)
    times = heat_times(T, n_times)
    decay = np.exp(-mu * g.k2[None] * times.reshape((-1,) + (1,) * g.dim))
    if vec:
        decay = decay[:, None]
    series = fh0[None] * decay
    levels = part.levels_for(spec.homogeneous)
    table = _block_norms(series, part, spec.p, spec.homogeneous, vec)
    data = float(lr_sum(2.0 ** (spec.s * np.array(levels)) * table[0], spec.r))
    lhs, const = {}, {}
    for rho in (1.0, np.inf):
        shifted = BesovSpec(spec.s + 2.0 / rho, spec.p, spec.r, spec.homogeneous)
        val = chemin_lerner_from_blocks(times, table, levels, ChemLernerSpec(shifted, rho))
        key = "inf" if np.isinf(rho) else "1"
        lhs[key] = val
        const[key] = val / data if data > 0 else 0.0
    return HeatCheckReport(data, lhs, const, spec.to_dict(), float(mu), float(T))
