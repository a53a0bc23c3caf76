"""Exact per-mode propagator for the linearized capillary system.

The linear system in (q, u) is

    ∂_t q + div u = F,
    ∂_t u − aΔu − b∇div u − c∇Δq + d∇q = G.

In Fourier variables with ξ̂ = ξ/|ξ| and u∥ = ξ̂·û the longitudinal pair obeys

    d/dt [q̂, û∥] = [[0, −i|ξ|], [−i|ξ|(c|ξ|² + d), −(a + b)|ξ|²]] [q̂, û∥]

while every transverse component decays like e^{−a|ξ|²t}.  The 2×2 block has
trace −(a+b)|ξ|² and determinant |ξ|²(c|ξ|² + d), so both eigenvalues have
negative real part for ξ ≠ 0.

On the grid, first-order factors use the odd wavenumbers (Nyquist zeroed) and
second-order factors use the full |ξ|², exactly like the nonlinear solver.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .littlewood_paley import (
    BesovSpec,
    ChemLernerSpec,
    DyadicPartition,
    block_norms_hat,
    build_partition,
    chemin_lerner_from_blocks,
    lr_sum,
)
from .spectral import Field, Grid, VectorField

SERIES_THRESHOLD = 1e-3


@dataclass(frozen=True)
class LinearCoeffs:
    a: float
    b: float
    c: float
    d: float = 0.0

    def __post_init__(self) -> None:
        a, b, c, d = (float(x) for x in (self.a, self.b, self.c, self.d))
        if not (a > 0 and a + b > 0 and c > 0 and d >= 0):
            raise ConfigurationError(
                f"linear coefficients need a>0, a+b>0, c>0, d>=0; got a={a}, b={b}, c={c}, d={d}"
            )
        for name, v in zip("abcd", (a, b, c, d)):
            object.__setattr__(self, name, v)


def mode_matrix(xi, coeffs: LinearCoeffs) -> np.ndarray:
    """Generator of d/dt (q̂, û) at the wavevector ``xi`` (length N)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    n = xi.size
    k2 = float(xi @ xi)
    M = np.zeros((n + 1, n + 1), dtype=complex)
    M[0, 1:] = -1j * xi
    M[1:, 0] = -1j * xi * (coeffs.c * k2 + coeffs.d)
    M[1:, 1:] = -coeffs.a * k2 * np.eye(n) - coeffs.b * np.outer(xi, xi)
    return M


def expm2(m11, m12, m21, m22, t):
    """Entries of exp(tM) for stacks of 2×2 matrices M.

    Uses exp(tM) = C·I + S·(M − sI) with s = tr/2, r² = s² − det,
    C = e^{st}cosh(rt), S = e^{st}sinh(rt)/r.  For |rt| < 1e-3 (this includes
    the defective case r = 0) C and S come from their Taylor series, which
    reduces to (I + tN)e^{st} at r = 0.
    """
    m11, m12, m21, m22 = np.broadcast_arrays(*(np.asarray(x, dtype=complex) for x in (m11, m12, m21, m22)))
    s = 0.5 * (m11 + m22)
    det = m11 * m22 - m12 * m21
    r = np.sqrt(s * s - det)
    rt = r * t
    est = np.exp(s * t)
    small = np.abs(rt) < SERIES_THRESHOLD
    C = np.empty_like(s)
    S = np.empty_like(s)
    z2 = rt[small] ** 2
    C[small] = est[small] * (1 + z2 / 2 + z2 * z2 / 24)
    S[small] = est[small] * t * (1 + z2 / 6 + z2 * z2 / 120)
    big = ~small
    ep = np.exp((s[big] + r[big]) * t)
    em = np.exp((s[big] - r[big]) * t)
    C[big] = 0.5 * (ep + em)
    S[big] = 0.5 * (ep - em) / r[big]
    return (C + S * (m11 - s), S * m12, S * m21, C + S * (m22 - s))


class LinearPropagator:
    """Applies exp(tL) to transformed states (q̂, û) on a grid."""

    def __init__(self, grid: Grid, coeffs: LinearCoeffs):
        self.grid = grid
        self.coeffs = coeffs
        ko = np.stack([np.broadcast_to(k, grid.spectral_shape) for k in grid.k_odd])
        m = np.sqrt(np.sum(ko**2, axis=0))
        self.m = m
        self.unit = np.divide(ko, m, out=np.zeros_like(ko), where=m > 0)
        a, b, c, d = coeffs.a, coeffs.b, coeffs.c, coeffs.d
        k2 = grid.k2
        self._block = (
            np.zeros_like(m),
            -1j * m,
            -1j * m * (c * k2 + d),
            -(a * k2 + b * m * m),
        )
        self._perp_rate = -a * k2
        self._cache: dict[float, tuple] = {}

    def factors(self, t: float) -> tuple:
        t = float(t)
        hit = self._cache.get(t)
        if hit is None:
            hit = expm2(*self._block, t) + (np.exp(self._perp_rate * t),)
            if len(self._cache) > 8:
                self._cache.clear()
            self._cache[t] = hit
        return hit

    def split(self, uh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        par = np.sum(self.unit * uh, axis=0)
        return par, uh - self.unit * par

    def apply(self, qh: np.ndarray, uh: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        e11, e12, e21, e22, ep = self.factors(t)
        par, perp = self.split(uh)
        q_new = e11 * qh + e12 * par
        par_new = e21 * qh + e22 * par
        return q_new, self.unit * par_new + ep * perp


@dataclass(frozen=True, eq=False)
class Forcing:
    """Time-sampled forcings F (scalar) and G (vector) in physical space."""

    times: np.ndarray
    F: np.ndarray
    G: np.ndarray

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 1 or np.any(np.diff(times) <= 0):
            raise ValueError("forcing times must be strictly increasing")
        if self.F.shape[0] != times.size or self.G.shape[0] != times.size:
            raise ValueError("forcing arrays must have one slice per time")
        object.__setattr__(self, "times", times)

    @classmethod
    def constant(cls, F: Field | None, G: VectorField | None, T: float, grid: Grid) -> "Forcing":
        f = np.zeros(grid.shape) if F is None else F.values
        g = np.zeros((grid.dim,) + grid.shape) if G is None else G.values
        return cls(np.array([0.0, T]), np.stack([f, f]), np.stack([g, g]))

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        ts = self.times
        if t < ts[0] - 1e-14 * max(1.0, abs(ts[0])) or t > ts[-1] + 1e-12 * max(1.0, ts[-1]):
            raise ValueError(f"forcing not sampled at t={t}")
        if ts.size == 1:
            return self.F[0], self.G[0]
        i = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, ts.size - 2))
        w = (t - ts[i]) / (ts[i + 1] - ts[i])
        w = min(max(w, 0.0), 1.0)
        return (1 - w) * self.F[i] + w * self.F[i + 1], (1 - w) * self.G[i] + w * self.G[i + 1]


@dataclass(eq=False)
class LinearTrajectory:
    grid: Grid
    coeffs: LinearCoeffs
    times: np.ndarray
    qh: np.ndarray
    uh: np.ndarray
    forcing: Forcing | None = None

    def __len__(self) -> int:
        return self.times.size

    def q(self, i: int) -> Field:
        return Field(self.grid, self.grid.ifft(self.qh[i]))

    def u(self, i: int) -> VectorField:
        return VectorField(self.grid, self.grid.ifft(self.uh[i]))

    def forcing_hat(self) -> tuple[np.ndarray, np.ndarray]:
        """Transformed forcings interpolated to the sample times (zeros if unforced)."""
        g = self.grid
        if self.forcing is None:
            return (np.zeros_like(self.qh), np.zeros_like(self.uh))
        Fs, Gs = zip(*(self.forcing.at(t) for t in self.times))
        return g.fft(np.stack(Fs)), g.fft(np.stack(Gs))


def solve_linear(
    q0: Field,
    u0: VectorField,
    coeffs: LinearCoeffs,
    T: float,
    sample_times,
    forcing: Forcing | None = None,
) -> LinearTrajectory:
    """Solve the linear system from (q0, u0) and sample it at ``sample_times``.

    The homogeneous part is exact per mode.  The forced part is the Duhamel
    integral discretized by the trapezoid rule on the union of the forcing
    and sample times: y_{k+1} = E(h)y_k + h/2 (E(h)g_k + g_{k+1}).
    """
    g = q0.grid
    ts = np.asarray(sample_times, dtype=float)
    if ts.ndim != 1 or ts.size == 0:
        raise ValueError("sample_times must be a nonempty 1D sequence")
    if np.any(ts < 0) or np.any(ts > T):
        raise ValueError(f"sample times must lie in [0, {T}]")
    if np.any(np.diff(ts) < 0):
        raise ValueError("sample times must be sorted")
    prop = LinearPropagator(g, coeffs)
    qh0, uh0 = g.fft(q0.values), g.fft(u0.values)
    qh = np.empty((ts.size,) + qh0.shape, dtype=complex)
    uh = np.empty((ts.size,) + uh0.shape, dtype=complex)
    for i, t in enumerate(ts):
        qh[i], uh[i] = prop.apply(qh0, uh0, t)
    if forcing is not None:
        if forcing.times[0] > 0 or forcing.times[-1] < ts[-1]:
            raise ValueError("forcing samples must cover [0, max sample time]")
        grid_t = np.union1d(forcing.times[forcing.times <= ts[-1]], ts)
        grid_t = np.union1d(grid_t, [0.0])
        yq = np.zeros_like(qh0)
        yu = np.zeros_like(uh0)
        F, G = forcing.at(0.0)
        fq, fu = g.fft(F), g.fft(G)
        dq = {0.0: (yq, yu)}
        for k in range(grid_t.size - 1):
            h = grid_t[k + 1] - grid_t[k]
            F1, G1 = forcing.at(grid_t[k + 1])
            gq, gu = g.fft(F1), g.fft(G1)
            aq, au = prop.apply(yq, yu, h)
            bq, bu = prop.apply(fq, fu, h)
            yq = aq + 0.5 * h * (bq + gq)
            yu = au + 0.5 * h * (bu + gu)
            fq, fu = gq, gu
            dq[float(grid_t[k + 1])] = (yq, yu)
        for i, t in enumerate(ts):
            aq, au = dq[float(t)]
            qh[i] = qh[i] + aq
            uh[i] = uh[i] + au
    return LinearTrajectory(g, coeffs, ts, qh, uh, forcing)


# ---------------------------------------------------------------------------
# shell energies


@dataclass(frozen=True)
class ModeEnergy:
    l: int | None
    alpha: float
    k: float
    base: float
    sandwich_ok: bool


def default_alpha(coeffs: LinearCoeffs, kappa_bar: float | None = None) -> float:
    kb = coeffs.c if kappa_bar is None else kappa_bar
    return min(coeffs.a, kb) / 8.0


def _energy_terms(grid: Grid, qh: np.ndarray, uh: np.ndarray):
    """(‖u‖², ‖∇q‖², ‖q‖², ∫∇q·u) for transformed data; leading batch axes allowed."""
    w = grid.parseval_weights * (grid.cell_volume / grid.node_count)
    sp = tuple(range(-grid.dim, 0))
    gq = np.stack([1j * k * qh for k in grid.k_odd], axis=-grid.dim - 1)
    u2 = np.sum(w * np.sum(np.abs(uh) ** 2, axis=-grid.dim - 1), axis=sp)
    g2 = np.sum(w * np.sum(np.abs(gq) ** 2, axis=-grid.dim - 1), axis=sp)
    q2 = np.sum(w * np.abs(qh) ** 2, axis=sp)
    cross = np.sum(w * np.real(np.sum(np.conj(gq) * uh, axis=-grid.dim - 1)), axis=sp)
    return u2, g2, q2, cross


def sandwich_holds(k2: float, base: float) -> bool:
    """½k² ≤ base ≤ (3/2)k²."""
    tol = 1e-12 * max(base, 1e-300)
    return 0.5 * k2 <= base + tol and base <= 1.5 * k2 + tol


def mode_energy(
    q_l: Field,
    u_l: VectorField,
    alpha: float,
    kappa_bar: float,
    d: float = 0.0,
    l: int | None = None,
    check: bool = True,
) -> ModeEnergy:
    """k_l² = ‖u_l‖² + κ̄‖∇q_l‖² + d‖q_l‖² + 2α∫∇q_l·u_l.

    The ``d`` term is the pressure part of the energy for the d > 0 system;
    with d = 0 this is the plain functional.  With ``check`` a failure of the
    sandwich ½k² ≤ base ≤ (3/2)k² (base = the α = 0 energy) raises.
    """
    g = q_l.grid
    u2, g2, q2, cross = _energy_terms(g, g.fft(q_l.values), g.fft(u_l.values))
    base = float(u2 + kappa_bar * g2 + d * q2)
    k2 = base + 2.0 * alpha * float(cross)
    ok = sandwich_holds(k2, base)
    if check and not ok:
        raise ValueError(f"alpha={alpha} too large: k^2={k2} not equivalent to base energy {base}")
    return ModeEnergy(l, float(alpha), float(np.sqrt(max(k2, 0.0))), base, ok)


def max_admissible_alpha(
    q_l: Field, u_l: VectorField, kappa_bar: float, d: float = 0.0, alpha_hi: float = 1e6, iters: int = 200
) -> float:
    """Largest α keeping the sandwich, found by bisection (``inf`` if unbounded)."""

    def ok(alpha):
        return mode_energy(q_l, u_l, alpha, kappa_bar, d, check=False).sandwich_ok

    if ok(alpha_hi):
        return np.inf
    lo, hi = 0.0, alpha_hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return lo


def shell_series(
    traj: LinearTrajectory,
    part: DyadicPartition,
    alpha: float,
    kappa_bar: float,
    d: float = 0.0,
    levels=None,
) -> dict:
    """Per-shell time series of k_l, ‖q_l‖, ‖u_l‖ and the forcing size ‖∇F_l‖ + ‖G_l‖."""
    g = traj.grid
    forced = traj.forcing is not None
    if forced:
        Fh, Gh = traj.forcing_hat()
    out = {}
    for l in part.levels if levels is None else levels:
        phi = part.multiplier(l)
        qh, uh = phi * traj.qh, phi * traj.uh
        u2, g2, q2, cross = _energy_terms(g, qh, uh)
        base = u2 + kappa_bar * g2 + d * q2
        k2 = base + 2 * alpha * cross
        if forced:
            fq = phi * Fh
            gF = np.stack([1j * k * fq for k in g.k_odd], axis=1)
            nF = np.sqrt(_energy_terms(g, np.zeros_like(fq), gF)[0])
            nG = np.sqrt(_energy_terms(g, np.zeros_like(fq), phi * Gh)[0])
        else:
            nF = nG = np.zeros(traj.times.size)
        out[l] = {
            "k": np.sqrt(np.maximum(k2, 0.0)),
            "base": base,
            "k2": k2,
            "q": np.sqrt(q2),
            "u": np.sqrt(u2),
            "forcing": nF + nG,
        }
    return out


@dataclass
class DecayFit:
    l: int
    K: float
    C: float
    residual: float
    ok: bool
    alpha: float


def _duhamel(times: np.ndarray, f: np.ndarray, rate: float) -> np.ndarray:
    """Trapezoid recursion for I(t) = ∫_0^t e^{−rate(t−τ)} f(τ) dτ on the samples."""
    out = np.zeros_like(times)
    for k in range(times.size - 1):
        h = times[k + 1] - times[k]
        e = np.exp(-rate * h)
        out[k + 1] = e * out[k] + 0.5 * h * (e * f[k] + f[k + 1])
    return out


def _c_min(times, k, f, lam, K):
    num = k - np.exp(-K * lam * times) * k[0]
    I = _duhamel(times, f, K * lam)
    scale = max(k[0], np.max(k), 1e-300)
    tight = num > 1e-13 * scale
    if not np.any(tight):
        return 0.0
    if np.any(tight & (I <= 0)):
        return np.inf
    return float(np.max(num[tight] / I[tight]))


def fit_decay(times, k, f, l: int, alpha: float = 0.0, c_slack: float = 0.05) -> DecayFit:
    """Fit K, C in k(t) ≤ e^{−K4^l t}k(0) + C∫_0^t e^{−K4^l(t−τ)} f(τ)dτ.

    Unforced: K is the largest rate compatible with every sample.  Forced:
    for each K the smallest admissible C is monotone in K, so K is taken as
    the largest value whose C stays within ``c_slack`` of the best C
    (found by bisection).  A zero trajectory returns K = +inf.
    """
    times, k, f = (np.asarray(x, dtype=float) for x in (times, k, f))
    if times.size < 3:
        raise ValueError("decay fit needs at least 3 samples")
    lam = 4.0**l
    scale = max(np.max(k), 1e-300)
    if np.max(k) == 0.0:
        return DecayFit(l, np.inf, 0.0, 0.0, True, alpha)
    if np.max(f) == 0.0:
        if k[0] == 0.0:
            return DecayFit(l, -np.inf, np.inf, float(np.max(k)), False, alpha)
        t, kk = times[1:], k[1:]
        live = kk > 1e-14 * k[0]
        if not np.any(live):
            return DecayFit(l, np.inf, 0.0, 0.0, True, alpha)
        K = float(np.min(-np.log(kk[live] / k[0]) / (lam * t[live])))
        resid = float(np.max(k - np.exp(-K * lam * times) * k[0]) / scale)
        return DecayFit(l, K, 0.0, resid, K > 0, alpha)
    C0 = _c_min(times, k, f, lam, 0.0)
    target = (1 + c_slack) * C0 + 1e-14
    hi = 1.0
    while _c_min(times, k, f, lam, hi) <= target and hi < 1e12:
        hi *= 2.0
    lo = 0.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if _c_min(times, k, f, lam, mid) <= target:
            lo = mid
        else:
            hi = mid
    K = lo
    C = _c_min(times, k, f, lam, K)
    bound = np.exp(-K * lam * times) * k[0] + C * _duhamel(times, f, K * lam)
    resid = float(np.max(k - bound) / scale)
    return DecayFit(l, K, C, resid, K > 0 and np.isfinite(C), alpha)


def verify_decay(
    l: int,
    traj: LinearTrajectory,
    part: DyadicPartition | None = None,
    alpha: float | None = None,
    kappa_bar: float | None = None,
    include_d: bool = True,
) -> DecayFit:
    """Fit the shell-l decay inequality along a trajectory from :func:`solve_linear`."""
    if len(traj) < 3:
        raise ValueError("trajectory needs at least 3 samples")
    part = part or build_partition(traj.grid)
    kb = traj.coeffs.c if kappa_bar is None else kappa_bar
    al = default_alpha(traj.coeffs, kb) if alpha is None else alpha
    d = traj.coeffs.d if include_d else 0.0
    ser = shell_series(traj, part, al, kb, d, levels=[l])[l]
    return fit_decay(traj.times, ser["k"], ser["forcing"], l, al)


def verify_decay_all(
    traj: LinearTrajectory,
    part: DyadicPartition | None = None,
    alpha: float | None = None,
    kappa_bar: float | None = None,
    include_d: bool = True,
) -> list[DecayFit]:
    """:func:`verify_decay` for every shell of the partition in one pass."""
    if len(traj) < 3:
        raise ValueError("trajectory needs at least 3 samples")
    part = part or build_partition(traj.grid)
    kb = traj.coeffs.c if kappa_bar is None else kappa_bar
    al = default_alpha(traj.coeffs, kb) if alpha is None else alpha
    d = traj.coeffs.d if include_d else 0.0
    ser = shell_series(traj, part, al, kb, d)
    return [fit_decay(traj.times, s["k"], s["forcing"], l, al) for l, s in ser.items()]


def shell_table_csv(traj: LinearTrajectory, part: DyadicPartition, alpha: float, kappa_bar: float) -> str:
    """CSV rows (t, shell, k_l, ‖q_l‖, ‖u_l‖)."""
    ser = shell_series(traj, part, alpha, kappa_bar, traj.coeffs.d)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "shell", "k_l", "q_l_L2", "u_l_L2"])
    for i, t in enumerate(traj.times):
        for l, s in ser.items():
            w.writerow([repr(float(t)), l, repr(float(s["k"][i])), repr(float(s["q"][i])), repr(float(s["u"][i]))])
    return buf.getvalue()


def decay_summary_json(fits: list[DecayFit]) -> str:
    def num(x):
        return x if np.isfinite(x) else ("inf" if x > 0 else "-inf")

    return json.dumps(
        [{"shell": f.l, "K": num(f.K), "C": num(f.C), "residual": f.residual, "ok": f.ok, "alpha": f.alpha} for f in fits],
        sort_keys=True,
    )


def max_real_eigenvalue(coeffs: LinearCoeffs, xi_abs: np.ndarray) -> np.ndarray:
    """Largest real part over the spectrum of the generator at |ξ| (all directions agree)."""
    out = []
    for x in np.atleast_1d(xi_abs):
        ev = np.linalg.eigvals(mode_matrix([x, 0.0], coeffs))
        out.append(np.max(ev.real))
    return np.array(out)


def prop37_ratio(
    q0: Field,
    u0: VectorField,
    coeffs: LinearCoeffs,
    T: float,
    s: float = 0.0,
    r: float = 2.0,
    n_times: int = 129,
    part: DyadicPartition | None = None,
) -> dict:
    """Aggregate linear estimate: ‖(∇q,u)‖_{L̃¹(B^{N/2+1+s}) ∩ L̃^∞(B^{N/2−1+s})} / ‖(∇q0,u0)‖_{B^{N/2−1+s}}."""
    from .littlewood_paley import heat_times

    g = q0.grid
    part = part or build_partition(g)
    N = g.dim
    times = heat_times(T, n_times)
    traj = solve_linear(q0, u0, coeffs, T, times)
    gq = np.stack([1j * k * traj.qh for k in g.k_odd], axis=1)
    pair = np.concatenate([gq, traj.uh], axis=1)
    table = block_norms_hat(pair, part, 2.0, True, vector=True)
    levels = list(part.levels)
    lhs_1 = chemin_lerner_from_blocks(times, table, levels, ChemLernerSpec(BesovSpec(N / 2 + 1 + s, 2, r), 1.0))
    lhs_inf = chemin_lerner_from_blocks(times, table, levels, ChemLernerSpec(BesovSpec(N / 2 - 1 + s, 2, r), np.inf))
    rhs = float(lr_sum(2.0 ** ((N / 2 - 1 + s) * np.array(levels)) * table[0], r))
    return {"lhs_L1": lhs_1, "lhs_Linf": lhs_inf, "rhs": rhs, "ratio": (lhs_1 + lhs_inf) / rhs if rhs > 0 else 0.0}


# ---------------------------------------------------------------------------
# divergence subsystem


@dataclass(eq=False)
class DivergenceTrajectory:
    grid: Grid
    times: np.ndarray
    ch: np.ndarray
    vh: np.ndarray
    params: dict = field(default_factory=dict)

    def c(self, i: int) -> Field:
        return Field(self.grid, self.grid.ifft(self.ch[i]))

    def v(self, i: int) -> Field:
        return Field(self.grid, self.grid.ifft(self.vh[i]))


def divergence_matrix(k2, mu: float, lam: float, kappa: float):
    """Per-mode generator [[0, |ξ|²], [−κ|ξ|², −(2μ+λ)|ξ|²]] for (ĉ, v̂)."""
    k2 = np.asarray(k2, dtype=float)
    return (np.zeros_like(k2), k2, -kappa * k2, -(2 * mu + lam) * k2)


def divergence_subsystem(
    c0: Field, v0: Field, mu: float, lam: float, kappa: float, T: float, sample_times=None
) -> DivergenceTrajectory:
    """Exact solution of ∂_t c + Δv = 0, ∂_t v − (2μ+λ)Δv − κΔc = 0."""
    if 2 * mu + lam <= 0 or kappa <= 0:
        raise ConfigurationError("divergence subsystem needs 2μ+λ > 0 and κ > 0")
    g = c0.grid
    ts = np.linspace(0.0, T, 65) if sample_times is None else np.asarray(sample_times, dtype=float)
    if np.any(ts < 0) or np.any(ts > T):
        raise ValueError(f"sample times must lie in [0, {T}]")
    M = divergence_matrix(g.k2, mu, lam, kappa)
    c0h, v0h = g.fft(c0.values), g.fft(v0.values)
    ch = np.empty((ts.size,) + c0h.shape, dtype=complex)
    vh = np.empty_like(ch)
    for i, t in enumerate(ts):
        e11, e12, e21, e22 = expm2(*M, t)
        ch[i] = e11 * c0h + e12 * v0h
        vh[i] = e21 * c0h + e22 * v0h
    return DivergenceTrajectory(g, ts, ch, vh, {"mu": mu, "lambda": lam, "kappa": kappa, "T": T})


def divergence_lemma_check(traj: DivergenceTrajectory, s: float, r: float = 2.0, part: DyadicPartition | None = None) -> dict:
    """Empirical constant in ‖v‖_{L̃^∞(B^s)} + ‖v‖_{L̃¹(B^{s+2})} ≤ C·(data norm).

    Reports C against ‖v0‖_{B^s} alone and against ‖v0‖_{B^s} + √κ‖c0‖_{B^s}
    (the second form is the one that stays finite when c0 ≠ 0).
    """
    g = traj.grid
    part = part or build_partition(g)
    levels = list(part.levels)
    tv = block_norms_hat(traj.vh, part)
    tc = block_norms_hat(traj.ch[:1], part)
    lhs = chemin_lerner_from_blocks(traj.times, tv, levels, ChemLernerSpec(BesovSpec(s, 2, r), np.inf))
    lhs += chemin_lerner_from_blocks(traj.times, tv, levels, ChemLernerSpec(BesovSpec(s + 2, 2, r), 1.0))
    w = 2.0 ** (s * np.array(levels))
    v0 = float(lr_sum(w * tv[0], r))
    c0 = float(lr_sum(w * tc[0], r))
    kappa = traj.params["kappa"]
    combined = v0 + np.sqrt(kappa) * c0
    return {
        "lhs": lhs,
        "v0_norm": v0,
        "c0_norm": c0,
        "C_v0": lhs / v0 if v0 > 0 else (np.inf if lhs > 0 else 0.0),
        "C_combined": lhs / combined if combined > 0 else 0.0,
    }
