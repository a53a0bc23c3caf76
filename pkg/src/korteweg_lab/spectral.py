"""Periodic grids, real FFTs and spectral differential operators.

All transforms use the real-to-complex layout of :func:`scipy.fft.rfftn`:
the last axis keeps only the nonnegative wavenumbers ``0..n/2`` and every
other axis carries the full signed range ``[-n/2, n/2)``.  The forward
transform is unscaled and the inverse divides by the node count.

Odd derivatives zero the Nyquist row of every axis, so ``derivative`` of a
real field stays real and ``gradient``/``divergence`` are exact adjoints.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

__all__ = [
    "Grid",
    "Field",
    "VectorField",
    "Spectrum",
    "forward_transform",
    "inverse_transform",
    "derivative",
    "gradient",
    "divergence",
    "laplacian",
    "curl",
    "project_P",
    "project_Q",
    "random_field",
    "resample",
]


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice ``[0, L)^dim`` with ``n`` nodes per axis."""

    dim: int
    n: int
    length: float = 2.0 * np.pi

    def __post_init__(self) -> None:
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        n = int(self.n)
        if n < 8 or n & (n - 1):
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")
        if not (np.isfinite(self.length) and self.length > 0):
            raise ValueError(f"length must be positive, got {self.length}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "length", float(self.length))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def spectral_shape(self) -> tuple[int, ...]:
        return (self.n,) * (self.dim - 1) + (self.n // 2 + 1,)

    @property
    def node_count(self) -> int:
        return self.n**self.dim

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dim

    @property
    def volume(self) -> float:
        return self.length**self.dim

    @property
    def k0(self) -> float:
        """Fundamental wavenumber 2π/L."""
        return 2.0 * np.pi / self.length

    def coords(self) -> tuple[np.ndarray, ...]:
        """Node coordinates, one broadcastable array per axis (``ij`` indexing)."""
        x = np.arange(self.n) * self.dx
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij", sparse=True))

    @cached_property
    def integer_wavenumbers(self) -> tuple[np.ndarray, ...]:
        out = []
        for axis in range(self.dim):
            if axis == self.dim - 1:
                k = np.arange(self.n // 2 + 1, dtype=float)
            else:
                k = np.fft.fftfreq(self.n, d=1.0 / self.n)
            shape = [1] * self.dim
            shape[axis] = k.size
            out.append(k.reshape(shape))
        return tuple(out)

    @cached_property
    def k(self) -> tuple[np.ndarray, ...]:
        """Physical wavenumbers 2πk/L per axis (Nyquist kept, as -n/2 or +n/2)."""
        return tuple(self.k0 * m for m in self.integer_wavenumbers)

    @cached_property
    def k_odd(self) -> tuple[np.ndarray, ...]:
        """Wavenumbers used for odd derivatives: the Nyquist row is zeroed."""
        out = []
        for m in self.integer_wavenumbers:
            km = self.k0 * m
            km = np.where(np.abs(m) == self.n // 2, 0.0, km)
            out.append(km)
        return tuple(out)

    @cached_property
    def k2(self) -> np.ndarray:
        return sum(np.broadcast_to(kk**2, self.spectral_shape) for kk in self.k)

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def inv_k2(self) -> np.ndarray:
        """Symbol of Δ⁻¹ up to sign: 1/|ξ|², with the zero mode mapped to 0."""
        out = np.zeros(self.spectral_shape)
        nz = self.k2 > 0
        out[nz] = 1.0 / self.k2[nz]
        return out

    @cached_property
    def dealias(self) -> np.ndarray:
        """2/3-rule mask: keep modes with every |k_i| < n/3."""
        mask = np.ones(self.spectral_shape, dtype=bool)
        for m in self.integer_wavenumbers:
            mask = mask & (3 * np.abs(m) < self.n)
        return mask

    @cached_property
    def parseval_weights(self) -> np.ndarray:
        """Multiplicity of each stored mode in the full (two-sided) spectrum."""
        w = np.full(self.n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        shape = [1] * self.dim
        shape[-1] = w.size
        return np.broadcast_to(w.reshape(shape), self.spectral_shape)

    # Array-level transforms, used by the solvers on raw arrays.
    def fft(self, values: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.dim, 0))
        return sfft.rfftn(values, axes=axes)

    def ifft(self, modes: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.dim, 0))
        return sfft.irfftn(modes, s=self.shape, axes=axes)

    def l2_hat(self, modes: np.ndarray) -> float:
        """Grid L² norm of the field(s) whose transform is ``modes``.

        Leading axes beyond the spatial ones are summed, so a vector field's
        stacked transform gives the norm of its Euclidean magnitude.
        """
        s = np.sum(self.parseval_weights * np.abs(modes) ** 2)
        return float(np.sqrt(s * self.cell_volume / self.node_count))

    def to_dict(self) -> dict:
        return {"dim": self.dim, "n": self.n, "length": self.length}


def _frozen(values, shape, what: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{what} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite samples")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Field:
    """Real scalar samples on a :class:`Grid`."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen(self.values, self.grid.shape, "Field"))

    def __add__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values + _vals(other))

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values - _vals(other))

    def __mul__(self, scalar: float) -> "Field":
        return Field(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)

    def mean(self) -> float:
        return float(np.mean(self.values))


@dataclass(frozen=True, eq=False)
class VectorField:
    """``dim`` real components on a common grid, stored as one ``(dim, *shape)`` array."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        shape = (self.grid.dim,) + self.grid.shape
        object.__setattr__(self, "values", _frozen(self.values, shape, "VectorField"))

    @classmethod
    def from_components(cls, components) -> "VectorField":
        components = list(components)
        grids = {c.grid for c in components}
        if len(grids) != 1:
            raise ValueError("components must share one grid")
        grid = grids.pop()
        if len(components) != grid.dim:
            raise ValueError(f"expected {grid.dim} components, got {len(components)}")
        return cls(grid, np.stack([c.values for c in components]))

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros((grid.dim,) + grid.shape))

    @property
    def components(self) -> tuple[Field, ...]:
        return tuple(Field(self.grid, c) for c in self.values)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=0))

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.grid, self.values + _vals(other))

    def __sub__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.grid, self.values - _vals(other))

    def __mul__(self, scalar: float) -> "VectorField":
        return VectorField(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "VectorField":
        return VectorField(self.grid, -self.values)


def _vals(x):
    return x.values if hasattr(x, "values") else x


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Half-plane Fourier coefficients of a real field (rfft layout).

    Conjugate symmetry is implied by the layout, so the inverse is real by
    construction.  :meth:`full` expands to the two-sided coefficient array.
    """

    grid: Grid
    modes: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.modes, dtype=complex)
        if arr.shape != self.grid.spectral_shape:
            raise ValueError(
                f"Spectrum has shape {arr.shape}, expected {self.grid.spectral_shape}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "modes", arr)

    def full(self) -> np.ndarray:
        """Two-sided coefficients in :func:`numpy.fft.fftn` order."""
        return np.fft.fftn(inverse_transform(self).values)

    def l2(self) -> float:
        """Mode ℓ² norm scaled to equal the grid L² norm (Parseval)."""
        return self.grid.l2_hat(self.modes)


def forward_transform(f: Field) -> Spectrum:
    if not np.all(np.isfinite(f.values)):
        raise ValueError("non-finite samples")
    return Spectrum(f.grid, f.grid.fft(f.values))


def inverse_transform(s: Spectrum) -> Field:
    return Field(s.grid, s.grid.ifft(s.modes))


def derivative(f: Field, axis: int, order: int = 1) -> Field:
    """``∂^order f / ∂x_axis^order``; odd orders drop the Nyquist row."""
    g = f.grid
    if not 0 <= axis < g.dim:
        raise ValueError(f"axis {axis} out of range for dim {g.dim}")
    kk = g.k_odd[axis] if order % 2 else g.k[axis]
    return Field(g, g.ifft((1j * kk) ** order * g.fft(f.values)))


def gradient(f: Field) -> VectorField:
    g = f.grid
    fh = g.fft(f.values)
    return VectorField(g, np.stack([g.ifft(1j * kk * fh) for kk in g.k_odd]))


def divergence(u: VectorField) -> Field:
    g = u.grid
    uh = g.fft(u.values)
    return Field(g, g.ifft(sum(1j * kk * uh[i] for i, kk in enumerate(g.k_odd))))


def laplacian(f):
    """Δ of a Field, or componentwise Δ of a VectorField."""
    g = f.grid
    out = g.ifft(-g.k2 * g.fft(f.values))
    return Field(g, out) if isinstance(f, Field) else VectorField(g, out)


def curl(u: VectorField) -> Field:
    """Scalar curl ``∂_x u_y − ∂_y u_x`` of a 2D field."""
    g = u.grid
    if g.dim != 2:
        raise ValueError("scalar curl needs dim == 2")
    uh = g.fft(u.values)
    kx, ky = g.k_odd
    return Field(g, g.ifft(1j * kx * uh[1] - 1j * ky * uh[0]))


def _potential_hat(g: Grid, uh: np.ndarray) -> np.ndarray:
    # Q = Δ⁻¹∇div, built from the same odd wavenumbers as ∇ and div so that
    # Q∇f = ∇f for every grid function f.
    ko = g.k_odd
    k2o = sum(np.broadcast_to(kk**2, g.spectral_shape) for kk in ko)
    inv = np.zeros(g.spectral_shape)
    nz = k2o > 0
    inv[nz] = 1.0 / k2o[nz]
    kdotu = sum(kk * uh[i] for i, kk in enumerate(ko))
    return np.stack([kk * inv * kdotu for kk in ko])


def project_Q(u: VectorField) -> VectorField:
    """Potential (curl-free) part Δ⁻¹∇div u; the zero mode maps to 0."""
    g = u.grid
    return VectorField(g, g.ifft(_potential_hat(g, g.fft(u.values))))


def project_P(u: VectorField) -> VectorField:
    """Solenoidal part u − Q u."""
    g = u.grid
    uh = g.fft(u.values)
    return VectorField(g, g.ifft(uh - _potential_hat(g, uh)))


def random_field(
    grid: Grid,
    rng: np.random.Generator,
    kmax: float | None = None,
    slope: float = 0.0,
    mean: float = 0.0,
) -> Field:
    """Random real band-limited field.

    Modes with integer wavenumber magnitude up to ``kmax`` (default: every
    mode strictly below Nyquist) get Gaussian coefficients weighted by
    ``(1+|k|)^-slope``.  The Nyquist rows are left empty so that first
    derivatives are exact.
    """
    ints = grid.integer_wavenumbers
    kint = np.sqrt(sum(np.broadcast_to(m**2, grid.spectral_shape) for m in ints))
    keep = np.ones(grid.spectral_shape, dtype=bool)
    for m in ints:
        keep &= np.abs(m) < grid.n // 2
    if kmax is not None:
        keep &= kint <= kmax
    keep &= kint > 0
    shape = grid.spectral_shape
    coef = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    coef = np.where(keep, coef * (1.0 + kint) ** (-slope), 0.0)
    vals = grid.ifft(coef)
    s = np.std(vals)
    if s > 0:
        vals = vals / s
    return Field(grid, vals + mean)


def resample(f, grid: Grid):
    """Trigonometric interpolation of ``f`` onto ``grid`` (same dim and length).

    Modes resolved on both grids are copied; the rest are dropped or zero
    filled.  Nyquist rows are discarded, so a band-limited field maps exactly.
    """
    src = f.grid
    if grid.dim != src.dim or grid.length != src.length:
        raise ValueError("resample needs matching dim and length")
    lead = f.values.shape[: f.values.ndim - src.dim]
    axes = tuple(range(-src.dim, 0))
    full = np.fft.fftn(f.values, axes=axes)
    m = min(src.n, grid.n) // 2
    out = np.zeros(lead + grid.shape, dtype=complex)
    idx_src = np.r_[0:m, src.n - m + 1 : src.n]
    idx_dst = np.r_[0:m, grid.n - m + 1 : grid.n]
    sl_src = np.ix_(*([idx_src] * src.dim))
    sl_dst = np.ix_(*([idx_dst] * src.dim))
    out[(Ellipsis,) + sl_dst] = full[(Ellipsis,) + sl_src]
    vals = np.real(np.fft.ifftn(out, axes=axes)) * (grid.node_count / src.node_count)
    return VectorField(grid, vals) if isinstance(f, VectorField) else Field(grid, vals)
