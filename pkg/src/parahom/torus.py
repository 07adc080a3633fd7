"""Periodic unit-cell fields and Fourier calculus on the d-torus Y = [0,1)^d.

Fields are sampled on the uniform grid ``y = i/n`` along every axis.  Values
are stored component-major: a scalar field has shape ``(n,)*d``, a vector
field ``(d,) + (n,)*d``, a matrix field ``(d, d) + (n,)*d`` and so on.

First derivatives use the collocation symbol ``2*pi*i*k`` with the Nyquist
mode removed (the derivative of a sampled real field must stay real).  Pure
second derivatives and the Laplacian keep the Nyquist mode with symbol
``-(2*pi*k)**2`` so that no nonconstant mode is annihilated.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import GridMismatch, NonFiniteField, NonZeroMean

MEAN_TOL = 1e-10
DEFAULT_MAX_POINTS = 2**21


class AliasingWarning(UserWarning):
    """Sampled data carries significant energy near the grid cutoff."""


@dataclass(frozen=True)
class TorusGrid:
    dim: int
    n: int = 64
    max_points: int = DEFAULT_MAX_POINTS

    def __post_init__(self):
        if not 1 <= self.dim <= 3:
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")
        if self.n**self.dim > self.max_points:
            raise ValueError(
                f"{self.n}^{self.dim} points exceed the memory budget of {self.max_points}"
            )

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    def coords(self) -> tuple[np.ndarray, ...]:
        """Node coordinates as broadcastable ``ij``-indexed arrays."""
        y = np.arange(self.n) / self.n
        return tuple(np.meshgrid(*([y] * self.dim), indexing="ij"))

    @cached_property
    def _k(self) -> np.ndarray:
        return np.fft.fftfreq(self.n, d=1.0 / self.n)

    def first_symbol(self, axis: int) -> np.ndarray:
        """Broadcastable ``2*pi*i*k`` along ``axis`` with the Nyquist mode zeroed."""
        k = self._k.copy()
        k[self.n // 2] = 0.0
        return self._along(2j * np.pi * k, axis)

    def second_symbol(self, axis: int) -> np.ndarray:
        """Broadcastable ``-(2*pi*k)^2`` along ``axis``, Nyquist retained."""
        return self._along(-((2 * np.pi * self._k) ** 2), axis)

    def laplace_symbol(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for ax in range(self.dim):
            out = out + self.second_symbol(ax)
        return out

    def _along(self, vec: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * self.dim
        shape[axis] = self.n
        return vec.reshape(shape)

    def metadata(self) -> dict:
        return {"dim": self.dim, "n": self.n}


@dataclass(frozen=True, eq=False)
class PeriodicField:
    """Samples of a Y-periodic field at the nodes of a :class:`TorusGrid`."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[vals.ndim - self.grid.dim :] != self.grid.shape:
            raise GridMismatch(
                f"values of shape {vals.shape} do not end with grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise NonFiniteField("field contains non-finite samples")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def component_shape(self) -> tuple[int, ...]:
        return self.values.shape[: self.values.ndim - self.grid.dim]

    @property
    def rank(self) -> int:
        return len(self.component_shape)

    @property
    def kind(self) -> str:
        return {0: "scalar", 1: "vector", 2: "matrix"}.get(self.rank, f"rank{self.rank}")

    def __getitem__(self, idx) -> "PeriodicField":
        """Select a component, e.g. ``A[0, 1]`` is the scalar field A_12."""
        if self.rank == 0:
            raise TypeError("cannot index components of a scalar field")
        return PeriodicField(self.grid, self.values[idx])

    def __repr__(self):
        return f"PeriodicField({self.kind}, dim={self.grid.dim}, n={self.grid.n})"

    @classmethod
    def from_function(cls, grid: TorusGrid, func: Callable) -> "PeriodicField":
        """Sample ``func(*coords)``; constants broadcast to the grid."""
        coords = grid.coords()
        vals = np.asarray(func(*coords), dtype=float)
        comp = vals.shape[: vals.ndim - grid.dim] if vals.ndim >= grid.dim else ()
        if vals.shape[vals.ndim - grid.dim :] != grid.shape or vals.ndim < grid.dim:
            vals = np.broadcast_to(vals[(...,) + (None,) * grid.dim], comp + grid.shape)
        return cls(grid, vals)

    @classmethod
    def constant(cls, grid: TorusGrid, value) -> "PeriodicField":
        value = np.asarray(value, dtype=float)
        return cls(grid, np.broadcast_to(value[(...,) + (None,) * grid.dim], value.shape + grid.shape))

    def evaluate(self, points: Sequence[np.ndarray]) -> np.ndarray:
        """Trigonometric interpolant on the tensor grid ``points[0] x points[1] x ...``.

        Each entry of ``points`` is a 1D array of cell coordinates (taken
        modulo 1).  Returns component_shape + (len(p0), len(p1), ...).
        """
        if len(points) != self.grid.dim:
            raise GridMismatch("need one coordinate array per axis")
        n = self.grid.n
        coef = np.fft.fftn(self.values, axes=self._axes()) / n**self.grid.dim
        k = np.fft.fftfreq(n, d=1.0 / n)
        out = coef
        for ax, p in enumerate(points):
            p = np.asarray(p, dtype=float) % 1.0
            basis = np.exp(2j * np.pi * np.outer(p, k))
            # split Nyquist energy symmetrically so the interpolant stays real
            basis[:, n // 2] = np.cos(np.pi * n * p)
            axis = out.ndim - self.grid.dim + ax
            out = np.moveaxis(np.tensordot(out, basis, axes=([axis], [1])), -1, axis)
        return out.real

    def _axes(self) -> tuple[int, ...]:
        nd = self.values.ndim
        return tuple(range(nd - self.grid.dim, nd))


def _check_scalar(f: PeriodicField):
    if f.rank != 0:
        raise ValueError(f"expected a scalar field, got {f.kind}")


def _fft(values: np.ndarray, dim: int) -> np.ndarray:
    return np.fft.fftn(values, axes=tuple(range(values.ndim - dim, values.ndim)))


def _ifft(values: np.ndarray, dim: int) -> np.ndarray:
    return np.fft.ifftn(values, axes=tuple(range(values.ndim - dim, values.ndim))).real


def spectral_derivative(f: PeriodicField, axis: int) -> PeriodicField:
    """Partial derivative along ``axis`` by Fourier collocation."""
    _check_scalar(f)
    if not 0 <= axis < f.grid.dim:
        raise IndexError(f"axis {axis} out of range for dim {f.grid.dim}")
    vals = _ifft(_fft(f.values, f.grid.dim) * f.grid.first_symbol(axis), f.grid.dim)
    return PeriodicField(f.grid, vals)


def derivative_array(values: np.ndarray, grid: TorusGrid, axis: int) -> np.ndarray:
    """Array-level first derivative, applied to every leading component."""
    return _ifft(_fft(values, grid.dim) * grid.first_symbol(axis), grid.dim)


def second_derivative(f: PeriodicField, axis_i: int, axis_j: int) -> PeriodicField:
    _check_scalar(f)
    g = f.grid
    if axis_i == axis_j:
        sym = g.second_symbol(axis_i)
    else:
        sym = g.first_symbol(axis_i) * g.first_symbol(axis_j)
    return PeriodicField(g, _ifft(_fft(f.values, g.dim) * sym, g.dim))


def gradient(f: PeriodicField) -> PeriodicField:
    """Vector field of first partial derivatives; works componentwise for tensors."""
    g = f.grid
    hat = _fft(f.values, g.dim)
    parts = [_ifft(hat * g.first_symbol(ax), g.dim) for ax in range(g.dim)]
    # derivative index goes last among the components: (grad v)_{..., k} = d_k v_...
    return PeriodicField(g, np.stack(parts, axis=f.rank))


def divergence(f: PeriodicField) -> PeriodicField:
    """Contract the first component index with the derivative.

    Vector: ``sum_i d_i v_i``.  Matrix: ``(div M)_j = sum_i d_i M_ij``.
    Rank-3: ``(div phi)_{ij} = sum_k d_k phi_{kij}``.
    """
    if f.rank == 0:
        raise ValueError("divergence of a scalar field is undefined")
    g = f.grid
    if f.component_shape[0] != g.dim:
        raise GridMismatch("leading component dimension must equal the grid dimension")
    out = sum(derivative_array(f.values[i], g, i) for i in range(g.dim))
    return PeriodicField(g, out)


def laplacian(f: PeriodicField) -> PeriodicField:
    g = f.grid
    return PeriodicField(g, _ifft(_fft(f.values, g.dim) * g.laplace_symbol(), g.dim))


def cell_average(f: PeriodicField) -> float | np.ndarray:
    """Mean over the unit cell; exact for band-limited fields.

    Returns a float for scalar fields and an array of component means otherwise.
    """
    axes = tuple(range(f.values.ndim - f.grid.dim, f.values.ndim))
    m = f.values.mean(axis=axes)
    return float(m) if f.rank == 0 else m


def solve_cell_poisson(rhs: PeriodicField) -> PeriodicField:
    """Zero-mean periodic solution of ``Laplace(u) = rhs``."""
    _check_scalar(rhs)
    mean = cell_average(rhs)
    if abs(mean) > MEAN_TOL:
        raise NonZeroMean(f"right-hand side has mean {mean:.3e}; de-mean it first")
    g = rhs.grid
    sym = g.laplace_symbol()
    sym.flat[0] = 1.0
    hat = _fft(rhs.values, g.dim) / sym
    hat.flat[0] = 0.0
    return PeriodicField(g, _ifft(hat, g.dim))


def field_norm_inf(f: PeriodicField) -> float:
    return float(np.max(np.abs(f.values))) if f.values.size else 0.0


def high_band_energy_fraction(f: PeriodicField) -> float:
    """Share of spectral energy held by the top third of |k| (per-axis max norm)."""
    g = f.grid
    hat = np.abs(_fft(f.values, g.dim)) ** 2
    kmax = np.zeros(g.shape)
    for ax in range(g.dim):
        kmax = np.maximum(kmax, np.abs(g._along(g._k, ax)))
    high = kmax > (g.n / 2) * (2.0 / 3.0)
    total = hat.sum()
    if total == 0:
        return 0.0
    return float(hat[..., high].sum() / total)


def _component_labels(comp_shape: tuple[int, ...], name: str) -> list[str]:
    if not comp_shape:
        return [name]
    return [name + "_" + "".join(str(i + 1) for i in idx) for idx in np.ndindex(*comp_shape)]


def write_field_csv(path, field: PeriodicField, name: str = "f") -> None:
    """One row per node in lexicographic order, one column per component."""
    comps = field.component_shape
    flat = field.values.reshape((-1, field.grid.size)) if comps else field.values.reshape(1, -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_component_labels(comps, name))
        for row in flat.T:
            w.writerow([repr(float(v)) for v in row])


def read_field_csv(path, dim: int, component_shape: tuple[int, ...] = ()) -> PeriodicField:
    """Import a sampled field written in the node-per-row CSV layout.

    Samples are treated as a trigonometric interpolant; an
    :class:`AliasingWarning` is emitted when more than 1% of the spectral
    energy sits in the top third of the resolved band.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body if r], dtype=float)
    ncomp = int(np.prod(component_shape)) if component_shape else 1
    if data.shape[1] != ncomp or len(header) != ncomp:
        raise GridMismatch(f"expected {ncomp} columns, found {data.shape[1]}")
    n = round(len(data) ** (1.0 / dim))
    if n**dim != len(data):
        raise GridMismatch(f"{len(data)} rows is not a perfect {dim}-th power")
    grid = TorusGrid(dim, n)
    vals = data.T.reshape(component_shape + grid.shape)
    field = PeriodicField(grid, vals)
    for idx in np.ndindex(*component_shape) if component_shape else [()]:
        comp = PeriodicField(grid, vals[idx]) if idx else field
        frac = high_band_energy_fraction(comp)
        if frac > 0.01:
            warnings.warn(
                f"{path}: component {idx} has {frac:.1%} of its energy in the top third "
                "of the spectrum; samples may be aliased",
                AliasingWarning,
                stacklevel=2,
            )
    return field
