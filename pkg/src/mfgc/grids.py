"""Uniform periodic grids on the unit flat torus and their discrete calculus.

The spatial domain is the d-dimensional torus of unit side (d = 1 or 2),
discretized by n equispaced nodes per dimension, x_i = i*h with h = 1/n.
All index arithmetic wraps modulo n.  Time is a uniform grid on [0, T]
with nt steps.

The discrete operators (centered gradient, centered conservative
divergence, (2d+1)-point Laplacian, rectangle-rule quadrature) are chosen
so that the summation-by-parts identities hold exactly up to roundoff:

    sum_x div(w)     = 0,
    sum_x lap(s)     = 0,
    <s, div(w)>_h    = -<grad(s), w>_h.

These identities are what the variational/duality layer of the solver
relies on, so they are exact by construction rather than approximate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GridError(ValueError):
    """Invalid grid construction or mismatched grid data."""


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic spatial grid on the unit torus.

    Attributes:
        d: spatial dimension, 1 or 2.
        n: number of nodes per dimension; spacing h = 1/n.
    """

    d: int
    n: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise GridError(f"unsupported dimension: d={self.d} (must be 1 or 2)")
        if self.n < 4:
            raise GridError(f"grid too coarse: n={self.n} (must be >= 4)")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def num_nodes(self) -> int:
        return self.n**self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    def axis_coords(self) -> np.ndarray:
        """Node coordinates along one axis: i*h for i = 0..n-1."""
        return np.arange(self.n) * self.h

    def coords(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays, each of shape ``self.shape`` (ij indexing)."""
        ax = self.axis_coords()
        if self.d == 1:
            return (ax,)
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        return (xx, yy)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid t_j = j*dt on [0, T] with dt = T/nt."""

    T: float
    nt: int

    def __post_init__(self):
        if not (self.T > 0 and np.isfinite(self.T)):
            raise GridError(f"horizon must be positive and finite, got T={self.T}")
        if self.nt < 1:
            raise GridError(f"need at least one time step, got nt={self.nt}")

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)


def make_grids(d: int, n: int, T: float, nt: int) -> tuple[TorusGrid, TimeGrid]:
    """Build the spatial and time grids, validating all parameters."""
    return TorusGrid(d=d, n=n), TimeGrid(T=float(T), nt=nt)


def _check_spatial(grid: TorusGrid, values: np.ndarray, label: str = "slice") -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape[: grid.d] != grid.shape or values.ndim < grid.d:
        raise GridError(f"{label} has shape {values.shape}, expected leading {grid.shape}")
    if not np.all(np.isfinite(values)):
        raise GridError(f"{label} contains non-finite values")
    return values


@dataclass
class ScalarField:
    """Grid-sampled scalar trajectory: data[j] is the slice at time index j.

    A full nodal trajectory carries nt+1 slices; interval-collocated data
    (sources, couplings) carries nt slices.  ``data`` has shape
    (num_slices, n) in 1-D or (num_slices, n, n) in 2-D.
    """

    grid: TorusGrid
    tgrid: TimeGrid
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape[1:] != self.grid.shape:
            raise GridError(
                f"field slices have shape {self.data.shape[1:]}, expected {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.data)):
            raise GridError("field contains non-finite values")

    @property
    def num_slices(self) -> int:
        return self.data.shape[0]

    @classmethod
    def zeros(cls, grid: TorusGrid, tgrid: TimeGrid, num_slices: int | None = None):
        ns = tgrid.nt + 1 if num_slices is None else num_slices
        return cls(grid, tgrid, np.zeros((ns,) + grid.shape))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.tgrid, self.data.copy())


@dataclass
class VectorField:
    """Grid-sampled R^d-valued trajectory; data shape (num_slices, *grid.shape, d)."""

    grid: TorusGrid
    tgrid: TimeGrid
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        expected = self.grid.shape + (self.grid.d,)
        if self.data.shape[1:] != expected:
            raise GridError(
                f"vector field slices have shape {self.data.shape[1:]}, expected {expected}"
            )
        if not np.all(np.isfinite(self.data)):
            raise GridError("vector field contains non-finite values")

    @property
    def num_slices(self) -> int:
        return self.data.shape[0]

    @classmethod
    def zeros(cls, grid: TorusGrid, tgrid: TimeGrid, num_slices: int | None = None):
        ns = tgrid.nt + 1 if num_slices is None else num_slices
        return cls(grid, tgrid, np.zeros((ns,) + grid.shape + (grid.d,)))

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.tgrid, self.data.copy())


def integrate(grid: TorusGrid, values: np.ndarray) -> float:
    """Rectangle-rule integral over the torus: h^d * sum of node values.

    Exact for constants and for trigonometric polynomials below the
    Nyquist frequency.
    """
    values = _check_spatial(grid, values)
    return float(np.sum(values) * grid.cell_volume)


def inner(grid: TorusGrid, a: np.ndarray, b: np.ndarray) -> float:
    """Discrete L2 pairing h^d * sum(a * b); for vectors, contracts the last axis."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.sum(a * b) * grid.cell_volume)


def gradient(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    """Centered periodic gradient; component j is (s[i+e_j] - s[i-e_j]) / 2h."""
    values = _check_spatial(grid, values)
    out = np.empty(grid.shape + (grid.d,))
    inv2h = 0.5 / grid.h
    for ax in range(grid.d):
        out[..., ax] = (np.roll(values, -1, axis=ax) - np.roll(values, 1, axis=ax)) * inv2h
    return out


def divergence(grid: TorusGrid, vec: np.ndarray) -> np.ndarray:
    """Centered periodic divergence of a vector slice; telescopes to zero total."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != grid.shape + (grid.d,):
        raise GridError(f"vector slice has shape {vec.shape}, expected {grid.shape + (grid.d,)}")
    if not np.all(np.isfinite(vec)):
        raise GridError("vector slice contains non-finite values")
    out = np.zeros(grid.shape)
    inv2h = 0.5 / grid.h
    for ax in range(grid.d):
        comp = vec[..., ax]
        out += (np.roll(comp, -1, axis=ax) - np.roll(comp, 1, axis=ax)) * inv2h
    return out


def laplacian(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    """Standard (2d+1)-point periodic Laplacian."""
    values = _check_spatial(grid, values)
    out = np.zeros(grid.shape)
    invh2 = 1.0 / grid.h**2
    for ax in range(grid.d):
        out += (np.roll(values, -1, axis=ax) - 2.0 * values + np.roll(values, 1, axis=ax)) * invh2
    return out


def periodic_convolve(grid: TorusGrid, values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Discrete periodic convolution (m * k)(x_i) = h^d sum_j m(x_{i-j}) k(x_j).

    Computed by FFT; commutative and bilinear. A constant kernel c maps m
    to the constant c * integrate(m).
    """
    values = _check_spatial(grid, values, "values")
    kernel = _check_spatial(grid, kernel, "kernel")
    if grid.d == 1:
        conv = np.fft.ifft(np.fft.fft(values) * np.fft.fft(kernel)).real
    else:
        conv = np.fft.ifft2(np.fft.fft2(values) * np.fft.fft2(kernel)).real
    return conv * grid.cell_volume


def reflect_kernel(grid: TorusGrid, kernel: np.ndarray) -> np.ndarray:
    """Kernel x -> kernel(-x) on the periodic grid (index negation mod n)."""
    kernel = _check_spatial(grid, kernel, "kernel")
    out = kernel
    for ax in range(grid.d):
        out = np.flip(out, axis=ax)
        out = np.roll(out, 1, axis=ax)
    return out


def sample_on_grid(grid: TorusGrid, fn, *args) -> np.ndarray:
    """Evaluate ``fn(*coords, *args)`` on the node coordinate arrays."""
    return np.broadcast_to(np.asarray(fn(*grid.coords(), *args), dtype=float), grid.shape).copy()
