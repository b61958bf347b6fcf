"""One-dimensional state spaces, potentials and Metropolis (Glauber) rates.

Everything here is a small immutable container around numpy arrays.  The
product-space machinery in :mod:`infswap.swapchain` is built on top of the
single-temperature objects defined in this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


@dataclass(frozen=True)
class Grid:
    """Finite ordered state space with a 0/1 adjacency matrix."""

    points: np.ndarray
    adjacency: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        adjacency = np.asarray(self.adjacency, dtype=np.int8)
        n = points.size
        if points.ndim != 1 or n < 2:
            raise ValueError("a grid needs at least two points")
        if not np.all(np.isfinite(points)):
            raise ValueError("grid points must be finite")
        if np.any(np.diff(points) <= 0):
            raise ValueError("grid points must be strictly increasing")
        if adjacency.shape != (n, n):
            raise ValueError(f"adjacency must be {n}x{n}, got {adjacency.shape}")
        if not np.isin(adjacency, (0, 1)).all():
            raise ValueError("adjacency entries must be 0 or 1")
        if np.any(adjacency != adjacency.T) or np.any(np.diag(adjacency)):
            raise ValueError("adjacency must be symmetric with zero diagonal")
        ncomp, _ = connected_components(adjacency, directed=False)
        if ncomp != 1:
            raise ValueError("adjacency graph must be connected")
        points.setflags(write=False)
        adjacency.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "adjacency", adjacency)

    @property
    def n(self) -> int:
        return self.points.size

    def describe(self) -> dict:
        """JSON-friendly summary, recorded next to every emitted table."""
        return {
            "lo": float(self.points[0]),
            "hi": float(self.points[-1]),
            "n": self.n,
            "contains_zero": bool(np.any(self.points == 0.0)),
        }


def make_grid(lo: float, hi: float, n: int, adjacency_kind: str = "nearest_neighbor") -> Grid:
    """Equispaced grid on ``[lo, hi]`` with ``n`` points.

    >>> make_grid(-1, 1, 3).points
    array([-1.,  0.,  1.])
    """
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError("grid bounds must be finite")
    if not lo < hi:
        raise ValueError("need lo < hi")
    if int(n) != n or n < 2:
        raise ValueError("need an integer n >= 2")
    if adjacency_kind != "nearest_neighbor":
        raise ValueError(f"unknown adjacency kind {adjacency_kind!r}")
    n = int(n)
    points = np.linspace(lo, hi, n)
    adjacency = np.zeros((n, n), dtype=np.int8)
    idx = np.arange(n - 1)
    adjacency[idx, idx + 1] = 1
    adjacency[idx + 1, idx] = 1
    return Grid(points, adjacency)


def grid_from_adjacency(points, adjacency) -> Grid:
    """Grid with an arbitrary connected 0/1 adjacency (validated)."""
    return Grid(np.asarray(points, dtype=float), np.asarray(adjacency))


@dataclass(frozen=True)
class PotentialSpec:
    """Energies tabulated at the grid points.

    ``values`` keeps the raw energies; ``shifted`` is the same vector with its
    minimum subtracted, which is what gets exponentiated.
    """

    values: np.ndarray
    franz_alpha: Optional[float] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            raise ValueError("potential values must be a finite 1-d array")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shifted(self) -> np.ndarray:
        return self.values - self.values.min()


def franz_values(x, alpha: float):
    """Quartic double well with minima at -1 and ``alpha`` and barrier 1 at 0."""
    x = np.asarray(x, dtype=float)
    return (3 * x**4 - 4 * (alpha - 1) * x**3 - 6 * alpha * x**2) / (2 * alpha + 1) + 1


def franz_potential(grid: Grid, alpha: float) -> PotentialSpec:
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    return PotentialSpec(franz_values(grid.points, alpha), franz_alpha=float(alpha))


def tabulated_potential(grid: Grid, values) -> PotentialSpec:
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n,):
        raise ValueError(f"expected {grid.n} potential values, got {values.shape}")
    return PotentialSpec(values)


@dataclass(frozen=True)
class GibbsMeasure:
    temperature: float
    probs: np.ndarray


def _check_tau(tau):
    if not (np.isfinite(tau) and tau > 0):
        raise ValueError(f"temperature must be positive and finite, got {tau}")


def gibbs(potential: PotentialSpec, grid: Grid, tau: float) -> GibbsMeasure:
    """Normalized ``exp(-V/tau)`` over the grid states."""
    _check_tau(tau)
    if potential.values.size != grid.n:
        raise ValueError("potential and grid sizes differ")
    w = np.exp(-potential.shifted / tau)
    probs = w / w.sum()
    probs.setflags(write=False)
    return GibbsMeasure(float(tau), probs)


@dataclass(frozen=True)
class ReversibleGenerator:
    """Off-diagonal jump rates of a CTMC together with a reversing measure.

    ``rates`` holds only off-diagonal entries (dense ndarray or scipy sparse);
    the full generator with ``-exit_rates`` on the diagonal is ``matrix``.
    """

    rates: object
    stationary: np.ndarray

    @property
    def size(self) -> int:
        return self.stationary.size

    @property
    def exit_rates(self) -> np.ndarray:
        return np.asarray(self.rates.sum(axis=1)).ravel()

    @property
    def matrix(self):
        if sp.issparse(self.rates):
            return (self.rates - sp.diags(self.exit_rates)).tocsr()
        return self.rates - np.diag(self.exit_rates)

    def dense_rates(self) -> np.ndarray:
        return self.rates.toarray() if sp.issparse(self.rates) else np.asarray(self.rates)


@dataclass(frozen=True)
class SingleTempChain(ReversibleGenerator):
    temperature: float = field(default=1.0)


def glauber_rates(potential: PotentialSpec, grid: Grid, tau: float) -> SingleTempChain:
    """Metropolis rates ``exp(-(V(y) - V(x))^+ / tau)`` on adjacent pairs."""
    _check_tau(tau)
    v = potential.values
    uphill = np.maximum(v[None, :] - v[:, None], 0.0)
    rates = np.exp(-uphill / tau) * grid.adjacency
    rates.setflags(write=False)
    return SingleTempChain(rates, gibbs(potential, grid, tau).probs, temperature=float(tau))


def mass_right(measure, grid: Grid) -> float:
    """Probability of the states at or to the right of the origin."""
    probs = measure.probs if isinstance(measure, GibbsMeasure) else np.asarray(measure)
    return float(probs[grid.points >= 0].sum())


def reversible_generator(matrix, stationary, tol: float = 1e-10) -> ReversibleGenerator:
    """Wrap a full generator matrix, checking detailed balance against ``stationary``."""
    stationary = np.asarray(stationary, dtype=float)
    dense = matrix.toarray() if sp.issparse(matrix) else np.array(matrix, dtype=float)
    n = stationary.size
    if dense.shape != (n, n):
        raise ValueError("generator and stationary measure sizes differ")
    if np.any(stationary <= 0) or abs(stationary.sum() - 1) > 1e-12:
        raise ValueError("stationary measure must be strictly positive and normalized")
    rates = dense - np.diag(np.diag(dense))
    if np.any(rates < 0):
        raise ValueError("off-diagonal rates must be nonnegative")
    flux = stationary[:, None] * rates
    scale = max(float(np.abs(flux).max()), 1e-300)
    if np.abs(flux - flux.T).max() > tol * scale:
        raise ValueError("generator is not reversible with respect to the given measure")
    return ReversibleGenerator(sp.csr_matrix(rates) if sp.issparse(matrix) else rates, stationary)
