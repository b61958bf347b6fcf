"""Ergodic and finite-horizon control problems with running cost ``h``.

Substituting ``V = exp(-W)`` in the stationary Bellman equation

    0 = sum_z r(y, z) [1 - exp(-(W(z) - W(y)))] - gamma + h(y)

gives the linear eigenproblem ``(diag(q + h) - R) V = gamma V``.  For a chain
reversible with respect to ``mbar`` the similarity transform
``D^{1/2} (.) D^{-1/2}``, ``D = diag(mbar)``, makes it symmetric, and the
optimal cost is its smallest eigenvalue (the one with a positive
eigenvector).  The same substitution turns the finite-horizon equation into a
linear ODE that is integrated here with exact matrix exponentials.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import ReversibleGenerator

log = logging.getLogger(__name__)

DENSE_LIMIT = 3000
REVERSIBILITY_TOL = 1e-9


class SolverError(RuntimeError):
    """A numerical solve failed or produced an invalid result."""


@dataclass(frozen=True)
class ErgodicSolution:
    gamma: float
    W: np.ndarray
    nu_bar: np.ndarray
    u_bar: sp.csr_matrix
    h: np.ndarray


@dataclass(frozen=True)
class FiniteHorizonSolution:
    """Value function on a time grid; ``W[i]`` is ``W^T(times[i], .)``."""

    times: np.ndarray
    W: np.ndarray

    @property
    def V(self) -> np.ndarray:
        return np.exp(-self.W)

    def at_zero(self) -> np.ndarray:
        return self.W[0]


def _cost_field(h, size) -> np.ndarray:
    h = np.broadcast_to(np.asarray(h, dtype=float), (size,)).copy()
    if not np.all(np.isfinite(h)):
        raise ValueError("cost field must be finite")
    return h


def check_reversible(generator: ReversibleGenerator, tol: float = REVERSIBILITY_TOL):
    rates = sp.csr_matrix(generator.rates)
    flux = sp.diags(generator.stationary) @ rates
    gap = abs(flux - flux.T).max() if flux.nnz else 0.0
    if gap > tol * max(abs(flux).max(), 1e-300):
        raise ValueError("generator is not reversible with respect to its stationary measure")


def _symmetrized(generator: ReversibleGenerator, h):
    """``diag(q + h) - D^{1/2} R D^{-1/2}`` as a symmetric matrix."""
    d = np.sqrt(generator.stationary)
    rates = sp.csr_matrix(generator.rates)
    sym = sp.diags(d) @ rates @ sp.diags(1.0 / d)
    sym = 0.5 * (sym + sym.T)
    return (sp.diags(generator.exit_rates + h) - sym).tocsr()


def _smallest_eigpair(H: sp.csr_matrix, h: np.ndarray):
    n = H.shape[0]
    if n <= DENSE_LIMIT:
        w, v = sla.eigh(H.toarray(), subset_by_index=[0, 0])
        return float(w[0]), v[:, 0]
    # gamma >= min h, so a shift just below it targets the bottom of the spectrum
    sigma = float(h.min()) - 1e-3 * max(1.0, abs(float(h.min())))
    w, v = spla.eigsh(H.tocsc(), k=1, sigma=sigma, which="LM", tol=1e-14)
    return float(w[0]), v[:, 0]


def _polish(generator: ReversibleGenerator, h, gamma: float, V: np.ndarray, steps: int = 2):
    """Inverse iteration on ``diag(q + h) - R`` acting on ``V = exp(-W)`` itself.

    The symmetric eigenvector carries a factor ``mbar^{1/2}``, so states with
    tiny stationary mass are only resolved to absolute precision there.
    ``V`` has a far smaller dynamic range, and a step or two here brings the
    Bellman residual to rounding level at every state.
    """
    n = V.size
    A = (sp.diags(generator.exit_rates + h) - sp.csr_matrix(generator.rates)).tocsc()
    weights = generator.stationary
    for _ in range(steps):
        shift = gamma - 1e-13 * max(1.0, abs(gamma))
        shifted = A - shift * sp.identity(n, format="csc")
        if n <= DENSE_LIMIT:
            new = sla.lu_solve(sla.lu_factor(shifted.toarray()), V)
        else:
            new = spla.splu(shifted).solve(V)
        if not np.all(np.isfinite(new)):
            break
        new = np.abs(new)
        new /= new.max()
        if np.any(new <= 0):
            break
        V = new
        wv = weights * V
        gamma = float(wv @ (A @ V) / (wv @ V))
    return gamma, V


def solve_ergodic(generator: ReversibleGenerator, h) -> ErgodicSolution:
    """Optimal average cost ``gamma`` and value function ``W`` for running cost ``h``.

    ``W`` is normalized so that ``nu_bar = mbar * exp(-2 W)`` sums to one.
    """
    check_reversible(generator)
    h = _cost_field(h, generator.size)
    H = _symmetrized(generator, h)
    gamma, phi = _smallest_eigpair(H, h)
    phi = np.abs(phi)
    if np.any(phi <= 0):
        raise SolverError("principal eigenvector has vanishing entries; chain not irreducible?")
    V = phi / np.sqrt(generator.stationary)
    gamma, V = _polish(generator, h, gamma, V / V.max())
    # additive constant chosen so that mbar * exp(-2W) sums to one
    W = -np.log(V) + 0.5 * np.log(generator.stationary @ (V * V))
    nu_bar = generator.stationary * V * V
    nu_bar /= nu_bar.sum()
    u_bar = _tilted_rates(generator, W)
    return ErgodicSolution(gamma, W, nu_bar, u_bar, h)


def _tilted_rates(generator: ReversibleGenerator, W) -> sp.csr_matrix:
    rates = sp.coo_matrix(generator.rates)
    vals = rates.data * np.exp(-(W[rates.col] - W[rates.row]))
    return sp.csr_matrix((vals, (rates.row, rates.col)), shape=rates.shape)


def controlled_rates(solution: ErgodicSolution, generator: ReversibleGenerator) -> sp.csr_matrix:
    """``u(y, z) = r(y, z) exp(-(W(z) - W(y)))``."""
    return _tilted_rates(generator, solution.W)


def bellman_residual(solution: ErgodicSolution, generator: ReversibleGenerator, h=None) -> np.ndarray:
    """Per-state residual of the stationary Bellman equation."""
    h = solution.h if h is None else _cost_field(h, generator.size)
    rates = sp.coo_matrix(generator.rates)
    W = solution.W
    terms = rates.data * -np.expm1(-(W[rates.col] - W[rates.row]))
    flow = np.bincount(rates.row, weights=terms, minlength=generator.size)
    return flow - solution.gamma + h


def fixed_point_residual(solution: ErgodicSolution, generator: ReversibleGenerator, h=None) -> float:
    """Relative residual of the first-order condition for ``theta = exp(-2W)``.

    At the optimum ``theta^{1/2}(x) (q(x) + h(x) - gamma) = sum_y r(x, y) theta^{1/2}(y)``;
    squared, this is the fixed point ``theta = (R theta^{1/2})^2 / (q + h - gamma)^2``.
    The equation is homogeneous, so the normalization of ``W`` does not matter.
    """
    h = solution.h if h is None else _cost_field(h, generator.size)
    W = solution.W - solution.W.min()
    half = np.exp(-W)
    theta = half * half
    rates = sp.csr_matrix(generator.rates)
    denom = generator.exit_rates + h - solution.gamma
    rhs = (rates @ half) ** 2 / denom**2
    return float(np.max(np.abs(theta - rhs) / theta))


def solve_finite_horizon(generator: ReversibleGenerator, h, T: float, steps: int = 1000) -> FiniteHorizonSolution:
    """Backward solve of ``V_t + L V - h V = 0``, ``V(T) = 1``; returns ``W = -log V``.

    Each step applies ``exp(dt (L - diag h))`` exactly and rescales, so ``W``
    stays representable even when ``V`` itself would underflow.
    """
    if not (np.isfinite(T) and T > 0):
        raise ValueError("horizon T must be positive")
    steps = int(steps)
    if steps < 1:
        raise ValueError("need at least one step")
    n = generator.size
    h = _cost_field(h, n)
    A = sp.csr_matrix(generator.matrix) - sp.diags(h)
    dt = T / steps
    if n <= DENSE_LIMIT:
        prop = sla.expm(dt * A.toarray())
        advance = prop.__matmul__
    else:
        Adt = (dt * A).tocsr()
        advance = lambda v: spla.expm_multiply(Adt, v)  # noqa: E731
    W = np.empty((steps + 1, n))
    v = np.ones(n)
    log_scale = 0.0
    W[steps] = 0.0
    for i in range(steps - 1, -1, -1):
        v = advance(v)
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise SolverError("V lost positivity; refine the time grid")
        m = v.max()
        v = v / m
        log_scale += np.log(m)
        W[i] = -np.log(v) - log_scale
    times = np.linspace(0.0, T, steps + 1)
    return FiniteHorizonSolution(times, W)


@dataclass(frozen=True)
class RepresentationReport:
    initial: int
    horizon: float
    replicas: int
    mc_value: float
    mc_stderr: float
    ode_value: float

    @property
    def z_score(self) -> float:
        if self.mc_stderr == 0:
            return 0.0 if self.mc_value == self.ode_value else np.inf
        return abs(self.mc_value - self.ode_value) / self.mc_stderr

    @property
    def agrees(self) -> bool:
        return self.z_score <= 3.0


def verify_representation(generator: ReversibleGenerator, h, T: float, replicas: int,
                          seed: int = 0, initial: int = 0, steps: int = 200) -> RepresentationReport:
    """Monte Carlo ``-log E exp(-int_0^T h)`` against the ODE value ``W^T(0, initial)``.

    The standard error is propagated through the logarithm with the delta
    method.
    """
    from .simulate import path_integrals

    if generator.size > 16:
        raise ValueError("representation check is meant for chains with at most 16 states")
    h = _cost_field(h, generator.size)
    weights = np.exp(-path_integrals(generator, h, initial, T, replicas, seed))
    mean = weights.mean()
    se = weights.std(ddof=1) / np.sqrt(weights.size) / mean if weights.size > 1 else np.inf
    ode = solve_finite_horizon(generator, h, T, steps).at_zero()[initial]
    return RepresentationReport(int(initial), float(T), int(replicas), float(-np.log(mean)), float(se), float(ode))
