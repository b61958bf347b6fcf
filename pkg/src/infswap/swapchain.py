"""Product-space generators for K coupled temperatures.

Conventions
-----------
Product states are K-tuples ``x = (x_1, ..., x_K)`` of grid indices, flattened
row-major (``x_1`` is the slowest index).  A permutation ``sigma`` is stored as
the tuple ``(sigma(1), ..., sigma(K))`` (zero based) and acts on states by
``(x^sigma)_i = x_{sigma^{-1}(i)}``, so that under ``x^sigma`` particle ``j``
sits at temperature ``sigma(j)``.  The identity permutation is always first.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from .model import (
    Grid,
    PotentialSpec,
    ReversibleGenerator,
    SingleTempChain,
    glauber_rates,
)

MAX_PRODUCT_SIZE = 10**6


class ProductChain:
    """K independent Glauber chains on one grid, one per temperature."""

    def __init__(self, grid: Grid, potential: PotentialSpec, temps):
        temps = tuple(float(t) for t in temps)
        if len(temps) < 1:
            raise ValueError("need at least one temperature")
        if grid.n ** len(temps) > MAX_PRODUCT_SIZE:
            raise ValueError(f"product space {grid.n}^{len(temps)} exceeds {MAX_PRODUCT_SIZE} states")
        self.grid = grid
        self.potential = potential
        self.temps = temps
        self.components: tuple[SingleTempChain, ...] = tuple(
            glauber_rates(potential, grid, t) for t in temps
        )

    @property
    def K(self) -> int:
        return len(self.temps)

    @property
    def N(self) -> int:
        return self.grid.n

    @property
    def size(self) -> int:
        return self.N**self.K

    # -- index codec -------------------------------------------------------

    def index(self, state) -> int:
        state = tuple(int(s) for s in state)
        if len(state) != self.K or not all(0 <= s < self.N for s in state):
            raise ValueError(f"invalid product state {state}")
        return int(np.ravel_multi_index(state, (self.N,) * self.K))

    def state(self, index: int) -> tuple:
        return tuple(int(i) for i in np.unravel_index(int(index), (self.N,) * self.K))

    @cached_property
    def states(self) -> np.ndarray:
        """``(size, K)`` array of component indices for every flat index."""
        grids = np.indices((self.N,) * self.K).reshape(self.K, -1).T
        grids.setflags(write=False)
        return grids

    # -- permutations ------------------------------------------------------

    @cached_property
    def perms(self) -> tuple:
        return tuple(itertools.permutations(range(self.K)))

    @cached_property
    def perm_index(self) -> np.ndarray:
        """``perm_index[s, x]`` is the flat index of ``x^sigma_s``."""
        out = np.empty((len(self.perms), self.size), dtype=np.int64)
        dims = (self.N,) * self.K
        for s, p in enumerate(self.perms):
            inv = np.argsort(p)
            out[s] = np.ravel_multi_index(tuple(self.states[:, inv].T), dims)
        out.setflags(write=False)
        return out

    def permute(self, state, sigma) -> tuple:
        inv = np.argsort(sigma)
        return tuple(int(state[i]) for i in inv)

    # -- measures and weights ---------------------------------------------

    @cached_property
    def log_marginals(self) -> np.ndarray:
        return np.log(np.vstack([c.stationary for c in self.components]))

    @cached_property
    def log_mu(self) -> np.ndarray:
        lm = self.log_marginals
        return sum(lm[k][self.states[:, k]] for k in range(self.K))

    @cached_property
    def mu(self) -> np.ndarray:
        out = np.exp(self.log_mu)
        out.setflags(write=False)
        return out

    @cached_property
    def rho_perm(self) -> np.ndarray:
        """``rho_perm[s, x] = rho(x^sigma_s)``; columns sum to one."""
        logs = self.log_mu[self.perm_index]
        out = np.exp(logs - logsumexp(logs, axis=0))
        out.setflags(write=False)
        return out

    @property
    def rho_vector(self) -> np.ndarray:
        """``rho(x)`` for every product state (identity permutation)."""
        return self.rho_perm[0]

    @cached_property
    def temp_weights(self) -> np.ndarray:
        """``w[j, k, x]``: weight with which particle j uses temperature k at x."""
        w = np.zeros((self.K, self.K, self.size))
        for s, p in enumerate(self.perms):
            for j in range(self.K):
                w[j, p[j]] += self.rho_perm[s]
        return w

    # -- generator assembly -------------------------------------------------

    def _assemble(self, weights) -> sp.csr_matrix:
        """Single-component moves; particle j moves with ``sum_k weights[j,k] * Gamma^k``."""
        rows, cols, vals = [], [], []
        flat = np.arange(self.size)
        stride = self.N ** np.arange(self.K - 1, -1, -1)
        edges = np.argwhere(self.grid.adjacency)
        for j in range(self.K):
            for a, b in edges:
                sel = flat[self.states[:, j] == a]
                rate = sum(
                    weights[j, k][sel] * self.components[k].rates[a, b]
                    for k in range(self.K)
                )
                rows.append(sel)
                cols.append(sel + (b - a) * stride[j])
                vals.append(rate)
        rows, cols, vals = map(np.concatenate, (rows, cols, vals))
        keep = vals > 0
        return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(self.size, self.size))


def make_product_chain(grid: Grid, potential: PotentialSpec, temps) -> ProductChain:
    return ProductChain(grid, potential, temps)


@dataclass(frozen=True)
class InsGenerator(ReversibleGenerator):
    """Infinite-swapping rate matrix; ``stationary`` is the symmetrized measure."""


def _as_state(chain: ProductChain, state) -> tuple:
    state = tuple(int(s) for s in state)
    chain.index(state)
    return state


def rho(chain: ProductChain, state, sigma=None) -> float:
    """Relative weight ``mu(x^sigma) / sum_sigma' mu(x^sigma')``."""
    state = _as_state(chain, state)
    sigma = tuple(range(chain.K)) if sigma is None else tuple(sigma)
    s = chain.perms.index(sigma)
    return float(chain.rho_perm[s, chain.index(state)])


def swap_prob_b(chain: ProductChain, state) -> float:
    """Metropolis swap acceptance ``1 ^ mu(x_2, x_1) / mu(x_1, x_2)``."""
    if chain.K != 2:
        raise ValueError("pairwise swaps need exactly two temperatures")
    state = _as_state(chain, state)
    i = chain.index(state)
    j = chain.index(state[::-1])
    return float(min(1.0, np.exp(chain.log_mu[j] - chain.log_mu[i])))


def uncoupled_generator(chain: ProductChain) -> ReversibleGenerator:
    weights = np.zeros((chain.K, chain.K, chain.size))
    for k in range(chain.K):
        weights[k, k] = 1.0
    return ReversibleGenerator(chain._assemble(weights), chain.mu)


def pt_generator(chain: ProductChain, a: float) -> ReversibleGenerator:
    """Uncoupled dynamics plus swaps ``(x_1, x_2) -> (x_2, x_1)`` at rate ``a * b``."""
    if chain.K != 2:
        raise ValueError("parallel tempering is implemented for two temperatures only")
    if not (np.isfinite(a) and a >= 0):
        raise ValueError("swap rate a must be finite and nonnegative")
    base = uncoupled_generator(chain)
    if a == 0:
        return base
    swapped = chain.perm_index[1]
    off = swapped != np.arange(chain.size)
    src = np.flatnonzero(off)
    b = np.minimum(1.0, np.exp(chain.log_mu[swapped[src]] - chain.log_mu[src]))
    swaps = sp.csr_matrix((a * b, (src, swapped[src])), shape=(chain.size, chain.size))
    return ReversibleGenerator((base.rates + swaps).tocsr(), chain.mu)


def ins_generator(chain: ProductChain) -> InsGenerator:
    """Rate matrix of the infinite-swapping limit process.

    A move of particle j from ``x_j`` to ``y_j`` happens at rate
    ``sum_sigma rho(x^sigma) Gamma^{sigma(j)}_{x_j, y_j}``; moves of two or more
    particles at once have rate zero.
    """
    return InsGenerator(chain._assemble(chain.temp_weights), symmetrized_measure(chain))


def symmetrized_measure(chain: ProductChain) -> np.ndarray:
    """Average of ``mu`` over all permutations of the coordinates."""
    out = chain.mu[chain.perm_index].mean(axis=0)
    out.setflags(write=False)
    return out


def product_measure(chain: ProductChain) -> np.ndarray:
    return chain.mu


def implied_potential(chain: ProductChain, state) -> float:
    """Two-particle energy ``-log(sum over assignments of exp(-V/tau))``."""
    if chain.K != 2:
        raise ValueError("implied potential is defined for two temperatures")
    y1, y2 = _as_state(chain, state)
    v = chain.potential.values
    t1, t2 = chain.temps
    return float(-np.logaddexp(-v[y1] / t1 - v[y2] / t2, -v[y2] / t1 - v[y1] / t2))


def n_perms(K: int) -> int:
    return math.factorial(K)
