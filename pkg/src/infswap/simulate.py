"""Continuous-time simulation and occupation-measure accumulators.

Paths are simulated with exponential holding times and rate-proportional jump
choices.  All time integrals are exact sums over holding intervals.  Random
numbers come from a Philox (counter-based) generator; independent replicas get
their own streams spawned from one ``SeedSequence``.
"""

from __future__ import annotations

import bisect
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .measures import tv_distance
from .model import ReversibleGenerator
from .swapchain import ProductChain, ins_generator

BLOCK = 4096


class AbsorbingStateError(RuntimeError):
    pass


def simulation_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def replica_seeds(seed: int, n: int) -> list:
    """Independent child seed sequences for ``n`` replicas."""
    return np.random.SeedSequence(seed).spawn(n)


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-constant path; ``states[i]`` is occupied from ``times[i]`` on.

    ``labels`` carries the permutation index for parallel-tempering paths
    (``None`` otherwise).
    """

    seed: object
    times: np.ndarray
    states: np.ndarray
    horizon: float
    labels: Optional[np.ndarray] = None

    @property
    def n_jumps(self) -> int:
        return self.times.size - 1

    def holding_times(self, upto: Optional[float] = None) -> np.ndarray:
        upto = self.horizon if upto is None else min(upto, self.horizon)
        ends = np.append(self.times[1:], self.horizon)
        return np.clip(np.minimum(ends, upto) - self.times, 0.0, None)


class _JumpTable:
    """Row-wise cumulative jump rates in plain Python lists for a fast inner loop."""

    def __init__(self, rates):
        rates = sp.csr_matrix(rates)
        rates.eliminate_zeros()
        self.indptr = rates.indptr
        self.cols = []
        self.cum = []
        self.total = []
        for i in range(rates.shape[0]):
            lo, hi = rates.indptr[i], rates.indptr[i + 1]
            c = np.cumsum(rates.data[lo:hi])
            self.cols.append(rates.indices[lo:hi].tolist())
            self.cum.append(c.tolist())
            self.total.append(float(c[-1]) if c.size else 0.0)

    def pick(self, x: int, u: float) -> int:
        cum = self.cum[x]
        k = bisect.bisect_right(cum, u * self.total[x])
        return self.cols[x][min(k, len(cum) - 1)]


class _Draws:
    """Block-buffered standard exponentials and uniforms."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self._e, self._u = [], []

    def exp(self) -> float:
        if not self._e:
            self._e = self.rng.standard_exponential(BLOCK).tolist()[::-1]
        return self._e.pop()

    def unif(self) -> float:
        if not self._u:
            self._u = self.rng.random(BLOCK).tolist()[::-1]
        return self._u.pop()


def _rates_of(generator):
    if isinstance(generator, ReversibleGenerator):
        return generator.rates
    m = sp.csr_matrix(generator, dtype=float)
    if abs(np.asarray(m.sum(axis=1)).ravel()).max() > 1e-9 * max(abs(m).max(), 1.0):
        raise ValueError("generator rows must sum to zero")
    return m - sp.diags(m.diagonal())


def jump_table(generator) -> _JumpTable:
    """Precomputed jump table, reusable across many paths of one chain."""
    return _JumpTable(_rates_of(generator))


def _gillespie(table: _JumpTable, x: int, horizon: float, draws: _Draws):
    times, states = [0.0], [x]
    t = 0.0
    while True:
        q = table.total[x]
        if q <= 0:
            raise AbsorbingStateError(f"state {x} has zero exit rate")
        t += draws.exp() / q
        if t >= horizon:
            break
        x = table.pick(x, draws.unif())
        times.append(t)
        states.append(x)
    return times, states


def simulate_ctmc(generator, initial: int, horizon: float, seed=0) -> Trajectory:
    """Gillespie path of the chain on ``[0, horizon]``.

    ``generator`` is a :class:`ReversibleGenerator`, a full generator matrix
    or a table from :func:`jump_table`.  ``seed`` may be an int, a
    ``SeedSequence`` or a ready ``Generator``.
    """
    if not (np.isfinite(horizon) and horizon > 0):
        raise ValueError("horizon must be positive")
    table = generator if isinstance(generator, _JumpTable) else jump_table(generator)
    x = int(initial)
    if not 0 <= x < len(table.total):
        raise ValueError(f"initial state {initial} out of range")
    times, states = _gillespie(table, x, float(horizon), _Draws(simulation_rng(seed)))
    return Trajectory(seed, np.array(times), np.array(states, dtype=np.int64), float(horizon))


def path_integrals(generator, h, initial: int, horizon: float, replicas: int, seed=0) -> np.ndarray:
    """``int_0^T h(X_t) dt`` along ``replicas`` independent paths from ``initial``.

    Paths share one random stream, consumed sequentially, so the result is a
    deterministic function of ``seed``.
    """
    table = jump_table(generator)
    draws = _Draws(simulation_rng(seed))
    h = np.asarray(h, dtype=float).tolist()
    out = np.empty(int(replicas))
    for r in range(out.size):
        times, states = _gillespie(table, int(initial), float(horizon), draws)
        times.append(horizon)
        out[r] = sum(h[s] * (t1 - t0) for s, t0, t1 in zip(states, times, times[1:]))
    return out


@dataclass(frozen=True)
class OccupationAccumulators:
    """Time-normalized occupation statistics of one run (or a merged set).

    ``nu`` is the plain occupation measure of the simulated process, ``eta``
    the weighted measure used for estimation, ``rho`` the fraction of time
    spent in each particle-temperature assignment and ``beta`` its collapse
    onto the temperature used by particle 1.
    """

    time: float
    nu: np.ndarray
    eta: np.ndarray
    rho: np.ndarray
    beta: np.ndarray

    def merge(self, other: "OccupationAccumulators") -> "OccupationAccumulators":
        t = self.time + other.time
        a, b = self.time / t, other.time / t
        return OccupationAccumulators(
            t,
            a * self.nu + b * other.nu,
            a * self.eta + b * other.eta,
            a * self.rho + b * other.rho,
            a * self.beta + b * other.beta,
        )

    def summary(self, target=None) -> dict:
        out = {
            "time": self.time,
            "nu": self.nu.tolist(),
            "eta": self.eta.tolist(),
            "rho": self.rho.tolist(),
            "beta": self.beta.tolist(),
        }
        if target is not None:
            out["tv_eta"] = tv_distance(self.eta, target)
        return out


def beta_from_rho(chain_or_K, rho_T) -> np.ndarray:
    """Fraction of time particle 1 spends at each temperature.

    ``[beta]_k`` sums the assignment weights over permutations sending
    particle 1 to temperature ``k``.
    """
    K = chain_or_K.K if isinstance(chain_or_K, ProductChain) else int(chain_or_K)
    rho_T = np.asarray(rho_T, dtype=float)
    perms = list(itertools.permutations(range(K)))
    if rho_T.shape != (len(perms),):
        raise ValueError(f"expected {len(perms)} permutation weights")
    beta = np.zeros(K)
    for p, w in zip(perms, rho_T):
        beta[p[0]] += w
    return beta


def ins_accumulators(chain: ProductChain, traj: Trajectory, upto: Optional[float] = None) -> OccupationAccumulators:
    """Accumulators of an infinite-swapping path up to time ``upto``."""
    dur = traj.holding_times(upto)
    total = dur.sum()
    x = traj.states
    nu = np.bincount(x, weights=dur, minlength=chain.size) / total
    eta = np.zeros(chain.size)
    rho_T = np.empty(len(chain.perms))
    for s in range(len(chain.perms)):
        w = dur * chain.rho_perm[s][x]
        eta += np.bincount(chain.perm_index[s][x], weights=w, minlength=chain.size)
        rho_T[s] = w.sum()
    eta /= total
    rho_T /= total
    return OccupationAccumulators(float(total), nu, eta, rho_T, beta_from_rho(chain, rho_T))


def pt_accumulators(chain: ProductChain, traj: Trajectory, upto: Optional[float] = None) -> OccupationAccumulators:
    dur = traj.holding_times(upto)
    total = dur.sum()
    x, z = traj.states, traj.labels
    nu = np.bincount(x, weights=dur, minlength=chain.size) / total
    shown = np.where(z == 0, x, chain.perm_index[1][x])
    eta = np.bincount(shown, weights=dur, minlength=chain.size) / total
    rho_T = np.array([dur[z == 0].sum(), dur[z == 1].sum()]) / total
    return OccupationAccumulators(float(total), nu, eta, rho_T, rho_T.copy())


def checkpoint_times(horizon: float, levels: int) -> list:
    """Geometric checkpoints ``T 2^{-k}``, ``k = levels-1, ..., 0`` (increasing)."""
    return [horizon * 2.0 ** (-k) for k in range(levels - 1, -1, -1)]


def simulate_ins(chain: ProductChain, horizon: float, seed=0, initial=None,
                 generator=None) -> tuple[Trajectory, OccupationAccumulators]:
    """Simulate the infinite-swapping process and accumulate its statistics."""
    if chain.K < 2:
        raise ValueError("infinite swapping needs at least two temperatures")
    gen = ins_generator(chain) if generator is None else generator
    start = 0 if initial is None else (initial if np.isscalar(initial) else chain.index(initial))
    traj = simulate_ctmc(gen, start, horizon, seed)
    return traj, ins_accumulators(chain, traj)


def _pt_tables(chain: ProductChain):
    w_id = np.zeros((2, 2, chain.size))
    w_id[0, 0] = w_id[1, 1] = 1.0
    w_sw = np.zeros((2, 2, chain.size))
    w_sw[0, 1] = w_sw[1, 0] = 1.0
    return _JumpTable(chain._assemble(w_id)), _JumpTable(chain._assemble(w_sw))


def simulate_pt(chain: ProductChain, a: float, horizon: float, seed=0, initial=None,
                frozen: bool = False) -> tuple[Trajectory, OccupationAccumulators]:
    """Temperature-swapped parallel tempering ``(Y, Z)``.

    Particles never exchange positions; a successful swap flips which rate
    matrix each particle uses.  With ``frozen=True`` the positions are held
    fixed and only the assignment process runs (a test hook).
    """
    if chain.K != 2:
        raise ValueError("parallel tempering is implemented for two temperatures only")
    if not (np.isfinite(a) and a >= 0):
        raise ValueError("swap rate a must be nonnegative")
    if not (np.isfinite(horizon) and horizon > 0):
        raise ValueError("horizon must be positive")
    tables = _pt_tables(chain)
    swapped = chain.perm_index[1].tolist()
    log_mu = chain.log_mu.tolist()
    draws = _Draws(simulation_rng(seed))
    x = 0 if initial is None else (int(initial) if np.isscalar(initial) else chain.index(initial))
    z = 0
    t = 0.0
    times, states, labels = [0.0], [x], [0]
    while True:
        q = 0.0 if frozen else tables[z].total[x]
        rate = q + a
        if rate <= 0:
            if frozen:
                break
            raise AbsorbingStateError(f"state {x} has zero exit rate")
        t += draws.exp() / rate
        if t >= horizon:
            break
        if draws.unif() * rate < q:
            x = tables[z].pick(x, draws.unif())
        else:
            # z=0: accept with b(y1, y2); z=1: with b(y2, y1)
            y = swapped[x]
            ratio = log_mu[y] - log_mu[x] if z == 0 else log_mu[x] - log_mu[y]
            if ratio >= 0 or draws.unif() < math.exp(ratio):
                z = 1 - z
            else:
                continue
        times.append(t)
        states.append(x)
        labels.append(z)
    traj = Trajectory(seed, np.array(times), np.array(states, dtype=np.int64), float(horizon),
                      labels=np.array(labels, dtype=np.int8))
    return traj, pt_accumulators(chain, traj)


def _ins_replica(args):
    chain, horizon, seed, initial = args
    _, acc = simulate_ins(chain, horizon, seed, initial)
    return acc


def run_ins_replicas(chain: ProductChain, horizon: float, seed: int, n: int,
                     initial=None, jobs: int = 1) -> list:
    """Independent infinite-swapping replicas, optionally across processes."""
    tasks = [(chain, horizon, s, initial) for s in replica_seeds(seed, n)]
    if jobs <= 1:
        return [_ins_replica(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_ins_replica, tasks))
