"""Rate minimization under one linear constraint via a scalar Lagrange multiplier.

For a constraint ``<g, nu> = t`` the penalized problem
``min_nu J(nu) + lam <g, nu>`` is an ergodic control problem with running cost
``lam * g``; its minimizer is the controlled invariant measure.  The map
``lam -> <g, nu*_lam>`` is nonincreasing, so the multiplier is found by
bracketing and bisection.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .control import ErgodicSolution, bellman_residual, solve_ergodic
from .ldp import map_M, rate_J
from .measures import tv_distance
from .model import ReversibleGenerator, franz_potential, make_grid, mass_right
from .swapchain import ProductChain, ins_generator

log = logging.getLogger(__name__)

CONSTRAINT_TOL = 1e-6
MAX_ITER = 200
MAX_MULTIPLIER = 1e12


class InfeasibleTarget(ValueError):
    pass


class BracketError(RuntimeError):
    pass


class MonotonicityError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearConstraint:
    coeffs: np.ndarray
    target: float

    def achievable(self) -> tuple:
        return float(self.coeffs.min()), float(self.coeffs.max())


@dataclass(frozen=True)
class ConstrainedResult:
    multiplier: float
    nu: np.ndarray
    achieved: float
    target: float
    rate: float
    solution: ErgodicSolution
    iterations: int
    image: Optional[np.ndarray] = None
    distance: Optional[float] = None
    extra: dict = field(default_factory=dict)


def _check_monotone(history):
    pts = sorted(history)
    vals = [v for _, v in pts]
    for lo, hi in zip(vals, vals[1:]):
        if hi > lo + 1e-12 * max(1.0, abs(lo)):
            raise MonotonicityError(
                "constraint value increased with the multiplier: "
                + ", ".join(f"({lam:.6g}, {v:.12g})" for lam, v in pts)
            )


def solve_constrained(generator: ReversibleGenerator, constraint: LinearConstraint,
                      tol: float = CONSTRAINT_TOL, max_iter: int = MAX_ITER) -> ConstrainedResult:
    """Minimize ``J`` subject to ``<g, nu> = target`` by bisection on the multiplier."""
    g = np.asarray(constraint.coeffs, dtype=float)
    target = float(constraint.target)
    lo_g, hi_g = constraint.achievable()
    history = []

    def evaluate(lam):
        sol = solve_ergodic(generator, lam * g)
        value = float(g @ sol.nu_bar)
        history.append((lam, value))
        _check_monotone(history)
        return sol, value

    base = float(g @ generator.stationary)
    if abs(base - target) <= tol:
        sol = solve_ergodic(generator, np.zeros_like(g))
        return ConstrainedResult(0.0, generator.stationary.copy(), base, target, 0.0, sol, 0)
    if not lo_g < target < hi_g:
        raise InfeasibleTarget(f"target {target} outside achievable range ({lo_g}, {hi_g})")

    # larger multipliers push <g, nu> down
    direction = 1.0 if target < base else -1.0
    a = 0.0
    b = direction
    sol, fb = evaluate(b)
    iterations = 1
    while (fb - target) * direction > 0:
        a = b
        b *= 2.0
        if abs(b) > MAX_MULTIPLIER:
            raise BracketError(f"no sign change up to multiplier {b:g}")
        sol, fb = evaluate(b)
        iterations += 1
    if abs(fb - target) <= tol:
        best = (b, sol, fb)
    else:
        best = None
        while iterations < max_iter:
            mid = 0.5 * (a + b)
            sol, fm = evaluate(mid)
            iterations += 1
            if abs(fm - target) <= tol:
                best = (mid, sol, fm)
                break
            if (fm - target) * direction > 0:
                a = mid
            else:
                b = mid
            if abs(b - a) <= 1e-15 * max(1.0, abs(a)):
                break
        if best is None:
            raise BracketError(
                f"bisection did not reach tolerance {tol:g} in {max_iter} iterations"
            )
    lam, sol, achieved = best
    resid = float(np.abs(bellman_residual(sol, generator)).max())
    if resid > 1e-9:
        log.warning("inner Bellman residual %.3e at multiplier %.6g", resid, lam)
    return ConstrainedResult(
        lam, sol.nu_bar, achieved, target, rate_J(generator, sol.nu_bar), sol, iterations,
        extra={"bellman_residual": resid},
    )


def _with_image(chain: ProductChain, result: ConstrainedResult) -> ConstrainedResult:
    if result.iterations == 0:
        # unconstrained optimum kept: nu is mbar and M(mbar) = mu identically
        image = chain.mu.copy()
    else:
        image = map_M(chain, result.nu)
    return ConstrainedResult(
        result.multiplier, result.nu, result.achieved, result.target, result.rate,
        result.solution, result.iterations, image, tv_distance(image, chain.mu), result.extra,
    )


def min_rate_given_association(chain: ProductChain, w_bar, tol: float = CONSTRAINT_TOL,
                               generator: Optional[ReversibleGenerator] = None) -> ConstrainedResult:
    """Cheapest occupation measure whose identity-assignment weight is ``w_bar[0]``."""
    if chain.K != 2:
        raise ValueError("association-constrained problem is implemented for K = 2")
    w_bar = np.asarray(w_bar, dtype=float)
    if w_bar.shape != (2,) or np.any(w_bar <= 0) or abs(w_bar.sum() - 1) > 1e-12:
        raise ValueError("w_bar must be an interior probability vector of length 2")
    gen = ins_generator(chain) if generator is None else generator
    result = solve_constrained(gen, LinearConstraint(chain.rho_vector, float(w_bar[0])), tol)
    return _with_image(chain, result)


def region_mask(chain_or_grid, region=None) -> np.ndarray:
    """Boolean mask over grid states; default is the half line ``x >= 0``."""
    grid = getattr(chain_or_grid, "grid", chain_or_grid)
    if region is None:
        return grid.points >= 0
    if callable(region):
        return np.array([bool(region(x)) for x in grid.points])
    mask = np.asarray(region, dtype=bool)
    if mask.shape != (grid.n,):
        raise ValueError("region mask must have one entry per grid point")
    return mask


def low_temp_mass_coeffs(chain: ProductChain, region=None) -> np.ndarray:
    """``g`` with ``<g, nu>`` equal to the low-temperature marginal mass of ``M nu`` on the region."""
    mask = region_mask(chain, region)
    s = chain.states
    return chain.rho_perm[0] * mask[s[:, 0]] + chain.rho_perm[1] * mask[s[:, 1]]


def min_rate_given_mass(chain: ProductChain, delta: Optional[float] = None, target: Optional[float] = None,
                        region=None, tol: float = CONSTRAINT_TOL,
                        generator: Optional[ReversibleGenerator] = None) -> ConstrainedResult:
    """Cheapest way for the weighted low-temperature marginal to put ``target`` on the region.

    Give either ``target`` directly or ``delta``, in which case the target is
    ``kappa (1 - delta)`` with ``kappa`` the true low-temperature mass.
    """
    if chain.K != 2:
        raise ValueError("mass-constrained problem is implemented for K = 2")
    mask = region_mask(chain, region)
    kappa = float(chain.components[0].stationary[mask].sum())
    target = _resolve_target(kappa, delta, target)
    gen = ins_generator(chain) if generator is None else generator
    g = low_temp_mass_coeffs(chain, mask)
    result = _with_image(chain, solve_constrained(gen, LinearConstraint(g, target), tol))
    result.extra["kappa"] = kappa
    return result


def _resolve_target(kappa, delta, target):
    if (delta is None) == (target is None):
        raise ValueError("give exactly one of delta and target")
    if delta is not None:
        if not 0 <= delta < 1:
            raise ValueError("delta must lie in [0, 1)")
        return kappa * (1 - delta)
    return float(target)


def tilt_factors(W) -> tuple:
    """``exp(W(y) - W(x))`` for the right (``y = x+1``) and left (``y = x-1``) neighbours.

    The controlled rate is the uncontrolled one divided by this factor.  The
    boundary entries with no neighbour are ``nan``.
    """
    W = np.asarray(W)
    right = np.full(W.size, np.nan)
    left = np.full(W.size, np.nan)
    right[:-1] = np.exp(W[1:] - W[:-1])
    left[1:] = np.exp(W[:-1] - W[1:])
    return right, left


def min_rate_given_mass_single_temp(chain, delta: Optional[float] = None, target: Optional[float] = None,
                                    region=None, tol: float = CONSTRAINT_TOL) -> ConstrainedResult:
    """Single-temperature version: constrain ``nu(region)`` directly.

    ``chain`` is a one-temperature :class:`ProductChain`.  The result's
    ``extra`` holds ``W`` and the right/left tilt factors.
    """
    if chain.K != 1:
        raise ValueError("single-temperature problem needs K = 1")
    gen = chain.components[0]
    mask = region_mask(chain, region)
    kappa = mass_right(gen.stationary, chain.grid) if region is None else float(gen.stationary[mask].sum())
    target = _resolve_target(kappa, delta, target)
    result = solve_constrained(gen, LinearConstraint(mask.astype(float), target), tol)
    right, left = tilt_factors(result.solution.W)
    result.extra.update(kappa=kappa, W=result.solution.W, right_tilt=right, left_tilt=left)
    return result


# -- table sweep ---------------------------------------------------------------

DEFAULT_ALPHAS = (1.0, 0.97, 0.95, 0.90, 0.85)
DEFAULT_DELTAS = (0.05, 0.10, 0.15, 0.20)


@dataclass
class TableConfig:
    alphas: tuple = DEFAULT_ALPHAS
    deltas: tuple = DEFAULT_DELTAS
    temps: tuple = (0.1, 0.5)
    lo: float = -1.5
    hi: float = 1.5
    n: int = 12
    tol: float = 1e-10


def _table_cell(args):
    cfg, alpha, delta = args
    grid = make_grid(cfg.lo, cfg.hi, cfg.n)
    chain = ProductChain(grid, franz_potential(grid, alpha), cfg.temps)
    try:
        res = min_rate_given_mass(chain, delta=delta, tol=cfg.tol)
    except Exception as exc:
        raise RuntimeError(f"cell alpha={alpha}, delta={delta} failed: {exc}") from exc
    return {
        "alpha": alpha,
        "delta": delta,
        "rate": res.rate,
        "multiplier": res.multiplier,
        "iterations": res.iterations,
        "achieved": res.achieved,
        "target": res.target,
        "bellman_residual": res.extra["bellman_residual"],
    }


def table_experiments(cfg: Optional[TableConfig] = None, jobs: int = 1) -> dict:
    """Low-temperature mass ``kappa`` per alpha and constrained rates per (alpha, delta).

    Returns ``{"kappa": {alpha: value}, "rate": {delta: {alpha: value}},
    "normalized": {delta: {alpha: value}}, "cells": [...], "meta": {...}}``;
    normalization divides by the ``alpha = 1`` rate of the same row (or by
    the first listed alpha when 1 is absent).
    """
    cfg = cfg or TableConfig()
    grid = make_grid(cfg.lo, cfg.hi, cfg.n)
    kappa = {}
    for alpha in cfg.alphas:
        chain = ProductChain(grid, franz_potential(grid, alpha), cfg.temps[:1])
        kappa[alpha] = mass_right(chain.components[0].stationary, grid)
    tasks = [(cfg, a, d) for d in cfg.deltas for a in cfg.alphas]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_table_cell, tasks))
    else:
        cells = [_table_cell(t) for t in tasks]
    rate = {d: {} for d in cfg.deltas}
    for c in cells:
        rate[c["delta"]][c["alpha"]] = c["rate"]
    ref = 1.0 if 1.0 in cfg.alphas else cfg.alphas[0]
    normalized = {d: {a: r / row[ref] for a, r in row.items()} for d, row in rate.items()}
    meta = {
        "grid": grid.describe(),
        "temperatures": list(cfg.temps),
        "constraint_tol": cfg.tol,
        "region": "x >= 0 on the low-temperature coordinate",
        "normalized_to_alpha": ref,
    }
    return {"kappa": kappa, "rate": rate, "normalized": normalized, "cells": cells, "meta": meta}
