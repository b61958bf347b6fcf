"""Empirical-measure rate functions for the infinite-swapping process.

``rate_J`` is the Donsker-Varadhan rate of the plain occupation measure of a
reversible chain.  ``map_M`` turns an occupation measure of the symmetrized
process into the weighted (unsymmetrized) measure actually used for
estimation, and ``nu_sym`` / ``rate_I_unsym`` evaluate the cheapest way of
producing a given weighted measure.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from .measures import check_measure
from .model import ReversibleGenerator
from .swapchain import ProductChain, uncoupled_generator

FEASIBILITY_TOL = 1e-9


class InfeasibleMeasure(ValueError):
    """The target measure is not in the range of ``map_M``."""

    def __init__(self, discrepancy: float, tol: float):
        super().__init__(
            f"weighted-symmetry discrepancy {discrepancy:.3e} exceeds tolerance {tol:.1e}"
        )
        self.discrepancy = discrepancy
        self.tol = tol


def rate_J(generator: ReversibleGenerator, nu) -> float:
    r"""Rate function of the occupation measure of a reversible chain.

    With :math:`\theta = \nu/\bar\mu` this is
    :math:`\sum_x q\theta\bar\mu - \sum_{x\neq y}\theta^{1/2}(x)\theta^{1/2}(y)\Gamma_{xy}\bar\mu(x)`,
    evaluated in the equivalent Dirichlet-form layout
    :math:`\tfrac12\sum_{x,y}\bar\mu(x)\Gamma_{xy}(\theta^{1/2}(x)-\theta^{1/2}(y))^2`
    so that it is exactly zero at the stationary measure and never negative.

    Parameters
    ----------
    generator : ReversibleGenerator
        Off-diagonal rates and the measure they are reversible for.
    nu : array_like
        Probability vector over the same states.
    """
    mbar = generator.stationary
    nu = check_measure(nu, mbar.size, tol=1e-10)
    psi = np.sqrt(nu / mbar)
    rates = sp.coo_matrix(generator.rates)
    diff = psi[rates.row] - psi[rates.col]
    return float(0.5 * np.sum(mbar[rates.row] * rates.data * diff * diff))


def map_M(chain: ProductChain, nu) -> np.ndarray:
    """``(M nu)(x) = rho(x) * sum_sigma nu(x^sigma)``."""
    nu = check_measure(nu, chain.size, tol=1e-10)
    return chain.rho_vector * nu[chain.perm_index].sum(axis=0)


def weighted_symmetry_discrepancy(chain: ProductChain, gamma) -> float:
    """Largest relative mismatch of ``d gamma / d mu`` across permuted states."""
    gamma = np.asarray(gamma, dtype=float)
    ratio = gamma / chain.mu
    worst = 0.0
    for idx in chain.perm_index[1:]:
        a, b = ratio, ratio[idx]
        scale = np.maximum(np.abs(a), np.abs(b))
        mask = scale > 0
        if mask.any():
            worst = max(worst, float(np.max(np.abs(a - b)[mask] / scale[mask])))
    return worst


def nu_sym(chain: ProductChain, gamma, tol: float = FEASIBILITY_TOL) -> np.ndarray:
    """Symmetric preimage ``gamma / (K! rho)`` of a weighted measure.

    Raises
    ------
    InfeasibleMeasure
        If ``d gamma / d mu`` is not permutation invariant within ``tol``.
    """
    gamma = check_measure(gamma, chain.size, tol=1e-10)
    disc = weighted_symmetry_discrepancy(chain, gamma)
    if disc > tol:
        raise InfeasibleMeasure(disc, tol)
    return gamma / (math.factorial(chain.K) * chain.rho_vector)


def rate_I_unsym(chain: ProductChain, gamma, tol: float = FEASIBILITY_TOL) -> float:
    """Rate of the weighted empirical measure, written with the uncoupled dynamics.

    Returns ``inf`` when ``gamma`` violates the weighted-symmetry condition.
    """
    gamma = check_measure(gamma, chain.size, tol=1e-10)
    if weighted_symmetry_discrepancy(chain, gamma) > tol:
        return math.inf
    mu = chain.mu
    base = uncoupled_generator(chain)
    rates = sp.coo_matrix(base.rates)
    f_half = np.sqrt(gamma / mu)
    first = float(base.exit_rates @ gamma)
    cross = float(np.sum(f_half[rates.row] * f_half[rates.col] * rates.data * mu[rates.row]))
    return max(first - cross, 0.0)


def association_of(chain: ProductChain, nu) -> np.ndarray:
    """Expected permutation weights ``w_sigma = <rho^sigma, nu>``."""
    nu = check_measure(nu, chain.size, tol=1e-10)
    return chain.rho_perm @ nu
