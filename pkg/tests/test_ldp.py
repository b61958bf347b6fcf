import numpy as np
import pytest

from infswap.ldp import (
    InfeasibleMeasure,
    association_of,
    map_M,
    nu_sym,
    rate_I_unsym,
    rate_J,
    weighted_symmetry_discrepancy,
)
from infswap.model import make_grid, reversible_generator, tabulated_potential
from infswap.swapchain import ProductChain, ins_generator, symmetrized_measure
from oracles import dv_oracle, literal_J, random_reversible


def feasible_gamma(chain, rng, spread=1.0):
    """Random measure whose density against mu is permutation invariant."""
    f = np.exp(spread * rng.standard_normal(chain.size))
    f = f[chain.perm_index].mean(axis=0)
    g = f * chain.mu
    return g / g.sum()


def test_J_zero_at_stationary(franz_small):
    gen = ins_generator(franz_small)
    assert rate_J(gen, gen.stationary) == 0.0


def test_J_two_state_closed_form_and_dv():
    L = np.array([[-1.0, 1.0], [1.0, -1.0]])
    gen = reversible_generator(L, np.array([0.5, 0.5]))
    nu = np.array([0.9, 0.1])
    j = rate_J(gen, nu)
    assert j == pytest.approx((np.sqrt(0.9) - np.sqrt(0.1)) ** 2, rel=1e-14)
    assert abs(j - dv_oracle(L, nu)) < 1e-6


def test_J_matches_literal_formula(rng):
    for n in (3, 7, 20):
        L, pi = random_reversible(n, rng)
        gen = reversible_generator(L, pi)
        nu = rng.dirichlet(np.ones(n))
        assert rate_J(gen, nu) == pytest.approx(literal_J(L, pi, nu), rel=1e-10, abs=1e-14)


def test_J_boundary_of_simplex_is_finite(rng):
    L, pi = random_reversible(5, rng)
    nu = np.array([0.5, 0.5, 0, 0, 0])
    assert np.isfinite(rate_J(reversible_generator(L, pi), nu))


def test_J_positive_and_strictly_convex(franz_small, rng):
    gen = ins_generator(franz_small)
    for _ in range(50):
        a, b = rng.dirichlet(np.ones(franz_small.size), size=2)
        ja, jb = rate_J(gen, a), rate_J(gen, b)
        assert ja > 0 and jb > 0
        assert rate_J(gen, 0.5 * (a + b)) < 0.5 * (ja + jb)


def test_J_permutation_invariant(franz_k3, rng):
    gen = ins_generator(franz_k3)
    for _ in range(10):
        nu = rng.dirichlet(np.ones(franz_k3.size))
        ref = rate_J(gen, nu)
        for idx in franz_k3.perm_index:
            assert rate_J(gen, nu[idx]) == pytest.approx(ref, rel=1e-12)


def test_map_M_properties(franz_small, rng):
    chain = franz_small
    mbar = symmetrized_measure(chain)
    np.testing.assert_allclose(map_M(chain, mbar), chain.mu, atol=1e-16)
    nu = rng.dirichlet(np.ones(chain.size))
    out = map_M(chain, nu)
    assert out.sum() == pytest.approx(1.0, abs=1e-14) and out.min() >= 0
    # moving mass between x and its swap leaves M unchanged
    i, j = chain.index((1, 4)), chain.index((4, 1))
    moved = nu.copy()
    shift = 0.7 * moved[i]
    moved[i] -= shift
    moved[j] += shift
    np.testing.assert_allclose(map_M(chain, moved), out, atol=1e-16)
    point = np.zeros(chain.size)
    point[chain.index((3, 3))] = 1.0
    np.testing.assert_allclose(map_M(chain, point), point, atol=1e-16)


def test_nu_sym(franz_small, franz_k3, rng):
    for chain in (franz_small, franz_k3):
        np.testing.assert_allclose(nu_sym(chain, chain.mu), symmetrized_measure(chain), rtol=1e-12)
        for _ in range(20):
            gamma = feasible_gamma(chain, rng)
            ns = nu_sym(chain, gamma)
            np.testing.assert_allclose(map_M(chain, ns), gamma, atol=1e-10)


def test_nu_sym_minimal_in_preimage(franz_small, rng):
    chain = franz_small
    gen = ins_generator(chain)
    gamma = feasible_gamma(chain, rng)
    ns = nu_sym(chain, gamma)
    best = rate_J(gen, ns)
    swapped = chain.perm_index[1]
    for _ in range(1000):
        # random transfers between x and x^R keep every pair sum fixed
        frac = rng.uniform(-1, 1, chain.size)
        frac = 0.5 * (frac - frac[swapped])
        nu = ns + frac * np.minimum(ns, ns[swapped])
        np.testing.assert_allclose(map_M(chain, nu), gamma, atol=1e-12)
        assert best <= rate_J(gen, nu) + 1e-14


def test_infeasible_gamma(franz_small, rng):
    gamma = rng.dirichlet(np.ones(franz_small.size))
    assert weighted_symmetry_discrepancy(franz_small, gamma) > 1e-3
    with pytest.raises(InfeasibleMeasure) as err:
        nu_sym(franz_small, gamma)
    assert err.value.discrepancy > err.value.tol
    assert rate_I_unsym(franz_small, gamma) == np.inf


def test_I_unsym_zero_at_mu(franz_small):
    assert rate_I_unsym(franz_small, franz_small.mu) == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("fixture", ["franz_small", "franz_k3"])
def test_I_unsym_equals_J_of_nu_sym(fixture, request, rng):
    chain = request.getfixturevalue(fixture)
    gen = ins_generator(chain)
    for _ in range(50):
        gamma = feasible_gamma(chain, rng)
        assert abs(rate_I_unsym(chain, gamma) - rate_J(gen, nu_sym(chain, gamma))) < 1e-9


def test_association_of(franz_small, franz_k3, two_state_chain):
    for chain in (franz_small, franz_k3):
        np.testing.assert_allclose(
            association_of(chain, symmetrized_measure(chain)), 1 / len(chain.perms), atol=1e-15
        )
        diag = np.zeros(chain.size)
        for x in range(chain.N):
            diag[chain.index((x,) * chain.K)] = 1.0 / chain.N
        np.testing.assert_allclose(association_of(chain, diag), 1 / len(chain.perms), atol=1e-15)
    # pick energies so that rho = 0.8 at the state (1, 0)
    d = np.log(0.25) / 8
    g = make_grid(0, 1, 2)
    chain = ProductChain(g, tabulated_potential(g, [0.0, d]), (0.1, 0.5))
    point = np.zeros(4)
    point[chain.index((1, 0))] = 1.0
    np.testing.assert_allclose(association_of(chain, point), [0.8, 0.2], rtol=1e-12)


def test_dv_small_product_chains(rng):
    g = make_grid(0, 1, 2)
    chain = ProductChain(g, tabulated_potential(g, [0.0, 0.7]), (0.3, 0.9))
    gen = ins_generator(chain)
    L = gen.matrix.toarray()
    for _ in range(3):
        nu = rng.dirichlet(np.ones(4))
        assert abs(rate_J(gen, nu) - dv_oracle(L, nu)) < 1e-6
