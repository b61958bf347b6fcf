import itertools

import numpy as np
import pytest

from infswap.model import franz_potential, make_grid, tabulated_potential
from infswap.ldp import map_M
from infswap.swapchain import (
    ProductChain,
    implied_potential,
    ins_generator,
    n_perms,
    pt_generator,
    rho,
    swap_prob_b,
    symmetrized_measure,
    uncoupled_generator,
)
from oracles import ins_rates_bruteforce


def test_index_codec_roundtrip(franz_k3):
    for i in range(franz_k3.size):
        assert franz_k3.index(franz_k3.state(i)) == i
    assert franz_k3.index((0, 0, 1)) == 1
    assert franz_k3.index((1, 0, 0)) == franz_k3.N**2
    with pytest.raises(ValueError):
        franz_k3.index((0, 0))


def test_product_size_bound():
    g = make_grid(-1, 1, 101)
    with pytest.raises(ValueError):
        ProductChain(g, franz_potential(g, 1.0), (0.1, 0.3, 0.5))


def test_rho_diagonal_and_normalization(franz_k3):
    chain2 = ProductChain(franz_k3.grid, franz_k3.potential, (0.1, 0.5))
    assert rho(chain2, (2, 2)) == pytest.approx(0.5, abs=1e-15)
    for x in [(0, 1, 3), (2, 2, 0), (3, 1, 2)]:
        total = sum(rho(franz_k3, x, s) for s in itertools.permutations(range(3)))
        assert total == pytest.approx(1.0, abs=1e-14)


def test_rho_formula(two_state_chain):
    # V(x1) - V(x2) = 1
    assert rho(two_state_chain, (1, 0)) == pytest.approx(1 / (1 + np.exp(8.0)), rel=1e-12)
    assert rho(two_state_chain, (0, 1)) == pytest.approx(1 / (1 + np.exp(-8.0)), rel=1e-12)


def test_swap_prob(two_state_chain):
    assert swap_prob_b(two_state_chain, (1, 1)) == 1.0
    # cold particle at the low state: swapping moves it uphill
    assert swap_prob_b(two_state_chain, (0, 1)) == pytest.approx(np.exp(-8.0), rel=1e-12)
    assert swap_prob_b(two_state_chain, (1, 0)) == 1.0


def test_swap_prob_one_direction_accepts(franz_small):
    for x in itertools.product(range(franz_small.N), repeat=2):
        assert max(swap_prob_b(franz_small, x), swap_prob_b(franz_small, x[::-1])) == 1.0


def test_swap_prob_needs_two_temps(franz_k3):
    with pytest.raises(ValueError):
        swap_prob_b(franz_k3, (0, 1, 2))


def _stationary_residual(gen, measure):
    return np.abs(measure @ gen.matrix).max()


def test_uncoupled_generator(two_state_chain):
    gen = uncoupled_generator(two_state_chain)
    L = gen.matrix.toarray()
    assert L.shape == (4, 4)
    np.testing.assert_allclose(L.sum(axis=1), 0, atol=1e-15)
    assert _stationary_residual(gen, two_state_chain.mu) < 1e-15
    q1, q2 = (c.exit_rates for c in two_state_chain.components)
    for i, (a, b) in enumerate(two_state_chain.states):
        assert -L[i, i] == pytest.approx(q1[a] + q2[b], rel=1e-15)


def test_pt_generator(two_state_chain, franz_small):
    base = uncoupled_generator(two_state_chain).matrix.toarray()
    np.testing.assert_array_equal(pt_generator(two_state_chain, 0.0).matrix.toarray(), base)
    gen = pt_generator(two_state_chain, 10.0)
    i, j = two_state_chain.index((0, 1)), two_state_chain.index((1, 0))
    assert gen.rates[i, j] == pytest.approx(10 * swap_prob_b(two_state_chain, (0, 1)), rel=1e-14)
    for a in (0.5, 10.0, 1e3):
        g = pt_generator(franz_small, a)
        flux = franz_small.mu[:, None] * g.rates.toarray()
        assert np.abs(flux - flux.T).max() <= 1e-12 * flux.max()
        assert _stationary_residual(g, franz_small.mu) < 1e-12
    with pytest.raises(ValueError):
        pt_generator(franz_small, -1.0)


def test_ins_diagonal_row_is_average(franz_small):
    gen = ins_generator(franz_small)
    G1, G2 = (c.dense_rates() for c in franz_small.components)
    x = 2
    i = franz_small.index((x, x))
    R = gen.rates.toarray()
    for y in range(franz_small.N):
        if y != x:
            assert R[i, franz_small.index((y, x))] == pytest.approx(0.5 * (G1[x, y] + G2[x, y]), rel=1e-14)


@pytest.mark.parametrize("fixture", ["franz_small", "franz_k3"])
def test_ins_matches_bruteforce(fixture, request):
    chain = request.getfixturevalue(fixture)
    ref = ins_rates_bruteforce(
        [c.stationary for c in chain.components],
        [c.dense_rates() for c in chain.components],
        chain.N,
        chain.K,
    )
    np.testing.assert_allclose(ins_generator(chain).rates.toarray(), ref, rtol=1e-12, atol=0)


@pytest.mark.parametrize("fixture", ["franz_small", "franz_k3"])
def test_ins_permutation_symmetry(fixture, request):
    chain = request.getfixturevalue(fixture)
    gen = ins_generator(chain)
    R = gen.rates.toarray()
    for s in range(len(chain.perms)):
        p = chain.perm_index[s]
        np.testing.assert_allclose(R[np.ix_(p, p)], R, rtol=1e-12, atol=0)
        np.testing.assert_allclose(gen.exit_rates[p], gen.exit_rates, rtol=1e-12)


@pytest.mark.parametrize("fixture", ["franz_small", "franz_k3"])
def test_ins_reversible_and_single_moves(fixture, request):
    chain = request.getfixturevalue(fixture)
    gen = ins_generator(chain)
    R = gen.rates.toarray()
    mbar = symmetrized_measure(chain)
    flux = mbar[:, None] * R
    mask = flux > 0
    assert (np.abs(flux - flux.T)[mask] / flux[mask]).max() < 1e-12
    assert _stationary_residual(gen, mbar) < 1e-12
    rows, cols = np.nonzero(R)
    moved = (chain.states[rows] != chain.states[cols]).sum(axis=1)
    assert np.all(moved == 1)


def test_symmetrized_measure(two_state_chain, franz_k3):
    mbar = symmetrized_measure(two_state_chain)
    i, j = two_state_chain.index((0, 1)), two_state_chain.index((1, 0))
    assert mbar[i] == mbar[j]
    assert mbar.sum() == pytest.approx(1.0, abs=1e-15)
    g = make_grid(0, 1, 3)
    flat = ProductChain(g, tabulated_potential(g, np.zeros(3)), (0.2, 0.7))
    np.testing.assert_allclose(symmetrized_measure(flat), flat.mu, rtol=1e-14)
    for chain in (two_state_chain, franz_k3):
        np.testing.assert_allclose(map_M(chain, symmetrized_measure(chain)), chain.mu, atol=1e-15)
    assert n_perms(3) == 6


def test_implied_potential():
    g = make_grid(-1.5, 1.5, 7)
    chain = ProductChain(g, franz_potential(g, 1.0), (0.1, 0.5))
    left, right = 1, 5
    assert g.points[left] == -1.0 and g.points[right] == 1.0
    u = implied_potential(chain, (left, right))
    v = franz_potential(g, 1.0).values
    direct = -np.log(np.exp(-v[left] / 0.1 - v[right] / 0.5) + np.exp(-v[right] / 0.1 - v[left] / 0.5))
    assert np.isfinite(u) and u == pytest.approx(direct, rel=1e-14)
    assert u == pytest.approx(-np.log(2), abs=1e-12)
    for x in itertools.product(range(g.n), repeat=2):
        assert implied_potential(chain, x) == implied_potential(chain, x[::-1])
    flat = ProductChain(g, tabulated_potential(g, np.zeros(g.n)), (0.1, 0.5))
    assert implied_potential(flat, (0, 3)) == pytest.approx(-np.log(2), abs=1e-15)
