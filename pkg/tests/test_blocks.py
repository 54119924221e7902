import itertools
import math

import numpy as np
import pytest

from entrep.blocks import (
    classify_block,
    collision_probability,
    collision_probability_bruteforce,
    conditional_success,
    find_stable_block_size,
    marginal_operator,
    predinc_increase,
    stinespring,
    stinespring_term1,
)
from entrep.errors import InvalidInputError
from entrep.game import xor_projection_game
from entrep.repeated import ExplicitStrategy, LabelStrategy, ProductStrategy, build_scrambling_strategy
from entrep.repetition import make_spec
from entrep.rng import random_density, random_projective_measurement, stream
from entrep.strategy import chsh_optimal_strategy, maximally_entangled

from oracles import collision


def random_explicit(seed, ell=3, d=4, nq=2, na=2):
    r = stream(seed, "explicit")
    table = np.array([random_projective_measurement(d, na**ell, r) for _ in range(nq**ell)])
    return ExplicitStrategy(ell, nq, na, d, table), table


@pytest.mark.parametrize("seed", range(6))
def test_collision_matches_oracle(seed):
    X, table = random_explicit(seed, d=2 + seed % 3)
    rho = random_density(X.d, stream(seed, "rho"))
    for S, q_S, T in [((0,), (1,), (0,)), ((1, 2), (0, 1), (1, 2)), ((0, 2), (0, 1), (2,)), ((1,), (0,), ()), ((), (), ())]:
        got = collision_probability(X, rho, S, q_S, T, mode="exact")
        ref_total, ref_per = collision(table, 3, 2, 2, rho, S, q_S, T)
        assert got.total == pytest.approx(ref_total, abs=1e-10)
        np.testing.assert_allclose(got.per_answer, [ref_per[k] for k in sorted(ref_per)], atol=1e-10)
        brute = collision_probability_bruteforce(X, rho, S, q_S, T)
        assert got.total == pytest.approx(brute.total, abs=1e-10)


def test_terms_bounded_by_weights():
    X, _ = random_explicit(11)
    rho = random_density(X.d, stream(11, "rho"))
    res = collision_probability(X, rho, (0, 2), (1, 1), (0, 2), mode="exact")
    for t in (res.term1, res.term2):
        assert np.all(t >= -1e-12)
        assert np.all(t <= res.weights + 1e-12)
    assert res.per_answer.sum() == pytest.approx(res.total)
    assert 0 <= res.total <= 2 * np.trace(rho).real + 1e-12
    assert res.weights.sum() == pytest.approx(np.trace(rho).real)


def test_product_collision_is_two():
    s = chsh_optimal_strategy()
    X = ProductStrategy(s.bob, 3)
    rho = np.eye(8) / 8
    for R, q in [((0,), (1,)), ((0, 2), (1, 0)), ((0, 1, 2), (0, 0, 1))]:
        assert collision_probability(X, rho, R, q).total == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("R,q", [((0,), (1,)), ((0, 2), (0, 1)), ((0, 1, 2), (1, 1, 0))])
def test_scrambling_closed_form(R, q):
    X = build_scrambling_strategy(3, 2, 2, 8)
    rho = np.eye(8) / 8
    W = X.rule.matrix
    rest = [i for i in range(3) if i not in R]
    rank = np.linalg.matrix_rank(W[np.ix_(list(R), rest)]) if rest else 0
    got = collision_probability(X, rho, R, q).total
    assert got == pytest.approx(2 * 2.0**-rank, abs=1e-12)


def test_mc_agrees_with_exact():
    X, _ = random_explicit(3, ell=3, d=3)
    rho = random_density(3, stream(3, "rho"))
    ex = collision_probability(X, rho, (1,), (0,), (1,), mode="exact")
    mc = collision_probability(X, rho, (1,), (0,), (1,), mode="mc", samples=3000, seed=1)
    assert mc.mode == "mc" and mc.samples == 3000
    assert abs(mc.total - ex.total) <= 4 * mc.total_stderr + 1e-12


def test_mc_parallel_serial_identical():
    X, _ = random_explicit(4)
    rho = random_density(4, stream(4, "rho"))
    a = collision_probability(X, rho, (0,), (1,), (0,), mode="mc", samples=600, seed=2, workers=1)
    b = collision_probability(X, rho, (0,), (1,), (0,), mode="mc", samples=600, seed=2, workers=3)
    assert a.to_dict() == b.to_dict()


def test_stinespring_dilation():
    X, _ = random_explicit(7, d=3)
    rho = random_density(3, stream(7, "rho"))
    S, q_S, T = (0, 2), (1, 0), (2,)
    H = stinespring(X, S, q_S, T)
    for a in range(H.shape[0]):
        marg = marginal_operator(X, None, S, q_S, T, a_T=(a,)).matrix
        np.testing.assert_allclose(H[a] @ H[a].conj().T, marg, atol=1e-12)
    np.testing.assert_allclose(sum(h @ h.conj().T for h in H), np.eye(3), atol=1e-12)
    t1 = stinespring_term1(H, rho)
    ref = collision_probability(X, rho, S, q_S, T, mode="exact").term1
    np.testing.assert_allclose(t1, ref, atol=1e-12)


def test_classify_scrambling_dead_and_product_serial():
    X = build_scrambling_strategy(4, 2, 2, 16)
    rep = classify_block(X, np.eye(16) / 16, (0, 1), (1, 0), eps=0.6, eta=0.1)
    assert rep.status == "dead"
    assert rep.pcol_total == pytest.approx(0.5)
    P = ProductStrategy(chsh_optimal_strategy().bob, 3)
    rep = classify_block(P, np.eye(8) / 8, (1,), (0,), eps=0.5, eta=0.1)
    assert rep.status == "alive"
    assert all(rep.serial.values()) and len(rep.serial) == 2
    assert rep.to_dict()["status"] == "alive"
    with pytest.raises(InvalidInputError):
        classify_block(P, np.eye(8) / 8, (1,), (0,), eps=-1, eta=0.1)


def test_predinc_zero_for_product():
    P = ProductStrategy(chsh_optimal_strategy().bob, 3)
    assert predinc_increase(P, np.eye(8) / 8, (0,), (1,)) == pytest.approx(0.0, abs=1e-12)


def test_stable_block_size_product():
    P = ProductStrategy(chsh_optimal_strategy().bob, 3)
    res = find_stable_block_size(P, np.eye(8) / 8, c1=2)
    assert res.conclusive and res.r_star == 1
    assert res.threshold == pytest.approx(8 / math.sqrt(2))


def test_stable_block_size_binding_threshold():
    # c1 = 1024 puts the threshold at 0.25, below the r = 1 decrease
    X = build_scrambling_strategy(4, 2, 2, 16)
    rho = np.eye(16) / 16
    mean = [
        np.mean([collision_probability(X, rho, R, q).total
                 for R in itertools.combinations(range(4), r) for q in itertools.product(range(2), repeat=r)])
        for r in (1, 2, 3)
    ]
    res = find_stable_block_size(X, rho, c1=1024)
    np.testing.assert_allclose(res.deltas, [mean[0] - mean[1], mean[1] - mean[2]], atol=1e-12)
    assert res.deltas[0] > res.threshold >= res.deltas[1]
    assert res.r_star == 2


def test_conditional_success_scrambling_vs_random():
    ell, d = 4, 16
    g = xor_projection_game()
    bob = build_scrambling_strategy(ell, 2, 2, d)
    alice = LabelStrategy(ell, 2, 2, d, lambda q: stream(1, "a", *q).integers(2, size=(d, ell)))
    spec = make_spec("FK", ell)
    est = conditional_success(g, spec, alice, bob, maximally_entangled(d), (0,), (1,), samples=2000, seed=0)
    assert 0 <= est.estimate <= 1
    assert est.samples == 2000 and est.stderr > 0
