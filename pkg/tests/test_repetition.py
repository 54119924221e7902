import math

import numpy as np
import pytest

from entrep.errors import GameClassError, InvalidInputError
from entrep.game import chsh_game, constant_game, xor_projection_game
from entrep.repeated import build_product_strategy
from entrep.repetition import (
    CONFUSE,
    CONSISTENCY,
    GAME,
    _Sampler,
    conditioned_layout,
    conditioned_questions,
    estimate_repeated_value,
    make_spec,
    parameter_recipe,
    random_layout,
    sample_round,
    verdict,
)
from entrep.rng import stream
from entrep.strategy import chsh_optimal_strategy, classical_strategy, evaluate_value

TSIRELSON = (2 + math.sqrt(2)) / 4


def test_make_spec_counts():
    s = make_spec("FK", 9)
    assert (s.c1, s.c2, s.n_game, s.n_confuse) == (3, 6, 3, 6)
    s = make_spec("DR", 16)
    assert (s.c1, s.c1_prime, s.c2, s.n_game, s.n_consistency) == (8, 4, 8, 4, 4)
    s = make_spec("fk", 10)
    assert s.c1 == 3  # floor of the square root
    with pytest.raises(InvalidInputError):
        make_spec("DR", 3)
    with pytest.raises(InvalidInputError):
        make_spec("XX", 4)


def test_layout_counts():
    spec = make_spec("DR", 16)
    lay = random_layout(spec, stream(0, "t"))
    assert len(lay.indices(GAME)) == 4
    assert len(lay.indices(CONSISTENCY)) == 4
    assert len(lay.indices(CONFUSE)) == 8


def test_game_class_checks():
    with pytest.raises(GameClassError):
        sample_round(constant_game(2, 2, 1), make_spec("FK", 4), stream(0, "t"))
    skew = np.array([[0.5, 0.0], [0.25, 0.25]])
    with pytest.raises(GameClassError):
        sample_round(xor_projection_game(skew), make_spec("DR", 4), stream(0, "t"))


def test_consistency_questions_equal():
    g = chsh_game()
    spec = make_spec("DR", 9)
    for n in range(20):
        lay, qa, qb = sample_round(g, spec, stream(1, "t", n))
        for i in lay.consistency:
            assert qa[i] == qb[i]


def test_verdict():
    g = chsh_game()
    from entrep.repetition import RoundLayout

    lay = RoundLayout((GAME, CONSISTENCY, CONFUSE))
    assert verdict(g, lay, (1, 0, 0), (1, 0, 1), (1, 0, 0), (0, 0, 1))
    assert not verdict(g, lay, (1, 0, 0), (1, 0, 1), (1, 0, 0), (1, 0, 1))
    assert not verdict(g, lay, (0, 0, 0), (0, 0, 0), (0, 1, 0), (0, 0, 0))


def test_conditioned_layout_forces_block():
    spec = make_spec("FK", 9)
    lay = conditioned_layout(spec, (2, 5), stream(0, "c"))
    assert lay.tags[2] == lay.tags[5] == GAME
    assert len(lay.game) == spec.n_game
    with pytest.raises(InvalidInputError):
        conditioned_layout(spec, (0, 1, 2, 3), stream(0, "c"))
    qa, qb = conditioned_questions(lay, _Sampler(chsh_game()), (2, 5), (1, 0), stream(0, "q"))
    assert qb[2] == 1 and qb[5] == 0


@pytest.mark.parametrize("ell", [4, 9])
def test_product_value_is_power(ell):
    # product strategy: game rounds are independent, confuse rounds free
    g = chsh_game()
    s = chsh_optimal_strategy()
    spec = make_spec("FK", ell)
    pg = build_product_strategy(s, ell)
    est = estimate_repeated_value(g, spec, pg.alice, pg.bob, pg.state, samples=300, seed=0, outcome="exact")
    assert est.estimate == pytest.approx(TSIRELSON**spec.c1, abs=1e-12)


def test_sampled_outcomes_unbiased():
    g = chsh_game()
    spec = make_spec("FK", 4)
    pg = build_product_strategy(chsh_optimal_strategy(), 4)
    est = estimate_repeated_value(g, spec, pg.alice, pg.bob, pg.state, samples=4000, seed=2, outcome="sample")
    assert abs(est.estimate - TSIRELSON**2) <= 4 * est.stderr
    assert est.samples == 4000


def test_classical_value_one_dr():
    g = xor_projection_game()
    s = classical_strategy(g, [0, 1], [0, 1])
    assert evaluate_value(g, s) == 1.0
    spec = make_spec("DR", 9)
    pg = build_product_strategy(s, 9)
    est = estimate_repeated_value(g, spec, pg.alice, pg.bob, pg.state, samples=500, seed=0)
    assert est.estimate == 1.0


def test_deterministic():
    g = chsh_game()
    spec = make_spec("FK", 4)
    pg = build_product_strategy(chsh_optimal_strategy(), 4)
    a = estimate_repeated_value(g, spec, pg.alice, pg.bob, pg.state, samples=500, seed=9, outcome="sample")
    b = estimate_repeated_value(g, spec, pg.alice, pg.bob, pg.state, samples=500, seed=9, outcome="sample")
    assert a.to_dict() == b.to_dict()


def test_parameter_recipe_values():
    r = parameter_recipe(0.5, 0.5)
    assert r.eps == 0.25
    assert r.eta == pytest.approx(0.5**24 * 0.5, rel=1e-15)
    assert r.ell_min == pytest.approx(2.0 ** (125 + 4), rel=1e-12)
    # the constraints fail at desk scale
    c = r.constraints(100)
    assert not c["eta_eps3_gt_16_C1_inv_sqrt"]
    with pytest.raises(InvalidInputError):
        parameter_recipe(1.0, 0.5)
