"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run ``python3 tests/test_acceptance.py`` for the lines alone, or pytest for
the full run (the lines are repeated in the terminal summary).
"""

import itertools
import math
import time

import numpy as np
import pytest

from entrep import suites
from entrep.blocks import (
    collision_probability,
    collision_probability_bruteforce,
    find_stable_block_size,
    predinc_increase,
)
from entrep.cli import main
from entrep.game import chsh_game, classical_value_bruteforce, game_to_json, xor_projection_game
from entrep.mc import run_samples
from entrep.repeated import ExplicitStrategy, ProductStrategy, build_product_strategy, build_scrambling_strategy
from entrep.repetition import estimate_repeated_value, make_spec
from entrep.rng import random_density, random_projective_measurement, stream
from entrep.strategy import (
    chsh_optimal_strategy,
    classical_strategy,
    evaluate_value,
    seesaw_restarts,
    strategy_to_json,
)

from oracles import collision

TSIRELSON = (2 + math.sqrt(2)) / 4
RESULTS = {}


def report(n, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    RESULTS[n] = line
    print(line)
    return ok


# 1 ---------------------------------------------------------------------------


def test_criterion_1_procrustes():
    t = time.perf_counter()
    r = suites.procrustes_suite(trials=200, seed=0)
    dt = time.perf_counter() - t
    ok = r["violations"] == 0 and r["max_orthonormality_error"] <= 1e-10 and dt < 10
    report(1, ok, f"procrustes 200 families, {r['violations']} violations, "
                  f"orthonormality {r['max_orthonormality_error']:.1e}, {dt:.2f}s")
    assert ok


# 2 ---------------------------------------------------------------------------


def test_criterion_2_kproj():
    t = time.perf_counter()
    r = suites.kproj_suite(trials=20, seed=0)
    dt = time.perf_counter() - t
    ok = (
        r["max_pairwise_overlap"] <= 1e-9
        and r["min_slope"] >= 0.5 - 0.15
        and all(np.isfinite(r["constants"]))
        and r["constant_spread"] < 10
        and dt < 60
    )
    report(2, ok, f"kproj overlap {r['max_pairwise_overlap']:.1e}, slopes "
                  f"[{r['min_slope']:.2f}, {r['max_slope']:.2f}], constant spread "
                  f"{r['constant_spread']:.2f}, {dt:.1f}s")
    assert ok


# 3 ---------------------------------------------------------------------------


def test_criterion_3_blockdiag():
    r = suites.blockdiag_suite(trials=10, seed=0)
    rows = r["instances"]
    worst_slope = min(x["slope"] for x in rows)
    worst_zero = max(x["zero_residual"] for x in rows)
    ok = r["pass"] and all(
        all(a > b for a, b in zip(x["relative_residuals"], x["relative_residuals"][1:])) for x in rows
    )
    report(3, ok, f"orthogonalization sweep on {len(rows)} families, min slope {worst_slope:.3f}, "
                  f"alpha=0 residual {worst_zero:.1e}")
    assert ok


# 4 ---------------------------------------------------------------------------


def test_criterion_4_chsh():
    g = chsh_game()
    cl = classical_value_bruteforce(g)
    ev = evaluate_value(g, chsh_optimal_strategy())
    vals = np.array(seesaw_restarts(g, 2, restarts=50, seed=0))
    frac = float(np.mean(vals >= 0.85))
    ok = cl == 0.75 and abs(ev - TSIRELSON) <= 1e-9 and frac >= 0.9 and vals.max() <= TSIRELSON + 1e-6
    report(4, ok, f"CHSH classical {cl}, optimal {ev:.12f}, seesaw >= 0.85 in {frac:.0%} "
                  f"of 50 restarts, max {vals.max():.12f}")
    assert ok


# 5 ---------------------------------------------------------------------------


def test_criterion_5_perfect_repetition():
    g = xor_projection_game()
    s = classical_strategy(g, [0, 1], [0, 1])
    out = {}
    for kind, ell in (("FK", 9), ("DR", 16)):
        pg = build_product_strategy(s, ell)
        est = estimate_repeated_value(g, make_spec(kind, ell), pg.alice, pg.bob, pg.state,
                                      samples=10_000, seed=0, outcome="sample")
        out[kind] = round((1.0 - est.estimate) * est.samples)
    ok = out["FK"] == 0 and out["DR"] == 0
    report(5, ok, f"value-1 strategy rejections in 10^4 sampled rounds: FK(9) {out['FK']}, DR(16) {out['DR']}")
    assert ok


# 6 ---------------------------------------------------------------------------


def test_criterion_6_collision_oracle():
    worst = 0.0
    for n in range(50):
        r = stream(0, "acceptance-6", n)
        d = int(r.integers(1, 9))
        table = np.array([random_projective_measurement(d, 8, r) for _ in range(8)])
        X = ExplicitStrategy(3, 2, 2, d, table)
        rho = random_density(d, r)
        size = int(r.integers(0, 4))
        S = tuple(sorted(int(x) for x in r.choice(3, size=size, replace=False)))
        q_S = tuple(int(x) for x in r.integers(2, size=size))
        T = tuple(i for i in S if r.random() < 0.7)
        got = collision_probability(X, rho, S, q_S, T, mode="exact").total
        ref = collision(table, 3, 2, 2, rho, S, q_S, T)[0]
        brute = collision_probability_bruteforce(X, rho, S, q_S, T).total
        worst = max(worst, abs(got - ref), abs(got - brute))
    prod = ProductStrategy(chsh_optimal_strategy().bob, 3)
    pc = max(abs(collision_probability(prod, np.eye(8) / 8, R, (0,) * len(R)).total - 2.0)
             for R in [(0,), (1, 2), (0, 1, 2)])
    scr = build_scrambling_strategy(3, 2, 2, 8)
    W = scr.rule.matrix
    sc = 0.0
    for R in [(0,), (1,), (0, 1), (0, 2), (0, 1, 2)]:
        for q in itertools.product(range(2), repeat=len(R)):
            rest = [i for i in range(3) if i not in R]
            rank = np.linalg.matrix_rank(W[np.ix_(list(R), rest)]) if rest else 0
            val = collision_probability(scr, np.eye(8) / 8, R, q).total
            sc = max(sc, abs(val - 2 * 2.0**-rank))
    ok = worst <= 1e-9 and pc <= 1e-9 and sc <= 1e-9
    report(6, ok, f"exact vs enumeration on 50 strategies {worst:.1e}, product P_col-2 {pc:.1e}, "
                  f"scrambling vs 2*2^-rank {sc:.1e}")
    assert ok


# 7 ---------------------------------------------------------------------------


def test_criterion_7_dead_block_success():
    r = suites.deadbound_suite(trials=20, seed=0, samples=10_000)
    rows = r["blocks"]
    slack = min(x["bound"] + 3 * x["stderr"] - x["estimate"] for x in rows)
    worst_pcol = max(x["estimate"] - x["pcol_bound"] for x in rows)
    ok = r["pass"] and len(rows) == 20 and all(x["samples"] == 10_000 for x in rows)
    report(7, ok, f"20 blocks FK(9), min slack to sqrt(2 eps) + 3 stderr {slack:.3f}; "
                  f"max excess over sqrt(2 P_col) {worst_pcol:.3f}")
    assert ok


# 8 ---------------------------------------------------------------------------

ABS_FORM = "exptrace3.first"


@pytest.fixture(scope="module")
def appendix_result():
    return suites.appendix_suite(trials=100, seed=0, mc_samples=4000)


def test_criterion_8_appendix(appendix_result):
    r = appendix_result
    f = r["failures"]
    others = {k: {n: c for n, c in f[k].items() if n != ABS_FORM} for k in f}
    abs_fails = {k: f[k].get(ABS_FORM, 0) for k in f}
    ok = r["pass"]
    detail = (f"exact C=4 failures {f['exact'] or 0}, MC C=64 failures {f['mc'] or 0}; "
              f"absolute-value form fails on {abs_fails['exact_c64']}/100 families exactly at C=64")
    report(8, ok, detail)
    # every inequality other than the absolute-value form holds as stated
    assert not others["exact"] and not others["mc"] and not others["exact_c64"], others


@pytest.mark.xfail(strict=True, reason="absolute-value form of the first trace inequality is false; see ledger")
def test_criterion_8_absolute_value_form(appendix_result):
    f = appendix_result["failures"]
    assert f["exact"].get(ABS_FORM, 0) == 0
    assert f["mc"].get(ABS_FORM, 0) == 0


# 9 ---------------------------------------------------------------------------


def test_criterion_9_predinc_and_stable_size():
    c1, ell = 4, 5
    bound = 4 * c1**-0.5
    worst, r_max, n_runs = 0.0, 0, 0
    for n in range(20):
        r = stream(0, "acceptance-9", n)
        d = int(r.integers(2, 5))
        if n % 4 == 3:
            X = build_scrambling_strategy(ell, 2, 2, 32)
            rho = np.eye(32) / 32
        else:
            table = np.array([random_projective_measurement(d, 2**ell, r) for _ in range(2**ell)])
            X = ExplicitStrategy(ell, 2, 2, d, table)
            rho = random_density(d, r)
        for _ in range(5):
            size = int(r.integers(0, ell))
            S = tuple(sorted(int(x) for x in r.choice(ell, size=size, replace=False)))
            q_S = tuple(int(x) for x in r.integers(2, size=size))
            worst = max(worst, abs(predinc_increase(X, rho, S, q_S)))
        res = find_stable_block_size(X, rho, c1)
        n_runs += 1
        r_max = max(r_max, res.r_star if res.r_star is not None else c1 + 1)
    ok = worst <= bound and r_max <= c1
    report(9, ok, f"max |increase| {worst:.3f} <= {bound:.1f} over 100 samples; "
                  f"stable size <= {r_max} on {n_runs} runs (c1 = {c1})")
    assert ok


# 10 --------------------------------------------------------------------------


def _cli_bytes(argv, capsys):
    assert main([str(a) for a in argv]) in (0, 1)
    return capsys.readouterr().out


def test_criterion_10_determinism(tmp_path, capsys):
    g = chsh_game()
    game, strat = tmp_path / "g.json", tmp_path / "s.json"
    game.write_text(game_to_json(g))
    strat.write_text(strategy_to_json(chsh_optimal_strategy(), g))
    commands = [
        ["value", "--method", "seesaw", "--game", game, "--restarts", 3],
        ["repeat", "--game", game, "--strategy", strat, "--ell", 4, "--samples", 500, "--mode", "mc", "--seed", 2],
        ["classify", "--scrambling", "--ell", 3, "--trials", 3, "--mode", "mc", "--samples", 300],
        ["verify", "procrustes", "--trials", 30, "--seed", 7],
        ["verify", "appendix", "--trials", 2, "--samples", 400],
    ]
    same_cli = all(_cli_bytes(c, capsys) == _cli_bytes(c, capsys) for c in commands)

    def draw(rng, i):
        return rng.normal()

    same_mc = np.array_equal(run_samples(draw, 2000, 4, "x", workers=1), run_samples(draw, 2000, 4, "x", workers=4))
    pg = build_product_strategy(chsh_optimal_strategy(), 4)
    spec = make_spec("FK", 4)
    a, b = (estimate_repeated_value(g, spec, pg.alice, pg.bob, pg.state, samples=1500, seed=1,
                                    outcome="sample", workers=w).to_dict() for w in (1, 4))
    scr = build_scrambling_strategy(3, 2, 2, 8)
    c, d = (collision_probability(scr, np.eye(8) / 8, (0,), (1,), mode="mc", samples=600, seed=3,
                                  workers=w).to_dict() for w in (1, 3))
    ok = same_cli and same_mc and a == b and c == d
    report(10, ok, f"{len(commands)} CLI commands byte-identical on rerun: {same_cli}; "
                   f"parallel == serial for sampler, repetition, collision: {same_mc and a == b and c == d}")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider", "-o", "addopts="]))
