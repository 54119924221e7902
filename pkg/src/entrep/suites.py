"""Named verification suites behind ``entrep verify``.

Every suite takes ``(trials, seed)``, draws instance `n` from
``stream(seed, suite, n)`` and returns a JSON-ready dict with a ``pass`` flag.
"""

from __future__ import annotations

import math

import numpy as np

from . import appendix
from .blocks import collision_probability, conditional_success
from .game import xor_projection_game
from .orthogonalize import (
    joint_block_orthogonalize,
    max_pairwise_overlap,
    near_orthogonal_family,
    near_orthogonal_projectors,
    orthogonalization_lemma,
    procrustes_errors,
    procrustes_orthonormalize,
)
from .repeated import LabelStrategy, build_scrambling_strategy, digits, encode
from .repetition import make_spec
from .rng import random_density, random_unitary, stream
from .strategy import maximally_entangled

PROCRUSTES_LEVELS = (0.3, 0.1, 0.03)
KPROJ_LEVELS = (0.3, 0.1, 0.03, 0.01)
BLOCKDIAG_ALPHAS = (1e-2, 1e-4, 1e-6)
ROUNDOFF = 1e-12  # absolute slack for float comparison of exactly-valid bounds


def _slope(x, y) -> tuple[float, float]:
    slope, icept = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope), float(math.exp(icept))


def perturbed_unit_vectors(k: int, dim: int, delta: float, rng) -> np.ndarray:
    base = random_unitary(dim, rng)[:, :k]
    noise = rng.normal(size=(dim, k)) + 1j * rng.normal(size=(dim, k))
    U = base + delta * noise / math.sqrt(2 * dim)
    return U / np.linalg.norm(U, axis=0)


def procrustes_suite(trials: int = 200, seed: int = 0) -> dict:
    violations, worst_ortho, worst_ratio = 0, 0.0, 0.0
    for n in range(trials):
        rng = stream(seed, "procrustes", n)
        k = int(rng.integers(1, 17))
        dim = int(rng.integers(k, 33))
        delta = PROCRUSTES_LEVELS[n % len(PROCRUSTES_LEVELS)]
        U = perturbed_unit_vectors(k, dim, delta, rng)
        V = procrustes_orthonormalize(U)
        worst_ortho = max(worst_ortho, float(np.abs(V.conj().T @ V - np.eye(k)).max()))
        err, bound = procrustes_errors(U, V)
        if err > bound + ROUNDOFF:
            violations += 1
        if bound > 0:
            worst_ratio = max(worst_ratio, err / bound)
    ok = violations == 0 and worst_ortho <= 1e-10
    return {
        "suite": "procrustes",
        "trials": trials,
        "seed": seed,
        "violations": violations,
        "max_orthonormality_error": worst_ortho,
        "max_error_to_bound": worst_ratio,
        "pass": ok,
    }


def kproj_suite(trials: int = 20, seed: int = 0) -> dict:
    slopes, consts, worst = [], [], 0.0
    for n in range(trials):
        rng = stream(seed, "kproj", n)
        k = int(rng.integers(2, 9))
        rank = int(rng.integers(1, 1 + 64 // (2 * k)))
        dim = int(rng.integers(k * rank, min(64, 2 * k * rank) + 1))
        fam_seed = int(rng.integers(2**31))
        err, eps = [], []
        for delta in KPROJ_LEVELS:
            P, rhos = near_orthogonal_projectors(k, rank, dim, delta, stream(fam_seed, "kproj-family"))
            res = joint_block_orthogonalize(P, rhos)
            worst = max(worst, max_pairwise_overlap(res.Q))
            err.append(res.error)
            eps.append(res.eps)
        s, c = _slope(eps, err)
        slopes.append(s)
        consts.append(c)
    spread = max(consts) / min(consts)
    ok = worst <= 1e-9 and min(slopes) >= 0.5 - 0.15 and all(np.isfinite(consts)) and spread < 10
    return {
        "suite": "kproj",
        "trials": trials,
        "seed": seed,
        "max_pairwise_overlap": worst,
        "min_slope": min(slopes),
        "max_slope": max(slopes),
        "constant_spread": spread,
        "constants": consts,
        "pass": bool(ok),
    }


def blockdiag_suite(trials: int = 10, seed: int = 0) -> dict:
    rows, ok = [], True
    for n in range(trials):
        rng = stream(seed, "blockdiag", n)
        k = int(rng.integers(2, 5))
        rank = int(rng.integers(1, 3))
        dout = k * rank + int(rng.integers(0, 3))
        din = rank + int(rng.integers(0, 3))
        fam_seed = int(rng.integers(2**31))
        rel = []
        for a in BLOCKDIAG_ALPHAS:
            Y, rhos = near_orthogonal_family(k, rank, dout, din, a, stream(fam_seed, "blockdiag-family"))
            rel.append(orthogonalization_lemma(Y, rhos).relative_residual)
        Y, rhos = near_orthogonal_family(k, rank, dout, din, 0.0, stream(fam_seed, "blockdiag-family"))
        zero = orthogonalization_lemma(Y, rhos).residual
        decreasing = all(rel[j + 1] < rel[j] for j in range(len(rel) - 1))
        positive = all(r > 0 for r in rel)
        slope = _slope(BLOCKDIAG_ALPHAS, rel)[0] if positive else float("inf")
        good = decreasing and slope >= 0.1 - 0.05 and zero <= 1e-9
        ok &= good
        rows.append({"k": k, "relative_residuals": rel, "slope": slope, "zero_residual": zero, "pass": good})
    return {"suite": "blockdiag", "trials": trials, "seed": seed, "instances": rows, "pass": bool(ok)}


def appendix_suite(trials: int = 100, seed: int = 0, mc_samples: int = 4000) -> dict:
    """Exhaustive at ``C = 4, |Q| = 2`` and MC at ``C = 64`` on `trials` families each.

    The C = 64 families are weighted-sum families, so their statistics are
    also computed exactly; ``exact_c64`` separates genuine violations from
    the upward bias of the plug-in absolute values in MC mode.
    """
    fails = {"exact": {}, "mc": {}, "exact_c64": {}}

    def tally(kind, rep):
        for c in rep.checks:
            if not c.passed:
                fails[kind][c.name] = fails[kind].get(c.name, 0) + 1

    for n in range(trials):
        rng = stream(seed, "appendix-exact", n)
        fam = appendix.TableFamily(4, 2, 2, 2, rng)
        tally("exact", appendix.marginal_influence_stats(fam, random_density(2, rng), mode="exact"))
        rng = stream(seed, "appendix-mc", n)
        fam = appendix.WeightedSumFamily(64, 2, 2, 2, rng)
        rho = random_density(2, rng)
        mc_seed = int(rng.integers(2**31))
        tally("mc", appendix.marginal_influence_stats(fam, rho, mode="mc", samples=mc_samples, seed=mc_seed))
        tally("exact_c64", appendix.marginal_influence_stats(fam, rho, mode="exact"))
    # a scalar additive family on which the absolute-value form fails outright
    cex = appendix.marginal_influence_stats(appendix.average_family(8), np.eye(1), mode="exact")
    abs_name = "exptrace3.first"
    others = all(name == abs_name for kind in ("exact", "mc") for name in fails[kind])
    return {
        "suite": "appendix",
        "trials": trials,
        "seed": seed,
        "mc_samples": mc_samples,
        "failures": fails,
        "additive_family_abs_form": cex.check(abs_name).to_dict(),
        "pass_without_abs_form": others,
        "pass": not fails["exact"] and not fails["mc"],
    }


def deadbound_fixture(ell: int = 9, d: int = 512, alice_seed: int = 7):
    """Parity-scrambling Bob with two Alices: one guessing Bob's labels, one random."""
    g = xor_projection_game()
    bob = build_scrambling_strategy(ell, 2, 2, d)
    W = bob.rule.matrix
    b = digits(np.arange(d) % (2**ell), 2, ell)
    mirror = LabelStrategy(ell, 2, 2, d, lambda q: (b + W @ np.asarray(q)) % 2)

    def rand_labels(q):
        return stream(alice_seed, "alice", encode(q, 2)).integers(2, size=(d, ell))

    rand = LabelStrategy(ell, 2, 2, d, rand_labels)
    return g, bob, {"mirror": mirror, "random": rand}, maximally_entangled(d)


def deadbound_suite(trials: int = 20, seed: int = 0, samples: int = 10000, ell: int = 9, d: int = 512) -> dict:
    """Conditional success on the checked block against ``sqrt(2 eps)``.

    ``eps`` is the larger of the block's collision probability and
    ``C_1 / C_2``, the smallest value the success bound allows.
    """
    g, bob, alices, state = deadbound_fixture(ell, d)
    spec = make_spec("FK", ell)
    rho = np.eye(d) / d
    names = sorted(alices)
    rows, ok = [], True
    for n in range(trials):
        rng = stream(seed, "deadbound", n)
        size = int(rng.integers(1, 4))
        R = tuple(sorted(int(x) for x in rng.choice(ell, size=size, replace=False)))
        q_R = tuple(int(x) for x in rng.integers(2, size=size))
        name = names[n % len(names)]
        pc = collision_probability(bob, rho, R, q_R).total
        eps = max(pc, spec.c1 / spec.c2)
        est = conditional_success(
            g, spec, alices[name], bob, state, R, q_R, samples=samples, seed=int(rng.integers(2**31)),
            check="block", eps=eps,
        )
        bound = math.sqrt(2 * eps)
        good = est.estimate <= bound + 3 * est.stderr
        ok &= good
        rows.append({
            "R": list(R),
            "q_R": list(q_R),
            "alice": name,
            "pcol": pc,
            "eps": eps,
            "estimate": est.estimate,
            "stderr": est.stderr,
            "samples": est.samples,
            "bound": bound,
            "pcol_bound": math.sqrt(2 * pc),
            "pass": bool(good),
        })
    return {"suite": "deadbound", "trials": trials, "seed": seed, "blocks": rows, "pass": bool(ok)}


SUITES = {
    "procrustes": procrustes_suite,
    "kproj": kproj_suite,
    "blockdiag": blockdiag_suite,
    "appendix": appendix_suite,
    "deadbound": deadbound_suite,
}
