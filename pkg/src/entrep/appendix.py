"""Influence of a single coordinate on a marginalized family.

A family assigns to each question tuple ``q`` in ``Q^C`` a sub-normalized
POVM ``{Y_q^a}`` (shape ``(n_a, d, d)``, PSD, ``sum_a Y_q^a <= Id``).  With
``Y_q = sum_a Y_q^a``, ``M = E_q Y_q`` and ``M_{i,x} = E[Y_q | q_i = x]``
the statistics below compare `M` with its one-coordinate conditionings
under the semi-norm ``||A||^2 = Tr(A rho^{1/2} A^† rho^{1/2})``.

Exact mode enumerates ``Q^C``.  MC mode draws tuples in independent
batches; each batch is split in two halves and every bilinear quantity is
estimated by a cross-half product, which is unbiased.  Absolute values and
threshold frequencies are plug-in estimates on the pooled batch, and the
conditional-mean identity is evaluated on the batch's empirical law.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ResourceLimitError
from .linalg import check_psd, dagger, psd_sqrt
from .rng import random_psd, stream

MAX_TUPLES = 1 << 16
TOL = 1e-9


# -- families ---------------------------------------------------------------


def random_subpovm(n_a: int, d: int, rng, slack: float | None = None) -> np.ndarray:
    """Full-rank PSD operators whose sum is at most the identity."""
    G = np.array([random_psd(d, rng) for _ in range(n_a)])
    top = np.linalg.eigvalsh(G.sum(axis=0))[-1]
    u = rng.random() if slack is None else slack
    return G / (top * (1.0 + u))


class Family:
    """Base class: ``values(Q)`` maps an (N, C) array of tuples to (N, n_a, d, d)."""

    def __init__(self, C: int, nq: int, n_a: int, d: int, mu=None):
        if C < 1 or nq < 1 or n_a < 1 or d < 1:
            raise InvalidInputError("C, |Q|, n_a and d must be positive")
        self.C, self.nq, self.n_a, self.d = int(C), int(nq), int(n_a), int(d)
        self.mu = np.full(nq, 1.0 / nq) if mu is None else np.asarray(mu, dtype=float)
        if self.mu.shape != (nq,) or np.any(self.mu < 0) or abs(self.mu.sum() - 1) > 1e-12:
            raise InvalidInputError("mu must be a probability vector over the question set")

    def values(self, Q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def roots(self, Q: np.ndarray) -> np.ndarray:
        """Square roots of ``values(Q)``, elementwise in the answer axis."""
        Y = self.values(Q)
        return np.array([[psd_sqrt(Yn[a]) for a in range(self.n_a)] for Yn in Y])


class TableFamily(Family):
    """Independent random sub-POVM for every tuple (exact mode only)."""

    def __init__(self, C, nq, n_a, d, rng, mu=None):
        super().__init__(C, nq, n_a, d, mu)
        if nq**C > MAX_TUPLES:
            raise ResourceLimitError("table families need |Q|^C at most 65536")
        self.table = np.array([random_subpovm(n_a, d, rng) for _ in range(nq**C)])

    def values(self, Q):
        powers = self.nq ** np.arange(self.C - 1, -1, -1)
        return self.table[np.asarray(Q) @ powers]


class WeightedSumFamily(Family):
    """``Y_q = F[s(q)]`` for the weighted sum ``s(q) = sum_j w_j q_j``.

    With `levels` omitted an independent random sub-POVM is drawn for every
    reachable sum, so the family depends on every coordinate with a weight
    but is far from additive.
    """

    def __init__(self, C, nq, n_a, d, rng=None, weights=None, levels=None, mu=None):
        super().__init__(C, nq, n_a, d, mu)
        if weights is None:
            if rng is None:
                raise InvalidInputError("weights or rng required")
            weights = rng.integers(0, 3, size=C)
        self.weights = np.asarray(weights, dtype=np.int64)
        if self.weights.shape != (C,) or np.any(self.weights < 0):
            raise InvalidInputError("weights must be C non-negative integers")
        top = int(self.weights.sum()) * (nq - 1)
        if levels is None:
            if rng is None:
                raise InvalidInputError("levels or rng required")
            levels = np.array([random_subpovm(n_a, d, rng) for _ in range(top + 1)])
        self.levels = np.asarray(levels, dtype=complex)
        if self.levels.shape != (top + 1, n_a, d, d):
            raise InvalidInputError(f"levels must have shape {(top + 1, n_a, d, d)}")
        self._roots = None

    def values(self, Q):
        return self.levels[np.asarray(Q) @ self.weights]

    def level_roots(self) -> np.ndarray:
        if self._roots is None:
            self._roots = np.array([[psd_sqrt(L[a]) for a in range(self.n_a)] for L in self.levels])
        return self._roots

    def roots(self, Q):
        return self.level_roots()[np.asarray(Q) @ self.weights]


def average_family(C: int) -> WeightedSumFamily:
    """Scalar family ``Y_q = mean(q)`` on binary questions."""
    levels = (np.arange(C + 1) / C).reshape(C + 1, 1, 1, 1)
    return WeightedSumFamily(C, 2, 1, 1, weights=np.ones(C, dtype=np.int64), levels=levels)


def constant_family(C: int, nq: int, ops: np.ndarray) -> WeightedSumFamily:
    ops = np.asarray(ops, dtype=complex)
    return WeightedSumFamily(C, nq, ops.shape[0], ops.shape[1], weights=np.zeros(C, dtype=np.int64), levels=ops[None])


# -- statistics -------------------------------------------------------------


@dataclass
class Check:
    name: str
    lhs: float
    rhs: float
    stderr: float
    passed: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "stderr": self.stderr, "passed": self.passed}


class _Rho:
    def __init__(self, rho):
        self.rho = check_psd(rho, "rho")
        self.half = psd_sqrt(self.rho)

    def inner(self, A, B):
        """``Tr(A rho^1/2 B^† rho^1/2)`` over matching leading axes."""
        r = self.half
        return np.real(np.einsum("...ij,jk,...lk,li->...", A, r, np.conj(B), r))

    def trace(self, A):
        return np.real(np.einsum("...ij,ji->...", A, self.rho))


def _quantities(fam: Family, R: _Rho, w: np.ndarray, Y: np.ndarray, Qs: np.ndarray, Yb, wb, Qb):
    """Raw statistics from weighted samples ``(w, Y, Qs)``; the bilinear ones pair them with ``(wb, Yb, Qb)``.

    Passing the same arrays twice gives the exact enumeration formulas.
    """
    C, nq, mu = fam.C, fam.nq, fam.mu
    Ysum, Ysum_b = Y.sum(axis=1), Yb.sum(axis=1)
    M = np.einsum("n,nij->ij", w, Ysum)
    Mb = np.einsum("n,nij->ij", wb, Ysum_b)
    Ma = np.einsum("n,naij->aij", w, Y)
    Mab = np.einsum("n,naij->aij", wb, Yb)

    def cond(weights, ops, Qarr):
        out = np.zeros((C, nq) + ops.shape[1:], dtype=complex)
        mass = np.zeros((C, nq))
        for x in range(nq):
            hit = (Qarr == x).astype(float) * weights[:, None]  # (N, C)
            mass[:, x] = hit.sum(axis=0)
            out[:, x] = np.tensordot(hit.T, ops, axes=1)
        good = mass > 0
        out[good] /= mass[good].reshape(-1, *([1] * (ops.ndim - 1)))
        return out, good

    Mi, ok1 = cond(w, Ysum, Qs)
    Mib, ok2 = cond(wb, Ysum_b, Qb)
    Mia, _ = cond(w, Y, Qs)
    Miab, _ = cond(wb, Yb, Qb)
    ok = ok1 & ok2
    px = np.broadcast_to(mu[None, :] / C, (C, nq)) * ok
    px = px / px.sum()

    normM = float(R.inner(M, Mb))
    normMi = R.inner(Mi, Mib)  # (C, nq)
    diff = R.inner(M[None, None] - Mi, Mb[None, None] - Mib)
    Ef2 = float(np.sum(w * R.inner(Ysum, Ysum)))
    trM = float(R.trace(M))
    trMi = R.trace(Mi)
    # influences of the same-half collision terms, answer by answer
    roots = fam.roots(Qs)

    def sandwich(Z):
        """``E_q Tr(sqrt(Y_q^a) Z_a sqrt(Y_q^a) rho)`` per answer, Z shape (n_a, d, d)."""
        return np.real(np.einsum("n,naij,ajk,nakl,li->a", w, roots, Z, roots, R.rho))

    base2 = sandwich(Mab)
    cond2 = np.zeros((C, nq, fam.n_a))
    for i in range(C):
        for x in range(nq):
            if not ok[i, x]:
                continue
            sel = Qs[:, i] == x
            ws = w * sel
            if ws.sum() == 0:
                continue
            cond2[i, x] = (
                np.real(np.einsum("n,naij,ajk,nakl,li->a", ws, roots, Miab[i, x], roots, R.rho)) / ws.sum()
            )
    sqM = np.einsum("n,nij,njk->ik", w, Ysum, Ysum)  # E Y_q^2
    dev = M[None, None] - Mi
    devb = Mb[None, None] - Mib
    E_dev2 = np.einsum("cx,cxij,cxjk->ik", px, dev, devb)
    return {
        "px": px,
        "normM": normM,
        "normMi": normMi,
        "diff": diff,
        "Ef2": Ef2,
        "trM": trM,
        "trMi": trMi,
        "trrho": float(np.trace(R.rho).real),
        "base2": base2,
        "cond2": cond2,
        "sqM": sqM,
        "E_dev2": E_dev2,
    }


def _tower_identity(fam: Family, R: _Rho, Y: np.ndarray, Q: np.ndarray) -> tuple[float, float]:
    """Both sides of the conditional-mean identity on the empirical law of the sample `Q`.

    The identity holds for every law of the tuples, with the weight of
    ``(i, x)`` taken as the frequency of ``q_i = x``; on the empirical law it
    can therefore be checked to rounding.
    """
    Ysum = Y.sum(axis=1)
    n = Q.shape[0]
    M = Ysum.mean(axis=0)
    lhs = rhs = 0.0
    for i in range(fam.C):
        for x in range(fam.nq):
            sel = Q[:, i] == x
            if not sel.any():
                continue
            p = sel.sum() / (n * fam.C)
            Mi = Ysum[sel].mean(axis=0)
            lhs += p * float(R.inner(M - Mi, M - Mi))
            rhs += p * float(R.inner(Mi, Mi))
    return lhs, rhs - float(R.inner(M, M))


def _statistics(fam: Family, q: dict) -> dict:
    C, px = fam.C, q["px"]
    part1 = float(np.sum(px * q["diff"]))
    part2 = float(np.sum(px * q["normMi"]) - q["normM"])
    thr = C ** (-1.0 / 3.0)
    part3 = float(np.sum(px * (np.abs(q["trM"] - q["trMi"]) >= thr)))
    t3_abs = float(np.sum(px * np.abs(q["normM"] - q["normMi"])))
    t3_signed = float(np.sum(px * (q["normMi"] - q["normM"])))
    t3_mid = q["Ef2"] / C
    trY = q["trM"]
    G = q["sqM"] / C - q["E_dev2"]
    G = 0.5 * (G + dagger(G))
    sq_min = float(np.linalg.eigvalsh(G)[0])
    t2 = float(np.sum(px[:, :, None] * np.abs(q["base2"][None, None, :] - q["cond2"])))
    return {
        "exp_part1_lhs": part1,
        "exp_part1_mid": q["Ef2"] / C,
        "exp_part1_rhs": 1.0 / C,
        "exp_part2_lhs": part1,
        "exp_part2_rhs": part2,
        "exp_part3_freq": part3,
        "exp_part3_rhs": thr,
        "exptrace3_abs": t3_abs,
        "exptrace3_signed": t3_signed,
        "exptrace3_mid": t3_mid,
        "exptrace3_rhs": trY,
        "expsquare_min_eig": sq_min,
        "exptrace2_lhs": t2,
        "exptrace2_rhs": 2.0 * C ** -0.5 * q["trrho"],
        "norm_precondition": q["Ef2"],
    }


def _checks(s: dict, se: dict, tol: float, k: float) -> list[Check]:
    def le(name, a, b, key_a, key_b=None):
        err = se.get((key_a, key_b), 0.0)
        return Check(name, a, b, err, bool(a <= b + tol + k * err))

    out = [
        le("exp.part1.nonneg", 0.0, s["exp_part1_lhs"], "exp_part1_lhs"),
        le("exp.part1.first", s["exp_part1_lhs"], s["exp_part1_mid"], "exp_part1_lhs", "exp_part1_mid"),
        le("exp.part1.second", s["exp_part1_mid"], s["exp_part1_rhs"], "exp_part1_mid"),
    ]
    # an identity: on MC samples it is evaluated on the empirical law, so no stderr applies
    lhs2 = s.get("exp_part2_empirical_lhs", s["exp_part2_lhs"])
    rhs2 = s.get("exp_part2_empirical_rhs", s["exp_part2_rhs"])
    out.append(Check("exp.part2.identity", lhs2, rhs2, 0.0, bool(abs(lhs2 - rhs2) <= tol)))
    out += [
        le("exp.part3", s["exp_part3_freq"], s["exp_part3_rhs"], "exp_part3_freq"),
        le("exptrace3.first", s["exptrace3_abs"], s["exptrace3_mid"], "exptrace3_abs", "exptrace3_mid"),
        le("exptrace3.first_signed", s["exptrace3_signed"], s["exptrace3_mid"], "exptrace3_signed", "exptrace3_mid"),
        le("exptrace3.second", s["exptrace3_mid"], s["exptrace3_rhs"], "exptrace3_mid", "exptrace3_rhs"),
        le("expsquare", 0.0, s["expsquare_min_eig"], "expsquare_min_eig"),
        le("exptrace2", s["exptrace2_lhs"], s["exptrace2_rhs"], "exptrace2_lhs"),
    ]
    return out


@dataclass
class InfluenceReport:
    mode: str
    C: int
    samples: int
    stats: dict
    stderr: dict
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "C": self.C,
            "samples": self.samples,
            "stats": dict(self.stats),
            "checks": [c.to_dict() for c in self.checks],
            "passed": self.passed,
        }


def _sum_distributions(fam: "WeightedSumFamily"):
    """Law of ``s(q)`` and, for every `i`, of the sum without coordinate `i`."""
    C, mu, w = fam.C, fam.mu, fam.weights
    size = fam.levels.shape[0]

    def step(dist, j):
        out = np.zeros(size)
        for x in range(fam.nq):
            shift = int(w[j]) * x
            out[shift:] += mu[x] * dist[: size - shift]
        return out

    prefix = [np.eye(1, size)[0]]
    for j in range(C):
        prefix.append(step(prefix[-1], j))
    suffix = [np.eye(1, size)[0]]
    for j in reversed(range(C)):
        suffix.append(step(suffix[-1], j))
    suffix = suffix[::-1]  # suffix[j]: law of sum over coordinates j..C-1
    without = np.array([np.convolve(prefix[i], suffix[i + 1])[:size] for i in range(C)])
    return prefix[-1], without


def _weighted_sum_quantities(fam: "WeightedSumFamily", R: _Rho) -> dict:
    """Exact statistics of a weighted-sum family, linear in the number of rounds."""
    C, nq, mu = fam.C, fam.nq, fam.mu
    full, without = _sum_distributions(fam)
    F = fam.levels
    Fsum = F.sum(axis=1)
    size = F.shape[0]
    # cond[i, x, s] = P(s(q) = s | q_i = x)
    cond = np.zeros((C, nq, size))
    for i in range(C):
        for x in range(nq):
            shift = int(fam.weights[i]) * x
            cond[i, x, shift:] = without[i, : size - shift]
    M = np.einsum("s,sij->ij", full, Fsum)
    Ma = np.einsum("s,saij->aij", full, F)
    Mi = np.einsum("cxs,sij->cxij", cond, Fsum)
    Mia = np.einsum("cxs,saij->cxaij", cond, F)
    px = np.broadcast_to(mu[None, :] / C, (C, nq)).copy()
    roots = fam.level_roots()
    per_level = np.real(np.einsum("saij,ajk,sakl,li->sa", roots, Ma, roots, R.rho))
    cond2 = np.zeros((C, nq, fam.n_a))
    for i in range(C):
        for x in range(nq):
            vals = np.real(np.einsum("saij,ajk,sakl,li->sa", roots, Mia[i, x], roots, R.rho))
            cond2[i, x] = cond[i, x] @ vals
    dev = M[None, None] - Mi
    return {
        "px": px,
        "normM": float(R.inner(M, M)),
        "normMi": R.inner(Mi, Mi),
        "diff": R.inner(dev, dev),
        "Ef2": float(full @ R.inner(Fsum, Fsum)),
        "trM": float(R.trace(M)),
        "trMi": R.trace(Mi),
        "trrho": float(np.trace(R.rho).real),
        "base2": full @ per_level,
        "cond2": cond2,
        "sqM": np.einsum("s,sij,sjk->ik", full, Fsum, Fsum),
        "E_dev2": np.einsum("cx,cxij,cxjk->ik", px, dev, dev),
    }


def _all_tuples(C: int, nq: int) -> np.ndarray:
    if nq**C > MAX_TUPLES:
        raise ResourceLimitError(f"{nq}^{C} tuples exceed the exact limit {MAX_TUPLES}")
    return np.array(list(itertools.product(range(nq), repeat=C)), dtype=np.int64).reshape(-1, C)


def marginal_influence_stats(
    fam: Family,
    rho,
    mode: str = "exact",
    samples: int = 4000,
    batches: int = 8,
    seed: int = 0,
    tol: float = TOL,
) -> InfluenceReport:
    """Evaluate the one-coordinate influence inequalities on a family.

    Parameters
    ----------
    fam : Family
    rho : ndarray
        PSD with trace at most 1.
    mode : {"exact", "mc"}
    samples, batches : int
        MC budget: `batches` independent batches of ``samples // batches``
        tuples; the spread across batches gives the standard errors.

    Returns
    -------
    InfluenceReport
        ``checks`` holds one pass/fail entry per inequality; exact mode
        compares at `tol`, MC mode at ``tol + 3 stderr``.
    """
    R = _Rho(rho)
    if np.trace(R.rho).real > 1 + tol:
        raise InvalidInputError("rho must have trace at most 1")
    if R.rho.shape != (fam.d, fam.d):
        raise InvalidInputError("rho dimension does not match the family")
    if mode == "exact" and isinstance(fam, WeightedSumFamily) and fam.nq**fam.C > MAX_TUPLES:
        s = _statistics(fam, _weighted_sum_quantities(fam, R))
        return InfluenceReport("exact", fam.C, 0, s, {}, _checks(s, {}, tol, 0.0))
    if mode == "exact":
        Q = _all_tuples(fam.C, fam.nq)
        w = np.prod(fam.mu[Q], axis=1)
        Y = fam.values(Q)
        s = _statistics(fam, _quantities(fam, R, w, Y, Q, Y, w, Q))
        return InfluenceReport("exact", fam.C, Q.shape[0], s, {}, _checks(s, {}, tol, 0.0))
    if mode != "mc":
        raise InvalidInputError(f"unknown mode {mode!r}")
    per = max(4, samples // batches)
    half = per // 2
    rows = []
    for b in range(batches):
        rng = stream(seed, "influence", b)
        Q = rng.choice(fam.nq, size=(2 * half, fam.C), p=fam.mu)
        Y = fam.values(Q)
        w = np.full(half, 1.0 / half)
        q = _quantities(fam, R, w, Y[:half], Q[:half], Y[half:], w, Q[half:])
        row = _statistics(fam, q)
        row["exp_part2_empirical_lhs"], row["exp_part2_empirical_rhs"] = _tower_identity(fam, R, Y, Q)
        rows.append(row)
    keys = list(rows[0])
    arr = {k: np.array([r[k] for r in rows]) for k in keys}
    s = {k: float(arr[k].mean()) for k in keys}
    root = math.sqrt(batches)
    se = {}
    for k in keys:
        se[(k, None)] = float(arr[k].std(ddof=1) / root)
        for k2 in keys:
            se[(k, k2)] = float((arr[k] - arr[k2]).std(ddof=1) / root)
    plain = {k: se[(k, None)] for k in keys}
    return InfluenceReport("mc", fam.C, 2 * half * batches, s, plain, _checks(s, se, tol, 3.0))
