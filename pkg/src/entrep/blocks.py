"""Marginalized measurements, collision probabilities and block classification.

For a repeated strategy ``X`` (one player's measurements), a set `S` of
rounds with fixed questions ``q_S`` and an answer set ``T`` inside `S`, the
marginal operator is

    X_{q_S}^{a_T} = E_q sum_a X_{q_S q}^{a_T a}

with the completion questions `q` drawn i.i.d. from a single-round
distribution ``mu``.  The collision probability of ``(q_S, T)`` sums, over
``a_T``, the probability of seeing the same ``a_T`` twice when measuring
twice on the same half of the state (``term1``) and once on each half
(``term2``).  All strategies here are projective, which turns ``term1`` into
a pinching average.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, ResourceLimitError, UnsupportedStrategyError
from .game import Game
from .linalg import check_psd, dagger, psd_sqrt
from .mc import MCEstimate, mean_stderr, run_samples
from .repeated import RepeatedStrategy, completions, decode, digits, n_completions, norm_index_set
from .repetition import (
    CONFUSE,
    RepetitionSpec,
    RoundLayout,
    _Evaluator,
    _Sampler,
    check_game_class,
    conditioned_layout,
    conditioned_questions,
)
from .rng import stream
from .strategy import maximally_entangled, measurement_problems, state_matrix

MAX_COMPLETIONS = 4096
TRACE_TOL = 1e-9


def _mu(X: RepeatedStrategy, mu) -> np.ndarray:
    if mu is None:
        return np.full(X.nq, 1.0 / X.nq)
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (X.nq,) or np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-12:
        raise InvalidInputError("mu must be a probability vector over the question set")
    return mu


def _index_sets(X: RepeatedStrategy, S, q_S, T):
    S = tuple(int(i) for i in S)
    if len(set(S)) != len(S):
        raise InvalidInputError("index set S has repeated entries")
    if len(q_S) != len(S):
        raise InvalidInputError("q_S must have one question per index of S")
    order = np.argsort(S)
    S_sorted = tuple(S[i] for i in order)
    q_sorted = tuple(int(q_S[i]) for i in order)
    norm_index_set(S_sorted, X.ell)
    if any(x < 0 or x >= X.nq for x in q_sorted):
        raise InvalidInputError(f"questions {q_sorted} out of range")
    T = S_sorted if T is None else norm_index_set(T, X.ell)
    if not set(T) <= set(S_sorted):
        raise InvalidInputError(f"answer set {T} is not inside S = {S_sorted}")
    return S_sorted, q_sorted, T


def _check_rho(rho, d: int) -> np.ndarray:
    rho = check_psd(rho, "rho")
    if rho.shape != (d, d):
        raise InvalidInputError(f"rho has shape {rho.shape}, expected {(d, d)}")
    if np.trace(rho).real > 1.0 + TRACE_TOL:
        raise InvalidInputError("rho must have trace at most 1")
    return rho


def _is_diag(A: np.ndarray) -> bool:
    return not np.any(A - np.diag(np.diag(A)))


def _resolve_mode(mode: str, n: int) -> str:
    if mode not in ("auto", "exact", "mc"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    if mode == "auto":
        return "exact" if n <= MAX_COMPLETIONS else "mc"
    if mode == "exact" and n > MAX_COMPLETIONS:
        raise ResourceLimitError(f"{n} completions exceed the exact cutoff {MAX_COMPLETIONS}")
    return mode


def _sums(X: RepeatedStrategy, q, T):
    """Answer sums over `T`: diagonals (n, d) for label strategies, else (n, d, d)."""
    return X.diag_answer_sums(q, T) if X.is_diagonal else X.answer_sums(q, T)


def _as_full(A: np.ndarray) -> np.ndarray:
    if A.ndim == 3:
        return A
    out = np.zeros(A.shape + (A.shape[1],), dtype=complex)
    idx = np.arange(A.shape[1])
    out[:, idx, idx] = A
    return out


# -- marginal operators -------------------------------------------------------


@dataclass
class MarginalOperator:
    S: tuple
    q_S: tuple
    T: tuple
    a_T: tuple
    matrix: np.ndarray
    mode: str
    samples: int


def _marginal_stack(X, mu, S, q_S, T, mode, samples, seed):
    n = n_completions(X.ell, S, mu)
    mode = _resolve_mode(mode, n)
    if mode == "exact":
        acc = None
        for w, q in completions(X.ell, S, q_S, mu):
            term = w * _sums(X, q, T)
            acc = term if acc is None else acc + term
        return acc, mode, n
    rest = [i for i in range(X.ell) if i not in S]
    acc = None
    for t in range(samples):
        rng = stream(seed, "marginal", t)
        q = np.zeros(X.ell, dtype=np.int64)
        q[list(S)] = q_S
        q[rest] = rng.choice(X.nq, size=len(rest), p=mu)
        term = _sums(X, tuple(q), T)
        acc = term if acc is None else acc + term
    return acc / samples, mode, samples


def marginal_operator(
    X: RepeatedStrategy, mu, S, q_S, T, a_T=None, mode: str = "auto", samples: int = 2000, seed: int = 0
) -> MarginalOperator:
    """Average of the answer-restricted sums over completions of `q_S`.

    Parameters
    ----------
    X : RepeatedStrategy
    mu : array_like or None
        Completion distribution on one round; uniform when None.
    S, q_S : sequences
        Fixed rounds and their questions.
    T : sequence
        Reported answer rounds, a subset of `S`.
    a_T : sequence, optional
        Answers on `T` (sorted order of `T`); all zeros when omitted.
    mode : {"auto", "exact", "mc"}
        Exact enumeration of completions or averaging `samples` draws.
    """
    mu = _mu(X, mu)
    S, q_S, T = _index_sets(X, S, q_S, T)
    a_T = tuple([0] * len(T) if a_T is None else (int(a) for a in a_T))
    if len(a_T) != len(T) or any(a < 0 or a >= X.na for a in a_T):
        raise InvalidInputError(f"answers {a_T} invalid for answer set {T}")
    stack, mode, n = _marginal_stack(X, mu, S, q_S, T, mode, samples, seed)
    code = 0
    for a in a_T:
        code = code * X.na + a
    M = _as_full(stack[code : code + 1])[0]
    return MarginalOperator(S, q_S, T, a_T, 0.5 * (M + dagger(M)), mode, n)


# -- collision probabilities -------------------------------------------------


@dataclass
class CollisionResult:
    S: tuple
    q_S: tuple
    T: tuple
    total: float
    per_answer: np.ndarray
    term1: np.ndarray
    term2: np.ndarray
    weights: np.ndarray
    mode: str
    samples: int
    total_stderr: float = 0.0
    per_answer_stderr: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "S": list(self.S),
            "q_S": list(self.q_S),
            "T": list(self.T),
            "total": self.total,
            "total_stderr": self.total_stderr,
            "per_answer": self.per_answer.tolist(),
            "term1": self.term1.tolist(),
            "term2": self.term2.tolist(),
            "weights": self.weights.tolist(),
            "mode": self.mode,
            "samples": self.samples,
        }


class _RhoContext:
    """Precomputed functionals of one density."""

    def __init__(self, rho: np.ndarray):
        self.rho = rho
        self.diag = np.real(np.diag(rho))
        self.is_diag = _is_diag(rho)
        self.half = np.diag(np.sqrt(np.clip(self.diag, 0.0, None))) if self.is_diag else psd_sqrt(rho)
        # Tr(x rho^1/2 y rho^1/2) = x^T K y for diagonal x, y
        self.K = np.abs(self.half) ** 2

    def two_halves(self, Xa: np.ndarray, Xb: np.ndarray) -> np.ndarray:
        """``Tr(Xa_t rho^1/2 Xb_t rho^1/2)`` for each t."""
        if Xa.ndim == 2:
            if self.is_diag:
                return np.einsum("tk,k,tk->t", Xa, self.diag, Xb).real
            return np.einsum("tk,kl,tl->t", Xa, self.K, Xb).real
        r = self.half
        return np.real(np.einsum("tij,jk,tkl,li->t", Xa, r, Xb, r))

    def weights(self, Xa: np.ndarray) -> np.ndarray:
        if Xa.ndim == 2:
            return Xa @ self.diag
        return np.real(np.einsum("tij,ji->t", Xa, self.rho))


def _pinch(X: RepeatedStrategy, q, T, Z: np.ndarray, ctx: _RhoContext) -> np.ndarray:
    """``sum_a Tr(X^{a_T a} Z_{a_T} X^{a_T a} rho)`` for every ``a_T``."""
    if X.is_diagonal and Z.ndim == 2:
        cT = X.codes(q, T)
        vals = Z[cT, np.arange(X.d)] * ctx.diag
        return np.bincount(cT, weights=vals, minlength=X.na ** len(T))
    return X.pinch_trace(q, T, _as_full(Z), ctx.rho)


def collision_probability(
    X: RepeatedStrategy,
    rho,
    S,
    q_S,
    T=None,
    mu=None,
    mode: str = "auto",
    samples: int = 2000,
    seed: int = 0,
    workers: int | None = None,
) -> CollisionResult:
    """Collision probability of `X` on ``(S, q_S)`` over the answers in `T`.

    Per answer ``a_T`` the value is ``term1 + term2`` with

    * ``term1 = E_{q,q'} sum_{a,a'} Tr(X_q^{a_T a} X_{q'}^{a_T a'} X_q^{a_T a} rho)``
    * ``term2 = Tr(X^{a_T} rho^{1/2} X^{a_T} rho^{1/2})`` for the marginal ``X^{a_T}``.

    The total lies in ``[0, 2 Tr(rho)]``.  In ``"mc"`` mode each sample
    draws an independent pair of completions and uses it for both terms.
    """
    if not isinstance(X, RepeatedStrategy):
        raise UnsupportedStrategyError("collision probabilities need a projective repeated strategy")
    mu = _mu(X, mu)
    S, q_S, T = _index_sets(X, S, q_S, T)
    rho = _check_rho(rho, X.d)
    ctx = _RhoContext(rho)
    n = n_completions(X.ell, S, mu)
    mode = _resolve_mode(mode, n)
    nT = X.na ** len(T)
    if mode == "exact":
        comps = list(completions(X.ell, S, q_S, mu))
        Xbar = None
        for w, q in comps:
            term = w * _sums(X, q, T)
            Xbar = term if Xbar is None else Xbar + term
        t1 = np.zeros(nT)
        for w, q in comps:
            t1 += w * _pinch(X, q, T, Xbar, ctx)
        t2 = ctx.two_halves(Xbar, Xbar)
        wts = ctx.weights(Xbar)
        per = t1 + t2
        return CollisionResult(S, q_S, T, float(per.sum()), per, t1, t2, wts, mode, n, 0.0, np.zeros(nT))

    rest = [i for i in range(X.ell) if i not in S]

    def one(rng, _):
        qs = []
        for _k in range(2):
            q = np.zeros(X.ell, dtype=np.int64)
            q[list(S)] = q_S
            q[rest] = rng.choice(X.nq, size=len(rest), p=mu)
            qs.append(tuple(int(x) for x in q))
        A = _sums(X, qs[0], T)
        B = _sums(X, qs[1], T)
        t1 = _pinch(X, qs[0], T, B, ctx)
        t2 = ctx.two_halves(A, B)
        return np.concatenate([t1, t2, ctx.weights(A)])

    vals = run_samples(one, samples, seed, "collision", workers)
    mean, se = mean_stderr(vals)
    t1, t2, wts = mean[:nT], mean[nT : 2 * nT], mean[2 * nT :]
    per_vals = vals[:, :nT] + vals[:, nT : 2 * nT]
    per, per_se = mean_stderr(per_vals)
    tot, tot_se = mean_stderr(per_vals.sum(axis=1))
    return CollisionResult(S, q_S, T, float(tot), per, t1, t2, wts, mode, int(samples), float(tot_se), per_se)


def collision_probability_bruteforce(X: RepeatedStrategy, rho, S, q_S, T=None, mu=None) -> CollisionResult:
    """Reference evaluator: loops over completions and full outcome pairs.

    Uses only :meth:`RepeatedStrategy.projectors` and the purification
    ``M = rho^{1/2}`` for the two-halves term, so it shares no code path with
    :func:`collision_probability`.
    """
    mu = _mu(X, mu)
    S, q_S, T = _index_sets(X, S, q_S, T)
    rho = check_psd(rho, "rho")
    M = psd_sqrt(rho)
    comps = list(completions(X.ell, S, q_S, mu))
    nT = X.na ** len(T)
    outcomes = digits(np.arange(X.na**X.ell), X.na, X.ell)
    tcode = np.zeros(outcomes.shape[0], dtype=np.int64)
    for i in T:
        tcode = tcode * X.na + outcomes[:, i]
    P = {q: X.projectors(q) for _, q in comps}
    Xbar = np.zeros((nT, X.d, X.d), dtype=complex)
    for w, q in comps:
        for o in range(outcomes.shape[0]):
            Xbar[tcode[o]] += w * P[q][o]
    t1 = np.zeros(nT)
    for w, q in comps:
        for w2, q2 in comps:
            for o in range(outcomes.shape[0]):
                Po = P[q][o]
                if not np.any(Po):
                    continue
                for o2 in np.flatnonzero(tcode == tcode[o]):
                    t1[tcode[o]] += w * w2 * np.real(np.trace(Po @ P[q2][o2] @ Po @ rho))
    t2 = np.array([np.real(np.trace(dagger(M) @ Xbar[t] @ M @ Xbar[t])) for t in range(nT)])
    wts = np.array([np.real(np.trace(Xbar[t] @ rho)) for t in range(nT)])
    per = t1 + t2
    return CollisionResult(S, q_S, T, float(per.sum()), per, t1, t2, wts, "bruteforce", len(comps))


def stinespring(X: RepeatedStrategy, S, q_S, T=None, mu=None) -> np.ndarray:
    """Dilations ``Xhat^{a_T}`` with ``Xhat Xhat^† = X^{a_T}``, shape (|A|^|T|, d, E*d).

    Column ``e*d + j`` holds the block of environment state `e`, which runs
    over (completion, answers outside `T`) pairs; the block is
    ``sqrt(mu(q)) sqrt(X_q^{a_T a})``.  Backings are projective, so the
    square root of each measurement operator is the operator itself; an
    eigenvalue-based root would add ``sqrt(machine eps)`` noise on kernels.
    """
    mu = _mu(X, mu)
    S, q_S, T = _index_sets(X, S, q_S, T)
    comps = list(completions(X.ell, S, q_S, mu))
    rest = tuple(i for i in range(X.ell) if i not in T)
    nT, nR, d = X.na ** len(T), X.na ** len(rest), X.d
    out = np.zeros((nT, d, len(comps) * nR * d), dtype=complex)
    perm = T + rest
    for c, (w, q) in enumerate(comps):
        Pq = X.projectors(q).reshape((X.na,) * X.ell + (d, d))
        Pq = np.transpose(Pq, perm + (X.ell, X.ell + 1)).reshape(nT, nR, d, d)
        for t in range(nT):
            for r in range(nR):
                e = c * nR + r
                out[t, :, e * d : (e + 1) * d] = math.sqrt(w) * Pq[t, r]
    return out


def stinespring_term1(Xhat: np.ndarray, rho) -> np.ndarray:
    """``Tr((Xhat^† Xhat)^2 (Id_E (x) rho))`` for each dilation in the stack."""
    rho = np.asarray(rho, dtype=complex)
    d = rho.shape[0]
    E = Xhat.shape[2] // d
    lifted = np.kron(np.eye(E), rho)
    vals = []
    for H in Xhat:
        G = dagger(H) @ H
        vals.append(np.real(np.trace(G @ G @ lifted)))
    return np.array(vals)


# -- block classification -----------------------------------------------------


@dataclass
class BlockReport:
    R: tuple
    q_R: tuple
    eps: float
    eta: float
    pcol_total: float
    pcol: np.ndarray
    weights: np.ndarray
    status: str
    alive_answers: np.ndarray
    serial_lhs: float | None
    serial: dict
    serial_per_answer: dict
    alpha: np.ndarray | None
    mode: str
    samples: int
    pcol_stderr: float = 0.0
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "R": list(self.R),
            "q_R": list(self.q_R),
            "eps": self.eps,
            "eta": self.eta,
            "pcol_total": self.pcol_total,
            "pcol_stderr": self.pcol_stderr,
            "pcol": self.pcol.tolist(),
            "weights": self.weights.tolist(),
            "status": self.status,
            "alive_answers": [int(a) for a in np.flatnonzero(self.alive_answers)],
            "serial_lhs": self.serial_lhs,
            "serial": {str(k): v for k, v in self.serial.items()},
            "serial_per_answer": {str(k): v for k, v in self.serial_per_answer.items()},
            "alpha": None if self.alpha is None else self.alpha.tolist(),
            "mode": self.mode,
            "samples": self.samples,
            "tolerance": TRACE_TOL,
            "notes": list(self.notes),
        }


def _child_seed(seed: int, label: str, *index: int) -> int:
    return int(stream(seed, label, *index).integers(2**31))


def _extended(S, q_S, i, qi):
    pairs = sorted(list(zip(S, q_S)) + [(i, qi)])
    return tuple(p[0] for p in pairs), tuple(p[1] for p in pairs)


def _drop_answer_axis(per: np.ndarray, na: int, S_ext, i) -> np.ndarray:
    P = per.reshape((na,) * len(S_ext))
    return P.sum(axis=S_ext.index(i)).ravel()


def classify_block(
    X: RepeatedStrategy,
    rho,
    R,
    q_R,
    eps: float,
    eta: float,
    mu=None,
    mode: str = "auto",
    samples: int = 2000,
    seed: int = 0,
) -> BlockReport:
    """Dead/alive status of ``(R, q_R)`` and serial flags of its alive answers.

    The block is dead when its collision probability is at most `eps`; an
    answer is alive when its own collision probability is at least
    ``eps * Tr(X^{a_R} rho)``.  Alive answers are serial when the block-level
    inequality ``E_{(i,q_i)} P_col(q_R, q_i) >= (1 - eta) P_col(q_R)`` holds,
    the left side collecting collisions over ``R + {i}``; the answer itself
    only enters through aliveness.  ``serial_per_answer`` is the same
    comparison restricted to one answer, as a diagnostic.
    """
    mu = _mu(X, mu)
    R, q_R, _ = _index_sets(X, R, q_R, None)
    if eps < 0 or eta < 0:
        raise InvalidInputError("eps and eta must be non-negative")
    base = collision_probability(X, rho, R, q_R, R, mu, mode, samples, seed)
    status = "dead" if base.total <= eps else "alive"
    alive = base.per_answer >= eps * base.weights
    notes = []
    if base.mode == "mc":
        notes.append(f"collision total {base.total:.6g} +/- {base.total_stderr:.2g}; status not a hard flip")
    outside = [i for i in range(X.ell) if i not in R]
    support = np.flatnonzero(mu > 0)
    serial, serial_ans, lhs, alpha = {}, {}, None, None
    if alive.any() and outside:
        lhs = 0.0
        lhs_per = np.zeros_like(base.per_answer)
        infl = np.zeros_like(base.per_answer)
        for i in outside:
            for qi in support:
                w = mu[qi] / len(outside)
                S2, q2 = _extended(R, q_R, i, int(qi))
                s2 = _child_seed(seed, "serial", i, int(qi))
                ext = collision_probability(X, rho, S2, q2, S2, mu, mode, samples, s2)
                lhs += w * ext.total
                lhs_per += w * _drop_answer_axis(ext.per_answer, X.na, S2, i)
                if eta > 0:
                    same = collision_probability(X, rho, S2, q2, R, mu, mode, samples, s2)
                    infl += w * np.abs(base.term1 - same.term1)
        ok = bool(lhs >= (1.0 - eta) * base.total)
        for a in np.flatnonzero(alive):
            serial[int(a)] = ok
            serial_ans[int(a)] = bool(lhs_per[a] >= (1.0 - eta) * base.per_answer[a])
        if eta > 0:
            alpha = np.maximum(base.weights, infl / eta)
    elif alive.any():
        notes.append("R covers every round; serial flags undefined")
    return BlockReport(
        R, q_R, float(eps), float(eta), base.total, base.per_answer, base.weights, status, alive, lhs,
        serial, serial_ans, alpha, base.mode, base.samples, base.total_stderr, notes,
    )


def predinc_increase(X: RepeatedStrategy, rho, S, q_S, T=None, mu=None, mode: str = "auto") -> float:
    """``E_{(i,q_i)} P_col(q_S, q_i | T) - P_col(q_S | T)`` over rounds `i` outside `S`."""
    mu = _mu(X, mu)
    S, q_S, T = _index_sets(X, S, q_S, T)
    base = collision_probability(X, rho, S, q_S, T, mu, mode).total
    outside = [i for i in range(X.ell) if i not in S]
    if not outside:
        raise InvalidInputError("S covers every round")
    acc = 0.0
    for i in outside:
        for qi in np.flatnonzero(mu > 0):
            S2, q2 = _extended(S, q_S, i, int(qi))
            acc += mu[qi] / len(outside) * collision_probability(X, rho, S2, q2, T, mu, mode).total
    return acc - base


# -- stable block size --------------------------------------------------------


@dataclass
class StableBlockResult:
    r_star: int | None
    conclusive: bool
    threshold: float
    deltas: list
    stderrs: list
    mode: str
    trials: int

    def to_dict(self) -> dict:
        return {
            "r_star": self.r_star,
            "conclusive": self.conclusive,
            "threshold": self.threshold,
            "deltas": list(self.deltas),
            "stderrs": list(self.stderrs),
            "mode": self.mode,
            "trials": self.trials,
        }


def mean_block_collision(X: RepeatedStrategy, rho, r: int, mu=None, mode: str = "auto") -> float:
    """``E_{R, q_R} P_col(q_R | R)`` over uniform `r`-subsets and ``q_R ~ mu^r``."""
    mu = _mu(X, mu)
    support = np.flatnonzero(mu > 0)
    subsets = list(itertools.combinations(range(X.ell), r))
    acc = 0.0
    for R in subsets:
        for qR in itertools.product(support, repeat=r):
            w = float(np.prod(mu[list(qR)])) if r else 1.0
            acc += w * collision_probability(X, rho, R, qR, R, mu, mode).total
    return acc / len(subsets)


def find_stable_block_size(
    X: RepeatedStrategy,
    rho,
    c1: int,
    mu=None,
    mode: str = "exact",
    trials: int = 200,
    seed: int = 0,
    workers: int | None = None,
) -> StableBlockResult:
    """Smallest ``1 <= r <= c1`` whose collision decrease is at most ``8 / sqrt(c1)``.

    The decrease is ``Delta(r) = E[P_col(q_R | R)] - E[P_col(q_R, q_i | R + {i})]``.
    Since ``R + {i}`` is a uniform ``(r+1)``-subset with i.i.d. questions,
    exact mode evaluates it as a difference of consecutive block averages.
    MC mode samples `trials` blocks per `r` and accepts `r` only when
    ``Delta + 3 stderr`` clears the threshold; otherwise the result is
    inconclusive and carries the estimates.
    """
    if c1 < 1:
        raise InvalidInputError("c1 must be at least 1")
    mu = _mu(X, mu)
    rho = _check_rho(rho, X.d)
    thr = 8.0 / math.sqrt(c1)
    top = min(c1, X.ell - 1)
    deltas, errs = [], []
    if mode == "exact":
        m_prev = mean_block_collision(X, rho, 1, mu, "exact") if top >= 1 else None
        for r in range(1, top + 1):
            m_next = mean_block_collision(X, rho, r + 1, mu, "exact")
            deltas.append(m_prev - m_next)
            errs.append(0.0)
            if deltas[-1] <= thr:
                return StableBlockResult(r, True, thr, deltas, errs, mode, 0)
            m_prev = m_next
        return StableBlockResult(None, False, thr, deltas, errs, mode, 0)
    if mode != "mc":
        raise InvalidInputError(f"unknown mode {mode!r}")
    for r in range(1, top + 1):

        def one(rng, _, r=r):
            R = tuple(sorted(rng.choice(X.ell, size=r, replace=False).tolist()))
            qR = tuple(int(x) for x in rng.choice(X.nq, size=r, p=mu))
            i = int(rng.choice([j for j in range(X.ell) if j not in R]))
            qi = int(rng.choice(X.nq, p=mu))
            S2, q2 = _extended(R, qR, i, qi)
            a = collision_probability(X, rho, R, qR, R, mu, "auto", seed=int(rng.integers(2**31))).total
            b = collision_probability(X, rho, S2, q2, S2, mu, "auto", seed=int(rng.integers(2**31))).total
            return a - b

        vals = run_samples(one, trials, seed, f"stable-{r}", workers)
        m, se = mean_stderr(vals)
        deltas.append(m)
        errs.append(se)
        if m + 3 * se <= thr:
            return StableBlockResult(r, True, thr, deltas, errs, mode, trials)
    return StableBlockResult(None, False, thr, deltas, errs, mode, trials)


# -- success bounds -----------------------------------------------------------


def conditional_success(
    g: Game,
    spec: RepetitionSpec,
    alice: RepeatedStrategy,
    bob: RepeatedStrategy,
    state,
    R,
    q_R,
    samples: int = 10_000,
    seed: int = 0,
    check: str = "all",
    eps: float | None = None,
    layout: RoundLayout | None = None,
    workers: int | None = None,
) -> MCEstimate:
    """Winning probability conditioned on the second player's questions on `R` being `q_R`.

    Rounds are sampled with `R` forced to be game (FK) or consistency (DR)
    indices, so no sample is rejected.  ``check="block"`` only verifies the
    answers on `R`, which upper-bounds the full verdict.  A fixed `layout`
    replaces the random one.  With `eps` given the report carries the dead
    block bound ``sqrt(2 eps)`` and whether ``eps >= c1 / c2`` holds.
    """
    check_game_class(g, spec)
    if check not in ("all", "block"):
        raise InvalidInputError("check must be 'all' or 'block'")
    R = tuple(int(i) for i in R)
    q_R = tuple(int(x) for x in q_R)
    if len(R) != len(q_R) or len(set(R)) != len(R):
        raise InvalidInputError("R and q_R must have the same length and R must be distinct")
    marg = g.pi_B if spec.kind == "FK" else g.pi_A
    if any(x < 0 or x >= g.nq or marg[x] <= 0 for x in q_R):
        raise InvalidInputError(f"questions {q_R} have zero probability")
    if layout is not None and layout.ell != spec.ell:
        raise InvalidInputError("layout length does not match the repetition")
    ev = _Evaluator(g, alice, bob, state)
    sampler = _Sampler(g)

    def one(rng, _):
        lay = conditioned_layout(spec, R, rng) if layout is None else layout
        qa, qb = conditioned_questions(lay, sampler, R, q_R, rng)
        if check == "block":
            lay = RoundLayout(tuple(t if i in R else CONFUSE for i, t in enumerate(lay.tags)))
        return ev.exact(lay, qa, qb)

    vals = run_samples(one, samples, seed, "conditional", workers)
    est, se = mean_stderr(vals)
    extra = {"spec": spec.to_dict(), "R": list(R), "q_R": list(q_R), "check": check}
    if eps is not None:
        bound = math.sqrt(2.0 * eps)
        extra.update(
            {
                "eps": float(eps),
                "bound": bound,
                "hypothesis_holds": bool(spec.c2 > 0 and eps >= spec.c1 / spec.c2),
                "within_bound": bool(est <= bound + 3.0 * se),
            }
        )
    return MCEstimate(est, se, int(samples), int(seed), extra)


def _family(F, name: str, rounds: int) -> np.ndarray:
    F = np.asarray(F, dtype=complex)
    if F.ndim == 4:
        F = np.broadcast_to(F, (max(rounds, 1),) + F.shape)
    if F.ndim != 5 or F.shape[3] != F.shape[4]:
        raise InvalidInputError(f"{name} must have shape (|Q|, |A|, d, d) or (g, |Q|, |A|, d, d)")
    for t in range(F.shape[0]):
        for x in range(F.shape[1]):
            bad = measurement_problems(F[t, x])
            if bad:
                raise UnsupportedStrategyError(f"{name} round {t} question {x}: " + ", ".join(bad))
    return F


def sequential_success_check(
    g: Game,
    s_bound: float,
    pi_family,
    g_rounds: int,
    samples: int = 10_000,
    seed: int = 0,
    alice_family=None,
    state=None,
    delta_prime: float = 0.0,
    workers: int | None = None,
) -> MCEstimate:
    """Probability of winning `g_rounds` rounds played one after another on one state.

    Each round draws ``(q', q) ~ pi``; the first player measures its family,
    the second its ``Pi`` family, the state collapses onto the outcome, and
    the round is checked with the predicate.  A single-round family (shape
    ``(|Q|, |A|, d, d)``) is reused in every round.  The report carries the
    comparator ``exp(-(1 - s - delta')^2 g)``, the independent-rounds value
    ``s^g`` and the single-round value of the families on the initial state.
    """
    if g_rounds < 0:
        raise InvalidInputError("g_rounds must be non-negative")
    B = _family(pi_family, "pi_family", g_rounds)
    A = B if alice_family is None else _family(alice_family, "alice_family", g_rounds)
    dA, dB = A.shape[-1], B.shape[-1]
    M0 = state_matrix(maximally_entangled(dB) if state is None else state)
    if M0.shape != (dA, dB):
        raise InvalidInputError(f"state shape {M0.shape} does not match families ({dA}, {dB})")
    M0 = M0 / np.linalg.norm(M0)
    if A.shape[1:3] != (g.nq, g.na) or B.shape[1:3] != (g.nq, g.na):
        raise InvalidInputError("families do not match the game alphabets")
    sampler = _Sampler(g)
    # per-round value of round-0 families on the starting state
    p0 = np.einsum("xbij,jk,yakl,li->xyba", A[0], M0, B[0], dagger(M0)).real
    per_round = float(np.sum(g.pi[:, :, None, None] * g.V * p0))

    def one(rng, _):
        M = M0.copy()
        for t in range(g_rounds):
            x, y = (int(v[0]) for v in sampler.pairs(rng, 1))
            # amplitudes A_b M Pi_a for every outcome pair
            amp = np.einsum("bij,jk,akl->bail", A[t, x], M, B[t, y])
            p = np.clip(np.sum(np.abs(amp) ** 2, axis=(2, 3)).ravel(), 0.0, None)
            c = min(int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right")), p.size - 1)
            b, a = divmod(c, g.na)
            if not g.V[x, y, b, a]:
                return 0.0
            M = amp[b, a] / math.sqrt(p[c])
        return 1.0

    vals = run_samples(one, samples, seed, "sequential", workers)
    est, se = mean_stderr(vals)
    chernoff = math.exp(-((1.0 - s_bound - delta_prime) ** 2) * g_rounds)
    extra = {
        "g_rounds": int(g_rounds),
        "s_bound": float(s_bound),
        "delta_prime": float(delta_prime),
        "chernoff_bound": chernoff,
        "product_bound": float(s_bound**g_rounds),
        "per_round_value": per_round,
        "precondition_holds": bool(per_round <= s_bound + 1e-12),
        "within_bound": bool(est <= chernoff + 3.0 * se),
    }
    return MCEstimate(est, se, int(samples), int(seed), extra)
