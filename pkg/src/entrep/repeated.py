"""Repeated strategies: maps from question tuples in Q^l to measurements over A^l.

Answer and question tuples are flattened row-major, round 0 most
significant.  Besides whole measurements, every backing provides
``answer_sums(q, T)``: the projectors of the coarse measurement that only
reports the answers on the rounds in `T` (sorted).
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import InvalidInputError, ResourceLimitError, UnsupportedStrategyError
from .linalg import dagger
from .strategy import QuantumStrategy, measurement_problems

MAX_TABLE = 4096  # |Q|^l and |A|^l limit for explicit tables
MAX_DENSE_DIM = 4096  # largest dimension ever materialized as a dense matrix
MAX_PRODUCT_DIM = 2**16  # factorized product strategies may be larger than dense ones


def encode(t: Sequence[int], n: int) -> int:
    c = 0
    for x in t:
        c = c * n + int(x)
    return c


def decode(c: int, n: int, length: int) -> tuple[int, ...]:
    out = []
    for _ in range(length):
        c, r = divmod(c, n)
        out.append(r)
    return tuple(reversed(out))


def digits(codes: np.ndarray, n: int, length: int) -> np.ndarray:
    """Row-major digits of integer codes, shape (len(codes), length)."""
    powers = n ** np.arange(length - 1, -1, -1)
    return (np.asarray(codes)[:, None] // powers[None, :]) % n


def norm_index_set(T, ell: int) -> tuple[int, ...]:
    T = tuple(sorted(set(int(i) for i in T)))
    if T and (T[0] < 0 or T[-1] >= ell):
        raise InvalidInputError(f"index set {T} is not inside range({ell})")
    return T


def kron_family(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Kronecker products of two operator families, outcome index row-major."""
    n1, a, b = X.shape
    n2, c, e = Y.shape
    return np.einsum("xij,ykl->xyikjl", X, Y).reshape(n1 * n2, a * c, b * e)


class _Memo:
    """Populate-once cache: the first stored value for a key is kept."""

    def __init__(self, limit: int | None = None):
        self._data = {}
        self._lock = threading.Lock()
        self._limit = limit

    def get(self, key, compute):
        try:
            return self._data[key]
        except KeyError:
            pass
        value = compute()
        with self._lock:
            if self._limit is not None and len(self._data) >= self._limit:
                return self._data.get(key, value)
            return self._data.setdefault(key, value)


class RepeatedStrategy:
    """Base class; subclasses implement :meth:`projectors` or override the sums."""

    kind = "abstract"
    is_diagonal = False

    def __init__(self, ell: int, nq: int, na: int, d: int):
        if ell < 1 or nq < 1 or na < 1 or d < 1:
            raise InvalidInputError("ell, |Q|, |A| and d must be positive")
        self.ell, self.nq, self.na, self.d = int(ell), int(nq), int(na), int(d)

    def _check_q(self, q) -> tuple[int, ...]:
        q = tuple(int(x) for x in q)
        if len(q) != self.ell or any(x < 0 or x >= self.nq for x in q):
            raise InvalidInputError(f"question tuple {q} invalid for l={self.ell}, |Q|={self.nq}")
        return q

    def _check_dense(self):
        if self.d > MAX_DENSE_DIM:
            raise ResourceLimitError(f"dimension {self.d} exceeds the dense limit {MAX_DENSE_DIM}")

    def projectors(self, q) -> np.ndarray:
        """Full measurement for tuple `q`, shape (|A|^l, d, d)."""
        raise NotImplementedError

    def answer_sums(self, q, T) -> np.ndarray:
        """``sum_{a outside T} X_q^{a_T a}`` for every `a_T`, shape (|A|^|T|, d, d)."""
        T = norm_index_set(T, self.ell)
        P = self.projectors(q)
        P = P.reshape((self.na,) * self.ell + (self.d, self.d))
        rest = tuple(i for i in range(self.ell) if i not in T)
        return P.sum(axis=rest).reshape(self.na ** len(T), self.d, self.d)

    def pinch_trace(self, q, T, Z: np.ndarray, rho: np.ndarray) -> np.ndarray:
        """``Tr(sum_{a outside T} X^{a_T a} Z_{a_T} X^{a_T a} rho)`` for every `a_T`."""
        T = norm_index_set(T, self.ell)
        P = self.projectors(q).reshape((self.na,) * self.ell + (self.d, self.d))
        rest = tuple(i for i in range(self.ell) if i not in T)
        P = np.transpose(P, T + rest + (self.ell, self.ell + 1))
        P = P.reshape(self.na ** len(T), self.na ** len(rest), self.d, self.d)
        # Tr(P Z P rho) = sum_ijkl P_ij Z_jk P_kl rho_li
        PZ = np.einsum("trij,tjk->trik", P, Z)
        Prho = P @ rho[None, None]
        return np.real(np.einsum("trik,trki->t", PZ, Prho))


class ExplicitStrategy(RepeatedStrategy):
    """Table of full measurements, one per question tuple."""

    kind = "explicit"

    def __init__(self, ell, nq, na, d, table, validate: bool = True):
        super().__init__(ell, nq, na, d)
        if nq**ell > MAX_TABLE or na**ell > MAX_TABLE:
            raise ResourceLimitError("explicit tables need |Q|^l and |A|^l at most 4096")
        T = np.asarray(table, dtype=complex)
        if T.shape != (nq**ell, na**ell, d, d):
            raise InvalidInputError(f"table has shape {T.shape}, expected {(nq**ell, na**ell, d, d)}")
        if validate:
            for c in range(T.shape[0]):
                bad = measurement_problems(T[c])
                if bad:
                    raise UnsupportedStrategyError(f"tuple {decode(c, nq, ell)}: " + ", ".join(bad))
        T = 0.5 * (T + dagger(T))
        T.setflags(write=False)
        self.table = T

    def projectors(self, q):
        return self.table[encode(self._check_q(q), self.nq)]


class CallbackStrategy(RepeatedStrategy):
    """Measurements produced on demand by ``fn(q) -> (|A|^l, d, d)`` and cached."""

    kind = "custom"

    def __init__(self, ell, nq, na, d, fn: Callable, cache_limit: int | None = None):
        super().__init__(ell, nq, na, d)
        if na**ell > MAX_TABLE:
            raise ResourceLimitError("callback measurements over more than 4096 answers")
        self._fn = fn
        self._memo = _Memo(cache_limit)

    def _make(self, q):
        P = np.asarray(self._fn(q), dtype=complex)
        if P.shape != (self.na**self.ell, self.d, self.d):
            raise InvalidInputError(f"callback returned shape {P.shape}")
        bad = measurement_problems(P)
        if bad:
            raise UnsupportedStrategyError(f"tuple {q}: " + ", ".join(bad))
        P = 0.5 * (P + dagger(P))
        P.setflags(write=False)
        return P

    def projectors(self, q):
        q = self._check_q(q)
        return self._memo.get(q, lambda: self._make(q))


class ProductStrategy(RepeatedStrategy):
    """Round-by-round tensor product of single-round measurements."""

    kind = "product"

    def __init__(self, per_round: np.ndarray, ell: int):
        per_round = np.asarray(per_round, dtype=complex)
        if per_round.ndim != 4 or per_round.shape[2] != per_round.shape[3]:
            raise InvalidInputError("per-round measurements must have shape (|Q|, |A|, d, d)")
        for x in range(per_round.shape[0]):
            bad = measurement_problems(per_round[x])
            if bad:
                raise UnsupportedStrategyError(f"per-round question {x}: " + ", ".join(bad))
        nq, na, d0, _ = per_round.shape
        if d0**ell > MAX_PRODUCT_DIM:
            raise ResourceLimitError(f"product dimension {d0}^{ell} exceeds {MAX_PRODUCT_DIM}")
        super().__init__(ell, nq, na, d0**ell)
        self.per_round = per_round
        self.d0 = d0

    def answer_sums(self, q, T):
        q = self._check_q(q)
        T = norm_index_set(T, self.ell)
        self._check_dense()
        I = np.eye(self.d0, dtype=complex)[None]
        out = np.ones((1, 1, 1), dtype=complex)
        for i in range(self.ell):
            out = kron_family(out, self.per_round[q[i]] if i in T else I)
        return out

    def projectors(self, q):
        return self.answer_sums(q, range(self.ell))


class ProductState:
    """l-fold tensor power of a bipartite pure state, kept factorized."""

    def __init__(self, per_round: np.ndarray, ell: int):
        self.per_round = np.asarray(per_round, dtype=complex).ravel()
        self.d0 = int(round(np.sqrt(self.per_round.size)))
        self.ell = int(ell)
        self.d = self.d0**self.ell

    def factor_matrix(self) -> np.ndarray:
        return self.per_round.reshape(self.d0, self.d0)

    def matrix(self) -> np.ndarray:
        if self.d > MAX_DENSE_DIM:
            raise ResourceLimitError(f"dimension {self.d} exceeds the dense limit {MAX_DENSE_DIM}")
        M0 = self.factor_matrix()
        M = np.ones((1, 1), dtype=complex)
        for _ in range(self.ell):
            M = np.kron(M, M0)
        return M

    def vector(self) -> np.ndarray:
        return self.matrix().ravel()


class RepeatedGameStrategy(NamedTuple):
    alice: RepeatedStrategy
    bob: RepeatedStrategy
    state: object


def build_product_strategy(per_round: QuantumStrategy, ell: int) -> RepeatedGameStrategy:
    """Both players answer each round with the single-round strategy."""
    if ell < 1:
        raise InvalidInputError("ell must be at least 1")
    return RepeatedGameStrategy(
        ProductStrategy(per_round.alice, ell),
        ProductStrategy(per_round.bob, ell),
        ProductState(per_round.state, ell),
    )


class LabelStrategy(RepeatedStrategy):
    """Measurements diagonal in a fixed basis.

    ``label_fn(q)`` returns an integer array of shape (d, l): the answer tuple
    reported when basis vector `k` is found.  All projectors are sums of basis
    projectors, so sums and pinchings reduce to counting.
    """

    kind = "label"
    is_diagonal = True

    def __init__(self, ell, nq, na, d, label_fn: Callable, cache_limit: int | None = 1 << 16):
        super().__init__(ell, nq, na, d)
        self._fn = label_fn
        self._memo = _Memo(cache_limit)

    def _make(self, q):
        L = np.asarray(self._fn(q))
        if L.shape != (self.d, self.ell) or np.any(L < 0) or np.any(L >= self.na):
            raise InvalidInputError(f"label function returned an invalid table for {q}")
        L = L.astype(np.int64)
        L.setflags(write=False)
        return L

    def labels(self, q) -> np.ndarray:
        q = self._check_q(q)
        return self._memo.get(q, lambda: self._make(q))

    def codes(self, q, T) -> np.ndarray:
        """Code of the answers on `T` reported for each basis vector."""
        T = norm_index_set(T, self.ell)
        L = self.labels(q)
        c = np.zeros(self.d, dtype=np.int64)
        for i in T:
            c = c * self.na + L[:, i]
        return c

    def diag_answer_sums(self, q, T) -> np.ndarray:
        T = norm_index_set(T, self.ell)
        c = self.codes(q, T)
        out = np.zeros((self.na ** len(T), self.d))
        out[c, np.arange(self.d)] = 1.0
        return out

    def answer_sums(self, q, T):
        self._check_dense()
        D = self.diag_answer_sums(q, T)
        out = np.zeros((D.shape[0], self.d, self.d), dtype=complex)
        idx = np.arange(self.d)
        out[:, idx, idx] = D
        return out

    def projectors(self, q):
        return self.answer_sums(q, range(self.ell))

    def pinch_trace(self, q, T, Z, rho):
        T = norm_index_set(T, self.ell)
        cT = self.codes(q, T)
        full = self.codes(q, range(self.ell))
        rows = Z[cT, np.arange(self.d), :]  # row k of Z_{a_T(k)}
        same = full[:, None] == full[None, :]
        vals = np.real(np.sum(rows * rho.T * same, axis=1))
        return np.bincount(cT, weights=vals, minlength=self.na ** len(T))


def default_parity_rule(ell: int, na: int) -> Callable:
    """Round-wise shifts ``s_i(q) = sum of q_j over the window after i``, mod |A|.

    The window holds the ``floor(l/2)`` rounds following `i` cyclically, so
    each round's answer is scrambled by questions of other rounds only.
    """
    half = ell // 2
    W = np.zeros((ell, ell), dtype=np.int64)
    for i in range(ell):
        for t in range(1, half + 1):
            W[i, (i + t) % ell] = 1

    def rule(q):
        return (W @ np.asarray(q, dtype=np.int64)) % na

    rule.matrix = W
    return rule


def build_scrambling_strategy(ell: int, nq: int, na: int, d: int, rule: Callable | None = None) -> LabelStrategy:
    """Diagonal strategy whose answer blocks are permuted by ``rule(q)``.

    Basis vector `k` belongs to block ``k mod |A|^l`` with digit tuple `b`.
    A rule may return a shift vector of length `l` (answers ``b + s mod |A|``)
    or a permutation of ``range(|A|^l)`` applied to block codes.
    """
    n_blocks = na**ell
    if d < n_blocks:
        raise InvalidInputError(f"dimension {d} cannot hold {n_blocks} answer blocks")
    rule = default_parity_rule(ell, na) if rule is None else rule
    block = np.arange(d) % n_blocks
    b = digits(block, na, ell)

    def label_fn(q):
        r = np.asarray(rule(q), dtype=np.int64).ravel()
        if r.size == ell:
            if np.any(r < 0) or np.any(r >= na):
                raise InvalidInputError("shift vector out of range")
            return (b + r[None, :]) % na
        if r.size == n_blocks and np.array_equal(np.sort(r), np.arange(n_blocks)):
            return digits(r[block], na, ell)
        raise InvalidInputError("rule must return a shift vector or a permutation of the blocks")

    s = LabelStrategy(ell, nq, na, d, label_fn)
    s.kind = "scrambling"
    s.rule = rule
    return s


def completions(ell: int, S: Sequence[int], q_S: Sequence[int], mu: np.ndarray):
    """Yield ``(weight, full tuple)`` for every completion of `q_S` on the rounds outside `S`."""
    S = tuple(S)
    rest = [i for i in range(ell) if i not in S]
    mu = np.asarray(mu, dtype=float)
    support = np.flatnonzero(mu > 0)
    q = [0] * ell
    for i, x in zip(S, q_S):
        q[i] = int(x)
    for combo in itertools.product(support, repeat=len(rest)):
        w = 1.0
        for i, x in zip(rest, combo):
            q[i] = int(x)
            w *= mu[x]
        yield w, tuple(q)


def n_completions(ell: int, S, mu) -> int:
    return int(np.count_nonzero(np.asarray(mu) > 0)) ** (ell - len(tuple(S)))


def sample_completion(ell: int, S, q_S, mu, rng) -> tuple[int, ...]:
    q = rng.choice(len(mu), size=ell, p=mu)
    for i, x in zip(S, q_S):
        q[i] = x
    return tuple(int(x) for x in q)
