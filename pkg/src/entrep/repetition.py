"""Referee side of the Feige-Kilian (FK) and Dinur-Reingold (DR) repetitions.

A round of the l-fold repeated game tags every index as a game, confuse or
consistency index, draws the question tuples and checks the answers.  The
players only ever see the question tuples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import GameClassError, InvalidInputError, ResourceLimitError
from .game import Game, classify_game
from .mc import MCEstimate, mean_stderr, run_samples
from .repeated import (
    MAX_DENSE_DIM,
    MAX_TABLE,
    ProductState,
    ProductStrategy,
    RepeatedStrategy,
    digits,
)
from .strategy import joint_distribution, outcome_tables, state_matrix

GAME, CONFUSE, CONSISTENCY = "game", "confuse", "consistency"
TAGS = (GAME, CONFUSE, CONSISTENCY)


@dataclass(frozen=True)
class RepetitionSpec:
    """Round counts of an FK or DR repetition with `ell` rounds."""

    kind: str
    ell: int
    c1: int
    c2: int
    c1_prime: int = 0

    @property
    def n_game(self) -> int:
        return self.c1 if self.kind == "FK" else self.c1_prime

    @property
    def n_consistency(self) -> int:
        return 0 if self.kind == "FK" else self.c1_prime

    @property
    def n_confuse(self) -> int:
        return self.c2

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "ell": self.ell, "c1": self.c1, "c2": self.c2}
        if self.kind == "DR":
            out["c1_prime"] = self.c1_prime
        return out


def make_spec(kind: str, ell: int) -> RepetitionSpec:
    """Derive the round counts; the square root of `ell` is rounded down.

    >>> make_spec("FK", 10)
    RepetitionSpec(kind='FK', ell=10, c1=3, c2=7, c1_prime=0)
    """
    kind = str(kind).upper()
    ell = int(ell)
    if ell < 1:
        raise InvalidInputError("ell must be at least 1")
    root = math.isqrt(ell)
    if kind == "FK":
        return RepetitionSpec("FK", ell, root, ell - root)
    if kind == "DR":
        if ell < 4 or 2 * root > ell:
            raise InvalidInputError(f"DR repetition needs ell >= 4, got {ell}")
        return RepetitionSpec("DR", ell, 2 * root, ell - 2 * root, root)
    raise InvalidInputError(f"unknown repetition kind {kind!r}; use FK or DR")


@dataclass(frozen=True)
class RoundLayout:
    tags: tuple

    @property
    def ell(self) -> int:
        return len(self.tags)

    def indices(self, tag: str) -> tuple[int, ...]:
        return tuple(i for i, t in enumerate(self.tags) if t == tag)

    @property
    def game(self) -> tuple[int, ...]:
        return self.indices(GAME)

    @property
    def confuse(self) -> tuple[int, ...]:
        return self.indices(CONFUSE)

    @property
    def consistency(self) -> tuple[int, ...]:
        return self.indices(CONSISTENCY)

    @property
    def checked(self) -> tuple[int, ...]:
        """Indices whose answers the referee looks at, in increasing order."""
        return tuple(i for i, t in enumerate(self.tags) if t != CONFUSE)


def check_game_class(g: Game, spec: RepetitionSpec) -> None:
    cls = classify_game(g)
    if spec.kind == "FK" and not cls.is_projection:
        raise GameClassError("FK repetition requires a projection game")
    if spec.kind == "DR" and not cls.is_symmetric:
        raise GameClassError("DR repetition requires a symmetric game")


class _Sampler:
    """Inverse-CDF samplers for pi and its marginals."""

    def __init__(self, g: Game):
        self.nq = g.nq
        self.pi = np.cumsum(g.pi.ravel())
        self.pa = np.cumsum(g.pi_A)
        self.pb = np.cumsum(g.pi_B)
        # conditional of the first question given the second
        pb = g.pi_B
        with np.errstate(invalid="ignore", divide="ignore"):
            cond = np.where(pb[None, :] > 0, g.pi / pb[None, :], 0.0)
        self.given_b = np.cumsum(cond, axis=0)

    @staticmethod
    def _draw(cdf, u):
        return np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), cdf.size - 1)

    def pairs(self, rng, n):
        c = self._draw(self.pi, rng.random(n))
        return c // self.nq, c % self.nq

    def first(self, rng, n):
        return self._draw(self.pa, rng.random(n))

    def second(self, rng, n):
        return self._draw(self.pb, rng.random(n))

    def first_given_second(self, rng, q):
        return np.array([self._draw(self.given_b[:, y], rng.random()) for y in q], dtype=np.int64)


def random_layout(spec: RepetitionSpec, rng) -> RoundLayout:
    tags = [GAME] * spec.n_game + [CONSISTENCY] * spec.n_consistency + [CONFUSE] * spec.n_confuse
    order = rng.permutation(spec.ell)
    return RoundLayout(tuple(tags[i] for i in order))


def _questions_for(layout: RoundLayout, sampler: _Sampler, rng):
    ell = layout.ell
    qa = np.zeros(ell, dtype=np.int64)
    qb = np.zeros(ell, dtype=np.int64)
    G, F, R = layout.game, layout.confuse, layout.consistency
    if G:
        qa[list(G)], qb[list(G)] = sampler.pairs(rng, len(G))
    if F:
        qa[list(F)] = sampler.first(rng, len(F))
        qb[list(F)] = sampler.second(rng, len(F))
    if R:
        x = sampler.first(rng, len(R))
        qa[list(R)] = x
        qb[list(R)] = x
    return tuple(int(x) for x in qa), tuple(int(x) for x in qb)


def sample_round(g: Game, spec: RepetitionSpec, rng):
    """Draw a layout and the question tuples ``(q', q)`` for one round."""
    check_game_class(g, spec)
    layout = random_layout(spec, rng)
    qa, qb = _questions_for(layout, _Sampler(g), rng)
    return layout, qa, qb


def conditioned_layout(spec: RepetitionSpec, R, rng) -> RoundLayout:
    """Random layout with the indices in `R` forced to be correlated rounds.

    Under FK they are game indices, under DR consistency indices; the
    remaining tags are distributed uniformly over the other indices.
    """
    R = tuple(sorted(set(int(i) for i in R)))
    if R and (R[0] < 0 or R[-1] >= spec.ell):
        raise InvalidInputError(f"block {R} is not inside range({spec.ell})")
    forced = GAME if spec.kind == "FK" else CONSISTENCY
    budget = spec.n_game if spec.kind == "FK" else spec.n_consistency
    if len(R) > budget:
        raise InvalidInputError(f"block of size {len(R)} exceeds the {budget} {forced} indices")
    rest = [i for i in range(spec.ell) if i not in R]
    counts = {GAME: spec.n_game, CONSISTENCY: spec.n_consistency, CONFUSE: spec.n_confuse}
    counts[forced] -= len(R)
    pool = [t for t in TAGS for _ in range(counts[t])]
    order = rng.permutation(len(rest))
    tags = [forced] * spec.ell
    for j, i in enumerate(rest):
        tags[i] = pool[order[j]]
    return RoundLayout(tuple(tags))


def conditioned_questions(layout: RoundLayout, sampler: _Sampler, R, q_R, rng):
    """Questions for `layout` with the second player's questions on `R` fixed to `q_R`.

    On a game index of `R` the first player's question is drawn from
    ``pi(. | q_R)``; on a consistency index it equals `q_R`.
    """
    qa, qb = _questions_for(layout, sampler, rng)
    qa, qb = list(qa), list(qb)
    R = tuple(R)
    game_R = [(i, x) for i, x in zip(R, q_R) if layout.tags[i] == GAME]
    if game_R:
        firsts = sampler.first_given_second(rng, [x for _, x in game_R])
        for (i, x), y in zip(game_R, firsts):
            qa[i], qb[i] = int(y), int(x)
    for i, x in zip(R, q_R):
        if layout.tags[i] == CONSISTENCY:
            qa[i] = qb[i] = int(x)
        elif layout.tags[i] == CONFUSE:
            qb[i] = int(x)
    return tuple(qa), tuple(qb)


def verdict(g: Game, layout: RoundLayout, qa, qb, aa, ab) -> bool:
    """Referee's decision: V on game indices, equality on consistency indices."""
    n = layout.ell
    if not (len(qa) == len(qb) == len(aa) == len(ab) == n):
        raise InvalidInputError(f"question and answer tuples must all have length {n}")
    for i, t in enumerate(layout.tags):
        if t == GAME and not g.V[qa[i], qb[i], aa[i], ab[i]]:
            return False
        if t == CONSISTENCY and aa[i] != ab[i]:
            return False
    return True


def acceptance_factors(g: Game, layout: RoundLayout, qa, qb) -> list[np.ndarray]:
    """Per checked index, the |A| x |A| acceptance matrix over ``(a'_i, a_i)``."""
    eye = np.eye(g.na)
    return [g.V[qa[i], qb[i]].astype(float) if layout.tags[i] == GAME else eye for i in layout.checked]


def _kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1))
    for m in mats:
        out = np.kron(out, m)
    return out


class _Evaluator:
    """Acceptance probability of one sampled round for fixed strategies."""

    def __init__(self, g: Game, alice: RepeatedStrategy, bob: RepeatedStrategy, state):
        if (alice.ell, alice.nq, alice.na, alice.d) != (bob.ell, bob.nq, bob.na, bob.d):
            raise InvalidInputError("Alice and Bob strategies have different shapes")
        if alice.nq != g.nq or alice.na != g.na:
            raise InvalidInputError("strategy alphabets do not match the game")
        self.g, self.alice, self.bob = g, alice, bob
        self.product = isinstance(alice, ProductStrategy) and isinstance(bob, ProductStrategy) and isinstance(
            state, ProductState
        )
        if self.product:
            if state.d0 != alice.d0 or state.ell != alice.ell:
                raise InvalidInputError("product state does not match the strategies")
            self.p0 = outcome_tables(g, alice.per_round, bob.per_round, state.factor_matrix())
            self.M = None
        else:
            M = state.matrix() if isinstance(state, ProductState) else state_matrix(state)
            if M.shape != (alice.d, alice.d):
                raise InvalidInputError(f"state dimension {M.shape[0]} does not match d={alice.d}")
            self.M = M
            self.p0 = None
        self.diagonal = alice.is_diagonal and bob.is_diagonal
        self._mass_cdf = None
        # label strategies on a Schmidt-diagonal state only see |M_kk|^2
        self.diag_mass = None
        if self.diagonal and self.M is not None:
            off = self.M - np.diag(np.diag(self.M))
            if not np.any(off):
                self.diag_mass = np.abs(np.diag(self.M)) ** 2

    def _families(self, qa, qb, T):
        if self.diagonal:
            return self.alice.diag_answer_sums(qa, T), self.bob.diag_answer_sums(qb, T)
        if self.alice.d > MAX_DENSE_DIM:
            raise ResourceLimitError(f"dimension {self.alice.d} too large for dense evaluation")
        return self.alice.answer_sums(qa, T), self.bob.answer_sums(qb, T)

    def exact(self, layout, qa, qb) -> float:
        T = layout.checked
        if not T:
            return 1.0
        F = acceptance_factors(self.g, layout, qa, qb)
        if self.product:
            p = 1.0
            for f, i in zip(F, T):
                p *= float(np.sum(self.p0[qa[i], qb[i]] * f))
            return p
        if self.g.na ** len(T) > MAX_TABLE:
            raise ResourceLimitError("joint outcome table too large; use outcome sampling")
        p = self.table(qa, qb, T)
        return float(np.sum(p * _kron_all(F)))

    def table(self, qa, qb, T) -> np.ndarray:
        """Joint distribution of the answers on `T`, shape (|A|^|T|, |A|^|T|)."""
        n = self.g.na ** len(T)
        if self.diag_mass is not None:
            cA = self.alice.codes(qa, T)
            cB = self.bob.codes(qb, T)
            return np.bincount(cA * n + cB, weights=self.diag_mass, minlength=n * n).reshape(n, n)
        A, B = self._families(qa, qb, T)
        return joint_distribution(A, B, self.M)

    def sampled(self, layout, qa, qb, rng) -> float:
        T = layout.checked
        if not T:
            return 1.0
        g, na = self.g, self.g.na
        if self.product:
            for i in T:
                p = np.clip(self.p0[qa[i], qb[i]].ravel(), 0.0, None)
                c = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
                b, a = divmod(min(c, p.size - 1), na)
                if layout.tags[i] == GAME and not g.V[qa[i], qb[i], b, a]:
                    return 0.0
                if layout.tags[i] == CONSISTENCY and a != b:
                    return 0.0
            return 1.0
        if na ** len(T) <= MAX_TABLE:
            p = np.clip(self.table(qa, qb, T).ravel(), 0.0, None)
            c = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
            x, y = divmod(min(c, p.size - 1), na ** len(T))
        elif self.diagonal:
            # sample the pair of basis vectors then read off both labels
            if self._mass_cdf is None:
                self._mass_cdf = np.cumsum((np.abs(self.M) ** 2).ravel())
            cdf = self._mass_cdf
            c = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), cdf.size - 1)
            k, kk = divmod(c, self.alice.d)
            x = int(self.alice.codes(qa, T)[k])
            y = int(self.bob.codes(qb, T)[kk])
        else:
            raise ResourceLimitError("outcome sampling over more than 4096 answers needs diagonal strategies")
        ax = digits(np.array([x]), na, len(T))[0]
        ay = digits(np.array([y]), na, len(T))[0]
        for j, i in enumerate(T):
            if layout.tags[i] == GAME and not g.V[qa[i], qb[i], ax[j], ay[j]]:
                return 0.0
            if layout.tags[i] == CONSISTENCY and ax[j] != ay[j]:
                return 0.0
        return 1.0


def _outcome_mode(outcome: str, g: Game, spec: RepetitionSpec, ev: _Evaluator) -> str:
    if outcome not in ("auto", "exact", "sample"):
        raise InvalidInputError(f"unknown outcome mode {outcome!r}")
    if outcome != "auto":
        return outcome
    checked = spec.n_game + spec.n_consistency
    return "exact" if ev.product or g.na**checked <= MAX_TABLE else "sample"


def estimate_repeated_value(
    g: Game,
    spec: RepetitionSpec,
    alice: RepeatedStrategy,
    bob: RepeatedStrategy,
    state,
    samples: int = 10_000,
    seed: int = 0,
    outcome: str = "auto",
    workers: int | None = None,
) -> MCEstimate:
    """Monte Carlo estimate of the winning probability in the repeated game.

    Each sample draws a round with its own generator.  With ``outcome="exact"``
    the sample's value is the exact acceptance probability given the
    questions; with ``"sample"`` an outcome pair is drawn and the value is 0
    or 1.  ``"auto"`` picks exact evaluation when the checked answers fit a
    4096-entry table.

    Returns
    -------
    MCEstimate
        ``extra`` holds the repetition parameters, the outcome mode and the
        number of rejecting samples (sample mode) or the expected number of
        rejections (exact mode).
    """
    check_game_class(g, spec)
    if alice.ell != spec.ell:
        raise InvalidInputError(f"strategies have l={alice.ell}, repetition has l={spec.ell}")
    ev = _Evaluator(g, alice, bob, state)
    mode = _outcome_mode(outcome, g, spec, ev)
    sampler = _Sampler(g)

    def one(rng, _):
        layout = random_layout(spec, rng)
        qa, qb = _questions_for(layout, sampler, rng)
        return ev.exact(layout, qa, qb) if mode == "exact" else ev.sampled(layout, qa, qb, rng)

    vals = run_samples(one, samples, seed, f"repeat-{spec.kind}", workers)
    est, se = mean_stderr(vals)
    extra = {"spec": spec.to_dict(), "outcome": mode}
    if mode == "sample":
        extra["rejections"] = int(np.count_nonzero(vals == 0.0))
    else:
        extra["expected_rejections"] = float(np.sum(1.0 - vals))
    return MCEstimate(est, se, int(samples), int(seed), extra)


# -- parameters -------------------------------------------------------------


@dataclass(frozen=True)
class ParameterRecipe:
    delta: float
    s: float
    C0: float
    c2: float
    eps: float
    eta: float
    g: float
    ell_min: float

    def constraints(self, ell: int) -> dict:
        """Evaluate the three parameter constraints at `ell` rounds (FK counts)."""
        spec = make_spec("FK", ell)
        C1, C2 = spec.c1, spec.c2
        return {
            "ell": int(ell),
            "C1": C1,
            "C2": C2,
            "eta_eps3_gt_16_C1_inv_sqrt": bool(C1 > 0 and self.eta * self.eps**3 > 16 * C1**-0.5),
            "eta_ge_C2_inv_sqrt": bool(C2 > 0 and self.eta >= C2**-0.5),
            "eps_ge_C1_over_C2": bool(C2 > 0 and self.eps >= C1 / C2),
        }

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "s": self.s,
            "C0": self.C0,
            "c2": self.c2,
            "eps": self.eps,
            "eta": self.eta,
            "g": self.g,
            "ell_min": self.ell_min,
        }


def parameter_recipe(delta: float, s: float, C0: float = 1.0, c2: float = 1.0) -> ParameterRecipe:
    """Derived scalars for a target value `delta` and original value bound `s`.

    ``ell_min`` overflows to ``inf`` for most inputs; it is astronomically large.
    """
    if not 0.0 < delta < 1.0:
        raise InvalidInputError("delta must lie in (0, 1)")
    if not 0.0 <= s < 1.0:
        raise InvalidInputError("s must lie in [0, 1)")
    if C0 <= 0 or c2 <= 0:
        raise InvalidInputError("C0 and c2 must be positive")
    eps = delta**2 / C0
    eta = delta ** (24 * c2) * (1.0 - s) / C0
    gg = C0 * math.log(1.0 / delta) / (1.0 - s)
    log_ell = 15 * math.log(C0) - 125 * c2 * math.log(delta) - 4 * math.log(1.0 - s)
    ell_min = math.exp(log_ell) if log_ell < 709 else math.inf
    return ParameterRecipe(float(delta), float(s), float(C0), float(c2), eps, eta, gg, ell_min)
