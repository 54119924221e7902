"""Two-player one-round games: data model, predicates and file format."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import FormatError, ResourceLimitError, ValidationError

PI_SUM_TOL = 1e-12
FREE_TOL = 1e-10
MAX_CLASSICAL_SEARCH = 10**6


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Game:
    """A game ``(Q, A, pi, V)``.

    Attributes
    ----------
    questions, answers : tuple
        Ordered labels; internally everything is indexed by position.
    pi : ndarray, shape (|Q|, |Q|)
        Joint question distribution, ``pi[q', q]`` with the first player's
        question as the row.
    V : ndarray, shape (|Q|, |Q|, |A|, |A|)
        Acceptance predicate ``V[q', q, a', a]`` in {0, 1}.
    """

    questions: tuple
    answers: tuple
    pi: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "questions", tuple(self.questions))
        object.__setattr__(self, "answers", tuple(self.answers))
        problems = game_problems(self.questions, self.answers, self.pi, self.V)
        if problems:
            raise ValidationError("invalid game: " + "; ".join(p for _, p in problems))
        object.__setattr__(self, "pi", _frozen(np.asarray(self.pi, dtype=float)))
        object.__setattr__(self, "V", _frozen(np.asarray(self.V).astype(np.int8)))

    @property
    def nq(self) -> int:
        return len(self.questions)

    @property
    def na(self) -> int:
        return len(self.answers)

    @property
    def pi_A(self) -> np.ndarray:
        """Marginal of the first player's question."""
        return self.pi.sum(axis=1)

    @property
    def pi_B(self) -> np.ndarray:
        return self.pi.sum(axis=0)

    @classmethod
    def from_predicate(cls, questions: Sequence, answers: Sequence, pi, pred: Callable) -> "Game":
        """Build `V` from ``pred(a', a, q', q)`` evaluated on index positions."""
        nq, na = len(questions), len(answers)
        V = np.zeros((nq, nq, na, na), dtype=np.int8)
        for x in range(nq):
            for y in range(nq):
                for b in range(na):
                    for a in range(na):
                        V[x, y, b, a] = 1 if pred(b, a, x, y) else 0
        return cls(questions, answers, pi, V)


def game_problems(questions, answers, pi, V) -> list[tuple[str, str]]:
    """List of ``(field, message)`` invariant failures; empty when valid."""
    out = []
    nq, na = len(questions), len(answers)
    if nq < 1:
        out.append(("questions", "question set is empty"))
    if na < 1:
        out.append(("answers", "answer set is empty"))
    if len(set(map(str, questions))) != nq:
        out.append(("questions", "question labels are not distinct"))
    if len(set(map(str, answers))) != na:
        out.append(("answers", "answer labels are not distinct"))
    try:
        p = np.asarray(pi, dtype=float)
    except (TypeError, ValueError):
        out.append(("pi", "pi is not a numeric matrix"))
        p = None
    if p is not None:
        if p.shape != (nq, nq):
            out.append(("pi", f"pi has shape {p.shape}, expected {(nq, nq)}"))
        elif not np.all(np.isfinite(p)):
            out.append(("pi", "pi has non-finite entries"))
        else:
            if np.any(p < 0):
                out.append(("pi", "pi has negative entries"))
            if abs(p.sum() - 1.0) > PI_SUM_TOL:
                out.append(("pi", f"pi sums to {p.sum()!r}, not 1"))
    try:
        v = np.asarray(V, dtype=float)
    except (TypeError, ValueError):
        out.append(("V", "V is not a numeric array"))
        v = None
    if v is not None:
        if v.shape != (nq, nq, na, na):
            out.append(("V", f"V has shape {v.shape}, expected {(nq, nq, na, na)}"))
        elif not np.all((v == 0) | (v == 1)):
            out.append(("V", "V has entries outside {0, 1}"))
    return out


@dataclass(frozen=True)
class GameClass:
    is_projection: bool
    is_free: bool
    is_symmetric: bool


def classify_game(g: Game) -> GameClass:
    """Scan the projection, free and symmetric predicates."""
    is_projection = bool(np.all(g.V.sum(axis=3) == 1))
    is_free = bool(np.max(np.abs(g.pi - np.outer(g.pi_A, g.pi_B))) <= FREE_TOL)
    is_symmetric = bool(
        np.max(np.abs(g.pi - g.pi.T)) <= PI_SUM_TOL
        and np.array_equal(g.V, g.V.transpose(1, 0, 3, 2))
    )
    return GameClass(is_projection, is_free, is_symmetric)


def symmetrize(g: Game) -> Game:
    """Role-tagged doubling.

    Questions are ``(q, role)`` with role 1 or 2.  A fair coin decides which
    player receives the first-role question; the predicate is evaluated with
    the answers put back into role order.  Pairs with equal roles have
    probability zero and reject.
    """
    nq, na = g.nq, g.na
    labels = [f"{q}@1" for q in g.questions] + [f"{q}@2" for q in g.questions]
    pi = np.zeros((2 * nq, 2 * nq))
    pi[:nq, nq:] = g.pi / 2
    pi[nq:, :nq] = g.pi.T / 2
    V = np.zeros((2 * nq, 2 * nq, na, na), dtype=np.int8)
    V[:nq, nq:] = g.V
    V[nq:, :nq] = g.V.transpose(1, 0, 3, 2)
    return Game(labels, g.answers, pi, V)


def _best_response_value(piV: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Score of each row of `f` against the best response of the other player.

    ``piV[x, y, b, a]`` is the weighted predicate with the enumerated player's
    question `x` and answer `b` first.
    """
    N = f.shape[0]
    nx, ny, _, na = piV.shape
    W = np.zeros((N, ny, na))
    for x in range(nx):
        # piV[x][:, f[:, x], :] has shape (ny, N, na)
        W += np.swapaxes(piV[x][:, f[:, x], :], 0, 1)
    return W.max(axis=2).sum(axis=1)


def classical_value_bruteforce(g: Game, chunk: int = 1 << 14) -> float:
    """Exact classical value by enumerating one player's deterministic strategies.

    The first player's answer functions are enumerated; the second player
    plays the exact best response question by question, which attains the
    maximum over all pairs.
    """
    size = g.na**g.nq
    if size > MAX_CLASSICAL_SEARCH:
        raise ResourceLimitError(
            f"classical search space {g.na}^{g.nq} exceeds {MAX_CLASSICAL_SEARCH}"
        )
    piV = g.pi[:, :, None, None] * g.V
    powers = g.na ** np.arange(g.nq - 1, -1, -1)
    best = 0.0
    for start in range(0, size, chunk):
        n = np.arange(start, min(size, start + chunk))
        f = (n[:, None] // powers[None, :]) % g.na
        best = max(best, float(_best_response_value(piV, f).max()))
    return min(best, 1.0)


def chsh_game() -> Game:
    """CHSH: uniform questions, accept iff ``a' xor a == q' and q``."""
    return Game.from_predicate(
        [0, 1], [0, 1], np.full((2, 2), 0.25), lambda b, a, x, y: (b ^ a) == (x & y)
    )


def constant_game(nq: int, na: int, value: int, pi=None) -> Game:
    pi = np.full((nq, nq), 1.0 / nq**2) if pi is None else pi
    V = np.full((nq, nq, na, na), value, dtype=np.int8)
    return Game(list(range(nq)), list(range(na)), pi, V)


def xor_projection_game(pi=None) -> Game:
    """Binary game accepting iff ``a = a' xor q' xor q``.

    A projection game with value 1 (both players answer their own
    question), and symmetric whenever `pi` is.
    """
    pi = np.full((2, 2), 0.25) if pi is None else pi
    return Game.from_predicate([0, 1], [0, 1], pi, lambda b, a, x, y: a == (b ^ x ^ y))


# -- file format ----------------------------------------------------------


def _key_line(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return None if m is None else text.count("\n", 0, m.start()) + 1


def game_from_json(text: str) -> Game:
    """Parse the JSON game format, reporting the line of the first problem."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(e.msg, e.lineno) from None
    if not isinstance(obj, dict):
        raise FormatError("top-level value must be an object", 1)
    for key in ("questions", "answers", "pi", "V"):
        if key not in obj:
            raise FormatError(f"missing key {key!r}", 1)
    for key in ("questions", "answers"):
        if not isinstance(obj[key], list):
            raise FormatError(f"{key!r} must be a list", _key_line(text, key))
    problems = game_problems(obj["questions"], obj["answers"], obj["pi"], obj["V"])
    if problems:
        field, msg = problems[0]
        raise FormatError(msg, _key_line(text, field))
    return Game(obj["questions"], obj["answers"], obj["pi"], obj["V"])


def game_to_json(g: Game) -> str:
    obj = {
        "questions": list(g.questions),
        "answers": list(g.answers),
        "pi": g.pi.tolist(),
        "V": g.V.astype(int).tolist(),
    }
    return json.dumps(obj, indent=1)


def load_game(path) -> Game:
    with open(path, encoding="utf-8") as fh:
        return game_from_json(fh.read())
