"""Entangled strategies for a single game: evaluation, optimal state, seesaw.

Conventions
-----------
A state on ``C^d (x) C^d`` is stored as a vector of length ``d*d`` whose
row-major reshape is the coefficient matrix ``M`` (Alice's index first).
Bob's operators enter transposed, so with ``M`` the probability of the
outcome pair ``(A, B)`` is ``Tr(M^† A M B)``.  The density that Bob's stored
operators see is therefore ``M^† M`` (see :func:`bob_density`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidInputError, ValidationError
from .game import Game
from .linalg import PROJ_TOL, dagger, top_eigvec
from .rng import random_projective_measurement, stream

STATE_TOL = 1e-10


def state_matrix(state: np.ndarray) -> np.ndarray:
    """Coefficient matrix of a bipartite pure state given as a vector."""
    v = np.asarray(state, dtype=complex).ravel()
    d = int(round(np.sqrt(v.size)))
    if d * d != v.size:
        raise InvalidInputError(f"state length {v.size} is not a perfect square")
    return v.reshape(d, d)


def bob_density(state) -> np.ndarray:
    """Reduced density of the second player, in the frame of its stored operators."""
    M = state.matrix() if hasattr(state, "matrix") else state_matrix(state)
    return dagger(M) @ M


def alice_density(state) -> np.ndarray:
    M = state.matrix() if hasattr(state, "matrix") else state_matrix(state)
    return M @ dagger(M)


def maximally_entangled(d: int) -> np.ndarray:
    return (np.eye(d) / np.sqrt(d)).astype(complex).ravel()


def measurement_problems(ops: np.ndarray, tol: float = PROJ_TOL) -> list[str]:
    """Why `ops` (shape (n, d, d)) is not a complete projective measurement."""
    out = []
    n, d = ops.shape[0], ops.shape[-1]
    if not np.all(np.isfinite(ops)):
        return ["non-finite entries"]
    if np.max(np.abs(ops - dagger(ops)), initial=0.0) > 1e-10:
        out.append("operators are not Hermitian")
    if np.max(np.abs(ops.sum(axis=0) - np.eye(d))) > tol:
        out.append("operators do not sum to the identity")
    prod = np.einsum("aij,bjk->abik", ops, ops)
    target = np.zeros_like(prod)
    target[np.arange(n), np.arange(n)] = ops
    if np.max(np.abs(prod - target), initial=0.0) > tol:
        out.append("operators are not orthogonal projectors")
    return out


def _check_meas_family(name: str, ops: np.ndarray, d: int) -> np.ndarray:
    ops = np.asarray(ops, dtype=complex)
    if ops.ndim != 4 or ops.shape[2:] != (d, d):
        raise ValidationError(f"{name} measurements must have shape (|Q|, |A|, {d}, {d}), got {ops.shape}")
    for q in range(ops.shape[0]):
        bad = measurement_problems(ops[q])
        if bad:
            raise ValidationError(f"{name} measurement for question {q}: " + ", ".join(bad))
    ops = 0.5 * (ops + dagger(ops))
    ops.setflags(write=False)
    return ops


@dataclass(frozen=True, eq=False)
class QuantumStrategy:
    """Shared pure state and projective measurements for both players.

    ``alice[q', a']`` and ``bob[q, a]`` are ``d x d`` projectors.
    """

    d: int
    state: np.ndarray
    alice: np.ndarray
    bob: np.ndarray

    def __post_init__(self):
        d = int(self.d)
        if d < 1:
            raise ValidationError("dimension must be at least 1")
        v = np.asarray(self.state, dtype=complex).ravel()
        if v.size != d * d:
            raise ValidationError(f"state has length {v.size}, expected {d * d}")
        if abs(np.linalg.norm(v) - 1.0) > STATE_TOL:
            raise ValidationError(f"state norm {np.linalg.norm(v)!r} is not 1")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "state", v)
        object.__setattr__(self, "alice", _check_meas_family("alice", self.alice, d))
        object.__setattr__(self, "bob", _check_meas_family("bob", self.bob, d))
        if self.alice.shape[1] != self.bob.shape[1]:
            raise ValidationError("players use answer alphabets of different sizes")

    @property
    def nq_alice(self) -> int:
        return self.alice.shape[0]

    @property
    def nq_bob(self) -> int:
        return self.bob.shape[0]

    @property
    def na(self) -> int:
        return self.alice.shape[1]

    def matrix(self) -> np.ndarray:
        return self.state.reshape(self.d, self.d)

    def with_state(self, state) -> "QuantumStrategy":
        return QuantumStrategy(self.d, state, self.alice, self.bob)


def joint_distribution(A: np.ndarray, B: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Outcome table ``p[x, y] = Tr(M^† A_x M B_y)``.

    Either family may be given as full operators, shape (n, d, d), or as
    diagonals, shape (n, d).
    """
    diagA, diagB = A.ndim == 2, B.ndim == 2
    if diagA and diagB:
        return np.real(A @ (np.abs(M) ** 2) @ B.T)
    if diagA:
        # Tr(M^† diag(a) M B) = sum_kl a_k M_kl (B M^†)_lk
        BMd = B @ dagger(M)
        return np.real(np.einsum("xk,kl,ylk->xy", A, M, BMd))
    T = dagger(M)[None] @ A @ M[None]
    if diagB:
        return np.real(np.einsum("xii,yi->xy", T, B))
    return np.real(np.einsum("xil,yli->xy", T, B))


def _check_alphabet(g: Game, s: QuantumStrategy):
    if s.nq_alice != g.nq or s.nq_bob != g.nq or s.na != g.na:
        raise InvalidInputError(
            f"strategy alphabets ({s.nq_alice}, {s.nq_bob}, {s.na}) do not match game ({g.nq}, {g.na})"
        )


def outcome_tables(g: Game, alice: np.ndarray, bob: np.ndarray, M: np.ndarray) -> np.ndarray:
    """``p[q', q, a', a]`` for every question pair."""
    T = np.einsum("ji,xbjk,kl->xbil", M.conj(), alice, M)
    return np.real(np.einsum("xbil,yali->xyba", T, bob))


def evaluate_value(g: Game, s: QuantumStrategy) -> float:
    """Winning probability ``sum pi V <Psi| A (x) B^T |Psi>``."""
    _check_alphabet(g, s)
    p = outcome_tables(g, s.alice, s.bob, s.matrix())
    return float(np.einsum("xy,xyba,xyba->", g.pi, g.V, p))


def game_operator(g: Game, alice: np.ndarray, bob: np.ndarray) -> np.ndarray:
    """``sum pi V A (x) B^T`` as a ``d^2 x d^2`` Hermitian matrix."""
    d = alice.shape[-1]
    piV = g.pi[:, :, None, None] * g.V
    Aw = np.einsum("xyba,xbij->yaij", piV, alice)  # weighted sum of Alice's ops per (q, a)
    G = np.einsum("yaij,yalk->ikjl", Aw, bob).reshape(d * d, d * d)
    return 0.5 * (G + dagger(G))


def optimal_state(g: Game, s: QuantumStrategy):
    """Top eigenvector of the game operator for the measurements of `s`."""
    _check_alphabet(g, s)
    value, v = top_eigvec(game_operator(g, s.alice, s.bob))
    return v, value


def classical_strategy(g: Game, f_alice, f_bob, d: int = 1) -> QuantumStrategy:
    """Deterministic assignment embedded as rank-d projectors."""
    I = np.eye(d)
    A = np.zeros((g.nq, g.na, d, d), dtype=complex)
    B = np.zeros((g.nq, g.na, d, d), dtype=complex)
    for q in range(g.nq):
        A[q, f_alice[q]] = I
        B[q, f_bob[q]] = I
    return QuantumStrategy(d, maximally_entangled(d), A, B)


def classical_score(g: Game, f_alice, f_bob) -> float:
    return float(
        sum(g.pi[x, y] * g.V[x, y, f_alice[x], f_bob[y]] for x in range(g.nq) for y in range(g.nq))
    )


def qubit_projectors(theta: float) -> np.ndarray:
    """Two-outcome measurement along the real direction at angle `theta`."""
    u = np.array([np.cos(theta), np.sin(theta)])
    P0 = np.outer(u, u)
    return np.array([P0, np.eye(2) - P0], dtype=complex)


def chsh_optimal_strategy() -> QuantumStrategy:
    """Maximally entangled qubits; angles 0, pi/4 and pi/8, -pi/8."""
    A = np.array([qubit_projectors(0.0), qubit_projectors(np.pi / 4)])
    B = np.array([qubit_projectors(np.pi / 8), qubit_projectors(-np.pi / 8)])
    return QuantumStrategy(2, maximally_entangled(2), A, B)


# -- seesaw ---------------------------------------------------------------


def _objective(P: np.ndarray, W: np.ndarray) -> float:
    return float(np.real(np.einsum("aij,aji->", P, W)))


def _greedy_assign(W: np.ndarray) -> np.ndarray:
    """Greedy spectral assignment in the eigenbasis of ``sum_a W_a``."""
    n, d = W.shape[0], W.shape[-1]
    _, U = np.linalg.eigh(W.sum(axis=0))
    scores = np.real(np.einsum("ia,xij,ja->xa", U.conj(), W, U))
    owner = np.argmax(scores, axis=0)
    P = np.zeros((n, d, d), dtype=complex)
    for a in range(n):
        B = U[:, owner == a]
        P[a] = B @ dagger(B)
    return P


def _pairwise_refine(P: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Sweep over answer pairs, re-splitting their joint support.

    Inside ``range(P_a + P_b)`` each eigenvector of ``W_a - W_b`` goes to the
    answer with the larger expected score, which is the optimal split of that
    subspace; a sweep therefore never decreases the objective.
    """
    P = P.copy()
    n = P.shape[0]
    for a in range(n):
        for b in range(a + 1, n):
            S = P[a] + P[b]
            w, U = np.linalg.eigh(0.5 * (S + dagger(S)))
            B = U[:, w > 0.5]
            if B.shape[1] == 0:
                continue
            K = dagger(B) @ (W[a] - W[b]) @ B
            k, V = np.linalg.eigh(0.5 * (K + dagger(K)))
            Ba = B @ V[:, k >= 0]
            Bb = B @ V[:, k < 0]
            P[a] = Ba @ dagger(Ba)
            P[b] = Bb @ dagger(Bb)
    return P


def _update_player(P: np.ndarray, W: np.ndarray) -> np.ndarray:
    """One measurement update per question; never lowers ``sum_a Tr(P_a W_a)``."""
    out = P.copy()
    for q in range(P.shape[0]):
        best, best_val = P[q], _objective(P[q], W[q])
        for cand in (_greedy_assign(W[q]),):
            v = _objective(cand, W[q])
            if v > best_val:
                best, best_val = cand, v
        cand = _pairwise_refine(best, W[q])
        if _objective(cand, W[q]) >= best_val:
            best = cand
        out[q] = best
    return out


def _alice_weights(g: Game, bob: np.ndarray, M: np.ndarray) -> np.ndarray:
    # Tr(M^† A M B) = Tr(A M B M^†)
    piV = g.pi[:, :, None, None] * g.V
    MBM = M[None, None] @ bob @ dagger(M)[None, None]
    W = np.einsum("xyba,yaij->xbij", piV, MBM)
    return 0.5 * (W + dagger(W))


def _bob_weights(g: Game, alice: np.ndarray, M: np.ndarray) -> np.ndarray:
    piV = g.pi[:, :, None, None] * g.V
    MAM = dagger(M)[None, None] @ alice @ M[None, None]
    W = np.einsum("xyba,xbij->yaij", piV, MAM)
    return 0.5 * (W + dagger(W))


def _value(g, alice, bob, M) -> float:
    return float(np.einsum("xy,xyba,xyba->", g.pi, g.V, outcome_tables(g, alice, bob, M)))


def seesaw_optimize(g: Game, d: int, seed: int = 0, iters: int = 100, init: QuantumStrategy | None = None,
                    tol: float = 1e-12, restart: int = 0):
    """Alternating lower-bound search for the entangled value.

    Each iteration replaces the state by the top eigenvector of the game
    operator, then updates Alice's and Bob's measurements with the other
    player fixed.  Measurement updates combine greedy spectral assignment and
    pairwise re-splitting; any step that would lower the value is rejected.

    Returns
    -------
    strategy : QuantumStrategy
    trace : list of float
        Value after every accepted or rejected half-step; non-decreasing.
    """
    if d < 1 or iters < 1:
        raise InvalidInputError("need d >= 1 and iters >= 1")
    if init is None:
        rng = stream(seed, "seesaw-init", restart)
        alice = np.array([random_projective_measurement(d, g.na, rng, _balanced(d, g.na, rng)) for _ in range(g.nq)])
        bob = np.array([random_projective_measurement(d, g.na, rng, _balanced(d, g.na, rng)) for _ in range(g.nq)])
        M = np.eye(d, dtype=complex) / np.sqrt(d)
    else:
        _check_alphabet(g, init)
        alice, bob, M = init.alice.copy(), init.bob.copy(), init.matrix().copy()
    value = _value(g, alice, bob, M)
    trace = [value]

    for _ in range(iters):
        start = value
        _, v = top_eigvec(game_operator(g, alice, bob))
        M_new = v.reshape(d, d)
        new = _value(g, alice, bob, M_new)
        if new >= value:
            M, value = M_new, new
        trace.append(value)
        A_new = _update_player(alice, _alice_weights(g, bob, M))
        new = _value(g, A_new, bob, M)
        if new >= value:
            alice, value = A_new, new
        trace.append(value)
        B_new = _update_player(bob, _bob_weights(g, alice, M))
        new = _value(g, alice, B_new, M)
        if new >= value:
            bob, value = B_new, new
        trace.append(value)
        if value - start <= tol:
            break
    strat = QuantumStrategy(d, M.ravel() / np.linalg.norm(M), _clean(alice), _clean(bob))
    return strat, trace


def seesaw_restarts(g: Game, d: int, restarts: int = 50, seed: int = 0, iters: int = 100) -> list[float]:
    """Final seesaw values for `restarts` independent random initializations."""
    if restarts < 1:
        raise InvalidInputError("restarts must be at least 1")
    return [seesaw_optimize(g, d, seed=seed, iters=iters, restart=r)[1][-1] for r in range(restarts)]


def _balanced(d: int, n: int, rng) -> list[int]:
    # near-equal ranks; starting from rank-0 outcomes tends to stall at classical points
    ranks = np.full(n, d // n)
    ranks[rng.permutation(n)[: d % n]] += 1
    return ranks.tolist()


def _clean(ops: np.ndarray) -> np.ndarray:
    return 0.5 * (ops + dagger(ops))


# -- file format ----------------------------------------------------------


def matrix_from_pairs(rows, where: str) -> np.ndarray:
    try:
        a = np.asarray(rows, dtype=float)
    except (TypeError, ValueError):
        raise FormatError(f"{where}: matrix entries must be [re, im] pairs") from None
    if a.ndim != 3 or a.shape[2] != 2:
        raise FormatError(f"{where}: matrix must be a list of rows of [re, im] pairs")
    return a[..., 0] + 1j * a[..., 1]


def matrix_to_pairs(A: np.ndarray) -> list:
    A = np.asarray(A, dtype=complex)
    return np.stack([A.real, A.imag], axis=-1).tolist()


def _meas_from_obj(obj, labels, name: str, d: int) -> np.ndarray:
    if not isinstance(obj, dict):
        raise FormatError(f"{name!r} must map question labels to measurement lists")
    keys = list(obj.keys()) if labels is None else [str(q) for q in labels]
    missing = [k for k in keys if k not in obj]
    if missing:
        raise FormatError(f"{name!r} lacks questions {missing}")
    out = []
    for k in keys:
        mats = [matrix_from_pairs(m, f"{name}[{k}]") for m in obj[k]]
        if any(m.shape != (d, d) for m in mats):
            raise FormatError(f"{name}[{k}]: matrices must be {d}x{d}")
        out.append(mats)
    return np.array(out, dtype=complex)


def strategy_from_json(text: str, game: Game | None = None) -> QuantumStrategy:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(e.msg, e.lineno) from None
    for key in ("d", "state", "alice", "bob"):
        if not isinstance(obj, dict) or key not in obj:
            raise FormatError(f"missing key {key!r}", 1)
    d = obj["d"]
    if not isinstance(d, int) or d < 1:
        raise FormatError("'d' must be a positive integer")
    st = np.asarray(obj["state"], dtype=float)
    if st.ndim != 2 or st.shape[1] != 2:
        raise FormatError("'state' must be a list of [re, im] pairs")
    labels = None if game is None else game.questions
    A = _meas_from_obj(obj["alice"], labels, "alice", d)
    B = _meas_from_obj(obj["bob"], labels, "bob", d)
    try:
        return QuantumStrategy(d, st[:, 0] + 1j * st[:, 1], A, B)
    except ValidationError as e:
        raise FormatError(str(e)) from None


def strategy_to_json(s: QuantumStrategy, game: Game | None = None) -> str:
    labels = list(range(s.nq_alice)) if game is None else list(game.questions)
    obj = {
        "d": s.d,
        "state": np.stack([s.state.real, s.state.imag], axis=-1).tolist(),
        "alice": {str(q): [matrix_to_pairs(m) for m in s.alice[i]] for i, q in enumerate(labels)},
        "bob": {str(q): [matrix_to_pairs(m) for m in s.bob[i]] for i, q in enumerate(labels)},
    }
    return json.dumps(obj)


def load_strategy(path, game: Game | None = None) -> QuantumStrategy:
    with open(path, encoding="utf-8") as fh:
        return strategy_from_json(fh.read(), game)

