"""Rounding nearly orthogonal objects to exactly orthogonal ones.

Three levels: unit vectors (symmetric orthonormalization through the polar
factor), projector families weighted by PSD operators, and families of
rectangular operators ``Yhat_i`` with ``sum_i Yhat_i Yhat_i^† <= Id``.  The
last level is then used to extract one projective measurement per
``(i, q_i)`` from a marginalized repeated strategy.

Operators ``Yhat_i`` map an input space to the output space; their weights
``rho_i`` live on the input space and enter as ``Tr(A rho_i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .blocks import _index_sets, _mu, classify_block, stinespring
from .errors import InvalidInputError, ValidationError
from .linalg import (
    as_matrix,
    check_psd,
    dagger,
    eigh,
    is_projector,
    psd_sqrt,
    range_basis,
    spectral_projector,
    svd,
)
from .repeated import RepeatedStrategy, encode
from .rng import random_hermitian, random_psd, random_unitary

UNIT_TOL = 1e-8
ALPHA_ZERO = 1e-14


# -- vectors ------------------------------------------------------------------


def procrustes_orthonormalize(vectors) -> np.ndarray:
    """Closest orthonormal family to the columns of `vectors`.

    With ``X = U S V^†`` the output is ``U V^†``; it minimizes
    ``sum_i ||u_i - v_i||^2`` over orthonormal families and satisfies
    ``sum_i ||u_i - v_i||^2 <= sum_{i != j} |<u_i, u_j>|^2``.

    Parameters
    ----------
    vectors : array_like, shape (dim, k)
        Unit columns, ``k <= dim``.

    Examples
    --------
    >>> V = procrustes_orthonormalize(np.eye(3)[:, :2])
    >>> bool(np.allclose(V, np.eye(3)[:, :2]))
    True
    """
    X = as_matrix(vectors, "vectors").astype(complex)
    dim, k = X.shape
    if k > dim:
        raise InvalidInputError(f"{k} vectors do not fit in dimension {dim}")
    norms = np.linalg.norm(X, axis=0)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise InvalidInputError("input vectors must have unit norm")
    U, _, V = svd(X)
    return U @ dagger(V)


def procrustes_errors(U, V) -> tuple[float, float]:
    """``((1/k) sum ||u_i - v_i||^2, (1/k) sum_{i != j} |<u_i, u_j>|^2)``."""
    U, V = np.asarray(U), np.asarray(V)
    k = U.shape[1]
    G = dagger(U) @ U
    off = float(np.sum(np.abs(G) ** 2) - np.sum(np.abs(np.diag(G)) ** 2))
    return float(np.sum(np.abs(U - V) ** 2)) / k, off / k


# -- projector families ---------------------------------------------------------


@dataclass
class KProjResult:
    Q: np.ndarray
    error: float
    eps1: float
    eps2: float
    comparator: float
    trace: float
    singular_values: np.ndarray
    dropped: list
    hypothesis_ok: bool

    @property
    def eps(self) -> float:
        return self.eps1 + self.eps2

    def to_dict(self) -> dict:
        return {
            "error": self.error,
            "eps1": self.eps1,
            "eps2": self.eps2,
            "comparator": self.comparator,
            "trace": self.trace,
            "singular_values": self.singular_values.tolist(),
            "dropped": [list(x) for x in self.dropped],
            "hypothesis_ok": self.hypothesis_ok,
        }


def _projector_stack(P, name="P") -> np.ndarray:
    P = np.asarray(P, dtype=complex)
    if P.ndim != 3 or P.shape[1] != P.shape[2]:
        raise InvalidInputError(f"{name} must have shape (k, d, d)")
    for i, Pi in enumerate(P):
        if not is_projector(Pi):
            raise InvalidInputError(f"{name}[{i}] is not a projector")
    return P


def _weights(rhos, k: int, d: int, name="rho") -> np.ndarray:
    rhos = np.asarray(rhos, dtype=complex)
    if rhos.shape != (k, d, d):
        raise InvalidInputError(f"{name} must have shape {(k, d, d)}")
    for r in rhos:
        check_psd(r, name)
    return rhos


def kproj_overlaps(P, rhos) -> tuple[float, float]:
    """``(sum_{i != j} Tr(P_i P_j P_i rho_i), sum_{i != j} Tr(P_i rho_j))``."""
    k = len(P)
    e1 = e2 = 0.0
    for i in range(k):
        for j in range(k):
            if i != j:
                e1 += np.real(np.trace(P[i] @ P[j] @ P[i] @ rhos[i]))
                e2 += np.real(np.trace(P[i] @ rhos[j]))
    return float(e1), float(e2)


def joint_block_orthogonalize(P, rhos, window=(0.5, 2.0)) -> KProjResult:
    """Pairwise orthogonal projectors close to a nearly orthogonal family.

    The orthonormal eigenbases of the ``P_i`` are stacked as the columns of
    ``X``; with ``X = U S V^†`` the columns of ``W = U V^†`` keep the labels
    of the columns of ``X`` and ``Q_i`` projects onto the columns labelled
    by `i`.  Singular directions outside `window` are dropped: a label whose
    column puts more than half of its weight on dropped directions leaves
    its group and joins the group whose original projector overlaps its
    ``W`` column the most (ties to the lower index).  Outputs are exactly
    orthogonal because all columns come from one isometry.

    Returns
    -------
    KProjResult
        ``error = sum_i Tr((P_i - Q_i)^2 rho_i)`` and the comparator
        ``sqrt(eps) sqrt(Tr rho)`` with ``eps = eps1 + eps2``.
    """
    P = _projector_stack(P)
    k, d, _ = P.shape
    rhos = _weights(rhos, k, d)
    e1, e2 = kproj_overlaps(P, rhos)
    total = float(np.real(np.trace(rhos.sum(axis=0))))
    bases = [range_basis(Pi, rtol=1e-6) if np.trace(Pi).real > 0.5 else np.zeros((d, 0)) for Pi in P]
    ranks = [b.shape[1] for b in bases]
    K = sum(ranks)
    if K > d:
        raise InvalidInputError(f"total rank {K} exceeds the dimension {d}")
    groups = np.repeat(np.arange(k), ranks)
    Q = np.zeros_like(P)
    dropped = []
    s = np.zeros(0)
    if K > 0:
        X = np.concatenate(bases, axis=1)
        U, s, V = svd(X)  # V rows: labels, columns: singular directions
        W = U @ dagger(V)
        bad = (s < window[0]) | (s > window[1])
        if bad.any():
            share = np.sum(np.abs(V[:, bad]) ** 2, axis=1)
            for lab in np.flatnonzero(share > 0.5):
                w = W[:, lab]
                over = [np.real(np.vdot(w, P[j] @ w)) for j in range(k)]
                new = int(np.argmax(over))
                dropped.append((int(groups[lab]), int(lab), new))
                groups[lab] = new
        for i in range(k):
            cols = W[:, groups == i]
            Q[i] = cols @ dagger(cols)
    err = float(sum(np.real(np.trace((P[i] - Q[i]) @ (P[i] - Q[i]) @ rhos[i])) for i in range(k)))
    eps = e1 + e2
    return KProjResult(
        Q, err, e1, e2, math.sqrt(max(eps, 0.0) * total), total, s, dropped, bool(e1 <= total and e2 <= total)
    )


def max_pairwise_overlap(Q) -> float:
    """``max_{i != j} ||Q_i Q_j||`` (spectral norm)."""
    k = len(Q)
    best = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            best = max(best, float(np.linalg.norm(Q[i] @ Q[j], 2)))
    return best


# -- operator families --------------------------------------------------------


@dataclass
class OrthoResult:
    Pi: np.ndarray
    residual: float
    alpha: float
    beta1: float
    beta2: float
    comparator: float
    trace: float
    kproj: KProjResult | None
    fast_path: bool

    @property
    def relative_residual(self) -> float:
        return self.residual / self.trace if self.trace > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "residual": self.residual,
            "relative_residual": self.relative_residual,
            "alpha": self.alpha,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "comparator": self.comparator,
            "trace": self.trace,
            "fast_path": self.fast_path,
            "kproj": None if self.kproj is None else self.kproj.to_dict(),
        }


def _family(Y, rhos, rho):
    Y = np.asarray(Y, dtype=complex)
    if Y.ndim != 3:
        raise InvalidInputError("Yhat must have shape (k, d_out, d_in)")
    k, dout, din = Y.shape
    rhos = _weights(rhos, k, din)
    rho = rhos.sum(axis=0) if rho is None else check_psd(rho, "rho")
    if rho.shape != (din, din):
        raise InvalidInputError("rho must act on the input space of the family")
    slack = np.linalg.eigvalsh(rho - rhos.sum(axis=0))[0]
    if slack < -1e-9:
        raise ValidationError("sum of the weights exceeds rho")
    top = np.linalg.eigvalsh(np.einsum("kij,klj->il", Y, np.conj(Y)))[-1]
    if top > 1 + 1e-9:
        raise ValidationError(f"sum_i Yhat_i Yhat_i^dagger has eigenvalue {top:.6g} > 1")
    return Y, rhos, rho


def family_alpha(Y, rhos, rho=None) -> float:
    """``Tr(rho)^{-1} sum_{i != j} Tr(Yhat_i^† Yhat_j Yhat_j^† Yhat_i rho_i)``."""
    Y, rhos, rho = _family(Y, rhos, rho)
    G = np.einsum("kij,klj->kil", Y, np.conj(Y))  # Yhat Yhat^dagger
    tot = 0.0
    for i in range(len(Y)):
        for j in range(len(Y)):
            if i != j:
                tot += np.real(np.trace(dagger(Y[i]) @ G[j] @ Y[i] @ rhos[i]))
    tr = float(np.real(np.trace(rho)))
    return float(tot / tr) if tr > 0 else 0.0


def orthogonalization_lemma(Y, rhos, rho=None) -> OrthoResult:
    """Orthogonal projectors ``Pi_i`` nearly containing the range of every ``Yhat_i``.

    Thresholds ``beta1 = alpha^(4/5)`` and ``beta2 = beta1^(3/4)``.
    ``P_i`` projects onto eigenvalues of ``Yhat_i Yhat_i^†`` at least
    `beta1`; ``Q_i`` is the part of ``range(P_i)`` where ``P_i Y_{-i} P_i``
    is at most `beta2`; the ``Q_i`` are then rounded by
    :func:`joint_block_orthogonalize` with weights ``Yhat_i rho_i Yhat_i^†``.
    At ``alpha = 0`` the range projectors are used directly.

    Returns
    -------
    OrthoResult
        ``residual = sum_i Tr(Yhat_i^† (Id - Pi_i) Yhat_i rho_i)`` with the
        comparator ``alpha^(1/10) Tr(rho)``.
    """
    Y, rhos, rho = _family(Y, rhos, rho)
    k, dout, _ = Y.shape
    alpha = family_alpha(Y, rhos, rho)
    trace = float(np.real(np.trace(rho)))
    if alpha > 1 + 1e-12:
        raise InvalidInputError(f"alpha = {alpha:.6g} exceeds 1")
    G = np.einsum("kij,klj->kil", Y, np.conj(Y))
    sigma = np.array([Y[i] @ rhos[i] @ dagger(Y[i]) for i in range(k)])
    fast = alpha <= ALPHA_ZERO
    if fast:
        b1 = b2 = 0.0
        Qs = np.array([_range_projector(Gi) for Gi in G])
    else:
        b1 = alpha**0.8
        b2 = b1**0.75
        total = G.sum(axis=0)
        Qs = np.zeros((k, dout, dout), dtype=complex)
        for i in range(k):
            w, V = eigh(G[i])
            B = V[:, w >= b1]
            if B.shape[1] == 0:
                continue
            Ym = total - G[i]
            w, V = eigh(dagger(B) @ Ym @ B)
            keep = B @ V[:, w <= b2]
            Qs[i] = keep @ dagger(keep)
    kp = joint_block_orthogonalize(Qs, sigma)
    Pi_out = kp.Q
    res = float(sum(np.real(np.trace((np.eye(dout) - Pi_out[i]) @ sigma[i])) for i in range(k)))
    return OrthoResult(Pi_out, max(res, 0.0), alpha, b1, b2, alpha**0.1 * trace, trace, kp, fast)


def _range_projector(G: np.ndarray) -> np.ndarray:
    w = np.linalg.eigvalsh(G)
    top = max(w[-1], 0.0)
    if top == 0.0:
        return np.zeros_like(G)
    return spectral_projector(G, 1e-10 * top, np.inf)


# -- random families ------------------------------------------------------------


def near_orthogonal_projectors(k: int, rank: int, dim: int, delta: float, rng):
    """Orthogonal rank-`rank` projectors rotated by ``exp(i delta H)``, with weights on their ranges."""
    if k * rank > dim:
        raise InvalidInputError("k * rank must not exceed dim")
    base = random_unitary(dim, rng)
    H = [random_hermitian(dim, rng) for _ in range(k)]
    P, rhos = [], []
    for i in range(k):
        B = base[:, i * rank : (i + 1) * rank]
        w, V = np.linalg.eigh(H[i])
        R = (V * np.exp(1j * delta * w)) @ dagger(V)
        Bi = R @ B
        P.append(Bi @ dagger(Bi))
        rhos.append(Bi @ random_psd(rank, rng) @ dagger(Bi))
    rhos = np.array(rhos)
    rhos /= np.real(np.trace(rhos.sum(axis=0)))
    return np.array(P), rhos


def near_orthogonal_family(k: int, rank: int, dout: int, din: int, alpha: float, rng, tol: float = 0.01):
    """Operator family with ``sum Yhat Yhat^† <= Id`` and `alpha` within relative `tol`.

    Each ``Yhat_i`` starts on its own block of an orthonormal frame with
    singular values in ``[0.3, 1]`` and is rotated by ``exp(i t H_i)``; `t` is
    found by bisection.  ``alpha = 0`` returns the unrotated family.
    """
    if k * rank > dout:
        raise InvalidInputError("k * rank must not exceed dout")
    frame = random_unitary(dout, rng)
    inputs = random_unitary(din, rng)[:, :rank]
    H = [np.linalg.eigh(random_hermitian(dout, rng)) for _ in range(k)]
    sv = rng.uniform(0.3, 1.0, size=(k, rank))
    rhos = np.array([inputs @ random_psd(rank, rng) @ dagger(inputs) for _ in range(k)])
    rhos /= np.real(np.trace(rhos.sum(axis=0)))

    def build(t):
        Y = []
        for i in range(k):
            B = frame[:, i * rank : (i + 1) * rank] * sv[i]
            w, V = H[i]
            Y.append((V * np.exp(1j * t * w)) @ dagger(V) @ B @ dagger(inputs))
        Y = np.array(Y)
        top = np.linalg.eigvalsh(np.einsum("kij,klj->il", Y, np.conj(Y)))[-1]
        return Y / math.sqrt(max(top, 1.0))

    if alpha == 0:
        return build(0.0), rhos
    lo, hi = 0.0, 1e-3
    while family_alpha(build(hi), rhos) < alpha:
        hi *= 2
        if hi > 1e3:
            raise InvalidInputError(f"alpha = {alpha} not reachable")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        a = family_alpha(build(mid), rhos)
        if abs(a - alpha) <= tol * alpha:
            return build(mid), rhos
        lo, hi = (mid, hi) if a < alpha else (lo, mid)
    return build(0.5 * (lo + hi)), rhos


# -- serial blocks --------------------------------------------------------------


@dataclass
class SerialProjectors:
    R: tuple
    q_R: tuple
    a_R: tuple
    measurements: dict
    results: dict
    report: object
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "R": list(self.R),
            "q_R": list(self.q_R),
            "a_R": list(self.a_R),
            "entries": [
                {"i": i, "q_i": q, **self.results[(i, q)].to_dict()} for (i, q) in sorted(self.results)
            ],
            "notes": list(self.notes),
        }


def _lift(rho: np.ndarray, E: int) -> np.ndarray:
    # dilation columns are environment-major, see blocks.stinespring
    return np.kron(np.eye(E), rho)


def _answer_index(T, a_of: dict, na: int) -> int:
    return encode([a_of[t] for t in T], na)


def complete_measurement(Pi: np.ndarray) -> np.ndarray:
    """Add ``Id - sum Pi`` to the last projector."""
    out = np.array(Pi, dtype=complex)
    out[-1] += np.eye(out.shape[1]) - out.sum(axis=0)
    return out


def serial_block_projectors(
    X: RepeatedStrategy, rho, R, q_R, a_R, eta: float, eps: float = 0.0, mu=None, check: bool = True
) -> SerialProjectors:
    """One projective measurement per ``(i, q_i)``, ``i`` outside `R`, for a serial block.

    For every ``(i, q_i)`` the dilations of ``Y^{a_i} = X_{q_R q_i}^{a_R a_i}``
    with weights ``rho^{1/2} Y^{a_i} rho^{1/2}`` go through
    :func:`orthogonalization_lemma`; the output projectors are completed by
    enlarging the last answer's projector.  With `check`, the block is first
    classified at ``(eps, eta)`` and a non-serial answer raises.
    """
    mu = _mu(X, mu)
    R, q_R, _ = _index_sets(X, R, q_R, None)
    a_R = tuple(int(a) for a in a_R)
    if len(a_R) != len(R):
        raise InvalidInputError("a_R must have one answer per index of R")
    rho = check_psd(rho, "rho")
    report = None
    notes = []
    if check:
        report = classify_block(X, rho, R, q_R, eps, eta, mu, mode="exact")
        a_idx = encode(a_R, X.na)
        if not report.serial.get(a_idx, False):
            raise ValidationError(f"answer {a_R} of block {R} is not serial at eta = {eta}")
    half = psd_sqrt(rho)
    meas, results = {}, {}
    for i in range(X.ell):
        if i in R:
            continue
        for qi in np.flatnonzero(mu > 0):
            pairs = sorted(list(zip(R, q_R)) + [(i, int(qi))])
            S = tuple(p[0] for p in pairs)
            qS = tuple(p[1] for p in pairs)
            dil = stinespring(X, S, qS, S, mu)
            amap = dict(zip(R, a_R))
            Ys, ws = [], []
            for ai in range(X.na):
                amap[i] = ai
                Yhat = dil[_answer_index(S, amap, X.na)]
                Ys.append(Yhat)
                Ya = Yhat @ dagger(Yhat)
                ws.append(half @ Ya @ half)
            E = Ys[0].shape[1] // X.d
            lifted = np.array([_lift(w, E) for w in ws])
            res = orthogonalization_lemma(np.array(Ys), lifted, lifted.sum(axis=0))
            meas[(i, int(qi))] = complete_measurement(res.Pi)
            results[(i, int(qi))] = res
    return SerialProjectors(R, q_R, a_R, meas, results, report, notes)


def _sandwich(Pis: list) -> np.ndarray:
    """``Pi_g ... Pi_2 Pi_1 Pi_2 ... Pi_g`` for the list ``[Pi_1, ..., Pi_g]``."""
    if not Pis:
        return None
    S = Pis[0]
    for P in Pis[1:]:
        S = P @ S @ P
    return S


def product_approx_error(
    X: RepeatedStrategy, rho, R, q_R, a_R, G, q_G, measurements: dict, mu=None, eta: float | None = None
) -> dict:
    """Left-hand sides of the two product-structure inequalities for ``(G, q_G)``.

    Both sums run over the answers ``a_G``.  The answer-summed dilation
    ``Yhat_{q_G}`` carries ``a_G`` in its environment, so
    ``Yhat^{a_G} - Yhat_{q_G}`` is minus the sum of the blocks with a
    different answer tuple.  The sandwich is built from
    ``measurements[(g, q_g)]`` in the order of `G`.  With `eta` the block's
    diagnostic weight ``alpha_{a_R}`` is reported too.
    """
    mu = _mu(X, mu)
    R, q_R, _ = _index_sets(X, R, q_R, None)
    G = tuple(int(g) for g in G)
    q_G = tuple(int(q) for q in q_G)
    if set(G) & set(R):
        raise InvalidInputError("G must be disjoint from R")
    if len(q_G) != len(G):
        raise InvalidInputError("q_G must have one question per index of G")
    a_R = tuple(int(a) for a in a_R)
    rho = check_psd(rho, "rho")
    pairs = sorted(list(zip(R, q_R)) + list(zip(G, q_G)))
    S = tuple(p[0] for p in pairs)
    qS = tuple(p[1] for p in pairs)
    dil = stinespring(X, S, qS, S, mu)
    E = dil.shape[2] // X.d
    half = psd_sqrt(rho)
    amap = dict(zip(R, a_R))
    blocks = {}
    for a_G in np.ndindex(*((X.na,) * len(G))):
        amap.update(zip(G, a_G))
        blocks[a_G] = dil[_answer_index(S, amap, X.na)]
    Yqg = sum(H @ dagger(H) for H in blocks.values())
    lifted = _lift(half @ Yqg @ half, E)
    for g, qg in zip(G, q_G):
        if (g, qg) not in measurements:
            raise InvalidInputError(f"no measurement for round {g}, question {qg}")
    c2 = c1 = 0.0
    for a_G, H in blocks.items():
        Pis = [np.asarray(measurements[(g, qg)])[a] for g, qg, a in zip(G, q_G, a_G)]
        Sw = _sandwich(Pis)
        if Sw is None:
            continue
        for b_G, Hb in blocks.items():
            if b_G != a_G:
                c2 += np.real(np.trace(dagger(Hb) @ Sw @ Hb @ lifted))
        c1 += np.real(np.trace((dagger(H) @ H - dagger(H) @ Sw @ H) @ lifted))
    out = {"prodc2_lhs": float(c2), "prodc1_lhs": float(c1)}
    if eta is not None:
        rep = classify_block(X, rho, R, q_R, 0.0, eta, mu, mode="exact")
        out["alpha_aR"] = None if rep.alpha is None else float(rep.alpha[encode(a_R, X.na)])
    return out
