"""Independent reference computations used by the tests.

Nothing here calls into the package's numerical code; each function works
straight from definitions by enumeration.
"""

import itertools

import numpy as np


def classical_value(pi, V):
    """Maximum of ``E_pi V`` over all pairs of deterministic answer functions."""
    nq, _, na, _ = V.shape
    best = 0.0
    for fa in itertools.product(range(na), repeat=nq):
        for fb in itertools.product(range(na), repeat=nq):
            v = sum(pi[x, y] * V[x, y, fa[x], fb[y]] for x in range(nq) for y in range(nq))
            best = max(best, v)
    return best


def quantum_value(pi, V, psi, alice, bob):
    """``sum pi V <psi| A (x) B^T |psi>`` with dense Kronecker products."""
    nq, _, na, _ = V.shape
    tot = 0.0
    for x, y, b, a in itertools.product(range(nq), range(nq), range(na), range(na)):
        if V[x, y, b, a]:
            op = np.kron(alice[x, b], bob[y, a].T)
            tot += pi[x, y] * np.real(np.vdot(psi, op @ psi))
    return tot


def sqrtm_psd(A):
    w, U = np.linalg.eigh(A)
    return (U * np.sqrt(np.clip(w, 0, None))) @ U.conj().T


def collision(table, ell, nq, na, rho, S, q_S, T, mu=None):
    """Collision probability of the marginalized measurement from a full table.

    ``table[c]`` holds the ``na**ell`` projectors for the question tuple
    with base-`nq` code `c`.  Returns ``(total, per_answer)`` by looping over
    completions, answer tuples and pairs of answer tuples.
    """
    mu = np.full(nq, 1.0 / nq) if mu is None else np.asarray(mu)
    rest_q = [i for i in range(ell) if i not in S]
    comps = []
    for combo in itertools.product(range(nq), repeat=len(rest_q)):
        q = [0] * ell
        for i, x in zip(S, q_S):
            q[i] = x
        for i, x in zip(rest_q, combo):
            q[i] = x
        w = float(np.prod([mu[x] for x in combo]))
        code = 0
        for x in q:
            code = code * nq + x
        comps.append((w, table[code]))
    answers = list(itertools.product(range(na), repeat=ell))
    aT = [tuple(a[i] for i in T) for a in answers]
    keys = sorted(set(aT))
    half = sqrtm_psd(rho)
    per = {}
    for key in keys:
        idx = [n for n, k in enumerate(aT) if k == key]
        Xbar = sum(w * P[n] for w, P in comps for n in idx)
        t1 = 0.0
        for w, P in comps:
            for w2, P2 in comps:
                for n in idx:
                    for n2 in idx:
                        t1 += w * w2 * np.real(np.trace(P[n] @ P2[n2] @ P[n] @ rho))
        t2 = np.real(np.trace(Xbar @ half @ Xbar @ half))
        per[key] = t1 + t2
    return sum(per.values()), per


def polar_unitary(U):
    """Isometric polar factor from ``U^dagger U`` (no SVD)."""
    G = U.conj().T @ U
    w, V = np.linalg.eigh(G)
    return U @ (V * w**-0.5) @ V.conj().T
