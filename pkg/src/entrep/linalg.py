"""Dense complex matrix kernel.

Decompositions with a deterministic phase convention, PSD calculus and the
weighted trace functionals used throughout the package.  All functions are
pure and accept anything :func:`numpy.asarray` understands.
"""

from __future__ import annotations

import numpy as np
import numpy.typing as npt

from .errors import InvalidInputError, InvalidShapeError, NotPSDError, ValidationError

HERMIT_TOL = 1e-10
PROJ_TOL = 1e-9
PSD_TOL = 1e-10

# relative size below which a vector component counts as zero when fixing phases
_PHASE_EPS = 1e-12


def as_matrix(M: npt.ArrayLike, name: str = "matrix") -> np.ndarray:
    """Return `M` as a finite 2-D complex array, raising on bad input."""
    A = np.asarray(M)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise InvalidShapeError(f"{name} must be a non-empty 2-D array, got shape {A.shape}")
    A = A.astype(complex, copy=False)
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return A


def as_square(M: npt.ArrayLike, name: str = "matrix") -> np.ndarray:
    A = as_matrix(M, name)
    if A.shape[0] != A.shape[1]:
        raise InvalidShapeError(f"{name} must be square, got shape {A.shape}")
    return A


def dagger(A: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(A, -1, -2))


def is_hermitian(M: npt.ArrayLike, tol: float = HERMIT_TOL) -> bool:
    A = np.asarray(M)
    return A.shape[-1] == A.shape[-2] and bool(np.max(np.abs(A - dagger(A)), initial=0.0) <= tol)


def is_projector(M: npt.ArrayLike, hermit_tol: float = HERMIT_TOL, proj_tol: float = PROJ_TOL) -> bool:
    A = np.asarray(M)
    if not is_hermitian(A, hermit_tol):
        return False
    return bool(np.max(np.abs(A @ A - A), initial=0.0) <= proj_tol)


def as_hermitian(M: npt.ArrayLike, name: str = "matrix", tol: float = HERMIT_TOL) -> np.ndarray:
    """Validate Hermiticity and return the exactly symmetrized matrix."""
    A = as_square(M, name)
    if not is_hermitian(A, tol):
        raise ValidationError(f"{name} is not Hermitian within {tol:g}")
    return 0.5 * (A + dagger(A))


def fix_phases(U: np.ndarray) -> np.ndarray:
    """Phases making the first nonzero entry of each column real-positive.

    Returns the unit-modulus vector ``phi`` such that ``U / phi`` satisfies
    the convention.
    """
    phi = np.ones(U.shape[1], dtype=complex)
    for j in range(U.shape[1]):
        col = U[:, j]
        scale = np.max(np.abs(col), initial=0.0)
        if scale == 0.0:
            continue
        k = int(np.argmax(np.abs(col) > _PHASE_EPS * max(scale, 1.0)))
        phi[j] = col[k] / abs(col[k])
    return phi


def _tie_order(s: np.ndarray, U: np.ndarray, tol: float) -> np.ndarray:
    """Permutation sorting `s` descending, equal values ordered by column."""

    def key(j):
        col = np.round(U[:, j], 12)
        # larger leading components first: e_1 precedes e_2
        return tuple(x for z in col for x in (-z.real, -z.imag))

    order = list(range(len(s)))
    out = []
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and abs(s[order[j + 1]] - s[order[i]]) <= tol:
            j += 1
        group = order[i : j + 1]
        out.extend(sorted(group, key=key) if len(group) > 1 else group)
        i = j + 1
    return np.array(out, dtype=int)


def svd(M: npt.ArrayLike, full_matrices: bool = False):
    """Singular value decomposition ``M = U @ diag(s) @ V^†``.

    Parameters
    ----------
    M : array_like
        Finite complex matrix.
    full_matrices : bool
        Return square unitary ``U`` and ``V``; otherwise the thin factors.

    Returns
    -------
    U : ndarray
        Left singular vectors as columns.  The first nonzero component of each
        column is real and positive.
    s : ndarray
        Singular values in descending order.
    V : ndarray
        Right singular vectors as columns (not conjugated).

    Notes
    -----
    Within a cluster of equal singular values the columns are ordered
    lexicographically by their (phase-fixed) left vectors, so repeated calls
    and reordered clusters give the same output.
    """
    A = as_matrix(M, "M")
    U, s, Vh = np.linalg.svd(A, full_matrices=full_matrices)
    V = dagger(Vh)
    r = len(s)
    phi = fix_phases(U[:, :r])
    U[:, :r] = U[:, :r] / phi
    V[:, :r] = V[:, :r] / phi
    if U.shape[1] > r:
        U[:, r:] = U[:, r:] / fix_phases(U[:, r:])
    if V.shape[1] > r:
        V[:, r:] = V[:, r:] / fix_phases(V[:, r:])
    tol = 1e-13 * max(float(s[0]) if r else 0.0, 1.0)
    perm = _tie_order(s, U[:, :r], tol)
    if not np.array_equal(perm, np.arange(r)):
        s = s[perm]
        U[:, :r] = U[:, perm]
        V[:, :r] = V[:, perm]
    return U, s, V


def polar_decompose(M: npt.ArrayLike):
    """Polar decomposition ``M = W @ P`` of a square matrix.

    ``W = U V^†`` and ``P = V diag(s) V^†`` from :func:`svd`, so the
    completion of ``W`` on the kernel of a singular ``M`` follows the SVD
    convention.
    """
    A = as_square(M, "M")
    U, s, V = svd(A)
    W = U @ dagger(V)
    P = (V * s) @ dagger(V)
    return W, 0.5 * (P + dagger(P))


def eigh(M: npt.ArrayLike, name: str = "matrix"):
    """Eigen-decomposition of a Hermitian matrix, ascending eigenvalues."""
    A = as_hermitian(M, name)
    return np.linalg.eigh(A)


def psd_sqrt(M: npt.ArrayLike, psd_tol: float = PSD_TOL) -> np.ndarray:
    """Principal square root of a numerically PSD Hermitian matrix.

    Eigenvalues in ``[-psd_tol, 0)`` are clamped to zero; anything more
    negative raises :class:`NotPSDError`.
    """
    w, V = eigh(M, "M")
    if w[0] < -psd_tol:
        raise NotPSDError(f"smallest eigenvalue {w[0]:.3e} is below -{psd_tol:g}")
    w = np.sqrt(np.clip(w, 0.0, None))
    R = (V * w) @ dagger(V)
    return 0.5 * (R + dagger(R))


def check_psd(M: npt.ArrayLike, name: str = "matrix", psd_tol: float = PSD_TOL) -> np.ndarray:
    A = as_hermitian(M, name)
    w = np.linalg.eigvalsh(A)
    if w[0] < -psd_tol:
        raise NotPSDError(f"{name} has eigenvalue {w[0]:.3e} below -{psd_tol:g}")
    return A


def spectral_projector(M: npt.ArrayLike, lo: float, hi: float) -> np.ndarray:
    """Projector onto the eigenvectors of `M` with eigenvalue in ``[lo, hi]``."""
    if not lo <= hi:
        raise InvalidInputError(f"empty interval [{lo}, {hi}]")
    w, V = eigh(M, "M")
    keep = (w >= lo) & (w <= hi)
    B = V[:, keep]
    return B @ dagger(B)


def range_basis(M: npt.ArrayLike, rtol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (columns) of the range of a PSD matrix."""
    w, V = eigh(M, "M")
    cut = rtol * max(float(np.max(np.abs(w), initial=0.0)), 1.0)
    return V[:, w > cut]


def top_eigvec(H: npt.ArrayLike):
    """Largest eigenvalue and its eigenvector, phase fixed by convention."""
    w, V = eigh(H, "H")
    v = V[:, -1].copy()
    v = v / fix_phases(v[:, None])[0]
    return float(w[-1]), v


def trace_rho(A: np.ndarray, rho: np.ndarray) -> float:
    """``Re Tr(A rho)``, the weighted trace used for expectation values."""
    return float(np.real(np.einsum("ij,ji->", A, rho)))


def rho_inner(A: npt.ArrayLike, B: npt.ArrayLike, rho: npt.ArrayLike, rho_half=None) -> complex:
    """Semi-inner product ``Tr(A rho^{1/2} B^† rho^{1/2})``."""
    A = as_square(A, "A")
    B = as_square(B, "B")
    r = psd_sqrt(rho) if rho_half is None else rho_half
    if A.shape != r.shape or B.shape != r.shape:
        raise InvalidShapeError("A, B and rho must have the same square shape")
    return complex(np.einsum("ij,jk,kl,li->", A, r, dagger(B), r))


def rho_seminorm(A: npt.ArrayLike, rho: npt.ArrayLike, rho_half=None) -> float:
    """``sqrt(Tr(A rho^{1/2} A^† rho^{1/2}))``.

    Examples
    --------
    >>> import numpy as np
    >>> round(rho_seminorm(np.eye(2), np.eye(2) / 2), 12)
    1.0
    """
    rho = check_psd(rho, "rho") if rho_half is None else rho
    val = rho_inner(A, A, rho, rho_half=rho_half).real
    return float(np.sqrt(max(val, 0.0)))
