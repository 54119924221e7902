import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entrep.errors import InvalidInputError, ValidationError
from entrep.linalg import dagger, is_projector
from entrep.orthogonalize import (
    complete_measurement,
    family_alpha,
    joint_block_orthogonalize,
    kproj_overlaps,
    max_pairwise_overlap,
    near_orthogonal_family,
    near_orthogonal_projectors,
    orthogonalization_lemma,
    procrustes_errors,
    procrustes_orthonormalize,
    product_approx_error,
    serial_block_projectors,
)
from entrep.repeated import ProductStrategy, build_scrambling_strategy
from entrep.rng import random_psd, random_unitary, stream
from entrep.strategy import chsh_optimal_strategy

from oracles import polar_unitary


def plane(theta):
    return np.array([[1.0, math.cos(theta)], [0.0, math.sin(theta)]], dtype=complex)


def test_procrustes_two_vectors_at_sixty_degrees():
    # the outputs sit 45 degrees either side of the bisector
    U = plane(math.pi / 3)
    V = procrustes_orthonormalize(U)
    np.testing.assert_allclose(dagger(V) @ V, np.eye(2), atol=1e-14)
    err, bound = procrustes_errors(U, V)
    assert err == pytest.approx(2 - 2 * math.cos(math.pi / 12), abs=1e-12)
    assert bound == pytest.approx(0.25)


def test_procrustes_identical_vectors():
    U = np.array([[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]], dtype=complex)
    V = procrustes_orthonormalize(U)
    err, bound = procrustes_errors(U, V)
    assert bound == pytest.approx(1.0)
    assert err <= bound + 1e-12
    np.testing.assert_allclose(dagger(V) @ V, np.eye(2), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), k=st.integers(1, 6), extra=st.integers(0, 4))
def test_procrustes_polar_oracle_and_optimality(seed, k, extra):
    r = np.random.default_rng(seed)
    dim = k + extra
    U = r.normal(size=(dim, k)) + 1j * r.normal(size=(dim, k))
    U /= np.linalg.norm(U, axis=0)
    V = procrustes_orthonormalize(U)
    np.testing.assert_allclose(V, polar_unitary(U), atol=1e-8)
    err, bound = procrustes_errors(U, V)
    assert err <= bound + 1e-12
    # no other orthonormal family is closer
    W = random_unitary(dim, r)[:, :k]
    assert np.sum(np.abs(U - W) ** 2) >= np.sum(np.abs(U - V) ** 2) - 1e-10


def test_kproj_orthogonal_input_is_fixed(rng):
    B = random_unitary(6, rng)
    P = np.array([B[:, :2] @ dagger(B[:, :2]), B[:, 2:5] @ dagger(B[:, 2:5])])
    rhos = np.array([random_psd(6, rng) for _ in range(2)])
    res = joint_block_orthogonalize(P, rhos)
    np.testing.assert_allclose(res.Q, P, atol=1e-10)
    assert res.error == pytest.approx(0, abs=1e-12)


@pytest.mark.parametrize("delta", [0.3, 0.05])
def test_kproj_outputs_orthogonal_projectors(delta):
    P, rhos = near_orthogonal_projectors(4, 2, 12, delta, stream(2, "kp"))
    res = joint_block_orthogonalize(P, rhos)
    assert max_pairwise_overlap(res.Q) <= 1e-9
    assert all(is_projector(q) for q in res.Q)
    e1, e2 = kproj_overlaps(P, rhos)
    assert res.eps1 == pytest.approx(e1) and res.eps2 == pytest.approx(e2)
    assert res.error >= 0 and np.isfinite(res.comparator)


def test_kproj_error_shrinks_with_overlap():
    errs = []
    for delta in (0.3, 0.1, 0.03):
        P, rhos = near_orthogonal_projectors(3, 2, 10, delta, stream(9, "kp"))
        errs.append(joint_block_orthogonalize(P, rhos).error)
    assert errs[0] > errs[1] > errs[2]


def test_family_alpha_zero_on_orthogonal_family(rng):
    Y, rhos = near_orthogonal_family(3, 1, 4, 2, 0.0, rng)
    assert family_alpha(Y, rhos) == pytest.approx(0, abs=1e-14)
    res = orthogonalization_lemma(Y, rhos)
    assert res.fast_path and res.residual <= 1e-12
    assert max_pairwise_overlap(res.Pi) <= 1e-12


def test_orthogonalization_lemma_outputs(rng):
    Y, rhos = near_orthogonal_family(3, 2, 8, 3, 1e-3, rng)
    a = family_alpha(Y, rhos)
    assert a == pytest.approx(1e-3, rel=0.02)
    res = orthogonalization_lemma(Y, rhos)
    assert not res.fast_path
    assert res.beta1 == pytest.approx(a**0.8) and res.beta2 == pytest.approx(a**0.6)
    assert max_pairwise_overlap(res.Pi) <= 1e-9
    assert 0 <= res.residual <= res.trace
    assert res.comparator == pytest.approx(a**0.1 * res.trace)


def test_orthogonalization_rejects_bad_family(rng):
    Y = np.array([np.eye(2), np.eye(2)], dtype=complex)
    with pytest.raises(ValidationError):
        orthogonalization_lemma(Y, np.array([np.eye(2) / 4] * 2))
    with pytest.raises(InvalidInputError):
        orthogonalization_lemma(np.eye(2), np.eye(2))


def test_complete_measurement():
    Pi = np.array([np.diag([1.0, 0, 0]), np.diag([0, 1.0, 0])])
    out = complete_measurement(Pi)
    np.testing.assert_allclose(out.sum(axis=0), np.eye(3))
    np.testing.assert_allclose(out[1], np.diag([0, 1.0, 1.0]))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), d=st.integers(1, 6))
def test_positive_blocks_bounds(seed, d):
    r = np.random.default_rng(seed)
    A = random_psd(d, r)
    rho = random_psd(d, r)
    B = random_unitary(d, r)[:, : int(r.integers(0, d + 1))]
    Pi = B @ dagger(B)
    I = np.eye(d)

    def tr(X):
        return np.trace(X @ rho)

    a = tr(A).real
    b = abs(tr((I - Pi) @ A @ Pi))
    c = tr((I - Pi) @ A @ (I - Pi)).real
    lhs = tr(Pi @ A @ Pi).real
    assert lhs <= (math.sqrt(a) + math.sqrt(max(c, 0))) ** 2 + 1e-9
    assert lhs <= 2 * (a + c) + 1e-9
    assert lhs <= ((math.sqrt(a) + math.sqrt(a + 4 * b)) / 2) ** 2 + 1e-9
    assert lhs <= a + 2 * b + 1e-9


def test_serial_projectors_recover_product_measurement():
    s = chsh_optimal_strategy()
    X = ProductStrategy(s.bob, 2)
    rho = np.eye(4) / 4
    out = serial_block_projectors(X, rho, (0,), (1,), (0,), eta=0.1, eps=0.5)
    for (i, qi), meas in out.measurements.items():
        assert i == 1
        # the block (R, a_R) lives on the range of the first-round projector
        target = np.array([np.kron(s.bob[1, 0], s.bob[qi, a]) for a in range(2)])
        for a in range(2):
            P = np.kron(s.bob[1, 0], np.eye(2))
            np.testing.assert_allclose(P @ meas[a] @ P, target[a], atol=1e-10)
        np.testing.assert_allclose(meas.sum(axis=0), np.eye(4), atol=1e-10)
    err = product_approx_error(X, rho, (0,), (1,), (0,), (1,), (0,), out.measurements, eta=0.1)
    assert err["prodc1_lhs"] == pytest.approx(0, abs=1e-10)
    assert err["prodc2_lhs"] == pytest.approx(0, abs=1e-10)
    assert err["alpha_aR"] is not None


def test_serial_projectors_reject_non_serial_answer():
    X = build_scrambling_strategy(4, 2, 2, 16)
    with pytest.raises(ValidationError):
        serial_block_projectors(X, np.eye(16) / 16, (0,), (1,), (0,), eta=0.1, eps=0.1)
