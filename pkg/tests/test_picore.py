from fractions import Fraction
from math import comb

import numpy as np
import pytest

from spinqec.oracle import SIGMA, _site_op
from spinqec.picore import (
    CapacityError,
    CenteredBasis,
    DomainError,
    EmptyBlockError,
    FixedBasis,
    LogicalQudit,
    PiDensityState,
    TrajectoryState,
    centered_levels,
    collective_expectation,
    decode_logical,
    degeneracy,
    encode_logical,
    level_values,
    logical_fidelity,
    twice,
    valid_twice_j,
)


def _closed_form_degeneracy(n, two_j):
    # d = C(N, N/2 - J) - C(N, N/2 - J - 1)
    k = (n - two_j) // 2
    return comb(n, k) - (comb(n, k - 1) if k >= 1 else 0)


def test_degeneracy_small_cases():
    assert degeneracy(2, 1) == 1
    assert degeneracy(2, 0) == 1
    assert degeneracy(4, 1) == 3
    assert degeneracy(5, Fraction(1, 2)) == 5


def test_degeneracy_counts_j_blocks_of_dense_total_spin():
    n = 4
    jx = sum(_site_op(np.array([[0, 1], [1, 0]]) / 2, n, s) for s in range(n)).toarray()
    jy = sum(_site_op(np.array([[0, -1j], [1j, 0]]) / 2, n, s) for s in range(n)).toarray()
    jz = sum(_site_op(SIGMA[0] / 2, n, s) for s in range(n)).toarray()
    ev = np.linalg.eigvalsh(jx @ jx + jy @ jy + jz @ jz)
    # eigenvalue J(J+1) appears d(2J+1) times
    for two_j in (0, 2, 4):
        j = two_j / 2
        mult = int(np.sum(np.abs(ev - j * (j + 1)) < 1e-9))
        assert mult == degeneracy(n, j) * (two_j + 1)


def test_degeneracy_matches_closed_form_up_to_200():
    for n in (1, 7, 30, 77, 200):
        for two_j in range(n % 2, n + 1, 2):
            assert degeneracy(n, two_j / 2) == _closed_form_degeneracy(n, two_j)


def test_sum_rule_exact_to_30():
    for n in range(1, 31):
        total = sum(degeneracy(n, tj / 2) * (tj + 1) for tj in range(n % 2, n + 1, 2))
        assert total == 2**n


@pytest.mark.parametrize("n,j", [(4, 0.5), (3, 0), (2, 2), (0, 0)])
def test_degeneracy_rejects_invalid_blocks(n, j):
    with pytest.raises(DomainError):
        degeneracy(n, j)


def test_twice_and_block_validity():
    assert twice(Fraction(9, 2)) == 9
    assert twice(4.5) == 9
    with pytest.raises(DomainError):
        twice(0.3)
    assert valid_twice_j(5, 1) and not valid_twice_j(5, 0)
    assert valid_twice_j(6, 0) and not valid_twice_j(6, 8)


def test_trajectory_state_invariants():
    st = TrajectoryState.from_levels(4, 2, {-1: 1.0, 1: 1j})
    assert np.isclose(np.linalg.norm(st.amplitudes), 1.0, atol=1e-12)
    assert len(st.amplitudes) == 5
    assert st.amplitude(1) == pytest.approx(1j / np.sqrt(2))
    with pytest.raises(ValueError):
        TrajectoryState(4, 2, np.array([1, 1, 0, 0, 0], dtype=complex))
    with pytest.raises(DomainError):
        TrajectoryState(4, 1, np.array([1, 0], dtype=complex))
    rho = st.to_density()
    rho.validate()
    assert rho.trace() == pytest.approx(1.0)


def test_density_state_validation():
    good = PiDensityState({(2, 2): np.diag([0.5, 0.0, 0.0]), (2, 0): np.array([[0.5]])})
    good.validate()
    assert good.weights() == {(2, 2): 0.5, (2, 0): 0.5}
    with pytest.raises(ValueError):
        PiDensityState({(2, 2): np.diag([0.5, 0.0, 0.0])}).validate()
    with pytest.raises(ValueError):
        PiDensityState({(2, 2): np.diag([1.5, -0.5, 0.0])}).validate()
    with pytest.raises(DomainError):
        PiDensityState({(2, 2): np.eye(2) / 2})


def test_encode_examples():
    rho = encode_logical(LogicalQudit.from_ket([1.0]), 4, 1)
    blk = rho.block(1, 4)
    assert np.count_nonzero(blk) == 1 and np.trace(blk) == pytest.approx(1)

    rho = encode_logical(LogicalQudit.maximally_mixed(3), 2, 1)
    np.testing.assert_allclose(rho.block(1, 2), np.eye(3) / 3)

    rho = encode_logical(LogicalQudit.from_ket([1, 1]), 20, 10)
    blk = rho.block(10, 20)
    assert np.linalg.matrix_rank(blk, tol=1e-12) == 1
    nz = blk[np.abs(blk) > 1e-14]
    np.testing.assert_allclose(nz, 0.5)
    assert nz.size == 4


def test_centered_levels():
    assert centered_levels(20, 2) == [-2, 0]
    assert centered_levels(2, 3) == [-2, 0, 2]
    assert centered_levels(3, 2) == [-1, 1]
    with pytest.raises(CapacityError):
        centered_levels(2, 4)


def test_encode_decode_round_trip_random():
    rng = np.random.default_rng(4)
    for d, n, two_j in [(2, 6, 2), (3, 6, 4), (5, 8, 4), (4, 7, 7)]:
        a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        rho = a @ a.conj().T
        q = LogicalQudit(rho / np.trace(rho))
        st = encode_logical(q, n, two_j / 2)
        back, w = decode_logical(st, two_j / 2, dim=d, n_spins=n)
        assert w == pytest.approx(1.0)
        np.testing.assert_allclose(back.rho, q.rho, atol=1e-12)


def test_decode_reports_weight_before_renormalisation():
    q = LogicalQudit.from_ket([1, 1j])
    st = encode_logical(q, 4, 1)
    mixed = PiDensityState({(4, 2): 0.3 * st.block(1, 4), (4, 0): np.array([[0.7]])})
    back, w = decode_logical(mixed, 1, dim=2, n_spins=4)
    assert w == pytest.approx(0.3)
    np.testing.assert_allclose(back.rho, q.rho, atol=1e-12)
    with pytest.raises(EmptyBlockError):
        decode_logical(mixed, 2, dim=2, n_spins=4)


def test_encode_capacity():
    with pytest.raises(CapacityError):
        encode_logical(LogicalQudit.maximally_mixed(4), 2, 1)


def test_collective_expectations():
    top = TrajectoryState.from_levels(6, 3, {3: 1})
    assert collective_expectation(top, "Jz") == pytest.approx(3)
    singlet = PiDensityState({(2, 0): np.array([[1.0]])})
    assert collective_expectation(singlet, "J2") == pytest.approx(0)
    mix = PiDensityState({(2, 2): np.diag([0.5, 0, 0.5])})
    assert collective_expectation(mix, "Jz") == pytest.approx(0)
    assert collective_expectation(mix, "Jz2") == pytest.approx(1)
    assert collective_expectation(mix, "J2") == pytest.approx(2)
    with pytest.raises(ValueError):
        collective_expectation(mix, "Jx")


def test_logical_fidelity_encoded_and_orthogonal():
    basis = CenteredBasis(2)
    st = encode_logical(LogicalQudit.from_ket([1, 1]), 6, 3)
    assert logical_fidelity(st, [1, 1], basis) == pytest.approx(1)
    assert logical_fidelity(st, [1, -1], basis) == pytest.approx(0, abs=1e-14)


def test_logical_fidelity_is_linear_over_blocks():
    basis = CenteredBasis(2)
    a = TrajectoryState.normalized(6, 2, np.array([0.3, 1, 1j], dtype=complex))
    b = TrajectoryState.normalized(6, 4, np.array([0, 1, 0, 0, 0], dtype=complex))
    mix = PiDensityState(
        {(6, 2): 0.25 * a.to_density().block(1, 6), (6, 4): 0.75 * b.to_density().block(2, 6)}
    )
    expected = 0.25 * logical_fidelity(a, [1, 1], basis) + 0.75 * logical_fidelity(b, [1, 1], basis)
    assert logical_fidelity(mix, [1, 1], basis) == pytest.approx(expected)


def test_fixed_basis_only_in_its_block():
    kets = np.eye(2, 21)
    fb = FixedBasis(20, 20, kets)
    assert fb.logical_kets(20, 18) is None
    assert fb.logical_kets(19, 20) is None
    np.testing.assert_array_equal(fb.logical_kets(20, 20), kets)


def test_no_degeneracy_resolved_data_in_state_types():
    # States are indexed by (N, 2J) blocks only; there is no degeneracy label.
    st = encode_logical(LogicalQudit.from_ket([1, 0]), 6, 1)
    assert all(len(k) == 2 for k in st.blocks)
    assert not any("degener" in name for name in dir(st))
    assert level_values(3).tolist() == [-1.5, -0.5, 0.5, 1.5]
