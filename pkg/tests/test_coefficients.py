import math

import numpy as np
import pytest
from sympy import Rational
from sympy.physics.quantum.cg import CG

from spinqec.coefficients import (
    CONVENTION,
    CoefficientTable,
    OutOfRangeError,
    TableIntegrityError,
    build_table,
    cg_rank1,
    collective_coeff,
    collective_vector,
    individual_coeff,
    loss_coeff,
    pi_channel_map,
)
from spinqec.oracle import apply_channel_exact, extract_coefficients
from spinqec.picore import DomainError


def _levels(two_j):
    return [tm / 2 for tm in range(-two_j, two_j + 1, 2)]


@pytest.mark.parametrize("two_j1", [1, 2, 3, 4, 7])
def test_cg_rank1_matches_sympy(two_j1):
    j1 = Rational(two_j1, 2)
    for dj in (-2, 0, 2):
        two_jf = two_j1 + dj
        if two_jf < 0:
            continue
        for two_m1 in range(-two_j1, two_j1 + 1, 2):
            for m2 in (-1, 0, 1):
                ref = float(CG(j1, Rational(two_m1, 2), 1, m2, Rational(two_jf, 2), Rational(two_m1, 2) + m2).doit())
                assert cg_rank1(two_j1, two_m1, m2, two_jf) == pytest.approx(ref, abs=1e-14)


def test_collective_examples():
    assert collective_coeff(3, -3, -1) == 0
    assert collective_coeff(2, 0, 0) == 0
    # N=2 triplet ladder built from explicit single-spin operators
    sm = np.array([[0, 0], [1, 0]])
    jm = np.kron(sm, np.eye(2)) + np.kron(np.eye(2), sm)
    up_up = np.array([1.0, 0, 0, 0])
    t0 = np.array([0, 1, 1, 0]) / np.sqrt(2)
    assert np.linalg.norm(jm @ up_up) == pytest.approx(math.sqrt(2))
    assert t0 @ (jm @ up_up) == pytest.approx(collective_coeff(1, 1, -1))
    assert collective_coeff(1, 1, -1) == pytest.approx(math.sqrt(2))


def test_superradiant_scaling():
    for two_j in range(0, 21):
        j = two_j / 2
        for m in _levels(two_j):
            assert collective_coeff(j, m, -1) ** 2 == pytest.approx((j + m) * (j - m + 1))


def test_individual_boundaries():
    for m in (-1, 0, 1):
        for mv in _levels(4):
            assert individual_coeff(4, 2, mv, 1, m) == 0
    assert individual_coeff(4, 0, 0, -1, 0) == 0
    assert individual_coeff(4, 1, 1, 0, 1) == 0


def test_individual_dephasing_two_spins():
    # all weight of bar|1,+-1> stays in the triplet; bar|1,0> moves to the singlet
    for mv in (-1, 1):
        assert individual_coeff(2, 1, mv, 0, 0) ** 2 == pytest.approx(2)
        assert individual_coeff(2, 1, mv, -1, 0) == 0
    assert individual_coeff(2, 1, 0, 0, 0) == 0
    assert individual_coeff(2, 1, 0, -1, 0) ** 2 == pytest.approx(2)
    out, res = apply_channel_exact(2, 2, 0, 0, "individual", 0)
    assert res < 1e-12
    assert out == pytest.approx({(2, 0, 0, 0): 2.0})


def test_individual_weights_match_oracle():
    for n in (3, 4, 5):
        for m in (-1, 0, 1):
            exact = extract_coefficients(n, "individual", m)
            for (tj, tm, tjo, tmo), w in exact.items():
                if tjo - tj in (-2, 0, 2) and tmo - tm == 2 * m:
                    c = individual_coeff(n, tj / 2, tm / 2, (tjo - tj) // 2, m)
                    assert c**2 == pytest.approx(w, abs=1e-12)


def test_individual_trace_preservation():
    for n in range(1, 13):
        for tj in range(n % 2, n + 1, 2):
            for mv in _levels(tj):
                for m, total in ((-1, n / 2 + mv), (0, n), (1, n / 2 - mv)):
                    s = sum(individual_coeff(n, tj / 2, mv, j, m) ** 2 for j in (-1, 0, 1))
                    assert s == pytest.approx(total, abs=1e-12)


def test_individual_proportional_to_collective_when_j_unchanged():
    for n in (5, 8, 11):
        for tj in range(max(n % 2, 1), n + 1, 2):
            for m in (-1, 0, 1):
                ratios = [
                    individual_coeff(n, tj / 2, mv, 0, m) / collective_coeff(tj / 2, mv, m)
                    for mv in _levels(tj)
                    if abs(collective_coeff(tj / 2, mv, m)) > 1e-12
                ]
                if ratios:
                    assert max(ratios) - min(ratios) < 1e-12


def test_loss_examples():
    assert loss_coeff(2, 0, 0, 0.5, 0.5) ** 2 == pytest.approx(0.5)
    assert loss_coeff(2, 0, 0, 0.5, -0.5) ** 2 == pytest.approx(0.5)
    assert loss_coeff(2, 0, 0, -0.5, 0.5) == 0
    assert loss_coeff(2, 1, 1, -0.5, -0.5) ** 2 == pytest.approx(1)
    assert loss_coeff(2, 1, 1, -0.5, 0.5) == 0
    assert loss_coeff(2, 1, 0, -0.5, 0.5) ** 2 == pytest.approx(0.5)
    assert loss_coeff(2, 1, 0, -0.5, -0.5) ** 2 == pytest.approx(0.5)
    assert loss_coeff(4, 1, 0, 1, 0) == 0
    out, _ = apply_channel_exact(2, 2, 2, 2, "loss")
    assert out == pytest.approx({(1, 1, 1, 1): 1.0})


def test_loss_normalisation():
    for n in range(2, 25):
        for tj in range(n % 2, n + 1, 2):
            for mv in _levels(tj):
                s = sum(loss_coeff(n, tj / 2, mv, dj, dm) ** 2 for dj in (-0.5, 0.5) for dm in (-0.5, 0.5))
                assert s == pytest.approx(1.0, abs=1e-12)


def test_amplitudes_non_negative_except_signed_dephasing():
    for n in (4, 7):
        for tj in range(n % 2, n + 1, 2):
            for mv in _levels(tj):
                for j in (-1, 0, 1):
                    for m in (-1, 0, 1):
                        c = individual_coeff(n, tj / 2, mv, j, m)
                        if (j, m) == (0, 0):
                            assert np.sign(c) == np.sign(mv) or c == 0
                        else:
                            assert c >= 0


def test_channel_map_matches_exact_example():
    out, res = apply_channel_exact(4, 2, 0, 2, "individual", -1)
    pred = pi_channel_map(4, 2, 0, 2, "individual", -1)
    assert res < 1e-12
    assert set(out) == set(pred)
    for k in out:
        assert out[k] == pytest.approx(pred[k], abs=1e-12)


def test_vectors_are_read_only():
    v = collective_vector(4, -1)
    with pytest.raises(ValueError):
        v[0] = 1.0


def test_build_table_verifies_and_round_trips(tmp_path):
    table = build_table(6)
    assert table.individual(4, 1, 0, -1, 0) == pytest.approx(individual_coeff(4, 1, 0, -1, 0))
    assert table.collective(2, 1, -1) == pytest.approx(collective_coeff(2, 1, -1))
    assert table.loss(3, 0.5, 0.5, 0.5, -0.5) == pytest.approx(loss_coeff(3, 0.5, 0.5, 0.5, -0.5))
    path = tmp_path / "table.json"
    table.to_json(path)
    again = CoefficientTable.from_json(path, n_max=6)
    assert again.entries == table.entries
    assert again.convention == CONVENTION
    with pytest.raises(TableIntegrityError):
        CoefficientTable.from_json(path, n_max=7)
    text = path.read_text().replace(CONVENTION, "something-else")
    path.write_text(text)
    with pytest.raises(TableIntegrityError):
        CoefficientTable.from_json(path)


def test_table_out_of_range():
    table = build_table(4, verify=False)
    with pytest.raises(OutOfRangeError):
        table.individual(5, 0.5, 0.5, 0, 0)
    with pytest.raises(OutOfRangeError):
        table.individual(4, 0.5, 0.5, 0, 0)
    with pytest.raises(OutOfRangeError):
        table.collective(3, 0, 0)


def test_build_table_rejects_tiny_range():
    with pytest.raises(DomainError):
        build_table(1)
