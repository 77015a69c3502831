import warnings

import numpy as np
import pytest

from spinqec.codes import (
    CodeFamily,
    QecCode,
    build_kraus_set,
    build_two_level_code,
    code_search,
    export_catalog,
    import_catalog,
    kl_check,
    noise_for_channels,
)
from spinqec.coefficients import build_table
from spinqec.coefficients import OutOfRangeError
from spinqec.dynamics import NoiseModel
from spinqec.picore import CapacityError

EVERYTHING = NoiseModel(1, 1, 1, 1, 1, 1, 1)


def _family(n):
    for tj in range(9, n + 1):
        if (n - tj) % 2:
            continue
        for tm1 in range(9, tj + 1):
            for tm2 in range(3, tm1 - 5):
                if (tj - tm1) % 2 == 0 and (tj - tm2) % 2 == 0:
                    yield tj, tm1, tm2


def test_reference_code_amplitudes():
    code = build_two_level_code(10, 5, 2)
    v = code.vectors()
    assert v[0, 5] == pytest.approx(np.sqrt(2 / 7))
    assert v[0, 12] == pytest.approx(np.sqrt(5 / 7))
    assert v[1, 15] == pytest.approx(np.sqrt(2 / 7))
    assert v[1, 8] == pytest.approx(np.sqrt(5 / 7))
    assert v[0] @ v[1] == 0
    np.testing.assert_allclose(code.mean_jz(), [0, 0], atol=1e-14)
    assert code.warnings == ()
    assert code.family_params() == (5, 2)


def test_family_constraints_are_flagged_not_rejected():
    with pytest.warns(UserWarning):
        code = build_two_level_code(10, 3, 1)
    assert "M1 - M2 < 3" in code.warnings and "M2 < 3/2" in code.warnings
    with pytest.raises(CapacityError):
        build_two_level_code(4, 5, 2)


def test_code_invariants_enforced():
    with pytest.raises(ValueError):
        QecCode(4, ((0, 2), (2,)), ((0.6, 0.8), (1.0,)))
    with pytest.raises(ValueError):
        QecCode(4, ((0,), (2,)), ((0.5,), (1.0,)))


def test_kraus_set_dephasing_only():
    ks = build_kraus_set(22, 10, NoiseModel(gamma_0=1.0), 1e-3)
    assert {(op.dj2, op.dm2) for op in ks.ops} == {(-2, 0), (0, 0), (2, 0)}
    # the top block has no J + 1 neighbour
    ks = build_kraus_set(20, 10, NoiseModel(gamma_0=1.0), 1e-3)
    assert {(op.dj2, op.dm2) for op in ks.ops} == {(-2, 0), (0, 0)}


def test_kraus_set_loss_ops_half_integer():
    ks = build_kraus_set(20, 10, NoiseModel(gamma_d=1.0), 1e-3)
    assert ks.ops
    for op in ks.ops:
        assert op.kind == "loss" and op.dj2 % 2 == 1 and op.dm2 % 2 == 1


@pytest.mark.parametrize("dt", [1e-3, 1e-4])
def test_kraus_completeness(dt):
    ks = build_kraus_set(20, 8, EVERYTHING, dt)
    # sum E^dag E is diagonal for shift operators; compare with the identity
    assert ks.completeness_error() <= 10 * dt**2


def test_kraus_set_table_gap():
    table = build_table(6, verify=False)
    with pytest.raises(OutOfRangeError):
        build_kraus_set(10, 5, EVERYTHING, 1e-3, table=table)


def test_reference_code_passes_kl_all_channels():
    rep = kl_check(build_two_level_code(10, 5, 2), build_kraus_set(20, 10, EVERYTHING, 1e-3))
    assert rep.passed
    assert rep.max_violation < 1e-10
    np.testing.assert_allclose(rep.K, rep.K.T)
    assert np.linalg.eigvalsh(rep.K).min() > -1e-10


def test_close_levels_fail_kl():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        code = build_two_level_code(10, 3, 1)
    assert not kl_check(code, build_kraus_set(20, 10, EVERYTHING, 1e-3)).passed


def test_trivial_code_fails_under_dephasing():
    code = QecCode(20, ((-20,), (20,)), ((1.0,), (1.0,)))
    rep = kl_check(code, build_kraus_set(20, 10, NoiseModel(gamma_0=1.0), 1e-3))
    assert not rep.passed


@pytest.mark.parametrize("n", [10, 20])
def test_whole_family_passes(n):
    ks_cache = {}
    count = 0
    for tj, tm1, tm2 in _family(n):
        if tj not in ks_cache:
            ks_cache[tj] = build_kraus_set(n, tj / 2, EVERYTHING, 1e-3)
        rep = kl_check(build_two_level_code(tj / 2, tm1 / 2, tm2 / 2), ks_cache[tj])
        assert rep.passed, (tj, tm1, tm2)
        count += 1
    assert count > 0


def test_pass_is_rate_independent():
    code = build_two_level_code(10, 5, 2)
    bad = QecCode(20, ((-20,), (20,)), ((1.0,), (1.0,)))
    for c in (code, bad):
        a = kl_check(c, build_kraus_set(20, 10, EVERYTHING, 1e-3))
        b = kl_check(c, build_kraus_set(20, 10, NoiseModel(*(7.0,) * 7), 1e-5))
        assert a.passed == b.passed
        assert a.max_violation == pytest.approx(b.max_violation)


def test_syndrome_supports_are_disjoint():
    code = build_two_level_code(10, 5, 2)
    ks = build_kraus_set(20, 10, EVERYTHING, 1e-3)
    by_dest = {}
    for op in ks.ops:
        supp = set()
        for v in code.vectors():
            n2, tj2, w = op.apply(20, 20, v)
            supp |= set(np.nonzero(np.abs(w) > 1e-14)[0])
        by_dest.setdefault((op.kind == "loss", op.dj2), {}).setdefault(op.dm2, set()).update(supp)
    for shifts in by_dest.values():
        sets = list(shifts.values())
        for i in range(len(sets)):
            for j in range(i + 1, len(sets)):
                assert not sets[i] & sets[j]


def test_dephased_branches_orthogonal_to_code():
    code = build_two_level_code(10, 5, 2)
    ks = build_kraus_set(20, 10, NoiseModel(gamma_0=1.0, Gamma_0=1.0), 1e-3)
    V = code.vectors()
    for op in ks.ops:
        if op.dj2 == 0:
            for v in V:
                _, _, w = op.apply(20, 20, v)
                np.testing.assert_allclose(V @ w, 0, atol=1e-12)


def test_search_rediscovers_threshold_code():
    codes = code_search(4.5, channels=("all",), budget=2)
    assert any(c.family_params() == (4.5, 1.5) for c in codes)


def test_search_empty_below_threshold():
    assert code_search(1.5, channels=("all",), budget=2) == []


def test_search_dephasing_only_equal_mean_jz():
    codes = code_search(10, channels=("dephasing",), budget=2)
    assert codes
    for c in codes:
        jz = c.mean_jz()
        assert jz[0] == pytest.approx(jz[1], abs=1e-9)


def test_search_rejects_bad_budget():
    with pytest.raises(ValueError):
        code_search(1, budget=4)


def test_family_registry_parity():
    fam = CodeFamily.from_values(5, 2)
    assert fam.code_for(20, 20).family_params() == (5, 2)
    assert fam.code_for(19, 19).family_params() == (4.5, 1.5)
    assert fam.code_for(20, 8) is None
    assert fam.code_for(20, 19) is None


def test_catalog_round_trip(tmp_path):
    codes = code_search(4.5, channels=("all",), budget=2)
    path = tmp_path / "codes.json"
    export_catalog(codes, path, channels=("all",))
    back = import_catalog(path)
    assert len(back) == len(codes)
    for a, b in zip(codes, back):
        assert a.levels == b.levels
        np.testing.assert_allclose(a.vectors(), b.vectors())
    assert noise_for_channels(["all"]) == EVERYTHING
