import numpy as np
import pytest
from scipy.linalg import expm

import spinqec.recovery as rec
from spinqec.codes import CodeFamily, build_two_level_code
from spinqec.dynamics import NoiseModel, apply_jump, jump_weights
from spinqec.experiments import MemoryConfig, memory_curves
from spinqec.picore import PiDensityState, TrajectoryState
from spinqec.recovery import (
    HandoffError,
    LevelCoupling,
    QecController,
    Syndrome,
    ThresholdBreach,
    UnrecoverableError,
    build_level_coupling,
    detect_dephasing,
    detection_program,
    measure_j_sector,
    measure_syndrome_m,
    program_unitary,
    recover,
    teleport_handoff,
)

FAMILY = CodeFamily.from_values(5, 2)
CODE = build_two_level_code(10, 5, 2)
EVERYTHING = NoiseModel(1, 1, 1, 1, 1, 1, 1)


def _logical(code, alpha, n=20):
    v = code.vectors()
    return TrajectoryState.normalized(n, code.two_j, alpha[0] * v[0] + alpha[1] * v[1])


def _decode(state, code):
    return code.vectors() @ state.amplitudes


def _fid(state, code, alpha):
    a = np.asarray(alpha) / np.linalg.norm(alpha)
    return abs(np.vdot(a, _decode(state, code))) ** 2


def test_syndrome_loss_flag_consistency():
    Syndrome(1, -1, loss=True)
    with pytest.raises(ValueError):
        Syndrome(1, -1, loss=False)
    with pytest.raises(ValueError):
        Syndrome(0, 0, loss=True)


def test_measure_j_on_trajectory_state():
    st = _logical(CODE, (1, 1))
    j, out = measure_j_sector(st)
    assert j == 10 and out is st
    jumped = apply_jump(st, "individual", -1, -1)
    assert measure_j_sector(jumped)[0] == 9


def test_measure_j_statistics():
    rho = PiDensityState({(4, 4): np.diag([0.7, 0, 0, 0, 0]), (4, 2): np.diag([0, 0.3, 0])})
    rng = np.random.default_rng(0)
    n = 4000
    hits = sum(measure_j_sector(rho, rng=rng)[0] == 2 for _ in range(n))
    assert abs(hits / n - 0.7) < 3 * np.sqrt(0.21 / n)
    outcomes = set()
    for u in (0.01, 0.99):
        j, post = measure_j_sector(rho, u=u)
        outcomes.add(j)
        assert post.trace() == pytest.approx(1.0)
        assert list(post.blocks) == [(4, int(2 * j))]
    assert outcomes == {1, 2}


def test_syndrome_of_clean_state():
    st = _logical(CODE, (1, 1j))
    syn, out = measure_syndrome_m(st, CODE)
    assert (syn.dj2, syn.dm2, syn.dephased) == (0, 0, None)
    np.testing.assert_allclose(out.amplitudes, st.amplitudes, atol=1e-14)


def test_syndrome_after_collective_decay_keeps_coherence():
    alpha = np.array([0.6, 0.8j])
    st = _logical(CODE, alpha)
    jumped = apply_jump(st, "collective", 0, -1)
    syn, out = measure_syndrome_m(jumped, CODE, u=0.3)
    assert (syn.j, syn.m) == (0, -1)
    np.testing.assert_allclose(out.amplitudes, jumped.amplitudes, atol=1e-14)
    fixed, code = recover(out, syn, FAMILY, CODE)
    assert code == CODE
    assert _fid(fixed, CODE, alpha) == pytest.approx(1, abs=1e-10)


def test_syndrome_after_loss():
    st = _logical(CODE, (1, 1))
    jumped = apply_jump(st, "loss", -0.5, 0.5)
    assert (jumped.n_spins, jumped.two_j) == (19, 19)
    syn, _ = measure_syndrome_m(jumped, CODE, ref_two_j=20)
    assert syn.loss and syn.m == 0.5 and syn.j == -0.5


def test_syndrome_outside_code_is_unrecoverable():
    st = TrajectoryState.from_levels(20, 10, {0: 1})
    with pytest.raises(UnrecoverableError):
        measure_syndrome_m(st, CODE)


def test_detect_dephasing_clean_and_dephased():
    st = _logical(CODE, (0.6, 0.8))
    for u in (1e-9, 0.5, 0.999):
        syn, out = detect_dephasing(st, CODE, u)
        assert syn.dephased is False
        np.testing.assert_allclose(out.amplitudes, st.amplitudes, atol=1e-12)
    deph = apply_jump(st, "collective", 0, 0)
    for u in (0.0, 0.5, 0.999999):
        syn, _ = detect_dephasing(deph, CODE, u)
        assert syn.dephased is True


def test_detect_dephasing_born_rule():
    alpha = np.array([0.6, 0.8])
    st = _logical(CODE, alpha)
    deph = apply_jump(st, "individual", 0, 0)
    mix = np.sqrt(0.9) * st.amplitudes + np.sqrt(0.1) * deph.amplitudes
    probe = TrajectoryState.normalized(20, 20, mix)
    us = np.random.default_rng(3).random(5000)
    flags = np.array([detect_dephasing(probe, CODE, u)[0].dephased for u in us])
    assert abs(flags.mean() - 0.1) < 3 * np.sqrt(0.09 / len(us))


def test_level_coupling_pattern_and_pi_pulse():
    H = build_level_coupling(10, -5, 2, 0.7 + 0.2j)
    i, j = 5, 12
    mask = np.zeros_like(H, dtype=bool)
    mask[i, j] = mask[j, i] = True
    assert np.all(H[~mask] == 0)
    np.testing.assert_allclose(H, H.conj().T)
    g = abs(H[i, j])
    U = expm(-1j * H * (np.pi / 2) / g)
    e_i = np.zeros(21)
    e_i[i] = 1
    out = U @ e_i
    assert abs(out[j]) == pytest.approx(1, abs=1e-12)
    others = np.delete(np.eye(21), [i, j], axis=0)
    np.testing.assert_allclose(others @ U @ others.T, np.eye(19), atol=1e-12)
    assert not np.any(build_level_coupling(10, -5, 2, 0))
    with pytest.raises(ValueError):
        build_level_coupling(10, 2, 2, 1)


def test_pulse_unitary_matches_matrix_exponential():
    c = LevelCoupling(9, -3, 5, 0.3 - 0.4j, 1.3)
    np.testing.assert_allclose(c.unitary(), expm(-1j * c.matrix() * c.duration), atol=1e-12)


def test_pulses_are_collective_polynomials():
    # every pulse Hamiltonian lies in the algebra generated by Jz and J_-
    two_j = 8
    jz, jm = rec._jz(two_j), rec._jminus(two_j)
    basis = [np.linalg.matrix_power(jm, k) @ np.linalg.matrix_power(jz, p) for k in range(9) for p in range(9)]
    basis += [b.T for b in basis]
    A = np.array([b.ravel() for b in basis]).T
    H = build_level_coupling(4, -3, 2, 1.0)
    coef, *_ = np.linalg.lstsq(A, H.ravel().real, rcond=None)
    np.testing.assert_allclose(A @ coef, H.ravel().real, atol=1e-8)


def _single_error_cases():
    for kind, j, m, _ in jump_weights(_logical(CODE, (1, 1)), EVERYTHING):
        yield kind, j, m


@pytest.mark.parametrize("kind,j,m", list(_single_error_cases()))
def test_single_error_correctability(kind, j, m):
    alpha = np.array([0.8, 0.6 * np.exp(0.7j)])
    st = _logical(CODE, alpha)
    jumped = apply_jump(st, kind, j, m, EVERYTHING)
    syn, proj = measure_syndrome_m(jumped, CODE, u=0.5, ref_two_j=20)
    if (syn.dj2, syn.dm2) == (0, 0):
        syn, proj = detect_dephasing(proj, CODE, u=0.5)
    fixed, target = recover(proj, syn, FAMILY, CODE, n_ref=20)
    assert _fid(fixed, target, alpha) == pytest.approx(1, abs=1e-10)


def test_individual_pumping_lowering_j():
    alpha = np.array([1, 1j]) / np.sqrt(2)
    jumped = apply_jump(_logical(CODE, alpha), "individual", -1, 1)
    syn, proj = measure_syndrome_m(jumped, CODE, ref_two_j=20)
    fixed, target = recover(proj, syn, FAMILY, CODE, n_ref=20)
    assert target.two_j == 18 and target.family_params() == (5, 2)
    assert _fid(fixed, target, alpha) == pytest.approx(1, abs=1e-10)


def test_no_error_recovery_is_identity():
    st = _logical(CODE, (0.6, 0.8))
    out, code = recover(st, Syndrome(0, 0, False), FAMILY, CODE)
    assert out is st and code is CODE


def test_threshold_breach():
    small = FAMILY.code_for(20, 9)
    assert small is None
    st = TrajectoryState.from_levels(20, 4, {0: 1})
    with pytest.raises(ThresholdBreach):
        recover(st, Syndrome(-2, 0, False), FAMILY, CODE)


def test_teleport_examples():
    fresh = (20, 10, CODE)
    out, _ = teleport_handoff(_logical(CODE, (1, 0)), CODE, fresh, u=0.1)
    assert _fid(out, CODE, (1, 0)) == pytest.approx(1, abs=1e-12)
    rng = np.random.default_rng(8)
    other = FAMILY.code_for(20, 12)
    for _ in range(20):
        a = rng.normal(size=2) + 1j * rng.normal(size=2)
        out, _ = teleport_handoff(_logical(other, a), other, fresh, u=rng.random())
        assert _fid(out, CODE, a) == pytest.approx(1, abs=1e-10)
    with pytest.raises(HandoffError):
        teleport_handoff(TrajectoryState.from_levels(20, 10, {0: 1}), CODE, fresh)


def test_teleport_outcomes_uniform_for_plus():
    st = _logical(CODE, (1, 1))
    us = np.random.default_rng(5).random(4000)
    counts = np.zeros(4)
    for u in us:
        _, (a, b) = teleport_handoff(st, CODE, (20, 10, CODE), u)
        counts[2 * a + b] += 1
    p = counts / len(us)
    assert np.all(np.abs(p - 0.25) < 3 * np.sqrt(0.25 * 0.75 / len(us)))


def test_detection_program_leaves_code_invariant():
    prog = detection_program(CODE)
    V = CODE.vectors()
    np.testing.assert_allclose(V @ prog.unitary.T, V, atol=1e-12)
    np.testing.assert_allclose(prog.unitary, program_unitary(20, prog.pulses))


def test_controller_never_recovers_below_threshold(monkeypatch):
    from spinqec.dynamics.ensemble import EnsembleSpec, run_ensemble

    seen = []
    original = rec._recovery_unitary

    def spy(code, n_ref, syn, target):
        seen.append(target.two_j)
        return original(code, n_ref, syn, target)

    monkeypatch.setattr(rec, "_recovery_unitary", spy)
    ctrl = QecController(FAMILY, teleport=True, fresh_n=20)
    init = _logical(CODE, (1, 1))
    spec = EnsembleSpec(init, NoiseModel(gamma_m1=2.0), 2.0, 0.002, 0.5, controller=ctrl,
                        basis=FAMILY, reference=(1, 1))
    res = run_ensemble(spec, 30, seed=1)
    assert seen and min(seen) >= 9
    assert res.teleports[:, -1].sum() > 0
    # no-jump deformation of the branches is only removed to O(dt^3) per cycle
    np.testing.assert_allclose(res.values, 1.0, atol=1e-4)


def _memory_cfg(**over):
    d = {
        "n_spins": 20, "initial_j": 10, "code": {"m1": 5, "m2": 2}, "rates": {"gamma_m1": 0.5},
        "dt": 0.002, "t_max": 2.0, "sample_dt": 0.25, "n_traj": 200, "seed": 3,
    }
    d.update(over)
    return MemoryConfig.from_dict(d)


def test_zero_noise_curves_pinned():
    curves = memory_curves(_memory_cfg(rates={}, t_max=0.5, n_traj=5))
    assert set(curves) == {"bare_dicke", "code_bare", "code_qec", "code_qec_teleport"}
    for c in curves.values():
        np.testing.assert_allclose(c["mean"], 1.0, atol=1e-12)


def test_teleport_never_worse_than_plain_qec():
    curves = memory_curves(_memory_cfg(curves=["code_qec", "code_qec_teleport"]))
    a, b = curves["code_qec"], curves["code_qec_teleport"]
    sigma = np.sqrt(a["stderr"] ** 2 + b["stderr"] ** 2)
    assert np.all(b["mean"] >= a["mean"] - 3 * sigma)
