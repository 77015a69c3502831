import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from spinqec.codes import build_kraus_set, build_two_level_code, kl_check
from spinqec.dynamics import NoiseModel, apply_jump, jump_weights
from spinqec.experiments import MemoryConfig
from spinqec.picore import CenteredBasis, TrajectoryState, degeneracy, logical_fidelity
from spinqec.sensing import collective_decay_code, sensing_recover, signal_step

FAST = settings(max_examples=25, deadline=None)
EVERYTHING = NoiseModel(1, 1, 1, 1, 1, 1, 1)


@FAST
@given(st.integers(1, 80))
def test_block_dimensions_fill_hilbert_space(n):
    total = sum(degeneracy(n, tj / 2) * (tj + 1) for tj in range(n % 2, n + 1, 2))
    assert total == 2**n


@st.composite
def states(draw, max_n=10):
    n = draw(st.integers(2, max_n))
    two_j = draw(st.sampled_from(range(n % 2, n + 1, 2)).filter(lambda tj: tj > 0))
    re = draw(st.lists(st.floats(-1, 1), min_size=two_j + 1, max_size=two_j + 1))
    im = draw(st.lists(st.floats(-1, 1), min_size=two_j + 1, max_size=two_j + 1))
    amps = np.array(re) + 1j * np.array(im)
    if np.linalg.norm(amps) < 1e-3:
        amps[0] = 1.0
    return TrajectoryState.normalized(n, two_j, amps)


@FAST
@given(states())
def test_jumps_keep_states_normalised(state):
    for kind, j, m, rate in jump_weights(state, EVERYTHING):
        assert rate >= 0
        out = apply_jump(state, kind, j, m, EVERYTHING)
        if out is not None:
            assert abs(np.linalg.norm(out.amplitudes) - 1) < 1e-12


@FAST
@given(states(), st.floats(0, 1), st.floats(-1, 1))
def test_logical_fidelity_is_bounded(state, a, phase):
    ref = np.array([a, np.sqrt(1 - a * a) * np.exp(1j * phase)])
    f = logical_fidelity(state, ref, CenteredBasis(2))
    assert 0 <= f <= 1 + 1e-12


@st.composite
def family_params(draw):
    two_j = draw(st.integers(9, 24))
    tm1 = draw(st.sampled_from([t for t in range(9, two_j + 1) if (two_j - t) % 2 == 0]))
    tm2 = draw(st.sampled_from([t for t in range(3, tm1 - 5) if (two_j - t) % 2 == 0]))
    return two_j, tm1, tm2


@FAST
@given(family_params(), st.floats(1e-5, 1e-3))
def test_family_codes_satisfy_kl(params, dt):
    two_j, tm1, tm2 = params
    code = build_two_level_code(two_j / 2, tm1 / 2, tm2 / 2)
    n = two_j + 2
    assert kl_check(code, build_kraus_set(n, two_j / 2, EVERYTHING, dt)).passed


@FAST
@given(st.integers(3, 30), st.floats(-2, 2), st.lists(st.floats(0.05, 1), min_size=1, max_size=4))
def test_sensing_recovery_keeps_relative_phase(n, omega, waits):
    code = collective_decay_code(n)
    v = code.vectors()
    start = TrajectoryState.normalized(n, n, v[0] + v[1])
    state, elapsed = start, 0.0
    for w in waits:
        state = signal_step(state, omega, w)
        elapsed += w
        hit = apply_jump(state, "collective", 0, -1)
        if hit is None:
            break
        state = sensing_recover(hit, code)
    ref = signal_step(start, omega, elapsed)
    rel = (v[1] @ state.amplitudes) / (v[0] @ state.amplitudes)
    rel_ref = (v[1] @ ref.amplitudes) / (v[0] @ ref.amplitudes)
    assert abs(rel - rel_ref) < 1e-9


@FAST
@given(
    st.sampled_from([0.001, 0.002, 0.005]),
    st.integers(1, 50),
    st.integers(1, 10_000),
    st.integers(0, 2**31),
    st.booleans(),
)
def test_memory_config_round_trip(dt, steps, n_traj, seed, teleport):
    d = {
        "n_spins": 20, "initial_j": 10, "code": {"m1": 5, "m2": 2}, "rates": {"gamma_m1": 0.5},
        "dt": dt, "t_max": steps * dt, "n_traj": n_traj, "seed": seed, "qec": {"teleport": teleport},
    }
    cfg = MemoryConfig.from_dict(d)
    assert MemoryConfig.from_dict(cfg.to_dict()) == cfg
