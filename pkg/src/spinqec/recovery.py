"""Syndrome extraction, recovery pulses, teleport hand-off and the memory experiment.

Every unitary applied to an ensemble is a product of level-coupling pulses.
A pulse couples two magnetisation levels of one J block through

    H = h K + h* K^dag,    K = P J_-^k P / norm   (or J_+^k),

where ``P = prod_{M != Mi, Mj} (J_z - M)`` kills every other level, so ``H``
only has the two off-diagonal entries ``(Mi, Mj)`` and ``(Mj, Mi)``.  With
``h = i`` the pulse of duration ``theta`` is the real rotation

    |Mi> -> cos(theta) |Mi> - sin(theta) |Mj>,   |Mj> -> sin(theta) |Mi> + cos(theta) |Mj>.

Recovery is built from the syndrome alone: the expected post-error branch
vectors are concentrated into single levels, moved onto the target code's
levels with pi pulses (tracking the signs they pick up), then spread into the
target amplitudes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .codes import CodeFamily, QecCode
from .coefficients import collective_vector, individual_vector, loss_vector
from .picore import PiDensityState, TrajectoryState, twice

__all__ = [
    "J_THRESHOLD_TWO",
    "UnrecoverableError",
    "ThresholdBreach",
    "HandoffError",
    "Syndrome",
    "LevelCoupling",
    "build_level_coupling",
    "pulse_unitary",
    "program_unitary",
    "plan_recovery",
    "DetectionProgram",
    "detection_program",
    "measure_j_sector",
    "measure_syndrome_m",
    "detect_dephasing",
    "recover",
    "teleport_handoff",
    "QecController",
    "run_memory_experiment",
]

J_THRESHOLD_TWO = 11  # hand off below J = 11/2
MIN_RECOVERY_TWO_J = 9


class UnrecoverableError(RuntimeError):
    """State has support outside every syndrome subspace."""


class ThresholdBreach(RuntimeError):
    """Target block has no code (J too small)."""


class HandoffError(RuntimeError):
    """State cannot be decoded for teleportation."""


@dataclass(frozen=True)
class Syndrome:
    """Measured change of (doubled) J and M; ``dephased`` is ``None`` until resolved."""

    dj2: int
    dm2: int
    dephased: bool | None = None
    loss: bool = False

    def __post_init__(self):
        if self.loss != (self.dj2 % 2 == 1):
            raise ValueError("loss flag must match a half-integer J shift")

    @property
    def j(self) -> float:
        return self.dj2 / 2

    @property
    def m(self) -> float:
        return self.dm2 / 2


# ---------------------------------------------------------------------------
# Level-coupling pulses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LevelCoupling:
    """Coupling of levels ``Mi``, ``Mj`` (doubled) with strength ``h`` for ``duration``."""

    two_j: int
    two_mi: int
    two_mj: int
    h: complex = 1j
    duration: float = math.pi / 2

    def matrix(self) -> np.ndarray:
        return _coupling_matrix(self.two_j, self.two_mi, self.two_mj, complex(self.h))

    def unitary(self) -> np.ndarray:
        return pulse_unitary(self)


def _jz(two_j: int) -> np.ndarray:
    return np.diag(np.arange(-two_j, two_j + 1, 2) / 2.0)


def _jminus(two_j: int) -> np.ndarray:
    J = two_j / 2
    ms = np.arange(-two_j, two_j + 1, 2) / 2.0
    out = np.zeros((two_j + 1, two_j + 1))
    for k in range(1, two_j + 1):
        M = ms[k]
        out[k - 1, k] = math.sqrt((J + M) * (J - M + 1))
    return out


@lru_cache(maxsize=4096)
def _coupling_shape(two_j: int, two_mi: int, two_mj: int) -> np.ndarray:
    """Normalised ``P J_-^k P`` (or ``P J_+^k P``) with a unit entry at (Mi, Mj)."""
    w = two_j + 1
    jz = _jz(two_j)
    P = np.eye(w)
    for tm in range(-two_j, two_j + 1, 2):
        if tm not in (two_mi, two_mj):
            P = P @ (jz - (tm / 2) * np.eye(w))
    k = abs(two_mi - two_mj) // 2
    ladder = np.linalg.matrix_power(_jminus(two_j), k)
    if two_mi > two_mj:
        ladder = ladder.T  # J_+^k raises Mj to Mi
    K = P @ ladder @ P
    i, j = (two_mi + two_j) // 2, (two_mj + two_j) // 2
    K = K / K[i, j]
    K.setflags(write=False)
    return K


def _coupling_matrix(two_j: int, two_mi: int, two_mj: int, h: complex) -> np.ndarray:
    K = _coupling_shape(two_j, two_mi, two_mj)
    return h * K + np.conj(h) * K.T


def build_level_coupling(total_j, m_i, m_j, h) -> np.ndarray:
    """Hermitian Hamiltonian on block J coupling only levels ``Mi`` and ``Mj``."""
    two_j, ti, tj = twice(total_j), twice(m_i), twice(m_j)
    if ti == tj:
        raise ValueError("levels must differ")
    if abs(ti) > two_j or abs(tj) > two_j or (two_j - ti) % 2 or (two_j - tj) % 2:
        raise ValueError("levels must belong to the J block")
    if h == 0:
        return np.zeros((two_j + 1, two_j + 1), dtype=complex)
    return _coupling_matrix(two_j, ti, tj, complex(h))


def pulse_unitary(c: LevelCoupling) -> np.ndarray:
    """``exp(-i H t)`` in closed form: the two coupled levels rotate, the rest is untouched."""
    w = c.two_j + 1
    U = np.eye(w, dtype=complex)
    g = abs(c.h)
    if g == 0:
        return U
    i, j = (c.two_mi + c.two_j) // 2, (c.two_mj + c.two_j) // 2
    phi = g * c.duration
    e = c.h / g
    U[i, i] = U[j, j] = math.cos(phi)
    U[i, j] = -1j * e * math.sin(phi)
    U[j, i] = -1j * np.conj(e) * math.sin(phi)
    return U


def program_unitary(two_j: int, pulses: Sequence[LevelCoupling]) -> np.ndarray:
    U = np.eye(two_j + 1, dtype=complex)
    for p in pulses:
        U = pulse_unitary(p) @ U
    return U


def _rotation(two_j, a, b, theta) -> LevelCoupling:
    return LevelCoupling(two_j, a, b, 1j, theta)


def plan_recovery(two_j: int, expected: np.ndarray, target: QecCode) -> list[LevelCoupling]:
    """Pulses mapping each expected branch vector exactly onto the target branch.

    ``expected`` is ``(d, 2J+1)`` with real, normalised rows on disjoint
    supports of at most two levels.
    """
    if target.two_j != two_j:
        raise ValueError("target code lives in another block")
    levels = np.arange(-two_j, two_j + 1, 2)
    pulses: list[LevelCoupling] = []
    pos, sign = [], []
    for e in expected:
        sup = np.nonzero(np.abs(e) > 1e-13)[0]
        if len(sup) == 0 or len(sup) > 2:
            raise UnrecoverableError("expected branch must occupy one or two levels")
        a = int(levels[sup[0]])
        if len(sup) == 2:
            b = int(levels[sup[1]])
            theta = math.atan2(e[sup[1]].real, e[sup[0]].real)
            pulses.append(_rotation(two_j, a, b, theta))
            pos.append(a)
            sign.append(1.0)
        else:
            pos.append(a)
            sign.append(float(np.sign(e[sup[0]].real)))
    targets = [lv[0] for lv in target.levels]
    for k, c in enumerate(targets):
        if pos[k] == c:
            continue
        old = pos[k]
        pulses.append(_rotation(two_j, old, c, math.pi / 2))
        sign[k] = -sign[k]  # |old> -> -|c>
        for q in range(len(pos)):
            if q != k and pos[q] == c:
                pos[q] = old  # |c> -> +|old>
        pos[k] = c
    occupied = set(pos)
    free = [int(m) for m in levels if int(m) not in occupied and int(m) not in target.support()]
    for k, (lv, am) in enumerate(zip(target.levels, target.amplitudes)):
        s = sign[k]
        if len(lv) == 2:
            theta = math.atan2(-s * am[1], s * am[0])
            pulses.append(_rotation(two_j, lv[0], lv[1], theta))
        elif len(lv) == 1:
            if s * am[0] < 0:
                spare = free[0] if free else next(m for m in levels if int(m) not in occupied)
                pulses.append(_rotation(two_j, lv[0], int(spare), math.pi))
        else:
            raise NotImplementedError("recovery supports branches of at most two levels")
    return pulses


@dataclass(frozen=True)
class DetectionProgram:
    """Unitary that moves the in-span orthogonal complement of each branch
    onto an ancillary level while leaving the code vectors unchanged."""

    two_j: int
    pulses: tuple
    ancillas: tuple
    complements: np.ndarray = field(repr=False)
    unitary: np.ndarray = field(repr=False)


@lru_cache(maxsize=1024)
def detection_program(code: QecCode) -> DetectionProgram:
    two_j = code.two_j
    levels = [int(m) for m in range(-two_j, two_j + 1, 2)]
    support = set(code.support())
    free = sorted((m for m in levels if m not in support), key=lambda m: (abs(m), m))
    pulses, anc = [], []
    comps = np.zeros((code.dim, two_j + 1))
    k_anc = 0
    for k, (lv, am) in enumerate(zip(code.levels, code.amplitudes)):
        if len(lv) != 2:
            anc.append(None)
            continue
        a, b = lv
        ia, ib = (a + two_j) // 2, (b + two_j) // 2
        comps[k, ia], comps[k, ib] = -am[1], am[0]
        theta = math.atan2(am[1], am[0])
        anc_level = free[k_anc]
        k_anc += 1
        pulses += [
            _rotation(two_j, a, b, theta),
            _rotation(two_j, b, anc_level, math.pi / 2),
            _rotation(two_j, a, b, -theta),
        ]
        anc.append(anc_level)
    U = program_unitary(two_j, pulses)
    return DetectionProgram(two_j, tuple(pulses), tuple(anc), comps, U)


# ---------------------------------------------------------------------------
# Measurements on public states
# ---------------------------------------------------------------------------


def measure_j_sector(state, u: float | None = None, rng=None):
    """Non-destructive measurement of J (and N).

    A trajectory state has a definite J and is returned unchanged.  For a
    :class:`PiDensityState` a block is sampled with its weight (uniform ``u``
    or a draw from ``rng``) and returned renormalised.
    """
    if isinstance(state, TrajectoryState):
        return state.total_j, state
    keys = list(state.blocks)
    w = np.array([np.trace(state.blocks[k]).real for k in keys])
    if u is None:
        u = (rng or np.random.default_rng()).random()
    k = min(int(np.searchsorted(np.cumsum(w) / w.sum(), u, side="right")), len(keys) - 1)
    key = keys[k]
    blk = state.blocks[key] / w[k]
    return key[1] / 2, PiDensityState({key: blk})


def _shift_candidates(dj2: int):
    return (-2, 0, 2) if dj2 % 2 == 0 else (-1, 1)


def _syndrome_sets(code: QecCode, two_j_new: int, dj2: int):
    out = {}
    for dm2 in _shift_candidates(dj2):
        idx = [
            (tm + dm2 + two_j_new) // 2
            for tm in code.support()
            if abs(tm + dm2) <= two_j_new
        ]
        out[dm2] = np.array(idx, dtype=int)
    return out


def _project_syndrome(amps, code, two_j_new, dj2, u):
    """Sample the M-shift syndrome from lane 0 and project all lanes."""
    sets = _syndrome_sets(code, two_j_new, dj2)
    pop = np.abs(amps[0]) ** 2
    probs = [(dm2, float(pop[idx].sum())) for dm2, idx in sets.items()]
    acc = 0.0
    for dm2, p in probs:
        acc += p
        if u < acc:
            out = np.zeros_like(amps)
            idx = sets[dm2]
            out[:, idx] = amps[:, idx]
            out /= np.linalg.norm(out, axis=-1, keepdims=True)
            return dm2, out
    raise UnrecoverableError("state has support outside every syndrome subspace")


def measure_syndrome_m(state: TrajectoryState, code: QecCode, u: float = 0.5, ref_two_j: int | None = None):
    """Projective measurement of the M shift relative to ``code``'s levels.

    ``ref_two_j`` is the block of ``code`` before the error (defaults to the
    code's block).  Returns ``(Syndrome, projected state)``.
    """
    ref = code.two_j if ref_two_j is None else ref_two_j
    dj2 = state.two_j - ref
    dm2, amps = _project_syndrome(state.amplitudes[None, :], code, state.two_j, dj2, u)
    syn = Syndrome(dj2, dm2, None if (dj2, dm2) == (0, 0) else False, loss=dj2 % 2 == 1)
    return syn, TrajectoryState(state.n_spins, state.two_j, amps[0])


def _dephasing_flag_prob(amps0: np.ndarray, code: QecCode) -> float:
    comps = detection_program(code).complements
    return float(np.sum(np.abs(comps @ amps0) ** 2))


def detect_dephasing(state: TrajectoryState, code: QecCode, u: float = 0.5):
    """Resolve the dephasing flag of a ``(0, 0)`` syndrome.

    The detection unitary parks each branch's in-span orthogonal component on
    an ancillary level; measuring whether the ancillas are populated gives
    the flag.  A flagged state is returned in its detected form (on the
    ancillas); an unflagged one is projected back onto the code.
    """
    flagged, amps = _resolve_dephasing(state.amplitudes[None, :], code, u)
    syn = Syndrome(0, 0, flagged)
    return syn, TrajectoryState(state.n_spins, state.two_j, amps[0])


def _resolve_dephasing(amps, code, u):
    prog = detection_program(code)
    p = _dephasing_flag_prob(amps[0], code)
    if u < p:
        out = amps @ prog.unitary.T
        anc = [(a + code.two_j) // 2 for a in prog.ancillas if a is not None]
        keep = np.zeros(out.shape[-1], dtype=bool)
        keep[anc] = True
        out = np.where(keep, out, 0)
        return True, out / np.linalg.norm(out, axis=-1, keepdims=True)
    V = code.vectors()
    out = (amps @ V.T) @ V
    return False, out / np.linalg.norm(out, axis=-1, keepdims=True)


def _error_vector(n_ref: int, two_j_ref: int, dj2: int, dm2: int) -> np.ndarray:
    if dj2 % 2:
        return loss_vector(n_ref, two_j_ref, dj2, dm2)
    c = individual_vector(n_ref, two_j_ref, dj2 // 2, dm2 // 2)
    if dj2 == 0 and not np.any(c):
        c = collective_vector(two_j_ref, dm2 // 2)
    return c


def _expected_vectors(code: QecCode, n_ref: int, syn: Syndrome) -> np.ndarray:
    """Normalised images of the code branches under the identified error."""
    c = _error_vector(n_ref, code.two_j, syn.dj2, syn.dm2)
    V = code.vectors()
    tj2 = code.two_j + syn.dj2
    shift = (syn.dj2 + syn.dm2) // 2
    out = np.zeros((code.dim, tj2 + 1))
    for k, v in enumerate(V):
        src = c * v
        for i in np.nonzero(src)[0]:
            out[k, i + shift] = src[i]
        nrm = np.linalg.norm(out[k])
        if nrm == 0:
            raise UnrecoverableError("error annihilates a code branch")
        out[k] /= nrm
    if syn.dj2 == 0 and syn.dm2 == 0 and syn.dephased:
        out = out @ detection_program(code).unitary.real.T
    return out


@lru_cache(maxsize=4096)
def _recovery_unitary(code: QecCode, n_ref: int, syn: Syndrome, target: QecCode) -> np.ndarray:
    exp = _expected_vectors(code, n_ref, syn)
    return program_unitary(target.two_j, plan_recovery(target.two_j, exp, target))


def recover(state: TrajectoryState, syndrome: Syndrome, code_registry, prev_code: QecCode, n_ref: int | None = None):
    """Map a corrupted state onto the code of its new block.

    ``prev_code`` is the code the state was in before the error.  Returns
    ``(recovered state, new code)``; raises :class:`ThresholdBreach` when the
    new block has no code.
    """
    if syndrome.dj2 == 0 and syndrome.dm2 == 0 and not syndrome.dephased:
        return state, prev_code
    if n_ref is None:
        n_ref = state.n_spins + (1 if syndrome.loss else 0)
    target = code_registry.code_for(state.n_spins, state.two_j)
    if target is None or state.two_j < MIN_RECOVERY_TWO_J:
        raise ThresholdBreach(f"no code at J={state.two_j}/2")
    R = _recovery_unitary(prev_code, n_ref, syndrome, target)
    return TrajectoryState.normalized(state.n_spins, state.two_j, R @ state.amplitudes), target


# ---------------------------------------------------------------------------
# Teleportation
# ---------------------------------------------------------------------------

_H = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
_X = np.array([[0, 1], [1, 0]])
_Z = np.diag([1, -1])
_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])


def _teleport_qubits(alpha: np.ndarray, u: float):
    """Teleport logical amplitudes ``alpha`` (lanes, 2); outcome sampled from lane 0."""
    bell = np.array([1, 0, 0, 1]) / math.sqrt(2)
    circuit = np.kron(np.kron(_H, np.eye(2)), np.eye(2)) @ np.kron(_CNOT, np.eye(2))
    outs = []
    psi0 = circuit @ np.kron(alpha[0], bell)
    probs = np.array([np.sum(np.abs(psi0.reshape(4, 2)[ab]) ** 2) for ab in range(4)])
    ab = min(int(np.searchsorted(np.cumsum(probs), u * probs.sum(), side="right")), 3)
    a, b = divmod(ab, 2)
    corr = np.linalg.matrix_power(_Z, a) @ np.linalg.matrix_power(_X, b)
    for lane in alpha:
        psi = circuit @ np.kron(lane, bell)
        c = corr @ psi.reshape(4, 2)[ab]
        outs.append(c / np.linalg.norm(c))
    return np.array(outs), (a, b), probs


def teleport_handoff(state: TrajectoryState, code: QecCode, fresh, u: float = 0.5):
    """Move the logical qubit of ``state`` into a fresh ensemble.

    ``fresh`` is ``(n_spins, total_j, code)``.  The qubit is decoded from
    ``code``, teleported through an ideal Bell pair (Bell measurement outcome
    drawn with ``u``, Pauli corrections applied) and re-encoded.  Returns
    ``(new state, (a, b))``.
    """
    n_f, j_f, code_f = fresh
    amps, outcome = _handoff_lanes(state.amplitudes[None, :], code, code_f, u)
    return TrajectoryState(n_f, twice(j_f), amps[0]), outcome


def _handoff_lanes(amps, code, code_f, u):
    V = code.vectors()
    alpha = amps @ V.T
    norms = np.linalg.norm(alpha, axis=-1)
    if np.any(np.abs(norms - 1) > 1e-8):
        raise HandoffError("state is not inside the code space")
    out, outcome, _ = _teleport_qubits(alpha / norms[:, None], u)
    return out @ code_f.vectors(), outcome


# ---------------------------------------------------------------------------
# Per-trajectory QEC controller
# ---------------------------------------------------------------------------


@dataclass
class QecSession:
    """Mutable QEC bookkeeping of one trajectory."""

    n_ref: int
    two_j_ref: int
    active: bool = True
    failed: bool = False
    teleports: int = 0
    teleport_times: list = field(default_factory=list)
    calls: int = 0


@dataclass(frozen=True)
class QecController:
    """Error correction after every ``cadence`` steps.

    ``registry`` provides ``code_for(n, two_j)``.  With ``teleport`` the
    logical qubit is handed to a fresh ``(fresh_n, fresh_n / 2)`` ensemble as
    soon as J drops below ``j_threshold``.  Without it, an error that leaves
    no code to recover into marks the trajectory failed and correction stops.
    """

    registry: object
    teleport: bool = False
    j_threshold_two: int = J_THRESHOLD_TWO
    fresh_n: int | None = None
    cadence: int = 1

    def session(self, n: int, two_j: int) -> QecSession:
        return QecSession(n, two_j, active=self.registry.code_for(n, two_j) is not None)

    def hook(self, n: int, two_j: int):
        """Callable for :func:`~spinqec.dynamics.evolve_trajectory`."""
        sess = self.session(n, two_j)

        def _hook(n, tj, amps, event, u, t):
            sess.calls += 1
            if sess.calls % self.cadence:
                return n, tj, amps
            out = self.cycle(sess, n, tj, amps, u)
            if sess.teleports > len(sess.teleport_times):
                sess.teleport_times.append(t)
            return out

        _hook.session = sess
        _hook.teleport_times = sess.teleport_times
        return _hook

    def fast_vectors(self, n: int, two_j: int):
        """``(V, W, f)`` for the vectorised no-error cycle, or ``None``.

        ``V`` are code vectors, ``W`` their in-span complements (rows of zeros
        for one-level branches) and ``f[k]`` the sign with which a flagged
        complement of branch k is mapped back onto ``V[k]``.
        """
        code = self.registry.code_for(n, two_j)
        if code is None:
            return None
        return _fast_vectors(code, n)

    def cycle(self, sess: QecSession, n: int, tj: int, amps: np.ndarray, u):
        """One correction cycle on ``(lanes, 2J+1)`` amplitudes."""
        if not sess.active or sess.failed or amps is None:
            return n, tj, amps
        code = self.registry.code_for(sess.n_ref, sess.two_j_ref)
        dj2 = tj - sess.two_j_ref
        try:
            dm2, amps = _project_syndrome(amps, code, tj, dj2, u[0])
        except UnrecoverableError:
            return self._fail(sess, n, tj, amps)
        syn = Syndrome(dj2, dm2, None, loss=dj2 % 2 == 1)
        if (dj2, dm2) == (0, 0) and n == sess.n_ref:
            flagged, amps = _resolve_dephasing(amps, code, u[1])
            if not flagged:
                return self._after(sess, n, tj, amps, code, u)
            syn = Syndrome(0, 0, True)
        target = self.registry.code_for(n, tj)
        if target is None or tj < MIN_RECOVERY_TWO_J:
            if self.teleport:
                exp = _expected_vectors(code, sess.n_ref, syn)
                pseudo = QecCode(tj, *_as_levels(exp, tj))
                return self._teleport(sess, amps, pseudo, u)
            return self._fail(sess, n, tj, amps)
        try:
            R = _recovery_unitary(code, sess.n_ref, syn, target)
        except UnrecoverableError:
            return self._fail(sess, n, tj, amps)
        amps = amps @ R.T
        amps = amps / np.linalg.norm(amps, axis=-1, keepdims=True)
        return self._after(sess, n, tj, amps, target, u)

    def _after(self, sess, n, tj, amps, code, u):
        sess.n_ref, sess.two_j_ref = n, tj
        if self.teleport and tj < self.j_threshold_two:
            return self._teleport(sess, amps, code, u)
        return n, tj, amps

    def _teleport(self, sess, amps, code, u):
        nf = self.fresh_n
        fresh = self.registry.code_for(nf, nf)
        amps, _ = _handoff_lanes(amps, code, fresh, u[2])
        sess.teleports += 1
        sess.n_ref, sess.two_j_ref = nf, nf
        return nf, nf, amps

    def _fail(self, sess, n, tj, amps):
        sess.failed = True
        sess.active = False
        return n, tj, amps


def _as_levels(vectors: np.ndarray, two_j: int):
    levels, amps = [], []
    for v in vectors:
        idx = np.nonzero(np.abs(v) > 1e-13)[0]
        levels.append(tuple(int(2 * i - two_j) for i in idx))
        amps.append(tuple(float(v[i]) for i in idx))
    return tuple(levels), tuple(amps)


@lru_cache(maxsize=1024)
def _fast_vectors(code: QecCode, n: int):
    prog = detection_program(code)
    V = code.vectors()
    W = prog.complements
    f = np.zeros(code.dim)
    if np.any(W):
        R = _recovery_unitary(code, n, Syndrome(0, 0, True), code)
        for k in range(code.dim):
            if np.any(W[k]):
                f[k] = float(np.real(V[k] @ R @ prog.unitary @ W[k]))
    return V, W, f


# ---------------------------------------------------------------------------
# Memory experiment
# ---------------------------------------------------------------------------


def run_memory_experiment(config, threads: int = 1, progress=None):
    """Fidelity curves for the four memory settings; see :mod:`spinqec.experiments`."""
    from .experiments import memory_curves

    return memory_curves(config, threads=threads, progress=progress)
