"""Ramsey sensing with PI probes under collective decay.

The probe is a two-branch logical basis at fixed J, prepared in
``(|0_c> + |1_c>)/sqrt(2)`` and exposed to ``H = omega Jz``.  Sensitivity is
the infidelity ``1 - |<psi_omega|psi_0>|^2`` between probes evolved with and
without the signal; both evolutions share every random decision.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .codes import QecCode, code_search
from .dynamics.ensemble import EnsembleSpec, run_ensemble
from .dynamics.noise import NoiseModel
from .picore import DomainError, TrajectoryState, level_values
from .recovery import QecController, UnrecoverableError

__all__ = [
    "SensingProbe",
    "UnsupportedConfigurationError",
    "signal_step",
    "accumulated_phase",
    "ghz_probe",
    "collective_decay_code",
    "decay_rate_identity",
    "NogoReport",
    "nogo_individual_decay",
    "ProbeRegistry",
    "sensing_recover",
    "sensing_curves",
    "run_sensing_experiment",
]


class UnsupportedConfigurationError(ValueError):
    """Shifted level sets of the probe collide."""


@dataclass(frozen=True)
class SensingProbe:
    """Two logical branches in block ``J`` plus interrogation parameters."""

    n_spins: int
    code: QecCode
    omega: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        v = self.code.vectors()
        if abs(v[0] @ v[1]) > 1e-12:
            raise ValueError("probe branches must be orthogonal")

    @property
    def two_j(self) -> int:
        return self.code.two_j

    def initial_state(self) -> TrajectoryState:
        v = self.code.vectors()
        return TrajectoryState.normalized(self.n_spins, self.two_j, (v[0] + v[1]).astype(complex))


def signal_step(state: TrajectoryState, omega: float, dt: float) -> TrajectoryState:
    """``c_M <- exp(-i omega M dt) c_M``."""
    ms = level_values(state.two_j)
    return TrajectoryState(state.n_spins, state.two_j, state.amplitudes * np.exp(-1j * omega * ms * dt))


def accumulated_phase(probe: SensingProbe) -> float:
    jz = probe.code.mean_jz()
    return float(probe.omega * probe.t * (jz[0] - jz[1]))


def ghz_probe(n_spins: int) -> QecCode:
    return QecCode(n_spins, ((-n_spins,), (n_spins,)), ((1.0,), (1.0,)))


def collective_decay_code(n_spins: int) -> QecCode:
    """Probe basis ``|N/2, -N/2+1>`` and ``|N/2, N/2>`` that survives collective decay.

    Both branches have the same ``<Jz^2 - Jz>`` (hence the same collective
    decay rate), while their ``<Jz>`` differ by ``N - 1``.
    """
    if n_spins < 3:
        raise DomainError("collective-decay probe needs N >= 3")
    lhs, rhs = decay_rate_identity(n_spins)
    if lhs != rhs:  # pragma: no cover - exact identity
        raise ArithmeticError("branch decay rates differ")
    return QecCode(n_spins, ((-n_spins + 2,), (n_spins,)), ((1.0,), (1.0,)))


def decay_rate_identity(n_spins: int):
    """Exact ``<Jz^2 - Jz>`` of both probe branches as Fractions."""
    j = Fraction(n_spins, 2)

    def f(m):
        return m * m - m

    return f(-j + 1), f(j)


@dataclass
class NogoReport:
    scanned_j: list
    n_passing: int
    max_phase_ratio: float
    worst: QecCode | None

    @property
    def holds(self) -> bool:
        return self.max_phase_ratio <= 1e-10


def nogo_individual_decay(j_max=10, budget: int = 2, tol: float = 1e-10) -> NogoReport:
    """Scan two-branch codes protecting against individual decay.

    For each KL-passing candidate the phase per unit ``omega t``,
    ``<0|Jz|0> - <1|Jz|1>``, is recorded; the report keeps the largest.
    """
    two_max = int(round(2 * j_max))
    worst, best, count, scanned = None, 0.0, 0, []
    for two_j in range(1, two_max + 1):
        b = min(budget, (two_j + 1) // 2)
        codes = code_search(two_j / 2, channels=("decay",), kinds=("individual",), budget=b, tol=tol)
        scanned.append(two_j / 2)
        for c in codes:
            count += 1
            jz = c.mean_jz()
            r = abs(jz[0] - jz[1])
            if worst is None or r > best:
                best, worst = r, c
    return NogoReport(scanned, count, best, worst)


@dataclass(frozen=True)
class ProbeRegistry:
    """Registry with a single probe code at ``(n_spins, J)``."""

    n_spins: int
    code: QecCode

    def code_for(self, n_spins: int, two_j: int):
        if (n_spins, two_j) == (self.n_spins, self.code.two_j):
            return self.code
        return None

    def logical_kets(self, n_spins: int, two_j: int):
        c = self.code_for(n_spins, two_j)
        return None if c is None else c.vectors()


def _check_shifts(code: QecCode):
    sup = set(code.support())
    for dm2 in (-2, 2):
        for lv in code.levels:
            if any(tm + dm2 in sup for tm in lv):
                raise UnsupportedConfigurationError("shifted probe levels collide with code levels")


def sensing_recover(state: TrajectoryState, code: QecCode) -> TrajectoryState:
    """Move a probe shifted by collective jumps back onto its code levels.

    The syndrome is the common shift of all occupied levels.  The pulse
    phases of the physical swaps are known and removed here, so the relative
    branch phase after recovery is exactly the accumulated one.
    """
    if state.two_j != code.two_j:
        raise UnrecoverableError("probe left its J block")
    _check_shifts(code)
    amps = state.amplitudes
    occ = {int(2 * i - code.two_j) for i in np.nonzero(np.abs(amps) > 1e-14)[0]}
    sup = set(code.support())
    shifts = [d for d in range(-2 * code.two_j, 2 * code.two_j + 1, 2) if {o - d for o in occ} <= sup]
    if not shifts:
        raise UnrecoverableError("no common shift maps the probe onto its levels")
    dm2 = min(shifts, key=abs)
    out = np.zeros_like(amps)
    for lv in code.levels:
        for tm in lv:
            src = (tm + dm2 + code.two_j) // 2
            if 0 <= src <= code.two_j:
                out[(tm + code.two_j) // 2] = amps[src]
    return TrajectoryState.normalized(state.n_spins, state.two_j, out)


def _probe_code(name: str, n: int) -> QecCode:
    if name == "ghz":
        return ghz_probe(n)
    if name == "encoded":
        return collective_decay_code(n)
    raise ValueError(f"unknown probe {name!r}")


def sensing_curves(cfg, threads: int = 1, progress=None):
    """Infidelity curves for each configured probe, with and without QEC.

    Returns ``(times, curves)`` where ``curves`` maps a curve id to a dict
    with ``mean`` and ``stderr`` arrays.
    """
    n = cfg.n_spins
    noise = NoiseModel.from_dict(cfg.rates)
    curves = {}
    times = None
    for probe_name in cfg.probes:
        code = _probe_code(probe_name, n)
        probe = SensingProbe(n, code, cfg.omega)
        modes = [False, True] if cfg.qec_enabled else [False]
        for qec in modes:
            ctrl = None
            if qec:
                _check_shifts(code)
                ctrl = QecController(ProbeRegistry(n, code), teleport=False, cadence=cfg.cadence)
            spec = EnsembleSpec(
                probe.initial_state(),
                noise,
                cfg.t_max,
                cfg.dt,
                cfg.sample_dt,
                omegas=(0.0, cfg.omega),
                controller=ctrl,
                observable="infidelity",
            )
            cid = f"{probe_name}_{'qec' if qec else 'bare'}"
            if progress:
                progress(cid)
            res = run_ensemble(spec, cfg.n_traj, cfg.seed, threads=threads)
            times = res.times
            curves[cid] = {"mean": res.mean(), "stderr": res.stderr()}
    if cfg.reference_curves:
        for probe_name in cfg.probes:
            jz = _probe_code(probe_name, n).mean_jz()
            phase = (jz[1] - jz[0]) * cfg.omega * times
            curves[f"{probe_name}_lossless"] = {"mean": np.sin(phase / 2) ** 2, "stderr": np.zeros_like(times)}
    return times, curves


def run_sensing_experiment(config, threads: int = 1, progress=None):
    """Run a sensing config and return ``(times, curves)``."""
    from .experiments import SensingConfig

    if isinstance(config, dict):
        config = SensingConfig.from_dict(config)
    return sensing_curves(config, threads=threads, progress=progress)
