"""Single-trajectory unravelling of the PI Lindblad equation.

The step used everywhere (here and in the batched engine) is:

1. with the pre-step populations ``p_M`` compute the no-jump survival
   ``sum_M p_M exp(-dt W(M))``; a jump happens if ``u_jump < 1 - survival``;
2. a jump picks branch ``b`` with probability proportional to its rate
   ``rate_b sum_M coeff_b(M)^2 p_M`` and maps ``c_{M+m} <- coeff_b(M) c_M``;
   otherwise the amplitudes are damped by ``exp(-dt W(M) / 2)``;
3. the signal phase ``exp(-i omega M dt)`` is applied;
4. hooks (error correction) run with the remaining uniforms.

Each step consumes exactly five uniforms, in the order
``(jump, branch, syndrome, dephasing flag, teleport)``.

Internally amplitudes are carried as ``(lanes, 2J+1)`` arrays.  Lanes share
every random decision (taken from lane 0) and are used to evolve a
signal/no-signal pair with common random numbers.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..picore import TrajectoryState, level_values
from .noise import Branch, NoiseModel, branches_for, rate_density

__all__ = [
    "ImpossibleBranchError",
    "UNIFORMS_PER_STEP",
    "trajectory_rng",
    "jump_weights",
    "apply_jump",
    "no_jump_step",
    "evolve_trajectory",
    "TrajectoryRecord",
    "write_jsonl",
]

UNIFORMS_PER_STEP = 5
DRIFT_WARN = 0.05


class ImpossibleBranchError(RuntimeError):
    """A jump branch with zero weight was applied."""


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trajectory ``index`` of a run seeded by ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


# ---------------------------------------------------------------------------
# Raw kernels on (lanes, 2J+1) arrays
# ---------------------------------------------------------------------------


def _normalize_lanes(amps: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(amps, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ImpossibleBranchError("zero-norm state")
    return amps / norms


def jump_raw(n: int, two_j: int, amps: np.ndarray, branch: Branch):
    """Apply a branch; returns ``(n, two_j, amps)`` or ``(0, 0, None)`` when the
    last spin is lost."""
    if branch.kind == "loss" and n == 1:
        return 0, 0, None
    new_n = n + branch.dn
    new_tj = two_j + branch.dj2
    shift = (branch.dj2 + branch.dm2) // 2
    w = two_j + 1
    out = np.zeros((amps.shape[0], new_tj + 1), dtype=complex)
    src = amps * branch.coeff
    lo = max(0, -shift)
    hi = min(w, new_tj + 1 - shift)
    out[:, lo + shift : hi + shift] = src[:, lo:hi]
    if np.any(np.abs(src[:, :lo]) > 0) or np.any(np.abs(src[:, hi:]) > 0):
        raise ImpossibleBranchError("branch maps amplitude outside the target block")
    return new_n, new_tj, _normalize_lanes(out)


def branch_rates(noise: NoiseModel, n: int, two_j: int, pops: np.ndarray):
    brs = branches_for(noise, n, two_j)
    rates = np.array([b.rate * float(b.coeff**2 @ pops) for b in brs])
    return brs, rates


def pick_branch(brs, rates: np.ndarray, u: float) -> Branch:
    total = rates.sum()
    cum = np.cumsum(rates)
    k = int(np.searchsorted(cum, u * total, side="right"))
    k = min(k, len(brs) - 1)
    while rates[k] <= 0:  # guard against landing on an empty branch
        k -= 1
    return brs[k]


def drift_raw(noise: NoiseModel, n: int, two_j: int, amps: np.ndarray, dt: float):
    w = rate_density(noise, n, two_j)
    return _normalize_lanes(amps * np.exp(-0.5 * dt * w))


def signal_raw(two_j: int, amps: np.ndarray, omegas: np.ndarray, dt: float):
    ms = level_values(two_j)
    return amps * np.exp(-1j * np.outer(omegas, ms) * dt)


# ---------------------------------------------------------------------------
# Public single-state operations
# ---------------------------------------------------------------------------


def jump_weights(state: TrajectoryState, noise: NoiseModel):
    """List of ``(kind, j, m, rate)`` for every branch with nonzero rate."""
    pops = np.abs(state.amplitudes) ** 2
    brs, rates = branch_rates(noise, state.n_spins, state.two_j, pops)
    return [(b.kind, b.j, b.m, float(r)) for b, r in zip(brs, rates) if r > 0]


def _find_branch(noise, n, two_j, kind, j, m) -> Branch:
    dj2, dm2 = round(2 * j), round(2 * m)
    for b in branches_for(noise, n, two_j):
        if (b.kind, b.dj2, b.dm2) == (kind, dj2, dm2):
            return b
    raise ImpossibleBranchError(f"no {kind} branch (j={j}, m={m}) with nonzero rate")


def apply_jump(state: TrajectoryState, kind: str, j, m, noise: NoiseModel | None = None):
    """Conditional state after a ``(kind, j, m)`` jump.

    Returns ``None`` when the only remaining spin is lost.  The branch must
    exist for the given ``noise`` (all rates 1 when omitted).
    """
    if noise is None:
        noise = NoiseModel(1, 1, 1, 1, 1, 1, 1)
    b = _find_branch(noise, state.n_spins, state.two_j, kind, j, m)
    n, tj, amps = jump_raw(state.n_spins, state.two_j, state.amplitudes[None, :], b)
    if amps is None:
        return None
    return TrajectoryState(n, tj, amps[0])


def no_jump_step(state: TrajectoryState, noise: NoiseModel, dt: float) -> TrajectoryState:
    """Deterministic no-jump evolution ``c_M <- c_M exp(-dt W(M) / 2)``, renormalised."""
    w = rate_density(noise, state.n_spins, state.two_j)
    if w.size and dt * w.max() > DRIFT_WARN:
        warnings.warn(
            f"dt * max rate = {dt * w.max():.3g} exceeds {DRIFT_WARN}; "
            "the first-order jump sampling is inaccurate",
            RuntimeWarning,
            stacklevel=2,
        )
    amps = drift_raw(noise, state.n_spins, state.two_j, state.amplitudes[None, :], dt)
    return TrajectoryState(state.n_spins, state.two_j, amps[0])


# ---------------------------------------------------------------------------
# Trajectory loop
# ---------------------------------------------------------------------------


Hook = Callable[..., tuple]


@dataclass
class TrajectoryRecord:
    """Outcome of one trajectory.

    ``jumps`` holds ``(time, kind, j, m, J_before, J_after, N_after)``.
    """

    seed: int
    index: int
    times: np.ndarray
    observables: dict = field(default_factory=dict)
    jumps: list = field(default_factory=list)
    teleports: list = field(default_factory=list)
    final: TrajectoryState | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "index": self.index,
                "times": [float(t) for t in self.times],
                "observables": {k: [float(x) for x in v] for k, v in self.observables.items()},
                "jumps": [list(j) for j in self.jumps],
                "teleports": [float(t) for t in self.teleports],
            }
        )


def write_jsonl(records: Sequence[TrajectoryRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def step_grid(t_max: float, dt: float, sample_dt: float | None):
    """Number of steps, steps between samples and the sample times."""
    if dt <= 0 or t_max < 0:
        raise ValueError("dt must be positive and t_max non-negative")
    n_steps = int(round(t_max / dt))
    if abs(n_steps * dt - t_max) > 1e-9 * max(1.0, t_max):
        raise ValueError("t_max must be a multiple of dt")
    every = 1 if sample_dt is None else int(round(sample_dt / dt))
    if every < 1 or abs(every * dt - (sample_dt or dt)) > 1e-9:
        raise ValueError("sample interval must be a positive multiple of dt")
    times = np.arange(0, n_steps + 1, every) * dt
    return n_steps, every, times


def evolve_trajectory(
    initial: TrajectoryState,
    noise: NoiseModel,
    t_max: float,
    dt: float,
    seed: int,
    hooks: Sequence[Hook] = (),
    *,
    index: int = 0,
    sample_dt: float | None = None,
    observables: dict | None = None,
    omega: float = 0.0,
) -> TrajectoryRecord:
    """Run one trajectory.

    ``observables`` maps names to callables of a :class:`TrajectoryState`
    (or ``None`` once every spin is lost).  Each hook is called as
    ``hook(n, two_j, amps, event, u, t)`` with ``amps`` of shape
    ``(1, 2J+1)``, the branch that fired (or ``None``) and the three
    remaining uniforms; it returns the possibly updated ``(n, two_j, amps)``.
    """
    n_steps, every, times = step_grid(t_max, dt, sample_dt)
    observables = observables or {}
    rng = trajectory_rng(seed, index)
    n, tj = initial.n_spins, initial.two_j
    amps = initial.amplitudes[None, :].astype(complex)
    omegas = np.array([omega])
    rec = TrajectoryRecord(seed, index, times)
    values = {k: [] for k in observables}
    w = rate_density(noise, n, tj)
    if w.size and dt * w.max() > DRIFT_WARN:
        warnings.warn(f"dt * max rate = {dt * w.max():.3g} exceeds {DRIFT_WARN}", RuntimeWarning)

    def sample():
        st = None if amps is None else TrajectoryState.normalized(n, tj, amps[0])
        for k, f in observables.items():
            values[k].append(f(st))

    sample()
    for step in range(1, n_steps + 1):
        t = step * dt
        u = rng.random(UNIFORMS_PER_STEP)
        if amps is not None:
            pops = np.abs(amps[0]) ** 2
            w = rate_density(noise, n, tj)
            p_jump = 1.0 - float(pops @ np.exp(-dt * w))
            event = None
            if u[0] < p_jump:
                brs, rates = branch_rates(noise, n, tj, pops)
                event = pick_branch(brs, rates, u[1])
                j_before = tj / 2
                n, tj, amps = jump_raw(n, tj, amps, event)
                rec.jumps.append((t, event.kind, event.j, event.m, j_before, tj / 2, n))
            else:
                amps = drift_raw(noise, n, tj, amps, dt)
            if amps is not None:
                if omega != 0.0:
                    amps = signal_raw(tj, amps, omegas, dt)
                for hook in hooks:
                    n, tj, amps = hook(n, tj, amps, event, u[2:], t)
                    if amps is None:
                        break
        if step % every == 0:
            sample()
    for hook in hooks:
        rec.teleports.extend(getattr(hook, "teleport_times", []))
    rec.observables = {k: np.array(v) for k, v in values.items()}
    rec.final = None if amps is None else TrajectoryState.normalized(n, tj, amps[0])
    return rec
