"""Batched trajectory engine.

Rows of a batch live on a common doubled-M grid (``g = 2M + N0``), so the
no-jump drift, jump decisions, the signal phase and the error-free
correction cycle are array operations.  Jumps and flagged correction cycles
are rare and are delegated row by row to the scalar kernels of
:mod:`spinqec.dynamics.trajectory` and the controller, which keeps both code
paths identical.

Trajectories are split into fixed-size chunks whose boundaries do not depend
on the worker count; every trajectory draws from its own stream keyed by
``(seed, index)`` and results are concatenated in chunk order, so the output
is the same for any number of workers.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..picore import TrajectoryState
from .noise import NoiseModel, rate_density
from .trajectory import (
    DRIFT_WARN,
    UNIFORMS_PER_STEP,
    branch_rates,
    jump_raw,
    pick_branch,
    step_grid,
    trajectory_rng,
)

__all__ = ["EnsembleSpec", "EnsembleResult", "run_ensemble", "DEFAULT_CHUNK"]

DEFAULT_CHUNK = 250
_DRAW_BLOCK = 256


@dataclass(frozen=True)
class EnsembleSpec:
    """What to simulate.

    ``omegas`` gives one signal strength per lane; all random decisions are
    taken from lane 0.  ``observable`` is ``"fidelity"`` (overlap of lane 0
    with ``reference`` embedded by ``basis``), ``"infidelity"`` (between
    lanes 1 and 0) or ``"Jz"`` (lane 0).  Trajectories whose correction
    failed score 0 on the first two.
    """

    initial: TrajectoryState
    noise: NoiseModel
    t_max: float
    dt: float
    sample_dt: float | None = None
    omegas: tuple = (0.0,)
    controller: object | None = None
    observable: str = "fidelity"
    basis: object | None = None
    reference: tuple = (1.0,)
    record_jumps: bool = False


@dataclass
class EnsembleResult:
    times: np.ndarray
    values: np.ndarray  # (n_traj, n_samples)
    alive: np.ndarray
    two_j: np.ndarray
    n_spins: np.ndarray
    teleports: np.ndarray
    failed: np.ndarray = field(default=None)
    jumps: list | None = None

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def stderr(self) -> np.ndarray:
        n = self.values.shape[0]
        if n < 2:
            return np.zeros(self.values.shape[1])
        return self.values.std(axis=0, ddof=1) / np.sqrt(n)

    def curve(self) -> dict:
        alive = self.alive
        with np.errstate(invalid="ignore", divide="ignore"):
            mean_j = np.where(alive.sum(0) > 0, (self.two_j / 2 * alive).sum(0) / alive.sum(0), 0.0)
            mean_n = self.n_spins.mean(axis=0)
        return {
            "time": self.times,
            "mean": self.mean(),
            "stderr": self.stderr(),
            "n_alive": alive.sum(axis=0),
            "mean_J": mean_j,
            "mean_N": mean_n,
            "teleports": self.teleports.mean(axis=0),
        }


class _Batch:
    def __init__(self, spec: EnsembleSpec, seed: int, start: int, stop: int):
        self.spec = spec
        self.B = stop - start
        self.L = len(spec.omegas)
        self.N0 = spec.initial.n_spins
        self.G = 2 * self.N0 + 1
        self.rngs = [trajectory_rng(seed, i) for i in range(start, stop)]
        init = spec.initial
        self.n = np.full(self.B, init.n_spins)
        self.tj = np.full(self.B, init.two_j)
        self.alive = np.ones(self.B, dtype=bool)
        self.amps = np.zeros((self.B, self.L, self.G), dtype=complex)
        self.amps[:, :, self._slice(init.two_j)] = init.amplitudes
        self._cache: dict = {}
        self.Ef = np.zeros((self.B, self.G))
        self.Eh = np.zeros((self.B, self.G))
        self.psi = np.zeros((self.B, self.G), dtype=complex)
        ctrl = spec.controller
        self.K = 2
        self.key = np.zeros(self.B, dtype=np.int64)
        self._keys: list = []
        self.has_fast = np.zeros(self.B, dtype=bool)
        self.sessions = [ctrl.session(init.n_spins, init.two_j) for _ in range(self.B)] if ctrl else None
        self.dirty = np.zeros(self.B, dtype=bool)
        self.active = np.array([s.active for s in self.sessions], dtype=bool) if ctrl else None
        self.jumps = [[] for _ in range(self.B)] if spec.record_jumps else None
        ref = np.asarray(spec.reference, dtype=complex)
        self.ref = ref / np.linalg.norm(ref)
        ms = (np.arange(self.G) - self.N0) / 2.0
        self.phase = np.exp(-1j * np.outer(spec.omegas, ms) * spec.dt)
        self.any_signal = any(o != 0 for o in spec.omegas)
        for i in range(self.B):
            self._set_row(i)

    def _slice(self, two_j: int) -> slice:
        return slice(self.N0 - two_j, self.N0 + two_j + 1, 2)

    def _entry(self, n: int, tj: int):
        key = (n, tj)
        if key not in self._cache:
            spec = self.spec
            sl = self._slice(tj)
            w = rate_density(spec.noise, n, tj)
            Ef = np.zeros(self.G)
            Eh = np.zeros(self.G)
            Ef[sl] = np.exp(-spec.dt * w)
            Eh[sl] = np.exp(-0.5 * spec.dt * w)
            psi = np.zeros(self.G, dtype=complex)
            if spec.basis is not None:
                kets = spec.basis.logical_kets(n, tj)
                if kets is not None:
                    psi[sl] = self.ref @ kets
            fast = None
            if spec.controller is not None:
                fv = spec.controller.fast_vectors(n, tj)
                if fv is not None:
                    V, W, f = fv
                    Vg = np.zeros((self.K, self.G))
                    Wg = np.zeros((self.K, self.G))
                    Vg[:, sl], Wg[:, sl] = V, W
                    fast = (Vg, Wg, f)
            self._cache[key] = (Ef, Eh, psi, fast, len(self._keys))
            self._keys.append(fast)
        return self._cache[key]

    def _set_row(self, i: int):
        if not self.alive[i]:
            self.Ef[i] = self.Eh[i] = 0
            self.psi[i] = 0
            self.has_fast[i] = False
            return
        Ef, Eh, psi, fast, kid = self._entry(int(self.n[i]), int(self.tj[i]))
        self.Ef[i], self.Eh[i], self.psi[i] = Ef, Eh, psi
        self.key[i] = kid
        self.has_fast[i] = fast is not None

    def _block(self, i: int) -> np.ndarray:
        return self.amps[i][:, self._slice(int(self.tj[i]))]

    def _store(self, i: int, n: int, tj: int, block):
        self.amps[i] = 0
        if block is None:
            self.alive[i] = False
            self.n[i] = 0
            self.tj[i] = 0
        else:
            self.n[i], self.tj[i] = n, tj
            self.amps[i][:, self._slice(tj)] = block
        self._set_row(i)

    def _jump(self, i: int, u: np.ndarray, t: float):
        n, tj = int(self.n[i]), int(self.tj[i])
        block = self._block(i)
        pops = np.abs(block[0]) ** 2
        brs, rates = branch_rates(self.spec.noise, n, tj, pops)
        b = pick_branch(brs, rates, u[1])
        n2, tj2, new = jump_raw(n, tj, block, b)
        if self.jumps is not None:
            self.jumps[i].append((t, b.kind, b.j, b.m, tj / 2, tj2 / 2, n2))
        self._store(i, n2, tj2, new)

    def _cycle_scalar(self, i: int, u: np.ndarray):
        sess = self.sessions[i]
        n, tj = int(self.n[i]), int(self.tj[i])
        n2, tj2, block = self.spec.controller.cycle(sess, n, tj, self._block(i), u[2:])
        if (n2, tj2) != (n, tj) or block is not None:
            self._store(i, n2, tj2, block)
        self.dirty[i] = False
        self.active[i] = sess.active and not sess.failed

    def run(self, n_steps: int, every: int):
        spec = self.spec
        dt = spec.dt
        ctrl = spec.controller
        cadence = getattr(ctrl, "cadence", 1) if ctrl else 1
        S = n_steps // every + 1
        out_val = np.zeros((self.B, S))
        out_alive = np.zeros((self.B, S), dtype=bool)
        out_tj = np.zeros((self.B, S), dtype=np.int64)
        out_n = np.zeros((self.B, S), dtype=np.int64)
        out_tel = np.zeros((self.B, S), dtype=np.int64)
        out_fail = np.zeros((self.B, S), dtype=bool)

        def sample(s):
            out_val[:, s] = self._observe()
            out_alive[:, s] = self.alive
            out_tj[:, s] = self.tj
            out_n[:, s] = self.n
            if self.sessions is not None:
                out_tel[:, s] = [x.teleports for x in self.sessions]
                out_fail[:, s] = [x.failed for x in self.sessions]

        sample(0)
        U = None
        for step in range(1, n_steps + 1):
            k = (step - 1) % _DRAW_BLOCK
            if k == 0:
                m = min(_DRAW_BLOCK, n_steps - step + 1)
                U = np.stack([r.random((m, UNIFORMS_PER_STEP)) for r in self.rngs], axis=1)
            u = U[k]
            t = step * dt
            a0 = self.amps[:, 0, :]
            pops = a0.real**2 + a0.imag**2
            p_jump = 1.0 - np.sum(pops * self.Ef, axis=1)
            jump = self.alive & (u[:, 0] < p_jump)
            drift = self.alive & ~jump
            self.amps *= np.where(drift[:, None], self.Eh, 1.0)[:, None, :]
            self._renormalize()
            for i in np.nonzero(jump)[0]:
                self._jump(i, u[i], t)
            if self.any_signal:
                self.amps *= self.phase[None, :, :]
            if ctrl is not None:
                self.dirty |= jump
                if step % cadence == 0:
                    self._correct(u)
            if step % every == 0:
                sample(step // every)
        return out_val, out_alive, out_tj, out_n, out_tel, out_fail

    def _renormalize(self):
        a = self.amps
        nrm = np.sqrt(np.sum(a.real**2 + a.imag**2, axis=-1))
        nrm[nrm == 0] = 1.0
        a /= nrm[..., None]

    def _correct(self, u: np.ndarray):
        active = self.active & self.alive
        scalar = active & (self.dirty | ~self.has_fast)
        fast = active & ~scalar
        if fast.any():
            kids = self.key[fast]
            for kid in np.unique(kids):
                if fast.all() and kid == kids[0] and np.all(kids == kid):
                    rows = slice(None)
                    x = self.amps
                else:
                    rows = np.nonzero(fast & (self.key == kid))[0]
                    x = self.amps[rows]
                V, W, _ = self._keys[kid]
                y = (x @ V.T) @ V
                y /= np.sqrt(np.sum(y.real**2 + y.imag**2, axis=-1))[..., None]
                if np.any(W):
                    b = x[:, 0, :] @ W.T
                    flag = u[rows, 3] < np.sum(b.real**2 + b.imag**2, axis=-1)
                else:
                    flag = None
                if flag is None or not flag.any():
                    self.amps[rows] = y
                else:
                    idx = np.arange(self.B)[rows]
                    self.amps[idx[~flag]] = y[~flag]
                    scalar[idx[flag]] = True
        for i in np.nonzero(scalar)[0]:
            self._cycle_scalar(i, u[i])
        self.dirty[:] = False

    def _observe(self) -> np.ndarray:
        ok = self.alive
        if self.spec.observable == "Jz":
            a0 = self.amps[:, 0, :]
            ms = (np.arange(self.G) - self.N0) / 2.0
            return np.where(ok, (a0.real**2 + a0.imag**2) @ ms, 0.0)
        if self.sessions is not None:
            ok = ok & np.array([not s.failed for s in self.sessions])
        if self.spec.observable == "fidelity":
            ov = np.einsum("bg,bg->b", self.psi.conj(), self.amps[:, 0, :])
            return np.where(ok, np.abs(ov) ** 2, 0.0)
        if self.spec.observable == "infidelity":
            # 1 - |<a|b>|^2 = |a x b - b x a|^2 / 2 for unit vectors: no cancellation,
            # and exactly zero for identical lanes
            a, b = self.amps[:, 0, :], self.amps[:, 1, :]
            w = a[:, :, None] * b[:, None, :]
            w = w - w.transpose(0, 2, 1)
            val = 0.5 * np.sum(w.real**2 + w.imag**2, axis=(1, 2))
            return np.where(ok, np.clip(val, 0.0, 1.0), 0.0)
        raise ValueError(f"unknown observable {self.spec.observable!r}")


def _run_chunk(args):
    spec, seed, start, stop, n_steps, every = args
    batch = _Batch(spec, seed, start, stop)
    arrays = batch.run(n_steps, every)
    return arrays, batch.jumps


def run_ensemble(
    spec: EnsembleSpec,
    n_traj: int,
    seed: int,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
) -> EnsembleResult:
    """Simulate ``n_traj`` trajectories and return per-trajectory samples."""
    if n_traj < 1:
        raise ValueError("n_traj must be positive")
    n_steps, every, times = step_grid(spec.t_max, spec.dt, spec.sample_dt)
    w = rate_density(spec.noise, spec.initial.n_spins, spec.initial.two_j)
    if w.size and spec.dt * w.max() > DRIFT_WARN:
        import warnings

        warnings.warn(f"dt * max rate = {spec.dt * w.max():.3g} exceeds {DRIFT_WARN}", RuntimeWarning)
    jobs = [
        (spec, seed, s, min(s + chunk_size, n_traj), n_steps, every)
        for s in range(0, n_traj, chunk_size)
    ]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    cols = list(zip(*[p[0] for p in parts]))
    val, alive, tj, n, tel, fail = (np.concatenate(c, axis=0) for c in cols)
    jumps = None
    if spec.record_jumps:
        jumps = [j for p in parts for j in p[1]]
    return EnsembleResult(times, val, alive, tj, n, tel, fail, jumps)
