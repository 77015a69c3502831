"""Deterministic PI master equation on the direct sum of (N, J) blocks."""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix

from ..picore import PiDensityState
from .noise import NoiseModel, branches_for, rate_density

__all__ = ["IntegrationError", "evolve_master", "liouvillian"]

MAX_MASTER_SPINS = 40


class IntegrationError(RuntimeError):
    """Fixed-step integration lost trace beyond tolerance."""


def _reachable(noise: NoiseModel, start: list[tuple[int, int]]):
    seen = set(start)
    todo = list(start)
    while todo:
        n, tj = todo.pop()
        for b in branches_for(noise, n, tj):
            if b.kind == "loss" and n == 1:
                continue
            key = (n + b.dn, tj + b.dj2)
            if key not in seen:
                seen.add(key)
                todo.append(key)
    return sorted(seen, key=lambda k: (-k[0], -k[1]))


def liouvillian(noise: NoiseModel, sectors):
    """Sparse generator on the concatenated row-major blocks.

    The last component of the vector is the vacuum weight (every spin lost).
    Returns ``(L, offsets)``.
    """
    offsets = {}
    off = 0
    for n, tj in sectors:
        offsets[(n, tj)] = off
        off += (tj + 1) ** 2
    vac = off
    dim = off + 1
    rows, cols, vals = [], [], []
    for n, tj in sectors:
        w = tj + 1
        base = offsets[(n, tj)]
        a, b = np.meshgrid(np.arange(w), np.arange(w), indexing="ij")
        src = base + a * w + b
        W = rate_density(noise, n, tj)
        rows.append(src.ravel())
        cols.append(src.ravel())
        vals.append((-0.5 * (W[a] + W[b])).ravel())
        for br in branches_for(noise, n, tj):
            if br.kind == "loss" and n == 1:
                diag = np.arange(w)
                rows.append(np.full(w, vac))
                cols.append(base + diag * w + diag)
                vals.append(br.rate * br.coeff**2)
                continue
            tj2 = tj + br.dj2
            w2 = tj2 + 1
            base2 = offsets[(n + br.dn, tj2)]
            shift = (br.dj2 + br.dm2) // 2
            amp = br.rate * np.outer(br.coeff, br.coeff)
            a2, b2 = a + shift, b + shift
            ok = (amp != 0) & (a2 >= 0) & (a2 < w2) & (b2 >= 0) & (b2 < w2)
            rows.append((base2 + a2 * w2 + b2)[ok])
            cols.append(src[ok])
            vals.append(amp[ok])
    L = coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    ).tocsr()
    return L, offsets


def evolve_master(
    initial: PiDensityState,
    noise: NoiseModel,
    t_max: float,
    dt: float,
    sample_dt: float | None = None,
):
    """Integrate the block-wise master equation with fixed-step RK4.

    Returns the final :class:`PiDensityState`; with ``sample_dt`` it returns
    ``(times, states)`` sampled every ``sample_dt``.
    """
    if initial.n_spins > MAX_MASTER_SPINS:
        raise MemoryError(f"master equation limited to N <= {MAX_MASTER_SPINS}")
    sectors = _reachable(noise, list(initial.blocks))
    L, offsets = liouvillian(noise, sectors)
    dim = L.shape[0]
    y = np.zeros(dim, dtype=complex)
    for key, blk in initial.blocks.items():
        y[offsets[key] : offsets[key] + blk.size] = blk.ravel()
    y[-1] = initial.vacuum
    trace_idx = np.concatenate(
        [offsets[(n, tj)] + np.arange(tj + 1) * (tj + 2) for n, tj in sectors] + [[dim - 1]]
    )
    tr0 = y[trace_idx].sum().real

    def unpack(vec):
        blocks = {
            (n, tj): vec[offsets[(n, tj)] : offsets[(n, tj)] + (tj + 1) ** 2].reshape(tj + 1, tj + 1)
            for n, tj in sectors
        }
        blocks = {k: (b + b.conj().T) / 2 for k, b in blocks.items()}
        return PiDensityState(blocks, vacuum=float(vec[-1].real), check=False)

    n_steps = int(round(t_max / dt))
    every = None if sample_dt is None else int(round(sample_dt / dt))
    times, states = [0.0], [unpack(y)]
    for step in range(1, n_steps + 1):
        k1 = L @ y
        k2 = L @ (y + 0.5 * dt * k1)
        k3 = L @ (y + 0.5 * dt * k2)
        k4 = L @ (y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        drift = abs(y[trace_idx].sum().real - tr0)
        if not np.isfinite(drift) or drift > 1e-6:
            raise IntegrationError(f"trace drifted by {drift:.3e} at t={step * dt:.4g}; reduce dt")
        if every and step % every == 0:
            times.append(step * dt)
            states.append(unpack(y))
    if every:
        return np.array(times), states
    return unpack(y)
