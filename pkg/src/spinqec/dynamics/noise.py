"""Noise model and its jump branches on a single (N, J) block."""

from __future__ import annotations

from dataclasses import dataclass, fields
from functools import lru_cache

import numpy as np

from ..coefficients import collective_vector, individual_vector, loss_vector
from ..picore import valid_twice_j

__all__ = ["NoiseModel", "Branch", "branches_for", "rate_density"]


@dataclass(frozen=True)
class NoiseModel:
    """Rates of the seven jump channels.

    ``Gamma_*`` are collective (jump operators ``J_-``, ``J_z``, ``J_+``),
    ``gamma_*`` are individual (``sigma_-``, Pauli ``sigma_z``, ``sigma_+`` on
    each spin) and ``gamma_d`` is the total spin-loss rate of the ensemble.
    """

    Gamma_m1: float = 0.0
    Gamma_0: float = 0.0
    Gamma_p1: float = 0.0
    gamma_m1: float = 0.0
    gamma_0: float = 0.0
    gamma_p1: float = 0.0
    gamma_d: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"rate {f.name} must be finite and non-negative, got {v!r}")
            object.__setattr__(self, f.name, float(v))

    @classmethod
    def from_dict(cls, rates: dict) -> "NoiseModel":
        names = {f.name for f in fields(cls)}
        unknown = set(rates) - names
        if unknown:
            raise ValueError(f"unknown rate keys: {sorted(unknown)}")
        return cls(**rates)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def collective(self, m: int) -> float:
        return (self.Gamma_m1, self.Gamma_0, self.Gamma_p1)[m + 1]

    def individual(self, m: int) -> float:
        return (self.gamma_m1, self.gamma_0, self.gamma_p1)[m + 1]

    def is_zero(self) -> bool:
        return all(getattr(self, f.name) == 0.0 for f in fields(self))


@dataclass(frozen=True, eq=False)
class Branch:
    """One jump branch: channel kind, doubled shifts of J and M, the rate and
    the amplitude of every source level ``M = -J..J``."""

    kind: str
    dj2: int
    dm2: int
    rate: float
    coeff: np.ndarray

    @property
    def j(self) -> float:
        return self.dj2 / 2

    @property
    def m(self) -> float:
        return self.dm2 / 2

    @property
    def dn(self) -> int:
        return -1 if self.kind == "loss" else 0


@lru_cache(maxsize=4096)
def branches_for(noise: NoiseModel, n: int, two_j: int) -> tuple[Branch, ...]:
    """All branches with a nonzero rate and at least one nonzero amplitude."""
    out = []
    if not valid_twice_j(n, two_j):
        return ()
    for m in (-1, 0, 1):
        rate = noise.collective(m)
        if rate > 0:
            c = collective_vector(two_j, m)
            if np.any(c != 0):
                out.append(Branch("collective", 0, 2 * m, rate, c))
    for j in (-1, 0, 1):
        for m in (-1, 0, 1):
            rate = noise.individual(m)
            if rate > 0:
                c = individual_vector(n, two_j, j, m)
                if np.any(c != 0):
                    out.append(Branch("individual", 2 * j, 2 * m, rate, c))
    if noise.gamma_d > 0:
        if n == 1:
            # losing the last spin leaves the empty ensemble
            out.append(Branch("loss", -1, 0, noise.gamma_d, np.ones(two_j + 1)))
        else:
            for dj in (-1, 1):
                for dm in (-1, 1):
                    c = loss_vector(n, two_j, dj, dm)
                    if np.any(c != 0):
                        out.append(Branch("loss", dj, dm, noise.gamma_d, c))
    return tuple(out)


@lru_cache(maxsize=4096)
def rate_density(noise: NoiseModel, n: int, two_j: int) -> np.ndarray:
    """Total jump rate of every level, ``W(M) = sum_b rate_b coeff_b(M)^2``."""
    w = np.zeros(two_j + 1)
    for b in branches_for(noise, n, two_j):
        w += b.rate * b.coeff**2
    w.setflags(write=False)
    return w
