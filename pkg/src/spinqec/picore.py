"""Permutationally invariant states of N spin-1/2 particles.

Half-integer quantum numbers are stored doubled (``two_j = 2J``, ``two_m = 2M``)
so that blocks can be indexed exactly.  Public functions accept ``J`` and ``M``
as ints, floats or :class:`fractions.Fraction` and convert with :func:`twice`.

A PI state is block diagonal in the total angular momentum ``J``; inside each
block the degeneracy index is averaged away, so only the ``(2J+1) x (2J+1)``
matrix ``rho[M, M']`` survives.  Nothing in this module exposes a
degeneracy-resolved quantity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Mapping, Protocol

import numpy as np

__all__ = [
    "DomainError",
    "CapacityError",
    "EmptyBlockError",
    "twice",
    "j_min_twice",
    "valid_twice_j",
    "degeneracy",
    "level_values",
    "TrajectoryState",
    "PiDensityState",
    "LogicalQudit",
    "LogicalBasis",
    "CenteredBasis",
    "FixedBasis",
    "centered_levels",
    "encode_logical",
    "decode_logical",
    "collective_expectation",
    "logical_fidelity",
]


class DomainError(ValueError):
    """Invalid (N, J, M) combination."""


class CapacityError(ValueError):
    """A J block has fewer levels than the object placed in it."""


class EmptyBlockError(ValueError):
    """The requested J block carries no probability."""


def twice(x) -> int:
    """Return ``2*x`` as an int; ``x`` must be an integer or half-integer."""
    if isinstance(x, (int, np.integer)):
        return 2 * int(x)
    if isinstance(x, Fraction):
        y = 2 * x
        if y.denominator != 1:
            raise DomainError(f"{x} is not a half-integer")
        return int(y)
    y = 2.0 * float(x)
    r = round(y)
    if abs(y - r) > 1e-9:
        raise DomainError(f"{x} is not a half-integer")
    return int(r)


def j_min_twice(n_spins: int) -> int:
    return n_spins % 2


def valid_twice_j(n_spins: int, two_j: int) -> bool:
    return (
        n_spins >= 1
        and j_min_twice(n_spins) <= two_j <= n_spins
        and (n_spins - two_j) % 2 == 0
    )


def _check_nj(n_spins: int, two_j: int) -> None:
    if not valid_twice_j(n_spins, two_j):
        raise DomainError(f"J={two_j}/2 is not allowed for N={n_spins} spins")


@lru_cache(maxsize=None)
def _degeneracy_row(n_spins: int) -> dict[int, int]:
    # Path counting: adding one spin to a J' irrep gives J' +- 1/2.
    row = {1: 1}
    for _ in range(2, n_spins + 1):
        nxt: dict[int, int] = {}
        for tj, d in row.items():
            nxt[tj + 1] = nxt.get(tj + 1, 0) + d
            if tj >= 1:
                nxt[tj - 1] = nxt.get(tj - 1, 0) + d
        row = nxt
    return row


def degeneracy(n_spins: int, total_j) -> int:
    """Multiplicity ``d_N^J`` of the spin-J irrep in N spin-1/2 particles.

    Computed by exact integer recurrence, so it is valid for large N.

    >>> degeneracy(4, 1)
    3
    """
    two_j = twice(total_j)
    if n_spins < 1:
        raise DomainError("n_spins must be positive")
    _check_nj(n_spins, two_j)
    return _degeneracy_row(n_spins)[two_j]


def _degeneracy_or_zero(n_spins: int, two_j: int) -> int:
    if n_spins < 1 or not valid_twice_j(n_spins, two_j):
        return 0
    return _degeneracy_row(n_spins)[two_j]


def level_values(two_j: int) -> np.ndarray:
    """Magnetisation values ``M = -J, ..., J`` as floats."""
    return np.arange(-two_j, two_j + 1, 2) / 2.0


def _level_index(two_j: int, two_m: int) -> int:
    if abs(two_m) > two_j or (two_j - two_m) % 2:
        raise DomainError(f"M={two_m}/2 is not a level of J={two_j}/2")
    return (two_m + two_j) // 2


# ---------------------------------------------------------------------------
# State types
# ---------------------------------------------------------------------------


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TrajectoryState:
    """Pure conditional state of one trajectory.

    ``amplitudes[k]`` multiplies the degeneracy-averaged level ``M = -J + k``.
    """

    n_spins: int
    two_j: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        _check_nj(self.n_spins, self.two_j)
        amps = _frozen(self.amplitudes)
        if amps.shape != (self.two_j + 1,):
            raise DomainError(
                f"expected {self.two_j + 1} amplitudes, got shape {amps.shape}"
            )
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"amplitudes not normalised (norm={norm!r})")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def normalized(cls, n_spins: int, two_j: int, amplitudes) -> "TrajectoryState":
        amps = np.asarray(amplitudes, dtype=complex)
        norm = np.linalg.norm(amps)
        if norm == 0.0:
            raise ValueError("zero vector cannot be normalised")
        return cls(n_spins, two_j, amps / norm)

    @classmethod
    def from_levels(cls, n_spins: int, total_j, levels: Mapping) -> "TrajectoryState":
        """Build a state from ``{M: amplitude}``; the result is normalised."""
        two_j = twice(total_j)
        _check_nj(n_spins, two_j)
        amps = np.zeros(two_j + 1, dtype=complex)
        for m, c in levels.items():
            amps[_level_index(two_j, twice(m))] += c
        return cls.normalized(n_spins, two_j, amps)

    @property
    def total_j(self) -> float:
        return self.two_j / 2

    @property
    def levels(self) -> np.ndarray:
        return level_values(self.two_j)

    def amplitude(self, m) -> complex:
        return complex(self.amplitudes[_level_index(self.two_j, twice(m))])

    def to_density(self) -> "PiDensityState":
        a = self.amplitudes
        return PiDensityState({(self.n_spins, self.two_j): np.outer(a, a.conj())})


@dataclass(frozen=True)
class PiDensityState:
    """Block-diagonal PI density matrix.

    ``blocks`` maps ``(n_spins, two_j)`` to the ``(2J+1) x (2J+1)`` matrix
    ``rho[M, M']``; a block's trace is its probability.  Several particle
    numbers can coexist once spins are lost; ``vacuum`` holds the weight of
    ensembles that lost every spin.
    """

    blocks: Mapping[tuple[int, int], np.ndarray]
    vacuum: float = 0.0
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        clean = {}
        for key in sorted(self.blocks):
            n, tj = key
            _check_nj(n, tj)
            b = _frozen(self.blocks[key])
            if b.shape != (tj + 1, tj + 1):
                raise DomainError(f"block {key} has shape {b.shape}")
            clean[(int(n), int(tj))] = b
        object.__setattr__(self, "blocks", clean)
        if self.check:
            self.validate()

    def validate(self, trace_tol: float = 1e-10, psd_tol: float = 1e-10) -> None:
        tr = self.trace()
        if abs(tr - 1.0) > trace_tol:
            raise ValueError(f"total trace {tr!r} differs from 1")
        for key, b in self.blocks.items():
            if not np.allclose(b, b.conj().T, atol=1e-10):
                raise ValueError(f"block {key} is not Hermitian")
            if b.size and np.linalg.eigvalsh((b + b.conj().T) / 2).min() < -psd_tol:
                raise ValueError(f"block {key} is not positive semi-definite")

    def trace(self) -> float:
        return float(sum(np.trace(b).real for b in self.blocks.values()) + self.vacuum)

    @property
    def n_spins(self) -> int:
        """Largest particle number present."""
        return max(n for n, _ in self.blocks)

    def block(self, total_j, n_spins: int | None = None) -> np.ndarray:
        n = self.n_spins if n_spins is None else n_spins
        key = (n, twice(total_j))
        if key not in self.blocks:
            return np.zeros((key[1] + 1, key[1] + 1), dtype=complex)
        return self.blocks[key]

    def weights(self) -> dict[tuple[int, int], float]:
        return {k: float(np.trace(b).real) for k, b in self.blocks.items()}


@dataclass(frozen=True)
class LogicalQudit:
    """Density matrix over the logical basis ``|0_L>, ..., |d-1_L>``."""

    rho: np.ndarray

    def __post_init__(self):
        r = _frozen(self.rho)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError("logical density matrix must be square")
        if abs(np.trace(r) - 1.0) > 1e-10:
            raise ValueError("logical density matrix must have unit trace")
        if not np.allclose(r, r.conj().T, atol=1e-10):
            raise ValueError("logical density matrix must be Hermitian")
        if np.linalg.eigvalsh((r + r.conj().T) / 2).min() < -1e-10:
            raise ValueError("logical density matrix must be positive semi-definite")
        object.__setattr__(self, "rho", r)

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    @classmethod
    def from_ket(cls, ket) -> "LogicalQudit":
        psi = np.asarray(ket, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def maximally_mixed(cls, d: int) -> "LogicalQudit":
        return cls(np.eye(d) / d)

    def ket(self) -> np.ndarray:
        """Dominant eigenvector; raises unless the qudit is pure."""
        w, v = np.linalg.eigh(self.rho)
        if w[-1] < 1 - 1e-9:
            raise ValueError("logical state is not pure")
        return v[:, -1]


# ---------------------------------------------------------------------------
# Logical mapping
# ---------------------------------------------------------------------------


def centered_levels(two_j: int, d: int) -> list[int]:
    """Doubled M values assigned to logical levels 0..d-1, centred on M = 0."""
    if d < 1:
        raise ValueError("dimension must be positive")
    if two_j + 1 < d:
        raise CapacityError(f"J={two_j}/2 has {two_j + 1} levels, need {d}")
    start = -two_j + 2 * ((two_j + 1 - d) // 2)
    return [start + 2 * k for k in range(d)]


def encode_logical(qudit: LogicalQudit, n_spins: int, total_j, levels=None) -> PiDensityState:
    """Place a logical density matrix in a single J block.

    Logical level ``k`` occupies ``M = levels[k]`` (default: centred
    assignment).  All other matrix elements are zero.
    """
    two_j = twice(total_j)
    _check_nj(n_spins, two_j)
    d = qudit.dim
    two_ms = centered_levels(two_j, d) if levels is None else [twice(m) for m in levels]
    if len(two_ms) != d:
        raise ValueError("one level per logical state is required")
    if two_j + 1 < d:
        raise CapacityError(f"J={two_j}/2 cannot hold a d={d} qudit")
    idx = [_level_index(two_j, tm) for tm in two_ms]
    if len(set(idx)) != d:
        raise ValueError("logical levels must be distinct")
    block = np.zeros((two_j + 1, two_j + 1), dtype=complex)
    block[np.ix_(idx, idx)] = qudit.rho
    return PiDensityState({(n_spins, two_j): block})


def decode_logical(
    state: PiDensityState,
    total_j,
    dim: int | None = None,
    n_spins: int | None = None,
    levels=None,
) -> tuple[LogicalQudit, float]:
    """Read the logical qudit stored in block J.

    Returns the renormalised logical density matrix and the block weight
    (its trace before renormalisation).
    """
    two_j = twice(total_j)
    if levels is None:
        if dim is None:
            raise ValueError("either dim or levels is required")
        two_ms = centered_levels(two_j, dim)
    else:
        two_ms = [twice(m) for m in levels]
    block = state.block(two_j / 2, n_spins)
    weight = float(np.trace(block).real)
    if weight <= 1e-14:
        raise EmptyBlockError(f"block J={two_j}/2 has zero weight")
    idx = [_level_index(two_j, tm) for tm in two_ms]
    sub = block[np.ix_(idx, idx)]
    inner = float(np.trace(sub).real)
    if inner <= 1e-14:
        raise EmptyBlockError("no weight on the logical levels")
    return LogicalQudit(sub / inner), weight


def collective_expectation(state, operator_id: str) -> float:
    """Expectation of ``Jz``, ``Jz2`` (Jz squared) or ``J2`` (total J squared)."""
    if isinstance(state, TrajectoryState):
        state = state.to_density()
    total = 0.0
    for (n, tj), b in state.blocks.items():
        ms = level_values(tj)
        if operator_id == "Jz":
            f = ms
        elif operator_id == "Jz2":
            f = ms**2
        elif operator_id == "J2":
            f = np.full_like(ms, (tj / 2) * (tj / 2 + 1))
        else:
            raise ValueError(f"unknown collective operator {operator_id!r}")
        total += float(np.real(np.diag(b)) @ f)
    return total


class LogicalBasis(Protocol):
    """Anything that can place logical kets inside a J block."""

    def logical_kets(self, n_spins: int, two_j: int) -> np.ndarray | None: ...


@dataclass(frozen=True)
class CenteredBasis:
    """Logical qudit on the centred levels of every block that can hold it."""

    dim: int = 2

    def logical_kets(self, n_spins: int, two_j: int) -> np.ndarray | None:
        if two_j + 1 < self.dim:
            return None
        kets = np.zeros((self.dim, two_j + 1))
        for k, tm in enumerate(centered_levels(two_j, self.dim)):
            kets[k, _level_index(two_j, tm)] = 1.0
        return kets


@dataclass(frozen=True)
class FixedBasis:
    """Logical kets defined in exactly one ``(n_spins, two_j)`` block."""

    n_spins: int
    two_j: int
    kets: np.ndarray

    def logical_kets(self, n_spins: int, two_j: int) -> np.ndarray | None:
        if (n_spins, two_j) != (self.n_spins, self.two_j):
            return None
        return np.asarray(self.kets)


def logical_fidelity(state, reference, basis: LogicalBasis) -> float:
    """Overlap of a PI state with a pure logical reference.

    The reference ket is embedded into every block through ``basis``; blocks
    where the basis does not exist contribute nothing.  The result is linear
    in the state, so trajectory averages of it equal it on averaged states.
    """
    if isinstance(reference, LogicalQudit):
        ref = reference.ket()
    else:
        ref = np.asarray(reference, dtype=complex)
        ref = ref / np.linalg.norm(ref)
    if isinstance(state, TrajectoryState):
        kets = basis.logical_kets(state.n_spins, state.two_j)
        if kets is None:
            return 0.0
        psi = ref @ kets
        return float(abs(np.vdot(psi, state.amplitudes)) ** 2)
    total = 0.0
    for (n, tj), b in state.blocks.items():
        kets = basis.logical_kets(n, tj)
        if kets is None:
            continue
        psi = ref @ kets
        total += float(np.real(np.vdot(psi, b @ psi)))
    return min(max(total, 0.0), 1.0)
