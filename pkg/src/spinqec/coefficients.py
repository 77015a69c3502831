"""Jump amplitudes for degeneracy-averaged (barred) PI basis elements.

Three families are provided:

* collective ``X_m(J, M)``: action of ``J_-``, ``J_z``, ``J_+`` on ``|J, M>``;
* individual ``chi_{j,m}(N, J, M)``: the summed single-spin channel
  ``sum_n s_{m,n} rho s_{m,n}^dag`` with ``s_{-1} = sigma_-``, ``s_0 = sigma_z``
  (Pauli), ``s_{+1} = sigma_+``;
* loss ``xi_{j,m}(N, J, M)``: tracing out one spin.

Every channel maps a trace-normalised barred element ``bar(J, M, M')`` to

    sum_j a_j(M) a_j(M') bar(J + j, M + m, M' + m)

summed over the shifts ``m`` of the channel, where ``a`` is the relevant
amplitude.  Amplitudes are real.  They are non-negative except the
individual dephasing amplitude ``chi_{0,0}``, which carries the sign of
``M`` (it is proportional to ``X_0 = M``; the sign is what distinguishes
``bar(J, M, M')`` coherences with ``M M' < 0`` and cannot be absorbed).

The individual amplitudes factor as

    chi_{j,m}^2 = w_m * A_j(N, J) * CG(J M; 1 m | J+j, M+m)^2

with ``w_{+-1} = 1``, ``w_0 = 2``, ``A_{+1} = N/2 - J``, ``A_0 = N/2 + 1``,
``A_{-1} = N/2 + J + 1``.  These forms are checked against exact
full-space computations by :func:`build_table` and by the test-suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .picore import DomainError, _degeneracy_or_zero, twice, valid_twice_j

__all__ = [
    "CONVENTION",
    "TableIntegrityError",
    "OutOfRangeError",
    "cg_rank1",
    "collective_coeff",
    "individual_coeff",
    "loss_coeff",
    "pi_channel_map",
    "CoefficientTable",
    "build_table",
]

CONVENTION = "real-unnormalized-v1"
TABLE_FORMAT_VERSION = 1


class TableIntegrityError(RuntimeError):
    """Coefficient table disagrees with the exact reference computation."""


class OutOfRangeError(KeyError):
    """Lookup outside the range a table was built for."""


def _level_ok(two_j: int, two_m: int) -> bool:
    return two_j >= 0 and abs(two_m) <= two_j and (two_j - two_m) % 2 == 0


def cg_rank1(two_j1: int, two_m1: int, m2: int, two_jf: int) -> float:
    """Clebsch-Gordan ``<j1 m1; 1 m2 | jf, m1+m2>`` (Condon-Shortley phases).

    ``j1``, ``m1`` and ``jf`` are doubled; ``m2`` is -1, 0 or +1.
    """
    if m2 not in (-1, 0, 1):
        return 0.0
    two_mf = two_m1 + 2 * m2
    if not (_level_ok(two_j1, two_m1) and _level_ok(two_jf, two_mf)):
        return 0.0
    j1 = two_j1 / 2
    M = two_mf / 2
    dj = two_jf - two_j1
    if dj == 2:
        if m2 == 1:
            return math.sqrt((j1 + M) * (j1 + M + 1) / ((2 * j1 + 1) * (2 * j1 + 2)))
        if m2 == 0:
            return math.sqrt((j1 - M + 1) * (j1 + M + 1) / ((2 * j1 + 1) * (j1 + 1)))
        return math.sqrt((j1 - M) * (j1 - M + 1) / ((2 * j1 + 1) * (2 * j1 + 2)))
    if dj == 0:
        if two_j1 == 0:
            return 0.0
        if m2 == 1:
            return -math.sqrt((j1 + M) * (j1 - M + 1) / (2 * j1 * (j1 + 1)))
        if m2 == 0:
            return M / math.sqrt(j1 * (j1 + 1))
        return math.sqrt((j1 - M) * (j1 + M + 1) / (2 * j1 * (j1 + 1)))
    if dj == -2:
        if m2 == 1:
            return math.sqrt((j1 - M) * (j1 - M + 1) / (2 * j1 * (2 * j1 + 1)))
        if m2 == 0:
            return -math.sqrt((j1 - M) * (j1 + M) / (j1 * (2 * j1 + 1)))
        return math.sqrt((j1 + M + 1) * (j1 + M) / (2 * j1 * (2 * j1 + 1)))
    return 0.0


def _collective2(two_j: int, two_m: int, m: int) -> float:
    if not _level_ok(two_j, two_m) or not _level_ok(two_j, two_m + 2 * m):
        return 0.0
    J, M = two_j / 2, two_m / 2
    if m == -1:
        return math.sqrt((J + M) * (J - M + 1))
    if m == 1:
        return math.sqrt((J - M) * (J + M + 1))
    return M


def collective_coeff(total_j, m_val, m: int) -> float:
    """``X_m``: amplitude of ``J_m |J, M> = X_m |J, M+m>``.

    ``J_{-1} = J_-``, ``J_0 = J_z`` and ``J_{+1} = J_+``.  ``X_0 = M`` keeps its
    sign; out-of-range inputs give 0.
    """
    if m not in (-1, 0, 1):
        return 0.0
    return _collective2(twice(total_j), twice(m_val), m)


def _individual2(n: int, two_j: int, two_m: int, j: int, m: int) -> float:
    if j not in (-1, 0, 1) or m not in (-1, 0, 1):
        return 0.0
    if not valid_twice_j(n, two_j) or not _level_ok(two_j, two_m):
        return 0.0
    two_jf = two_j + 2 * j
    if not valid_twice_j(n, two_jf) or abs(two_m + 2 * m) > two_jf:
        return 0.0
    if j == 0 and two_j == 0:
        return 0.0
    J = two_j / 2
    if j == 0 and m == 0:
        # Signed: proportional to X_0 = M.
        return (two_m / 2) * math.sqrt((n + 2) / (J * (J + 1)))
    weight = 2.0 if m == 0 else 1.0
    a = {1: n / 2 - J, 0: n / 2 + 1, -1: n / 2 + J + 1}[j]
    cg = cg_rank1(two_j, two_m, m, two_jf)
    return math.sqrt(weight * a) * abs(cg)


def individual_coeff(n_spins: int, total_j, m_val, j: int, m: int) -> float:
    """``chi_{j,m}``: amplitude for ``bar(J, M) -> bar(J+j, M+m)`` under the
    summed single-spin operator ``s_m``.

    Squared amplitudes summed over ``j`` equal the mean channel weight
    ``<sum_n s_{m,n}^dag s_{m,n}>`` in the level: ``N/2 + M`` for ``m=-1``,
    ``N`` for ``m=0`` and ``N/2 - M`` for ``m=+1``.
    """
    return _individual2(n_spins, twice(total_j), twice(m_val), j, m)


def _loss2(n: int, two_j: int, two_m: int, two_dj: int, two_dm: int) -> float:
    if two_dj not in (-1, 1) or two_dm not in (-1, 1) or n < 2:
        return 0.0
    if not valid_twice_j(n, two_j) or not _level_ok(two_j, two_m):
        return 0.0
    two_jf = two_j + two_dj
    if not valid_twice_j(n - 1, two_jf) or abs(two_m + two_dm) > two_jf:
        return 0.0
    ratio = _degeneracy_or_zero(n - 1, two_jf) / _degeneracy_or_zero(n, two_j)
    J, M, m = two_j / 2, two_m / 2, two_dm / 2
    if two_dj == -1:
        w = (J - 2 * m * M) / (2 * J)
    else:
        w = (J + 1 + 2 * m * M) / (2 * J + 2)
    return math.sqrt(max(ratio * w, 0.0))


def loss_coeff(n_spins: int, total_j, m_val, j, m) -> float:
    """``xi_{j,m}``: amplitude for ``bar(J, M; N) -> bar(J+j, M+m; N-1)`` when
    one spin is traced out.  ``j`` and ``m`` are +-1/2; squares sum to 1."""
    if n_spins < 2:
        return 0.0
    return _loss2(n_spins, twice(total_j), twice(m_val), twice(j), twice(m))


# ---------------------------------------------------------------------------
# Vector forms used by the dynamics engine
# ---------------------------------------------------------------------------


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def collective_vector(two_j: int, m: int) -> np.ndarray:
    """``X_m`` for every level ``M = -J..J`` of block J."""
    return _readonly(
        np.array([_collective2(two_j, tm, m) for tm in range(-two_j, two_j + 1, 2)])
    )


@lru_cache(maxsize=None)
def individual_vector(n: int, two_j: int, j: int, m: int) -> np.ndarray:
    return _readonly(
        np.array([_individual2(n, two_j, tm, j, m) for tm in range(-two_j, two_j + 1, 2)])
    )


@lru_cache(maxsize=None)
def loss_vector(n: int, two_j: int, two_dj: int, two_dm: int) -> np.ndarray:
    return _readonly(
        np.array([_loss2(n, two_j, tm, two_dj, two_dm) for tm in range(-two_j, two_j + 1, 2)])
    )


CHANNELS = (
    ("collective", -1),
    ("collective", 0),
    ("collective", 1),
    ("individual", -1),
    ("individual", 0),
    ("individual", 1),
    ("loss", None),
)


def pi_channel_map(n: int, two_j: int, two_ma: int, two_mb: int, kind: str, m=None):
    """Image of ``bar(J, Ma, Mb)`` under one channel, as
    ``{(n_out, two_j_out, two_ma_out, two_mb_out): coefficient}``.

    ``kind`` is ``collective`` or ``individual`` (with ``m`` in -1, 0, 1) or
    ``loss`` (both magnetisation shifts included).
    """
    out: dict[tuple[int, int, int, int], float] = {}

    def add(key, val):
        if val != 0.0:
            out[key] = out.get(key, 0.0) + val

    if kind == "collective":
        a = _collective2(two_j, two_ma, m) * _collective2(two_j, two_mb, m)
        add((n, two_j, two_ma + 2 * m, two_mb + 2 * m), a)
    elif kind == "individual":
        for j in (-1, 0, 1):
            a = _individual2(n, two_j, two_ma, j, m) * _individual2(n, two_j, two_mb, j, m)
            add((n, two_j + 2 * j, two_ma + 2 * m, two_mb + 2 * m), a)
    elif kind == "loss":
        for dj in (-1, 1):
            for dm in (-1, 1):
                a = _loss2(n, two_j, two_ma, dj, dm) * _loss2(n, two_j, two_mb, dj, dm)
                add((n - 1, two_j + dj, two_ma + dm, two_mb + dm), a)
    else:
        raise ValueError(f"unknown channel kind {kind!r}")
    return out


# ---------------------------------------------------------------------------
# Immutable table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientTable:
    """Precomputed amplitudes for ``1 <= N <= n_max``.

    Keys are ``(kind, N, 2J, 2M, 2j, 2m)``; collective entries use ``N = 0``
    as they do not depend on the particle number.  Lookups outside the built
    range raise :class:`OutOfRangeError` rather than returning 0.
    """

    n_max: int
    entries: dict = field(repr=False)
    convention: str = CONVENTION

    def _check(self, n: int, two_j: int):
        if not (1 <= n <= self.n_max):
            raise OutOfRangeError(f"N={n} outside table range 1..{self.n_max}")
        if not valid_twice_j(n, two_j):
            raise OutOfRangeError(f"J={two_j}/2 invalid for N={n}")

    def _get(self, key):
        return self.entries.get(key, 0.0)

    def collective(self, total_j, m_val, m: int) -> float:
        two_j = twice(total_j)
        if two_j > self.n_max:
            raise OutOfRangeError(f"J={two_j}/2 outside table range")
        return self._get(("collective", 0, two_j, twice(m_val), 0, 2 * m))

    def individual(self, n, total_j, m_val, j: int, m: int) -> float:
        two_j = twice(total_j)
        self._check(n, two_j)
        return self._get(("individual", n, two_j, twice(m_val), 2 * j, 2 * m))

    def loss(self, n, total_j, m_val, j, m) -> float:
        two_j = twice(total_j)
        self._check(n, two_j)
        return self._get(("loss", n, two_j, twice(m_val), twice(j), twice(m)))

    def to_json(self, path) -> None:
        rows = [list(k) + [v] for k, v in sorted(self.entries.items())]
        payload = {
            "format_version": TABLE_FORMAT_VERSION,
            "convention": self.convention,
            "n_max": self.n_max,
            "entries": rows,
        }
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def from_json(cls, path, n_max: int | None = None) -> "CoefficientTable":
        """Load a cached table; stale caches (other convention, version or
        ``n_max``) are rejected with :class:`TableIntegrityError`."""
        payload = json.loads(Path(path).read_text())
        if payload.get("format_version") != TABLE_FORMAT_VERSION:
            raise TableIntegrityError("cache file has an unsupported format version")
        if payload.get("convention") != CONVENTION:
            raise TableIntegrityError("cache file was built with another convention")
        if n_max is not None and payload["n_max"] != n_max:
            raise TableIntegrityError(f"cache holds n_max={payload['n_max']}, wanted {n_max}")
        entries = {tuple(r[:6]): float(r[6]) for r in payload["entries"]}
        return cls(payload["n_max"], entries)


def _fill_entries(n_max: int) -> dict:
    entries = {}
    for two_j in range(0, n_max + 1):
        for tm in range(-two_j, two_j + 1, 2):
            for m in (-1, 0, 1):
                v = _collective2(two_j, tm, m)
                if v != 0.0:
                    entries[("collective", 0, two_j, tm, 0, 2 * m)] = v
    for n in range(1, n_max + 1):
        for two_j in range(n % 2, n + 1, 2):
            for tm in range(-two_j, two_j + 1, 2):
                for j in (-1, 0, 1):
                    for m in (-1, 0, 1):
                        v = _individual2(n, two_j, tm, j, m)
                        if v != 0.0:
                            entries[("individual", n, two_j, tm, 2 * j, 2 * m)] = v
                for dj in (-1, 1):
                    for dm in (-1, 1):
                        v = _loss2(n, two_j, tm, dj, dm)
                        if v != 0.0:
                            entries[("loss", n, two_j, tm, dj, dm)] = v
    return entries


def build_table(n_max: int, verify: bool = True, tol: float = 1e-10) -> CoefficientTable:
    """Build the amplitude table for ``N <= n_max``.

    Every channel map for ``N <= min(n_max, 10)`` is compared with the exact
    full-space computation; any discrepancy above ``tol`` raises
    :class:`TableIntegrityError`.
    """
    if n_max < 2:
        raise DomainError("n_max must be at least 2")
    table = CoefficientTable(n_max, _fill_entries(n_max))
    if verify:
        from .oracle import verify_channel_maps

        for n in range(1, min(n_max, 10) + 1):
            report = verify_channel_maps(n)
            worst = max(report["max_map_error"], report["max_residual"])
            if worst > tol:
                raise TableIntegrityError(
                    f"N={n}: amplitudes disagree with exact channel by {worst:.3e}"
                )
    return table
