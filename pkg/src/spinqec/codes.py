"""Logical codes inside one J block, their Kraus sets and Knill-Laflamme checks.

A :class:`QecCode` stores, for each logical state ``|k_Q>``, the occupied
magnetisation levels (doubled) and real amplitudes.  The two-level family

    |0_Q> = sqrt(M2/(M1+M2)) |-M1> + sqrt(M1/(M1+M2)) |M2>
    |1_Q> = sqrt(M2/(M1+M2)) |M1>  + sqrt(M1/(M1+M2)) |-M2>

has zero mean magnetisation in each branch and, for ``M2 >= 3/2`` and
``M1 - M2 >= 3``, keeps the images of single decay, pumping and dephasing
errors on disjoint level sets.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics.noise import NoiseModel, branches_for, rate_density
from .picore import CapacityError, DomainError, twice, valid_twice_j

__all__ = [
    "QecCode",
    "CodeFamily",
    "KrausOp",
    "KrausSet",
    "KlReport",
    "CHANNEL_NAMES",
    "noise_for_channels",
    "build_two_level_code",
    "build_kraus_set",
    "kl_check",
    "code_search",
    "export_catalog",
    "import_catalog",
]

MIN_CODE_TWO_J = 9


def _half(two_x: int) -> str:
    return str(Fraction(two_x, 2))


@dataclass(frozen=True)
class QecCode:
    """Logical basis in block ``J``.

    ``levels[k]`` are doubled M values of branch k and ``amplitudes[k]`` the
    matching real coefficients.  ``m1``/``m2`` (doubled) are set for the
    two-level family; ``warnings`` lists violated family constraints.
    """

    two_j: int
    levels: tuple
    amplitudes: tuple
    m1: int | None = None
    m2: int | None = None
    warnings: tuple = ()

    def __post_init__(self):
        levels = tuple(tuple(int(x) for x in lv) for lv in self.levels)
        amps = tuple(tuple(float(a) for a in am) for am in self.amplitudes)
        if len(levels) != len(amps) or len(levels) < 2:
            raise ValueError("need at least two logical branches")
        seen = set()
        for lv, am in zip(levels, amps):
            if len(lv) != len(am):
                raise ValueError("levels and amplitudes differ in length")
            for tm in lv:
                if abs(tm) > self.two_j or (self.two_j - tm) % 2:
                    raise DomainError(f"M={_half(tm)} not a level of J={_half(self.two_j)}")
                if tm in seen:
                    raise ValueError("logical branches must occupy disjoint levels")
                seen.add(tm)
            if abs(sum(a * a for a in am) - 1.0) > 1e-10:
                raise ValueError("each logical branch must be normalised")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def total_j(self) -> float:
        return self.two_j / 2

    @property
    def dim(self) -> int:
        return len(self.levels)

    def vectors(self) -> np.ndarray:
        """Branch vectors on the block, shape ``(d, 2J+1)``."""
        out = np.zeros((self.dim, self.two_j + 1))
        for k, (lv, am) in enumerate(zip(self.levels, self.amplitudes)):
            for tm, a in zip(lv, am):
                out[k, (tm + self.two_j) // 2] = a
        return out

    def support(self) -> list[int]:
        return sorted(tm for lv in self.levels for tm in lv)

    def logical_kets(self, n_spins: int, two_j: int):
        return self.vectors() if two_j == self.two_j else None

    def mean_jz(self) -> np.ndarray:
        return np.array(
            [sum(a * a * tm / 2 for tm, a in zip(lv, am)) for lv, am in zip(self.levels, self.amplitudes)]
        )

    def to_dict(self) -> dict:
        d = {
            "J": _half(self.two_j),
            "levels": [[_half(tm) for tm in lv] for lv in self.levels],
            "amplitudes": [list(am) for am in self.amplitudes],
        }
        if self.m1 is not None:
            d["M1"], d["M2"] = _half(self.m1), _half(self.m2)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QecCode":
        two_j = twice(Fraction(d["J"]))
        m1 = twice(Fraction(d["M1"])) if "M1" in d else None
        m2 = twice(Fraction(d["M2"])) if "M2" in d else None
        return cls(
            two_j,
            tuple(tuple(twice(Fraction(x)) for x in lv) for lv in d["levels"]),
            tuple(tuple(am) for am in d["amplitudes"]),
            m1,
            m2,
        )

    def family_params(self):
        """``(M1, M2)`` if the code has the two-level family shape (any label order)."""
        if self.dim != 2 or any(len(lv) != 2 for lv in self.levels):
            return None
        sets = [sorted(lv) for lv in self.levels]
        for a, b in (sets, sets[::-1]):
            # branch a = {-M1, M2}, branch b = {-M2, M1}
            m1, m2 = -a[0], a[1]
            if m1 > 0 and m2 > 0 and sorted(b) == sorted([-m2, m1]) and m1 != m2:
                return m1 / 2, m2 / 2
        return None


def build_two_level_code(total_j, m1, m2) -> QecCode:
    """Two-level code with the family amplitudes.

    Violations of ``M2 >= 3/2``, ``M1 - M2 >= 3`` or ``J >= 9/2`` are recorded
    in ``code.warnings`` (and warned about) rather than rejected, so that
    deliberately bad codes can be examined.
    """
    two_j, tm1, tm2 = twice(total_j), twice(m1), twice(m2)
    if tm1 > two_j:
        raise CapacityError(f"J={_half(two_j)} cannot hold level M1={_half(tm1)}")
    if tm2 <= 0 or tm1 <= 0:
        raise DomainError("M1 and M2 must be positive")
    if (two_j - tm1) % 2 or (two_j - tm2) % 2:
        raise DomainError("M1 and M2 must be levels of the J block")
    issues = []
    if tm2 < 3:
        issues.append("M2 < 3/2")
    if tm1 - tm2 < 6:
        issues.append("M1 - M2 < 3")
    if two_j < MIN_CODE_TWO_J:
        issues.append("J < 9/2")
    if issues:
        warnings.warn(f"code (J={_half(two_j)}, M1={_half(tm1)}, M2={_half(tm2)}) violates " + ", ".join(issues))
    a = float(np.sqrt(tm2 / (tm1 + tm2)))
    b = float(np.sqrt(tm1 / (tm1 + tm2)))
    return QecCode(two_j, ((-tm1, tm2), (tm1, -tm2)), ((a, b), (a, b)), tm1, tm2, tuple(issues))


@dataclass(frozen=True)
class CodeFamily:
    """The two-level family placed in every block that can hold it.

    Blocks whose J has the parity of ``M1`` use ``(M1, M2)``; the others use
    ``(M1 - 1/2, M2 - 1/2)`` when that still satisfies the constraints and
    ``(M1 + 1/2, M2 + 1/2)`` otherwise.  Blocks with ``J < 9/2`` or
    ``J < M1`` have no code.
    """

    m1: int
    m2: int

    @classmethod
    def from_values(cls, m1, m2) -> "CodeFamily":
        return cls(twice(m1), twice(m2))

    def params_for(self, two_j: int):
        if two_j < MIN_CODE_TWO_J:
            return None
        if (two_j - self.m1) % 2 == 0:
            p = (self.m1, self.m2)
        elif self.m2 - 1 >= 3:
            p = (self.m1 - 1, self.m2 - 1)
        else:
            p = (self.m1 + 1, self.m2 + 1)
        return p if p[0] <= two_j else None

    def code_for(self, n_spins: int, two_j: int) -> QecCode | None:
        if not valid_twice_j(n_spins, two_j):
            return None
        return _family_code(two_j, *self.params_for(two_j)) if self.params_for(two_j) else None

    def logical_kets(self, n_spins: int, two_j: int):
        code = self.code_for(n_spins, two_j)
        return None if code is None else code.vectors()


_FAMILY_CACHE: dict = {}


def _family_code(two_j, tm1, tm2) -> QecCode:
    key = (two_j, tm1, tm2)
    if key not in _FAMILY_CACHE:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _FAMILY_CACHE[key] = build_two_level_code(two_j / 2, tm1 / 2, tm2 / 2)
    return _FAMILY_CACHE[key]


# ---------------------------------------------------------------------------
# Kraus operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KrausOp:
    """Shift-diagonal operator ``|J+j, M+m> <J, M|`` with amplitude per source level.

    ``amplitudes`` already include ``sqrt(rate * dt)``; ``coeff`` does not.
    """

    kind: str
    dj2: int
    dm2: int
    rate: float
    coeff: np.ndarray
    amplitudes: np.ndarray

    @property
    def dn(self) -> int:
        return -1 if self.kind == "loss" else 0

    def apply(self, n: int, two_j: int, vec: np.ndarray, scaled: bool = False):
        """Image of a block vector; returns ``(n', two_j', vector)``."""
        amp = self.amplitudes if scaled else self.coeff
        new_tj = two_j + self.dj2
        out = np.zeros(new_tj + 1, dtype=np.result_type(vec, float))
        shift = (self.dj2 + self.dm2) // 2
        src = amp * vec
        for k in np.nonzero(src)[0]:
            out[k + shift] += src[k]
        return n + self.dn, new_tj, out


@dataclass(frozen=True)
class KrausSet:
    """Jump operators of one block for a time step ``dt`` plus the no-jump operator
    ``sqrt(1 - dt W)`` (diagonal), which makes the set exactly complete."""

    n_spins: int
    two_j: int
    dt: float
    ops: tuple
    no_jump: np.ndarray = field(repr=False)

    def completeness_error(self) -> float:
        total = self.no_jump**2
        for op in self.ops:
            total = total + op.amplitudes**2
        return float(np.max(np.abs(total - 1.0)))


def build_kraus_set(n_spins: int, total_j, noise: NoiseModel, dt: float, table=None) -> KrausSet:
    """One operator per branch with a nonzero rate, scaled by ``sqrt(rate dt)``.

    With a :class:`~spinqec.coefficients.CoefficientTable` given, lookups
    outside its range raise its out-of-range error.
    """
    two_j = twice(total_j)
    if not valid_twice_j(n_spins, two_j):
        raise DomainError(f"J={_half(two_j)} invalid for N={n_spins}")
    if table is not None:
        table.individual(n_spins, two_j / 2, -two_j / 2, 0, 0)
    ops = []
    for b in branches_for(noise, n_spins, two_j):
        ops.append(KrausOp(b.kind, b.dj2, b.dm2, b.rate, np.asarray(b.coeff), np.sqrt(b.rate * dt) * b.coeff))
    W = rate_density(noise, n_spins, two_j)
    if dt * W.max(initial=0.0) > 1:
        raise ValueError("dt too large for a valid no-jump operator")
    return KrausSet(n_spins, two_j, dt, tuple(ops), np.sqrt(1.0 - dt * W))


CHANNEL_NAMES = {"decay": -1, "dephasing": 0, "pumping": 1}


def noise_for_channels(channels: Sequence[str], kinds: Sequence[str] = ("individual", "collective")) -> NoiseModel:
    """Unit-rate noise model for named channels (``decay``, ``dephasing``,
    ``pumping``, ``loss`` or ``all``)."""
    chans = set(channels)
    if "all" in chans:
        chans = set(CHANNEL_NAMES) | {"loss"}
    unknown = chans - set(CHANNEL_NAMES) - {"loss"}
    if unknown:
        raise ValueError(f"unknown channels {sorted(unknown)}")
    rates = {}
    for name, m in CHANNEL_NAMES.items():
        if name in chans:
            suffix = {-1: "m1", 0: "0", 1: "p1"}[m]
            if "individual" in kinds:
                rates[f"gamma_{suffix}"] = 1.0
            if "collective" in kinds:
                rates[f"Gamma_{suffix}"] = 1.0
    if "loss" in chans:
        rates["gamma_d"] = 1.0
    return NoiseModel(**rates)


# ---------------------------------------------------------------------------
# Knill-Laflamme
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KlReport:
    """Error-pair matrix ``K`` (branch 0), labels and worst violation.

    ``max_violation`` is relative to ``max(1, max|K|)``.
    """

    labels: tuple
    K: np.ndarray = field(repr=False)
    max_violation: float
    max_offdiag: float
    max_diag_mismatch: float
    passed: bool
    tol: float


def _images(code: QecCode, n: int, ops) -> dict:
    """Error images grouped by destination block: {dest: (labels, array[op, k, level])}."""
    V = code.vectors()
    groups: dict = {}
    for label, op in ops:
        if op is None:
            dest = (n, code.two_j)
            img = V.copy()
        else:
            dest = None
            rows = []
            for v in V:
                n2, tj2, w = op.apply(n, code.two_j, v)
                dest = (n2, tj2)
                rows.append(w)
            img = np.array(rows)
        groups.setdefault(dest, []).append((label, img))
    return groups


def kl_check(code: QecCode, kraus_set: KrausSet, tol: float = 1e-10) -> KlReport:
    """Knill-Laflamme conditions for the identity plus every operator of the set.

    Rate prefactors are stripped: only the structural amplitudes enter.
    """
    if kraus_set.two_j != code.two_j:
        raise DomainError("code and Kraus set live in different J blocks")
    ops = [(("identity", 0, 0), None)] + [((op.kind, op.dj2, op.dm2), op) for op in kraus_set.ops]
    labels = tuple(lbl for lbl, _ in ops)
    index = {lbl: i for i, lbl in enumerate(labels)}
    K = np.zeros((len(ops), len(ops)))
    off = diag = 0.0
    for dest, items in _images(code, kraus_set.n_spins, ops).items():
        for (la, A), (lb, B) in itertools.product(items, repeat=2):
            G = A @ B.T  # G[k, k'] = <E_a v_k | E_b v_k'>
            K[index[la], index[lb]] = G[0, 0]
            d = code.dim
            mask = ~np.eye(d, dtype=bool)
            if d > 1:
                off = max(off, float(np.max(np.abs(G[mask]))))
                diag = max(diag, float(np.max(np.abs(np.diag(G) - G[0, 0]))))
    scale = max(1.0, float(np.max(np.abs(K))))
    viol = max(off, diag) / scale
    return KlReport(labels, K, viol, off / scale, diag / scale, viol <= tol, tol)


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


def _subsets(two_j: int, budget: int):
    levels = list(range(-two_j, two_j + 1, 2))
    out = []
    for size in range(1, budget + 1):
        out.extend(itertools.combinations(levels, size))
    return out


def code_search(
    total_j,
    channels: Sequence[str] = ("all",),
    budget: int = 2,
    tol: float = 1e-10,
    n_spins: int | None = None,
    kinds: Sequence[str] = ("individual", "collective"),
) -> list[QecCode]:
    """Enumerate qubit codes with at most ``budget`` levels per branch.

    For every pair of disjoint level sets the squared amplitudes are solved
    from the diagonal Knill-Laflamme equations (linear in them) by least
    squares; feasible solutions are then verified with :func:`kl_check`.
    Codes differing only by the label of the two branches are reported once.
    ``n_spins`` defaults to ``2J + 2`` so that every J-changing branch exists.
    """
    two_j = twice(total_j)
    if budget < 1 or budget > two_j + 1:
        raise ValueError("level budget exceeds the block size")
    if budget > 2:
        raise NotImplementedError("search supports at most two levels per branch")
    n = two_j + 2 if n_spins is None else n_spins
    if not valid_twice_j(n, two_j):
        raise DomainError(f"J={_half(two_j)} invalid for N={n}")
    noise = noise_for_channels(channels, kinds)
    kset = build_kraus_set(n, two_j / 2, noise, dt=1e-6)
    w = two_j + 1

    # Diagonal equations: pairs of operators with the same destination and shift.
    ops = [("identity", 0, 0, np.ones(w))] + [
        (op.kind, op.dj2, op.dm2, np.asarray(op.coeff)) for op in kset.ops
    ]
    rows = []
    for (ka, ja, ma, ca), (kb, jb, mb, cb) in itertools.combinations_with_replacement(ops, 2):
        same_dest = (ja == jb) and ((ka == "loss") == (kb == "loss"))
        if same_dest and ma == mb:
            f = ca * cb
            s = np.max(np.abs(f))
            if s > 0:
                rows.append(f / s)
    F = np.array(rows)  # (equations, levels)

    subsets = _subsets(two_j, budget)
    pairs = [
        (a, b)
        for i, a in enumerate(subsets)
        for b in subsets[i + 1 :]
        if not set(a) & set(b)
    ]
    if not pairs:
        return []

    def idx(lv, pos):
        return (lv[min(pos, len(lv) - 1)] + two_j) // 2

    a0 = np.array([idx(a, 0) for a, _ in pairs])
    a1 = np.array([idx(a, 1) for a, _ in pairs])
    b0 = np.array([idx(b, 0) for _, b in pairs])
    b1 = np.array([idx(b, 1) for _, b in pairs])
    # x F[a0] + (1-x) F[a1] = y F[b0] + (1-y) F[b1]
    A = np.stack([F[:, a0] - F[:, a1], -(F[:, b0] - F[:, b1])], axis=-1)  # (e, C, 2)
    A = np.moveaxis(A, 0, 1)  # (C, e, 2)
    rhs = (F[:, b1] - F[:, a1]).T  # (C, e)
    sol = np.einsum("cij,cj->ci", np.linalg.pinv(A), rhs)
    resid = np.max(np.abs(np.einsum("cej,cj->ce", A, sol) - rhs), axis=1)
    x, y = sol[:, 0], sol[:, 1]
    ok = (resid < 1e-8) & (x > -1e-9) & (x < 1 + 1e-9) & (y > -1e-9) & (y < 1 + 1e-9)

    found: dict = {}
    for c in np.nonzero(ok)[0]:
        a, b = pairs[c]
        branches = []
        for lv, p in ((a, x[c]), (b, y[c])):
            p = min(max(p, 0.0), 1.0)
            amps = [np.sqrt(p), np.sqrt(1 - p)] if len(lv) == 2 else [1.0]
            keep = [(tm, am) for tm, am in zip(lv, amps) if am > 1e-12]
            branches.append(keep)
        key = tuple(sorted(tuple(tm for tm, _ in br) for br in branches))
        if key in found:
            continue
        code = QecCode(
            two_j,
            tuple(tuple(tm for tm, _ in br) for br in branches),
            tuple(tuple(am for _, am in br) for br in branches),
        )
        if kl_check(code, kset, tol).passed:
            params = code.family_params()
            if params is not None:
                code = QecCode(code.two_j, code.levels, code.amplitudes, twice(params[0]), twice(params[1]))
            found[key] = code
    return list(found.values())


def export_catalog(codes: Sequence[QecCode], path, channels=(), n_spins=None, tol=1e-10) -> None:
    """Write codes with the channels they were checked against and KL residuals."""
    entries = []
    noise = noise_for_channels(channels) if channels else None
    for code in codes:
        d = code.to_dict()
        if noise is not None:
            n = code.two_j + 2 if n_spins is None else n_spins
            rep = kl_check(code, build_kraus_set(n, code.total_j, noise, 1e-6), tol)
            d["kl_max_violation"] = rep.max_violation
            d["n_spins"] = n
        entries.append(d)
    Path(path).write_text(json.dumps({"channels": list(channels), "codes": entries}, indent=2))


def import_catalog(path) -> list[QecCode]:
    payload = json.loads(Path(path).read_text())
    return [QecCode.from_dict(d) for d in payload["codes"]]
