"""Experiment configurations and the memory experiment driver.

Configs are YAML mappings.  Every key is validated before anything runs and
unknown keys are rejected, so a typo never silently falls back to a default.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields
from fractions import Fraction
from pathlib import Path

import numpy as np
import yaml

from .codes import CodeFamily
from .dynamics.ensemble import EnsembleSpec, run_ensemble
from .dynamics.noise import NoiseModel
from .picore import FixedBasis, TrajectoryState, twice, valid_twice_j
from .recovery import MIN_RECOVERY_TWO_J, QecController

__all__ = [
    "ConfigError",
    "MemoryConfig",
    "SensingConfig",
    "load_config",
    "memory_curves",
    "memory_rows",
    "sensing_rows",
    "write_csv",
    "MEMORY_CURVES",
]

MEMORY_CURVES = ("bare_dicke", "code_bare", "code_qec", "code_qec_teleport")
RATE_KEYS = ("Gamma_m1", "Gamma_0", "Gamma_p1", "gamma_m1", "gamma_0", "gamma_p1", "gamma_d")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _num(d: dict, key: str, default=None, *, positive=False, nonneg=False, integer=False, prefix=""):
    if key not in d:
        if default is None:
            raise ConfigError(prefix + key, "missing required key")
        return default
    return _num_value(d[key], prefix + key, positive, nonneg, integer)


def _num_value(v, key, positive, nonneg, integer):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        try:
            v = float(Fraction(str(v)))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(key, f"expected a number, got {v!r}") from None
    if integer:
        if float(v) != int(v):
            raise ConfigError(key, f"expected an integer, got {v!r}")
        v = int(v)
    if positive and v <= 0:
        raise ConfigError(key, "must be positive")
    if nonneg and v < 0:
        raise ConfigError(key, "must be non-negative")
    return v


def _bool(d: dict, key: str, default: bool, prefix: str = "") -> bool:
    v = d.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(prefix + key, f"expected true/false, got {v!r}")
    return v


def _mapping(d: dict, key: str) -> dict:
    v = d.get(key, {})
    if v is None:
        return {}
    if not isinstance(v, dict):
        raise ConfigError(key, "expected a mapping")
    return v


def _reject_unknown(d: dict, allowed, prefix: str = ""):
    for k in d:
        if k not in allowed:
            raise ConfigError(prefix + str(k), "unknown key")


def _rates(d: dict) -> dict:
    r = _mapping(d, "rates")
    _reject_unknown(r, RATE_KEYS, "rates.")
    return {k: _num(r, k, 0.0, nonneg=True, prefix="rates.") for k in RATE_KEYS if k in r}


def _grid(d: dict):
    dt = _num(d, "dt", positive=True)
    t_max = _num(d, "t_max", positive=True)
    sample_dt = _num(d, "sample_dt", dt, positive=True)
    for key, val in (("t_max", t_max), ("sample_dt", sample_dt)):
        k = round(val / dt)
        if k < 1 or abs(k * dt - val) > 1e-9 * max(1.0, val):
            raise ConfigError(key, "must be a positive multiple of dt")
    return dt, t_max, sample_dt


def _cadence(q: dict, dt: float) -> int:
    dq = _num(q, "dt_qec", dt, positive=True, prefix="qec.")
    k = round(dq / dt)
    if k < 1 or abs(k * dt - dq) > 1e-9:
        raise ConfigError("qec.dt_qec", "must be a positive multiple of dt")
    return int(k)


@dataclass
class MemoryConfig:
    n_spins: int
    initial_j: float
    m1: float
    m2: float
    rates: dict
    dt: float
    t_max: float
    sample_dt: float
    n_traj: int
    seed: int
    qec_enabled: bool = True
    cadence: int = 1
    teleport: bool = True
    j_threshold: float = 5.5
    fresh_n: int | None = None
    curves: tuple = MEMORY_CURVES
    output: str = "memory.csv"

    KEYS = (
        "experiment", "n_spins", "initial_j", "code", "rates", "dt", "t_max", "sample_dt",
        "n_traj", "seed", "qec", "curves", "output",
    )

    @classmethod
    def from_dict(cls, d: dict) -> "MemoryConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a mapping")
        _reject_unknown(d, cls.KEYS)
        if d.get("experiment", "memory") != "memory":
            raise ConfigError("experiment", "expected 'memory'")
        n = _num(d, "n_spins", positive=True, integer=True)
        j = _num(d, "initial_j", n / 2, positive=True)
        if not valid_twice_j(n, round(2 * j)) or abs(2 * j - round(2 * j)) > 1e-12:
            raise ConfigError("initial_j", f"J={j} is not a block of {n} spins")
        code = _mapping(d, "code")
        _reject_unknown(code, ("m1", "m2"), "code.")
        m1 = _num(code, "m1", 5.0, positive=True, prefix="code.")
        m2 = _num(code, "m2", 2.0, positive=True, prefix="code.")
        try:
            fam = CodeFamily.from_values(m1, m2)
        except ValueError as exc:
            raise ConfigError("code", str(exc)) from None
        if fam.code_for(n, round(2 * j)) is None:
            raise ConfigError("code", f"no (M1={m1}, M2={m2}) code in the J={j} block of {n} spins")
        dt, t_max, sample_dt = _grid(d)
        q = _mapping(d, "qec")
        _reject_unknown(q, ("enabled", "dt_qec", "teleport", "j_threshold", "fresh_n"), "qec.")
        thr = _num(q, "j_threshold", 5.5, positive=True, prefix="qec.")
        if round(2 * thr) < MIN_RECOVERY_TWO_J:
            raise ConfigError("qec.j_threshold", "must be at least 9/2")
        fresh = _num(q, "fresh_n", n, positive=True, integer=True, prefix="qec.")
        if fresh != n and CodeFamily.from_values(m1, m2).code_for(fresh, fresh) is None:
            raise ConfigError("qec.fresh_n", "no code at J = fresh_n / 2")
        curves = d.get("curves", list(MEMORY_CURVES))
        if isinstance(curves, str):
            curves = [curves]
        if not isinstance(curves, list) or not curves:
            raise ConfigError("curves", "expected a non-empty list")
        for c in curves:
            if c not in MEMORY_CURVES:
                raise ConfigError("curves", f"unknown curve {c!r}")
        return cls(
            n_spins=n,
            initial_j=float(j),
            m1=float(m1),
            m2=float(m2),
            rates=_rates(d),
            dt=dt,
            t_max=t_max,
            sample_dt=sample_dt,
            n_traj=_num(d, "n_traj", positive=True, integer=True),
            seed=_num(d, "seed", 0, nonneg=True, integer=True),
            qec_enabled=_bool(q, "enabled", True, "qec."),
            cadence=_cadence(q, dt),
            teleport=_bool(q, "teleport", True, "qec."),
            j_threshold=float(thr),
            fresh_n=fresh,
            curves=tuple(curves),
            output=str(d.get("output", "memory.csv")),
        )

    def active_curves(self) -> tuple:
        skip = set()
        if not self.qec_enabled:
            skip |= {"code_qec", "code_qec_teleport"}
        if not self.teleport:
            skip.add("code_qec_teleport")
        return tuple(c for c in self.curves if c not in skip)

    def to_dict(self) -> dict:
        return {
            "experiment": "memory",
            "n_spins": self.n_spins,
            "initial_j": self.initial_j,
            "code": {"m1": self.m1, "m2": self.m2},
            "rates": dict(self.rates),
            "dt": self.dt,
            "t_max": self.t_max,
            "sample_dt": self.sample_dt,
            "n_traj": self.n_traj,
            "seed": self.seed,
            "qec": {
                "enabled": self.qec_enabled,
                "dt_qec": self.cadence * self.dt,
                "teleport": self.teleport,
                "j_threshold": self.j_threshold,
                "fresh_n": self.fresh_n,
            },
            "curves": list(self.curves),
            "output": self.output,
        }


@dataclass
class SensingConfig:
    n_spins: int
    rates: dict
    omega: float
    dt: float
    t_max: float
    sample_dt: float
    n_traj: int
    seed: int
    probes: tuple = ("ghz", "encoded")
    qec_enabled: bool = True
    cadence: int = 1
    reference_curves: bool = True
    output: str = "sensing.csv"

    KEYS = (
        "experiment", "n_spins", "rates", "omega", "probe", "dt", "t_max", "sample_dt",
        "n_traj", "seed", "qec", "reference_curves", "output",
    )

    @classmethod
    def from_dict(cls, d: dict) -> "SensingConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a mapping")
        _reject_unknown(d, cls.KEYS)
        if d.get("experiment", "sensing") != "sensing":
            raise ConfigError("experiment", "expected 'sensing'")
        n = _num(d, "n_spins", positive=True, integer=True)
        if n < 3:
            raise ConfigError("n_spins", "sensing probes need at least 3 spins")
        probes = d.get("probe", ["ghz", "encoded"])
        if isinstance(probes, str):
            probes = [probes]
        if not isinstance(probes, list) or not probes:
            raise ConfigError("probe", "expected 'ghz', 'encoded' or a list of them")
        for p in probes:
            if p not in ("ghz", "encoded"):
                raise ConfigError("probe", f"unknown probe {p!r}")
        dt, t_max, sample_dt = _grid(d)
        q = _mapping(d, "qec")
        _reject_unknown(q, ("enabled", "dt_qec"), "qec.")
        return cls(
            n_spins=n,
            rates=_rates(d),
            omega=_num(d, "omega", 0.0),
            dt=dt,
            t_max=t_max,
            sample_dt=sample_dt,
            n_traj=_num(d, "n_traj", positive=True, integer=True),
            seed=_num(d, "seed", 0, nonneg=True, integer=True),
            probes=tuple(probes),
            qec_enabled=_bool(q, "enabled", True, "qec."),
            cadence=_cadence(q, dt),
            reference_curves=_bool(d, "reference_curves", True),
            output=str(d.get("output", "sensing.csv")),
        )

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["probe"] = list(d.pop("probes"))
        d["qec"] = {"enabled": d.pop("qec_enabled"), "dt_qec": d.pop("cadence") * self.dt}
        d["experiment"] = "sensing"
        return d


def load_config(path) -> dict:
    """Read a YAML config into a plain mapping."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    return data


def bundled_config(name: str) -> dict:
    path = Path(__file__).parent / "configs" / f"{name}.yaml"
    if not path.exists():
        raise ConfigError("--config", f"no bundled config named {name!r}")
    return load_config(path)


# ---------------------------------------------------------------------------
# Memory experiment
# ---------------------------------------------------------------------------


def _memory_spec(cfg: MemoryConfig, curve: str) -> EnsembleSpec:
    n, tj = cfg.n_spins, twice(cfg.initial_j)
    fam = CodeFamily.from_values(cfg.m1, cfg.m2)
    noise = NoiseModel.from_dict(cfg.rates)
    if curve == "bare_dicke":
        kets = np.zeros((2, tj + 1))
        kets[0, 0] = kets[1, 1] = 1.0
        basis = FixedBasis(n, tj, kets)
        ctrl = None
    else:
        code = fam.code_for(n, tj)
        kets = code.vectors()
        if curve == "code_bare" or not cfg.qec_enabled:
            basis, ctrl = FixedBasis(n, tj, kets), None
        else:
            basis = fam
            ctrl = QecController(
                fam,
                teleport=curve == "code_qec_teleport",
                j_threshold_two=twice(cfg.j_threshold),
                fresh_n=cfg.fresh_n or n,
                cadence=cfg.cadence,
            )
    psi = (kets[0] + kets[1]) / np.sqrt(2)
    init = TrajectoryState(n, tj, psi.astype(complex))
    return EnsembleSpec(
        init, noise, cfg.t_max, cfg.dt, cfg.sample_dt, controller=ctrl, basis=basis, reference=(1.0, 1.0)
    )


def memory_curves(config, threads: int = 1, progress=None) -> dict:
    """Logical fidelity of ``|+>`` for each configured memory setting.

    Returns ``{curve_id: dict(time, mean, stderr, mean_J, mean_N, teleports)}``.
    All curves use the same seed, so they share random streams.
    """
    cfg = config if isinstance(config, MemoryConfig) else MemoryConfig.from_dict(config)
    out = {}
    for curve in cfg.active_curves():
        if progress:
            progress(curve)
        res = run_ensemble(_memory_spec(cfg, curve), cfg.n_traj, cfg.seed, threads=threads)
        out[curve] = res.curve()
    return out


def _fmt(x) -> str:
    return repr(float(x))


def memory_rows(curves: dict):
    yield ("time", "curve_id", "mean_fidelity", "stderr", "mean_J", "mean_N", "teleports_cumulative")
    for cid, c in curves.items():
        for k in range(len(c["time"])):
            yield (
                _fmt(c["time"][k]), cid, _fmt(c["mean"][k]), _fmt(c["stderr"][k]),
                _fmt(c["mean_J"][k]), _fmt(c["mean_N"][k]), _fmt(c["teleports"][k]),
            )


def sensing_rows(times, curves: dict):
    yield ("time", "curve_id", "mean_infidelity", "stderr")
    for cid, c in curves.items():
        for k, t in enumerate(times):
            yield (_fmt(t), cid, _fmt(c["mean"][k]), _fmt(c["stderr"][k]))


def write_csv(rows, path) -> bytes:
    """Write rows with fixed formatting and ``\\n`` line endings; returns the bytes."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    data = buf.getvalue().encode()
    if path is not None:
        Path(path).write_bytes(data)
    return data
