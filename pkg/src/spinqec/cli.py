"""Command line entry point: ``spinqec <subcommand> [options]``.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure,
3 a verification check failed.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy
import yaml

from .experiments import (
    ConfigError,
    MemoryConfig,
    SensingConfig,
    bundled_config,
    load_config,
    memory_curves,
    memory_rows,
    sensing_rows,
    write_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3
VERIFY_TOL = 1e-10


def _parse_value(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def _apply_set(cfg: dict, assignments):
    for item in assignments or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, val = item.split("=", 1)
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(key, "cannot override inside a non-mapping")
        node[parts[-1]] = _parse_value(val)


def _load(args) -> dict:
    src = args.config
    if src is None:
        raise ConfigError("--config", "a config file or bundled config name is required")
    cfg = load_config(src) if Path(src).exists() else bundled_config(src)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.n_traj is not None:
        cfg["n_traj"] = args.n_traj
    _apply_set(cfg, args.set)
    return cfg


def _provenance(args, resolved: dict, extra=None) -> dict:
    from importlib.metadata import PackageNotFoundError, version

    try:
        pkg_version = version("artifact")
    except PackageNotFoundError:  # pragma: no cover - running from a checkout
        pkg_version = "unknown"
    out = {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": resolved,
        "threads": args.threads,
        "package": "spinqec",
        "package_version": pkg_version,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    if extra:
        out.update(extra)
    return out


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_provenance(out: Path, stem: str, prov: dict, resolved: dict):
    (out / f"{stem}.provenance.json").write_text(json.dumps(prov, indent=2, default=str) + "\n")
    (out / f"{stem}.config.yaml").write_text(yaml.safe_dump(resolved, sort_keys=False))


def _progress(quiet: bool):
    if quiet:
        return None
    t0 = time.time()

    def report(name):
        print(f"[{time.time() - t0:7.1f}s] running {name}", file=sys.stderr, flush=True)

    return report


def cmd_memory(args) -> int:
    cfg = _load(args)
    if args.teleport is not None:
        cfg.setdefault("qec", {})["teleport"] = args.teleport
    if args.t_max is not None:
        cfg["t_max"] = args.t_max
    config = MemoryConfig.from_dict(cfg)
    resolved = config.to_dict()
    out = _outdir(args)
    stem = Path(config.output).stem
    t0 = time.time()
    curves = memory_curves(config, threads=args.threads, progress=_progress(args.quiet))
    write_csv(memory_rows(curves), out / f"{stem}.csv")
    _write_provenance(out, stem, _provenance(args, resolved, {"seconds": time.time() - t0}), resolved)
    for cid, c in curves.items():
        print(f"{cid:20s} final fidelity {c['mean'][-1]:.4f} +- {c['stderr'][-1]:.4f}")
    print(f"wrote {out / (stem + '.csv')}")
    return EXIT_OK


def cmd_sensing(args) -> int:
    from .sensing import sensing_curves

    cfg = _load(args)
    if args.omega is not None:
        cfg["omega"] = args.omega
    if args.t_max is not None:
        cfg["t_max"] = args.t_max
    config = SensingConfig.from_dict(cfg)
    resolved = config.to_dict()
    out = _outdir(args)
    stem = Path(config.output).stem
    t0 = time.time()
    times, curves = sensing_curves(config, threads=args.threads, progress=_progress(args.quiet))
    write_csv(sensing_rows(times, curves), out / f"{stem}.csv")
    _write_provenance(out, stem, _provenance(args, resolved, {"seconds": time.time() - t0}), resolved)
    for cid, c in curves.items():
        print(f"{cid:20s} final infidelity {c['mean'][-1]:.4f} +- {c['stderr'][-1]:.4f}")
    print(f"wrote {out / (stem + '.csv')}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .oracle import verification_report

    if args.n_max < 1:
        raise ConfigError("--n-max", "must be at least 1")
    out = _outdir(args)
    report = verification_report(args.n_max, out / "verification.json")
    ok = (
        report["max_map_error"] <= VERIFY_TOL
        and report["max_residual"] <= VERIFY_TOL
        and report["max_equivalence_deviation"] <= VERIFY_TOL
    )
    print(f"channel maps, N <= {args.n_max}: max error {report['max_map_error']:.2e}, "
          f"max residual {report['max_residual']:.2e}")
    for r in report["loss_dephasing"]:
        print(f"loss + re-append vs dephasing, N={r['n_spins']}: rate factor {r['rate_factor']:.12f}, "
              f"deviation {r['normalized_deviation']:.2e}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_VERIFY


def _half_range(lo: str, hi: str):
    a, b = Fraction(lo), Fraction(hi)
    if a * 2 != int(a * 2) or b * 2 != int(b * 2) or a <= 0 or b < a:
        raise ConfigError("--j", "J range must be positive (half-)integers with min <= max")
    return list(range(int(2 * a), int(2 * b) + 1))


def cmd_codes(args) -> int:
    from .codes import code_search, export_catalog, import_catalog

    twos = _half_range(args.j_min, args.j_max if args.j_max is not None else args.j_min)
    channels = [c.strip() for c in args.channels.split(",") if c.strip()]
    found = []
    for tj in twos:
        codes = code_search(tj / 2, channels=channels, budget=args.budget, n_spins=args.n_spins)
        print(f"J={Fraction(tj, 2)}: {len(codes)} code(s)")
        found.extend(codes)
    out = _outdir(args)
    path = out / "codes.json"
    export_catalog(found, path, channels=channels, n_spins=args.n_spins)
    if len(import_catalog(path)) != len(found):
        print("catalog did not round-trip", file=sys.stderr)
        return EXIT_VERIFY
    print(f"wrote {path} ({len(found)} codes)")
    return EXIT_OK


def cmd_coeffs(args) -> int:
    from .coefficients import build_table

    if args.n_max < 2:
        raise ConfigError("--n-max", "must be at least 2")
    table = build_table(args.n_max, verify=not args.no_verify)
    out = _outdir(args)
    path = out / f"coefficients_n{args.n_max}.json"
    table.to_json(path)
    print(f"wrote {path} ({len(table.entries)} entries)")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spinqec", description="QEC simulations for spin ensembles")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, experiment=False):
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--quiet", action="store_true")
        if experiment:
            sp.add_argument("--config", help="YAML file or bundled name (fig2c, fig2d, fig3)")
            sp.add_argument("--seed", type=int)
            sp.add_argument("--n-traj", type=int)
            sp.add_argument("--t-max", type=float)
            sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                            help="override a config entry, dotted keys for nesting")

    m = sub.add_parser("memory", help="logical memory fidelity curves")
    common(m, True)
    m.add_argument("--teleport", dest="teleport", action="store_true", default=None)
    m.add_argument("--no-teleport", dest="teleport", action="store_false")
    m.set_defaults(func=cmd_memory)

    s = sub.add_parser("sensing", help="Ramsey sensing infidelity curves")
    common(s, True)
    s.add_argument("--omega", type=float)
    s.set_defaults(func=cmd_sensing)

    v = sub.add_parser("verify", help="check channel maps against the dense reference")
    common(v)
    v.add_argument("--n-max", type=int, default=8)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("codes", help="search two-branch codes")
    common(c)
    c.add_argument("--j-min", default="9/2")
    c.add_argument("--j-max")
    c.add_argument("--channels", default="all", help="comma list: decay, dephasing, pumping, loss, all")
    c.add_argument("--budget", type=int, default=2)
    c.add_argument("--n-spins", type=int)
    c.set_defaults(func=cmd_codes)

    t = sub.add_parser("coeffs", help="dump the transition coefficient table")
    common(t)
    t.add_argument("--n-max", type=int, default=20)
    t.add_argument("--no-verify", action="store_true")
    t.set_defaults(func=cmd_coeffs)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    if getattr(args, "threads", 1) < 1:
        print("error: --threads: must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
