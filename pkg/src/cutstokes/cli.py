"""Configuration parsing and the sweep front-end.

Configs are flat key=value text (hash comments allowed); command-line flags
override file values.  A config drives one method variant; its `fe` key may
hold several semicolon-separated triples, producing one CSV per triple.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import scipy.io

from .assembly import MethodConfig, SolverError
from .study import ErrorReport, ExactSolution, estimate_infsup, run_convergence_study, solve_on_mesh

__all__ = ["RunConfig", "ConfigError", "parse_config", "run", "main"]

log = logging.getLogger("cutstokes")

_KEYS = {
    "variant", "fe", "n", "gamma0", "theta", "gamma", "theta_min", "radius",
    "center", "subsegments", "out", "emit_matrix", "probe_infsup", "threads",
    "seed", "quad_volume", "quad_interface", "quad_error", "viscous_factor",
}

# Experimental defaults: unit square, disk R=0.21 at (0.5,0.5), theta_min=0.01,
# gamma0 = theta = gamma = 0.05, n in {10,20,40,80}, k=8.
_DEFAULTS = {
    "variant": "BarbosaHughes",
    "fe": "2,1,1",
    "n": "10,20,40,80",
    "gamma0": "0.05",
    "theta": "0.05",
    "gamma": "0.05",
    "theta_min": "0.01",
    "radius": "0.21",
    "center": "0.5,0.5",
    "subsegments": "8",
    "out": "results.csv",
    "emit_matrix": "false",
    "probe_infsup": "false",
    "threads": "1",
    "seed": "0",
    "quad_volume": "4",
    "quad_interface": "5",
    "quad_error": "6",
    "viscous_factor": "2",
}

# Paper bad-element counts at N=40/80/160; informative only, the counts depend
# on the mesh diagonal convention which the reference experiments do not state.
_PAPER_BAD_COUNTS = {40: 8, 80: 8, 160: 56}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    method: MethodConfig
    fe_triples: tuple[tuple[int, int, int], ...]
    center: tuple[float, float] = (0.5, 0.5)
    radius: float = 0.21
    n_list: tuple[int, ...] = (10, 20, 40, 80)
    subsegments: int = 8
    out: str = "results.csv"
    emit_matrix: bool = False
    probe_infsup: bool = False
    threads: int = 1
    seed: int = 0  # reserved for randomized probe sampling
    quad_volume: int = 4
    quad_interface: int = 5
    quad_error: int = 6


def _parse_bool(key: str, val: str) -> bool:
    low = val.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"config key '{key}': expected a boolean, got '{val}'")


def _parse_triples(val: str) -> tuple[tuple[int, int, int], ...]:
    triples = []
    for part in val.split(";"):
        comps = [c for c in part.strip().split(",") if c]
        if len(comps) != 3:
            raise ConfigError(f"config key 'fe': expected 'ku,kp,kl', got '{part}'")
        triples.append(tuple(int(c) for c in comps))
    return tuple(triples)


def parse_config(path: str | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Merge defaults <- config file <- flag overrides into a validated RunConfig."""
    values = dict(_DEFAULTS)
    if path is not None:
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got '{raw}'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in _KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
            values[key] = val
    for key, val in (overrides or {}).items():
        if key not in _KEYS:
            raise ConfigError(f"unknown config key '{key}'")
        if val is not None:
            values[key] = str(val)

    try:
        fe_triples = _parse_triples(values["fe"])
        center_parts = values["center"].split(",")
        if len(center_parts) != 2:
            raise ConfigError(f"config key 'center': expected 'x,y', got '{values['center']}'")
        center = (float(center_parts[0]), float(center_parts[1]))
        n_list = tuple(int(s) for s in values["n"].replace(";", ",").split(",") if s)
        method = MethodConfig(
            variant=values["variant"],
            fe_triple=fe_triples[0],
            gamma0=float(values["gamma0"]),
            theta=float(values["theta"]),
            gamma=float(values["gamma"]),
            theta_min=float(values["theta_min"]),
            viscous_factor=int(values["viscous_factor"]),
        )
        for triple in fe_triples[1:]:
            replace(method, fe_triple=triple)  # validates admissibility
        config = RunConfig(
            method=method,
            fe_triples=fe_triples,
            center=center,
            radius=float(values["radius"]),
            n_list=n_list,
            subsegments=int(values["subsegments"]),
            out=values["out"],
            emit_matrix=_parse_bool("emit_matrix", values["emit_matrix"]),
            probe_infsup=_parse_bool("probe_infsup", values["probe_infsup"]),
            threads=int(values["threads"]),
            seed=int(values["seed"]),
            quad_volume=int(values["quad_volume"]),
            quad_interface=int(values["quad_interface"]),
            quad_error=int(values["quad_error"]),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if not config.n_list:
        raise ConfigError("config key 'n': at least one mesh size required")
    if config.probe_infsup and max(config.n_list) > 16:
        raise ConfigError("probe_infsup requires all n <= 16 (dense eigen-solve budget)")
    return config


def _out_path(config: RunConfig, triple) -> Path:
    path = Path(config.out)
    if len(config.fe_triples) == 1:
        return path
    tag = "p" + "p".join(str(d) for d in triple)
    return path.with_name(f"{path.stem}_{tag}{path.suffix or '.csv'}")


def _print_report(method: MethodConfig, report: ErrorReport, stream) -> None:
    stream.write(
        f"variant={method.variant} fe={method.fe_triple} gamma0={method.gamma0} "
        f"theta={method.theta} gamma={method.gamma} theta_min={method.theta_min}\n"
    )
    cols = "  {:>5} {:>12} {:>12} {:>12} {:>12} {:>12}  {}\n"
    stream.write(cols.format("n", "h", "l2_u", "h1_u", "l2_p", "lam_int", "bad"))
    for r in report.rows:
        if r.failure is not None:
            stream.write(f"  {r.n:>5} solve failed: {r.failure}\n")
            continue
        stream.write(
            cols.format(
                r.n, f"{r.h:.4e}", f"{r.l2_u:.4e}", f"{r.h1_u:.4e}",
                f"{r.l2_p:.4e}", f"{r.lam_int:.4e}", r.bad_elements,
            )
        )
    if report.slopes:
        s = report.slopes
        stream.write(
            f"  slopes: l2_u={s['l2_u']:.3f} h1_u={s['h1_u']:.3f} "
            f"l2_p={s['l2_p']:.3f} lam_int={s['lam_int']:.3f}\n"
        )
    bad = {r.n: r.bad_elements for r in report.rows if r.failure is None}
    ref = ", ".join(f"N={n}: {c}" for n, c in _PAPER_BAD_COUNTS.items())
    stream.write(
        f"  bad elements per mesh: {bad}; reference counts ({ref}) are "
        "mesh-diagonal-convention dependent, informational only\n"
    )


def run(config: RunConfig, stream=None) -> int:
    """Run one sweep per fe triple; returns 0 on success, 1 with first failure."""
    stream = stream or sys.stdout
    exact = ExactSolution(center=config.center, radius=config.radius)
    first_failure: str | None = None

    for triple in config.fe_triples:
        method = replace(config.method, fe_triple=triple)
        report = run_convergence_study(
            method,
            config.n_list,
            exact=exact,
            k=config.subsegments,
            volume_degree=config.quad_volume,
            interface_degree=config.quad_interface,
            error_degree=config.quad_error,
            probe_infsup=config.probe_infsup,
            threads=config.threads,
        )
        out = _out_path(config, triple)
        with open(out, "w") as fh:
            report.write_csv(fh)
        _print_report(method, report, stream)
        stream.write(f"  csv: {out}\n")

        if config.emit_matrix:
            for n in config.n_list:
                try:
                    system, _, _, _, _ = solve_on_mesh(
                        method, exact, n, k=config.subsegments,
                        volume_degree=config.quad_volume,
                        interface_degree=config.quad_interface,
                    )
                except SolverError as exc:
                    log.warning("matrix export skipped for n=%d: %s", n, exc)
                    continue
                mtx = out.with_name(f"{out.stem}_n{n}.mtx")
                scipy.io.mmwrite(str(mtx), system.matrix.tocoo())
                stream.write(f"  matrix: {mtx}\n")

        for r in report.rows:
            if r.failure is not None and first_failure is None:
                first_failure = f"n={r.n} ({method.variant} {triple}): {r.failure}"

    if first_failure is not None:
        stream.write(f"FAILED: {first_failure}\n")
        return 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cutstokes",
        description="Unfitted Stokes convergence sweeps on a cut background mesh.",
    )
    parser.add_argument("--config", metavar="PATH", help="flat key=value config file")
    parser.add_argument("--variant", help="method variant name")
    parser.add_argument("--fe", metavar="a,b,c", help="FE degrees velocity,pressure,multiplier")
    parser.add_argument("--n", metavar="LIST", help="comma-separated mesh subdivisions")
    parser.add_argument("--gamma0", type=float, help="interface stabilization parameter")
    parser.add_argument("--theta", type=float, help="pressure stabilization parameter")
    parser.add_argument("--gamma", type=float, help="multiplier stabilization parameter")
    parser.add_argument("--theta-min", dest="theta_min", type=float, help="good-element threshold")
    parser.add_argument("--radius", type=float, help="disk radius")
    parser.add_argument("--center", metavar="X,Y", help="disk center")
    parser.add_argument("--subsegments", type=int, metavar="K", help="interface chords per cut cell")
    parser.add_argument("--out", metavar="PATH", help="CSV output path")
    parser.add_argument("--emit-matrix", action="store_true", default=None,
                        help="write the assembled system in Matrix Market format per mesh")
    parser.add_argument("--probe-infsup", action="store_true", default=None,
                        help="add an inf-sup estimate column (requires n <= 16)")
    parser.add_argument("--threads", type=int, metavar="T", help="concurrent meshes per sweep")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    overrides = {
        key: getattr(args, key)
        for key in ("variant", "fe", "n", "gamma0", "theta", "gamma", "theta_min",
                    "radius", "center", "subsegments", "out", "threads")
        if getattr(args, key) is not None
    }
    if args.emit_matrix:
        overrides["emit_matrix"] = "true"
    if args.probe_infsup:
        overrides["probe_infsup"] = "true"

    try:
        config = parse_config(args.config, overrides)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return run(config)
    except Exception as exc:  # surface geometry/solver failures, never a traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
