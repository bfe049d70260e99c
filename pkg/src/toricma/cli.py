"""Command-line front end: ``toricma {analyze,angles,check-potential,solve,fixtures}``.

A polytope argument is either a fixture name (see ``toricma fixtures --list``)
or a path to a JSON polytope document.  Exit codes: 0 success, 2 partial
continuity path, 64 usage error, 65 validation failure.  Set
``TORICMA_VERBOSITY`` to ``debug``, ``info`` or ``warning`` for solver logs.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import fixtures as fx
from .divisors import conic_angle_report
from .errors import KEExists, ToricError
from .polytope import LatticePolytope, compute_R, format_vector, load_polytope, to_document
from .potential import check_potential, reference_potential
from .report import invariant_rows, write_grid, write_invariants_csv, write_path_csv

EXIT_OK = 0
EXIT_PARTIAL = 2
EXIT_USAGE = 64
EXIT_INVALID = 65
VERBOSITY_ENV = "TORICMA_VERBOSITY"


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    command: str
    input: str | None = None
    t_max: float | None = None
    grid: int = 129
    halfwidth: float | None = None
    domain: str = "auto"
    tol: float = 1e-9
    out: Path | None = None
    seed: int = 0
    names: list = field(default_factory=list)
    list_only: bool = False

    def validate(self) -> None:
        if self.grid < 33 or self.grid % 2 == 0:
            raise UsageError(f"--grid must be odd and >= 33, got {self.grid}")
        if not 0 < self.tol <= 1e-2:
            raise UsageError(f"--tol must lie in (0, 1e-2], got {self.tol}")
        if self.halfwidth is not None and not self.halfwidth > 0:
            raise UsageError("--halfwidth must be positive")
        if self.t_max is not None and self.t_max <= 0:
            raise UsageError("--t-max must be positive")


def resolve_polytope(arg: str) -> LatticePolytope:
    if arg in fx.fixture_names():
        return fx.get_fixture(arg).polytope
    path = Path(arg)
    if not path.exists():
        raise ValidationError(f"{arg}: neither a fixture name nor an existing file")
    try:
        return load_polytope(path)
    except (ToricError, ValueError, KeyError) as exc:
        raise ValidationError(f"{arg}: {exc}") from exc


def _out_dir(cfg: RunConfig) -> Path | None:
    if cfg.out is None:
        return None
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg.out


def cmd_analyze(cfg: RunConfig) -> int:
    P = resolve_polytope(cfg.input)
    inv = compute_R(P)
    print(f"polytope: {P.name or cfg.input}  dim {P.dim}  {len(P.vertices)} vertices  {len(P.facets)} facets")
    for name, exact, dec in invariant_rows(inv):
        print(f"{name:14s} {exact}" + (f"  ~ {dec}" if dec else ""))
    if inv.ke_exists:
        print("KE exists (barycenter at the origin)")
    out = _out_dir(cfg)
    if out:
        write_invariants_csv(inv, out / "invariants.csv")
    return EXIT_OK


def cmd_angles(cfg: RunConfig) -> int:
    P = resolve_polytope(cfg.input)
    try:
        rep = conic_angle_report(P)
    except KEExists:
        print("KE exists: R = 1, no degenerating face")
        return EXIT_OK
    print(f"R = {rep.R}  minimal face vertices {' '.join(map(str, rep.face.face_vertices))}")
    print("facet            a   angle/2pi   angle")
    for c in rep.components:
        print(f"{format_vector(c.facet):16s} {c.multiplicity:<3d} {str(c.angle_fraction):10s}  {c.angle:.10f}")
    for w in rep.warnings:
        print(f"warning: {w}")
    return EXIT_OK


def cmd_check_potential(cfg: RunConfig) -> int:
    P = resolve_polytope(cfg.input)
    results = check_potential(P, seed=cfg.seed)
    ok = True
    for name, (passed, worst) in results.items():
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:34s} {worst:.3e}")
    return EXIT_OK if ok else EXIT_INVALID


def schedule_for(R: float, t_max: float | None) -> list[float]:
    from .solver import default_schedule

    ts = default_schedule(R)
    if t_max is None:
        return ts
    if t_max >= R:
        raise ValidationError(f"--t-max {t_max} must be below R = {R:.6g}")
    ts = [t for t in ts if t < t_max]
    return ts + [t_max]


def cmd_solve(cfg: RunConfig) -> int:
    from .solver import continuity_path

    P = resolve_polytope(cfg.input)
    if P.dim > 2:
        raise ValidationError("the solver supports dimension 1 and 2 only")
    inv = compute_R(P)
    ts = schedule_for(float(inv.R), cfg.t_max)
    if cfg.domain == "hex" and P.dim != 2:
        raise ValidationError("--domain hex needs a 2-dimensional polytope")
    record = continuity_path(
        P,
        ts,
        M=cfg.grid,
        halfwidth=cfg.halfwidth,
        ref=reference_potential(P),
        tol=cfg.tol,
        raise_on_failure=False,
        domain=cfg.domain,
    )
    print("t         m_t          key_residual  kappa")
    for s, d in zip(record.states, record.diagnostics):
        print(f"{s.t:<9.5f} {s.m_t:<12.8f} {s.key_identity_residual:<13.3e} {d['kappa']:.4f}")
    out = _out_dir(cfg)
    if out:
        write_path_csv(record, out / "path.csv")
        write_invariants_csv(inv, out / "invariants.csv")
        if record.states:
            write_grid(record.states[-1], out / "final_state.grid")
    if not record.complete:
        last = record.states[-1].t if record.states else None
        print(f"partial path: failed at t = {record.failed_at} ({record.error}); last good t = {last}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_fixtures(cfg: RunConfig) -> int:
    if cfg.list_only:
        for case in fx.fixture_cases():
            print(f"{case.name:10s} {case.source}")
        return EXIT_OK
    try:
        checks = fx.run_fixtures(cfg.names or None)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from exc
    failed = [c for c in checks if not c.ok]
    for c in checks:
        print(f"{'ok  ' if c.ok else 'FAIL'}  {c.case:10s} {c.field}")
    for c in failed:
        print(f"--- {c.case}.{c.field}\n    expected {c.expected}\n    actual   {c.actual}")
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_OK if not failed else EXIT_INVALID


COMMANDS = {
    "analyze": cmd_analyze,
    "angles": cmd_angles,
    "check-potential": cmd_check_potential,
    "solve": cmd_solve,
    "fixtures": cmd_fixtures,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="toricma", description="Toric Fano invariants and the real Monge-Ampere continuity path.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in (
        ("analyze", "exact R, barycenter, Q and minimal face"),
        ("angles", "base-locus fixed components and conic angles"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("polytope", help="fixture name or JSON document")
        s.add_argument("--out", type=Path)
    s = sub.add_parser("check-potential", help="invariant suite of the reference potential")
    s.add_argument("polytope")
    s.add_argument("--seed", type=int, default=0)
    s = sub.add_parser("solve", help="run the continuity path")
    s.add_argument("polytope")
    s.add_argument("--t-max", type=float)
    s.add_argument("--grid", type=int, default=129, help="points per axis (odd, >= 33)")
    s.add_argument("--halfwidth", type=float, help="window halfwidth (default: largest representable, at most 12)")
    s.add_argument("--domain", choices=("auto", "square", "hex"), default="auto")
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--out", type=Path)
    s = sub.add_parser("fixtures", help="check the fixture registry")
    s.add_argument("names", nargs="*")
    s.add_argument("--list", action="store_true", dest="list_only")
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=ns.command)
    cfg.input = getattr(ns, "polytope", None)
    for attr in ("t_max", "grid", "halfwidth", "domain", "tol", "out", "seed", "names", "list_only"):
        if hasattr(ns, attr):
            setattr(cfg, attr, getattr(ns, attr))
    return cfg


def _setup_logging() -> None:
    level = os.environ.get(VERBOSITY_ENV, "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def run(cfg: RunConfig) -> int:
    try:
        cfg.validate()
        return COMMANDS[cfg.command](cfg)
    except UsageError as exc:
        print(f"toricma: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, ToricError) as exc:
        print(f"toricma: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main(argv=None) -> int:
    _setup_logging()
    ns = build_parser().parse_args(argv)
    return run(config_from_args(ns))


def dump_document(P: LatticePolytope) -> str:
    """JSON text of a polytope document, the inverse of :func:`load_polytope`."""
    import json

    return json.dumps(to_document(P))


if __name__ == "__main__":
    sys.exit(main())
