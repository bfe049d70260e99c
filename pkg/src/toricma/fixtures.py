"""Registry of named polytopes with exact expected invariants.

The expected values live in ``data/fixtures.json`` as rational strings.  Each
case carries a ``source`` field naming where its numbers come from: a worked
example, a closed-form formula evaluated independently, or a symmetry
argument.  Comparison is exact.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from importlib import resources

from .divisors import conic_angle_report
from .polytope import LatticePolytope, compute_R, load_polytope


@dataclass(frozen=True)
class FixtureCase:
    name: str
    source: str
    document: dict
    expected: dict

    @property
    def polytope(self) -> LatticePolytope:
        return load_polytope(self.document)


@dataclass(frozen=True)
class FieldCheck:
    case: str
    field: str
    expected: object
    actual: object

    @property
    def ok(self) -> bool:
        return self.expected == self.actual


@lru_cache(maxsize=1)
def _raw() -> dict:
    text = resources.files(__package__).joinpath("data/fixtures.json").read_text()
    return json.loads(text)


def fixture_cases() -> list[FixtureCase]:
    return [FixtureCase(c["name"], c["source"], c["polytope"], c["expected"]) for c in _raw()["cases"]]


def fixture_names() -> list[str]:
    return [c.name for c in fixture_cases()]


def get_fixture(name: str) -> FixtureCase:
    for case in fixture_cases():
        if case.name == name:
            return case
    raise KeyError(f"no fixture named {name!r}; known: {', '.join(fixture_names())}")


def _frac_vec(xs) -> tuple[Fraction, ...]:
    return tuple(Fraction(x) for x in xs)


def _int_pairs(items) -> dict:
    return {tuple(v): int(a) for v, a in items}


def _actual(P: LatticePolytope, field: str):
    inv = compute_R(P)
    if field == "R":
        return inv.R
    if field == "barycenter":
        return inv.barycenter
    if field == "Q":
        return inv.Q
    if field == "volume":
        return inv.volume
    if field == "face_vertices":
        return tuple(sorted(inv.minimal_face.face_vertices))
    report = conic_angle_report(P)
    if field == "fixed_components":
        return report.fixed_components
    if field == "angle_fractions":
        return tuple(sorted(c.angle_fraction for c in report.components))
    raise KeyError(field)


def _expected(field: str, value):
    if field in ("R", "volume"):
        return Fraction(value)
    if field in ("barycenter", "Q"):
        return _frac_vec(value)
    if field == "face_vertices":
        return tuple(sorted(tuple(p) for p in value))
    if field == "fixed_components":
        return _int_pairs(value)
    if field == "angle_fractions":
        return tuple(sorted(Fraction(x) for x in value))
    raise KeyError(field)


def check_case(case: FixtureCase) -> list[FieldCheck]:
    P = case.polytope
    return [
        FieldCheck(case.name, field, _expected(field, value), _actual(P, field))
        for field, value in case.expected.items()
    ]


def run_fixtures(names=None, workers: int = 4) -> list[FieldCheck]:
    """Check the named cases (all by default) concurrently; results keep registry order."""
    cases = fixture_cases() if names is None else [get_fixture(n) for n in names]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(check_case, cases))
    return [c for checks in results for c in checks]
