"""Toric divisors of sections, base-locus fixed components and conic angles."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import pi
from typing import Sequence

from .errors import ImproperFace, KEExists, PointOutsidePolytope
from .polytope import FaceDescriptor, IntVector, LatticePolytope, compute_R


def section_divisor(P: LatticePolytope, p: Sequence[int]) -> dict[IntVector, int]:
    """Coefficients of the zero divisor of the section attached to lattice point ``p``.

    The coefficient on the toric divisor of facet ``v`` is ``<p, v> + 1``.
    Keys are facet normals.
    """
    p = tuple(int(x) for x in p)
    if len(p) != P.dim or not P.contains(p):
        raise PointOutsidePolytope(f"{p} is not a lattice point of the polytope")
    return {v: sum(a * b for a, b in zip(p, v)) + 1 for v in P.facets}


def base_locus_fixed_components(P: LatticePolytope, face: FaceDescriptor) -> dict[IntVector, int]:
    """Multiplicities ``a_i = 1 + min_k <p_k, v_i>`` over the face vertices, kept where positive."""
    if not face.proper or not face.face_vertices:
        raise ImproperFace("base locus needs a proper face with vertices")
    out = {}
    for v in P.facets:
        a = 1 + min(sum(x * y for x, y in zip(p, v)) for p in face.face_vertices)
        if a > 0:
            out[v] = a
    return out


def base_locus_sections(P: LatticePolytope, face: FaceDescriptor) -> dict[IntVector, dict[IntVector, int]]:
    """Section divisors of the face vertices (the generators of the base-locus ideal)."""
    return {p: section_divisor(P, p) for p in face.face_vertices}


@dataclass(frozen=True)
class ConicComponent:
    facet: IntVector
    multiplicity: int
    exponent: Fraction  # 2 a (1 - R): pole order of the limit volume form
    angle_fraction: Fraction  # conic angle divided by 2 pi

    @property
    def angle(self) -> float:
        return 2 * pi * float(self.angle_fraction)


@dataclass(frozen=True)
class SingularityReport:
    R: Fraction
    face: FaceDescriptor
    components: tuple[ConicComponent, ...]
    sections: dict = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    @property
    def fixed_components(self) -> dict[IntVector, int]:
        return {c.facet: c.multiplicity for c in self.components}


def conic_angle_report(P: LatticePolytope) -> SingularityReport:
    inv = compute_R(P)
    if inv.ke_exists:
        raise KEExists(f"{P.name or 'polytope'}: barycenter at the origin, R = 1")
    R = inv.R
    fixed = base_locus_fixed_components(P, inv.minimal_face)
    comps, warnings = [], []
    for v, a in fixed.items():
        frac = 1 - (1 - R) * a
        comps.append(ConicComponent(v, a, 2 * a * (1 - R), frac))
        if frac <= 0:
            warnings.append(f"facet {v}: predicted angle fraction {frac} <= 0, beyond the conic range")
    return SingularityReport(
        R, inv.minimal_face, tuple(comps), base_locus_sections(P, inv.minimal_face), tuple(warnings)
    )
