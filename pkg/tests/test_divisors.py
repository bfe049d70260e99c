from fractions import Fraction

import pytest

from oracles import blp_facets, blp_vertices
from toricma.divisors import base_locus_fixed_components, conic_angle_report, section_divisor
from toricma.errors import ImproperFace, KEExists, PointOutsidePolytope
from toricma.polytope import apply_unimodular, compute_R, lattice_points, make_polytope, minimal_face

BLP2 = make_polytope([(-1, 0), (0, -1), (-1, 2), (2, -1)])
BLPQ2 = make_polytope([(0, 1), (1, 0), (1, -1), (-1, -1), (-1, 1)])


def test_section_divisor_examples():
    assert section_divisor(BLP2, (0, -1)) == {(1, 0): 1, (0, 1): 0, (1, 1): 0, (-1, -1): 2}
    assert section_divisor(BLPQ2, (0, 1)) == {(-1, -1): 0, (-1, 0): 1, (0, -1): 0, (0, 1): 2, (1, 0): 1}
    assert set(section_divisor(BLPQ2, (0, 0)).values()) == {1}
    with pytest.raises(PointOutsidePolytope):
        section_divisor(BLP2, (2, 2))


@pytest.mark.parametrize("P", [BLP2, BLPQ2])
def test_section_coefficients_nonnegative(P):
    for p in lattice_points(P):
        d = section_divisor(P, p)
        assert d == {v: v[0] * p[0] + v[1] * p[1] + 1 for v in P.facets}
        assert min(d.values()) >= 0
        if all(val > -1 for val in P.facet_values(p)):
            assert min(d.values()) >= 1


def test_fixed_components():
    assert base_locus_fixed_components(BLP2, compute_R(BLP2).minimal_face) == {(-1, -1): 2}
    assert base_locus_fixed_components(BLPQ2, compute_R(BLPQ2).minimal_face) == {(0, 1): 1, (1, 0): 1}
    with pytest.raises(ImproperFace):
        base_locus_fixed_components(BLP2, minimal_face(BLP2, (0, 0)))


@pytest.mark.parametrize("P", [BLP2, BLPQ2])
def test_fixed_components_are_minimum_of_sections(P):
    face = compute_R(P).minimal_face
    divs = [section_divisor(P, p) for p in face.face_vertices]
    brute = {v: min(d[v] for d in divs) for v in P.facets}
    assert base_locus_fixed_components(P, face) == {v: a for v, a in brute.items() if a > 0}


def test_angles():
    rep = conic_angle_report(BLP2)
    assert [(c.facet, c.angle_fraction) for c in rep.components] == [((-1, -1), Fraction(5, 7))]
    assert rep.components[0].exponent == 2 * 2 * Fraction(1, 7)
    rep = conic_angle_report(BLPQ2)
    assert sorted(c.angle_fraction for c in rep.components) == [Fraction(21, 25)] * 2
    assert rep.warnings == ()
    with pytest.raises(KEExists):
        conic_angle_report(make_polytope([(-1, -1), (2, -1), (-1, 2)]))


@pytest.mark.parametrize("n, fraction", [(3, Fraction(11, 17)), (4, Fraction(259, 421)), (5, Fraction(473, 793))])
def test_blp_family_angles(n, fraction):
    P = make_polytope(blp_vertices(n), blp_facets(n) if n > 3 else None)
    rep = conic_angle_report(P)
    assert rep.fixed_components == {(-1,) * n: 2}
    assert rep.components[0].angle_fraction == fraction == 1 - (1 - rep.R) * 2


def test_angle_fraction_identity():
    for P in (BLP2, BLPQ2):
        rep = conic_angle_report(P)
        for c in rep.components:
            assert c.angle_fraction == 1 - (1 - rep.R) * c.multiplicity
            assert c.angle_fraction < 1


def test_report_permutes_under_symmetry():
    U = ((0, 1), (1, 0))
    image = apply_unimodular(BLPQ2, U)
    assert conic_angle_report(image).fixed_components == conic_angle_report(BLPQ2).fixed_components
    U = ((1, 1), (0, 1))
    image = apply_unimodular(BLP2, U)
    rep, rep2 = conic_angle_report(BLP2), conic_angle_report(image)
    assert [c.angle_fraction for c in rep.components] == [c.angle_fraction for c in rep2.components]
    # normals move by the inverse transpose
    assert list(rep2.fixed_components) == [(-1, 0)]
