from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import blp_closed_form, blp_facets, blp_vertices, brute_hull_2d, halfplane_points, shoelace
from toricma.errors import (
    BarycenterAtOrigin,
    InconsistentDescription,
    NonReflexive,
    OriginNotInterior,
    PointOutsidePolytope,
    UnsupportedDimension,
)
from toricma.polytope import (
    apply_unimodular,
    barycenter,
    compute_R,
    lattice_automorphisms,
    lattice_points,
    load_polytope,
    make_polytope,
    minimal_face,
    ray_boundary_intersection,
    simplex_data,
    to_document,
    volume,
)

BLP2 = [(-1, 0), (0, -1), (-1, 2), (2, -1)]
BLPQ2 = [(0, 1), (1, 0), (1, -1), (-1, -1), (-1, 1)]
P2 = [(-1, -1), (2, -1), (-1, 2)]

# a few reflexive polygons, enough to exercise both R = 1 and R < 1
REFLEXIVE = [
    P2,
    BLP2,
    BLPQ2,
    [(1, 0), (0, 1), (-1, 0), (0, -1)],
    [(1, 1), (1, -1), (-1, 1), (-1, -1)],
    [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)],
    [(1, 0), (0, 1), (-1, 0), (-1, -1)],
    [(-1, -1), (1, -1), (1, 0), (0, 1), (-1, 1)][::-1],
]


def F(*xs):
    return tuple(Fraction(x) for x in xs)


def test_p1_segment():
    P = make_polytope([(-1,), (1,)])
    assert P.facets == ((-1,), (1,))
    assert lattice_points(P) == [(-1,), (0,), (1,)]
    assert volume(P) == 2
    assert barycenter(P) == F(0)


def test_blp2_facets_and_invariants():
    P = make_polytope(BLP2)
    assert set(P.facets) == {(1, 0), (0, 1), (1, 1), (-1, -1)}
    assert volume(P) == 4
    assert barycenter(P) == F(Fraction(1, 12), Fraction(1, 12))
    inv = compute_R(P)
    assert inv.R == Fraction(6, 7)
    assert inv.Q == F(Fraction(-1, 2), Fraction(-1, 2))
    assert set(inv.minimal_face.face_vertices) == {(-1, 0), (0, -1)}
    assert inv.minimal_face.dim == 1
    assert [P.facets[r] for r in inv.minimal_face.active_facets] == [(1, 1)]


def test_blpq2_facets_and_invariants():
    P = make_polytope(BLPQ2)
    assert set(P.facets) == {(0, 1), (1, 0), (-1, -1), (-1, 0), (0, -1)}
    assert list(P.facets) == brute_hull_2d(BLPQ2)
    assert volume(P) == Fraction(7, 2)
    assert barycenter(P) == F(Fraction(-2, 21), Fraction(-2, 21))
    inv = compute_R(P)
    assert inv.R == Fraction(21, 25)
    assert inv.Q == F(Fraction(1, 2), Fraction(1, 2))
    assert set(inv.minimal_face.face_vertices) == {(0, 1), (1, 0)}


def test_p2_has_ke():
    inv = compute_R(make_polytope(P2))
    assert inv.R == 1 and inv.ke_exists
    assert inv.Q is None and inv.minimal_face is None
    with pytest.raises(BarycenterAtOrigin):
        ray_boundary_intersection(make_polytope(P2), inv.barycenter)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_blp_family_closed_form(n):
    P = make_polytope(blp_vertices(n), blp_facets(n) if n > 3 else None)
    vol, bary, R = blp_closed_form(n)
    inv = compute_R(P)
    assert inv.volume == vol
    assert inv.barycenter == (bary,) * n
    assert inv.R == R
    assert inv.Q == (Fraction(-1, n),) * n
    assert set(inv.minimal_face.face_vertices) == set(blp_vertices(n)[:n])


def test_blp3_value():
    assert compute_R(make_polytope(blp_vertices(3))).R == Fraction(14, 17)


@pytest.mark.parametrize("verts", REFLEXIVE)
def test_polygons_against_shoelace(verts):
    P = make_polytope(verts)
    area, centroid = shoelace(verts)
    assert volume(P) == area
    assert barycenter(P) == centroid
    assert list(P.facets) == brute_hull_2d(verts)
    assert sorted(lattice_points(P)) == halfplane_points(verts)


def test_lattice_point_counts():
    # nine and eight points: vertices, origin and the boundary points between
    assert len(lattice_points(make_polytope(BLP2))) == 9
    assert len(lattice_points(make_polytope(BLPQ2))) == 8


@pytest.mark.parametrize("verts", REFLEXIVE)
def test_decomposition_consistency(verts):
    P = make_polytope(verts)
    data = simplex_data(P)
    total = sum(v for v, _ in data)
    assert total == volume(P)
    assert tuple(sum(v * b[k] for v, b in data) / total for k in range(2)) == barycenter(P)


@pytest.mark.parametrize("verts", REFLEXIVE)
def test_q_r_consistency_and_boundary(verts):
    P = make_polytope(verts)
    inv = compute_R(P)
    if inv.ke_exists:
        return
    R = inv.R
    assert inv.Q == tuple(-R / (1 - R) * c for c in inv.barycenter)
    vals = P.facet_values(inv.Q)
    assert min(vals) == -1
    assert {r for r, v in enumerate(vals) if v == -1} == set(inv.minimal_face.active_facets)


def test_minimal_face_cases():
    P = make_polytope(BLP2)
    f = minimal_face(P, (2, -1))
    assert f.face_vertices == ((2, -1),) and f.dim == 0
    inner = minimal_face(P, (0, 0))
    assert not inner.proper and len(inner.face_vertices) == 4
    with pytest.raises(PointOutsidePolytope):
        minimal_face(P, (3, 3))


def test_rejections():
    with pytest.raises(NonReflexive):
        make_polytope([(-1, -1), (3, -1), (-1, 3)])
    with pytest.raises(OriginNotInterior):
        make_polytope([(0, 0), (1, 0), (0, 1)])
    with pytest.raises(InconsistentDescription):
        make_polytope(BLP2, [(1, 0), (0, 1), (1, 1)])
    with pytest.raises(UnsupportedDimension):
        make_polytope(blp_vertices(4))


def test_document_round_trip(tmp_path):
    P = make_polytope(BLPQ2, name="blpq")
    assert load_polytope(to_document(P)) == P
    path = tmp_path / "p.json"
    import json

    path.write_text(json.dumps(to_document(P)))
    assert load_polytope(path) == P
    assert load_polytope({"vertices": BLPQ2[::-1], "name": "blpq"}) == P


def test_automorphisms():
    assert len(lattice_automorphisms(make_polytope(P2))) == 6
    assert len(lattice_automorphisms(make_polytope(BLP2))) == 2
    for U in lattice_automorphisms(make_polytope(BLPQ2)):
        assert apply_unimodular(make_polytope(BLPQ2), U) == make_polytope(BLPQ2)


# --- properties -------------------------------------------------------------

elementary = st.sampled_from([((1, 1), (0, 1)), ((1, 0), (1, 1)), ((0, 1), (1, 0)), ((-1, 0), (0, 1)), ((1, -1), (0, 1))])


def _mul(A, B):
    return tuple(tuple(sum(A[i][k] * B[k][j] for k in range(2)) for j in range(2)) for i in range(2))


@st.composite
def unimodular(draw):
    U = ((1, 0), (0, 1))
    for E in draw(st.lists(elementary, min_size=1, max_size=5)):
        U = _mul(U, E)
    return U


@settings(max_examples=40, deadline=None)
@given(verts=st.sampled_from(REFLEXIVE), U=unimodular())
def test_unimodular_equivariance(verts, U):
    P = make_polytope(verts)
    Q = apply_unimodular(P, U)
    a, b = compute_R(P), compute_R(Q)
    assert b.R == a.R
    assert b.volume == a.volume
    assert b.barycenter == tuple(sum(U[i][k] * a.barycenter[k] for k in range(2)) for i in range(2))
    if a.Q is not None:
        assert b.Q == tuple(sum(U[i][k] * a.Q[k] for k in range(2)) for i in range(2))


@settings(max_examples=30, deadline=None)
@given(verts=st.sampled_from(REFLEXIVE), data=st.data())
def test_vertex_order_is_irrelevant(verts, data):
    perm = data.draw(st.permutations(verts))
    assert make_polytope(perm) == make_polytope(verts)
    assert compute_R(make_polytope(perm)) == compute_R(make_polytope(verts))
