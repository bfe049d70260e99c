"""Exact rational geometry of reflexive lattice polytopes.

Everything in this module works over the integers and ``fractions.Fraction``;
no floating point value is ever produced.  A polytope is stored in a
canonical form: vertices deduplicated and sorted lexicographically, facet
normals sorted lexicographically.  Each facet ``r`` with primitive inward
normal ``v_r`` encodes the inequality ``<v_r, y> >= -1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations, product
from math import factorial, gcd
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    BarycenterAtOrigin,
    InconsistentDescription,
    NonReflexive,
    OriginNotInterior,
    PointOutsidePolytope,
    PolytopeError,
    UnsupportedDimension,
)

IntVector = tuple[int, ...]
RationalVector = tuple[Fraction, ...]

MAX_HULL_DIM = 3


# ---------------------------------------------------------------------------
# small exact linear algebra


def _dot(a: Sequence, b: Sequence):
    return sum(x * y for x, y in zip(a, b))


def _det(rows: Sequence[Sequence[int]]) -> int:
    """Integer determinant by fraction-free Bareiss elimination."""
    m = [list(r) for r in rows]
    n = len(m)
    if n == 0:
        return 1
    sign, prev = 1, 1
    for k in range(n - 1):
        if m[k][k] == 0:
            for i in range(k + 1, n):
                if m[i][k] != 0:
                    m[k], m[i] = m[i], m[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) // prev
        prev = m[k][k]
    return sign * m[n - 1][n - 1]


def _rank(rows: Sequence[Sequence]) -> int:
    m = [[Fraction(x) for x in r] for r in rows]
    if not m:
        return 0
    ncols = len(m[0])
    rank = 0
    for col in range(ncols):
        pivot = next((i for i in range(rank, len(m)) if m[i][col] != 0), None)
        if pivot is None:
            continue
        m[rank], m[pivot] = m[pivot], m[rank]
        for i in range(len(m)):
            if i != rank and m[i][col] != 0:
                f = m[i][col] / m[rank][col]
                m[i] = [a - f * b for a, b in zip(m[i], m[rank])]
        rank += 1
    return rank


def _solve(a: Sequence[Sequence[int]], b: Sequence) -> RationalVector | None:
    """Solve the square system ``a x = b`` exactly; None if singular."""
    n = len(a)
    m = [[Fraction(x) for x in row] + [Fraction(bi)] for row, bi in zip(a, b)]
    for col in range(n):
        pivot = next((i for i in range(col, n) if m[i][col] != 0), None)
        if pivot is None:
            return None
        m[col], m[pivot] = m[pivot], m[col]
        for i in range(n):
            if i != col and m[i][col] != 0:
                f = m[i][col] / m[col][col]
                m[i] = [x - f * y for x, y in zip(m[i], m[col])]
    return tuple(m[i][n] / m[i][i] for i in range(n))


def affine_dimension(points: Sequence[Sequence]) -> int:
    if not points:
        return -1
    base = points[0]
    return _rank([[a - b for a, b in zip(p, base)] for p in points[1:]])


def _normal_of(points: Sequence[IntVector]) -> IntVector:
    """Integer normal to the affine hull of n points in R^n (zero if degenerate)."""
    n = len(points[0])
    diffs = [[a - b for a, b in zip(p, points[0])] for p in points[1:]]
    normal = []
    for i in range(n):
        minor = [row[:i] + row[i + 1:] for row in diffs]
        normal.append((-1) ** i * _det(minor))
    return tuple(normal)


def _primitive(v: Sequence[int]) -> IntVector:
    g = 0
    for x in v:
        g = gcd(g, x)
    return tuple(x // g for x in v) if g else tuple(v)


def as_rational(v: Iterable) -> RationalVector:
    return tuple(Fraction(x) for x in v)


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class LatticePolytope:
    """A reflexive lattice polytope in canonical form.

    Build instances with :func:`make_polytope` or :func:`load_polytope`;
    the constructor itself performs no validation.
    """

    dim: int
    vertices: tuple[IntVector, ...]
    facets: tuple[IntVector, ...]
    name: str | None = None

    def lam(self, r: int, y: Sequence) -> Fraction:
        """The linear function ``<v_r, y>`` of facet ``r``."""
        return _dot(self.facets[r], y)

    def facet_values(self, y: Sequence) -> list:
        return [_dot(v, y) for v in self.facets]

    def contains(self, y: Sequence) -> bool:
        return all(val >= -1 for val in self.facet_values(y))

    def vertices_on_facet(self, r: int) -> tuple[int, ...]:
        return _vertices_on(self, frozenset([r]))

    def __repr__(self):
        label = self.name or "polytope"
        return f"LatticePolytope({label!r}, dim={self.dim}, {len(self.vertices)} vertices, {len(self.facets)} facets)"


@dataclass(frozen=True)
class FaceDescriptor:
    active_facets: frozenset[int]
    face_vertices: tuple[IntVector, ...]
    dim: int
    proper: bool = True


@dataclass(frozen=True)
class FanoInvariants:
    barycenter: RationalVector
    volume: Fraction
    R: Fraction
    Q: RationalVector | None
    minimal_face: FaceDescriptor | None
    ke_exists: bool


# ---------------------------------------------------------------------------
# construction and validation


def _hull_facets(vertices: Sequence[IntVector], n: int) -> list[tuple[IntVector, int]]:
    """Supporting hyperplanes ``<v, y> >= c`` of conv(vertices), v primitive."""
    found: dict[IntVector, int] = {}
    for subset in combinations(vertices, n):
        normal = _normal_of(subset)
        if not any(normal):
            continue
        normal = _primitive(normal)
        c = _dot(normal, subset[0])
        vals = [_dot(normal, p) for p in vertices]
        if all(x >= c for x in vals):
            pass
        elif all(x <= c for x in vals):
            normal, c = tuple(-x for x in normal), -c
        else:
            continue
        found[normal] = c
    return sorted(found.items())


def make_polytope(
    vertices: Iterable[Sequence[int]],
    facets: Iterable[Sequence[int]] | None = None,
    name: str | None = None,
) -> LatticePolytope:
    """Validate a vertex (and optional facet) description of a reflexive polytope.

    Raises
    ------
    UnsupportedDimension
        facets omitted while the dimension exceeds 3.
    OriginNotInterior, NonReflexive, InconsistentDescription
        see :mod:`toricma.errors`.
    """
    verts = sorted({tuple(int(x) for x in p) for p in vertices})
    if not verts:
        raise PolytopeError("empty vertex list")
    n = len(verts[0])
    if n < 1 or any(len(p) != n for p in verts):
        raise PolytopeError("vertices must be nonempty integer vectors of equal length")
    if affine_dimension(verts) < n:
        raise OriginNotInterior("vertex set is not full-dimensional")

    if facets is None:
        if n > MAX_HULL_DIM:
            raise UnsupportedDimension(f"facets must be supplied for dim {n} > {MAX_HULL_DIM}")
        hull = _hull_facets(verts, n)
        for normal, c in hull:
            if c >= 0:
                raise OriginNotInterior(f"origin not strictly inside facet {normal} (rhs {c})")
            if c != -1:
                raise NonReflexive(f"facet {normal} has right-hand side {c} != -1")
        normals = [normal for normal, _ in hull]
    else:
        normals = sorted({tuple(int(x) for x in v) for v in facets})
        for v in normals:
            if len(v) != n:
                raise PolytopeError(f"facet {v} has wrong length")
            if _primitive(v) != v or not any(v):
                raise InconsistentDescription(f"facet normal {v} is not primitive")

    P = LatticePolytope(n, tuple(verts), tuple(normals), name)
    _validate(P)
    return P


def _validate(P: LatticePolytope) -> None:
    n, verts = P.dim, P.vertices
    for v in P.facets:
        c = min(_dot(v, p) for p in verts)
        if c >= 0:
            raise OriginNotInterior(f"origin not strictly inside facet {v}")
        if c != -1:
            raise NonReflexive(f"facet {v} supports the vertex set at {c} != -1")
        touching = [p for p in verts if _dot(v, p) == -1]
        if affine_dimension(touching) != n - 1:
            raise InconsistentDescription(f"{v} does not define a facet of conv(vertices)")

    # the H-description must be bounded: no recession ray
    for subset in combinations(P.facets, n - 1):
        if _rank(subset) != n - 1:
            continue
        ray = _normal_of([(0,) * n] + [tuple(row) for row in subset]) if n > 1 else (1,)
        for d in (ray, tuple(-x for x in ray)):
            if all(_dot(v, d) >= 0 for v in P.facets):
                raise InconsistentDescription("facet inequalities describe an unbounded region")

    # ... and its vertices must be exactly the given ones
    h_vertices = set()
    for subset in combinations(P.facets, n):
        y = _solve(subset, [-1] * n)
        if y is not None and P.contains(y):
            h_vertices.add(y)
    v_vertices = {as_rational(p) for p in verts}
    if h_vertices != v_vertices:
        extra = sorted(h_vertices - v_vertices)
        missing = sorted(v_vertices - h_vertices)
        raise InconsistentDescription(
            f"vertex/facet mismatch: non-listed vertices {extra}, non-extreme points {missing}"
        )


def load_polytope(source) -> LatticePolytope:
    """Load a polytope document (dict, JSON text, or path to a JSON file)."""
    if isinstance(source, dict):
        doc = source
    elif isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        doc = json.loads(Path(source).read_text())
    else:
        doc = json.loads(source)
    if "vertices" not in doc:
        raise PolytopeError("polytope document needs a 'vertices' field")
    P = make_polytope(doc["vertices"], doc.get("facets"), doc.get("name"))
    if "dim" in doc and int(doc["dim"]) != P.dim:
        raise PolytopeError(f"declared dim {doc['dim']} but vertices have length {P.dim}")
    return P


def to_document(P: LatticePolytope) -> dict:
    doc = {"name": P.name, "dim": P.dim}
    doc["vertices"] = [list(p) for p in P.vertices]
    doc["facets"] = [list(v) for v in P.facets]
    return doc


def apply_unimodular(P: LatticePolytope, U: Sequence[Sequence[int]]) -> LatticePolytope:
    """Image of P under y -> U y; facet normals transform by U^{-T}."""
    n = P.dim
    if abs(_det(U)) != 1:
        raise ValueError("matrix is not unimodular")
    cols = []
    for j in range(n):
        e = [0] * n
        e[j] = 1
        cols.append(_solve(U, e))
    # U^{-T} v = (U^{-1})^T v, with columns of U^{-1} stored in ``cols``
    inv_t = [[cols[i][j] for j in range(n)] for i in range(n)]
    new_facets = [tuple(int(_dot(inv_t[i], v)) for i in range(n)) for v in P.facets]
    new_verts = [tuple(_dot(row, p) for row in U) for p in P.vertices]
    return make_polytope(new_verts, new_facets, P.name)


def lattice_automorphisms(P: LatticePolytope) -> list[tuple[IntVector, ...]]:
    """All integer matrices U with ``U P = P``, identity first.

    U is fixed by the images of n independent vertices, so every ordered
    choice of n distinct image vertices is tried and kept when it is integral
    and permutes the vertex set.
    """
    n = P.dim
    basis: list[IntVector] = []
    for p in P.vertices:
        if _rank(basis + [p]) > len(basis):
            basis.append(p)
        if len(basis) == n:
            break
    verts = set(P.vertices)
    found = []
    for images in product(P.vertices, repeat=n):
        if len(set(images)) < n:
            continue
        rows = []
        for i in range(n):
            row = _solve(basis, [y[i] for y in images])
            if row is None or any(x.denominator != 1 for x in row):
                break
            rows.append(tuple(int(x) for x in row))
        else:
            if abs(_det(rows)) == 1 and {tuple(_dot(r, p) for r in rows) for p in verts} == verts:
                found.append(tuple(rows))
    ident = tuple(tuple(int(i == j) for j in range(n)) for i in range(n))
    found.sort(key=lambda U: U != ident)
    return found


# ---------------------------------------------------------------------------
# enumeration, volume, barycenter


def lattice_points(P: LatticePolytope) -> list[IntVector]:
    lo = [min(p[i] for p in P.vertices) for i in range(P.dim)]
    hi = [max(p[i] for p in P.vertices) for i in range(P.dim)]
    box = product(*(range(a, b + 1) for a, b in zip(lo, hi)))
    return [y for y in box if P.contains(y)]


def interior_lattice_points(P: LatticePolytope) -> list[IntVector]:
    return [y for y in lattice_points(P) if all(x > -1 for x in P.facet_values(y))]


@lru_cache(maxsize=None)
def _vertices_on(P: LatticePolytope, active: frozenset[int]) -> tuple[int, ...]:
    return tuple(
        i for i, p in enumerate(P.vertices) if all(_dot(P.facets[r], p) == -1 for r in active)
    )


@lru_cache(maxsize=None)
def _triangulate_face(P: LatticePolytope, vert_ids: frozenset[int], dim: int) -> tuple[tuple[int, ...], ...]:
    # pulling triangulation: fan from the lex-smallest vertex over the
    # sub-faces that avoid it; vertices are stored lex-sorted, so min index
    if dim == 0:
        return ((min(vert_ids),),)
    apex = min(vert_ids)
    subfaces = set()
    for r, v in enumerate(P.facets):
        sub = frozenset(i for i in vert_ids if _dot(v, P.vertices[i]) == -1)
        if not sub or sub == vert_ids or apex in sub:
            continue
        if affine_dimension([P.vertices[i] for i in sub]) == dim - 1:
            subfaces.add(sub)
    simplices = []
    for sub in sorted(subfaces, key=sorted):
        for s in _triangulate_face(P, sub, dim - 1):
            simplices.append((apex,) + s)
    return tuple(simplices)


def cone_decomposition(P: LatticePolytope) -> list[tuple[int, ...]]:
    """Simplices (vertex index tuples) of the facet triangulation, each coned over O."""
    out = []
    for r in range(len(P.facets)):
        ids = frozenset(P.vertices_on_facet(r))
        out.extend(_triangulate_face(P, ids, P.dim - 1))
    return out


def simplex_data(P: LatticePolytope) -> list[tuple[Fraction, RationalVector]]:
    """(volume, barycenter) of every simplex conv(O, facet simplex)."""
    n = P.dim
    data = []
    for simplex in cone_decomposition(P):
        pts = [P.vertices[i] for i in simplex]
        vol = Fraction(abs(_det(pts)), factorial(n))
        bary = tuple(Fraction(sum(p[k] for p in pts), n + 1) for k in range(n))
        data.append((vol, bary))
    return data


def volume(P: LatticePolytope) -> Fraction:
    return sum((vol for vol, _ in simplex_data(P)), Fraction(0))


def barycenter(P: LatticePolytope) -> RationalVector:
    data = simplex_data(P)
    total = sum((vol for vol, _ in data), Fraction(0))
    return tuple(sum((vol * b[k] for vol, b in data), Fraction(0)) / total for k in range(P.dim))


# ---------------------------------------------------------------------------
# R(X), the point Q and faces


def ray_boundary_intersection(P: LatticePolytope, pc: Sequence) -> tuple[RationalVector, frozenset[int]]:
    """Intersection Q of the ray from ``pc`` through O with the boundary.

    Returns Q together with the facets active at Q.
    """
    pc = as_rational(pc)
    if not any(pc):
        raise BarycenterAtOrigin("ray from the barycenter is undefined when it is the origin")
    vals = P.facet_values(pc)
    top = max(vals)
    if top <= 0:
        raise PolytopeError("facet normals do not surround the origin")
    mu = 1 / top
    q = tuple(-mu * x for x in pc)
    active = frozenset(r for r, val in enumerate(vals) if val == top)
    return q, active


def minimal_face(P: LatticePolytope, y: Sequence) -> FaceDescriptor:
    """Smallest face of P containing ``y``.

    An interior point yields the improper face (all vertices, ``proper=False``).
    """
    y = as_rational(y)
    vals = P.facet_values(y)
    if any(val < -1 for val in vals):
        raise PointOutsidePolytope(f"{y} lies outside the polytope")
    active = frozenset(r for r, val in enumerate(vals) if val == -1)
    ids = _vertices_on(P, active)
    pts = tuple(P.vertices[i] for i in ids)
    return FaceDescriptor(active, pts, affine_dimension(pts), proper=bool(active))


def compute_R(P: LatticePolytope) -> FanoInvariants:
    pc = barycenter(P)
    vol = volume(P)
    if not any(pc):
        return FanoInvariants(pc, vol, Fraction(1), None, None, True)
    q, _ = ray_boundary_intersection(P, pc)
    mu = 1 / max(P.facet_values(pc))
    R = mu / (1 + mu)
    return FanoInvariants(pc, vol, R, q, minimal_face(P, q), False)


def format_vector(v: Sequence[Fraction]) -> str:
    return "(" + ", ".join(str(x) for x in v) + ")"
