"""
Exact invariants of the toric del Pezzo surfaces and the Bl_p P^n family.

Everything here is rational arithmetic: the greatest Ricci lower bound R,
the point Q where the ray from the barycenter through the origin leaves the
polytope, the face containing Q and the conic angles along the divisors in
the base locus of that face.
"""

from toricma import compute_R, conic_angle_report, make_polytope
from toricma.fixtures import get_fixture

surfaces = {
    "P2": [(-1, -1), (2, -1), (-1, 2)],
    "Bl_p P2": [(-1, 0), (0, -1), (-1, 2), (2, -1)],
    "Bl_pq P2": [(0, 1), (1, 0), (1, -1), (-1, -1), (-1, 1)],
}

for name, verts in surfaces.items():
    P = make_polytope(verts, name=name)
    inv = compute_R(P)
    print(f"{name:9s} R = {inv.R}  barycenter = {tuple(map(str, inv.barycenter))}")
    if inv.ke_exists:
        print("          barycenter at the origin, no degeneration")
        continue
    rep = conic_angle_report(P)
    print(f"          Q = {tuple(map(str, inv.Q))}  face {rep.face.face_vertices}")
    for c in rep.components:
        print(f"          divisor {c.facet}: multiplicity {c.multiplicity}, angle 2pi * {c.angle_fraction}")

# the blow-up of P^n at a point, n = 2..5, from the fixture registry
for n in range(2, 6):
    P = get_fixture(f"blp_p{n}").polytope
    inv = compute_R(P)
    angle = conic_angle_report(P).components[0].angle_fraction
    print(f"Bl_p P{n}: R = {inv.R} ~ {float(inv.R):.6f}, angle 2pi * {angle}")
