"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` or directly as a script.
The solver criteria run several continuity paths and take a few minutes.
"""

import math
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from oracles import blp_closed_form, blp_facets, blp_vertices, p1_shooting
from toricma.divisors import base_locus_fixed_components, conic_angle_report
from toricma.polytope import barycenter, compute_R, make_polytope
from toricma.potential import reference_potential
from toricma.solver import continuity_path, energy_functionals

pytestmark = pytest.mark.slow

P1 = make_polytope([(-1,), (1,)])
P2 = make_polytope([(-1, -1), (2, -1), (-1, 2)])
BLP2 = make_polytope([(-1, 0), (0, -1), (-1, 2), (2, -1)])
BLPQ2 = make_polytope([(0, 1), (1, 0), (1, -1), (-1, -1), (-1, 1)])

BLP2_SCHEDULE = [0, 0.3, 0.5, 0.7, 0.8, 0.84]
P2_SCHEDULE = [0, 0.5, 0.75, 0.875, 0.95]


def verdict(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'}  criterion {number:2d}  {title}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def blp_coarse():
    return continuity_path(BLP2, BLP2_SCHEDULE, M=129, halfwidth=12)


@pytest.fixture(scope="module")
def blp_fine():
    return continuity_path(BLP2, BLP2_SCHEDULE, M=257, halfwidth=12)


@pytest.fixture(scope="module")
def p1_path():
    return continuity_path(P1, [0, 0.5], M=8001, halfwidth=20)


@pytest.fixture(scope="module")
def p2_path():
    return continuity_path(P2, P2_SCHEDULE, M=81, halfwidth=10, domain="hex")


def test_exact_invariants(capsys):
    start = time.perf_counter()
    checks = []
    inv = compute_R(BLP2)
    rep = conic_angle_report(BLP2)
    checks.append(inv.R == Fraction(6, 7))
    checks.append([c.angle_fraction for c in rep.components] == [Fraction(5, 7)])
    inv = compute_R(BLPQ2)
    rep = conic_angle_report(BLPQ2)
    checks.append(inv.R == Fraction(21, 25))
    checks.append(barycenter(BLPQ2) == (Fraction(-2, 21), Fraction(-2, 21)))
    checks.append(sorted(rep.fixed_components.values()) == [1, 1])
    checks.append([c.angle_fraction for c in rep.components] == [Fraction(21, 25)] * 2)
    for n in range(2, 6):
        P = make_polytope(blp_vertices(n), blp_facets(n) if n > 3 else None)
        checks.append(compute_R(P).R == blp_closed_form(n)[2])
    checks.append(blp_closed_form(3)[2] == Fraction(14, 17))
    elapsed = time.perf_counter() - start
    ok = all(checks) and elapsed < 1
    verdict(capsys, 1, "exact invariants", ok, f"{sum(checks)}/{len(checks)} exact matches in {elapsed:.2f} s")


def test_fixed_components(capsys):
    a = base_locus_fixed_components(BLP2, compute_R(BLP2).minimal_face)
    b = base_locus_fixed_components(BLPQ2, compute_R(BLPQ2).minimal_face)
    ok = a == {(-1, -1): 2} and b == {(0, 1): 1, (1, 0): 1}
    verdict(capsys, 2, "base-locus fixed components", ok, f"{a} and {b}")


def test_softmax_identities(capsys):
    worst_sum = worst_grad = worst_fd = 0.0
    rng = np.random.default_rng(7)
    for P in (BLP2, BLPQ2):
        ref = reference_potential(P)
        X = rng.uniform(-6, 6, size=(100, 2))
        b = ref.weights(X)
        worst_sum = max(worst_sum, np.abs(b.sum(axis=1) - 1).max())
        # gradient rebuilt from the weights by hand
        manual = np.einsum("ka,ai->ki", b, np.array(P.vertices, float))
        worst_grad = max(worst_grad, np.abs(ref.gradient(X) - manual).max())
        h = 1e-5
        for i in range(2):
            e = np.eye(2)[i] * h
            fd = (ref.value(X + e) - ref.value(X - e)) / (2 * h)
            worst_fd = max(worst_fd, np.abs(fd - ref.gradient(X)[:, i]).max())
    ok = worst_sum < 1e-12 and worst_grad < 1e-12 and worst_fd < 1e-8
    verdict(capsys, 3, "softmax identities", ok, f"sum {worst_sum:.1e}, gradient {worst_grad:.1e}, finite differences {worst_fd:.1e}")


def test_normalization(capsys):
    ref = reference_potential(P1)
    err = abs(ref.C - math.log(math.pi / 4))
    verdict(capsys, 4, "P1 normalization constant", err < 1e-8, f"|C - log(pi/4)| = {err:.2e}")


def test_solver_oracle(capsys, p1_path):
    errs = []
    for s in p1_path.states:
        x = s.window.nodes[:, 0]
        inner = np.abs(x) <= s.window.halfwidth / 2
        errs.append(float(np.abs(s.phi[inner] - p1_shooting(s.t, x[inner])).max()))
    ok = len(errs) == 2 and max(errs) < 1e-6
    verdict(capsys, 5, "P1 against shooting oracle", ok, "sup errors " + ", ".join(f"{e:.2e}" for e in errs))


def test_key_identity(capsys, blp_coarse, blp_fine):
    coarse = [s.key_identity_residual for s in blp_coarse.states]
    fine = [s.key_identity_residual for s in blp_fine.states]
    complete = blp_coarse.complete and blp_fine.complete
    at_zero = fine[0] < 1e-6
    bounded = all(r < 1e-3 for r in fine)
    halves = all(c >= 2 * f for c, f in zip(coarse[1:], fine[1:]))
    ok = complete and at_zero and bounded and halves
    detail = (
        f"t=0 residual {fine[0]:.1e}; max over path {max(fine):.2e} (M=257); "
        + "coarse/fine ratios "
        + ", ".join(f"{c / f:.2f}" for c, f in zip(coarse[1:], fine[1:]))
    )
    verdict(capsys, 6, "key identity on the Bl_p P2 path", ok, detail)


def test_limit_structure(capsys, blp_coarse):
    rec = blp_coarse
    by_t = dict(zip(rec.ts, rec.states))
    face = list(rec.face_indices)
    off = [i for i in range(len(BLP2.vertices)) if i not in face]
    off_mass = {t: float(by_t[t].b[off].sum()) for t in (0.5, 0.84)}
    on_face = max(abs(s.b[face[0]] - s.b[face[1]]) for s in rec.states)
    dist = [abs(float(s.ref.gradient(s.x_t) @ [1.0, 1.0]) + 1) for s in rec.states[-3:]]
    ok = rec.complete and off_mass[0.84] < off_mass[0.5] and on_face < 1e-6 and dist[0] > dist[1] > dist[2]
    detail = (
        f"off-face mass {off_mass[0.5]:.4f} -> {off_mass[0.84]:.4f}; on-face spread {on_face:.1e}; "
        f"distance to facet " + ", ".join(f"{d:.4f}" for d in dist)
    )
    verdict(capsys, 7, "limit structure", ok, detail)


def test_wang_zhu(capsys, blp_coarse, blp_fine):
    mc = max(abs(s.m_t) for s in blp_coarse.states)
    mf = max(abs(s.m_t) for s in blp_fine.states)
    kappas = [d["kappa"] for d in blp_fine.diagnostics]
    stable = abs(mc - mf) <= 0.2 * abs(mf)
    kappa_ok = min(kappas) > 0 and max(kappas) <= 2 * min(kappas)
    ok = stable and kappa_ok
    detail = f"max|m_t| {mc:.4f} vs {mf:.4f}; kappa in [{min(kappas):.3f}, {max(kappas):.3f}]"
    verdict(capsys, 8, "Wang-Zhu diagnostics", ok, detail)


def test_energy_sandwich(capsys, blp_coarse, p2_path):
    worst = -np.inf
    count = 0
    for rec in (blp_coarse, p2_path):
        n = rec.polytope.dim
        for s in rec.states:
            e = energy_functionals(s)
            I, J = e["I"], e["J"]
            slack = 1e-6 * (1 + abs(I))
            # positive when violated
            worst = max(worst, (n + 1) * J / n - I - slack, I - (n + 1) * J - slack)
            count += 1
    verdict(capsys, 9, "energy sandwich", worst <= 0, f"{count} states, worst margin {worst:.2e}")


def test_symmetry(capsys, p1_path, p2_path, blp_coarse):
    a = max(abs(s.x_t[0]) for s in p1_path.states)
    b = max(float(np.abs(s.x_t).max()) for s in p2_path.states)
    c = max(abs(s.x_t[0] - s.x_t[1]) for s in blp_coarse.states)
    complete = p1_path.complete and p2_path.complete and blp_coarse.complete
    ok = complete and max(a, b, c) < 1e-8
    verdict(capsys, 10, "x_t on the fixed locus", ok, f"P1 {a:.1e}, P2 {b:.1e}, Bl_p P2 diagonal {c:.1e}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
