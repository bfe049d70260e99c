import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import simplex_integral
from toricma.errors import DegenerateWeights
from toricma.polytope import compute_R, make_polytope
from toricma.potential import (
    LogSumExp,
    check_potential,
    exponential_tail,
    inradius,
    limit_reference,
    normalization_residual,
    reference_potential,
    tail_halfwidth,
)

P1 = make_polytope([(-1,), (1,)])
P2 = make_polytope([(-1, -1), (2, -1), (-1, 2)])
BLP2 = make_polytope([(-1, 0), (0, -1), (-1, 2), (2, -1)])
BLPQ2 = make_polytope([(0, 1), (1, 0), (1, -1), (-1, -1), (-1, 1)])


@pytest.fixture(scope="module")
def refs():
    return {name: reference_potential(P) for name, P in [("p1", P1), ("p2", P2), ("blp2", BLP2), ("blpq2", BLPQ2)]}


def test_p1_constant(refs):
    assert abs(refs["p1"].C - math.log(math.pi / 4)) < 1e-8
    assert refs["p1"].C_error < 1e-8


def test_p2_constant_against_dirichlet_integral(refs):
    exact = math.log(simplex_integral(2, 3) / 4.5)
    assert abs(refs["p2"].C - exact) < 1e-8


@pytest.mark.parametrize("name", ["p2", "blp2", "blpq2"])
def test_normalization(refs, name):
    assert normalization_residual(refs[name]) < 1e-6


@pytest.mark.parametrize("P", [P1, P2, BLP2, BLPQ2])
def test_invariant_suite(P):
    report = check_potential(P, npoints=200)
    assert all(ok for ok, _ in report.values()), report


def test_softmax_far_out(refs):
    ref = refs["blp2"]
    b = dict(zip(ref.vertices, ref.weights([-8.0, -8.0])))
    # exponents 8 on the low vertices, -8 on the others
    assert abs(sum(b.values()) - 1) < 1e-12
    assert abs(b[(-1, 0)] - 1 / (2 + 2 * math.exp(-16))) < 1e-12
    assert abs(b[(2, -1)] - math.exp(-16) / (2 + 2 * math.exp(-16))) < 1e-12
    assert np.allclose(ref.gradient([-40.0, -40.0]), [-0.5, -0.5], atol=1e-12)
    assert np.isfinite(ref.value([300.0, -500.0]))
    assert np.all(np.linalg.eigvalsh(ref.hessian([30.0, -20.0])) >= -1e-15)


def test_log_n_bound(refs):
    ref = refs["blpq2"]
    X = np.random.default_rng(1).normal(scale=10, size=(500, 2))
    gap = ref.value(X) - ref.C - ref.vbar(X)
    assert gap.min() >= -1e-12 and gap.max() <= math.log(5) + 1e-12
    assert abs(ref.value(np.zeros(2)) - ref.C - math.log(5)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(
    a=st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
    b=st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
    x=st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
)
def test_translation_composes(a, b, x):
    U = LogSumExp(np.array(BLP2.vertices, float), np.zeros(4))
    a, b, x = map(np.array, (a, b, x))
    once = U.translated(a + b)
    twice = U.translated(a).translated(b)
    assert abs(once.value(x) - twice.value(x)) < 1e-10
    assert abs(once.value(x) - (U.value(x + a + b) - U.value(a + b))) < 1e-10
    assert np.allclose(once.weights(np.zeros(2)), U.weights(a + b), atol=1e-14)


def test_gradient_finite_differences(refs):
    ref = refs["blpq2"]
    X = np.random.default_rng(2).uniform(-6, 6, size=(50, 2))
    h = 1e-5
    for i in range(2):
        e = np.eye(2)[i] * h
        fd = (ref.value(X + e) - ref.value(X - e)) / (2 * h)
        assert np.abs(fd - ref.gradient(X)[:, i]).max() < 1e-8


def test_limit_reference():
    face = compute_R(BLP2).minimal_face.face_vertices
    U = limit_reference(face, [0.5, 0.5])
    Q = compute_R(BLP2).Q
    assert np.allclose(U.gradient(np.zeros(2)), [float(q) for q in Q], atol=1e-15)
    assert abs(U.value(np.zeros(2))) < 1e-15
    for bad in ([0.5], [1.0, 0.0], [0.6, 0.6]):
        with pytest.raises(DegenerateWeights):
            limit_reference(face, bad)


def test_tail_halfwidth_certifies_bound():
    L = tail_halfwidth(P1, 1e-10)
    assert exponential_tail(1, inradius(P1), L) <= 1e-10 < exponential_tail(1, inradius(P1), L - 0.5)
    # 1-D tail in closed form: 2 exp(-L)
    assert abs(exponential_tail(1, 1.0, 3.0) - 2 * math.exp(-3)) < 1e-15
