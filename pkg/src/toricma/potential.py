"""The vertex log-sum-exp reference potential and its calculus.

``u0(x) = log sum_a exp(<p_a, x>) + C`` where ``p_a`` runs over the vertices
of the polytope and ``C`` is fixed by ``int exp(-u0) dx = Vol``.  Every
evaluation is max-shifted, so arguments of several hundred are harmless.
Point arrays have shape ``(..., n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import integrate, special

from .errors import DegenerateWeights, TailBoundFailure
from .polytope import LatticePolytope, volume

TAIL_TOL = 1e-10
QUAD_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class LogSumExp:
    """``U(x) = log sum_a w_a exp(<p_a, x>) + const`` stored with log-weights."""

    points: np.ndarray  # (N, n)
    log_weights: np.ndarray  # (N,)
    const: float = 0.0

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def weights0(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def _exponents(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.points.T + self.log_weights

    def value(self, x):
        z = self._exponents(x)
        zmax = z.max(axis=-1)
        return zmax + np.log(np.exp(z - zmax[..., None]).sum(axis=-1)) + self.const

    def weights(self, x):
        """Softmax weights at ``x``; they sum to one."""
        z = self._exponents(x)
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def gradient(self, x):
        return self.weights(x) @ self.points

    def hessian(self, x):
        # centred covariance form: no cancellation far out in a vertex cone
        b = self.weights(x)
        mean = b @ self.points
        dev = self.points - mean[..., None, :]
        return np.einsum("...a,...ai,...aj->...ij", b, dev, dev)

    def vbar(self, x):
        """Piecewise-linear support function ``max_a <p_a, x>``."""
        return (np.asarray(x, dtype=float) @ self.points.T).max(axis=-1)

    def translated(self, shift) -> "LogSumExp":
        """``x -> U(x + shift) - U(shift)``; its weights are the softmax at ``shift``."""
        shift = np.asarray(shift, dtype=float)
        z = self._exponents(shift)
        logb = z - special.logsumexp(z)
        return LogSumExp(self.points, logb, 0.0)


@dataclass(frozen=True, eq=False)
class ReferencePotential(LogSumExp):
    """The normalized vertex reference potential of a polytope."""

    C_error: float = 0.0
    volume: Fraction = Fraction(1)
    tail_bound: float = 0.0
    halfwidth: float = 0.0
    vertices: tuple = field(default=())

    @property
    def C(self) -> float:
        return self.const


def inradius(P: LatticePolytope) -> float:
    """Distance from O to the nearest facet hyperplane, ``min 1/|v_r|``."""
    return min(1.0 / math.sqrt(sum(c * c for c in v)) for v in P.facets)


def exponential_tail(n: int, rho: float, radius: float) -> float:
    """``int_{|x| > radius} exp(-rho |x|) dx`` over R^n."""
    sphere = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
    return sphere * special.gammaincc(n, rho * radius) * math.gamma(n) / rho**n


def tail_halfwidth(P: LatticePolytope, tol: float = TAIL_TOL) -> float:
    rho = inradius(P)
    if not rho > 0:
        raise TailBoundFailure("origin is not interior: exp(-vbar) has no decay")
    L = 1.0
    while exponential_tail(P.dim, rho, L) > tol:
        L += 0.5
    return L


def _integrate(f, n: int, L: float, tol: float):
    if n == 1:
        val, err = integrate.quad(
            lambda s: f(np.array([[s]]))[0], -L, L, points=[0.0], epsabs=tol, epsrel=0, limit=400
        )
        return val, err
    res = integrate.cubature(
        lambda X: f(X), np.full(n, -L), np.full(n, L), atol=tol, rtol=0, max_subdivisions=100000
    )
    if res.status != "converged":
        raise TailBoundFailure(f"adaptive cubature did not converge (error {res.error:.3g})")
    return float(res.estimate), float(res.error)


def normalization_constant(
    P: LatticePolytope, tail_tol: float = TAIL_TOL, quad_tol: float = QUAD_TOL
) -> tuple[float, float, dict]:
    """Constant ``C`` with ``int exp(-u0) = Vol(P)``, plus a certified absolute error.

    The integral of ``1 / sum exp(<p, x>)`` is split into a box ``[-L, L]^n``,
    integrated adaptively, and a tail bounded by ``exp(-rho |x|) >= exp(-vbar)``.
    """
    pts = np.array(P.vertices, dtype=float)
    base = LogSumExp(pts, np.zeros(len(pts)))
    L = tail_halfwidth(P, tail_tol)
    tail = exponential_tail(P.dim, inradius(P), L)
    val, qerr = _integrate(lambda X: np.exp(-base.value(X)), P.dim, L, quad_tol)
    vol = volume(P)
    C = math.log(val) - math.log(float(vol))
    # log(val + d) - log(val) <= d / val; the tail only adds mass
    err = (qerr + tail) / val
    return C, err, {"halfwidth": L, "tail_bound": tail, "quadrature_error": qerr, "integral": val}


def reference_potential(P: LatticePolytope, **kwargs) -> ReferencePotential:
    C, err, info = normalization_constant(P, **kwargs)
    pts = np.array(P.vertices, dtype=float)
    return ReferencePotential(
        pts,
        np.zeros(len(pts)),
        C,
        C_error=err,
        volume=volume(P),
        tail_bound=info["tail_bound"],
        halfwidth=info["halfwidth"],
        vertices=P.vertices,
    )


def limit_reference(face_vertices: Sequence[Sequence[int]], b: Sequence[float]) -> LogSumExp:
    """``log sum' b_a exp(<p_a, x>)`` over the vertices of a face."""
    b = np.asarray(b, dtype=float)
    pts = np.asarray(face_vertices, dtype=float)
    if b.shape != (len(pts),):
        raise DegenerateWeights("need one weight per face vertex")
    if np.any(b <= 0):
        raise DegenerateWeights(f"limit weights must be positive, got {b}")
    if abs(b.sum() - 1) > 1e-12:
        raise DegenerateWeights(f"limit weights must sum to 1, got {b.sum()}")
    return LogSumExp(pts, np.log(b), 0.0)


def normalization_residual(ref: ReferencePotential, tol: float = 1e-10) -> float:
    """``|int exp(-u0) dx - Vol|`` recomputed independently of ``C``."""
    val, err = _integrate(lambda X: np.exp(-ref.value(X)), ref.dim, ref.halfwidth, tol)
    return abs(val + 0.0 - float(ref.volume))


def check_potential(P: LatticePolytope, seed: int = 0, npoints: int = 100, ref=None) -> dict[str, tuple[bool, float]]:
    """Run the invariant suite of the reference potential on random points.

    Returns ``{check name: (passed, worst value)}``.
    """
    ref = ref or reference_potential(P)
    rng = np.random.default_rng(seed)
    X = rng.uniform(-6, 6, size=(npoints, P.dim))
    Y = rng.uniform(-6, 6, size=(npoints, P.dim))
    out = {}

    b = ref.weights(X)
    sum_err = float(np.abs(b.sum(axis=1) - 1).max())
    out["softmax sums to 1"] = (sum_err < 1e-14 and bool(np.all((b > 0) & (b < 1))), sum_err)

    grad = ref.gradient(X)
    ident = float(np.abs(grad - b @ ref.points).max())
    out["gradient = sum b p"] = (ident < 1e-12, ident)

    step = 1e-5
    fd = np.empty_like(X)
    for i in range(P.dim):
        e = np.zeros(P.dim)
        e[i] = step
        fd[:, i] = (ref.value(X + e) - ref.value(X - e)) / (2 * step)
    fd_err = float(np.abs(fd - grad).max())
    out["gradient vs finite differences"] = (fd_err < 1e-8, fd_err)

    eig = float(np.linalg.eigvalsh(ref.hessian(X)).min())
    out["hessian positive definite"] = (eig > 0, eig)

    inside = all(P.contains(g) for g in grad.tolist())
    out["gradient inside polytope"] = (inside, 0.0)

    gap = ref.value(X) - ref.C - ref.vbar(X)
    lo, hi = float(gap.min()), float(gap.max())
    out["0 <= u0 - C - vbar <= log N"] = (lo >= -1e-12 and hi <= math.log(len(ref.points)) + 1e-12, hi)

    mid = ref.value((X + Y) / 2) - (ref.value(X) + ref.value(Y)) / 2
    out["midpoint convexity"] = (float(mid.max()) <= 1e-12, float(mid.max()))

    res = normalization_residual(ref)
    out["normalization residual"] = (res < 1e-6, res)
    return out
