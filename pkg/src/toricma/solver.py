"""Finite-difference Newton solver for the real Monge-Ampere continuity family.

For ``0 <= t < R`` the toric potential ``u = u0 + phi`` solves

    det D^2 u = exp(-(1 - t) u0 - t u),    i.e.    det(D^2 u0 + D^2 phi) = exp(-u0 - t phi).

The unbounded domain is truncated to a square (or, for polytopes whose
symmetries the square would break, hexagonal) window around a movable
centre ``c``.  Inside the window we work in the translated frame
``x -> c + x``: with ``U0(x) = u0(c + x) - u0(c)`` and ``Phi(x) = phi(c + x) - phi(c)``
the equation reads

    log det(D^2 U0 + D^2 Phi) + U0 + t Phi + k = 0,    Phi(0) = 0,

where the scalar ``k = w_t(c)`` is an unknown.  When ``c = x_t`` this is the
transformed equation with ``k = m_t``.  Second derivatives are centred
differences along lattice directions; ghost values past the window edge come
from the closure described in :class:`_Stencil`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import interpolate, special

from .errors import (
    ConvexityLost,
    MinimizerAtBoundary,
    NotConverged,
    SolverError,
    TailNotCertified,
)
from .polytope import LatticePolytope, compute_R, lattice_automorphisms
from .potential import LogSumExp, ReferencePotential, exponential_tail, reference_potential

log = logging.getLogger(__name__)

TOL = 1e-9
MAX_NEWTON = 60


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True, eq=False)
class GridWindow:
    """Grid of ``M^n`` nodes with spacing ``h = 2 L / (M - 1)`` around ``center``.

    The active nodes are those with ``|<f, o>| <= K`` for every side form ``f``,
    where ``o`` is the integer offset from the centre node and ``K = (M - 1) / 2``.
    ``domain="square"`` uses the coordinate forms.  ``domain="hex"`` (2-D)
    adds the form ``i - s j`` that vanishes on the diagonal stencil direction
    ``(1, s)``; the resulting hexagon is invariant under every lattice map that
    permutes the stencil directions, which the square is not in general.
    Inactive nodes stay in the arrays and carry values transported from inside.
    """

    center: np.ndarray
    halfwidth: float
    M: int
    domain: str = "square"
    diagonal: int = 1

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if self.dim not in (1, 2):
            raise ValueError("the solver supports dimension 1 and 2 only")
        if self.M < 33 or self.M % 2 == 0:
            raise ValueError(f"grid resolution must be odd and >= 33, got {self.M}")
        if not self.h < self.halfwidth / 8:
            raise ValueError("grid spacing must be below halfwidth / 8")
        if self.domain not in ("square", "hex") or (self.domain == "hex" and self.dim != 2):
            raise ValueError(f"unknown domain {self.domain!r} in dimension {self.dim}")
        if self.diagonal not in (1, -1):
            raise ValueError("diagonal must be +1 or -1")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def h(self) -> float:
        return 2 * self.halfwidth / (self.M - 1)

    @property
    def K(self) -> int:
        return (self.M - 1) // 2

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.M,) * self.dim

    @property
    def offsets(self) -> np.ndarray:
        """Node positions relative to the centre, shape ``(M, ..., M, n)``."""
        ax = np.linspace(-self.halfwidth, self.halfwidth, self.M)
        return np.stack(np.meshgrid(*([ax] * self.dim), indexing="ij"), axis=-1)

    @property
    def nodes(self) -> np.ndarray:
        return self.offsets + self.center

    @property
    def center_index(self) -> tuple[int, ...]:
        return (self.K,) * self.dim

    def side_forms(self) -> np.ndarray:
        if self.domain == "hex":
            return np.array([[1, 0], [0, 1], [1, -self.diagonal]])
        return np.eye(self.dim, dtype=int)

    def depth(self, pos) -> np.ndarray:
        """``K - max_f |<f, o>|`` for integer array positions (last axis n); negative outside."""
        o = np.asarray(pos) - self.K
        return self.K - np.abs(o @ self.side_forms().T).max(axis=-1)

    def excess(self, pos) -> np.ndarray:
        """Total violation of the side inequalities, zero exactly on active positions."""
        o = np.asarray(pos) - self.K
        return np.maximum(0, np.abs(o @ self.side_forms().T) - self.K).sum(axis=-1)

    @property
    def mask(self) -> np.ndarray:
        return self.depth(_index_grid(self.M, self.dim)).reshape(self.shape) >= 0

    def contains(self, x, margin: float = 0.0) -> np.ndarray:
        """Whether points lie at least ``margin`` (in grid steps) inside the domain."""
        o = (np.asarray(x, dtype=float) - self.center) / self.h
        return np.abs(o @ self.side_forms().T).max(axis=-1) <= self.K - margin

    def distance_to_edge(self, x) -> float:
        """Euclidean distance from x to the domain boundary (x inside)."""
        F = self.side_forms()
        y = np.asarray(x, dtype=float) - self.center
        gaps = self.K * self.h - np.abs(F @ y)
        return float(np.min(gaps / np.linalg.norm(F, axis=1)))

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoid weights on the square; on the hexagon the piecewise linear
        rule on the triangulation cut by the diagonal (each triangle gives a
        third of its area to its corners).  Zero on inactive nodes."""
        if self.domain == "square":
            w1 = np.full(self.M, self.h)
            w1[[0, -1]] *= 0.5
            out = w1
            for _ in range(self.dim - 1):
                out = np.multiply.outer(out, w1)
            return out
        return _triangle_counts(self.mask.astype(float), self.diagonal) * self.h**2 / 6

    def boundary_mask(self) -> np.ndarray:
        return self.depth(_index_grid(self.M, self.dim)).reshape(self.shape) == 0

    def shifted(self, shift) -> "GridWindow":
        return replace(self, center=self.center + np.asarray(shift, dtype=float))

    def padded(self, pad: int) -> "GridWindow":
        """Same spacing, centre and shape of domain, ``pad`` extra nodes on every side."""
        return replace(self, halfwidth=self.halfwidth + pad * self.h, M=self.M + 2 * pad)


def _triangle_counts(act: np.ndarray, diagonal: int) -> np.ndarray:
    """Number of active triangles at each node of the triangulated grid."""
    count = np.zeros(act.shape)
    # corners of cell (i, j): a = (i, j), b = (i+1, j), c = (i, j+1), d = (i+1, j+1)
    corners = {
        "a": (slice(None, -1), slice(None, -1)),
        "b": (slice(1, None), slice(None, -1)),
        "c": (slice(None, -1), slice(1, None)),
        "d": (slice(1, None), slice(1, None)),
    }
    tris = [("a", "b", "d"), ("a", "c", "d")] if diagonal == 1 else [("a", "b", "c"), ("b", "c", "d")]
    for tri in tris:
        full = np.prod([act[corners[k]] for k in tri], axis=0)
        for k in tri:
            count[corners[k]] += full
    return count


def stencil_directions(P: LatticePolytope) -> tuple[tuple[int, ...], ...]:
    """Lattice directions of the second differences.

    In 2-D the mixed derivative comes from a diagonal second difference; the
    diagonal parallel to more facet normals is used so that the stencil keeps
    the symmetries of the fan.
    """
    if P.dim == 1:
        return ((1,),)
    plus = sum(1 for v in P.facets if v[0] == v[1])
    minus = sum(1 for v in P.facets if v[0] == -v[1])
    return ((1, 0), (0, 1), (1, 1) if plus >= minus else (1, -1))


def preferred_domain(P: LatticePolytope) -> str:
    """``"hex"`` when some lattice symmetry of P does not preserve the square window."""
    if P.dim != 2:
        return "square"
    for U in lattice_automorphisms(P):
        if any(sorted(map(abs, row)) != [0, 1] for row in U):
            return "hex"
    return "square"


def make_window(P: LatticePolytope, halfwidth: float, M: int, center=None, domain: str = "auto") -> GridWindow:
    """Window matched to the stencil of P; ``domain="auto"`` picks :func:`preferred_domain`."""
    if domain == "auto":
        domain = preferred_domain(P)
    diagonal = stencil_directions(P)[2][1] if P.dim == 2 else 1
    return GridWindow(np.zeros(P.dim) if center is None else center, halfwidth, M, domain, diagonal)


MAX_SOFTMAX_GAP = 30.0


def softmax_gap(P: LatticePolytope, window: GridWindow) -> float:
    """Largest gap between the two top exponents ``<p, x>`` over the window edge.

    Deep in a vertex cone ``D^2 u0`` is of size ``exp(-gap)``; once that falls
    below the roundoff of the second differences the discrete Hessian of the
    initial guess stops being positive definite.
    """
    pts = np.array(P.vertices, dtype=float)
    X = window.nodes[window.boundary_mask()]
    z = np.sort(X @ pts.T, axis=1)
    return float(np.max(z[:, -1] - z[:, -2]))


def default_halfwidth(P: LatticePolytope, domain: str = "auto", cap: float = 12.0) -> float:
    """Largest halfwidth up to ``cap`` (20 in 1-D) whose window edge keeps the
    softmax gap at or below :data:`MAX_SOFTMAX_GAP`, in steps of 1/2."""
    if P.dim == 1:
        return 20.0
    unit = make_window(P, 64.0, 129, domain=domain)
    per_unit = softmax_gap(P, unit) / unit.halfwidth
    return float(min(cap, math.floor(2 * MAX_SOFTMAX_GAP / per_unit) / 2))


def _hessian_weights(directions) -> np.ndarray:
    """Matrices W_k with D^2 phi = sum_k W_k * (second difference along d_k)."""
    n = len(directions[0])
    if n == 1:
        return np.ones((1, 1, 1))
    s = directions[2][1]  # +1 or -1 for the diagonal
    E11 = np.array([[1.0, 0], [0, 0]])
    E22 = np.array([[0, 0], [0, 1.0]])
    S = np.array([[0, 1.0], [1.0, 0]])
    # d3 = a + 2 s b + c  =>  b = s (d3 - a - c) / 2
    return np.array([E11 - s * S / 2, E22 - s * S / 2, s * S / 2])


class _Stencil:
    """Second differences along lattice directions, as sparse neighbour operators.

    A ghost node outside the domain takes a weighted mean of the values at its
    reflections along each facet normal ``v_r``, weighted by the softmax mass
    of facet ``r`` at the node.  Along the ray of a facet the solution is
    asymptotically invariant in the direction ``v_r``, and the mass weighting
    keeps the closure continuous where the dominant facet changes.  Facets
    whose normal cannot reflect the ghost onto the grid use the mirror across
    the violated side (a zero normal derivative on the square; on the hexagon
    the mean of the reflections along the two stencil directions that cross
    the side).  Ghosts past a corner are reflected through the corner.
    Without ``normals`` every ghost uses the mirror.  Rows of inactive nodes
    are zero.
    """

    def __init__(self, window: GridWindow, directions, normals=None, masses=None):
        if window.domain == "hex" and tuple(directions[2]) != (1, window.diagonal):
            raise ValueError("hexagonal window does not match the stencil diagonal")
        self.window = window
        self.directions = directions
        self.weights = _hessian_weights(directions)
        M, n = window.M, window.dim
        grid = _index_grid(M, n)
        self.size = M**n
        self.active = np.flatnonzero(window.mask.ravel())
        self.plus, self.minus = [], []
        for d in directions:
            for sign, store in ((1, self.plus), (-1, self.minus)):
                store.append(_neighbour_operator(grid + sign * np.asarray(d), window, directions, normals, masses))

    def second_differences(self, f: np.ndarray) -> np.ndarray:
        """Array of shape (K, size)."""
        f = f.ravel()
        h2 = self.window.h**2
        return np.array([(p @ f - 2 * f + m @ f) / h2 for p, m in zip(self.plus, self.minus)])

    def hessian(self, f: np.ndarray) -> np.ndarray:
        D = self.second_differences(f)
        return np.einsum("kij,kx->xij", self.weights, D)

    def gradient(self, f: np.ndarray) -> np.ndarray:
        """Centred first differences along the axes, using the same ghost values."""
        f = f.ravel()
        n = self.window.dim
        return np.stack([(self.plus[i] @ f - self.minus[i] @ f) / (2 * self.window.h) for i in range(n)], axis=-1)


def _neighbour_operator(idx: np.ndarray, window: GridWindow, directions, normals, masses) -> sp.csr_matrix:
    """Sparse row-stochastic map from node values to values at positions ``idx``.

    Row ``r`` belongs to node ``r``; rows of inactive nodes map the node to itself.
    """
    N = window.M**window.dim
    active = window.mask.ravel()
    src = np.arange(N)
    inside = window.excess(idx) == 0
    keep = inside & active
    rows = [src[keep], src[~active]]
    cols = [np.ravel_multi_index(tuple(idx[keep].T), window.shape), src[~active]]
    vals = [np.ones(keep.sum()), np.ones((~active).sum())]
    for r in np.flatnonzero(~inside & active):
        targets = _ghost_targets(idx[r], window, directions, normals, None if masses is None else masses[r])
        for g, wgt in targets:
            rows.append(np.array([r]))
            cols.append(np.array([np.ravel_multi_index(tuple(g), window.shape)]))
            vals.append(np.array([wgt]))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))


def _ghost_targets(g: np.ndarray, window: GridWindow, directions, normals, mass, cutoff: float = 1e-14):
    K = window.K
    F = window.side_forms()
    val = F @ (g - K)
    out = np.flatnonzero(np.abs(val) > K)
    sides = F[out] * np.sign(val[out])[:, None]  # outward forms of the violated sides
    if len(out) > 1:
        corner = np.rint(np.linalg.solve(sides[:2].astype(float), np.full(2, K))).astype(int) + K
        targets = [(2 * corner - g, 1.0)]
    else:
        f = sides[0]
        excess = int(f @ (g - K)) - K
        if window.domain == "square":
            mirror = [(g - 2 * excess * f, 1.0)]
        else:
            crossing = [np.asarray(d) for d in directions if f @ np.asarray(d) != 0]
            mirror = [(g - 2 * excess * int(f @ d) * d, 1.0 / len(crossing)) for d in crossing]
        targets = mirror
        if normals is not None:
            acc: dict[tuple, float] = {}
            total = mass.sum()
            for v, m in zip(normals, mass):
                wgt = m / total
                if wgt < cutoff:
                    continue
                fv = int(f @ v)
                cand = None
                if fv != 0 and (2 * excess) % abs(fv) == 0:
                    cand = g - (2 * excess // fv) * v
                    if window.excess(cand) != 0:
                        cand = None
                for target, share in ([(cand, 1.0)] if cand is not None else mirror):
                    key = tuple(int(c) for c in target)
                    acc[key] = acc.get(key, 0.0) + wgt * share
            s = sum(acc.values())
            targets = [(np.array(k), w / s) for k, w in acc.items()]
    for target, _ in targets:
        if window.excess(target) != 0:
            raise ValueError(f"ghost closure of {g} leaves the domain")
    return targets


def facet_masses(P: LatticePolytope, frame, X) -> np.ndarray:
    """Relative weight of each facet at each point, shape (points, facets).

    Proportional to the product of the softmax weights of the facet's
    vertices, so a facet dominates exactly along its own ray.
    """
    member = np.array([[int(P.lam(r, p) == -1) for p in P.vertices] for r in range(len(P.facets))], dtype=float)
    z = np.asarray(X, dtype=float) @ frame.points.T + frame.log_weights
    logb = z - special.logsumexp(z, axis=-1, keepdims=True)
    score = logb @ member.T
    return np.exp(score - special.logsumexp(score, axis=-1, keepdims=True))


def _det(B: np.ndarray) -> np.ndarray:
    if B.shape[-1] == 1:
        return B[..., 0, 0]
    return B[..., 0, 0] * B[..., 1, 1] - B[..., 0, 1] * B[..., 1, 0]


def _positive_definite(B: np.ndarray) -> bool:
    if B.shape[-1] == 1:
        return bool(np.all(B[..., 0, 0] > 0))
    return bool(np.all(B[..., 0, 0] > 0) and np.all(_det(B) > 0))


def _inverse(B: np.ndarray) -> np.ndarray:
    if B.shape[-1] == 1:
        return 1.0 / B
    det = _det(B)
    inv = np.empty_like(B)
    inv[..., 0, 0] = B[..., 1, 1] / det
    inv[..., 1, 1] = B[..., 0, 0] / det
    inv[..., 0, 1] = -B[..., 0, 1] / det
    inv[..., 1, 0] = -B[..., 1, 0] / det
    return inv


# ---------------------------------------------------------------------------
# the discrete problem on one window


class _Problem:
    """The discrete equation on one window, in the window frame.

    Vectors span every node; inactive nodes carry zero residual and are not
    unknowns of the Newton system.
    """

    def __init__(self, P, ref: ReferencePotential, t: float, window: GridWindow):
        self.P, self.ref, self.t, self.window = P, ref, t, window
        self.frame = ref.translated(window.center)
        X = window.offsets.reshape(-1, window.dim)
        self.normals = np.array(P.facets, dtype=int)
        self.masses = facet_masses(P, self.frame, X)
        self.stencil = _Stencil(window, stencil_directions(P), self.normals, self.masses)
        self.U0 = self.frame.value(X)
        self.A = self.frame.hessian(X)
        self.active = self.stencil.active
        self.inactive = ~window.mask.ravel()
        self.center_flat = int(np.ravel_multi_index(window.center_index, window.shape))
        self.center_unknown = int(np.searchsorted(self.active, self.center_flat))

    def B(self, Phi):
        return self.A + self.stencil.hessian(Phi)

    def convex(self, B) -> bool:
        return _positive_definite(B[self.active])

    def log_residual(self, Phi, k, B=None):
        B = self.B(Phi) if B is None else B
        with np.errstate(invalid="ignore", divide="ignore"):
            G = np.log(_det(B)) + self.U0 + self.t * Phi.ravel() + k
        G[self.inactive] = 0.0
        return G

    def density_residual(self, Phi, k, G):
        # (det B - e^{-w}) e^{m}, with w = U0 + t Phi + k on the nodes
        w = self.U0 + self.t * Phi.ravel() + k
        return np.exp(-(w - w[self.active].min())) * np.expm1(G)

    def jacobian(self, Phi, B):
        st = self.stencil
        B = B.copy()
        B[self.inactive] = np.eye(self.window.dim)
        Binv = _inverse(B)
        coef = np.einsum("xij,kji->kx", Binv, st.weights) / self.window.h**2
        L = sp.diags(self.t - 2 * coef.sum(axis=0))
        for kdir in range(len(st.directions)):
            L = L + sp.diags(coef[kdir]) @ (st.plus[kdir] + st.minus[kdir])
        L = L.tocsr()[self.active][:, self.active]
        N = len(self.active)
        ones = sp.csr_matrix(np.ones((N, 1)))
        corner = sp.csr_matrix(([1.0], ([0], [self.center_unknown])), shape=(1, N))
        J = sp.bmat([[L, ones], [corner, None]], format="csr")
        scale = 1.0 / (np.abs(J).max(axis=1).toarray().ravel())
        return sp.diags(scale) @ J, scale


# ---------------------------------------------------------------------------
# solution states


@dataclass(frozen=True, eq=False)
class SolutionState:
    """A converged solution at one value of t on one window."""

    t: float
    window: GridWindow
    Phi: np.ndarray  # relative potential in the window frame, Phi(centre) = 0
    k: float  # w_t at the window centre
    phi: np.ndarray  # u - u0 at the window nodes
    x_t: np.ndarray
    m_t: float
    b: np.ndarray  # softmax weights of u0 at x_t
    residual_norm: float  # max |det D^2 u - e^{-w_t}| e^{m_t}
    log_residual_norm: float  # max |log det D^2 u + w_t| (roundoff-limited far out)
    key_identity_residual: float
    key_identity_tail: float
    iterations: int
    ref: ReferencePotential = field(repr=False)
    polytope: LatticePolytope = field(repr=False)

    @property
    def dim(self) -> int:
        return self.window.dim

    @property
    def w(self) -> np.ndarray:
        """``w_t = t u + (1 - t) u0 = u0 + t phi`` at the nodes."""
        return self.ref.value(self.window.nodes) + self.t * self.phi

    @property
    def u(self) -> np.ndarray:
        return self.ref.value(self.window.nodes) + self.phi

    def hessian_u(self) -> np.ndarray:
        prob = _problem_for(self)
        return prob.B(self.Phi).reshape(self.window.shape + (self.dim, self.dim))

    def gradient_u(self) -> np.ndarray:
        st = _problem_for(self).stencil
        g = self.ref.gradient(self.window.nodes).reshape(-1, self.dim) + st.gradient(self.phi)
        return g.reshape(self.window.shape + (self.dim,))


def _problem_for(state: SolutionState) -> _Problem:
    return _Problem(state.polytope, state.ref, state.t, state.window)


def _absolute_phi(prob: _Problem, Phi: np.ndarray, k: float) -> np.ndarray:
    """Recover ``phi = u - u0`` at the nodes from the frame unknowns."""
    t, ref, window = prob.t, prob.ref, prob.window
    if t > 0:
        phi_c = (k - float(ref.value(window.center))) / t
    else:
        # t = 0 fixes phi only up to a constant: take the t -> 0 limit,
        # int phi e^{-u0} = 0
        dens = np.exp(-ref.value(window.nodes)) * window.quadrature_weights()
        phi_c = -float((dens * Phi).sum() / dens.sum())
    return Phi + phi_c


_CUBIC = [(a, d - a) for d in range(4) for a in range(d, -1, -1)]


def _local_cubic(window: GridWindow, f: np.ndarray, idx) -> callable:
    """Least-squares cubic through ``f`` on the nodes within two stencil steps of ``idx``.

    The node set is invariant under every lattice map that permutes the
    stencil directions, so the fit commutes with the symmetries of the
    polytope.  Returns ``x -> (value, gradient, hessian)``.
    """
    s = window.diagonal
    r = np.arange(-2, 3)
    O = np.stack(np.meshgrid(r, r, indexing="ij"), axis=-1).reshape(-1, 2)
    O = O[np.abs(O[:, 0] - s * O[:, 1]) <= 2]
    vals = f[tuple((np.asarray(idx) + O).T)]
    V = np.stack([O[:, 0] ** a * O[:, 1] ** b for a, b in _CUBIC], axis=1).astype(float)
    coef = np.linalg.lstsq(V, vals, rcond=None)[0]
    x0, h = window.nodes[tuple(idx)], window.h

    def evaluate(x):
        p, q = (np.asarray(x) - x0) / h
        val, g, H = 0.0, np.zeros(2), np.zeros((2, 2))
        for c, (a, b) in zip(coef, _CUBIC):
            val += c * p**a * q**b
            if a:
                g[0] += c * a * p ** (a - 1) * q**b
            if b:
                g[1] += c * b * p**a * q ** (b - 1)
            if a > 1:
                H[0, 0] += c * a * (a - 1) * p ** (a - 2) * q**b
            if b > 1:
                H[1, 1] += c * b * (b - 1) * p**a * q ** (b - 2)
            if a and b:
                H[0, 1] += c * a * b * p ** (a - 1) * q ** (b - 1)
        H[1, 0] = H[0, 1]
        return val, g / h, H / h**2

    return evaluate


def _refine_minimizer(window: GridWindow, ref, t: float, phi: np.ndarray, w: np.ndarray):
    """Discrete argmin of w_t followed by Newton steps on a local interpolant of phi."""
    idx = np.unravel_index(int(np.argmin(np.where(window.mask, w, np.inf))), w.shape)
    h = window.h
    if window.depth(np.array(idx)) < 2:
        raise MinimizerAtBoundary("minimizer of w_t within 2h of the window edge", t)
    x = window.nodes[idx].copy()
    if t == 0:
        local = None
    elif window.dim == 1:
        spline = interpolate.CubicSpline(window.nodes[:, 0], phi)

        def local(x):
            return float(spline(x[0])), np.array([spline(x[0], 1)]), np.array([[spline(x[0], 2)]])

    else:
        local = _local_cubic(window, phi, idx)

    def derivs(x):
        g, H = ref.gradient(x), ref.hessian(x)
        if local is None:
            return g, H
        _, gl, Hl = local(x)
        return g + t * gl, H + t * Hl

    for _ in range(20):
        g, H = derivs(x)
        step = np.linalg.solve(H, g)
        if np.linalg.norm(step) > 2 * h:
            step *= 2 * h / np.linalg.norm(step)
        x = x - step
        if np.linalg.norm(step) < 1e-14 * (1 + np.linalg.norm(x)):
            break
    if not window.contains(x, margin=2):
        raise MinimizerAtBoundary("minimizer of w_t within 2h of the window edge", t)
    wx = float(ref.value(x)) + (t * local(x)[0] if local is not None else 0.0)
    return x, wx


def _fill_inactive(P: LatticePolytope, ref, window: GridWindow, f: np.ndarray) -> np.ndarray:
    """Copy values onto inactive nodes by the ray transport of :func:`_walk_inside`."""
    out = ~window.mask
    if not out.any():
        return f
    f = f.copy()
    pos = _walk_inside(P, ref, window, np.argwhere(out))
    f[out] = f[tuple(pos.T)]
    return f


def initial_phi(ref: LogSumExp, X: np.ndarray, scale: float = 2.0) -> np.ndarray:
    """Cold-start guess ``s log sum exp(<p, x> / s) - u0``.

    Bounded, and its Hessian decays like ``exp(-|x|)`` rather than
    ``exp(-2|x|)``, which matches the far field of the solution.
    """
    soft = LogSumExp(ref.points / scale, np.zeros(len(ref.points)))
    return scale * soft.value(X) - (ref.value(X) - ref.const)


def _damped_target(G: np.ndarray, n: int) -> np.ndarray:
    """Newton right-hand side: ``G`` where the determinant is too small, and
    ``n (1 - exp(-G/n))`` where it is too large.

    The second branch is the Newton step for the concave form
    ``det^(1/n) exp(w/n) - 1``; it never asks the log-determinant to drop by
    more than ``n``, which is what keeps the update convex.  The two branches
    agree to first order at 0.
    """
    return np.where(G > 0, -n * np.expm1(-np.maximum(G, 0) / n), G)


def solve_t(
    P: LatticePolytope,
    ref: ReferencePotential,
    t: float,
    window: GridWindow,
    init=None,
    tol: float = TOL,
    max_iter: int = MAX_NEWTON,
) -> SolutionState:
    """Solve the continuity equation at ``t`` on ``window`` by damped Newton.

    ``init`` is ``None`` (start from ``phi = 0``), a previous
    :class:`SolutionState` on the same window, or a tuple ``(Phi, k)`` in the
    window frame.
    """
    prob = _Problem(P, ref, t, window)
    if init is None:
        phi0 = initial_phi(ref, window.nodes)
        Phi = phi0
        k = float(ref.value(window.center)) + t * float(phi0[window.center_index])
    elif isinstance(init, SolutionState):
        if init.window.M != window.M or init.window.domain != window.domain or np.any(init.window.center != window.center):
            raise ValueError("warm start state lives on a different window")
        Phi = init.Phi.copy()
        k = float(ref.value(window.center)) + t * float(init.phi[window.center_index])
    else:
        Phi, k = np.asarray(init[0], dtype=float).copy(), float(init[1])
    Phi = Phi - Phi[window.center_index]

    B = prob.B(Phi)
    if not prob.convex(B) and init is not None:
        # a carried warm start need not satisfy the closure at new window edges
        log.debug("t=%.4f: warm start not discretely convex, cold start instead", t)
        Phi = initial_phi(ref, window.nodes)
        Phi = Phi - Phi[window.center_index]
        k = float(ref.value(window.center)) + t * float(Phi[window.center_index])
        B = prob.B(Phi)
    if not prob.convex(B):
        raise ConvexityLost(
            f"initial guess is not discretely convex (softmax gap {softmax_gap(P, window):.1f} at the window edge;"
            " a smaller halfwidth may help)",
            t,
        )
    G = prob.log_residual(Phi, k, B)
    R = prob.density_residual(Phi, k, G)
    it = 0
    while np.abs(R).max() >= tol:
        if it >= max_iter:
            raise NotConverged(f"Newton stalled at residual {np.abs(R).max():.3e}", t)
        it += 1
        J, scale = prob.jacobian(Phi, B)
        rhs = -np.concatenate([_damped_target(G[prob.active], window.dim), [0.0]]) * scale
        delta = spla.spsolve(J.tocsc(), rhs)
        dPhi = np.zeros(window.shape)
        dPhi.flat[prob.active] = delta[:-1]
        dk = delta[-1]
        step, accepted = 1.0, False
        g0, r0 = np.linalg.norm(G), np.abs(R).max()
        convex_seen = False
        while step > 2.0**-30:
            Pn, kn = Phi + step * dPhi, k + step * dk
            Bn = prob.B(Pn)
            if prob.convex(Bn):
                convex_seen = True
                Gn = prob.log_residual(Pn, kn, Bn)
                Rn = prob.density_residual(Pn, kn, Gn)
                if np.all(np.isfinite(Gn)) and (
                    np.linalg.norm(Gn) < (1 - 1e-4 * step) * g0 or np.abs(Rn).max() < (1 - 1e-4 * step) * r0
                ):
                    accepted = True
                    break
            step /= 2
        if not accepted:
            if not convex_seen:
                raise ConvexityLost("no damping keeps the discrete Hessian positive definite", t)
            worst = window.nodes.reshape(-1, window.dim)[int(np.argmax(np.abs(R)))]
            raise NotConverged(f"line search failed at residual {r0:.3e} near x = {np.round(worst, 3)}", t)
        Phi, k, B, G, R = Pn, kn, Bn, Gn, Rn
        log.debug("t=%.4f newton %d step %.3g residual %.3e", t, it, step, np.abs(R).max())

    Phi = _fill_inactive(P, ref, window, Phi)
    phi = _absolute_phi(prob, Phi, k)
    w = ref.value(window.nodes) + t * phi
    x_t, m_t = _refine_minimizer(window, ref, t, phi, w)
    b = ref.weights(x_t)
    state = SolutionState(
        t=float(t),
        window=window,
        Phi=Phi,
        k=float(k),
        phi=phi,
        x_t=x_t,
        m_t=m_t,
        b=b,
        residual_norm=float(np.abs(R).max()),
        log_residual_norm=float(np.abs(G).max()),
        key_identity_residual=float("nan"),
        key_identity_tail=float("nan"),
        iterations=it,
        ref=ref,
        polytope=P,
    )
    try:
        res, tail = key_identity(state)
    except TailNotCertified:
        res, tail = float("nan"), float("inf")
    return replace(state, key_identity_residual=res, key_identity_tail=tail)


# ---------------------------------------------------------------------------
# identities and diagnostics


def wang_zhu_diagnostics(state: SolutionState) -> dict:
    """m_t and the linear-growth fit ``kappa = min_boundary (w_t - m_t) / |x - x_t|``."""
    mask = state.window.boundary_mask()
    X = state.window.nodes[mask]
    dist = np.linalg.norm(X - state.x_t, axis=-1)
    ratio = (state.w[mask] - state.m_t) / dist
    j = int(np.argmin(ratio))
    kappa = float(ratio[j])
    # offset C in w_t >= kappa |x - x_t| - C, measured over the whole window
    act = state.window.mask
    all_dist = np.linalg.norm(state.window.nodes[act] - state.x_t, axis=-1)
    offset = float(np.max(kappa * all_dist - state.w[act]))
    return {"m_t": state.m_t, "kappa_fit": kappa, "kappa_node": X[j], "offset_fit": offset}


COLLAR = 0.75  # collar width for window integrals, as a fraction of the halfwidth


def _walk_inside(P: LatticePolytope, ref, window: GridWindow, pos: np.ndarray) -> np.ndarray:
    """Map integer grid positions (k, n) of ``window`` to active nodes.

    An outside position steps by ``+v_r`` along the normal of its dominant
    facet (phi is asymptotically invariant in that direction), or by one grid
    step towards the domain when that does not bring it closer.
    """
    M = window.M
    normals = np.array(P.facets, dtype=int)
    pos = np.array(pos, dtype=int)
    if window.domain == "hex":
        steps = np.array([[1, 0], [0, 1], [1, window.diagonal]])
        steps = np.concatenate([steps, -steps])

    out = np.flatnonzero(window.excess(pos) > 0)
    while len(out):
        q = pos[out]
        x = window.center + (q - (M - 1) / 2) * window.h
        r = facet_masses(P, ref, x).argmax(axis=1)
        cand = q + normals[r]
        worse = window.excess(cand) >= window.excess(q)
        if window.domain == "hex":
            trial = q[worse][:, None, :] + steps[None]
            best = np.argmin(window.excess(trial), axis=1)
            cand[worse] = trial[np.arange(len(best)), best]
        else:
            cand[worse] = q[worse] - np.sign(q[worse] - np.clip(q[worse], 0, M - 1))
        pos[out] = cand
        out = out[window.excess(cand) > 0]
    return pos


def _index_grid(M: int, n: int) -> np.ndarray:
    return np.stack([g.ravel() for g in np.meshgrid(*([np.arange(M)] * n), indexing="ij")], axis=-1)


def extend_phi(state: SolutionState, pad: int) -> tuple[GridWindow, np.ndarray]:
    """phi on a padded window, carried outward along the rays of the fan."""
    window = state.window
    big = window.padded(pad)
    pos = _walk_inside(state.polytope, state.ref, window, _index_grid(big.M, window.dim) - pad)
    return big, state.phi[tuple(pos.T)].reshape(big.shape)


def key_identity(state: SolutionState) -> tuple[float, float]:
    """Norm of ``(1/Vol) int D u0 e^{-w_t} dx + t/(1-t) P_c`` and a bound on the neglected tail.

    The integral runs over the window plus a collar on which phi is extended
    by :func:`extend_phi`; beyond the collar ``e^{-w_t}`` is bounded through
    the linear-growth fit.
    """
    wz = wang_zhu_diagnostics(state)
    kappa = wz["kappa_fit"]
    if not kappa > 0:
        raise TailNotCertified("linear growth fit of w_t is not positive", state.t)
    ref = state.ref
    vol = float(ref.volume)
    pad = int(round(COLLAR * state.window.halfwidth / state.window.h))
    window, phi = extend_phi(state, pad)
    w = ref.value(window.nodes) + state.t * phi
    dens = np.exp(-w) * window.quadrature_weights()
    grad = ref.gradient(window.nodes)
    integral = np.tensordot(dens, grad, axes=window.dim) / vol
    inv = compute_R(state.polytope)
    pc = np.array([float(x) for x in inv.barycenter])
    vec = integral + state.t / (1 - state.t) * pc
    r = window.distance_to_edge(state.x_t)
    pmax = float(np.linalg.norm(ref.points, axis=1).max())
    tail = pmax * math.exp(-state.m_t) * exponential_tail(window.dim, kappa, r) / vol
    return float(np.linalg.norm(vec)), float(tail)


def key_identity_residual(state: SolutionState) -> float:
    return key_identity(state)[0]


def energy_functionals(state: SolutionState, nodes: int = 16) -> dict:
    """Toric I and J of phi; J by Gauss-Legendre quadrature in the scaling parameter."""
    window = state.window
    prob = _problem_for(state)
    H = prob.stencil.hessian(state.phi)
    A = prob.A
    wts = window.quadrature_weights().ravel()
    vol = float(state.ref.volume)
    phi = state.phi.ravel()
    detA = _det(A)

    def I_over_s(s):
        return float(np.sum(wts * phi * (detA - _det(A + s * H)))) / vol

    I = I_over_s(1.0)
    xs, ws = np.polynomial.legendre.leggauss(nodes)
    s = (xs + 1) / 2
    J = float(sum(w / 2 * I_over_s(si) for si, w in zip(s, ws)))
    return {"I": I, "J": J}


def harnack_diagnostic(state: SolutionState) -> float:
    """``t (sup(-phi) - n sup phi)`` over the window."""
    phi = state.phi[state.window.mask]
    return state.t * (float(np.max(-phi)) - state.dim * float(np.max(phi)))


def gradient_containment(state: SolutionState, inner: float = 0.5) -> float:
    """Largest violation ``max(0, -1 - lambda_r(Du))`` over facets and the nodes of
    the inner part of the window (depth at least ``inner * K`` grid steps).

    The truncated far field leaves a boundary layer a few units wide in which
    the discrete gradient can overshoot the polytope; it is excluded here.
    """
    window = state.window
    depth = window.depth(_index_grid(window.M, window.dim)).reshape(window.shape)
    g = state.gradient_u()[depth >= inner * window.K]
    V = np.array(state.polytope.facets, dtype=float)
    return float(max(0.0, np.max(-1 - g @ V.T)))


def transformed_residual(state: SolutionState) -> float:
    """Max residual of the transformed equation rebuilt from absolute data.

    ``U(x) = u(c + x) - u(c)`` and ``U0(x) = u0(c + x) - u0(c)`` are formed from
    the stored ``phi`` and the reference, then ``log det D^2 U + t U + (1 - t) U0 + w_t(c)``
    is evaluated on the nodes, weighted like the solver residual.
    """
    window, ref, t = state.window, state.ref, state.t
    ci = window.center_index
    u0 = ref.value(window.nodes)
    U = (u0 + state.phi) - (u0[ci] + state.phi[ci])
    U0 = u0 - u0[ci]
    wc = u0[ci] + t * state.phi[ci]
    prob = _problem_for(state)
    DU = prob.A + prob.stencil.hessian(U - U0)
    act = prob.active
    G = np.log(_det(DU[act])) + (t * U + (1 - t) * U0).ravel()[act] + wc
    w = (t * U + (1 - t) * U0).ravel()[act] + wc
    return float(np.max(np.exp(-(w - w.min())) * np.abs(np.expm1(G))))


# ---------------------------------------------------------------------------
# recentering


def recenter(window: GridWindow, state: SolutionState, snap: bool = True):
    """Move the window centre to x_t and carry the solution over as a warm start.

    With ``snap`` the shift is rounded to whole grid steps, so the carried
    values are exact on the overlap of the two windows; new nodes are filled
    by the same ray transport as :func:`extend_phi`.  Returns
    ``(new_window, (Phi, k))`` ready for :func:`solve_t`.
    """
    shift = state.x_t - window.center
    if snap:
        shift = np.round(shift / window.h) * window.h
    new = window.shifted(shift)
    phi_new = _carry(state, new)
    ci = new.center_index
    Phi = phi_new - phi_new[ci]
    k = float(state.ref.value(new.center)) + state.t * float(phi_new[ci])
    return new, (Phi, k)


def _carry(state: SolutionState, new: GridWindow) -> np.ndarray:
    old = state.window
    shift = (new.center - old.center) / old.h
    if np.allclose(shift, np.round(shift), atol=1e-9):
        pos = _index_grid(new.M, new.dim) + np.round(shift).astype(int)
        pos = _walk_inside(state.polytope, state.ref, old, pos)
        return state.phi[tuple(pos.T)].reshape(new.shape)
    axes = [np.linspace(-old.halfwidth, old.halfwidth, old.M) + c for c in old.center]
    lo, hi = old.center - old.halfwidth, old.center + old.halfwidth
    X = np.clip(new.nodes.reshape(-1, new.dim), lo, hi)
    f = interpolate.RegularGridInterpolator(axes, state.phi, method="cubic")
    return f(X).reshape(new.shape)


# ---------------------------------------------------------------------------
# the continuity path


def default_schedule(R: float, t0: float = 0.5, count: int = 8, margin: float = 0.02) -> list[float]:
    """``0`` then ``R (1 - 2^-k (1 - t0 / R))`` for k = 0.., capped at ``R - margin``."""
    ts = [0.0]
    cap = R - margin
    for j in range(count):
        t = R * (1 - 2.0**-j * (1 - t0 / R))
        if t >= cap:
            break
        ts.append(t)
    if ts[-1] < cap:
        ts.append(cap)
    return ts


@dataclass
class PathRecord:
    polytope: LatticePolytope
    R: Fraction
    states: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    off_face_mass: list = field(default_factory=list)
    face_indices: tuple = ()
    failed_at: float | None = None
    error: Exception | None = None

    @property
    def ts(self) -> list[float]:
        return [s.t for s in self.states]

    @property
    def complete(self) -> bool:
        return self.failed_at is None

    @property
    def c_estimate(self) -> float | None:
        return self.states[-1].m_t if self.states else None

    @property
    def b_limit(self) -> np.ndarray | None:
        """Weights at the final t, renormalised over the vertices of the minimal face."""
        if not self.states or not self.face_indices:
            return None
        b = self.states[-1].b[list(self.face_indices)]
        return b / b.sum()

    @property
    def b_extrapolated(self) -> np.ndarray | None:
        """Linear extrapolation of the full weight vector to ``t = R``."""
        if len(self.states) < 2:
            return None
        s1, s2 = self.states[-2], self.states[-1]
        R = float(self.R)
        return s2.b + (s2.b - s1.b) * (R - s2.t) / (s2.t - s1.t)


def state_diagnostics(state: SolutionState) -> dict:
    wz = wang_zhu_diagnostics(state)
    ij = energy_functionals(state)
    phi = state.phi[state.window.mask]
    return {
        "t": state.t,
        "m_t": state.m_t,
        "sup_phi": float(phi.max()),
        "sup_neg_phi": float((-phi).max()),
        "I": ij["I"],
        "J": ij["J"],
        "H_t": harnack_diagnostic(state) if state.t > 0 else float("nan"),
        "kappa": wz["kappa_fit"],
        "key_residual": state.key_identity_residual,
        "key_tail": state.key_identity_tail,
        "residual": state.residual_norm,
        "gradient_violation": gradient_containment(state),
    }


def _solve_recentred(P, ref, t, window, init, recenter_fraction, tol):
    recenters = 0
    while True:
        state = solve_t(P, ref, t, window, init, tol=tol)
        if np.max(np.abs(state.x_t - window.center)) <= recenter_fraction * window.halfwidth or recenters >= 3:
            return state, window, recenters
        window, init = recenter(window, state)
        recenters += 1
        log.info("t=%.4f: recentred window to %s", t, window.center)


def continuity_path(
    P: LatticePolytope,
    schedule: Sequence[float],
    M: int = 129,
    halfwidth: float | None = None,
    ref: ReferencePotential | None = None,
    center=None,
    recenter_fraction: float = 0.05,
    raise_on_failure: bool = True,
    tol: float = TOL,
    max_bisections: int = 4,
    domain: str = "auto",
) -> PathRecord:
    """March t along ``schedule`` with warm starts and automatic recentering.

    A failed step is retried through intermediate values of t, halving it
    at most ``max_bisections`` levels deep; only schedule points are recorded.
    ``domain`` is passed to :func:`make_window`; ``halfwidth`` defaults to
    :func:`default_halfwidth`.
    """
    schedule = [float(t) for t in schedule]
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly increasing")
    inv = compute_R(P)
    if schedule and (schedule[0] < 0 or schedule[-1] >= inv.R):
        raise ValueError(f"schedule must lie in [0, R) with R = {inv.R}")
    ref = ref or reference_potential(P)
    if halfwidth is None:
        halfwidth = default_halfwidth(P, domain)
    window = make_window(P, halfwidth, M, center, domain)
    record = PathRecord(P, inv.R)
    if inv.minimal_face is not None:
        face = set(inv.minimal_face.face_vertices)
        record.face_indices = tuple(i for i, p in enumerate(P.vertices) if p in face)
    init = None
    for t in schedule:
        try:
            stack, recenters = [t], 0
            while stack:
                target = stack[-1]
                try:
                    state, window, r = _solve_recentred(P, ref, target, window, init, recenter_fraction, tol)
                except SolverError:
                    if not isinstance(init, SolutionState) or len(stack) > max_bisections:
                        raise
                    stack.append((init.t + target) / 2)
                    log.info("t=%.4f: retrying through t=%.4f", target, stack[-1])
                    continue
                recenters += r
                init = state
                stack.pop()
        except SolverError as exc:
            if exc.t is None:
                exc.t = t
            record.failed_at, record.error = t, exc
            if raise_on_failure:
                raise
            break
        diag = state_diagnostics(state)
        diag["recenters"] = recenters
        record.states.append(state)
        record.diagnostics.append(diag)
        if record.face_indices:
            off = [i for i in range(len(state.b)) if i not in record.face_indices]
            record.off_face_mass.append(float(state.b[off].sum()))
        log.info("t=%.4f done: x_t=%s m_t=%.6f key=%.2e", t, state.x_t, state.m_t, state.key_identity_residual)
    return record
