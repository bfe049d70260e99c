"""
The one-dimensional case as a sanity check.

For P1 = [-1, 1] the reference potential is log(2 cosh x) + log(pi/4), and the
symmetric solution of u'' = exp(-(1 - t) u0 - t u) can be found independently
by shooting from x = 0.  The finite-difference path should agree with it to
second order in the grid step.
"""

import math

import numpy as np
from scipy import integrate, optimize

from toricma import continuity_path, make_polytope, reference_potential

P = make_polytope([(-1,), (1,)])
ref = reference_potential(P)
print(f"C = {ref.C:.12f}, log(pi/4) = {math.log(math.pi / 4):.12f}")


def shoot(t, x, x_max=40.0):
    """u - u0 on x >= 0 with u'(0) = 0 and u'(x_max) = 1."""
    u0 = lambda s: np.logaddexp(s, -s) + math.log(math.pi / 4)

    def rhs(s, y):
        return [y[1], math.exp(-(1 - t) * u0(s) - t * y[0])]

    def miss(a):
        return integrate.solve_ivp(rhs, (0, x_max), [a, 0], rtol=1e-12, atol=1e-12).y[1, -1] - 1

    a = optimize.brentq(miss, -5, 5, xtol=1e-14)
    sol = integrate.solve_ivp(rhs, (0, x_max), [a, 0], rtol=1e-12, atol=1e-12, dense_output=True)
    return sol.sol(np.abs(x))[0] - u0(x)


for M in (1001, 2001, 4001):
    s = continuity_path(P, [0, 0.5], M=M, halfwidth=20, ref=ref).states[-1]
    x = s.window.nodes[:, 0]
    inner = np.abs(x) <= 10
    err = np.abs(s.phi[inner] - shoot(0.5, x[inner])).max()
    print(f"M = {M:5d}  h = {s.window.h:.4f}  sup error on |x| <= 10: {err:.3e}")
