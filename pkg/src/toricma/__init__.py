"""Toric Fano invariants and a numerical continuity path for the real Monge-Ampere equation.

Exact layer (integers and fractions): :mod:`toricma.polytope`, :mod:`toricma.divisors`.
Floating point layer: :mod:`toricma.potential` and :mod:`toricma.solver`.
"""

from .divisors import base_locus_fixed_components, conic_angle_report, section_divisor
from .errors import (
    BarycenterAtOrigin,
    ConvexityLost,
    KEExists,
    MinimizerAtBoundary,
    NotConverged,
    PolytopeError,
    SolverError,
    ToricError,
)
from .polytope import (
    FanoInvariants,
    LatticePolytope,
    apply_unimodular,
    barycenter,
    compute_R,
    lattice_automorphisms,
    lattice_points,
    load_polytope,
    make_polytope,
    minimal_face,
    to_document,
    volume,
)
from .potential import LogSumExp, ReferencePotential, check_potential, limit_reference, reference_potential
from .solver import (
    GridWindow,
    PathRecord,
    SolutionState,
    continuity_path,
    default_halfwidth,
    default_schedule,
    energy_functionals,
    key_identity,
    make_window,
    solve_t,
    wang_zhu_diagnostics,
)

__version__ = "0.1.0"
