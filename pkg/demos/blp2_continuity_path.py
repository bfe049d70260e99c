"""
Following the continuity path on Bl_p P2 towards t = R = 6/7.

The equation det D^2 u = exp(-(t u + (1 - t) u0)) is solved on a square
window for increasing t.  The minimum point x_t of w_t drifts along the
diagonal towards infinity, the softmax weights of u0 at x_t concentrate on
the two vertices of the face containing Q, and the gradient of u0 at x_t
approaches the facet <(1, 1), y> = -1.

About a minute on a 129 x 129 grid.  Set TORICMA_VERBOSITY=info to watch
the Newton solver recentre its window.
"""

import numpy as np

from toricma import compute_R, continuity_path, make_polytope

P = make_polytope([(-1, 0), (0, -1), (-1, 2), (2, -1)], name="Bl_p P2")
inv = compute_R(P)
print(f"R = {inv.R}, face vertices {inv.minimal_face.face_vertices}")

record = continuity_path(P, [0, 0.3, 0.5, 0.7, 0.8, 0.84], M=129, halfwidth=12)
face = list(record.face_indices)

print("    t     x_t               m_t     off-face mass  <(1,1), Du0(x_t)>  key residual")
for s, d in zip(record.states, record.diagnostics):
    off = 1 - s.b[face].sum()
    slope = float(s.ref.gradient(s.x_t) @ [1.0, 1.0])
    print(f"{s.t:6.3f}  {np.array2string(s.x_t, precision=3):16s} {s.m_t:7.4f}  {off:12.4e}  {slope:16.5f}  {d['key_residual']:.2e}")

print("renormalised face weights at the last t:", record.b_limit)
