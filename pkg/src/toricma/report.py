"""CSV tables and grid dumps.

Grid dump layout: one line of ASCII JSON (the header), a newline, then the
raw little-endian float64 arrays listed in ``header["fields"]``, each of
shape ``header["shape"]`` in C order, back to back.  The ``active`` field is
1 on the nodes of the solution domain and 0 on nodes outside it (hexagonal
windows), whose values are transported copies.  :func:`read_grid` is the
reference reader.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .polytope import FanoInvariants, format_vector
from .solver import PathRecord, SolutionState

GRID_FORMAT = "toricma-grid"
GRID_VERSION = 1


def path_columns(dim: int, nvert: int) -> list[str]:
    return (
        ["t"]
        + [f"x_{i + 1}" for i in range(dim)]
        + ["m_t"]
        + [f"b_{a + 1}" for a in range(nvert)]
        + ["residual", "log_residual", "key_residual", "key_tail", "I", "J", "H_t", "kappa"]
    )


def path_rows(record: PathRecord) -> list[list]:
    rows = []
    for s, d in zip(record.states, record.diagnostics):
        rows.append(
            [s.t]
            + list(map(float, s.x_t))
            + [s.m_t]
            + list(map(float, s.b))
            + [s.residual_norm, s.log_residual_norm, s.key_identity_residual, s.key_identity_tail]
            + [d["I"], d["J"], d["H_t"], d["kappa"]]
        )
    return rows


def write_path_csv(record: PathRecord, path: Path) -> Path:
    P = record.polytope
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(path_columns(P.dim, len(P.vertices)))
        for row in path_rows(record):
            w.writerow([f"{x:.12g}" for x in row])
    return path


def invariant_rows(inv: FanoInvariants) -> list[tuple[str, str, str]]:
    def dec(v):
        return "(" + ", ".join(f"{float(x):.12g}" for x in v) + ")"

    rows = [
        ("R", str(inv.R), f"{float(inv.R):.12g}"),
        ("volume", str(inv.volume), f"{float(inv.volume):.12g}"),
        ("barycenter", format_vector(inv.barycenter), dec(inv.barycenter)),
        ("ke_exists", str(inv.ke_exists), ""),
    ]
    if inv.Q is not None:
        rows.append(("Q", format_vector(inv.Q), dec(inv.Q)))
        face = inv.minimal_face
        rows.append(("face_vertices", " ".join(map(str, face.face_vertices)), ""))
        rows.append(("face_dim", str(face.dim), ""))
    return rows


def write_invariants_csv(inv: FanoInvariants, path: Path) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "exact", "decimal"])
        w.writerows(invariant_rows(inv))
    return path


def write_grid(state: SolutionState, path: Path) -> Path:
    """Dump phi, w_t and the node coordinates of a solution state."""
    fields = {"phi": state.phi, "w": state.w}
    for i in range(state.dim):
        fields[f"x_{i + 1}"] = state.window.nodes[..., i]
    fields["active"] = state.window.mask.astype(float)
    header = {
        "format": GRID_FORMAT,
        "version": GRID_VERSION,
        "dtype": "<f8",
        "shape": list(state.window.shape),
        "fields": list(fields),
        "t": state.t,
        "center": list(map(float, state.window.center)),
        "halfwidth": state.window.halfwidth,
        "domain": state.window.domain,
        "diagonal": state.window.diagonal,
        "h": state.window.h,
        "x_t": list(map(float, state.x_t)),
        "m_t": state.m_t,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("ascii") + b"\n")
        for arr in fields.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def read_grid(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        if header.get("format") != GRID_FORMAT:
            raise ValueError(f"{path} is not a grid dump")
        shape = tuple(header["shape"])
        count = int(np.prod(shape))
        arrays = {}
        for name in header["fields"]:
            arrays[name] = np.frombuffer(fh.read(8 * count), dtype=header["dtype"]).reshape(shape)
    return header, arrays
