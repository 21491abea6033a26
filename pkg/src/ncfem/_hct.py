"""Hsieh-Clough-Tocher macro-element: local C^1 cubic bases on the 3-split.

Each triangle is split at its centroid into three subtriangles carrying one
cubic apiece.  The twelve degrees of freedom are the three vertex values,
the six vertex-gradient components, and the normal derivative at each outer
edge midpoint (taken along the globally fixed edge normal so the dof is
single-valued across neighbouring triangles).  The local basis is obtained
by solving, per triangle, the stacked linear system of internal C^0/C^1
continuity constraints and dof-duality conditions.
"""

from __future__ import annotations

import numpy as np

from ._poly import mono_tabulate, monomial_exponents

EXPS3 = monomial_exponents(3)  # 10 cubic monomials

# parent-barycentric coordinates of subtriangle corners: subtriangle s has
# corners (centroid, A_{s+1}, A_{s+2}); rows map sub-bary -> parent-bary.
SUB_TO_PARENT = np.empty((3, 3, 3))
for _s in range(3):
    SUB_TO_PARENT[_s, 0] = (1 / 3, 1 / 3, 1 / 3)
    SUB_TO_PARENT[_s, 1] = np.eye(3)[(_s + 1) % 3]
    SUB_TO_PARENT[_s, 2] = np.eye(3)[(_s + 2) % 3]

_C0_PARAMS = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
_C1_PARAMS = np.array([1.0 / 6.0, 0.5, 5.0 / 6.0])


def hct_coefficients(mesh):
    """Per-triangle HCT basis coefficients, shape (F, 3, 10, 12).

    Entry [t, s, i, j] is the coefficient of scaled centered monomial i on
    subtriangle s for the basis function dual to local dof j.  Local dof
    order: (value, d/dx, d/dy) per vertex, then the three edge-midpoint
    normal derivatives in local edge order (edge k opposite vertex k).
    """
    F = mesh.n_triangles
    coef = np.empty((F, 3, 10, 12))
    verts = mesh.vertices[mesh.triangles]  # (F, 3, 2)
    centroids = mesh.centroid
    diam = mesh.diameter
    emid = mesh.edge_midpoint[mesh.triangle_edges]  # (F, 3, 2)
    enrm = mesh.edge_normal[mesh.triangle_edges]  # (F, 3, 2)
    rhs = np.zeros((33, 12))
    rhs[21:, :] = np.eye(12)
    for t in range(F):
        A = verts[t]
        c0 = centroids[t]
        h = diam[t]
        rows = np.zeros((33, 30))

        def mono(points, order):
            xi = (np.atleast_2d(points) - c0) / h
            return mono_tabulate(EXPS3, xi, order, inv_h=1.0 / h)

        r = 0
        for k in range(3):
            sa, sb = (k + 1) % 3, (k + 2) % 3
            seg = A[k] - c0
            pts0 = c0 + _C0_PARAMS[:, None] * seg
            vals = mono(pts0, 0)[0]  # (4, 10)
            rows[r : r + 4, 10 * sa : 10 * sa + 10] = vals
            rows[r : r + 4, 10 * sb : 10 * sb + 10] = -vals
            r += 4
            nu = np.array([-seg[1], seg[0]]) / np.hypot(*seg)
            pts1 = c0 + _C1_PARAMS[:, None] * seg
            dn = mono(pts1, 1)[1] @ nu  # (3, 10)
            rows[r : r + 3, 10 * sa : 10 * sa + 10] = dn
            rows[r : r + 3, 10 * sb : 10 * sb + 10] = -dn
            r += 3
        # dof rows: vertex value + gradient on a subtriangle containing A_k
        for k in range(3):
            s = (k + 1) % 3
            tab = mono(A[k], 1)
            rows[21 + 3 * k, 10 * s : 10 * s + 10] = tab[0][0]
            rows[21 + 3 * k + 1, 10 * s : 10 * s + 10] = tab[1][0, :, 0]
            rows[21 + 3 * k + 2, 10 * s : 10 * s + 10] = tab[1][0, :, 1]
        # outer edge k lies in subtriangle k
        for k in range(3):
            dn = mono(emid[t, k], 1)[1][0] @ enrm[t, k]
            rows[30 + k, 10 * k : 10 * k + 10] = dn
        X, _, rank, _ = np.linalg.lstsq(rows, rhs, rcond=None)
        if rank < 30:
            raise RuntimeError(f"degenerate HCT system on triangle {t} (rank {rank})")
        resid = np.abs(rows @ X - rhs).max()
        if resid > 1e-7:
            raise RuntimeError(
                f"HCT construction failed on triangle {t}: residual {resid:.2e}"
            )
        coef[t] = X.reshape(3, 10, 12)
    return coef
