"""Evaluable coefficient fields for right-hand sides and reference solutions.

A field is anything the assemblers and norm evaluators can sample on the
integration partition.  Analytic fields evaluate from physical points;
fields derived from finite element functions evaluate triangle-locally
(and force subcell integration when they live on the HCT split).  Every
field declares a polynomial `degree` (None means smooth; a fixed
high-order rule, degree 12, is used).
"""

from __future__ import annotations

import numpy as np

SMOOTH_DEGREE = 12

__all__ = [
    "FieldBase",
    "ScalarField",
    "VectorField",
    "MatrixField",
    "zero_field",
    "fe_value",
    "fe_gradient",
    "fe_rotated_gradient",
    "fe_hessian",
    "sym_curl_of_pair",
    "sym_gradient_of_pair",
    "field_sum",
    "field_scale",
    "ExactSolution",
    "SMOOTH_DEGREE",
]


class FieldBase:
    degree = None  # polynomial degree, None = smooth
    n_subcells = 1
    shape = ()

    def quad_degree(self):
        return SMOOTH_DEGREE if self.degree is None else self.degree

    def eval_batch(self, ts, s, bary, parent_bary, phys):
        """Sample on subcell s (s=None on a plain-triangle partition).

        `bary` are the partition barycentric points, `parent_bary` the same
        points in triangle coordinates, `phys` the physical positions of
        shape (nts, k, 2).  Returns (nts, k) + self.shape.
        """
        raise NotImplementedError


class _CallableField(FieldBase):
    def __init__(self, fn, degree=None):
        self.fn = fn
        self.degree = degree

    def eval_batch(self, ts, s, bary, parent_bary, phys):
        out = np.asarray(self.fn(phys[..., 0], phys[..., 1]), dtype=float)
        want = phys.shape[:-1] + self.shape
        if out.shape != want:
            out = np.broadcast_to(out, want)
        return out


class ScalarField(_CallableField):
    shape = ()


class VectorField(_CallableField):
    shape = (2,)


class MatrixField(_CallableField):
    shape = (2, 2)


def zero_field(shape=()):
    cls = {(): ScalarField, (2,): VectorField, (2, 2): MatrixField}[tuple(shape)]
    return cls(lambda x, y: np.zeros(np.shape(x) + tuple(shape)), degree=0)


class _FeDerivedField(FieldBase):
    """Field obtained from one or two finite element functions."""

    def __init__(self, funcs, order, combine, shape, degree):
        self.funcs = funcs
        self.order = order
        self._combine = combine
        self.shape = shape
        self.degree = degree
        self.n_subcells = max(f.space.n_subcells for f in funcs)

    def eval_batch(self, ts, s, bary, parent_bary, phys):
        vals = []
        for f in self.funcs:
            if f.space.n_subcells == 1:
                vals.append(f.evaluate_batch(ts, 0, parent_bary, self.order)[self.order])
            else:
                if s is None:
                    raise ValueError(
                        "field on the HCT split sampled on a plain-triangle partition"
                    )
                vals.append(f.evaluate_batch(ts, s, bary, self.order)[self.order])
        return self._combine(*vals)


def _derived_degree(f, order):
    return max(f.space.poly_degree - order, 0)


def fe_value(f):
    return _FeDerivedField([f], 0, lambda v: v, (), _derived_degree(f, 0))


def fe_gradient(f):
    return _FeDerivedField([f], 1, lambda g: g, (2,), _derived_degree(f, 1))


def fe_rotated_gradient(f):
    """Rotated gradient (-df/dy, df/dx) of a scalar function."""

    def combine(g):
        return np.stack([-g[..., 1], g[..., 0]], axis=-1)

    return _FeDerivedField([f], 1, combine, (2,), _derived_degree(f, 1))


def fe_hessian(f):
    return _FeDerivedField([f], 2, lambda h: h, (2, 2), _derived_degree(f, 2))


def sym_curl_of_pair(f1, f2):
    """Symmetric part of the rowwise rotated gradient of (f1, f2).

    For Phi = (f1, f2) this is sym [[-f1_y, f1_x], [-f2_y, f2_x]].
    """

    def combine(g1, g2):
        out = np.empty(g1.shape[:-1] + (2, 2))
        out[..., 0, 0] = -g1[..., 1]
        out[..., 1, 1] = g2[..., 0]
        off = 0.5 * (g1[..., 0] - g2[..., 1])
        out[..., 0, 1] = off
        out[..., 1, 0] = off
        return out

    deg = max(_derived_degree(f1, 1), _derived_degree(f2, 1))
    return _FeDerivedField([f1, f2], 1, combine, (2, 2), deg)


def sym_gradient_of_pair(f1, f2):
    """Linear strain of the vector field (f1, f2): sym of the Jacobian."""

    def combine(g1, g2):
        out = np.empty(g1.shape[:-1] + (2, 2))
        out[..., 0, 0] = g1[..., 0]
        out[..., 1, 1] = g2[..., 1]
        off = 0.5 * (g1[..., 1] + g2[..., 0])
        out[..., 0, 1] = off
        out[..., 1, 0] = off
        return out

    deg = max(_derived_degree(f1, 1), _derived_degree(f2, 1))
    return _FeDerivedField([f1, f2], 1, combine, (2, 2), deg)


class _CombinedField(FieldBase):
    def __init__(self, fields, weights):
        shapes = {f.shape for f in fields}
        if len(shapes) != 1:
            raise ValueError("cannot combine fields of different shapes")
        self.fields = fields
        self.weights = weights
        self.shape = shapes.pop()
        if any(f.degree is None for f in fields):
            self.degree = None
        else:
            self.degree = max(f.degree for f in fields)
        self.n_subcells = max(f.n_subcells for f in fields)

    def eval_batch(self, ts, s, bary, parent_bary, phys):
        acc = None
        for w, f in zip(self.weights, self.fields):
            v = w * f.eval_batch(ts, s, bary, parent_bary, phys)
            acc = v if acc is None else acc + v
        return acc


def field_sum(a, b, wa=1.0, wb=1.0):
    return _CombinedField([a, b], [wa, wb])


def field_scale(a, w):
    return _CombinedField([a], [w])


class ExactSolution:
    """Reference solution with analytic derivatives up to second order."""

    def __init__(self, value, gradient=None, hessian=None, degree=None):
        self.value = value
        self.gradient = gradient
        self.hessian = hessian
        self.degree = degree

    def eval(self, order, x, y):
        fn = (self.value, self.gradient, self.hessian)[order]
        if fn is None:
            raise ValueError(f"reference provides no derivative of order {order}")
        shape = ((), (2,), (2, 2))[order]
        out = np.asarray(fn(x, y), dtype=float)
        want = np.shape(x) + shape
        if out.shape != want:
            out = np.broadcast_to(out, want)
        return out
