"""Lagrange and B-spline basis functions in 1D with first derivatives,
plus their 3D tensor products.

Lagrange bases live on the parent element [-1, 1] with equally spaced
nodes.  B-spline bases live on an open knot vector; evaluation returns
only the p+1 functions that can be nonzero on the containing knot span.
"""

import numpy as np


class DomainError(ValueError):
    """Evaluation point outside the basis' parametric domain."""


# ---------------------------------------------------------------------------
# Lagrange bases on [-1, 1]
# ---------------------------------------------------------------------------

class LagrangeBasis1D:
    """Order-p Lagrange basis on [-1, 1] with equally spaced nodes."""

    def __init__(self, order):
        order = int(order)
        if order < 1:
            raise ValueError(f"Lagrange order must be >= 1, got {order}")
        self.order = order
        self.nodes = np.linspace(-1.0, 1.0, order + 1)

    @property
    def num_functions(self):
        return self.order + 1

    def __repr__(self):
        return f"LagrangeBasis1D(order={self.order})"


def lagrange_eval_many(order, xi):
    """Values and derivatives of all order+1 Lagrange functions at points xi.

    Parameters
    ----------
    order : int
        Polynomial order p.
    xi : array_like
        Parent coordinates in [-1, 1], any shape; flattened internally.

    Returns
    -------
    values, derivatives : ndarray
        Arrays of shape (len(xi), order + 1).
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    nodes = np.linspace(-1.0, 1.0, order + 1)
    m = xi.shape[0]
    n = order + 1
    vals = np.ones((m, n))
    ders = np.zeros((m, n))
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            vals[:, i] *= (xi - nodes[j]) / (nodes[i] - nodes[j])
        for k in range(n):
            if k == i:
                continue
            term = np.full(m, 1.0 / (nodes[i] - nodes[k]))
            for j in range(n):
                if j == i or j == k:
                    continue
                term *= (xi - nodes[j]) / (nodes[i] - nodes[j])
            ders[:, i] += term
    return vals, ders


def lagrange_eval(basis, xi):
    """Evaluate a LagrangeBasis1D at one parent coordinate.

    Raises DomainError if xi lies outside [-1, 1] (up to roundoff slack).
    """
    xi = float(xi)
    if xi < -1.0 - 1e-12 or xi > 1.0 + 1e-12:
        raise DomainError(f"parent coordinate {xi} outside [-1, 1]")
    vals, ders = lagrange_eval_many(basis.order, np.array([xi]))
    return vals[0], ders[0]


# ---------------------------------------------------------------------------
# B-spline bases on open knot vectors
# ---------------------------------------------------------------------------

class KnotVector:
    """Open, uniform knot vector for an order-p B-spline basis.

    The first and last knot values are repeated p+1 times and all
    interior knots are simple with uniform spacing, so the basis has
    C^(p-1) continuity across interior spans.
    """

    def __init__(self, order, knots):
        self.order = int(order)
        self.knots = np.asarray(knots, dtype=float)
        self.num_functions = len(self.knots) - self.order - 1
        self._validate()

    @classmethod
    def open_uniform(cls, order, num_spans, start, end):
        """Open uniform knot vector with num_spans elements over [start, end]."""
        if end <= start:
            raise ValueError(f"empty parametric interval [{start}, {end}]")
        if num_spans < 1:
            raise ValueError("need at least one knot span")
        breakpoints = np.linspace(start, end, num_spans + 1)
        knots = np.concatenate([
            np.full(order, breakpoints[0]),
            breakpoints,
            np.full(order, breakpoints[-1]),
        ])
        return cls(order, knots)

    def _validate(self):
        p, t = self.order, self.knots
        if self.num_functions < p + 1:
            raise ValueError("knot vector too short for the given order")
        if np.any(np.diff(t) < 0):
            raise ValueError("knot vector must be non-decreasing")
        if not (np.all(t[:p + 1] == t[0]) and np.all(t[-(p + 1):] == t[-1])):
            raise ValueError("knot vector must be open "
                             "(end knots repeated order+1 times)")
        interior = t[p + 1:-(p + 1)]
        if interior.size and np.unique(interior).size != interior.size:
            raise ValueError("interior knots must be simple")

    @property
    def start(self):
        return self.knots[0]

    @property
    def end(self):
        return self.knots[-1]

    @property
    def num_spans(self):
        return self.num_functions - self.order

    def greville(self):
        """Greville abscissae (knot averages), one per basis function."""
        p, t = self.order, self.knots
        n = self.num_functions
        return np.array([t[i + 1:i + p + 1].mean() for i in range(n)])

    def find_spans(self, x):
        """Span index for each point; the last span is closed on the right."""
        x = np.asarray(x, dtype=float)
        s = np.searchsorted(self.knots, x, side="right") - 1
        return np.clip(s, self.order, self.num_functions - 1)


class BSplineBasis1D:
    """Stateless evaluator over a KnotVector."""

    def __init__(self, knot_vector):
        self.kv = knot_vector

    @property
    def order(self):
        return self.kv.order

    @property
    def num_functions(self):
        return self.kv.num_functions


def bspline_span_eval(kv, x, span):
    """Values and derivatives of the p+1 local functions on given spans.

    This is the Cox-de Boor recursion restricted to the nonzero window,
    vectorized over points; 0/0 terms never arise because only non-empty
    spans are addressed.  Passing an explicit span permits one-sided
    evaluation exactly at an interior knot.

    Parameters
    ----------
    kv : KnotVector
    x : ndarray
        Parametric coordinates, shape (m,).
    span : ndarray
        Span index per point, order <= span <= num_functions-1.

    Returns
    -------
    first : ndarray
        Index of the first supported function per point (span - order).
    values, derivatives : ndarray
        Shape (m, order + 1); column r belongs to function first + r.
    """
    p = kv.order
    t = kv.knots
    x = np.asarray(x, dtype=float)
    span = np.asarray(span, dtype=np.intp)
    m = x.shape[0]

    vals = np.zeros((m, p + 1))
    vals[:, 0] = 1.0
    left = np.empty((m, p))
    right = np.empty((m, p))
    low = np.ones((m, 1))  # degree p-1 window, filled when j == p-1
    for j in range(1, p + 1):
        left[:, j - 1] = x - t[span + 1 - j]
        right[:, j - 1] = t[span + j] - x
        saved = np.zeros(m)
        for r in range(j):
            denom = right[:, r] + left[:, j - r - 1]
            temp = vals[:, r] / denom
            vals[:, r] = saved + right[:, r] * temp
            saved = left[:, j - r - 1] * temp
        vals[:, j] = saved
        if j == p - 1:
            low = vals[:, :p].copy()

    ders = np.zeros((m, p + 1))
    for r in range(p + 1):
        i = span - p + r
        if r >= 1:
            d1 = t[i + p] - t[i]
            ok = d1 > 0
            ders[ok, r] += low[ok, r - 1] / d1[ok]
        if r <= p - 1:
            d2 = t[i + p + 1] - t[i + 1]
            ok = d2 > 0
            ders[ok, r] -= low[ok, r] / d2[ok]
    ders *= p
    return span - p, vals, ders


def bspline_eval_many(kv, x):
    """Window evaluation at many points with automatic span lookup."""
    x = np.asarray(x, dtype=float)
    lo, hi = kv.start, kv.end
    slack = 1e-12 * max(1.0, abs(hi - lo))
    if np.any(x < lo - slack) or np.any(x > hi + slack):
        raise DomainError("parametric coordinate outside the knot range")
    return bspline_span_eval(kv, x, kv.find_spans(x))


def bspline_eval(basis, x):
    """Evaluate a BSplineBasis1D at one parametric coordinate.

    Returns (first_function_index, values, derivatives) for the p+1
    functions supported on the containing span.
    """
    kv = basis.kv if isinstance(basis, BSplineBasis1D) else basis
    first, vals, ders = bspline_eval_many(kv, np.array([float(x)]))
    return int(first[0]), vals[0], ders[0]


# ---------------------------------------------------------------------------
# 3D tensor products
# ---------------------------------------------------------------------------

class Basis3D:
    """Tensor product of three 1D bases (Lagrange or B-spline per axis).

    Function index (i, j, k) maps to the flat position (i*ny + j)*nz + k,
    i.e. lexicographic with the z index fastest.
    """

    def __init__(self, basis_x, basis_y, basis_z):
        self.axes = (basis_x, basis_y, basis_z)

    @property
    def window_shape(self):
        return tuple(b.order + 1 for b in self.axes)


def _axis_eval(axis_basis, x):
    if isinstance(axis_basis, LagrangeBasis1D):
        vals, ders = lagrange_eval_many(axis_basis.order, np.array([float(x)]))
        if not (-1.0 - 1e-12 <= float(x) <= 1.0 + 1e-12):
            raise DomainError(f"parent coordinate {x} outside [-1, 1]")
        return 0, vals[0], ders[0]
    return bspline_eval(axis_basis, x)


def basis3d_eval(family, point):
    """Values and parametric-space gradients of the local 3D window.

    Parameters
    ----------
    family : Basis3D
    point : sequence of 3 floats
        Per-axis parametric (B-spline) or parent (Lagrange) coordinates.

    Returns
    -------
    firsts : tuple of int
        First supported function index per axis.
    values : ndarray, shape (w,)
    gradients : ndarray, shape (w, 3)
        w is the product of the per-axis window sizes; flat ordering is
        lexicographic with the z-axis index fastest.
    """
    evals = [_axis_eval(b, c) for b, c in zip(family.axes, point)]
    firsts = tuple(e[0] for e in evals)
    (vx, dx), (vy, dy), (vz, dz) = ((e[1], e[2]) for e in evals)
    values = np.einsum("i,j,k->ijk", vx, vy, vz).reshape(-1)
    grads = np.empty((values.size, 3))
    grads[:, 0] = np.einsum("i,j,k->ijk", dx, vy, vz).reshape(-1)
    grads[:, 1] = np.einsum("i,j,k->ijk", vx, dy, vz).reshape(-1)
    grads[:, 2] = np.einsum("i,j,k->ijk", vx, vy, dz).reshape(-1)
    return firsts, values, grads
