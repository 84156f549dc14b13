"""Gauss-Legendre quadrature rules on [-1, 1] and their 3D tensor products.

Nodes are computed as roots of the Legendre polynomial P_n by Newton
iteration on the three-term recurrence, so any order up to ``MAX_POINTS``
is available without tabulated coefficients.
"""

import numpy as np

MAX_POINTS = 16

_NEWTON_TOL = 1e-15
_NEWTON_MAXIT = 100


class UnsupportedOrderError(ValueError):
    """Requested point count outside the supported range."""


class GaussRule1D:
    """An n-point Gauss-Legendre rule on the parent interval [-1, 1].

    Attributes
    ----------
    order : int
        Number of quadrature points.
    points : ndarray
        Abscissae, strictly increasing and symmetric about 0.
    weights : ndarray
        Positive weights summing to 2.
    """

    def __init__(self, order, points, weights):
        self.order = int(order)
        self.points = np.asarray(points, dtype=float)
        self.weights = np.asarray(weights, dtype=float)

    def __repr__(self):
        return f"GaussRule1D(order={self.order})"


class GaussRule3D:
    """Tensor product of three 1D rules over [-1, 1]^3.

    Flattened point list is lexicographic in (i, j, k) with the z index
    fastest, matching the basis-function ordering used elsewhere.
    """

    def __init__(self, rule_x, rule_y, rule_z):
        self.rules = (rule_x, rule_y, rule_z)
        px, py, pz = rule_x.points, rule_y.points, rule_z.points
        wx, wy, wz = rule_x.weights, rule_y.weights, rule_z.weights
        nx, ny, nz = len(px), len(py), len(pz)
        pts = np.empty((nx * ny * nz, 3))
        grid = np.meshgrid(px, py, pz, indexing="ij")
        for a in range(3):
            pts[:, a] = grid[a].reshape(-1)
        self.points = pts
        self.weights = (wx[:, None, None] * wy[None, :, None]
                        * wz[None, None, :]).reshape(-1)

    @property
    def num_points(self):
        return self.points.shape[0]


def _legendre_and_derivative(n, x):
    """Evaluate P_n and P_n' at x via the Bonnet recurrence."""
    p0 = np.ones_like(x)
    p1 = x.copy()
    if n == 0:
        return p0, np.zeros_like(x)
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = n * (x * p1 - p0) / (x * x - 1.0)
    return p1, dp


def gauss_rule(n):
    """Build the n-point Gauss-Legendre rule on [-1, 1].

    Parameters
    ----------
    n : int
        Number of points, 1 <= n <= MAX_POINTS.  An n-point rule
        integrates polynomials of degree 2n-1 exactly.

    Raises
    ------
    UnsupportedOrderError
        If n is outside the supported range.
    """
    n = int(n)
    if n < 1 or n > MAX_POINTS:
        raise UnsupportedOrderError(
            f"gauss_rule supports 1..{MAX_POINTS} points, got {n}")
    if n == 1:
        return GaussRule1D(1, np.array([0.0]), np.array([2.0]))

    # Chebyshev-like initial guess for the roots of P_n, ascending order.
    i = np.arange(n)
    x = -np.cos(np.pi * (4 * i + 3) / (4 * n + 2))
    for _ in range(_NEWTON_MAXIT):
        p, dp = _legendre_and_derivative(n, x)
        dx = p / dp
        x -= dx
        if np.max(np.abs(dx)) < _NEWTON_TOL:
            break
    # Enforce exact symmetry of the point set; the midpoint of an odd
    # rule becomes exactly 0.
    x = 0.5 * (x - x[::-1])
    _, dp = _legendre_and_derivative(n, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    w = 0.5 * (w + w[::-1])
    return GaussRule1D(n, x, w)


def tensor3(rule_x, rule_y, rule_z):
    """Tensor product of three 1D rules; weights are products of 1D weights."""
    return GaussRule3D(rule_x, rule_y, rule_z)


def gauss_rule_3d(n):
    """Isotropic n^3-point tensor rule, the only kind the experiments use."""
    r = gauss_rule(n)
    return tensor3(r, r, r)
