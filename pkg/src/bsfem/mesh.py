"""Structured meshes over an axis-aligned box and their superposition.

The global mesh covers the whole domain with cubic elements and carries
either a B-spline basis (open uniform knot vectors, parametric space
equal to physical space) or a Lagrange basis (per-element parent cube
[-1, 1]^3).  The local mesh is a finer Lagrange grid over an embedded
box whose faces sit on global element boundaries, so every global
element is wholly inside or wholly outside the local domain.

Degrees of freedom are numbered lexicographically by (i, j, k) with the
z index fastest.
"""

import numpy as np

from .basis import (DomainError, KnotVector, lagrange_eval_many,
                    bspline_span_eval)

BSPLINE = "bspline"
LAGRANGE = "lagrange"

# Element-size ratios h_global : h_local for the two study configurations.
CASE_RATIOS = {"A": (4, 3), "B": (2, 1)}


class GeometryError(ValueError):
    """Inconsistent or misaligned mesh geometry."""


def _check_box(bounds):
    x0, x1 = float(bounds[0]), float(bounds[1])
    if x1 <= x0:
        raise GeometryError(f"degenerate box [{x0}, {x1}]")
    return x0, x1


class GlobalMesh:
    """Structured global mesh over [x0, x1]^3 with cubic elements.

    Attributes
    ----------
    family : str
        BSPLINE or LAGRANGE.
    order : int
        Basis order p.
    n_e : int
        Elements per axis.
    h : float
        Element edge length.
    n_dof_axis : int
        Basis functions per axis: n_e + p (B-spline) or p*n_e + 1 (Lagrange).
    dof_axis_coords : ndarray
        Per-axis DOF locations: Greville abscissae (B-spline) or nodes.
    """

    def __init__(self, family, order, bounds, n_e):
        if family not in (BSPLINE, LAGRANGE):
            raise ValueError(f"unknown basis family {family!r}")
        order = int(order)
        n_e = int(n_e)
        x0, x1 = _check_box(bounds)
        if n_e < 1:
            raise GeometryError("need at least one element per axis")
        if family == BSPLINE and n_e < order:
            raise GeometryError(
                f"B-spline mesh needs n_e >= order ({n_e} < {order})")
        self.family = family
        self.order = order
        self.x0, self.x1 = x0, x1
        self.n_e = n_e
        self.h = (x1 - x0) / n_e
        if family == BSPLINE:
            self.kv = KnotVector.open_uniform(order, n_e, x0, x1)
            self.n_dof_axis = self.kv.num_functions
            self.dof_axis_coords = self.kv.greville()
        else:
            self.kv = None
            self.n_dof_axis = order * n_e + 1
            self.dof_axis_coords = np.linspace(x0, x1, self.n_dof_axis)

    @property
    def num_dofs(self):
        return self.n_dof_axis ** 3

    @property
    def window(self):
        """Supported functions per axis on one element."""
        return self.order + 1

    def element_first_dof(self, elem):
        """First per-axis function index supported on element `elem`."""
        if self.family == BSPLINE:
            return elem
        return self.order * elem

    def flat_index(self, i, j, k):
        nd = self.n_dof_axis
        return (i * nd + j) * nd + k

    def boundary_dof_mask(self):
        """Mask over all DOFs of functions that are nonzero on the boundary.

        For Lagrange these are the boundary nodes; for an open knot
        vector only the first/last function per axis is nonzero on the
        corresponding face.
        """
        nd = self.n_dof_axis
        axis_edge = np.zeros(nd, dtype=bool)
        axis_edge[0] = axis_edge[-1] = True
        m = (axis_edge[:, None, None] | axis_edge[None, :, None]
             | axis_edge[None, None, :])
        return m.reshape(-1)

    def dof_coordinates(self, flat):
        """Physical DOF locations (nodes or Greville lattice points)."""
        flat = np.asarray(flat)
        nd = self.n_dof_axis
        i, rem = np.divmod(flat, nd * nd)
        j, k = np.divmod(rem, nd)
        c = self.dof_axis_coords
        return np.stack([c[i], c[j], c[k]], axis=-1)


def build_global(family, order, bounds, n_e):
    """Build the global mesh; see GlobalMesh."""
    return GlobalMesh(family, order, bounds, n_e)


class LocalMesh:
    """Structured Lagrange mesh over the embedded local box.

    boundary_mask marks nodes lying on any face of the local box; these
    carry the zero constraint that glues the local field to the global
    one.
    """

    def __init__(self, order, bounds, n_e):
        order = int(order)
        n_e = int(n_e)
        if order < 1:
            raise ValueError("local order must be >= 1")
        if n_e < 1:
            raise GeometryError("need at least one local element per axis")
        b0, b1 = _check_box(bounds)
        self.order = order
        self.b0, self.b1 = b0, b1
        self.n_e = n_e
        self.h = (b1 - b0) / n_e
        self.n_node_axis = order * n_e + 1
        self.node_axis_coords = np.linspace(b0, b1, self.n_node_axis)

    @property
    def num_dofs(self):
        return self.n_node_axis ** 3

    @property
    def window(self):
        return self.order + 1

    def element_first_dof(self, elem):
        return self.order * elem

    def flat_index(self, i, j, k):
        nd = self.n_node_axis
        return (i * nd + j) * nd + k

    def boundary_dof_mask(self):
        nd = self.n_node_axis
        axis_edge = np.zeros(nd, dtype=bool)
        axis_edge[0] = axis_edge[-1] = True
        m = (axis_edge[:, None, None] | axis_edge[None, :, None]
             | axis_edge[None, None, :])
        return m.reshape(-1)

    def node_coordinates(self, flat):
        flat = np.asarray(flat)
        nd = self.n_node_axis
        i, rem = np.divmod(flat, nd * nd)
        j, k = np.divmod(rem, nd)
        c = self.node_axis_coords
        return np.stack([c[i], c[j], c[k]], axis=-1)


def build_local(order, bounds, n_e):
    """Build the local mesh; see LocalMesh."""
    return LocalMesh(order, bounds, n_e)


def default_local_box(bounds, n_e):
    """Largest-compatible local box near the lower corner of the domain.

    The box edge is k*h with k a multiple of 3 so both size ratios (4:3
    and 2:1) give integer local element counts; k = 3*max(1, n_e // 6)
    reproduces [x0, x0 + (x1-x0)/2] whenever n_e is a multiple of 6.
    """
    x0, x1 = _check_box(bounds)
    h = (x1 - x0) / n_e
    k = 3 * max(1, n_e // 6)
    if k > n_e:
        raise GeometryError(f"domain with {n_e} elements cannot host "
                            "an aligned local box")
    return (x0, x0 + k * h)


class SuperposedModel:
    """Global mesh, local mesh, and their geometric relationship.

    The local box must be aligned with global element boundaries and the
    element-size ratio must match the requested case exactly.
    """

    def __init__(self, global_mesh, local_mesh, case):
        self.global_mesh = global_mesh
        self.local_mesh = local_mesh
        self.case = case
        g, l = global_mesh, local_mesh
        tol = 1e-9 * g.h
        if l.b0 < g.x0 - tol or l.b1 > g.x1 + tol:
            raise GeometryError("local box not contained in the global box")
        k0 = (l.b0 - g.x0) / g.h
        k1 = (l.b1 - g.x0) / g.h
        if abs(k0 - round(k0)) > 1e-9 or abs(k1 - round(k1)) > 1e-9:
            raise GeometryError(
                "local box faces must lie on global element boundaries")
        self.k0 = int(round(k0))
        self.k1 = int(round(k1))
        if isinstance(case, str):
            ratio = CASE_RATIOS.get(case)
            if ratio is None:
                raise ValueError(f"unknown case {case!r}")
        else:
            ratio = tuple(case)
        self.ratio = ratio
        expected = (self.k1 - self.k0) * ratio[0] / ratio[1]
        if abs(expected - l.n_e) > 1e-9:
            raise GeometryError(
                f"local mesh has {l.n_e} elements per axis; ratio "
                f"{ratio[0]}:{ratio[1]} over the box requires {expected:g}")

    @property
    def ratio_label(self):
        return self.case if isinstance(self.case, str) else \
            f"{self.ratio[0]}:{self.ratio[1]}"

    def global_element_inside_local(self):
        """Boolean (n_e, n_e, n_e) array: element wholly inside the local box."""
        n = self.global_mesh.n_e
        ax = np.zeros(n, dtype=bool)
        ax[self.k0:self.k1] = True
        return ax[:, None, None] & ax[None, :, None] & ax[None, None, :]

    def local_element_crosses_global(self):
        """Boolean (n_l, n_l, n_l) array: element cut by a global boundary.

        Aligned boxes make this exact integer arithmetic: local element
        j spans [j, j+1] * (den/num) in global-element units.
        """
        num, den = self.ratio
        n_l = self.local_mesh.n_e
        # Global boundary strictly inside local element j iff some integer
        # m satisfies j*den < m*num < (j+1)*den.
        c = np.array([
            any(j * den < m * num < (j + 1) * den
                for m in range(j * den // num, (j + 1) * den // num + 2))
            for j in range(n_l)])
        return (c[:, None, None] | c[None, :, None] | c[None, None, :])


def build_model(family, order, local_order, case, n_e, bounds=(0.0, 2.0),
                local_box=None):
    """Assemble a SuperposedModel for one study configuration.

    case is 'A' (h_G:h_L = 4:3), 'B' (2:1), or an explicit integer ratio
    tuple such as (10, 3).  The local box defaults to
    default_local_box(bounds, n_e).
    """
    gm = build_global(family, order, bounds, n_e)
    if local_box is None:
        local_box = default_local_box(bounds, n_e)
    ratio = CASE_RATIOS[case] if isinstance(case, str) else tuple(case)
    k = (local_box[1] - local_box[0]) / gm.h
    n_loc = k * ratio[0] / ratio[1]
    if abs(n_loc - round(n_loc)) > 1e-9:
        raise GeometryError(
            f"ratio {ratio[0]}:{ratio[1]} gives non-integer local element "
            f"count {n_loc:g} over the box {local_box}")
    lm = build_local(local_order, local_box, int(round(n_loc)))
    return SuperposedModel(gm, lm, case)


# ---------------------------------------------------------------------------
# Point location and basis evaluation in physical space
# ---------------------------------------------------------------------------

def _locate_axis(x, x0, h, n_e, tol):
    """Element index and parent coordinate along one axis, vectorized."""
    lo, hi = x0, x0 + n_e * h
    if np.any(x < lo - tol) or np.any(x > hi + tol):
        raise DomainError("point outside the mesh box")
    e = np.floor((x - x0) / h).astype(np.intp)
    np.clip(e, 0, n_e - 1, out=e)
    xi = 2.0 * (x - x0 - e * h) / h - 1.0
    np.clip(xi, -1.0, 1.0, out=xi)
    return e, xi


def locate_in_global(mesh, x):
    """Map a physical point to (element index triple, parent coordinates).

    Ties at interior element boundaries go to the element whose lower
    face contains the point (floor rule); the top face is clamped into
    the last element so the closed upper boundary evaluates correctly.
    """
    x = np.asarray(x, dtype=float)
    tol = 1e-12 * mesh.h
    elems = np.empty(3, dtype=np.intp)
    xis = np.empty(3)
    for a in range(3):
        e, xi = _locate_axis(np.atleast_1d(x[a]), mesh.x0, mesh.h,
                             mesh.n_e, tol)
        elems[a], xis[a] = e[0], xi[0]
    return elems, xis


def element_center(mesh, elem):
    return mesh.x0 + (np.asarray(elem) + 0.5) * mesh.h


def global_axis_tables(mesh, x):
    """Per-axis basis tables at an array of physical coordinates.

    Returns (first, values, derivatives), each row covering the
    order+1 functions supported at that coordinate; derivatives are in
    physical units.
    """
    x = np.asarray(x, dtype=float)
    tol = 1e-12 * mesh.h
    e, xi = _locate_axis(x, mesh.x0, mesh.h, mesh.n_e, tol)
    if mesh.family == BSPLINE:
        span = e + mesh.order
        first, vals, ders = bspline_span_eval(mesh.kv, x, span)
        return first, vals, ders
    vals, ders = lagrange_eval_many(mesh.order, xi)
    return mesh.order * e, vals, ders * (2.0 / mesh.h)


def global_basis_at(mesh, x):
    """Global DOF indices, values, and physical gradients at one point."""
    x = np.asarray(x, dtype=float)
    tabs = [global_axis_tables(mesh, np.atleast_1d(x[a])) for a in range(3)]
    firsts = [int(t[0][0]) for t in tabs]
    v = [t[1][0] for t in tabs]
    d = [t[2][0] for t in tabs]
    w = mesh.window
    nd = mesh.n_dof_axis
    i = firsts[0] + np.arange(w)
    j = firsts[1] + np.arange(w)
    k = firsts[2] + np.arange(w)
    idx = ((i[:, None, None] * nd + j[None, :, None]) * nd
           + k[None, None, :]).reshape(-1)
    values = np.einsum("i,j,k->ijk", v[0], v[1], v[2]).reshape(-1)
    grads = np.empty((values.size, 3))
    grads[:, 0] = np.einsum("i,j,k->ijk", d[0], v[1], v[2]).reshape(-1)
    grads[:, 1] = np.einsum("i,j,k->ijk", v[0], d[1], v[2]).reshape(-1)
    grads[:, 2] = np.einsum("i,j,k->ijk", v[0], v[1], d[2]).reshape(-1)
    return idx, values, grads


def eval_global_field(mesh, coeffs, points, chunk=20000):
    """Evaluate sum_A coeffs[A] * N_A at arbitrary physical points."""
    points = np.asarray(points, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    out = np.empty(points.shape[0])
    w = mesh.window
    nd = mesh.n_dof_axis
    for s in range(0, points.shape[0], chunk):
        pts = points[s:s + chunk]
        tabs = [global_axis_tables(mesh, pts[:, a]) for a in range(3)]
        fi, fj, fk = (t[0] for t in tabs)
        vx, vy, vz = (t[1] for t in tabs)
        r = np.arange(w)
        i = fi[:, None] + r[None, :]
        j = fj[:, None] + r[None, :]
        k = fk[:, None] + r[None, :]
        idx = ((i[:, :, None, None] * nd + j[:, None, :, None]) * nd
               + k[:, None, None, :])
        vals = np.einsum("mi,mj,mk->mijk", vx, vy, vz)
        out[s:s + chunk] = np.einsum("mw,mw->m",
                                     coeffs[idx.reshape(len(pts), -1)],
                                     vals.reshape(len(pts), -1))
    return out


def eval_local_field(lmesh, coeffs, points):
    """Evaluate the local Lagrange field at points inside the local box."""
    points = np.asarray(points, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    q = lmesh.order
    nd = lmesh.n_node_axis
    tol = 1e-12 * lmesh.h
    tabs = []
    for a in range(3):
        e, xi = _locate_axis(points[:, a], lmesh.b0, lmesh.h, lmesh.n_e, tol)
        vals, _ = lagrange_eval_many(q, xi)
        tabs.append((q * e, vals))
    fi, fj, fk = (t[0] for t in tabs)
    vx, vy, vz = (t[1] for t in tabs)
    r = np.arange(q + 1)
    i = fi[:, None] + r[None, :]
    j = fj[:, None] + r[None, :]
    k = fk[:, None] + r[None, :]
    idx = ((i[:, :, None, None] * nd + j[:, None, :, None]) * nd
           + k[:, None, None, :])
    vals = np.einsum("mi,mj,mk->mijk", vx, vy, vz)
    m = points.shape[0]
    return np.einsum("mw,mw->m", coeffs[idx.reshape(m, -1)],
                     vals.reshape(m, -1))


def mesh_summary(model):
    """JSON-ready description of a superposed model."""
    g, l = model.global_mesh, model.local_mesh
    return {
        "case": model.ratio_label,
        "global": {
            "family": g.family,
            "order": g.order,
            "bounds": [g.x0, g.x1],
            "elements_per_axis": g.n_e,
            "element_size": g.h,
            "dofs_per_axis": g.n_dof_axis,
            "dofs": g.num_dofs,
        },
        "local": {
            "order": l.order,
            "bounds": [l.b0, l.b1],
            "elements_per_axis": l.n_e,
            "element_size": l.h,
            "dofs_per_axis": l.n_node_axis,
            "dofs": l.num_dofs,
        },
    }
