"""Block stiffness assembly for the Poisson bilinear form on a
superposed model.

The system couples the global and local fields through

    K = [[K_GG, K_GL], [K_LG, K_LL]],   K_LG = K_GL^T,

where K_GG integrates over the global mesh and the remaining blocks
integrate over the local mesh, evaluating the global basis at local
quadrature points through the explicit structured-mesh mapping.
Dirichlet conditions (prescribed g on the domain boundary, zero on the
local box boundary) are enforced by elimination: constrained rows and
columns are removed and the known columns are folded into the load
vector, which keeps the reduced matrix symmetric.
"""

import numpy as np
import scipy.sparse as sp
from scipy.io import mmwrite

from .basis import lagrange_eval_many
from .mesh import BSPLINE, global_axis_tables
from .quadrature import gauss_rule


class AssemblyError(RuntimeError):
    """Inconsistent blocks or partition during system finalization."""


class SymmetricSparseMatrix:
    """Symmetric sparse matrix in CSR storage over the free DOFs."""

    def __init__(self, matrix, symmetric=True):
        csr = matrix.tocsr()
        csr.sum_duplicates()
        self._csr = csr
        self.symmetric = symmetric

    @property
    def n(self):
        return self._csr.shape[0]

    @property
    def indptr(self):
        return self._csr.indptr

    @property
    def indices(self):
        return self._csr.indices

    @property
    def data(self):
        return self._csr.data

    @property
    def nnz(self):
        return self._csr.nnz

    def matvec(self, x):
        return self._csr @ x

    def diagonal(self):
        return self._csr.diagonal()

    def to_dense(self):
        return self._csr.toarray()

    def to_scipy(self):
        return self._csr

    def max_abs(self):
        return np.abs(self.data).max() if self.nnz else 0.0

    def symmetry_defect(self):
        """max |K_ab - K_ba| over stored entries."""
        d = self._csr - self._csr.T
        return np.abs(d.data).max() if d.nnz else 0.0

    def drop_small(self, rel_tol=1e-14):
        """Prune entries below rel_tol * max|K| in place."""
        scale = self.max_abs()
        if scale == 0.0:
            return self
        self._csr.data[np.abs(self._csr.data) < rel_tol * scale] = 0.0
        self._csr.eliminate_zeros()
        return self

    def write_matrix_market(self, path):
        mmwrite(str(path), self._csr, symmetry="general")


class DofPartition:
    """Free/constrained DOF split for the block system.

    System rows are ordered free-global first, then free-local.
    """

    def __init__(self, free_global, cons_global, g_values,
                 free_local, cons_local):
        self.free_global = np.asarray(free_global, dtype=np.intp)
        self.cons_global = np.asarray(cons_global, dtype=np.intp)
        self.g_values = np.asarray(g_values, dtype=float)
        self.free_local = np.asarray(free_local, dtype=np.intp)
        self.cons_local = np.asarray(cons_local, dtype=np.intp)
        if len(self.g_values) != len(self.cons_global):
            raise AssemblyError("one prescribed value per constrained DOF")

    @property
    def n_free_global(self):
        return len(self.free_global)

    @property
    def n_free_local(self):
        return len(self.free_local)

    @property
    def dimension(self):
        return self.n_free_global + self.n_free_local


class LoadVector:
    """Assembled right-hand side over the free DOFs (lift included)."""

    def __init__(self, values, n_global, n_local):
        self.values = np.asarray(values, dtype=float)
        self.n_global = int(n_global)
        self.n_local = int(n_local)
        if len(self.values) != self.n_global + self.n_local:
            raise AssemblyError("load vector length mismatch")


def build_partition(model, g_func):
    """Partition DOFs and sample the boundary data.

    Global functions nonzero on the domain boundary are constrained to
    g sampled at the DOF locations (nodes for Lagrange, Greville lattice
    points for B-splines); local boundary nodes are constrained to zero.
    """
    gm, lm = model.global_mesh, model.local_mesh
    gmask = gm.boundary_dof_mask()
    cons_g = np.nonzero(gmask)[0]
    free_g = np.nonzero(~gmask)[0]
    g_values = np.asarray(g_func(gm.dof_coordinates(cons_g)), dtype=float)
    lmask = lm.boundary_dof_mask()
    cons_l = np.nonzero(lmask)[0]
    free_l = np.nonzero(~lmask)[0]
    return DofPartition(free_g, cons_g, g_values, free_l, cons_l)


# ---------------------------------------------------------------------------
# Element-level tables
# ---------------------------------------------------------------------------

def _tensor_weights(rule, h):
    """3D quadrature weights including the per-element volume factor."""
    w = rule.weights
    w3 = (w[:, None, None] * w[None, :, None] * w[None, None, :]).reshape(-1)
    return w3 * (0.5 * h) ** 3


def _grad_tables(vx, dx, vy, dy, vz, dz):
    """Flattened (points, functions) gradient component tables."""
    nq = vx.shape[0] * vy.shape[0] * vz.shape[0]
    gx = np.einsum("ai,bj,ck->abcijk", dx, vy, vz).reshape(nq, -1)
    gy = np.einsum("ai,bj,ck->abcijk", vx, dy, vz).reshape(nq, -1)
    gz = np.einsum("ai,bj,ck->abcijk", vx, vy, dz).reshape(nq, -1)
    return gx, gy, gz


def _value_table(vx, vy, vz):
    nq = vx.shape[0] * vy.shape[0] * vz.shape[0]
    return np.einsum("ai,bj,ck->abcijk", vx, vy, vz).reshape(nq, -1)


def _element_stiffness(gx, gy, gz, w3):
    ke = (gx * w3[:, None]).T @ gx
    ke += (gy * w3[:, None]).T @ gy
    ke += (gz * w3[:, None]).T @ gz
    return 0.5 * (ke + ke.T)


def _global_axis_class(mesh, e):
    """Cache key for the 1D basis profile on element e.

    Lagrange profiles are translation invariant; B-spline profiles
    depend only on the distance to the open knot-vector ends.
    """
    if mesh.family != BSPLINE:
        return 0
    p = mesh.order
    return (min(e, p), min(mesh.n_e - 1 - e, p))


def _global_element_axis_tables(mesh, rule):
    """1D value/derivative tables on each element at its Gauss points.

    Returns (classes, tables) where tables maps a class key to a pair of
    (nq, window) arrays with physical-space derivatives.
    """
    pts = rule.points
    classes = [_global_axis_class(mesh, e) for e in range(mesh.n_e)]
    tables = {}
    for e, key in enumerate(classes):
        if key in tables:
            continue
        x = mesh.x0 + (e + 0.5 * (pts + 1.0)) * mesh.h
        _, vals, ders = global_axis_tables(mesh, x)
        tables[key] = (vals, ders)
    return classes, tables


# ---------------------------------------------------------------------------
# Block assembly
# ---------------------------------------------------------------------------

def assemble_kgg(model, f_func, n_gauss):
    """Stiffness and source contributions over the global mesh.

    Returns (K_gg, F_g) over all global DOFs (constrained ones included;
    the Dirichlet lift is applied when the system is finalized).
    """
    gm = model.global_mesh
    rule = gauss_rule(n_gauss)
    nq = rule.order
    w3 = _tensor_weights(rule, gm.h)
    classes, tables = _global_element_axis_tables(gm, rule)

    ke_cache = {}
    val_cache = {}
    w = gm.window
    wf = w ** 3
    n_el = gm.n_e ** 3
    rows = np.empty(n_el * wf * wf, dtype=np.int32)
    cols = np.empty_like(rows)
    vals = np.empty(n_el * wf * wf)
    f_g = np.zeros(gm.num_dofs)

    parent = rule.points
    offsets = 0.5 * (parent + 1.0) * gm.h
    pts_template = np.empty((nq, nq, nq, 3))
    pts_template[..., 0] = offsets[:, None, None]
    pts_template[..., 1] = offsets[None, :, None]
    pts_template[..., 2] = offsets[None, None, :]
    pts_template = pts_template.reshape(-1, 3)

    nd = gm.n_dof_axis
    r = np.arange(w)
    pos = 0
    n_e = gm.n_e
    for ex in range(n_e):
        kx = classes[ex]
        for ey in range(n_e):
            ky = classes[ey]
            for ez in range(n_e):
                key = (kx, ky, classes[ez])
                if key not in ke_cache:
                    (vx, dx) = tables[key[0]]
                    (vy, dy) = tables[key[1]]
                    (vz, dz) = tables[key[2]]
                    gx, gy, gz = _grad_tables(vx, dx, vy, dy, vz, dz)
                    ke_cache[key] = _element_stiffness(gx, gy, gz, w3)
                    val_cache[key] = _value_table(vx, vy, vz)
                ke = ke_cache[key]
                v3 = val_cache[key]

                i = gm.element_first_dof(ex) + r
                j = gm.element_first_dof(ey) + r
                k = gm.element_first_dof(ez) + r
                idx = ((i[:, None, None] * nd + j[None, :, None]) * nd
                       + k[None, None, :]).reshape(-1)

                corner = np.array([gm.x0 + ex * gm.h, gm.x0 + ey * gm.h,
                                   gm.x0 + ez * gm.h])
                fvals = np.asarray(f_func(pts_template + corner), dtype=float)
                f_g[idx] += v3.T @ (w3 * fvals)

                rows[pos:pos + wf * wf] = np.repeat(idx, wf)
                cols[pos:pos + wf * wf] = np.tile(idx, wf)
                vals[pos:pos + wf * wf] = ke.reshape(-1)
                pos += wf * wf

    k_gg = sp.coo_matrix((vals, (rows, cols)),
                         shape=(gm.num_dofs, gm.num_dofs)).tocsr()
    k_gg.sum_duplicates()
    return k_gg, f_g


def _local_parent_tables(lm, rule):
    """Shared Lagrange tables on the local parent element."""
    lv, ld = lagrange_eval_many(lm.order, rule.points)
    ld = ld * (2.0 / lm.h)
    return lv, ld


def assemble_kll(model, f_func, n_gauss):
    """Stiffness and source contributions over the local mesh.

    Returns (K_ll, F_l) over all local DOFs.
    """
    lm = model.local_mesh
    rule = gauss_rule(n_gauss)
    nq = rule.order
    w3 = _tensor_weights(rule, lm.h)
    lv, ld = _local_parent_tables(lm, rule)
    gx, gy, gz = _grad_tables(lv, ld, lv, ld, lv, ld)
    ke = _element_stiffness(gx, gy, gz, w3)
    v3 = _value_table(lv, lv, lv)

    w = lm.window
    wf = w ** 3
    n_el = lm.n_e ** 3
    rows = np.empty(n_el * wf * wf, dtype=np.int32)
    cols = np.empty_like(rows)
    vals = np.empty(n_el * wf * wf)
    f_l = np.zeros(lm.num_dofs)

    offsets = 0.5 * (rule.points + 1.0) * lm.h
    pts_template = np.empty((nq, nq, nq, 3))
    pts_template[..., 0] = offsets[:, None, None]
    pts_template[..., 1] = offsets[None, :, None]
    pts_template[..., 2] = offsets[None, None, :]
    pts_template = pts_template.reshape(-1, 3)

    nd = lm.n_node_axis
    r = np.arange(w)
    ke_flat = ke.reshape(-1)
    pos = 0
    for ex in range(lm.n_e):
        for ey in range(lm.n_e):
            for ez in range(lm.n_e):
                i = lm.element_first_dof(ex) + r
                j = lm.element_first_dof(ey) + r
                k = lm.element_first_dof(ez) + r
                idx = ((i[:, None, None] * nd + j[None, :, None]) * nd
                       + k[None, None, :]).reshape(-1)
                corner = np.array([lm.b0 + ex * lm.h, lm.b0 + ey * lm.h,
                                   lm.b0 + ez * lm.h])
                fvals = np.asarray(f_func(pts_template + corner), dtype=float)
                f_l[idx] += v3.T @ (w3 * fvals)
                rows[pos:pos + wf * wf] = np.repeat(idx, wf)
                cols[pos:pos + wf * wf] = np.tile(idx, wf)
                vals[pos:pos + wf * wf] = ke_flat
                pos += wf * wf

    k_ll = sp.coo_matrix((vals, (rows, cols)),
                         shape=(lm.num_dofs, lm.num_dofs)).tocsr()
    k_ll.sum_duplicates()
    return k_ll, f_l


def _scatter_union_window(first, table, width):
    """Spread per-point windows into a shared union window.

    first : (nq,) first per-axis function index per point
    table : (nq, w) per-point window values
    Returns (base_index, array of shape (nq, width)).
    """
    base = int(first.min())
    nq, w = table.shape
    out = np.zeros((nq, width))
    cols = (first - base)[:, None] + np.arange(w)[None, :]
    out[np.arange(nq)[:, None], cols] = table
    return base, out


def assemble_coupling(model, n_gauss):
    """Coupling block K_GL over (all global DOFs) x (all local DOFs).

    Integration runs element by element on the local mesh; the global
    basis is evaluated at each local quadrature point through the
    explicit mapping.  In a crossing configuration the supported global
    functions differ between quadrature points of one element, so the
    element matrix is built over the per-axis union windows.
    """
    gm, lm = model.global_mesh, model.local_mesh
    rule = gauss_rule(n_gauss)
    nq = rule.order
    w3 = _tensor_weights(rule, lm.h)
    lv, ld = _local_parent_tables(lm, rule)
    lgx, lgy, lgz = _grad_tables(lv, ld, lv, ld, lv, ld)
    lgx = lgx * w3[:, None]
    lgy = lgy * w3[:, None]
    lgz = lgz * w3[:, None]

    # Global 1D tables at every local Gauss coordinate, one axis at a time
    # (the mesh is the same cube in x, y, z).
    xs = lm.b0 + (np.arange(lm.n_e)[:, None]
                  + 0.5 * (rule.points + 1.0)[None, :]) * lm.h
    g_first, g_vals, g_ders = global_axis_tables(gm, xs.reshape(-1))
    wg = gm.window
    g_first = g_first.reshape(lm.n_e, nq)
    g_vals = g_vals.reshape(lm.n_e, nq, wg)
    g_ders = g_ders.reshape(lm.n_e, nq, wg)

    # Union-window axis tables per local element index.
    axis = []
    nd_g = gm.n_dof_axis
    for e in range(lm.n_e):
        first = g_first[e]
        width = int(first.max()) - int(first.min()) + wg
        base, vu = _scatter_union_window(first, g_vals[e], width)
        _, du = _scatter_union_window(first, g_ders[e], width)
        axis.append((base, width, vu, du))

    nd_l = lm.n_node_axis
    wl = lm.window
    rl = np.arange(wl)
    rows_parts, cols_parts, vals_parts = [], [], []
    for ex in range(lm.n_e):
        bx, wx, vux, dux = axis[ex]
        for ey in range(lm.n_e):
            by, wy, vuy, duy = axis[ey]
            for ez in range(lm.n_e):
                bz, wz, vuz, duz = axis[ez]
                ggx, ggy, ggz = _grad_tables(vux, dux, vuy, duy, vuz, duz)
                ke = ggx.T @ lgx + ggy.T @ lgy + ggz.T @ lgz

                gi = bx + np.arange(wx)
                gj = by + np.arange(wy)
                gk = bz + np.arange(wz)
                gidx = ((gi[:, None, None] * nd_g + gj[None, :, None]) * nd_g
                        + gk[None, None, :]).reshape(-1)
                li = lm.element_first_dof(ex) + rl
                lj = lm.element_first_dof(ey) + rl
                lk = lm.element_first_dof(ez) + rl
                lidx = ((li[:, None, None] * nd_l + lj[None, :, None]) * nd_l
                        + lk[None, None, :]).reshape(-1)

                rows_parts.append(np.repeat(gidx, lidx.size))
                cols_parts.append(np.tile(lidx, gidx.size))
                vals_parts.append(ke.reshape(-1))

    rows = np.concatenate(rows_parts)
    cols = np.concatenate(cols_parts)
    vals = np.concatenate(vals_parts)
    k_gl = sp.coo_matrix((vals, (rows, cols)),
                         shape=(gm.num_dofs, lm.num_dofs)).tocsr()
    k_gl.sum_duplicates()
    return k_gl


def finalize_system(k_gg, f_g, k_ll, f_l, k_gl, partition, drop_tol=1e-14):
    """Reduce the blocks to the free DOFs and fold in the Dirichlet lift.

    Returns (SymmetricSparseMatrix, LoadVector); the transpose coupling
    block is stored as the exact transpose of K_GL.
    """
    fg, cg = partition.free_global, partition.cons_global
    fl = partition.free_local
    gv = partition.g_values
    if k_gg.shape[0] != k_gg.shape[1] or k_gg.shape[0] < len(fg) + len(cg):
        raise AssemblyError("global block shape inconsistent with partition")
    if k_gl.shape != (k_gg.shape[0], k_ll.shape[0]):
        raise AssemblyError("coupling block shape mismatch")

    a = k_gg[fg][:, fg]
    b = k_gl[fg][:, fl]
    c = k_ll[fl][:, fl]
    f_top = f_g[fg]
    f_bot = f_l[fl]
    if len(cg):
        f_top = f_top - k_gg[fg][:, cg] @ gv
        f_bot = f_bot - k_gl[cg][:, fl].T @ gv

    k = sp.bmat([[a, b], [b.T, c]], format="csr")
    mat = SymmetricSparseMatrix(k)
    mat.drop_small(drop_tol)
    load = LoadVector(np.concatenate([f_top, f_bot]),
                      partition.n_free_global, partition.n_free_local)
    return mat, load


def assemble_system(model, problem, n_gauss):
    """Full pipeline: blocks, partition, and reduced (K, F).

    `problem` supplies vectorized callables f(points) and g(points).
    """
    k_gg, f_g = assemble_kgg(model, problem.f, n_gauss)
    k_ll, f_l = assemble_kll(model, problem.f, n_gauss)
    k_gl = assemble_coupling(model, n_gauss)
    partition = build_partition(model, problem.g)
    k, f = finalize_system(k_gg, f_g, k_ll, f_l, k_gl, partition)
    return k, f, partition
