"""Manufactured-solution verification protocol.

Provides the exact solution / source pair, the relative L2 error with
its split into contributions outside and inside the local domain, the
quadrature-order sensitivity sweep, the per-element error-distribution
experiment, and mesh-refinement convergence studies.
"""

import csv
import time

import numpy as np

from . import mesh as mesh_mod
from .assembly import (_global_element_axis_tables, _scatter_union_window,
                       _value_table, _tensor_weights, _local_parent_tables,
                       assemble_system)
from .mesh import build_model, default_local_box
from .quadrature import gauss_rule
from .solver import CgSettings, cg_solve, cholesky_spd_test

TWO_PI = 2.0 * np.pi


def exact_solution(points):
    """u = sin(2 pi x) sin(2 pi y) sin(2 pi z) + 10."""
    p = np.asarray(points, dtype=float)
    return (np.sin(TWO_PI * p[..., 0]) * np.sin(TWO_PI * p[..., 1])
            * np.sin(TWO_PI * p[..., 2]) + 10.0)


def source_term(points):
    """f = -laplacian(u) = 12 pi^2 sin(2 pi x) sin(2 pi y) sin(2 pi z)."""
    p = np.asarray(points, dtype=float)
    return (12.0 * np.pi ** 2 * np.sin(TWO_PI * p[..., 0])
            * np.sin(TWO_PI * p[..., 1]) * np.sin(TWO_PI * p[..., 2]))


class PoissonProblem:
    """Bundle of source f, Dirichlet data g, and (optionally) exact u."""

    def __init__(self, f, g, u=None):
        self.f = f
        self.g = g
        self.u = u


def manufactured_case():
    """The verification problem; g is the exact solution on the boundary."""
    return PoissonProblem(f=source_term, g=exact_solution, u=exact_solution)


def constant_case(value=10.0):
    """Patch-test problem: f = 0, g = value, exact solution u = value."""

    def u(points):
        p = np.asarray(points, dtype=float)
        return np.full(p.shape[:-1], float(value))

    def f(points):
        p = np.asarray(points, dtype=float)
        return np.zeros(p.shape[:-1])

    return PoissonProblem(f=f, g=u, u=u)


def quadrature_policy(case, global_order, local_order):
    """Gauss points per axis for assembly.

    The crossing configuration (case A) uses p+8 points to control the
    discontinuous integrands; aligned case B needs only p+1.  Explicit
    ratio configurations integrate with p+1 points on purpose, to expose
    the crossing error.  p is the larger of the two basis orders.
    """
    p = max(int(global_order), int(local_order))
    if case == "A":
        return p + 8
    return p + 1


def error_rule_points(model):
    """Default Gauss order for error integration: max basis order + 2."""
    return max(model.global_mesh.order, model.local_mesh.order) + 2


# ---------------------------------------------------------------------------
# Solve pipeline
# ---------------------------------------------------------------------------

class RunResult:
    """Solved system with the expanded coefficient fields."""

    def __init__(self, model, quad_points, partition, report,
                 d_global, d_local, spd=None, assembly_time=0.0):
        self.model = model
        self.quad_points = quad_points
        self.partition = partition
        self.report = report
        self.d_global = d_global
        self.d_local = d_local
        self.spd = spd
        self.assembly_time = assembly_time

    @property
    def dimension(self):
        return self.partition.dimension


def solve_model(model, problem, n_gauss, settings=None, spd=False,
                spd_dense_limit=25000):
    """Assemble, optionally SPD-test, and CG-solve one configuration.

    Returns a RunResult; CG non-convergence is recorded in the report,
    not raised.
    """
    t0 = time.perf_counter()
    k, f, partition = assemble_system(model, problem, n_gauss)
    assembly_time = time.perf_counter() - t0
    verdict = None
    if spd:
        verdict = cholesky_spd_test(k, dense_limit=spd_dense_limit)
    d, report = cg_solve(k, f, settings or CgSettings())

    gm, lm = model.global_mesh, model.local_mesh
    d_global = np.zeros(gm.num_dofs)
    d_global[partition.free_global] = d[:partition.n_free_global]
    d_global[partition.cons_global] = partition.g_values
    d_local = np.zeros(lm.num_dofs)
    d_local[partition.free_local] = d[partition.n_free_global:]
    return RunResult(model, n_gauss, partition, report, d_global, d_local,
                     spd=verdict, assembly_time=assembly_time)


# ---------------------------------------------------------------------------
# Relative L2 error
# ---------------------------------------------------------------------------

class ErrorReport:
    """Relative L2 error and its global/local split.

    numerator_outside and numerator_inside are the squared-error
    integrals over the global elements outside the local box and over
    the local mesh; element_errors (optional) holds the squared-error
    integral per local element together with a flag marking elements cut
    by a global element boundary.
    """

    def __init__(self, error, numerator_outside, numerator_inside,
                 denominator, element_errors=None, crossing=None):
        self.error = float(error)
        self.numerator_outside = float(numerator_outside)
        self.numerator_inside = float(numerator_inside)
        self.denominator = float(denominator)
        self.element_errors = element_errors
        self.crossing = crossing


def l2_error(model, d_global, d_local, exact, n_gauss=None,
             per_element=False):
    """Relative L2 error of the composed solution against `exact`.

    The numerator integrates |u_G^h - u|^2 over global elements outside
    the local box and |u_G^h + u_L^h - u|^2 over the local mesh; the
    denominator integrates |u|^2 over the whole global mesh.
    """
    gm, lm = model.global_mesh, model.local_mesh
    if n_gauss is None:
        n_gauss = error_rule_points(model)
    rule = gauss_rule(n_gauss)
    nq = rule.order

    # Global-mesh sweep: denominator everywhere, error outside the box.
    w3_g = _tensor_weights(rule, gm.h)
    classes, tables = _global_element_axis_tables(gm, rule)
    val_cache = {}
    inside = model.global_element_inside_local()
    offsets = 0.5 * (rule.points + 1.0) * gm.h
    pts_template = np.empty((nq, nq, nq, 3))
    pts_template[..., 0] = offsets[:, None, None]
    pts_template[..., 1] = offsets[None, :, None]
    pts_template[..., 2] = offsets[None, None, :]
    pts_template = pts_template.reshape(-1, 3)
    nd = gm.n_dof_axis
    w = gm.window
    r = np.arange(w)
    denom = 0.0
    num_out = 0.0
    for ex in range(gm.n_e):
        for ey in range(gm.n_e):
            for ez in range(gm.n_e):
                key = (classes[ex], classes[ey], classes[ez])
                v3 = val_cache.get(key)
                if v3 is None:
                    vx, vy, vz = (tables[c][0] for c in key)
                    v3 = _value_table(vx, vy, vz)
                    val_cache[key] = v3
                corner = np.array([gm.x0 + ex * gm.h, gm.x0 + ey * gm.h,
                                   gm.x0 + ez * gm.h])
                u_ex = np.asarray(exact(pts_template + corner), dtype=float)
                denom += w3_g @ (u_ex * u_ex)
                if inside[ex, ey, ez]:
                    continue
                i = gm.element_first_dof(ex) + r
                j = gm.element_first_dof(ey) + r
                k = gm.element_first_dof(ez) + r
                idx = ((i[:, None, None] * nd + j[None, :, None]) * nd
                       + k[None, None, :]).reshape(-1)
                diff = v3 @ d_global[idx] - u_ex
                num_out += w3_g @ (diff * diff)

    # Local-mesh sweep: composed field against the exact solution.
    w3_l = _tensor_weights(rule, lm.h)
    lv, _ = _local_parent_tables(lm, rule)
    v3_l = _value_table(lv, lv, lv)
    xs = lm.b0 + (np.arange(lm.n_e)[:, None]
                  + 0.5 * (rule.points + 1.0)[None, :]) * lm.h
    g_first, g_vals, _ = mesh_mod.global_axis_tables(gm, xs.reshape(-1))
    wg = gm.window
    g_first = g_first.reshape(lm.n_e, nq)
    g_vals = g_vals.reshape(lm.n_e, nq, wg)
    axis = []
    for e in range(lm.n_e):
        first = g_first[e]
        width = int(first.max()) - int(first.min()) + wg
        base, vu = _scatter_union_window(first, g_vals[e], width)
        axis.append((base, width, vu))

    nd_l = lm.n_node_axis
    wl = lm.window
    rl = np.arange(wl)
    offsets_l = 0.5 * (rule.points + 1.0) * lm.h
    pts_l = np.empty((nq, nq, nq, 3))
    pts_l[..., 0] = offsets_l[:, None, None]
    pts_l[..., 1] = offsets_l[None, :, None]
    pts_l[..., 2] = offsets_l[None, None, :]
    pts_l = pts_l.reshape(-1, 3)
    num_in = 0.0
    elem_err = np.zeros((lm.n_e, lm.n_e, lm.n_e)) if per_element else None
    for ex in range(lm.n_e):
        bx, wx, vux = axis[ex]
        for ey in range(lm.n_e):
            by, wy, vuy = axis[ey]
            for ez in range(lm.n_e):
                bz, wz, vuz = axis[ez]
                g3 = np.einsum("ai,bj,ck->abcijk", vux, vuy, vuz)
                g3 = g3.reshape(nq ** 3, -1)
                gi = bx + np.arange(wx)
                gj = by + np.arange(wy)
                gk = bz + np.arange(wz)
                gidx = ((gi[:, None, None] * nd + gj[None, :, None]) * nd
                        + gk[None, None, :]).reshape(-1)
                li = lm.element_first_dof(ex) + rl
                lj = lm.element_first_dof(ey) + rl
                lk = lm.element_first_dof(ez) + rl
                lidx = ((li[:, None, None] * nd_l + lj[None, :, None]) * nd_l
                        + lk[None, None, :]).reshape(-1)
                corner = np.array([lm.b0 + ex * lm.h, lm.b0 + ey * lm.h,
                                   lm.b0 + ez * lm.h])
                u_ex = np.asarray(exact(pts_l + corner), dtype=float)
                diff = g3 @ d_global[gidx] + v3_l @ d_local[lidx] - u_ex
                contrib = w3_l @ (diff * diff)
                num_in += contrib
                if per_element:
                    elem_err[ex, ey, ez] = contrib

    error = np.sqrt((num_out + num_in) / denom)
    crossing = model.local_element_crosses_global() if per_element else None
    return ErrorReport(error, num_out, num_in, np.sqrt(denom),
                       element_errors=elem_err, crossing=crossing)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def run_point(family, order, local_order, case, n_e, bounds=(0.0, 2.0),
              local_box=None, quad_points=None, spd=False, problem=None,
              settings=None, spd_dense_limit=25000, error_points=None):
    """Solve one study configuration and measure its error.

    Returns (record dict, RunResult, ErrorReport).
    """
    problem = problem or manufactured_case()
    model = build_model(family, order, local_order, case, n_e, bounds,
                        local_box)
    if quad_points is None:
        quad_points = quadrature_policy(case, order, local_order)
    result = solve_model(model, problem, quad_points, settings=settings,
                         spd=spd, spd_dense_limit=spd_dense_limit)
    err = l2_error(model, result.d_global, result.d_local, problem.u,
                   n_gauss=error_points)
    record = {
        "case": model.ratio_label,
        "global_family": family,
        "global_order": order,
        "local_order": local_order,
        "n_e": n_e,
        "h_G": model.global_mesh.h,
        "dof": result.dimension,
        "quad_points": quad_points,
        "l2_error": err.error,
        "cg_iters": result.report.iterations,
        "cg_converged": result.report.converged,
        "spd": ("" if result.spd is None else
                ("pass" if result.spd.positive_definite else "fail")),
    }
    return record, result, err


def fit_slope(h_values, errors):
    """Least-squares slope of log(error) against log(h)."""
    h = np.asarray(h_values, dtype=float)
    e = np.asarray(errors, dtype=float)
    if len(h) < 2:
        return float("nan")
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


class ConvergenceSeries:
    """Per-mesh records of one refinement study plus the fitted slope."""

    def __init__(self, config, records):
        self.config = config
        self.records = records
        ok = [r for r in records if r.get("cg_converged")]
        self.slope = fit_slope([r["h_G"] for r in ok],
                               [r["l2_error"] for r in ok])

    def errors(self):
        return [r["l2_error"] for r in self.records]


class StudyConfig:
    """One refinement series: basis pairing, case, and mesh sequence."""

    def __init__(self, family, order, local_order, case,
                 mesh_sizes=(6, 9, 12, 15), bounds=(0.0, 2.0),
                 quad_points=None, spd=False, settings=None):
        self.family = family
        self.order = int(order)
        self.local_order = int(local_order)
        self.case = case
        self.mesh_sizes = tuple(mesh_sizes)
        self.bounds = bounds
        self.quad_points = quad_points
        self.spd = spd
        self.settings = settings


def convergence_study(config, progress=None):
    """Run a refinement series; per-mesh failures are recorded, not fatal."""
    records = []
    for n_e in config.mesh_sizes:
        try:
            record, result, err = run_point(
                config.family, config.order, config.local_order, config.case,
                n_e, bounds=config.bounds, quad_points=config.quad_points,
                spd=config.spd, settings=config.settings)
        except MemoryError as exc:
            records.append({"n_e": n_e, "failed": str(exc),
                            "cg_converged": False})
            continue
        records.append(record)
        if progress is not None:
            progress(record)
    return ConvergenceSeries(config, records)


class SensitivityTable:
    """Error per assembly quadrature order at a fixed mesh."""

    def __init__(self, orders, errors):
        self.orders = list(orders)
        self.errors = list(errors)
        # Relative change between consecutive orders, scaled by the
        # later value (change of eps(k) relative to itself vs eps(k-1)).
        self.rel_changes = [
            abs(self.errors[i] - self.errors[i - 1]) / abs(self.errors[i])
            for i in range(1, len(self.errors))]
        self.stabilization_order = self._stabilization()

    def _stabilization(self, threshold=0.05):
        """Smallest order whose error differs from both neighbours by
        less than the threshold (relative to its own value)."""
        for i in range(1, len(self.orders) - 1):
            prev_change = abs(self.errors[i] - self.errors[i - 1]) \
                / abs(self.errors[i])
            next_change = abs(self.errors[i + 1] - self.errors[i]) \
                / abs(self.errors[i])
            if prev_change < threshold and next_change < threshold:
                return self.orders[i]
        return None


def quadrature_sensitivity(family, order, local_order, case, n_e,
                           bounds=(0.0, 2.0), local_box=None, orders=None,
                           problem=None, settings=None):
    """Sweep the assembly Gauss order and record the resulting error.

    Defaults to p+1 .. p+10 points with p the larger basis order, at the
    given (typically coarsest) mesh.
    """
    p = max(order, local_order)
    if orders is None:
        orders = list(range(p + 1, p + 11))
    problem = problem or manufactured_case()
    model = build_model(family, order, local_order, case, n_e, bounds,
                        local_box)
    errors = []
    for n_gauss in orders:
        result = solve_model(model, problem, n_gauss, settings=settings)
        err = l2_error(model, result.d_global, result.d_local, problem.u)
        errors.append(err.error)
    return SensitivityTable(orders, errors)


class DistributionReport:
    """Per-local-element error field for one extreme-ratio solve."""

    def __init__(self, error_report, ratio):
        self.ratio = ratio
        self.error = error_report.error
        self.element_errors = error_report.element_errors
        self.crossing = error_report.crossing
        cross = self.crossing
        self.max_crossing = float(self.element_errors[cross].max())
        self.max_noncrossing = float(self.element_errors[~cross].max())

    @property
    def crossing_ratio(self):
        return self.max_crossing / self.max_noncrossing


def error_distribution_experiment(family, order, local_order=1, n_e=6,
                                  ratio=(10, 3), bounds=(0.0, 2.0),
                                  local_box=None, problem=None,
                                  settings=None):
    """Solve at an extreme global:local size ratio with p+1-point Gauss
    and return the per-local-element squared-error field.

    Crossing elements (cut by a global element boundary) are flagged so
    the integration error of discontinuous integrands shows up as the
    max-error contrast between crossing and non-crossing elements.
    """
    problem = problem or manufactured_case()
    if local_box is None:
        local_box = default_local_box(bounds, n_e)
    model = build_model(family, order, local_order, ratio, n_e, bounds,
                        local_box)
    n_gauss = max(order, local_order) + 1
    result = solve_model(model, problem, n_gauss, settings=settings)
    err = l2_error(model, result.d_global, result.d_local, problem.u,
                   per_element=True)
    return DistributionReport(err, ratio), result


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

SERIES_COLUMNS = ["case", "global_family", "global_order", "local_order",
                  "h_G", "dof", "l2_error", "cg_iters", "cg_converged",
                  "spd"]


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.17g}"
    return value


def write_series_csv(path, records):
    """One row per study point with the fixed simulation-series schema."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SERIES_COLUMNS)
        for rec in records:
            writer.writerow([_fmt(rec.get(c, "")) for c in SERIES_COLUMNS])


def write_error_field_csv(path, report, local_mesh):
    """Element index triple, centroid, squared error, crossing flag."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ex", "ey", "ez", "cx", "cy", "cz",
                         "squared_error", "crossing"])
        n = local_mesh.n_e
        for ex in range(n):
            for ey in range(n):
                for ez in range(n):
                    cx = local_mesh.b0 + (ex + 0.5) * local_mesh.h
                    cy = local_mesh.b0 + (ey + 0.5) * local_mesh.h
                    cz = local_mesh.b0 + (ez + 0.5) * local_mesh.h
                    writer.writerow([
                        ex, ey, ez, _fmt(cx), _fmt(cy), _fmt(cz),
                        _fmt(float(report.element_errors[ex, ey, ez])),
                        int(report.crossing[ex, ey, ez])])


def write_sensitivity_csv(path, table):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gauss_points", "l2_error", "rel_change"])
        for i, (order, err) in enumerate(zip(table.orders, table.errors)):
            change = "" if i == 0 else _fmt(table.rel_changes[i - 1])
            writer.writerow([order, _fmt(err), change])
