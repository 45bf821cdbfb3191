"""Manufactured solution, error norms, convergence sweeps and inf-sup probes.

The exact velocity/pressure pair is the divergence-free trigonometric field of
the experiments; body force, interface datum and wall datum all derive from
it, so the discrete problem is consistent with the global closed forms
regardless of the polygonal interface approximation.  Errors are integrated
only over the (clipped) fluid region; the multiplier is judged by the net
interface force, with its reference integral evaluated on the exact circle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly import (
    BlockSystem,
    MethodConfig,
    SolverError,
    Spaces,
    _edge_jump_matrix,
    _full_element_stiffness,
    _vector_pairing,
    _Coo,
    assemble_raw_system,
    build_spaces,
    build_system,
    fluid_mean_vector,
    fluid_quad,
    interface_quad,
    solve,
)
from .geometry import CutGeometry, LevelSet, build_cut_geometry
from .mesh import build_background_mesh
from .quadrature import segment_rule

__all__ = [
    "ExactSolution",
    "ErrorRow",
    "ErrorReport",
    "compute_errors",
    "fit_slope",
    "run_convergence_study",
    "estimate_infsup",
    "generalized_min_sv",
]


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form fields of the convergence experiments.

    u = (cos(pi x) sin(pi y), -sin(pi x) cos(pi y)) is divergence free, so the
    momentum forcing reduces to f = -Laplace(u) + grad p = 2 pi^2 u + grad p.
    The interface traction is lam = -2 D(u) n + p n with n = (c - x)/|c - x|,
    the unit normal pointing from the fluid toward the disk center.
    """

    center: tuple[float, float] = (0.5, 0.5)
    radius: float = 0.21

    def u(self, pts: np.ndarray) -> np.ndarray:
        x, y = pts[..., 0], pts[..., 1]
        return np.stack(
            [np.cos(np.pi * x) * np.sin(np.pi * y), -np.sin(np.pi * x) * np.cos(np.pi * y)],
            axis=-1,
        )

    def grad_u(self, pts: np.ndarray) -> np.ndarray:
        """(..., 2, 2) array with entries du_i/dx_j."""
        x, y = pts[..., 0], pts[..., 1]
        ss = np.pi * np.sin(np.pi * x) * np.sin(np.pi * y)
        cc = np.pi * np.cos(np.pi * x) * np.cos(np.pi * y)
        g = np.empty(pts.shape[:-1] + (2, 2))
        g[..., 0, 0] = -ss
        g[..., 0, 1] = cc
        g[..., 1, 0] = -cc
        g[..., 1, 1] = ss
        return g

    def p(self, pts: np.ndarray) -> np.ndarray:
        x, y = pts[..., 0], pts[..., 1]
        return (y - 0.5) * np.cos(2 * np.pi * x) + (x - 0.5) * np.sin(2 * np.pi * y)

    def grad_p(self, pts: np.ndarray) -> np.ndarray:
        x, y = pts[..., 0], pts[..., 1]
        return np.stack(
            [
                -2 * np.pi * (y - 0.5) * np.sin(2 * np.pi * x) + np.sin(2 * np.pi * y),
                np.cos(2 * np.pi * x) + 2 * np.pi * (x - 0.5) * np.cos(2 * np.pi * y),
            ],
            axis=-1,
        )

    def f(self, pts: np.ndarray) -> np.ndarray:
        return 2.0 * np.pi**2 * self.u(pts) + self.grad_p(pts)

    def normal(self, pts: np.ndarray) -> np.ndarray:
        """Unit normal toward the disk center, defined off the circle as well."""
        d = np.asarray(self.center) - pts
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def lam(self, pts: np.ndarray) -> np.ndarray:
        n = self.normal(pts)
        g = self.grad_u(pts)
        dsym = 0.5 * (g + np.swapaxes(g, -1, -2))
        return -2.0 * np.einsum("...ij,...j->...i", dsym, n) + self.p(pts)[..., None] * n

    def interface_force(self, num_points: int = 512) -> np.ndarray:
        """int_Gamma lam on the exact circle by composite Gauss arc quadrature."""
        npanel, ngauss = num_points // 4, 4
        xg, wg = np.polynomial.legendre.leggauss(ngauss)
        edges = np.linspace(0.0, 2.0 * math.pi, npanel + 1)
        mid = 0.5 * (edges[:-1] + edges[1:])
        half = 0.5 * (edges[1] - edges[0])
        theta = (mid[:, None] + half * xg[None, :]).reshape(-1)
        w = (half * wg[None, :] * np.ones((npanel, 1))).reshape(-1) * self.radius
        pts = np.stack(
            [
                self.center[0] + self.radius * np.cos(theta),
                self.center[1] + self.radius * np.sin(theta),
            ],
            axis=-1,
        )
        return w @ self.lam(pts)


@dataclass
class ErrorRow:
    n: int
    h: float
    l2_u: float
    h1_u: float
    l2_p: float
    lam_int: float
    l2_lam: float = float("nan")  # informational pointwise multiplier error
    infsup: float | None = None
    bad_elements: int = 0
    failure: str | None = None


@dataclass
class ErrorReport:
    rows: list[ErrorRow] = field(default_factory=list)
    slopes: dict[str, float] = field(default_factory=dict)

    def ok_rows(self) -> list[ErrorRow]:
        return [r for r in self.rows if r.failure is None]

    def fit_slopes(self) -> None:
        rows = self.ok_rows()
        if len(rows) >= 2:
            h = [r.h for r in rows]
            for key in ("l2_u", "h1_u", "l2_p", "lam_int"):
                self.slopes[key] = fit_slope(h, [getattr(r, key) for r in rows])

    def write_csv(self, stream) -> None:
        """Spec CSV: data rows then a slope row; optional inf-sup column."""
        with_probe = any(r.infsup is not None for r in self.rows)
        header = "n,h,l2_u,h1_u,l2_p,lam_int" + (",infsup" if with_probe else "")
        stream.write(header + "\n")
        for r in self.rows:
            if r.failure is not None:
                cells = [str(r.n), f"{r.h:.10e}", "failed", "failed", "failed", "failed"]
            else:
                cells = [
                    str(r.n),
                    f"{r.h:.10e}",
                    f"{r.l2_u:.10e}",
                    f"{r.h1_u:.10e}",
                    f"{r.l2_p:.10e}",
                    f"{r.lam_int:.10e}",
                ]
            if with_probe:
                cells.append("" if r.infsup is None else f"{r.infsup:.10e}")
            stream.write(",".join(cells) + "\n")
        if self.slopes:
            cells = ["slope", ""]
            cells += [f"{self.slopes[k]:.6f}" for k in ("l2_u", "h1_u", "l2_p", "lam_int")]
            if with_probe:
                cells.append("")
            stream.write(",".join(cells) + "\n")


def fit_slope(h, err) -> float:
    """Least-squares slope of log(err) against log(h)."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    if h.size < 2:
        raise ValueError("slope fit needs at least 2 points")
    if np.any(h <= 0.0) or np.any(err <= 0.0):
        raise ValueError("slope fit needs positive mesh sizes and errors")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def _fe_values(space, coefs, vals, dofs):
    """Evaluate a FE function from tabulated basis values; (m,q[,comp])."""
    c = coefs[dofs]  # (m, nloc*comp)
    if space.components == 1:
        return np.einsum("mqj,mj->mq", vals, c)
    cm = c.reshape(c.shape[0], -1, space.components)
    return np.einsum("mqj,mjc->mqc", vals, cm)


def _fe_gradients(space, coefs, grads, dofs):
    c = coefs[dofs]
    if space.components == 1:
        return np.einsum("mqjs,mj->mqs", grads, c)
    cm = c.reshape(c.shape[0], -1, space.components)
    return np.einsum("mqjs,mjc->mqcs", grads, cm)


def compute_errors(
    cut: CutGeometry,
    spaces: Spaces,
    U: np.ndarray,
    P: np.ndarray,
    Lam: np.ndarray,
    exact: ExactSolution,
    error_degree: int = 6,
    interface_degree: int = 5,
    arc_points: int = 512,
) -> dict[str, float]:
    """Fluid-region error norms and the interface-force metric.

    Pressures are compared mean-adjusted: both the exact pressure and the
    discrete one are shifted to zero mean over the discrete fluid region.
    """
    fq = fluid_quad(cut, error_degree)
    w = fq.wts
    flat = fq.pts.reshape(-1, 2)
    area = float(w.sum())

    uv, ug, ud = spaces.velocity.tabulate(fq.elems, fq.pts)
    uh = _fe_values(spaces.velocity, U, uv, ud)
    guh = _fe_gradients(spaces.velocity, U, ug, ud)
    ue = exact.u(flat).reshape(fq.pts.shape[:2] + (2,))
    gue = exact.grad_u(flat).reshape(fq.pts.shape[:2] + (2, 2))
    du = ue - uh
    l2_u = math.sqrt(float(np.einsum("mq,mqc->", w, du**2)))
    dgu = gue - guh
    h1_u = math.sqrt(float(np.einsum("mq,mqcs->", w, dgu**2)))

    pv, _, pd = spaces.pressure.tabulate(fq.elems, fq.pts)
    ph = _fe_values(spaces.pressure, P, pv, pd)
    pe = exact.p(flat).reshape(fq.pts.shape[:2])
    pe_mean = float(np.einsum("mq,mq->", w, pe)) / area
    ph_mean = float(np.einsum("mq,mq->", w, ph)) / area
    dp = (pe - pe_mean) - (ph - ph_mean)
    l2_p = math.sqrt(float(np.einsum("mq,mq->", w, dp**2)))

    iq = interface_quad(cut, interface_degree)
    zv, _, zd = spaces.multiplier.tabulate(iq.elems, iq.pts, check=False)
    lamh = _fe_values(spaces.multiplier, Lam, zv, zd)
    force_h = np.einsum("sq,sqc->c", iq.wts, lamh)
    force_ex = exact.interface_force(arc_points)
    lam_int = float(np.linalg.norm(force_ex - force_h))

    lam_ex = exact.lam(iq.pts.reshape(-1, 2)).reshape(iq.pts.shape)
    l2_lam = math.sqrt(float(np.einsum("sq,sqc->", iq.wts, (lam_ex - lamh) ** 2)))

    return {
        "l2_u": l2_u,
        "h1_u": h1_u,
        "l2_p": l2_p,
        "lam_int": lam_int,
        "l2_lam": l2_lam,
    }


def solve_on_mesh(
    config: MethodConfig,
    exact: ExactSolution,
    n: int,
    k: int = 8,
    volume_degree: int = 4,
    interface_degree: int = 5,
    data_degree: int = 6,
):
    """Build -> assemble -> solve on one mesh; returns (system, cut, U, P, Lam)."""
    mesh = build_background_mesh(n)
    ls = LevelSet(center=exact.center, radius=exact.radius)
    cut = build_cut_geometry(mesh, ls, k=k, theta_min=config.theta_min)
    system = build_system(
        config,
        cut,
        f=exact.f,
        g=lambda pts: exact.u(pts),
        g_wall=lambda pts: exact.u(pts),
        volume_degree=volume_degree,
        interface_degree=interface_degree,
        data_degree=data_degree,
    )
    U, P, Lam = solve(system)
    return system, cut, U, P, Lam


def run_convergence_study(
    config: MethodConfig,
    n_list,
    exact: ExactSolution | None = None,
    k: int = 8,
    volume_degree: int = 4,
    interface_degree: int = 5,
    data_degree: int = 6,
    error_degree: int = 6,
    probe_infsup: bool = False,
    threads: int = 1,
) -> ErrorReport:
    """Sweep the meshes, collecting error rows and fitted slopes.

    A singular solve flags its row and the sweep continues.
    """
    if exact is None:
        exact = ExactSolution()

    def one(n: int) -> ErrorRow:
        h = math.sqrt(2.0) / n
        try:
            system, cut, U, P, Lam = solve_on_mesh(
                config, exact, n, k=k, volume_degree=volume_degree,
                interface_degree=interface_degree, data_degree=data_degree,
            )
        except SolverError as exc:
            return ErrorRow(n=n, h=h, l2_u=math.nan, h1_u=math.nan, l2_p=math.nan,
                            lam_int=math.nan, failure=str(exc))
        errs = compute_errors(
            cut, system.spaces, U, P, Lam, exact,
            error_degree=error_degree, interface_degree=interface_degree,
        )
        row = ErrorRow(n=n, h=h, bad_elements=int(np.sum(~cut.good)), **errs)
        if probe_infsup:
            row.infsup = estimate_infsup(config, n, exact=exact, k=k)
        return row

    n_list = list(n_list)
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(one, n_list))
    else:
        rows = [one(n) for n in n_list]

    report = ErrorReport(rows=rows)
    report.fit_slopes()
    return report


# ---------------------------------------------------------------------------
# inf-sup probe


def _interface_mass(space, cut: CutGeometry, interface_degree: int = 5) -> sp.csr_matrix:
    iq = interface_quad(cut, interface_degree)
    vals, _, dofs = space.tabulate(iq.elems, iq.pts, check=False)
    out = _Coo((space.ndof, space.ndof))
    if space.components == 2:
        out.add(dofs, dofs, _vector_pairing(iq.wts, vals, vals))
    else:
        out.add(dofs, dofs, np.einsum("sq,sqi,sqj->sij", iq.wts, vals, vals))
    return out.tocsr()


def _fluid_h1_gram(space, cut: CutGeometry, volume_degree: int = 4) -> sp.csr_matrix:
    fq = fluid_quad(cut, volume_degree)
    _, grads, dofs = space.tabulate(fq.elems, fq.pts)
    gw = grads * fq.wts[:, :, None, None]
    m = np.einsum("sqia,sqja->sij", gw, grads)
    out = _Coo((space.ndof, space.ndof))
    if space.components == 2:
        s, a = m.shape[0], m.shape[1]
        el = np.zeros((s, a, 2, a, 2))
        el[:, :, 0, :, 0] = m
        el[:, :, 1, :, 1] = m
        out.add(dofs, dofs, el.reshape(s, 2 * a, 2 * a))
    else:
        out.add(dofs, dofs, m)
    return out.tocsr()


def _fluid_mass(space, cut: CutGeometry, volume_degree: int = 4) -> sp.csr_matrix:
    fq = fluid_quad(cut, volume_degree)
    vals, _, dofs = space.tabulate(fq.elems, fq.pts)
    out = _Coo((space.ndof, space.ndof))
    out.add(dofs, dofs, np.einsum("sq,sqi,sqj->sij", fq.wts, vals, vals))
    return out.tocsr()


def triple_norm_gram(config: MethodConfig, cut: CutGeometry, spaces: Spaces) -> sp.csr_matrix:
    """Gram matrix of the stability norm used by the variant's analysis.

    |u|_1,F^2 + h^-1 ||u||_Gamma^2 + ||p||_F^2 (+ h^2 |p|_1 or h sum [p]^2)
    + h ||lam||_Gamma^2 (+ h^2 |lam|_1 or h sum [lam]^2 for the BH family).
    """
    h = cut.mesh.h
    Gu = _fluid_h1_gram(spaces.velocity, cut) + (1.0 / h) * _interface_mass(spaces.velocity, cut)
    Gp = _fluid_mass(spaces.pressure, cut)
    kp = config.fe_triple[1]
    taylor_hood = config.variant in ("HR_TH", "BH_1_TH") or (
        config.variant in ("NoStab", "BarbosaHughes") and config.fe_triple[0] == 2
    )
    if not taylor_hood:
        if kp == 0:
            Gp = Gp + h * _edge_jump_matrix(spaces.pressure)
        else:
            Gp = Gp + h * h * _full_element_stiffness(spaces.pressure)
    Gl = h * _interface_mass(spaces.multiplier, cut)
    if config.variant in ("BH_1_BP", "BH_1_TH"):
        Gl = Gl + h * h * _full_element_stiffness(spaces.multiplier)
    elif config.variant == "BH_0_IP":
        Gl = Gl + h * _edge_jump_matrix(spaces.multiplier)
    return sp.block_diag([Gu, Gp, Gl], format="csr")


def generalized_min_sv(A: np.ndarray, N: np.ndarray) -> float:
    """Smallest singular value of N^(-1/2) A N^(-1/2) for symmetric PD N."""
    evals, evecs = sla.eigh(N)
    if evals.min() <= 1e-12 * evals.max():
        raise ValueError("norm Gram matrix is numerically singular")
    ninvh = (evecs / np.sqrt(evals)) @ evecs.T
    return float(sla.svdvals(ninvh @ A @ ninvh)[-1])


def estimate_infsup(
    config: MethodConfig,
    n: int,
    exact: ExactSolution | None = None,
    k: int = 8,
    max_n: int = 16,
) -> float:
    """Discrete inf-sup estimate of the variant's bilinear form at mesh n.

    Wall DOFs are removed by restriction and the zero-mean pressure constraint
    by null-space projection, then the smallest generalized singular value
    w.r.t. the triple-norm Gram is computed densely.  Rejects n > max_n.
    """
    if n > max_n:
        raise ValueError(f"inf-sup probe limited to n <= {max_n} (dense solve), got {n}")
    if exact is None:
        exact = ExactSolution()
    mesh = build_background_mesh(n)
    ls = LevelSet(center=exact.center, radius=exact.radius)
    cut = build_cut_geometry(mesh, ls, k=k, theta_min=config.theta_min)
    spaces = build_spaces(cut, config.fe_triple)
    A, _ = assemble_raw_system(config, cut, spaces)
    N = triple_norm_gram(config, cut, spaces)

    wall = spaces.velocity.wall_dofs()
    free = np.setdiff1d(np.arange(A.shape[0]), wall)
    Ad = A.toarray()[np.ix_(free, free)]
    Nd = N.toarray()[np.ix_(free, free)]
    # Locked corner pressure DOFs (see assembly.locked_pressure_dofs) carry no
    # equation; keeping them would report an inf-sup of exactly zero at any n.
    live = np.flatnonzero(np.abs(Ad).max(axis=1) > 0.0)
    Ad = Ad[np.ix_(live, live)]
    Nd = Nd[np.ix_(live, live)]
    free = free[live]

    m = fluid_mean_vector(spaces, cut)
    wvec = np.zeros(A.shape[0])
    wvec[spaces.velocity.ndof : spaces.velocity.ndof + spaces.pressure.ndof] = m
    wvec = wvec[free]
    # Householder reflection sending the constraint vector to a coordinate axis;
    # the remaining columns span {x : m . x_p = 0}.
    v = wvec.copy()
    v[0] += math.copysign(np.linalg.norm(wvec), wvec[0] if wvec[0] != 0 else 1.0)
    H = np.eye(len(v)) - 2.0 * np.outer(v, v) / (v @ v)
    Z = H[:, 1:]
    return generalized_min_sv(Z.T @ Ad @ Z, Z.T @ Nd @ Z)
