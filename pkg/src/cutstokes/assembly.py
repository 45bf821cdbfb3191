"""Block assembly of the saddle-point systems and the sparse direct solve.

Unknown ordering is [U | P | Lambda | mean-pressure multiplier].  All fluid
integrals are restricted to the clipped fluid region, interface integrals run
over the cut-element polylines, and the pressure/multiplier stabilizations use
full (unclipped) elements and full interior edges of their submeshes.  Wall
values are imposed strongly with lifting; the zero-mean pressure constraint is
a single symmetric bordering row/column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fespace import FeSpace, build_space
from .geometry import CutGeometry
from .quadrature import segment_rule, triangle_rule

__all__ = [
    "MethodConfig",
    "Spaces",
    "BlockSystem",
    "SolverError",
    "build_spaces",
    "assemble_stokes_blocks",
    "assemble_barbosa_hughes",
    "assemble_pressure_stab",
    "assemble_multiplier_stab",
    "build_system",
    "solve",
]

_VARIANTS: dict[str, dict] = {
    "NoStab": dict(triples={(2, 1, 1), (2, 1, 0), (1, 1, 1)}, barbosa=False, pstab=None,
                   hat_u=False, hat_p=False, lstab=None),
    "BarbosaHughes": dict(triples={(2, 1, 1), (2, 1, 0), (1, 1, 1)}, barbosa=True, pstab=None,
                          hat_u=False, hat_p=False, lstab=None),
    "HR_BP": dict(triples={(1, 1, 1), (1, 1, 0)}, barbosa=True, pstab="BP",
                  hat_u=True, hat_p=False, lstab=None),
    "HR_IP": dict(triples={(1, 0, 0), (1, 0, 1)}, barbosa=True, pstab="IP",
                  hat_u=True, hat_p=False, lstab=None),
    "HR_TH": dict(triples={(2, 1, 1)}, barbosa=True, pstab=None,
                  hat_u=True, hat_p=True, lstab=None),
    "BH_1_BP": dict(triples={(1, 1, 1)}, barbosa=False, pstab="BP",
                    hat_u=False, hat_p=False, lstab=1),
    "BH_0_IP": dict(triples={(1, 0, 0)}, barbosa=False, pstab="IP",
                    hat_u=False, hat_p=False, lstab=0),
    "BH_1_TH": dict(triples={(2, 1, 1)}, barbosa=False, pstab=None,
                    hat_u=False, hat_p=False, lstab=1),
}


class SolverError(RuntimeError):
    """Raised when the factorization fails or the residual check does not pass."""


@dataclass(frozen=True)
class MethodConfig:
    """One discretization variant with its FE triple and parameters.

    hat_u / hat_p are forced by the variant; viscous_factor is the coefficient
    of D(u)n inside the interface stabilization (the block formulas use 2).
    """

    variant: str
    fe_triple: tuple[int, int, int] = (2, 1, 1)
    gamma0: float = 0.05
    theta: float = 0.05
    gamma: float = 0.05
    theta_min: float = 0.01
    hat_u: bool = field(default=False)
    hat_p: bool = field(default=False)
    viscous_factor: int = 2

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(
                f"unknown variant '{self.variant}'; known: {', '.join(sorted(_VARIANTS))}"
            )
        spec = _VARIANTS[self.variant]
        triple = tuple(int(d) for d in self.fe_triple)
        if triple not in spec["triples"]:
            allowed = ", ".join(str(t) for t in sorted(spec["triples"]))
            raise ValueError(
                f"fe triple {triple} not admissible for {self.variant}; allowed: {allowed}"
            )
        if min(self.gamma0, self.theta, self.gamma) < 0.0:
            raise ValueError("stabilization parameters must be nonnegative")
        if self.viscous_factor not in (1, 2):
            raise ValueError("viscous_factor must be 1 or 2")
        object.__setattr__(self, "fe_triple", triple)
        object.__setattr__(self, "hat_u", spec["hat_u"])
        object.__setattr__(self, "hat_p", spec["hat_p"])

    @property
    def uses_barbosa(self) -> bool:
        return _VARIANTS[self.variant]["barbosa"]

    @property
    def pressure_stab(self) -> str | None:
        return _VARIANTS[self.variant]["pstab"]

    @property
    def multiplier_stab(self) -> int | None:
        return _VARIANTS[self.variant]["lstab"]


@dataclass(frozen=True)
class Spaces:
    velocity: FeSpace
    pressure: FeSpace
    multiplier: FeSpace


def build_spaces(cut: CutGeometry, fe_triple: tuple[int, int, int]) -> Spaces:
    """Velocity/pressure on the extended submesh, multiplier on the cut band."""
    ku, kp, kl = fe_triple
    ext = cut.extended_submesh()
    band = cut.interface_submesh()
    recon = cut.reconstruction_map()
    mesh = cut.mesh
    return Spaces(
        velocity=build_space(mesh, ext, ku, components=2, recon=recon),
        pressure=build_space(mesh, ext, kp, components=1, recon=recon),
        multiplier=build_space(mesh, band, kl, components=2),
    )


# ---------------------------------------------------------------------------
# quadrature point bundles


@dataclass(frozen=True)
class FluidQuad:
    """Fluid quadrature bundle: owner elements, points and physical weights."""

    elems: np.ndarray  # (m,)
    pts: np.ndarray    # (m, q, 2)
    wts: np.ndarray    # (m, q)


def fluid_quad(cut: CutGeometry, degree: int) -> FluidQuad:
    rule = triangle_rule(degree)
    mesh = cut.mesh
    elem_list = [cut.interior_ids]
    tri_list = [mesh.vertices[mesh.triangles[cut.interior_ids]]]
    for t in cut.cut_ids:
        fan = cut.clips[int(t)].fan
        if len(fan):
            elem_list.append(np.full(len(fan), t, dtype=np.int64))
            tri_list.append(fan)
    elems = np.concatenate(elem_list)
    tris = np.concatenate(tri_list, axis=0)
    pts = np.einsum("qb,mbs->mqs", rule.points, tris)
    d1 = tris[:, 1] - tris[:, 0]
    d2 = tris[:, 2] - tris[:, 0]
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    wts = rule.weights[None, :] * (areas[:, None] / 0.5)
    return FluidQuad(elems=elems, pts=pts, wts=wts)


@dataclass(frozen=True)
class InterfaceQuad:
    """Interface quadrature bundle: owner elements, points, weights, normals."""

    elems: np.ndarray    # (s,)
    pts: np.ndarray      # (s, q, 2)
    wts: np.ndarray      # (s, q)
    normals: np.ndarray  # (s, 2), toward the disk center (outward from fluid)


def interface_quad(cut: CutGeometry, degree: int) -> InterfaceQuad:
    rule = segment_rule(degree)
    seg_list, elem_list = [], []
    for t in cut.cut_ids:
        segs = cut.clips[int(t)].segments
        if len(segs):
            seg_list.append(segs)
            elem_list.append(np.full(len(segs), t, dtype=np.int64))
    if not seg_list:
        segs = np.zeros((0, 2, 2))
        elems = np.zeros(0, dtype=np.int64)
    else:
        segs = np.concatenate(seg_list, axis=0)
        elems = np.concatenate(elem_list)
    d = segs[:, 1] - segs[:, 0]
    lengths = np.hypot(d[:, 0], d[:, 1])
    normals = np.column_stack([d[:, 1], -d[:, 0]])
    with np.errstate(invalid="ignore", divide="ignore"):
        normals /= lengths[:, None]
    mid = 0.5 * (segs[:, 0] + segs[:, 1])
    to_center = np.asarray(cut.levelset.center) - mid
    flip = np.einsum("sk,sk->s", normals, to_center) < 0.0
    normals[flip] *= -1.0
    t = rule.points
    pts = segs[:, None, 0, :] + t[None, :, None] * (segs[:, None, 1, :] - segs[:, None, 0, :])
    wts = rule.weights[None, :] * lengths[:, None]
    return InterfaceQuad(elems=elems, pts=pts, wts=wts, normals=normals)


class _Coo:
    """Deterministic COO accumulator."""

    def __init__(self, shape):
        self.shape = shape
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []

    def add(self, rdofs: np.ndarray, cdofs: np.ndarray, local: np.ndarray) -> None:
        """rdofs (m,a), cdofs (m,b), local (m,a,b)."""
        m, a = rdofs.shape
        b = cdofs.shape[1]
        self.rows.append(np.repeat(rdofs, b, axis=1).reshape(-1))
        self.cols.append(np.tile(cdofs, (1, a)).reshape(-1))
        self.vals.append(local.reshape(-1))

    def tocsr(self) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix(self.shape)
        r = np.concatenate(self.rows)
        c = np.concatenate(self.cols)
        v = np.concatenate(self.vals)
        return sp.coo_matrix((v, (r, c)), shape=self.shape).tocsr()


def _sym_grad_normal(grads: np.ndarray, gn: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """D(N_i e_c) n at interface points.

    grads (s,q,nl,2), gn = grads.n (s,q,nl), normals (s,2).
    Returns (s,q,nl,2,2) indexed [..., i, c, a] = 0.5*(n_c g_a + (g.n) delta_ac).
    """
    n = normals[:, None, None, :]  # (s,1,1,2)
    term1 = n[..., :, None] * grads[..., None, :]          # n_c g_a -> (...,nl,c,a)
    term2 = gn[..., None, None] * np.eye(2)                # (g.n) delta_ac
    return 0.5 * (term1 + term2)


def _vector_pairing(wts, va, vb):
    """Component-diagonal mass pairing: out[(i,c),(j,d)] = delta_cd * sum_q w va_i vb_j."""
    m = np.einsum("sq,sqi,sqj->sij", wts, va, vb)
    s, a, b = m.shape
    out = np.zeros((s, a, 2, b, 2))
    out[:, :, 0, :, 0] = m
    out[:, :, 1, :, 1] = m
    return out.reshape(s, 2 * a, 2 * b)


def assemble_stokes_blocks(spaces: Spaces, cut: CutGeometry, f=None, g=None,
                           volume_degree: int = 4, interface_degree: int = 5,
                           data_degree: int = 6):
    """Base saddle-point blocks K, B, C and data vectors F, G.

    K = 2 * int_F D(phi_i):D(phi_j); B = -int_F psi div phi; C = int_G zeta.phi.
    B is (np x nu), C is (nlam x nu): the row space is the equation block.
    """
    vu, pr, la = spaces.velocity, spaces.pressure, spaces.multiplier
    fq = fluid_quad(cut, volume_degree)
    uvals, ugrads, udofs = vu.tabulate(fq.elems, fq.pts)
    pvals, _, pdofs = pr.tabulate(fq.elems, fq.pts)

    gw = ugrads * fq.wts[:, :, None, None]
    kiso = np.einsum("sqia,sqja->sij", gw, ugrads)
    kcross = np.einsum("sqia,sqjc->sicja", gw, ugrads)
    m, nl = kiso.shape[0], kiso.shape[1]
    kel = np.zeros((m, nl, 2, nl, 2))
    kel[:, :, 0, :, 0] = kiso
    kel[:, :, 1, :, 1] = kiso
    kel += kcross
    K = _Coo((vu.ndof, vu.ndof))
    K.add(udofs, udofs, kel.reshape(m, 2 * nl, 2 * nl))

    bel = -np.einsum("sq,sqp,sqjd->spjd", fq.wts, pvals, ugrads)
    B = _Coo((pr.ndof, vu.ndof))
    B.add(pdofs, udofs, bel.reshape(m, pvals.shape[2], 2 * nl))

    iq = interface_quad(cut, interface_degree)
    phi_v, _, phi_dofs = vu.tabulate(iq.elems, iq.pts, check=False)
    zeta_v, _, zeta_dofs = la.tabulate(iq.elems, iq.pts, check=False)
    C = _Coo((la.ndof, vu.ndof))
    C.add(zeta_dofs, phi_dofs, _vector_pairing(iq.wts, zeta_v, phi_v))

    F = np.zeros(vu.ndof)
    if f is not None:
        fq6 = fluid_quad(cut, data_degree)
        uv6, _, ud6 = vu.tabulate(fq6.elems, fq6.pts)
        fv = np.asarray(f(fq6.pts.reshape(-1, 2))).reshape(fq6.pts.shape[0], -1, 2)
        fel = np.einsum("sq,sqj,sqd->sjd", fq6.wts, uv6, fv)
        np.add.at(F, ud6.reshape(-1), fel.reshape(fel.shape[0], -1).reshape(-1))

    G = np.zeros(la.ndof)
    if g is not None:
        gv = np.asarray(g(iq.pts.reshape(-1, 2))).reshape(iq.pts.shape[0], -1, 2)
        gel = np.einsum("sq,sqj,sqd->sjd", iq.wts, zeta_v, gv)
        np.add.at(G, zeta_dofs.reshape(-1), gel.reshape(gel.shape[0], -1).reshape(-1))

    return K.tocsr(), B.tocsr(), C.tocsr(), F, G


def assemble_barbosa_hughes(spaces: Spaces, cut: CutGeometry, gamma0: float,
                            hat_u: bool, hat_p: bool, viscous_factor: int = 2,
                            interface_degree: int = 5):
    """The six interface stabilization blocks, signs as in the block systems.

    Returns (S_uu, S_up, S_ulam, S_pp, S_plam, S_lamlam) with S_up (np x nu),
    S_ulam (nlam x nu), S_plam (nlam x np): rows live in the equation block
    where the matrix appears below the diagonal.
    """
    vu, pr, la = spaces.velocity, spaces.pressure, spaces.multiplier
    h = cut.mesh.h
    kf = float(viscous_factor)

    iq = interface_quad(cut, interface_degree)
    _, ugrads, udofs = vu.tabulate(iq.elems, iq.pts, use_recon=hat_u, check=False)
    pvals, _, pdofs = pr.tabulate(iq.elems, iq.pts, use_recon=hat_p, check=False)
    zvals, _, zdofs = la.tabulate(iq.elems, iq.pts, check=False)

    gn = np.einsum("sqia,sa->sqi", ugrads, iq.normals)
    dn = _sym_grad_normal(ugrads, gn, iq.normals)  # (s,q,nl,2,2)
    s, q, nl = gn.shape
    nu_loc, np_loc, nz_loc = 2 * nl, pvals.shape[2], 2 * zvals.shape[2]

    w = iq.wts

    S_uu = _Coo((vu.ndof, vu.ndof))
    el = -(kf * kf) * gamma0 * h * np.einsum("sq,sqica,sqjda->sicjd", w, dn, dn)
    S_uu.add(udofs, udofs, el.reshape(s, nu_loc, nu_loc))

    # (Dn . n)_a n_a = n_c (g.n)
    dnn = gn[..., None] * iq.normals[:, None, None, :]  # (s,q,i,c)
    S_up = _Coo((pr.ndof, vu.ndof))
    el = kf * gamma0 * h * np.einsum("sq,sqp,sqjd->spjd", w, pvals, dnn)
    S_up.add(pdofs, udofs, el.reshape(s, np_loc, nu_loc))

    S_ul = _Coo((la.ndof, vu.ndof))
    el = -kf * gamma0 * h * np.einsum("sq,sqi,sqjdc->sicjd", w, zvals, dn)
    S_ul.add(zdofs, udofs, el.reshape(s, nz_loc, nu_loc))

    S_pp = _Coo((pr.ndof, pr.ndof))
    el = -gamma0 * h * np.einsum("sq,sqp,sqr->spr", w, pvals, pvals)
    S_pp.add(pdofs, pdofs, el)

    S_pl = _Coo((la.ndof, pr.ndof))
    el = gamma0 * h * np.einsum("sq,sqi,sc,sqp->sicp", w, zvals, iq.normals, pvals)
    S_pl.add(zdofs, pdofs, el.reshape(s, nz_loc, np_loc))

    S_ll = _Coo((la.ndof, la.ndof))
    S_ll.add(zdofs, zdofs, -gamma0 * h * _vector_pairing(w, zvals, zvals))

    return S_uu.tocsr(), S_up.tocsr(), S_ul.tocsr(), S_pp.tocsr(), S_pl.tocsr(), S_ll.tocsr()


def _full_element_stiffness(space: FeSpace, volume_degree: int = 2) -> sp.csr_matrix:
    """int over FULL (unclipped) submesh elements of grad(basis):grad(basis)."""
    rule = triangle_rule(max(volume_degree, 1))
    members = space.submesh.members
    tris = space.mesh.vertices[space.mesh.triangles[members]]
    pts = np.einsum("qb,mbs->mqs", rule.points, tris)
    _, grads, dofs = space.tabulate(members, pts)
    d1 = tris[:, 1] - tris[:, 0]
    d2 = tris[:, 2] - tris[:, 0]
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    wts = rule.weights[None, :] * (areas[:, None] / 0.5)
    gw = grads * wts[:, :, None, None]
    m = np.einsum("sqia,sqja->sij", gw, grads)
    out = _Coo((space.ndof, space.ndof))
    if space.components == 1:
        out.add(dofs, dofs, m)
    else:
        s, a = m.shape[0], m.shape[1]
        el = np.zeros((s, a, 2, a, 2))
        el[:, :, 0, :, 0] = m
        el[:, :, 1, :, 1] = m
        out.add(dofs, dofs, el.reshape(s, 2 * a, 2 * a))
    return out.tocsr()


def _edge_jump_matrix(space: FeSpace) -> sp.csr_matrix:
    """sum over interior submesh edges of |E| [basis][basis] for a P0 space."""
    if space.degree != 0:
        raise ValueError("edge-jump stabilization requires a discontinuous P0 space")
    mesh = space.mesh
    edges = space.submesh.interior_edges
    out = _Coo((space.ndof, space.ndof))
    if edges.size == 0:
        return out.tocsr()
    vpairs = mesh.edges[edges]
    lengths = np.hypot(*(mesh.vertices[vpairs[:, 1]] - mesh.vertices[vpairs[:, 0]]).T)
    tplus = mesh.edge_tris[edges, 0]
    tminus = mesh.edge_tris[edges, 1]
    dplus = space.element_dofs(tplus)   # (e, comps)
    dminus = space.element_dofs(tminus)
    jump_sign = np.array([1.0, -1.0])
    local = lengths[:, None, None] * np.outer(jump_sign, jump_sign)[None, :, :]
    for c in range(space.components):
        dofs = np.stack([dplus[:, c], dminus[:, c]], axis=1)
        out.add(dofs, dofs, local)
    return out.tocsr()


def assemble_pressure_stab(spaces: Spaces, cut: CutGeometry, variant: str | None,
                           theta: float) -> sp.csr_matrix:
    """Pressure stabilization S_p (negative semidefinite, sign included).

    BP: -theta h^2 * stiffness over full extended elements; IP: -theta h *
    jump penalty over full interior edges of the extended submesh.
    """
    pr = spaces.pressure
    h = cut.mesh.h
    if variant is None:
        return sp.csr_matrix((pr.ndof, pr.ndof))
    if variant == "BP":
        if pr.degree < 1:
            raise ValueError("Brezzi-Pitkaranta stabilization needs a continuous pressure")
        return (-theta * h * h) * _full_element_stiffness(pr, volume_degree=max(2 * pr.degree - 2, 1))
    if variant == "IP":
        if pr.degree != 0:
            raise ValueError("interior-penalty pressure stabilization needs P0 pressure")
        return (-theta * h) * _edge_jump_matrix(pr)
    raise ValueError(f"unknown pressure stabilization '{variant}'")


def assemble_multiplier_stab(spaces: Spaces, cut: CutGeometry, l: int,
                             gamma: float) -> sp.csr_matrix:
    """Multiplier stabilization S_lam: jumps for P0 (l=0), gradient for P1 (l=1)."""
    la = spaces.multiplier
    h = cut.mesh.h
    if l not in (0, 1):
        raise ValueError(f"multiplier stabilization order must be 0 or 1, got {l}")
    if l != la.degree:
        raise ValueError(
            f"multiplier stabilization order {l} inconsistent with P{la.degree} multiplier"
        )
    if l == 0:
        return (-gamma * h) * _edge_jump_matrix(la)
    return (-gamma * h * h) * _full_element_stiffness(la, volume_degree=1)


def fluid_mean_vector(spaces: Spaces, cut: CutGeometry, volume_degree: int = 4) -> np.ndarray:
    """Vector of int_F psi_i, used by the zero-mean pressure constraint."""
    pr = spaces.pressure
    fq = fluid_quad(cut, volume_degree)
    pvals, _, pdofs = pr.tabulate(fq.elems, fq.pts)
    el = np.einsum("sq,sqp->sp", fq.wts, pvals)
    m = np.zeros(pr.ndof)
    np.add.at(m, pdofs.reshape(-1), el.reshape(-1))
    return m


@dataclass(frozen=True)
class BlockSystem:
    """Assembled sparse system with field layout and boundary bookkeeping."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    config: MethodConfig
    spaces: Spaces
    u_slice: slice
    p_slice: slice
    lam_slice: slice
    mean_index: int
    wall_dofs: np.ndarray
    wall_values: np.ndarray

    @property
    def size(self) -> int:
        return self.rhs.shape[0]


def _apply_wall_bc(A: sp.csr_matrix, b: np.ndarray, wall: np.ndarray,
                   values: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray]:
    """Strong elimination with lifting: identity rows/cols, shifted RHS."""
    n = A.shape[0]
    xw = np.zeros(n)
    xw[wall] = values
    b = b - A @ xw
    b[wall] = values
    keep = np.ones(n)
    keep[wall] = 0.0
    D = sp.diags(keep)
    A = D @ A @ D + sp.diags(1.0 - keep)
    return A.tocsr(), b


def assemble_raw_system(config: MethodConfig, cut: CutGeometry, spaces: Spaces,
                        f=None, g=None, volume_degree: int = 4,
                        interface_degree: int = 5, data_degree: int = 6):
    """Symmetric block matrix and RHS before wall BC and mean constraint."""
    K, B, C, F, G = assemble_stokes_blocks(
        spaces, cut, f=f, g=g, volume_degree=volume_degree,
        interface_degree=interface_degree, data_degree=data_degree,
    )
    nu, npr, nl = spaces.velocity.ndof, spaces.pressure.ndof, spaces.multiplier.ndof
    App = sp.csr_matrix((npr, npr))
    All = sp.csr_matrix((nl, nl))
    Apl = sp.csr_matrix((nl, npr))

    if config.uses_barbosa and config.gamma0 != 0.0:
        S_uu, S_up, S_ul, S_pp, S_pl, S_ll = assemble_barbosa_hughes(
            spaces, cut, config.gamma0, config.hat_u, config.hat_p,
            viscous_factor=config.viscous_factor, interface_degree=interface_degree,
        )
        K = K + S_uu
        B = B + S_up
        C = C + S_ul
        App = App + S_pp
        Apl = Apl + S_pl
        All = All + S_ll

    if config.pressure_stab is not None and config.theta != 0.0:
        App = App + assemble_pressure_stab(spaces, cut, config.pressure_stab, config.theta)

    if config.multiplier_stab is not None and config.gamma != 0.0:
        All = All + assemble_multiplier_stab(spaces, cut, config.multiplier_stab, config.gamma)

    A = sp.bmat(
        [
            [K, B.T, C.T],
            [B, App, Apl.T],
            [C, Apl, All],
        ],
        format="csr",
    )
    rhs = np.concatenate([F, np.zeros(npr), G])
    return A, rhs


def locked_pressure_dofs(A: sp.csr_matrix, u_size: int, p_size: int) -> np.ndarray:
    """Pressure DOFs whose post-elimination row is structurally empty.

    A P1 pressure hat supported on a single corner triangle whose velocity
    DOFs are all wall DOFs pairs with no unknown at all: its continuity
    equation is vacuous, and keeping it makes the system exactly singular
    (this hits P1 velocity with unstabilized pressure at the two corners the
    fixed diagonal orientation leaves without interior nodes).
    """
    A = A.tocsr()
    row_max = np.zeros(A.shape[0])
    if A.nnz:
        np.maximum.at(row_max, np.repeat(np.arange(A.shape[0]), np.diff(A.indptr)), np.abs(A.data))
    empty = np.flatnonzero(row_max == 0.0)
    return empty[(empty >= u_size) & (empty < u_size + p_size)]


def build_system(config: MethodConfig, cut: CutGeometry, spaces: Spaces | None = None,
                 f=None, g=None, g_wall=None, volume_degree: int = 4,
                 interface_degree: int = 5, data_degree: int = 6) -> BlockSystem:
    """Assemble the full solvable system: blocks + wall lifting + mean row."""
    if spaces is None:
        spaces = build_spaces(cut, config.fe_triple)
    A, rhs = assemble_raw_system(
        config, cut, spaces, f=f, g=g, volume_degree=volume_degree,
        interface_degree=interface_degree, data_degree=data_degree,
    )
    nu, npr, nl = spaces.velocity.ndof, spaces.pressure.ndof, spaces.multiplier.ndof

    wall = spaces.velocity.wall_dofs()
    if g_wall is not None:
        nodes = wall // 2
        comps = wall % 2
        vals = np.asarray(g_wall(spaces.velocity.node_coords[nodes]))
        wall_values = vals[np.arange(len(wall)), comps]
    else:
        wall_values = np.zeros(len(wall))
    A, rhs = _apply_wall_bc(A, rhs, wall, wall_values)

    locked = locked_pressure_dofs(A, nu, npr)
    if locked.size:
        A, rhs = _apply_wall_bc(A, rhs, locked, np.zeros(locked.size))

    m = fluid_mean_vector(spaces, cut, volume_degree=volume_degree)
    col = np.zeros((A.shape[0], 1))
    col[nu : nu + npr, 0] = m
    A = sp.bmat([[A, col], [col.T, None]], format="csr")
    rhs = np.concatenate([rhs, [0.0]])

    return BlockSystem(
        matrix=A,
        rhs=rhs,
        config=config,
        spaces=spaces,
        u_slice=slice(0, nu),
        p_slice=slice(nu, nu + npr),
        lam_slice=slice(nu + npr, nu + npr + nl),
        mean_index=nu + npr + nl,
        wall_dofs=wall,
        wall_values=wall_values,
    )


def solve(system: BlockSystem, rtol: float = 1e-8) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sparse LU solve with a residual check and one refinement step.

    Raises SolverError when the factorization hits a zero pivot or the relative
    residual stays above rtol (singular or numerically singular system).
    """
    A = system.matrix.tocsc()
    b = system.rhs
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:  # SuperLU reports the zero-pivot location
        raise SolverError(f"sparse factorization failed: {exc}") from exc
    x = lu.solve(b)
    bnorm = float(np.linalg.norm(b)) or 1.0
    res = float(np.linalg.norm(A @ x - b)) / bnorm
    if not np.isfinite(res) or res > rtol:
        x = x + lu.solve(b - A @ x)
        res = float(np.linalg.norm(A @ x - b)) / bnorm
    if not np.isfinite(res) or res > rtol:
        raise SolverError(
            f"solver residual {res:.3e} exceeds {rtol:.1e}; system is (numerically) singular"
        )
    return x[system.u_slice], x[system.p_slice], x[system.lam_slice]
