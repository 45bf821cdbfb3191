"""Lagrange spaces P0/P1/P2 on submeshes with the robust-reconstruction map.

DOF numbering is deterministic: scalar nodes are sorted lexicographically by
coordinates and vector DOFs are node-major (node, then component).  Vector
basis functions are N_i e_c, so everything here tabulates the scalar basis and
the assembly expands components.  The reconstruction map sends each bad cut
element to its good neighbor; evaluating "through" it extends the neighbor's
polynomial to points outside the neighbor, which is the whole point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import BackgroundMesh, Submesh

__all__ = ["FeSpace", "build_space", "tabulate_reference"]

_REF_CHECK_TOL = 1e-10


def tabulate_reference(degree: int, ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scalar shape functions and reference gradients at points ref (..., 2).

    Local ordering: vertices 0,1,2 then (for P2) edge midpoints 01, 12, 20.
    """
    xi = ref[..., 0]
    eta = ref[..., 1]
    lam0 = 1.0 - xi - eta
    one = np.ones_like(xi)
    zero = np.zeros_like(xi)
    if degree == 0:
        vals = np.stack([one], axis=-1)
        grads = np.stack([np.stack([zero, zero], axis=-1)], axis=-2)
    elif degree == 1:
        vals = np.stack([lam0, xi, eta], axis=-1)
        g = [(-1.0, -1.0), (1.0, 0.0), (0.0, 1.0)]
        grads = np.stack(
            [np.stack([gx * one, gy * one], axis=-1) for gx, gy in g], axis=-2
        )
    elif degree == 2:
        vals = np.stack(
            [
                lam0 * (2 * lam0 - 1),
                xi * (2 * xi - 1),
                eta * (2 * eta - 1),
                4 * lam0 * xi,
                4 * xi * eta,
                4 * eta * lam0,
            ],
            axis=-1,
        )
        d0 = np.stack([1 - 4 * lam0, 1 - 4 * lam0], axis=-1)
        d1 = np.stack([4 * xi - 1, zero], axis=-1)
        d2 = np.stack([zero, 4 * eta - 1], axis=-1)
        d01 = np.stack([4 * (lam0 - xi), -4 * xi], axis=-1)
        d12 = np.stack([4 * eta, 4 * xi], axis=-1)
        d20 = np.stack([-4 * eta, 4 * (lam0 - eta)], axis=-1)
        grads = np.stack([d0, d1, d2, d01, d12, d20], axis=-2)
    else:
        raise ValueError(f"unsupported polynomial degree {degree}")
    return vals, grads


@dataclass(frozen=True)
class FeSpace:
    """A scalar or vector Lagrange space on a submesh of the background mesh."""

    mesh: BackgroundMesh
    submesh: Submesh
    degree: int
    components: int
    node_coords: np.ndarray     # (n_scalar, 2)
    node_lattice: np.ndarray    # (n_scalar, 2) ints in units 1/(2n); P0: scaled centroid key
    elem_nodes: np.ndarray      # (n_members, nloc) scalar node ids, rows follow submesh.members
    member_pos: np.ndarray      # parent triangle -> row in elem_nodes, -1 outside
    recon: np.ndarray           # parent triangle -> parent triangle (identity off bad cuts)
    v0: np.ndarray              # (n_members, 2) first vertex of each member
    jac: np.ndarray             # (n_members, 2, 2) affine map Jacobians
    jac_inv: np.ndarray         # (n_members, 2, 2)

    @property
    def n_scalar(self) -> int:
        return self.node_coords.shape[0]

    @property
    def ndof(self) -> int:
        return self.n_scalar * self.components

    @property
    def nloc(self) -> int:
        return self.elem_nodes.shape[1]

    def element_dofs(self, elems: np.ndarray) -> np.ndarray:
        """Global DOF indices for elements, shape (m, nloc*components), node-major."""
        rows = self.member_pos[elems]
        if np.any(rows < 0):
            raise KeyError("element not in space submesh")
        nodes = self.elem_nodes[rows]
        dofs = nodes[..., None] * self.components + np.arange(self.components)
        return dofs.reshape(nodes.shape[0], -1)

    def wall_dofs(self) -> np.ndarray:
        """DOFs whose node lies on the boundary of the unit square."""
        if self.degree == 0:
            return np.zeros(0, dtype=np.int64)
        top = 2 * self.mesh.n
        lat = self.node_lattice
        on_wall = (lat[:, 0] == 0) | (lat[:, 0] == top) | (lat[:, 1] == 0) | (lat[:, 1] == top)
        nodes = np.flatnonzero(on_wall)
        dofs = nodes[:, None] * self.components + np.arange(self.components)
        return dofs.reshape(-1)

    def to_reference(self, elems: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """Pull physical points (m, ..., 2) back to element reference coordinates."""
        rows = self.member_pos[elems]
        v0 = self.v0[rows].reshape((-1,) + (1,) * (pts.ndim - 2) + (2,))
        ji = self.jac_inv[rows]
        return np.einsum("mst,m...t->m...s", ji, pts - v0)

    def tabulate(
        self, elems: np.ndarray, pts: np.ndarray, use_recon: bool = False, check: bool = True
    ):
        """Scalar basis values/physical gradients of given elements at physical points.

        pts has shape (m, ..., 2) with one element per leading entry.  With
        use_recon the basis of recon[elem] is evaluated instead (polynomial
        extension, no domain check).  Returns (vals, grads, dofs) with vals
        (m, ..., nloc), grads (m, ..., nloc, 2), dofs (m, nloc*components).
        """
        elems = np.asarray(elems, dtype=np.int64)
        eval_elems = self.recon[elems] if use_recon else elems
        ref = self.to_reference(eval_elems, pts)
        if check and not use_recon:
            b0 = 1.0 - ref[..., 0] - ref[..., 1]
            if min(ref[..., 0].min(initial=0.0), ref[..., 1].min(initial=0.0), b0.min(initial=0.0)) < -_REF_CHECK_TOL:
                raise ValueError("evaluation point outside the reference triangle")
        vals, ref_grads = tabulate_reference(self.degree, ref)
        rows = self.member_pos[eval_elems]
        ji = self.jac_inv[rows]
        shape = (ji.shape[0],) + (1,) * (ref_grads.ndim - 3) + (2, 2)
        grads = np.einsum("m...is,m...st->m...it", ref_grads, ji.reshape(shape))
        return vals, grads, self.element_dofs(eval_elems)

    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolation; P0 uses centroid values.

        func maps (n,2) points to (n,) scalars or (n, components) vectors.
        """
        vals = np.asarray(func(self.node_coords))
        if self.components == 1:
            return vals.reshape(-1).astype(float)
        return vals.reshape(self.n_scalar * self.components).astype(float)


def build_space(
    mesh: BackgroundMesh,
    submesh: Submesh,
    degree: int,
    components: int = 1,
    recon: np.ndarray | None = None,
    continuous: bool | None = None,
) -> FeSpace:
    """Build a P0/P1/P2 space on a submesh; only nodes carried by members get DOFs."""
    if degree not in (0, 1, 2):
        raise ValueError(f"degree must be 0, 1 or 2, got {degree}")
    if components not in (1, 2):
        raise ValueError(f"components must be 1 or 2, got {components}")
    if continuous and degree == 0:
        raise ValueError("P0 spaces cannot be continuous")
    if submesh.num_members == 0:
        raise ValueError("submesh is empty")

    n = mesh.n
    members = submesh.members
    tri = mesh.triangles[members]
    vx = (np.round(mesh.vertices[:, 0] * n).astype(np.int64)) * 2
    vy = (np.round(mesh.vertices[:, 1] * n).astype(np.int64)) * 2
    vert_lat = np.column_stack([vx, vy])  # vertex lattice in units 1/(2n)

    if degree == 0:
        lat = vert_lat[tri].sum(axis=1)  # centroid key, units 1/(6n)
        order = np.lexsort((lat[:, 1], lat[:, 0]))
        node_of_member = np.empty(len(members), dtype=np.int64)
        node_of_member[order] = np.arange(len(members))
        node_lattice = lat[order]
        node_coords = mesh.vertices[tri].mean(axis=1)[order]
        elem_nodes = node_of_member[:, None]
    else:
        lat_loc = [vert_lat[tri[:, i]] for i in range(3)]
        if degree == 2:
            mids = [(0, 1), (1, 2), (2, 0)]
            lat_loc += [
                (vert_lat[tri[:, a]] + vert_lat[tri[:, b]]) // 2 for a, b in mids
            ]
        lat_all = np.concatenate(lat_loc, axis=0)  # (nloc*nm, 2), local-dof major
        uniq, inverse = np.unique(lat_all, axis=0, return_inverse=True)
        # np.unique sorts rows lexicographically by (x, y) already
        node_lattice = uniq
        node_coords = uniq / (2.0 * n)
        nloc = len(lat_loc)
        elem_nodes = inverse.reshape(nloc, len(members)).T

    member_pos = np.full(mesh.num_triangles, -1, dtype=np.int64)
    member_pos[members] = np.arange(len(members))

    coords = mesh.vertices[tri]
    v0 = coords[:, 0]
    jac = np.stack([coords[:, 1] - v0, coords[:, 2] - v0], axis=-1)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    jac_inv = np.empty_like(jac)
    jac_inv[:, 0, 0] = jac[:, 1, 1] / det
    jac_inv[:, 0, 1] = -jac[:, 0, 1] / det
    jac_inv[:, 1, 0] = -jac[:, 1, 0] / det
    jac_inv[:, 1, 1] = jac[:, 0, 0] / det

    if recon is None:
        recon = np.arange(mesh.num_triangles, dtype=np.int64)
    else:
        recon = np.asarray(recon, dtype=np.int64)
        in_sub = member_pos[recon[members]] >= 0
        if not np.all(in_sub):
            raise ValueError("reconstruction map leaves the space submesh")

    return FeSpace(
        mesh=mesh,
        submesh=submesh,
        degree=degree,
        components=components,
        node_coords=node_coords,
        node_lattice=node_lattice,
        elem_nodes=elem_nodes,
        member_pos=member_pos,
        recon=recon,
        v0=v0,
        jac=jac,
        jac_inv=jac_inv,
    )
