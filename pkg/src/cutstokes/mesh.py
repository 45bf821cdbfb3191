"""Uniform background triangulation of the unit square and submesh extraction.

Every grid square is split by its lower-left -> upper-right diagonal, so the
mesh consists of congruent right triangles in two orientations.  All
downstream element counts (cut cells, bad elements) depend on this fixed
convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["BackgroundMesh", "Submesh", "build_background_mesh", "extract_submesh", "dump_mesh"]


@dataclass(frozen=True)
class BackgroundMesh:
    """Triangulation of (0,1)^2 with n subdivisions per side.

    vertices   : (nv, 2) float array, vertex v = iyocal*(n+1)+ix at (ix/n, iy/n)
    triangles  : (nt, 3) int array of CCW vertex triples
    edges      : (ne, 2) int array of vertex pairs, each sorted ascending
    edge_tris  : (ne, 2) int array of adjacent triangle indices, -1 when absent
    tri_edges  : (nt, 3) int array, edge index opposite nothing in particular:
                 local edge e is (tri[e], tri[(e+1)%3])
    h          : triangle diameter sqrt(2)/n
    """

    n: int
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_tris: np.ndarray
    tri_edges: np.ndarray
    h: float

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def triangle_coords(self, t: int) -> np.ndarray:
        """Vertex coordinates of triangle t as a (3, 2) array."""
        return self.vertices[self.triangles[t]]

    def boundary_edges(self) -> np.ndarray:
        """Indices of edges with a single adjacent triangle."""
        return np.flatnonzero(self.edge_tris[:, 1] < 0)

    def signed_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        d1 = v[:, 1] - v[:, 0]
        d2 = v[:, 2] - v[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


@dataclass(frozen=True)
class Submesh:
    """A subset of background triangles with its interior-edge set.

    members        : sorted unique triangle indices
    interior_edges : edge indices whose two adjacent triangles are both members
    """

    parent: BackgroundMesh
    members: np.ndarray
    interior_edges: np.ndarray

    @property
    def num_members(self) -> int:
        return self.members.shape[0]


def build_background_mesh(n: int) -> BackgroundMesh:
    """Build the uniform mesh with 2*n^2 right triangles.

    Rejects n < 1.  Construction is fully deterministic: identical n gives
    bit-identical vertex and triangle ordering.
    """
    if n < 1:
        raise ValueError(f"mesh subdivisions must be >= 1, got {n}")

    idx = np.arange(n + 1)
    xs, ys = np.meshgrid(idx / n, idx / n, indexing="xy")
    vertices = np.column_stack([xs.ravel(), ys.ravel()]).astype(float)

    def vid(ix, iy):
        return iy * (n + 1) + ix

    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    t = 0
    for iy in range(n):
        for ix in range(n):
            v00 = vid(ix, iy)
            v10 = vid(ix + 1, iy)
            v01 = vid(ix, iy + 1)
            v11 = vid(ix + 1, iy + 1)
            triangles[t] = (v00, v10, v11)      # below the diagonal
            triangles[t + 1] = (v00, v11, v01)  # above the diagonal
            t += 2

    edge_index: dict[tuple[int, int], int] = {}
    edge_list: list[tuple[int, int]] = []
    adjacency: list[list[int]] = []
    tri_edges = np.empty((triangles.shape[0], 3), dtype=np.int64)
    for t, tri in enumerate(triangles):
        for e in range(3):
            a, b = tri[e], tri[(e + 1) % 3]
            key = (a, b) if a < b else (b, a)
            k = edge_index.get(key)
            if k is None:
                k = len(edge_list)
                edge_index[key] = k
                edge_list.append(key)
                adjacency.append([])
            adjacency[k].append(t)
            tri_edges[t, e] = k

    edges = np.array(edge_list, dtype=np.int64)
    edge_tris = np.full((len(edge_list), 2), -1, dtype=np.int64)
    for k, tris in enumerate(adjacency):
        if len(tris) > 2:
            raise RuntimeError(f"edge {k} has {len(tris)} adjacent triangles")
        edge_tris[k, : len(tris)] = tris

    return BackgroundMesh(
        n=n,
        vertices=vertices,
        triangles=triangles,
        edges=edges,
        edge_tris=edge_tris,
        tri_edges=tri_edges,
        h=math.sqrt(2.0) / n,
    )


def extract_submesh(mesh: BackgroundMesh, members) -> Submesh:
    """Collect a triangle subset and its interior edges, ordered ascending."""
    members = np.unique(np.asarray(list(members), dtype=np.int64))
    if members.size and (members[0] < 0 or members[-1] >= mesh.num_triangles):
        bad = members[(members < 0) | (members >= mesh.num_triangles)]
        raise IndexError(f"triangle indices out of range: {bad.tolist()}")

    mask = np.zeros(mesh.num_triangles, dtype=bool)
    mask[members] = True
    t0, t1 = mesh.edge_tris[:, 0], mesh.edge_tris[:, 1]
    both = (t1 >= 0) & mask[np.clip(t0, 0, None)] & mask[np.clip(t1, 0, None)]
    interior = np.flatnonzero(both)
    return Submesh(parent=mesh, members=members, interior_edges=interior)


def dump_mesh(mesh: BackgroundMesh, stream) -> None:
    """Plain-text dump: one 'v x y' line per vertex, one 't i j k' per triangle."""
    for x, y in mesh.vertices:
        stream.write(f"v {x:.17g} {y:.17g}\n")
    for i, j, k in mesh.triangles:
        stream.write(f"t {i} {j} {k}\n")
