"""Circular level set, cut-cell classification and clipping.

The fluid occupies the part of the unit square outside a disk.  Each triangle
is tagged Interior / Cut / Exterior; cut triangles are clipped into a fan of
straight-sided fluid sub-triangles plus a k-segment polyline approximating the
interface arc, with every polyline endpoint on the exact circle.  Cut elements
whose fluid fraction falls below a threshold are "bad" and get mapped to a
node-sharing "good neighbor" used by the robust reconstruction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .mesh import BackgroundMesh, Submesh, extract_submesh

__all__ = [
    "ElementTag",
    "GeometryError",
    "LevelSet",
    "CutGeometry",
    "classify_elements",
    "clip_fluid_region",
    "classify_good_bad",
    "build_cut_geometry",
    "dump_cut_geometry",
]

# Chords shorter than this are treated as a degenerate (measure-zero) cut.
_DEGENERATE_CHORD = 1e-14
# Edge-parameter window around 0/1 inside which a root counts as hitting a vertex.
_ENDPOINT_EPS = 1e-12


class GeometryError(RuntimeError):
    """Raised when the interface configuration violates a precondition."""


class ElementTag(IntEnum):
    INTERIOR = 0
    CUT = 1
    EXTERIOR = 2


@dataclass(frozen=True)
class LevelSet:
    """Signed distance to a circle, phi(x) = |x - center| - radius, fluid = {phi > 0}."""

    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        cx, cy = self.center
        r = self.radius
        if r <= 0.0:
            raise ValueError(f"radius must be positive, got {r}")
        if not (cx - r > 0.0 and cx + r < 1.0 and cy - r > 0.0 and cy + r < 1.0):
            raise GeometryError(
                f"disk (center=({cx},{cy}), radius={r}) must lie strictly inside the unit square"
            )

    def value(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        d = p - np.asarray(self.center)
        return np.hypot(d[..., 0], d[..., 1]) - self.radius

    def project(self, point: np.ndarray) -> np.ndarray:
        """Radial projection onto the exact circle."""
        c = np.asarray(self.center)
        d = np.asarray(point, dtype=float) - c
        return c + d * (self.radius / np.hypot(d[0], d[1]))


@dataclass(frozen=True)
class FluidClip:
    """Clip of one cut triangle: fluid fan, interface polylines, fluid area."""

    fan: np.ndarray              # (m, 3, 2) positively oriented sub-triangles
    polylines: list[np.ndarray]  # each (s+1, 2), endpoints on the exact circle
    area: float

    @property
    def segments(self) -> np.ndarray:
        """All polyline segments stacked as an (s, 2, 2) array."""
        if not self.polylines:
            return np.zeros((0, 2, 2))
        parts = [np.stack([poly[:-1], poly[1:]], axis=1) for poly in self.polylines]
        return np.concatenate(parts, axis=0)


def _edge_circle_roots(a: np.ndarray, b: np.ndarray, ls: LevelSet) -> list[float]:
    """Parameters t in (0,1) where segment a + t(b-a) crosses the circle transversally."""
    c = np.asarray(ls.center)
    d = b - a
    w = a - c
    qa = d @ d
    qb = 2.0 * (w @ d)
    qc = w @ w - ls.radius**2
    disc = qb * qb - 4.0 * qa * qc
    if disc <= 0.0:
        return []  # no crossing, or tangency (measure zero)
    sq = math.sqrt(disc)
    roots = sorted(((-qb - sq) / (2 * qa), (-qb + sq) / (2 * qa)))
    return [t for t in roots if _ENDPOINT_EPS < t < 1.0 - _ENDPOINT_EPS]


def _segment_min_dist(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    d = b - a
    t = np.clip((c - a) @ d / (d @ d), 0.0, 1.0)
    return float(np.hypot(*(a + t * d - c)))


def classify_elements(mesh: BackgroundMesh, ls: LevelSet) -> np.ndarray:
    """Tag every triangle Interior / Cut / Exterior.

    A triangle is Cut when the circle meets it in a set of positive length:
    either its vertices straddle the circle, or all vertices are fluid but an
    edge dips inside the disk.  Touching at a single point counts as no cut.
    """
    phi = ls.value(mesh.vertices)
    tri_phi = phi[mesh.triangles]
    tags = np.full(mesh.num_triangles, ElementTag.INTERIOR, dtype=np.int64)

    pos = tri_phi > 0.0
    tags[np.all(~pos, axis=1)] = ElementTag.EXTERIOR
    straddle = np.any(pos, axis=1) & np.any(~pos, axis=1)
    tags[straddle] = ElementTag.CUT

    # All-fluid triangles can still be cut if the circle bulges over an edge.
    # Only triangles near the circle band can qualify.
    c = np.asarray(ls.center)
    candidates = np.flatnonzero(np.all(pos, axis=1))
    if candidates.size:
        verts = mesh.vertices[mesh.triangles[candidates]]
        dmin_vert = np.min(np.hypot(verts[..., 0] - c[0], verts[..., 1] - c[1]), axis=1)
        near = candidates[dmin_vert < ls.radius + mesh.h]
        for t in near:
            v = mesh.triangle_coords(t)
            for e in range(3):
                a, b = v[e], v[(e + 1) % 3]
                if _segment_min_dist(a, b, c) < ls.radius and len(_edge_circle_roots(a, b, ls)) == 2:
                    tags[t] = ElementTag.CUT
                    break
            else:
                if _point_in_triangle(c, v, 0.0):
                    raise GeometryError(
                        f"interface lies entirely inside triangle {t}; refine the mesh"
                    )
    return tags


def _point_in_triangle(p: np.ndarray, tri: np.ndarray, tol: float) -> bool:
    a, b, c = tri
    s0 = np.cross(b - a, p - a)
    s1 = np.cross(c - b, p - b)
    s2 = np.cross(a - c, p - c)
    return bool(min(s0, s1, s2) >= -tol)


def _ear_clip(poly: np.ndarray) -> np.ndarray:
    """Triangulate a simple CCW polygon into a (m, 3, 2) fan of triangles.

    The fluid polygons are a triangle minus a convex bite, so they have at
    most one concave chain; plain ear clipping with an any-point-inside test
    is robust enough, with a smallest-ear fallback for degenerate slivers.
    """
    pts = [np.asarray(p, dtype=float) for p in poly]
    tris = []
    guard = 0
    while len(pts) > 3:
        guard += 1
        if guard > 10000:
            raise GeometryError("ear clipping failed to terminate")
        m = len(pts)
        clipped = False
        best_flat = None
        for i in range(m):
            a, b, c = pts[(i - 1) % m], pts[i], pts[(i + 1) % m]
            area2 = np.cross(b - a, c - a)
            if area2 <= 0.0:
                if best_flat is None or abs(area2) < best_flat[1]:
                    best_flat = (i, abs(area2))
                continue
            ear = np.array([a, b, c])
            others = [pts[j] for j in range(m) if j not in ((i - 1) % m, i, (i + 1) % m)]
            if any(_point_in_triangle(q, ear, -1e-15) for q in others):
                continue
            tris.append(ear)
            del pts[i]
            clipped = True
            break
        if not clipped:
            # Degenerate (collinear/zero-area) corner: drop it, it carries no area.
            if best_flat is None or best_flat[1] > 1e-12:
                raise GeometryError("no valid ear found while clipping fluid polygon")
            del pts[best_flat[0]]
    if len(pts) == 3:
        tris.append(np.array(pts))
    out = np.array(tris) if tris else np.zeros((0, 3, 2))
    areas = 0.5 * np.cross(out[:, 1] - out[:, 0], out[:, 2] - out[:, 0]) if len(out) else np.zeros(0)
    return out[areas > 1e-300]


def clip_fluid_region(tri: np.ndarray, ls: LevelSet, k: int) -> FluidClip:
    """Clip one cut triangle against the disk.

    Walks the triangle boundary counterclockwise keeping the fluid side; at a
    crossing into the disk it follows the circle clockwise (fluid on the left)
    to the next crossing, emitting k equal-angle chords whose endpoints lie on
    the exact circle.  Raises GeometryError when called on an uncut triangle;
    a chord shorter than 1e-14 degenerates to an empty polyline with a
    full/empty fan decided by the majority side.
    """
    if k < 1:
        raise ValueError(f"interface subsegments k must be >= 1, got {k}")
    tri = np.asarray(tri, dtype=float)
    c = np.asarray(ls.center)
    area2 = np.cross(tri[1] - tri[0], tri[2] - tri[0])
    if area2 <= 0.0:
        raise GeometryError("triangle must be positively oriented")

    # Crossings per edge, in boundary order.
    crossings = []  # (edge, t, point, angle)
    for e in range(3):
        a, b = tri[e], tri[(e + 1) % 3]
        for t in _edge_circle_roots(a, b, ls):
            p = ls.project(a + t * (b - a))
            ang = math.atan2(p[1] - c[1], p[0] - c[0])
            crossings.append((e, t, p, ang))

    phi_v = ls.value(tri)
    if not crossings:
        raise GeometryError("clip_fluid_region called on a triangle the circle does not cross")

    if len(crossings) == 2:
        chord = np.hypot(*(crossings[0][2] - crossings[1][2]))
        if chord < _DEGENERATE_CHORD:
            centroid = tri.mean(axis=0)
            if ls.value(centroid[None, :])[0] > 0.0:
                fan = tri[None, :, :]
                return FluidClip(fan=fan, polylines=[], area=0.5 * float(area2))
            return FluidClip(fan=np.zeros((0, 3, 2)), polylines=[], area=0.0)

    # Boundary cycle: vertices interleaved with their edge crossings.
    nodes = []  # (point, kind, payload); kind 'v' -> phi sign, 'x' -> crossing id
    xid = 0
    order = sorted(range(len(crossings)), key=lambda i: (crossings[i][0], crossings[i][1]))
    per_edge: dict[int, list[int]] = {0: [], 1: [], 2: []}
    for i in order:
        per_edge[crossings[i][0]].append(i)
    for e in range(3):
        nodes.append((tri[e], "v", phi_v[e]))
        for i in per_edge[e]:
            nodes.append((crossings[i][2], "x", i))
            xid += 1

    angles = np.array([cr[3] for cr in crossings])

    def next_clockwise(i: int) -> int:
        """Crossing reached first when moving clockwise (decreasing angle) from crossing i."""
        gaps = (angles[i] - angles) % (2.0 * math.pi)
        gaps[i] = np.inf
        return int(np.argmin(gaps))

    def arc_points(i: int, j: int) -> np.ndarray:
        a0 = angles[i]
        delta = (a0 - angles[j]) % (2.0 * math.pi)
        ths = a0 - delta * np.arange(1, k) / k
        pts = np.column_stack([c[0] + ls.radius * np.cos(ths), c[1] + ls.radius * np.sin(ths)])
        return np.vstack([crossings[i][2], pts, crossings[j][2]])

    n_nodes = len(nodes)
    node_of_crossing = {payload: idx for idx, (_, kind, payload) in enumerate(nodes) if kind == "x"}
    used = [False] * n_nodes
    polygons = []
    polylines = []

    for start in range(n_nodes):
        if used[start] or nodes[start][1] != "v" or nodes[start][2] <= 0.0:
            continue
        poly_pts: list[np.ndarray] = []
        i = start
        guard = 0
        while True:
            guard += 1
            if guard > 20 * n_nodes:
                raise GeometryError("fluid boundary walk failed to close")
            pt, kind, payload = nodes[i]
            if used[i] and i != start:
                raise GeometryError("fluid boundary walk revisited a node")
            if i != start or not poly_pts:
                used[i] = True
            if kind == "v":
                if payload <= 0.0:
                    raise GeometryError("fluid boundary walk entered a solid vertex")
                poly_pts.append(pt)
                i = (i + 1) % n_nodes
            else:
                nxt = nodes[(i + 1) % n_nodes]
                mid = 0.5 * (pt + nxt[0])
                if ls.value(mid[None, :])[0] < 0.0:
                    # Entering the disk: follow the circle clockwise to the exit.
                    j = next_clockwise(payload)
                    arc = arc_points(payload, j)
                    arc_mid = ls.project(0.5 * (arc[0] + arc[-1])) if k == 1 else arc[len(arc) // 2]
                    if not _point_in_triangle(arc_mid, tri, 1e-12 * abs(area2)):
                        raise GeometryError("interface arc left the triangle; geometry too coarse")
                    polylines.append(arc)
                    poly_pts.extend(arc)
                    i = node_of_crossing[j]
                    used[i] = True
                    i = (i + 1) % n_nodes
                else:
                    poly_pts.append(pt)
                    i = (i + 1) % n_nodes
            if i == start:
                break
        if len(poly_pts) >= 3:
            polygons.append(np.array(poly_pts))

    if not polygons:
        raise GeometryError("no fluid polygon produced for a cut triangle")

    fans = [_ear_clip(p) for p in polygons]
    fan = np.concatenate([f for f in fans if len(f)], axis=0)
    areas = 0.5 * np.cross(fan[:, 1] - fan[:, 0], fan[:, 2] - fan[:, 0])
    return FluidClip(fan=fan, polylines=polylines, area=float(areas.sum()))


@dataclass(frozen=True)
class CutGeometry:
    """Classification plus per-cut-element clip data and good/bad structure."""

    mesh: BackgroundMesh
    levelset: LevelSet
    k: int
    theta_min: float
    tags: np.ndarray
    cut_ids: np.ndarray
    interior_ids: np.ndarray
    exterior_ids: np.ndarray
    clips: dict[int, FluidClip]
    fluid_fraction: np.ndarray  # aligned with cut_ids
    good: np.ndarray            # aligned with cut_ids
    good_neighbor: np.ndarray   # aligned with cut_ids, -1 for good elements

    @property
    def active_ids(self) -> np.ndarray:
        """Triangles of the extended mesh (interior + cut), ascending."""
        return np.flatnonzero(self.tags != ElementTag.EXTERIOR)

    def extended_submesh(self) -> Submesh:
        return extract_submesh(self.mesh, self.active_ids)

    def interface_submesh(self) -> Submesh:
        return extract_submesh(self.mesh, self.cut_ids)

    def reconstruction_map(self) -> np.ndarray:
        """Parent-triangle map T -> T' (identity except on bad cut elements)."""
        recon = np.arange(self.mesh.num_triangles, dtype=np.int64)
        bad = ~self.good
        recon[self.cut_ids[bad]] = self.good_neighbor[bad]
        return recon

    def fluid_area(self) -> float:
        interior = self.interior_ids
        full = 0.5 / self.mesh.n**2 * interior.size
        return full + sum(self.clips[t].area for t in self.cut_ids)

    def interface_length(self) -> float:
        total = 0.0
        for t in self.cut_ids:
            segs = self.clips[t].segments
            if len(segs):
                total += float(np.hypot(*(segs[:, 1] - segs[:, 0]).T).sum())
        return total


def classify_good_bad(
    mesh: BackgroundMesh,
    tags: np.ndarray,
    cut_ids: np.ndarray,
    fractions: np.ndarray,
    theta_min: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Good flags per Assumption-A-style threshold and the good-neighbor map.

    A bad element's neighbor is chosen among node-sharing elements of the
    extended mesh with fraction >= theta_min (interior elements count as 1),
    maximizing fluid fraction with ties broken by lowest triangle index.
    """
    if not 0.0 <= theta_min <= 1.0:
        raise ValueError(f"theta_min must be in [0, 1], got {theta_min}")
    good = fractions >= theta_min
    neighbor = np.full(cut_ids.shape, -1, dtype=np.int64)
    if np.all(good):
        return good, neighbor

    frac_by_tri = {int(t): float(f) for t, f in zip(cut_ids, fractions)}

    # vertex -> incident active triangles
    incident: dict[int, list[int]] = {}
    active = np.flatnonzero(tags != ElementTag.EXTERIOR)
    for t in active:
        for v in mesh.triangles[t]:
            incident.setdefault(int(v), []).append(int(t))

    for i in np.flatnonzero(~good):
        t = int(cut_ids[i])
        cands = sorted({s for v in mesh.triangles[t] for s in incident[int(v)] if s != t})
        best_f, best_s = -1.0, -1
        for s in cands:  # ascending index, so a strict > keeps the lowest index on ties
            f = 1.0 if tags[s] == ElementTag.INTERIOR else frac_by_tri.get(s, 0.0)
            if f >= theta_min and f > best_f:
                best_f, best_s = f, s
        if best_s < 0:
            raise GeometryError(
                f"bad element {t} (fraction {fractions[i]:.3e}) has no good neighbor "
                f"at theta_min={theta_min}"
            )
        neighbor[i] = best_s
    return good, neighbor


def build_cut_geometry(
    mesh: BackgroundMesh, ls: LevelSet, k: int = 8, theta_min: float = 0.01
) -> CutGeometry:
    """Classify, clip every cut triangle, and resolve the good/bad structure."""
    tags = classify_elements(mesh, ls)
    cut_ids = np.flatnonzero(tags == ElementTag.CUT)
    interior_ids = np.flatnonzero(tags == ElementTag.INTERIOR)
    exterior_ids = np.flatnonzero(tags == ElementTag.EXTERIOR)

    clips: dict[int, FluidClip] = {}
    full_area = 0.5 / mesh.n**2
    fractions = np.empty(cut_ids.shape)
    for i, t in enumerate(cut_ids):
        clip = clip_fluid_region(mesh.triangle_coords(t), ls, k)
        clips[int(t)] = clip
        fractions[i] = clip.area / full_area

    good, neighbor = classify_good_bad(mesh, tags, cut_ids, fractions, theta_min)
    return CutGeometry(
        mesh=mesh,
        levelset=ls,
        k=k,
        theta_min=theta_min,
        tags=tags,
        cut_ids=cut_ids,
        interior_ids=interior_ids,
        exterior_ids=exterior_ids,
        clips=clips,
        fluid_fraction=fractions,
        good=good,
        good_neighbor=neighbor,
    )


def dump_cut_geometry(cut: CutGeometry, stream) -> None:
    """Debug dump: per cut triangle its fraction, flag, neighbor and polyline points."""
    for i, t in enumerate(cut.cut_ids):
        flag = "good" if cut.good[i] else "bad"
        stream.write(
            f"cut {t} fraction {cut.fluid_fraction[i]:.12g} {flag} neighbor {cut.good_neighbor[i]}\n"
        )
        for poly in cut.clips[int(t)].polylines:
            pts = " ".join(f"{x:.17g} {y:.17g}" for x, y in poly)
            stream.write(f"  polyline {pts}\n")
