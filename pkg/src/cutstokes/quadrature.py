"""Fixed quadrature rules and composite integration over the cut geometry.

Triangle rules are positive-weight symmetric rules (Dunavant family) stored in
barycentric coordinates with weights summing to the reference measure 1/2;
segment rules are Gauss-Legendre on [0,1].  Composite integration covers the
fluid region (interior triangles plus the clipped fans of cut triangles) and
the interface polylines with per-segment unit normals oriented toward the disk
center, i.e. outward from the fluid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CutGeometry

__all__ = ["QuadRule", "triangle_rule", "segment_rule", "integrate_fluid", "integrate_interface"]


@dataclass(frozen=True)
class QuadRule:
    """points: (q,3) barycentric for triangles, (q,) parametric for segments."""

    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int


def _orbit(groups):
    pts, wts = [], []
    for kind, a, w in groups:
        if kind == "center":
            pts.append((1 / 3, 1 / 3, 1 / 3))
            wts.append(w)
        elif kind == "sym3":
            b = 1.0 - 2.0 * a
            for p in ((b, a, a), (a, b, a), (a, a, b)):
                pts.append(p)
                wts.append(w)
        elif kind == "sym6":
            a1, a2 = a
            a0 = 1.0 - a1 - a2
            for p in (
                (a0, a1, a2),
                (a0, a2, a1),
                (a1, a0, a2),
                (a1, a2, a0),
                (a2, a0, a1),
                (a2, a1, a0),
            ):
                pts.append(p)
                wts.append(w)
    # normalized weights sum to 1; reference triangle measure is 1/2
    return np.array(pts), 0.5 * np.array(wts)


# Positive-weight rules; the degree-3 request is served by the degree-4 rule
# because the classical degree-3 rule carries a negative center weight.
_TRI_RULES: dict[int, tuple] = {
    1: ([("center", None, 1.0)], 1),
    2: ([("sym3", 1 / 6, 1 / 3)], 2),
    4: (
        [
            ("sym3", 0.445948490915965, 0.223381589678011),
            ("sym3", 0.091576213509771, 0.109951743655322),
        ],
        4,
    ),
    5: (
        [
            ("center", None, 0.225),
            ("sym3", 0.470142064105115, 0.132394152788506),
            ("sym3", 0.101286507323456, 0.125939180544827),
        ],
        5,
    ),
    6: (
        [
            ("sym3", 0.249286745170910, 0.116786275726379),
            ("sym3", 0.063089014491502, 0.050844906370207),
            ("sym6", (0.310352451033785, 0.636502499121399), 0.082851075618374),
        ],
        6,
    ),
}
_TRI_RULES[3] = _TRI_RULES[4]


def triangle_rule(degree: int) -> QuadRule:
    """Symmetric positive-weight rule exact to at least the requested degree (1..6)."""
    if degree not in _TRI_RULES:
        raise ValueError(f"unsupported triangle quadrature degree {degree} (need 1..6)")
    groups, exact = _TRI_RULES[degree]
    pts, wts = _orbit(groups)
    return QuadRule(points=pts, weights=wts, exactness_degree=exact)


def segment_rule(degree: int) -> QuadRule:
    """Gauss-Legendre rule on [0,1] exact to at least the requested degree."""
    if degree < 1:
        raise ValueError(f"unsupported segment quadrature degree {degree}")
    m = (degree + 2) // 2
    x, w = np.polynomial.legendre.leggauss(m)
    return QuadRule(points=0.5 * (x + 1.0), weights=0.5 * w, exactness_degree=2 * m - 1)


def map_triangle_rule(rule: QuadRule, tris: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map a reference rule onto triangles (m,3,2) -> points (m,q,2), weights (m,q)."""
    tris = np.asarray(tris, dtype=float)
    pts = np.einsum("qb,mbs->mqs", rule.points, tris)
    d1 = tris[:, 1] - tris[:, 0]
    d2 = tris[:, 2] - tris[:, 0]
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    wts = rule.weights[None, :] * (areas[:, None] / 0.5)
    return pts, wts


def fluid_cells(cut: CutGeometry) -> np.ndarray:
    """All straight-sided integration triangles of the fluid region, stacked (m,3,2)."""
    mesh = cut.mesh
    parts = [mesh.vertices[mesh.triangles[cut.interior_ids]]] if cut.interior_ids.size else []
    for t in cut.cut_ids:
        fan = cut.clips[int(t)].fan
        if len(fan):
            parts.append(fan)
    if not parts:
        return np.zeros((0, 3, 2))
    return np.concatenate(parts, axis=0)


def integrate_fluid(cut: CutGeometry, f, degree: int = 4) -> np.ndarray | float:
    """Integrate f over the fluid region (interior triangles + clipped fans).

    f maps an (m,2) array of points to (m,) or (m,d) values; exterior
    triangles never contribute.
    """
    rule = triangle_rule(degree)
    cells = fluid_cells(cut)
    if not len(cells):
        return 0.0
    pts, wts = map_triangle_rule(rule, cells)
    vals = np.asarray(f(pts.reshape(-1, 2)))
    w = wts.reshape(-1)
    if vals.ndim == 1:
        return float(w @ vals)
    return w @ vals


def interface_segments(cut: CutGeometry) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked interface segments: (s,2,2) endpoints, (s,) lengths, (s,2) unit normals.

    Normals point toward the disk center, outward from the fluid.
    """
    segs = [cut.clips[int(t)].segments for t in cut.cut_ids]
    segs = [s for s in segs if len(s)]
    if not segs:
        return np.zeros((0, 2, 2)), np.zeros(0), np.zeros((0, 2))
    segs = np.concatenate(segs, axis=0)
    d = segs[:, 1] - segs[:, 0]
    lengths = np.hypot(d[:, 0], d[:, 1])
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]
    mid = 0.5 * (segs[:, 0] + segs[:, 1])
    to_center = np.asarray(cut.levelset.center) - mid
    flip = np.einsum("sk,sk->s", normals, to_center) < 0.0
    normals[flip] *= -1.0
    return segs, lengths, normals


def integrate_interface(cut: CutGeometry, f, degree: int = 5) -> np.ndarray | float:
    """Integrate f over the interface polylines.

    f maps points (m,2) and unit normals (m,2) to (m,) or (m,d) values.
    """
    rule = segment_rule(degree)
    segs, lengths, normals = interface_segments(cut)
    if not len(segs):
        return 0.0
    t = rule.points
    pts = segs[:, None, 0, :] + t[None, :, None] * (segs[:, None, 1, :] - segs[:, None, 0, :])
    wts = rule.weights[None, :] * lengths[:, None]
    nrm = np.broadcast_to(normals[:, None, :], pts.shape)
    vals = np.asarray(f(pts.reshape(-1, 2), nrm.reshape(-1, 2)))
    w = wts.reshape(-1)
    if vals.ndim == 1:
        return float(w @ vals)
    return w @ vals
