"""Parametric planar domains, exact measures and conforming triangle meshes.

Meshes are produced by a centroid fan (polygons, disks) or a structured polar
grid (annuli), followed by uniform midpoint refinement.  Curved boundary loops
carry a descriptor used to project new boundary nodes and to report the exact
curvature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy import integrate

from .errors import DomainError, ValidationError

MAX_LEVEL = 10

# ---------------------------------------------------------------------------
# domain descriptions


@dataclass(frozen=True)
class RegularPolygon:
    """Regular ``N``-gon centred at the origin with a vertex on the +x axis."""

    N: int
    area: float = math.pi

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 3:
            raise ValidationError(f"RegularPolygon needs an integer N >= 3, got {self.N}")
        if not self.area > 0:
            raise ValidationError(f"RegularPolygon area must be positive, got {self.area}")

    @property
    def inradius(self) -> float:
        return math.sqrt(self.area / (self.N * math.tan(math.pi / self.N)))

    @property
    def circumradius(self) -> float:
        return self.inradius / math.cos(math.pi / self.N)

    def vertices(self) -> np.ndarray:
        ang = 2.0 * np.pi * np.arange(self.N) / self.N
        return self.circumradius * np.column_stack([np.cos(ang), np.sin(ang)])


@dataclass(frozen=True)
class Polygon:
    """Simple polygon with counterclockwise vertices."""

    vertices: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        pts = np.asarray(self.vertices, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
            raise ValidationError("Polygon needs at least three 2D vertices")
        object.__setattr__(self, "vertices", tuple(map(tuple, pts.tolist())))
        if signed_area(pts) <= 0:
            raise ValidationError("Polygon vertices must be counterclockwise (positive signed area)")
        if not is_simple(pts):
            raise ValidationError("Polygon is self-intersecting")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)


@dataclass(frozen=True)
class Disk:
    R: float = 1.0

    def __post_init__(self):
        if not self.R > 0:
            raise ValidationError(f"Disk radius must be positive, got {self.R}")


@dataclass(frozen=True)
class Annulus:
    r_in: float
    r_out: float

    def __post_init__(self):
        if not (0 < self.r_in < self.r_out):
            raise ValidationError(f"Annulus needs 0 < r_in < r_out, got {self.r_in}, {self.r_out}")


@dataclass(frozen=True)
class Box:
    """Box ``prod(-a_i, a_i)`` with half widths sorted ascending."""

    half_widths: Tuple[float, ...]

    def __post_init__(self):
        a = tuple(float(x) for x in self.half_widths)
        object.__setattr__(self, "half_widths", a)
        if len(a) < 2:
            raise ValidationError("Box needs at least two half widths")
        if any(not x > 0 for x in a):
            raise ValidationError("Box half widths must be positive")
        if list(a) != sorted(a):
            raise ValidationError("Box half widths must be sorted ascending")

    @property
    def n(self) -> int:
        return len(self.half_widths)

    def vertices(self) -> np.ndarray:
        if self.n != 2:
            raise DomainError("only two-dimensional boxes have a polygon outline")
        a1, a2 = self.half_widths
        return np.array([[a1, -a2], [a1, a2], [-a1, a2], [-a1, -a2]], dtype=float)


@dataclass(frozen=True)
class PerturbedDisk:
    """Star-shaped domain with boundary ``r(theta) = R + t cos(k theta)``."""

    R: float
    k: int
    t: float

    def __post_init__(self):
        if not self.R > 0:
            raise ValidationError("PerturbedDisk radius must be positive")
        if int(self.k) != self.k or self.k < 1:
            raise ValidationError("PerturbedDisk mode k must be an integer >= 1")
        if not abs(self.t) < self.R / 2:
            raise ValidationError(f"PerturbedDisk amplitude |t| must stay below R/2, got t={self.t}")


DomainSpec = Union[RegularPolygon, Polygon, Disk, Annulus, Box, PerturbedDisk]


def signed_area(pts) -> float:
    pts = np.asarray(pts, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 < 0 and d3 * d4 < 0:
        return True
    return (
        (d1 == 0 and on_seg(q1, q2, p1))
        or (d2 == 0 and on_seg(q1, q2, p2))
        or (d3 == 0 and on_seg(p1, p2, q1))
        or (d4 == 0 and on_seg(p1, p2, q2))
    )


def is_simple(pts) -> bool:
    pts = np.asarray(pts, dtype=float)
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]):
                return False
    return True


# ---------------------------------------------------------------------------
# boundary curve descriptors


@dataclass(frozen=True)
class Straight:
    """Polygonal loop: identity projection and zero curvature."""

    def project(self, pts: np.ndarray) -> np.ndarray:
        return pts

    def curvature(self, pts: np.ndarray) -> np.ndarray:
        return np.zeros(len(pts))


@dataclass(frozen=True)
class Circle:
    """Circle about ``center``; ``inner`` loops bound the domain from inside.

    Curvature is taken with respect to the outward normal of the domain, so it
    is ``1/radius`` on an outer circle and ``-1/radius`` on an inner one.
    """

    radius: float
    center: Tuple[float, float] = (0.0, 0.0)
    inner: bool = False

    def project(self, pts: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center)
        d = pts - c
        return c + self.radius * d / np.linalg.norm(d, axis=1)[:, None]

    def curvature(self, pts: np.ndarray) -> np.ndarray:
        k = 1.0 / self.radius
        return np.full(len(pts), -k if self.inner else k)


@dataclass(frozen=True)
class PolarCurve:
    """Outer boundary ``r(theta) = R + t cos(k theta)`` about the origin."""

    R: float
    k: int
    t: float

    def radius(self, theta):
        return self.R + self.t * np.cos(self.k * theta)

    def project(self, pts: np.ndarray) -> np.ndarray:
        th = np.arctan2(pts[:, 1], pts[:, 0])
        r = self.radius(th)
        return np.column_stack([r * np.cos(th), r * np.sin(th)])

    def curvature(self, pts: np.ndarray) -> np.ndarray:
        th = np.arctan2(pts[:, 1], pts[:, 0])
        r = self.radius(th)
        dr = -self.t * self.k * np.sin(self.k * th)
        ddr = -self.t * self.k**2 * np.cos(self.k * th)
        return (r**2 + 2 * dr**2 - r * ddr) / (r**2 + dr**2) ** 1.5


Curve = Union[Straight, Circle, PolarCurve]


# ---------------------------------------------------------------------------
# exact measures


@dataclass(frozen=True)
class Measures:
    area: float
    perimeter: float
    inradius: Optional[float] = None


def tangential_center(vertices, tol: float = 1e-12):
    """Return ``(center, rho, residuals)`` for the best inscribed-circle fit.

    Each edge line is written as ``nu . x = d``; a tangential polygon has a
    point at equal distance ``rho`` from all of them.  ``residuals`` holds
    ``|nu.(x_e - center) - rho|`` per edge.
    """
    pts = np.asarray(vertices, dtype=float)
    q = np.roll(pts, -1, axis=0)
    d = q - pts
    length = np.linalg.norm(d, axis=1)
    nu = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
    off = np.einsum("ij,ij->i", nu, pts)
    A = np.column_stack([nu, np.ones(len(pts))])
    sol, *_ = np.linalg.lstsq(A, off, rcond=None)
    center, rho = sol[:2], sol[2]
    resid = np.abs(np.einsum("ij,ij->i", nu, pts - center) - rho)
    return center, float(rho), resid


def _perturbed_perimeter(spec: PerturbedDisk) -> float:
    def speed(th):
        r = spec.R + spec.t * math.cos(spec.k * th)
        dr = -spec.t * spec.k * math.sin(spec.k * th)
        return math.hypot(r, dr)

    val, _ = integrate.quad(speed, 0.0, 2 * math.pi, epsabs=1e-14, epsrel=1e-13, limit=400)
    return val


def measures(spec: DomainSpec) -> Measures:
    """Exact area, perimeter and (where exact) inradius of a domain.

    For boxes with ``n > 2`` the returned values are volume and surface
    measure.
    """
    if isinstance(spec, RegularPolygon):
        rho = spec.inradius
        return Measures(spec.area, 2.0 * spec.area / rho, rho)
    if isinstance(spec, Disk):
        return Measures(math.pi * spec.R**2, 2 * math.pi * spec.R, spec.R)
    if isinstance(spec, Annulus):
        return Measures(math.pi * (spec.r_out**2 - spec.r_in**2), 2 * math.pi * (spec.r_in + spec.r_out))
    if isinstance(spec, Box):
        a = np.asarray(spec.half_widths)
        n = spec.n
        vol = 2.0**n * float(np.prod(a))
        surf = 2.0**n * sum(float(np.prod(np.delete(a, i))) for i in range(n))
        return Measures(vol, surf, float(a[0]))
    if isinstance(spec, PerturbedDisk):
        return Measures(math.pi * spec.R**2 + math.pi * spec.t**2 / 2, _perturbed_perimeter(spec))
    if isinstance(spec, Polygon):
        pts = spec.as_array()
        area = signed_area(pts)
        per = float(np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1).sum())
        _, rho, resid = tangential_center(pts)
        scale = max(1.0, float(np.abs(pts).max()))
        inr = rho if resid.max() <= 1e-12 * scale else None
        return Measures(area, per, inr)
    raise ValidationError(f"unknown domain spec {spec!r}")


# ---------------------------------------------------------------------------
# meshes


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming triangulation with oriented boundary loops.

    Every loop is stored counterclockwise as a curve (so inner loops run
    against the domain-on-the-left orientation).  ``curves`` maps loop ids to
    their exact boundary curve; meshes read from disk carry no curves.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_loops: np.ndarray
    inner_loops: frozenset = frozenset()
    curves: Dict[int, Curve] = field(default_factory=dict)
    corners: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def nv(self) -> int:
        return len(self.vertices)

    @property
    def nt(self) -> int:
        return len(self.triangles)

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edges(self) -> np.ndarray:
        return _unique_edges(self.triangles)

    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def boundary_lengths(self) -> np.ndarray:
        d = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        return np.linalg.norm(d, axis=1)

    def boundary_normals(self) -> np.ndarray:
        """Outward unit normals per boundary edge."""
        d = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        nrm = np.column_stack([d[:, 1], -d[:, 0]]) / np.linalg.norm(d, axis=1)[:, None]
        flip = np.isin(self.boundary_loops, list(self.inner_loops))
        nrm[flip] *= -1
        return nrm

    def boundary_arclength(self) -> np.ndarray:
        """Arc-length parameter of each boundary edge's start within its loop."""
        s = np.zeros(len(self.boundary_edges))
        L = self.boundary_lengths()
        for lid in np.unique(self.boundary_loops):
            idx = np.flatnonzero(self.boundary_loops == lid)
            s[idx] = np.concatenate([[0.0], np.cumsum(L[idx])[:-1]])
        return s

    def boundary_triangles(self) -> np.ndarray:
        """Index of the triangle owning each boundary edge."""
        t = self.triangles
        local = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        owner = np.tile(np.arange(len(t)), 3)
        n = self.nv
        codes = np.minimum(local[:, 0], local[:, 1]) * n + np.maximum(local[:, 0], local[:, 1])
        b = self.boundary_edges
        bcodes = np.minimum(b[:, 0], b[:, 1]) * n + np.maximum(b[:, 0], b[:, 1])
        order = np.argsort(codes, kind="stable")
        pos = np.searchsorted(codes[order], bcodes)
        return owner[order[pos]]

    def euler_characteristic(self) -> int:
        return self.nv - len(self.edges()) + self.nt

    def validate(self) -> "TriMesh":
        if np.any(self.triangle_areas() <= 0):
            raise ValidationError("mesh has triangles with non-positive signed area")
        t = self.triangles
        local = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        n = self.nv
        codes = np.minimum(local[:, 0], local[:, 1]) * n + np.maximum(local[:, 0], local[:, 1])
        uniq, counts = np.unique(codes, return_counts=True)
        if np.any(counts > 2):
            raise ValidationError("non-manifold mesh edge")
        b = self.boundary_edges
        bcodes = np.sort(np.minimum(b[:, 0], b[:, 1]) * n + np.maximum(b[:, 0], b[:, 1]))
        if not np.array_equal(bcodes, uniq[counts == 1]):
            raise ValidationError("boundary edges do not match the edges owned by one triangle")
        for lid in np.unique(self.boundary_loops):
            e = b[self.boundary_loops == lid]
            if not np.array_equal(e[:, 1], np.roll(e[:, 0], -1)):
                raise ValidationError(f"boundary loop {lid} is not closed")
        return self

    def transformed(self, matrix=None, shift=(0.0, 0.0)) -> "TriMesh":
        """Apply ``x -> matrix @ x + shift``; curves are dropped unless identity."""
        M = np.eye(2) if matrix is None else np.asarray(matrix, dtype=float)
        verts = self.vertices @ M.T + np.asarray(shift)
        curves = self.curves if (matrix is None and not np.any(shift)) else {}
        return TriMesh(verts, self.triangles, self.boundary_edges, self.boundary_loops,
                       self.inner_loops, curves, self.corners)


@dataclass(frozen=True)
class MeshMeasures:
    area: float
    perimeter: float
    h_max: float


def _unique_edges(triangles: np.ndarray) -> np.ndarray:
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    return np.unique(np.sort(e, axis=1), axis=0)


def mesh_measures(mesh: TriMesh) -> MeshMeasures:
    e = mesh.edges()
    h = np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)
    return MeshMeasures(float(mesh.triangle_areas().sum()), float(mesh.boundary_lengths().sum()), float(h.max()))


def _extract_boundary(vertices: np.ndarray, triangles: np.ndarray):
    """Boundary edges grouped into loops, loop 0 being the outermost."""
    t = triangles
    local = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    n = len(vertices)
    codes = np.minimum(local[:, 0], local[:, 1]) * n + np.maximum(local[:, 0], local[:, 1])
    uniq, inv, counts = np.unique(codes, return_inverse=True, return_counts=True)
    bnd = local[counts[inv] == 1]
    nxt = {int(i): int(j) for i, j in bnd}
    if len(nxt) != len(bnd):
        raise ValidationError("boundary is not a disjoint union of simple loops")
    loops = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        seq = [start]
        seen.add(start)
        cur = nxt[start]
        while cur != start:
            if cur in seen:
                raise ValidationError("boundary loop revisits a vertex")
            seq.append(cur)
            seen.add(cur)
            cur = nxt[cur]
        loops.append(seq)
    info = []
    for seq in loops:
        a = signed_area(vertices[seq])
        inner = a < 0
        if inner:
            seq = seq[::-1]
        k = int(np.argmin(seq))
        seq = seq[k:] + seq[:k]
        info.append((abs(a), inner, seq))
    info.sort(key=lambda x: -x[0])
    edges, ids, inner_ids = [], [], set()
    for lid, (_, inner, seq) in enumerate(info):
        for i, v in enumerate(seq):
            edges.append((v, seq[(i + 1) % len(seq)]))
            ids.append(lid)
        if inner:
            inner_ids.add(lid)
    return np.asarray(edges, dtype=np.int64), np.asarray(ids, dtype=np.int64), frozenset(inner_ids)


def mesh_from_arrays(vertices, triangles, curves=None, corners=None) -> TriMesh:
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    be, bl, inner = _extract_boundary(vertices, triangles)
    c = np.zeros(0, dtype=np.int64) if corners is None else np.asarray(corners, dtype=np.int64)
    return TriMesh(vertices, triangles, be, bl, inner, dict(curves or {}), c).validate()


def _fan(outline: np.ndarray, center) -> Tuple[np.ndarray, np.ndarray]:
    N = len(outline)
    verts = np.vstack([np.asarray(center, dtype=float)[None, :], outline])
    i = np.arange(N)
    tris = np.column_stack([np.zeros(N, dtype=np.int64), i + 1, (i + 1) % N + 1])
    return verts, tris


def _polygon_centroid(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    a = cr.sum() / 2
    return np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) / (6 * a)


def refine(mesh: TriMesh) -> TriMesh:
    """Split every triangle into four through its edge midpoints.

    Midpoints of boundary edges are projected onto the loop's curve when one
    is attached.
    """
    v = mesh.vertices
    t = mesh.triangles
    nv, nt = len(v), len(t)
    local = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    codes = np.minimum(local[:, 0], local[:, 1]) * nv + np.maximum(local[:, 0], local[:, 1])
    uniq, inv = np.unique(codes, return_inverse=True)
    a, b = uniq // nv, uniq % nv
    mids = 0.5 * (v[a] + v[b])
    m01, m12, m20 = nv + inv[:nt], nv + inv[nt:2 * nt], nv + inv[2 * nt:]
    new_t = np.concatenate([
        np.column_stack([t[:, 0], m01, m20]),
        np.column_stack([t[:, 1], m12, m01]),
        np.column_stack([t[:, 2], m20, m12]),
        np.column_stack([m01, m12, m20]),
    ])
    be = mesh.boundary_edges
    bcodes = np.minimum(be[:, 0], be[:, 1]) * nv + np.maximum(be[:, 0], be[:, 1])
    bmid = nv + np.searchsorted(uniq, bcodes)
    verts = np.vstack([v, mids])
    for lid, curve in mesh.curves.items():
        sel = bmid[mesh.boundary_loops == lid]
        verts[sel] = curve.project(verts[sel])
    new_be = np.empty((2 * len(be), 2), dtype=np.int64)
    new_be[0::2, 0], new_be[0::2, 1] = be[:, 0], bmid
    new_be[1::2, 0], new_be[1::2, 1] = bmid, be[:, 1]
    new_bl = np.repeat(mesh.boundary_loops, 2)
    return TriMesh(verts, new_t, new_be, new_bl, mesh.inner_loops, mesh.curves, mesh.corners).validate()


ANNULUS_BASE_SECTORS = 16
DISK_BASE_SEGMENTS = 8


def _annulus_mesh(spec: Annulus, level: int) -> TriMesh:
    width = spec.r_out - spec.r_in
    rings0 = max(1, round(width * ANNULUS_BASE_SECTORS / (math.pi * (spec.r_in + spec.r_out))))
    rings = rings0 * 2**level
    m = ANNULUS_BASE_SECTORS * 2**level
    r = spec.r_in + width * np.arange(rings + 1) / rings
    th = 2 * np.pi * np.arange(m) / m
    R, TH = np.meshgrid(r, th, indexing="ij")
    verts = np.column_stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()])
    i, j = np.meshgrid(np.arange(rings), np.arange(m), indexing="ij")
    i, j = i.ravel(), j.ravel()
    jp = (j + 1) % m
    p00, p10 = i * m + j, (i + 1) * m + j
    p01, p11 = i * m + jp, (i + 1) * m + jp
    tris = np.concatenate([np.column_stack([p00, p10, p11]), np.column_stack([p00, p11, p01])])
    curves = {0: Circle(spec.r_out), 1: Circle(spec.r_in, inner=True)}
    return mesh_from_arrays(verts, tris, curves)


def _disk_mesh(R: float, level: int) -> TriMesh:
    ang = 2 * np.pi * np.arange(DISK_BASE_SEGMENTS) / DISK_BASE_SEGMENTS
    outline = R * np.column_stack([np.cos(ang), np.sin(ang)])
    verts, tris = _fan(outline, (0.0, 0.0))
    mesh = mesh_from_arrays(verts, tris, {0: Circle(R)})
    for _ in range(level):
        mesh = refine(mesh)
    return mesh


def _blend(mesh: TriMesh, spec: PerturbedDisk) -> TriMesh:
    p = mesh.vertices
    th = np.arctan2(p[:, 1], p[:, 0])
    scale = (spec.R + spec.t * np.cos(spec.k * th)) / spec.R
    curve = PolarCurve(spec.R, spec.k, spec.t)
    out = TriMesh(p * scale[:, None], mesh.triangles, mesh.boundary_edges, mesh.boundary_loops,
                  mesh.inner_loops, {0: curve}, mesh.corners)
    return out.validate()


def build_mesh(spec: DomainSpec, level: int = 0, max_level: int = MAX_LEVEL) -> TriMesh:
    """Conforming triangulation of ``spec`` after ``level`` uniform refinements."""
    if int(level) != level or level < 0:
        raise ValidationError(f"mesh level must be a non-negative integer, got {level}")
    if level > max_level:
        raise ValidationError(f"mesh level {level} exceeds the configured maximum {max_level}")
    if isinstance(spec, Annulus):
        return _annulus_mesh(spec, level)
    if isinstance(spec, Disk):
        return _disk_mesh(spec.R, level)
    if isinstance(spec, PerturbedDisk):
        return _blend(_disk_mesh(spec.R, level), spec)
    if isinstance(spec, RegularPolygon):
        outline, center = spec.vertices(), np.zeros(2)
    elif isinstance(spec, Box):
        outline = spec.vertices()
        center = np.zeros(2)
    elif isinstance(spec, Polygon):
        outline = spec.as_array()
        center = _polygon_centroid(outline)
    else:
        raise ValidationError(f"unknown domain spec {spec!r}")
    verts, tris = _fan(outline, center)
    try:
        mesh = mesh_from_arrays(verts, tris, {0: Straight()}, corners=np.arange(1, len(outline) + 1))
    except ValidationError as exc:
        raise ValidationError(f"polygon is not star-shaped about its centroid: {exc}") from None
    for _ in range(level):
        mesh = refine(mesh)
    return mesh


def level_for_h(spec: DomainSpec, h_target: float, max_level: int = MAX_LEVEL) -> int:
    """Smallest refinement level whose longest edge does not exceed ``h_target``."""
    h0 = mesh_measures(build_mesh(spec, 0)).h_max
    level = max(0, math.ceil(math.log2(h0 / h_target) - 1e-9))
    while level < max_level and mesh_measures(build_mesh(spec, level)).h_max > h_target:
        level += 1
    return min(level, max_level)


# ---------------------------------------------------------------------------
# text I/O


def write_mesh(mesh: TriMesh, path) -> None:
    """Write ``nv nt nb`` then vertices, triangles and boundary edges."""
    lines = [f"{mesh.nv} {mesh.nt} {len(mesh.boundary_edges)}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    lines += [f"{i} {j} {lid}" for (i, j), lid in zip(mesh.boundary_edges, mesh.boundary_loops)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> TriMesh:
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip()]
    try:
        nv, nt, nb = (int(x) for x in rows[0])
        verts = np.array([[float(a), float(b)] for a, b in rows[1:1 + nv]])
        tris = np.array([[int(x) for x in r] for r in rows[1 + nv:1 + nv + nt]], dtype=np.int64)
        bnd = np.array([[int(x) for x in r] for r in rows[1 + nv + nt:1 + nv + nt + nb]], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"malformed mesh file {path}: {exc}") from None
    if len(verts) != nv or len(tris) != nt or len(bnd) != nb:
        raise ValidationError(f"mesh file {path} is truncated")
    be, bl = bnd[:, :2], bnd[:, 2]
    inner = set()
    for lid in np.unique(bl):
        e = be[bl == lid]
        # loops are stored counterclockwise; inner ones have the domain on the right
        a = mesh_area_sign(verts, tris, e)
        if a < 0:
            inner.add(int(lid))
    return TriMesh(verts, tris, be, bl, frozenset(inner), {}).validate()


def mesh_area_sign(verts, tris, loop_edges) -> float:
    """Positive if the triangle owning the first loop edge lies to its left."""
    i, j = loop_edges[0]
    for tri in tris:
        for a, b in ((0, 1), (1, 2), (2, 0)):
            if tri[a] == i and tri[b] == j:
                return 1.0
            if tri[a] == j and tri[b] == i:
                return -1.0
    raise ValidationError("boundary edge not found in any triangle")
