"""Triangulated surfaces, newest vertex bisection, hierarchies and vertex patches.

Each triangle stores its three vertex ids (consistently oriented across the
surface) and the local index r of its reference edge (v_r, v_{r+1}).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .ref_element import VertexPermutation


class MeshError(ValueError):
    pass


@dataclass(eq=False)
class SurfaceMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    ref_edge: np.ndarray
    boundary: np.ndarray
    closed: bool

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.ref_edge = np.asarray(self.ref_edge, dtype=np.int64).reshape(-1)
        self.boundary = np.asarray(self.boundary, dtype=bool).reshape(-1)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    # ------------------------------------------------------------ topology
    @cached_property
    def _edge_data(self):
        tri = self.triangles
        a = tri
        b = np.roll(tri, -1, axis=1)
        lo = np.minimum(a, b).ravel()
        hi = np.maximum(a, b).ravel()
        keys = np.stack([lo, hi], axis=1)
        edges, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        return edges, inv.reshape(-1, 3), counts

    @property
    def edges(self) -> np.ndarray:
        """(E, 2) vertex ids, low id first, lexicographically sorted."""
        return self._edge_data[0]

    @property
    def tri_edges(self) -> np.ndarray:
        """(T, 3): global edge of local edge (v_k, v_{k+1})."""
        return self._edge_data[1]

    @property
    def edge_valence(self) -> np.ndarray:
        return self._edge_data[2]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return self.edge_valence == 1

    @cached_property
    def eligible(self) -> np.ndarray:
        """Vertices carrying a degree of freedom: all on closed surfaces, interior ones otherwise."""
        if self.closed:
            return np.ones(self.n_vertices, dtype=bool)
        return ~self.boundary

    @cached_property
    def vertex_triangles(self) -> list:
        out = [[] for _ in range(self.n_vertices)]
        for t, tri in enumerate(self.triangles):
            for v in tri:
                out[v].append(t)
        return out

    # ------------------------------------------------------------ geometry
    @cached_property
    def jacobians(self) -> np.ndarray:
        """(T, 3, 2) columns v1 - v0 and v2 - v0."""
        X = self.vertices[self.triangles]
        return np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]], axis=2)

    @cached_property
    def areas(self) -> np.ndarray:
        J = self.jacobians
        return 0.5 * np.linalg.norm(np.cross(J[:, :, 0], J[:, :, 1]), axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        J = self.jacobians
        n = np.cross(J[:, :, 0], J[:, :, 1])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def diameters(self) -> np.ndarray:
        X = self.vertices[self.triangles]
        d = np.linalg.norm(X - np.roll(X, -1, axis=1), axis=2)
        return d.max(axis=1)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    # ------------------------------------------------------------ checks
    def validate(self) -> "SurfaceMesh":
        V, T = self.n_vertices, self.n_triangles
        tri = self.triangles
        if T == 0:
            raise MeshError("mesh has no triangles")
        if tri.min() < 0 or tri.max() >= V:
            raise MeshError("triangle references a nonexistent vertex")
        if np.any((tri[:, 0] == tri[:, 1]) | (tri[:, 1] == tri[:, 2]) | (tri[:, 0] == tri[:, 2])):
            raise MeshError("triangle with repeated vertex")
        if self.ref_edge.shape != (T,) or np.any((self.ref_edge < 0) | (self.ref_edge > 2)):
            raise MeshError("reference edge index must be 0, 1 or 2")
        if self.boundary.shape != (V,):
            raise MeshError("one boundary flag per vertex required")
        bad = np.flatnonzero(self.areas <= 1e-14 * self.diameters ** 2)
        if bad.size:
            raise MeshError(f"degenerate triangles {bad[:10].tolist()}")
        val = self.edge_valence
        if np.any(val > 2):
            raise MeshError("edge shared by more than two triangles")
        if self.closed and np.any(val != 2):
            raise MeshError("closed surface has boundary edges")
        directed = np.stack([tri.ravel(), np.roll(tri, -1, axis=1).ravel()], axis=1)
        if len(np.unique(directed, axis=0)) != len(directed):
            raise MeshError("triangles are not consistently oriented")
        used = np.zeros(V, dtype=bool)
        used[tri.ravel()] = True
        if not used.all():
            raise MeshError("unused vertices present")
        on_bdry = np.zeros(V, dtype=bool)
        on_bdry[self.edges[self.boundary_edges].ravel()] = True
        if self.closed:
            if self.boundary.any():
                raise MeshError("closed surface with boundary-flagged vertices")
        elif not np.array_equal(on_bdry, self.boundary):
            raise MeshError("boundary flags disagree with the topological boundary")
        return self

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_triangles


# ---------------------------------------------------------------- construction

def longest_edge_reference(vertices, triangles) -> np.ndarray:
    """Local reference edge: longest edge, ties broken by smallest opposite-vertex id."""
    X = np.asarray(vertices)[triangles]
    ref = np.empty(len(triangles), dtype=np.int64)
    for t, tri in enumerate(triangles):
        best = None
        for k in range(3):
            length = np.linalg.norm(X[t, (k + 1) % 3] - X[t, k])
            opposite = tri[(k + 2) % 3]
            key = (-round(length, 12), opposite)
            if best is None or key < best[0]:
                best = (key, k)
        ref[t] = best[1]
    return ref


def _boundary_flags(triangles, n_vertices) -> np.ndarray:
    tmp = SurfaceMesh(np.zeros((n_vertices, 3)), triangles, np.zeros(len(triangles)),
                      np.zeros(n_vertices, bool), False)
    flags = np.zeros(n_vertices, dtype=bool)
    flags[tmp.edges[tmp.boundary_edges].ravel()] = True
    return flags


def make_mesh(vertices, triangles, closed: bool) -> SurfaceMesh:
    vertices = np.asarray(vertices, float)
    triangles = np.asarray(triangles, np.int64)
    ref = longest_edge_reference(vertices, triangles)
    bnd = np.zeros(len(vertices), bool) if closed else _boundary_flags(triangles, len(vertices))
    return SurfaceMesh(vertices, triangles, ref, bnd, closed).validate()


def generate_screen(n: int, side: float = 1.0) -> SurfaceMesh:
    """Square screen [0, side]^2 x {0}, n x n squares split into 2n^2 triangles.

    Square diagonals point towards the centre of the screen (ties by parity),
    so every interior edge touches an interior vertex.
    """
    if n < 1:
        raise ValueError("n must be positive")
    h = side / n
    verts = [(i * h, j * h, 0.0) for j in range(n + 1) for i in range(n + 1)]

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    c = n / 2.0
    for j in range(n):
        for i in range(n):
            a, b, cc, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            s = (i + 0.5 - c) * (j + 0.5 - c)
            slash = s > 0 or (s == 0 and (i + j) % 2 == 0)
            if slash:
                tris += [(a, b, cc), (a, cc, d)]
            else:
                tris += [(a, b, d), (b, cc, d)]
    return make_mesh(verts, tris, closed=False)


def generate_fichera() -> SurfaceMesh:
    """Surface of [-1,1]^3 minus [0,1]^3, two triangles per unit facet, outward normals."""
    cubes = {o for o in itertools.product((-1, 0), repeat=3) if o != (0, 0, 0)}
    faces = []
    for o in sorted(cubes):
        for axis in range(3):
            for side in (0, 1):
                nb = list(o)
                nb[axis] += 1 if side else -1
                if tuple(nb) in cubes:
                    continue
                normal = np.zeros(3)
                normal[axis] = 1.0 if side else -1.0
                u, w = [k for k in range(3) if k != axis]
                corners = []
                for du, dw in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    p = list(o)
                    p[axis] += side
                    p[u] += du
                    p[w] += dw
                    corners.append(tuple(float(x) for x in p))
                faces.append((corners, normal))
    coords = sorted({c for corners, _ in faces for c in corners})
    index = {c: k for k, c in enumerate(coords)}
    X = np.array(coords)
    tris = []
    for corners, normal in faces:
        ids = [index[c] for c in corners]
        P = X[ids]
        if np.dot(np.cross(P[1] - P[0], P[2] - P[0]), normal) < 0:
            ids = ids[::-1]
            P = X[ids]
        # split along the diagonal through the corner closest to the origin
        start = min(range(4), key=lambda k: (np.linalg.norm(P[k]), ids[k]))
        ids = ids[start:] + ids[:start]
        tris += [(ids[0], ids[1], ids[2]), (ids[0], ids[2], ids[3])]
    return make_mesh(X, tris, closed=True)


def reference_patch_mesh(n: int) -> SurfaceMesh:
    """Regular n-gon of unit circumradius in the plane, triangulated by its centre.

    Vertex 0 is the centre, vertex k >= 1 sits at angle 2 pi (k-1)/n.
    """
    if n < 3:
        raise ValueError("a patch needs at least three triangles")
    ang = 2.0 * np.pi * np.arange(n) / n
    verts = np.vstack([[0.0, 0.0, 0.0], np.stack([np.cos(ang), np.sin(ang), 0 * ang], axis=1)])
    tris = [(0, i + 1, (i + 1) % n + 1) for i in range(n)]
    return make_mesh(verts, tris, closed=False)


def reference_patch_diameter(n: int) -> float:
    return 2.0 * math.sin(math.pi * (n // 2) / n)


def shape_regularity(mesh: SurfaceMesh) -> float:
    return float(np.max(mesh.diameters ** 2 / mesh.areas))


# ---------------------------------------------------------------- file format

def write_mesh(mesh: SurfaceMesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"surface {'closed' if mesh.closed else 'open'}\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles}\n")
        for x, b in zip(mesh.vertices, mesh.boundary):
            fh.write(f"{float(x[0])!r} {float(x[1])!r} {float(x[2])!r} {int(b)}\n")
        for tri, r in zip(mesh.triangles, mesh.ref_edge):
            fh.write(f"{tri[0]} {tri[1]} {tri[2]} {r}\n")


def read_mesh(path) -> SurfaceMesh:
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    if len(lines) < 2 or lines[0][0] != "surface" or lines[0][1] not in ("open", "closed"):
        raise MeshError(f"{path}: header must be 'surface open|closed'")
    V, T = int(lines[1][0]), int(lines[1][1])
    if len(lines) != 2 + V + T:
        raise MeshError(f"{path}: expected {V} vertex and {T} triangle lines")
    vl = lines[2:2 + V]
    tl = lines[2 + V:]
    verts = np.array([[float(v) for v in ln[:3]] for ln in vl])
    bnd = np.array([int(ln[3]) for ln in vl], dtype=bool)
    tris = np.array([[int(v) for v in ln[:3]] for ln in tl], dtype=np.int64)
    ref = np.array([int(ln[3]) for ln in tl], dtype=np.int64)
    return SurfaceMesh(verts, tris, ref, bnd, lines[0][1] == "closed").validate()


# ---------------------------------------------------------------- refinement

@dataclass
class RefinementResult:
    mesh: SurfaceMesh
    parent: np.ndarray              # child triangle -> parent triangle
    new_vertex_parents: np.ndarray  # (k, 2) edge endpoints of new vertices V_old..V_old+k-1
    vtilde: np.ndarray              # sorted eligible vertex ids


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


def nvb_refine(mesh: SurfaceMesh, marked_triangles=None, marked_edges=None) -> RefinementResult:
    """Newest vertex bisection with closure.

    Marked triangles get all three edges bisected; marked edges (vertex pairs)
    are bisected together with whatever the closure requires.
    """
    tri = mesh.triangles
    T = mesh.n_triangles
    marked = set()
    for t in marked_triangles if marked_triangles is not None else ():
        a, b, c = (int(v) for v in tri[t])
        marked |= {_edge_key(a, b), _edge_key(b, c), _edge_key(c, a)}
    for a, b in marked_edges if marked_edges is not None else ():
        marked.add(_edge_key(int(a), int(b)))
    if not marked:
        raise ValueError("nothing marked for refinement")

    # rotate so the reference edge is (v0, v1)
    rot = np.empty_like(tri)
    for k in range(3):
        rot[:, k] = tri[np.arange(T), (mesh.ref_edge + k) % 3]
    ref_keys = [_edge_key(int(a), int(b)) for a, b in rot[:, :2]]
    all_keys = [[_edge_key(int(r[k]), int(r[(k + 1) % 3])) for k in range(3)] for r in rot]

    for _ in range(10 * T + 1):
        changed = False
        for t in range(T):
            if ref_keys[t] not in marked and any(k in marked for k in all_keys[t]):
                marked.add(ref_keys[t])
                changed = True
        if not changed:
            break
    else:
        raise MeshError("refinement closure did not terminate; reference edges corrupt")

    verts = [v for v in mesh.vertices]
    bflags = list(mesh.boundary)
    boundary_keys = {(int(e[0]), int(e[1])) for e in mesh.edges[mesh.boundary_edges]} if not mesh.closed else set()
    midpoint = {}
    new_parents = []

    def mid(a, b):
        key = _edge_key(a, b)
        if key not in midpoint:
            midpoint[key] = len(verts)
            verts.append(0.5 * (mesh.vertices[a] + mesh.vertices[b]))
            bflags.append(key in boundary_keys)
            new_parents.append(key)
        return midpoint[key]

    children, parent = [], []

    def bisect(a, b, c, owner):
        if _edge_key(a, b) not in marked:
            children.append((a, b, c))
            parent.append(owner)
            return
        m = mid(a, b)
        bisect(c, a, m, owner)
        bisect(b, c, m, owner)

    for t in range(T):
        a, b, c = (int(v) for v in rot[t])
        bisect(a, b, c, t)

    new_mesh = SurfaceMesh(np.array(verts), np.array(children), np.zeros(len(children)),
                           np.array(bflags), mesh.closed).validate()
    eligible = new_mesh.eligible
    vt = set(range(mesh.n_vertices, new_mesh.n_vertices))
    for a, b in midpoint:
        vt.update((a, b))
    vtilde = np.array(sorted(v for v in vt if eligible[v]), dtype=np.int64)
    return RefinementResult(new_mesh, np.array(parent, dtype=np.int64),
                            np.array(new_parents, dtype=np.int64).reshape(-1, 2), vtilde)


# ---------------------------------------------------------------- marking

@dataclass(frozen=True)
class SingularFeatures:
    """Points and segments towards which corner-weighted marking grades the mesh."""

    points: tuple = ()
    segments: tuple = ()

    def distance(self, x: np.ndarray) -> np.ndarray:
        d = np.full(len(x), np.inf)
        for p in self.points:
            d = np.minimum(d, np.linalg.norm(x - np.asarray(p), axis=1))
        for a, b in self.segments:
            a, b = np.asarray(a, float), np.asarray(b, float)
            t = np.clip((x - a) @ (b - a) / np.dot(b - a, b - a), 0.0, 1.0)
            d = np.minimum(d, np.linalg.norm(x - (a + t[:, None] * (b - a)), axis=1))
        return d


def screen_features(side: float = 1.0) -> SingularFeatures:
    return SingularFeatures(points=((0, 0, 0), (side, 0, 0), (side, side, 0), (0, side, 0)))


def fichera_features() -> SingularFeatures:
    o = (0.0, 0.0, 0.0)
    return SingularFeatures(segments=((o, (1.0, 0, 0)), (o, (0, 1.0, 0)), (o, (0, 0, 1.0))))


def mark_uniform(mesh: SurfaceMesh) -> np.ndarray:
    return np.arange(mesh.n_triangles)


def mark_corner_weighted(mesh: SurfaceMesh, features: SingularFeatures,
                         theta: float = 0.25) -> np.ndarray:
    """The ceil(theta T) triangles whose centroids lie closest to the features."""
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    d = features.distance(mesh.centroids)
    k = max(1, math.ceil(theta * mesh.n_triangles))
    order = np.lexsort((np.arange(mesh.n_triangles), np.round(d, 12)))
    return np.sort(order[:k])


def read_marks(path) -> np.ndarray:
    with open(path) as fh:
        return np.array([int(tok) for tok in fh.read().split()], dtype=np.int64)


# ---------------------------------------------------------------- hierarchy

@dataclass
class MeshHierarchy:
    levels: list
    parents: list = field(default_factory=list)
    vtilde: list = field(default_factory=list)
    new_vertex_parents: list = field(default_factory=list)

    @classmethod
    def from_mesh(cls, mesh: SurfaceMesh) -> "MeshHierarchy":
        return cls([mesh], [None], [np.flatnonzero(mesh.eligible)], [np.zeros((0, 2), np.int64)])

    @property
    def finest(self) -> SurfaceMesh:
        return self.levels[-1]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def refine(self, marked_triangles=None, marked_edges=None) -> RefinementResult:
        res = nvb_refine(self.finest, marked_triangles, marked_edges)
        self.levels.append(res.mesh)
        self.parents.append(res.parent)
        self.vtilde.append(res.vtilde)
        self.new_vertex_parents.append(res.new_vertex_parents)
        return res

    def prolongation(self, level: int) -> sp.csr_matrix:
        """Nodal interpolation of piecewise linears from level to level + 1 (all vertices)."""
        nc = self.levels[level].n_vertices
        nf = self.levels[level + 1].n_vertices
        par = self.new_vertex_parents[level + 1]
        rows = np.concatenate([np.arange(nc), np.repeat(np.arange(nc, nf), 2)])
        cols = np.concatenate([np.arange(nc), par.ravel()])
        vals = np.concatenate([np.ones(nc), np.full(2 * len(par), 0.5)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(nf, nc))

    def prolongation_to_finest(self, level: int) -> sp.csr_matrix:
        n = self.levels[level].n_vertices
        P = sp.identity(n, format="csr")
        for l in range(level, self.n_levels - 1):
            P = self.prolongation(l) @ P
        return P.tocsr()


# ---------------------------------------------------------------- patches

@dataclass(frozen=True)
class Patch:
    center: int
    triangles: tuple     # fan in orientation order; triangle i = (center, rim[i], rim[i+1])
    rim: tuple
    center_position: tuple  # local index of the centre in each triangle
    diameter: float

    @property
    def valence(self) -> int:
        return len(self.triangles)


def _build_patch(mesh: SurfaceMesh, z: int) -> Patch:
    tris = sorted(mesh.vertex_triangles[z])
    by_next = {}
    for t in tris:
        k = int(np.flatnonzero(mesh.triangles[t] == z)[0])
        nxt = int(mesh.triangles[t][(k + 1) % 3])
        if nxt in by_next:
            raise MeshError(f"vertex {z} is not a manifold vertex")
        by_next[nxt] = (t, k)
    start = tris[0]
    order, rim, pos = [], [], []
    t = start
    for _ in range(len(tris)):
        k = int(np.flatnonzero(mesh.triangles[t] == z)[0])
        order.append(t)
        pos.append(k)
        rim.append(int(mesh.triangles[t][(k + 1) % 3]))
        prev = int(mesh.triangles[t][(k + 2) % 3])
        if prev not in by_next:
            raise MeshError(f"patch of vertex {z} does not close")
        t = by_next[prev][0]
    if t != start or len(set(order)) != len(tris):
        raise MeshError(f"vertex {z} is not a manifold vertex")
    pts = mesh.vertices[[z] + rim]
    diam = float(np.max(np.linalg.norm(pts[:, None] - pts[None], axis=2)))
    return Patch(z, tuple(order), tuple(rim), tuple(pos), diam)


def vertex_patches(mesh: SurfaceMesh) -> list[Patch]:
    return [_build_patch(mesh, int(z)) for z in np.flatnonzero(mesh.eligible)]


@dataclass(frozen=True)
class ReferencePatchKey:
    """Valence plus the per-triangle rotation and spoke-direction signature."""

    valence: int
    rotations: tuple
    spoke_flips: tuple


@dataclass(frozen=True)
class PatchPullback:
    """Patch triangle i corresponds to reference triangle i of the n-gon.

    ``frames[i]`` is the vertex permutation taking the canonical frame of the
    patch triangle to the frame whose vertices are (centre, rim[i], rim[i+1]),
    which is the canonical frame of the reference triangle.
    """

    patch: Patch
    frames: tuple


def classify_reference_patch(patch: Patch):
    n = patch.valence
    frames = tuple(VertexPermutation((k, (k + 1) % 3, (k + 2) % 3)) for k in patch.center_position)
    flips = tuple(bool(patch.center > r) for r in patch.rim)
    key = ReferencePatchKey(n, tuple(patch.center_position), flips)
    return key, PatchPullback(patch, frames)
