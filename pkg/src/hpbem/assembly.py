"""Galerkin matrices of the hypersingular operator, surface mass and H^1 stiffness.

The hypersingular form is evaluated through surface curls,

    <D u, v> = 1/(4 pi) int int curl u(y) . curl v(x) / |x - y| dS_y dS_x,

so only the weakly singular single-layer kernel is integrated. Pairs of
triangles sharing a vertex, an edge or everything are integrated with the
regularized rules of :mod:`hpbem.singular_quadrature`; other pairs with
tensor Gauss rules whose order grows as the panels get closer.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .mesh import SurfaceMesh, reference_patch_mesh
from .operator import SymmetricOperator
from .ref_element import (VertexPermutation, eval_basis, mass_matrix, n_local,
                          permutation_transform, stiffness_components, triangle_rule)
from .singular_quadrature import pair_rule
from .space import DofMap, build_dof_map

log = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi


@dataclass(frozen=True)
class StabilizationConfig:
    alpha: float = 0.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("stabilization parameter must be nonnegative")

    def check(self, mesh: SurfaceMesh) -> None:
        if self.alpha == 0 and mesh.closed:
            warnings.warn("alpha = 0 on a closed surface: the matrix is singular "
                          "(constants are in the kernel)", stacklevel=3)


@dataclass(frozen=True)
class QuadratureOrders:
    """Gauss points per direction.

    ``singular`` defaults to max(2p + 4, 10), ``far`` to p + 2. Disjoint panels closer
    than ``near`` (pairs of (separation ratio, extra points)) get extra points;
    the ratio is centroid distance over the larger panel diameter.
    """

    singular: int | None = None
    far: int | None = None
    near: tuple = ((1.0, 7), (1.5, 6), (2.5, 4), (4.0, 3), (8.0, 2), (16.0, 1))
    bump: int = 0

    def singular_order(self, p: int) -> int:
        return (self.singular if self.singular is not None else max(2 * p + 4, 10)) + self.bump

    def far_order(self, p: int) -> int:
        return (self.far if self.far is not None else p + 2) + self.bump

    def disjoint_orders(self, p: int, ratio: np.ndarray) -> np.ndarray:
        q = np.full(ratio.shape, self.far_order(p), dtype=np.int64)
        for limit, extra in sorted(self.near, reverse=True):
            q[ratio < limit] = self.far_order(p) + extra
        return q

    def raised(self, k: int = 2) -> "QuadratureOrders":
        return QuadratureOrders(self.singular, self.far, self.near, self.bump + k)


# ---------------------------------------------------------------- geometry helpers

def _frame_geometry(X):
    """Jacobian, curl map and area element for triangles with vertex rows X (B, 3, 3)."""
    J = np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]], axis=2)
    G = np.einsum("nia,nib->nab", J, J)
    det = G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] ** 2
    Ginv = np.stack([np.stack([G[:, 1, 1], -G[:, 0, 1]], 1),
                     np.stack([-G[:, 1, 0], G[:, 0, 0]], 1)], 1) / det[:, None, None]
    surf_grad = J @ Ginv   # (B, 3, 2): tangential gradient of reference derivatives
    return J, surf_grad, np.sqrt(det)


def _curl_maps(mesh: SurfaceMesh, tris, frames):
    """Curl maps in reordered frames; the normal always follows the mesh orientation."""
    X = mesh.vertices[mesh.triangles[tris][np.arange(len(tris))[:, None], frames]]
    J, sg, jac = _frame_geometry(X)
    n = mesh.normals[tris]
    C = np.cross(n[:, :, None], sg, axis=1)
    return X[:, 0], J, C, jac


@lru_cache(maxsize=16)
def _singular_table(case: str, q: int, p: int):
    rule = pair_rule(case, q)
    Gx = eval_basis(p, rule.x).gradients.transpose(0, 2, 1).reshape(-1, len(rule.weights))
    Gy = eval_basis(p, rule.y).gradients.transpose(0, 2, 1).reshape(-1, len(rule.weights))
    return rule, np.ascontiguousarray(Gx), np.ascontiguousarray(Gy)


def _contract(red, M, nb):
    """A[n, a, b] = sum_{s,t} M[n, s, t] red[n, a, s, b, t]."""
    red = red.reshape(-1, nb, 2, nb, 2)
    return np.einsum("nst,nasbt->nab", M, red)


# ---------------------------------------------------------------- element pairs

def _singular_blocks(mesh, p, case, tx, ty, fx, fy, q, chunk=2_000_000):
    """Local blocks in the canonical bases for singular pairs of one adjacency case."""
    nb = n_local(p)
    rule, Gx, Gy = _singular_table(case, q, p)
    Q = len(rule.weights)
    x0, Jx, Cx, jx = _curl_maps(mesh, tx, fx)
    y0, Jy, Cy, jy = _curl_maps(mesh, ty, fy)
    B = len(tx)
    red = np.zeros((B, (2 * nb) ** 2))
    qc = max(1, min(Q, 8192))
    for q0 in range(0, Q, qc):
        sl = slice(q0, min(Q, q0 + qc))
        H = (Gx[:, None, sl] * Gy[None, :, sl] * rule.weights[sl]).reshape((2 * nb) ** 2, -1)
        px = rule.x[sl]
        py = rule.y[sl]
        bc = max(1, chunk // (sl.stop - sl.start))
        for b0 in range(0, B, bc):
            bs = slice(b0, min(B, b0 + bc))
            d = ((x0[bs] - y0[bs])[:, None, :]
                 + np.einsum("nia,qa->nqi", Jx[bs], px)
                 - np.einsum("nia,qa->nqi", Jy[bs], py))
            K = 1.0 / np.sqrt(np.einsum("nqi,nqi->nq", d, d))
            red[bs] += K @ H.T
    M = np.einsum("nia,nib->nab", Cx, Cy) * (jx * jy / FOUR_PI)[:, None, None]
    A = _contract(red, M, nb)
    return A


def _transform_stack(p, frames):
    cache = {}
    out = np.empty((len(frames),) + (n_local(p),) * 2)
    for k, f in enumerate(frames):
        key = tuple(int(v) for v in f)
        if key not in cache:
            cache[key] = permutation_transform(VertexPermutation(key), p).matrix
        out[k] = cache[key]
    return out


def _disjoint_blocks(mesh, p, tx, ty, q, budget=3_000_000):
    nb = n_local(p)
    pts, w = triangle_rule(q)
    G = eval_basis(p, pts).gradients.transpose(0, 2, 1).reshape(2 * nb, -1)  # (2nb, q^2)
    Gw = G * w
    ident = np.tile(np.arange(3), (len(tx), 1))
    x0, Jx, Cx, jx = _curl_maps(mesh, tx, ident)
    y0, Jy, Cy, jy = _curl_maps(mesh, ty, ident)
    Xq = x0[:, None, :] + np.einsum("nia,qa->nqi", Jx, pts)
    Yq = y0[:, None, :] + np.einsum("nia,qa->nqi", Jy, pts)
    out = np.empty((len(tx), nb, nb))
    M = np.einsum("nia,nib->nab", Cx, Cy) * (jx * jy / FOUR_PI)[:, None, None]
    chunk = max(1, budget // q ** 4)
    for b0 in range(0, len(tx), chunk):
        bs = slice(b0, b0 + chunk)
        d = Xq[bs][:, :, None, :] - Yq[bs][:, None, :, :]
        K = 1.0 / np.sqrt(np.einsum("nqri,nqri->nqr", d, d))
        red = Gw @ K @ Gw.T                     # (B, 2nb, 2nb)
        out[bs] = _contract(red.reshape(len(red), -1), M[bs], nb)
    return out


def classify_pairs(mesh: SurfaceMesh):
    """Unordered triangle pairs (t1 <= t2) grouped by the number of shared vertices."""
    T = mesh.n_triangles
    inc = np.zeros((T, mesh.n_vertices), dtype=np.int8)
    inc[np.repeat(np.arange(T), 3), mesh.triangles.ravel()] = 1
    shared = inc.astype(np.int32) @ inc.T.astype(np.int32)
    i, j = np.triu_indices(T)
    s = shared[i, j]
    return {k: (i[s == k], j[s == k]) for k in (3, 2, 1, 0)}


def _singular_frames(mesh, case, t1, t2):
    """Frames placing shared vertices first, in the same order in both triangles."""
    fx = np.empty((len(t1), 3), dtype=np.int64)
    fy = np.empty((len(t1), 3), dtype=np.int64)
    for k, (a, b) in enumerate(zip(t1, t2)):
        ta, tb = list(mesh.triangles[a]), list(mesh.triangles[b])
        if case == "identical":
            fx[k] = fy[k] = (0, 1, 2)
            continue
        common = [v for v in ta if v in tb]
        if case == "vertex":
            i, j = ta.index(common[0]), tb.index(common[0])
            fx[k] = (i, (i + 1) % 3, (i + 2) % 3)
            fy[k] = (j, (j + 1) % 3, (j + 2) % 3)
        else:
            i0, i1 = ta.index(common[0]), ta.index(common[1])
            j0, j1 = tb.index(common[0]), tb.index(common[1])
            fx[k] = (i0, i1, 3 - i0 - i1)
            fy[k] = (j0, j1, 3 - j0 - j1)
    return fx, fy


def pair_blocks(mesh: SurfaceMesh, p: int, t1, t2, orders: QuadratureOrders | None = None,
                case: str | None = None) -> np.ndarray:
    """Local (canonical basis, unsigned) hypersingular blocks for triangle pairs.

    All pairs must share the same adjacency case; ``case`` is detected from
    the first pair when omitted.
    """
    orders = orders or QuadratureOrders()
    t1 = np.atleast_1d(np.asarray(t1, dtype=np.int64))
    t2 = np.atleast_1d(np.asarray(t2, dtype=np.int64))
    if case is None:
        n_shared = len(set(mesh.triangles[t1[0]]) & set(mesh.triangles[t2[0]]))
        case = {3: "identical", 2: "edge", 1: "vertex", 0: "disjoint"}[n_shared]
    if case == "disjoint":
        ratio = separation_ratio(mesh, t1, t2)
        qs = orders.disjoint_orders(p, ratio)
        out = np.empty((len(t1), n_local(p), n_local(p)))
        for q in np.unique(qs):
            sel = qs == q
            out[sel] = _disjoint_blocks(mesh, p, t1[sel], t2[sel], int(q))
        return out
    fx, fy = _singular_frames(mesh, case, t1, t2)
    A = _singular_blocks(mesh, p, case, t1, t2, fx, fy, orders.singular_order(p))
    if case == "identical":
        return A
    Tx = _transform_stack(p, fx)
    Ty = _transform_stack(p, fy)
    return Tx @ A @ Ty.transpose(0, 2, 1)


def separation_ratio(mesh, t1, t2) -> np.ndarray:
    d = np.linalg.norm(mesh.centroids[t1] - mesh.centroids[t2], axis=1)
    return d / np.maximum(mesh.diameters[t1], mesh.diameters[t2])


# ---------------------------------------------------------------- scatter

def _scatter(A, dofmap, t1, t2, blocks, symmetric_pair=True):
    dofs, signs = dofmap.element_table
    dx, sx = dofs[t1], signs[t1]
    dy, sy = dofs[t2], signs[t2]
    vals = blocks * sx[:, :, None] * sy[:, None, :]
    I = np.broadcast_to(dx[:, :, None], vals.shape).ravel()
    J = np.broadcast_to(dy[:, None, :], vals.shape).ravel()
    v = vals.ravel()
    keep = (I >= 0) & (J >= 0)
    I, J, v = I[keep], J[keep], v[keep]
    np.add.at(A, (I, J), v)
    if symmetric_pair:
        off = np.repeat(t1 != t2, blocks.shape[1] * blocks.shape[2])[keep]
        np.add.at(A, (J[off], I[off]), v[off])


def load_vector_of_one(mesh: SurfaceMesh, dofmap: DofMap) -> np.ndarray:
    """m_i = int_Gamma phi_i."""
    p = dofmap.p
    Mref = mass_matrix(p).matrix
    mloc = Mref[:, :3].sum(axis=1)            # int of each reference function
    dofs, signs = dofmap.element_table
    vals = 2.0 * mesh.areas[:, None] * mloc[None, :] * signs
    m = np.zeros(dofmap.n_dofs)
    keep = dofs >= 0
    np.add.at(m, dofs[keep], vals[keep])
    return m


def assemble_hypersingular(mesh: SurfaceMesh, dofmap: DofMap,
                           config: StabilizationConfig | float = 0.0,
                           orders: QuadratureOrders | None = None,
                           pair_batch: int = 20000) -> SymmetricOperator:
    if not isinstance(config, StabilizationConfig):
        config = StabilizationConfig(float(config))
    config.check(mesh)
    if dofmap.mesh is not mesh:
        raise ValueError("dof map was built on a different mesh")
    orders = orders or QuadratureOrders()
    p = dofmap.p
    N = dofmap.n_dofs
    A = np.zeros((N, N))
    groups = classify_pairs(mesh)
    names = {3: "identical", 2: "edge", 1: "vertex", 0: "disjoint"}
    for k, (t1, t2) in groups.items():
        for b0 in range(0, len(t1), pair_batch):
            a, b = t1[b0:b0 + pair_batch], t2[b0:b0 + pair_batch]
            blocks = pair_blocks(mesh, p, a, b, orders, names[k])
            if not np.all(np.isfinite(blocks)):
                bad = np.flatnonzero(~np.isfinite(blocks).all(axis=(1, 2)))[0]
                raise FloatingPointError(
                    f"non-finite entry for triangle pair ({a[bad]}, {b[bad]})")
            _scatter(A, dofmap, a, b, blocks)
    if config.alpha > 0:
        m = load_vector_of_one(mesh, dofmap)
        A += config.alpha ** 2 * np.outer(m, m)
    meta = {"p": p, "singular_order": orders.singular_order(p),
            "far_order": orders.far_order(p), "near": orders.near,
            "triangles": mesh.n_triangles}
    return SymmetricOperator(A, "hypersingular", config.alpha, meta)


def _elementwise(mesh, dofmap, local):
    dofs, signs = dofmap.element_table
    blocks = local * signs[:, :, None] * signs[:, None, :]
    A = np.zeros((dofmap.n_dofs, dofmap.n_dofs))
    I = np.broadcast_to(dofs[:, :, None], blocks.shape).ravel()
    J = np.broadcast_to(dofs[:, None, :], blocks.shape).ravel()
    keep = (I >= 0) & (J >= 0)
    np.add.at(A, (I[keep], J[keep]), blocks.ravel()[keep])
    return A


def assemble_mass(mesh: SurfaceMesh, dofmap: DofMap) -> SymmetricOperator:
    Mref = mass_matrix(dofmap.p).matrix
    local = 2.0 * mesh.areas[:, None, None] * Mref[None]
    return SymmetricOperator(_elementwise(mesh, dofmap, local), "mass", metadata={"p": dofmap.p})


def assemble_h1(mesh: SurfaceMesh, dofmap: DofMap) -> SymmetricOperator:
    """Gram matrix of tangential gradients."""
    S = stiffness_components(dofmap.p)
    J = mesh.jacobians
    G = np.einsum("nia,nib->nab", J, J)
    Ginv = np.linalg.inv(G)
    local = np.einsum("nab,abkl->nkl", Ginv, S) * (2.0 * mesh.areas)[:, None, None]
    return SymmetricOperator(_elementwise(mesh, dofmap, local), "h1stiffness",
                             metadata={"p": dofmap.p})


def assemble_patch_block(D, dofs) -> np.ndarray:
    """Principal submatrix of the Galerkin matrix on the given dofs."""
    A = D.matrix if isinstance(D, SymmetricOperator) else np.asarray(D)
    dofs = np.asarray(dofs)
    if dofs.size == 0:
        raise ValueError("empty patch dof set")
    return A[np.ix_(dofs, dofs)].copy()


@dataclass
class ReferenceBlock:
    valence: int
    p: int
    matrix: np.ndarray
    mesh: SurfaceMesh
    dofmap: DofMap
    dofs: np.ndarray = field(repr=False, default=None)


_REFERENCE_CACHE: dict = {}


def assemble_reference_patch(valence: int, p: int,
                             orders: QuadratureOrders | None = None) -> ReferenceBlock:
    """Hypersingular block on the regular n-gon screen (alpha = 0), cached."""
    orders = orders or QuadratureOrders()
    key = (valence, p, orders)
    if key not in _REFERENCE_CACHE:
        mesh = reference_patch_mesh(valence)
        dm = build_dof_map(mesh, p)
        D = assemble_hypersingular(mesh, dm, 0.0, orders).matrix
        D.setflags(write=False)
        _REFERENCE_CACHE[key] = ReferenceBlock(valence, p, D, mesh, dm, np.arange(dm.n_dofs))
    return _REFERENCE_CACHE[key]


def rhs_vector(mesh: SurfaceMesh, dofmap: DofMap, g) -> np.ndarray:
    """Moments int g phi_i with a rule of degree 2p + 2 per triangle."""
    p = dofmap.p
    pts, w = triangle_rule(p + 2)
    phi = eval_basis(p, pts).values                       # (nb, Q)
    X = mesh.vertices[mesh.triangles[:, 0]][:, None, :] + np.einsum(
        "nia,qa->nqi", mesh.jacobians, pts)
    gv = np.asarray(g(X.reshape(-1, 3)), dtype=float).reshape(mesh.n_triangles, -1)
    loc = (gv * w) @ phi.T * (2.0 * mesh.areas)[:, None]   # (T, nb)
    dofs, signs = dofmap.element_table
    b = np.zeros(dofmap.n_dofs)
    keep = dofs >= 0
    np.add.at(b, dofs[keep], (loc * signs)[keep])
    return b
