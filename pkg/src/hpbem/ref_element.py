"""Hierarchical H^1-conforming basis on the reference triangle.

Reference triangle: vertices z1=(0,0), z2=(1,0), z3=(0,1) with barycentric
coordinates l1 = 1-x-y, l2 = x, l3 = y (0-based below: vertex k <-> l_{k+1}).

Local ordering of the (p+1)(p+2)/2 functions:

* 3 vertex functions l_k,
* for each local edge m = 0, 1, 2 joining vertices (m, m+1 mod 3), p-1 edge
  functions sqrt((2i+3)/2) L^S_{i+2}(l_e2 - l_e1, l_e1 + l_e2), i = 0..p-2,
* cell functions c_ij l1 l2 l3 P^S_i^{(2,2)}(l1 - l2, l1 + l2) P_j^{(2i+5,2)}(2 l3 - 1),
  i + j <= p-3, ordered with i outer and j inner.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigvalsh

from .operator import SymmetricOperator
from .polynomials import JacobiParams, gauss_rule, scaled_integrated_legendre, scaled_jacobi

LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))
_INSIDE_TOL = 1e-12
# d(l1, l2, l3)/d(x, y)
_DLAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def n_local(p: int) -> int:
    return (p + 1) * (p + 2) // 2


def cell_indices(p: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(p - 2) for j in range(p - 2 - i)]


@dataclass(frozen=True)
class LocalLayout:
    p: int

    @property
    def n_edge(self) -> int:
        return self.p - 1

    @property
    def n_cell(self) -> int:
        return (self.p - 1) * (self.p - 2) // 2

    @property
    def size(self) -> int:
        return n_local(self.p)

    def edge_slice(self, m: int) -> slice:
        start = 3 + m * self.n_edge
        return slice(start, start + self.n_edge)

    @property
    def edges(self) -> slice:
        return slice(3, 3 + 3 * self.n_edge)

    @property
    def cells(self) -> slice:
        return slice(3 + 3 * self.n_edge, self.size)


@dataclass(frozen=True)
class ShapeFunctionTable:
    p: int
    values: np.ndarray          # (n_local, m)
    gradients: np.ndarray       # (n_local, m, 2), derivatives in (x, y)
    cell_norm_constants: np.ndarray


def to_barycentric(points) -> np.ndarray:
    """Accept reference coordinates (m, 2) or barycentric (m, 3)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[-1] == 2:
        x, y = pts[:, 0], pts[:, 1]
        lam = np.stack([1.0 - x - y, x, y], axis=1)
    elif pts.shape[-1] == 3:
        lam = pts
        if np.any(np.abs(lam.sum(axis=1) - 1.0) > 1e-14 * 10):
            raise ValueError("barycentric coordinates must sum to 1")
    else:
        raise ValueError("points must have 2 or 3 coordinates")
    if np.any(lam < -_INSIDE_TOL):
        raise ValueError("points outside the reference triangle")
    return lam


def triangle_rule(q: int):
    """Collapsed Gauss rule on the reference triangle with q x q points.

    Exact for polynomials of total degree <= 2q - 2. Returns points (m, 2)
    and weights summing to 1/2.
    """
    g = gauss_rule(q).on_unit_interval()
    u, v = np.meshgrid(g.nodes, g.nodes, indexing="ij")
    wu, wv = np.meshgrid(g.weights, g.weights, indexing="ij")
    x = u.ravel()
    y = ((1.0 - u) * v).ravel()
    w = (wu * wv * (1.0 - u)).ravel()
    return np.stack([x, y], axis=1), w


def _raw_basis(p: int, lam: np.ndarray, cell_const: np.ndarray):
    """Values and gradients w.r.t. (l1, l2, l3) treated as independent."""
    m = lam.shape[0]
    nb = n_local(p)
    val = np.zeros((nb, m))
    dl = np.zeros((nb, m, 3))
    for k in range(3):
        val[k] = lam[:, k]
        dl[k, :, k] = 1.0
    if p >= 2:
        for e, (a, b) in enumerate(LOCAL_EDGES):
            la, lb = lam[:, a], lam[:, b]
            L, Ls, Lt = scaled_integrated_legendre(p, lb - la, la + lb, with_grad=True)
            for i in range(p - 1):
                c = np.sqrt((2 * i + 3) / 2.0)
                r = 3 + e * (p - 1) + i
                val[r] = c * L[i + 2]
                dl[r, :, b] = c * (Ls[i + 2] + Lt[i + 2])
                dl[r, :, a] = c * (Lt[i + 2] - Ls[i + 2])
    if p >= 3:
        l1, l2, l3 = lam[:, 0], lam[:, 1], lam[:, 2]
        bub = l1 * l2 * l3
        dbub = np.stack([l2 * l3, l1 * l3, l1 * l2], axis=1)
        A, As, At = scaled_jacobi(JacobiParams(2, 2), p - 3, l1 - l2, l1 + l2, with_grad=True)
        r = 3 + 3 * (p - 1)
        k = 0
        for i in range(p - 2):
            B, Bs, _ = scaled_jacobi(JacobiParams(2 * i + 5, 2), p - 3 - i,
                                     2.0 * l3 - 1.0, np.ones(m), with_grad=True)
            dA = np.stack([As[i] + At[i], At[i] - As[i], np.zeros(m)], axis=1)
            for j in range(p - 2 - i):
                c = cell_const[k]
                dB = np.zeros((m, 3))
                dB[:, 2] = 2.0 * Bs[j]
                val[r] = c * bub * A[i] * B[j]
                dl[r] = c * (dbub * (A[i] * B[j])[:, None]
                             + (bub * B[j])[:, None] * dA
                             + (bub * A[i])[:, None] * dB)
                r += 1
                k += 1
    return val, dl


@lru_cache(maxsize=None)
def _cell_constants(p: int) -> np.ndarray:
    if p < 3:
        return np.zeros(0)
    pts, w = triangle_rule(p + 2)
    lam = to_barycentric(pts)
    val, _ = _raw_basis(p, lam, np.ones(len(cell_indices(p))))
    cells = val[LocalLayout(p).cells]
    c = 1.0 / np.sqrt(cells ** 2 @ w)
    c.setflags(write=False)
    return c


def compute_cell_norm_constants(p: int) -> np.ndarray:
    """c_ij making every cell function unit in L2 of the reference triangle."""
    if p < 3:
        raise ValueError("cell functions exist only for p >= 3")
    return _cell_constants(p).copy()


def eval_basis(p: int, points) -> ShapeFunctionTable:
    """Basis values and (x, y)-gradients at reference or barycentric points."""
    if p < 1:
        raise ValueError("polynomial degree must be at least 1")
    lam = to_barycentric(points)
    consts = _cell_constants(p)
    val, dl = _raw_basis(p, lam, consts)
    grad = dl @ _DLAMBDA
    return ShapeFunctionTable(p, val, grad, consts.copy())


@lru_cache(maxsize=None)
def _element_matrices(p: int):
    pts, w = triangle_rule(p + 2)
    tab = eval_basis(p, pts)
    M = (tab.values * w) @ tab.values.T
    g = tab.gradients
    # S[a, b, k, l] = int d_a phi_k d_b phi_l
    S = np.einsum("kqa,q,lqb->abkl", g, w, g)
    M = 0.5 * (M + M.T)
    for arr in (M, S):
        arr.setflags(write=False)
    return M, S


def mass_matrix(p: int) -> SymmetricOperator:
    M, _ = _element_matrices(p)
    return SymmetricOperator(M.copy(), "mass", metadata={"p": p})


def stiffness_matrix(p: int) -> SymmetricOperator:
    _, S = _element_matrices(p)
    K = S[0, 0] + S[1, 1]
    return SymmetricOperator(0.5 * (K + K.T), "h1stiffness", metadata={"p": p})


def stiffness_components(p: int) -> np.ndarray:
    """Directional Gram tensor S[a, b] = int d_a phi_k d_b phi_l, shape (2, 2, n, n)."""
    return _element_matrices(p)[1]


# ---------------------------------------------------------------- permutations

@dataclass(frozen=True)
class VertexPermutation:
    """Reordered frame whose k-th vertex is the canonical vertex perm[k]."""

    perm: tuple

    def __post_init__(self):
        if sorted(self.perm) != [0, 1, 2]:
            raise ValueError(f"not a permutation of (0, 1, 2): {self.perm}")
        object.__setattr__(self, "perm", tuple(int(k) for k in self.perm))

    @property
    def inverse(self) -> "VertexPermutation":
        inv = [0, 0, 0]
        for k, v in enumerate(self.perm):
            inv[v] = k
        return VertexPermutation(tuple(inv))

    def compose(self, other: "VertexPermutation") -> "VertexPermutation":
        """Frame reached by applying ``other`` inside the frame of ``self``."""
        return VertexPermutation(tuple(self.perm[other.perm[k]] for k in range(3)))

    def edge_map(self):
        """For each canonical edge: (edge index in the reordered frame, flipped)."""
        inv = self.inverse.perm
        out = []
        for a, b in LOCAL_EDGES:
            r, s = inv[a], inv[b]
            if s == (r + 1) % 3:
                out.append((r, False))
            else:
                out.append((s, True))
        return tuple(out)

    @property
    def edge_flips(self) -> tuple:
        return tuple(f for _, f in self.edge_map())

    @staticmethod
    def all() -> list["VertexPermutation"]:
        return [VertexPermutation(q) for q in itertools.permutations(range(3))]


IDENTITY = VertexPermutation((0, 1, 2))


@dataclass(frozen=True)
class PermutationTransform:
    """phi_a(l) = sum_b matrix[a, b] psi_b(mu), psi the basis in the reordered frame."""

    perm: VertexPermutation
    p: int
    matrix: np.ndarray
    edge_signs: np.ndarray      # (3, p-1)
    interior: np.ndarray        # (n_cell, n_cell)
    residual: float


@lru_cache(maxsize=None)
def permutation_transform(Q: VertexPermutation, p: int) -> PermutationTransform:
    lay = LocalLayout(p)
    T = np.zeros((lay.size, lay.size))
    inv = Q.inverse.perm
    for j in range(3):
        T[j, inv[j]] = 1.0
    signs = np.ones((3, max(p - 1, 0)))
    for m, (e_new, flip) in enumerate(Q.edge_map()):
        for i in range(p - 1):
            sgn = (-1.0) ** i if flip else 1.0
            signs[m, i] = sgn
            T[lay.edge_slice(m).start + i, lay.edge_slice(e_new).start + i] = sgn
    residual = 0.0
    interior = np.zeros((lay.n_cell, lay.n_cell))
    if lay.n_cell:
        pts, w = triangle_rule(p + 2)
        lam = to_barycentric(pts)
        phi = eval_basis(p, lam).values[lay.cells]
        psi = eval_basis(p, lam[:, list(Q.perm)]).values[lay.cells]
        interior = (phi * w) @ psi.T
        rng = np.random.default_rng(1234)
        test = rng.dirichlet(np.ones(3), size=25)
        fit = interior @ eval_basis(p, test[:, list(Q.perm)]).values[lay.cells]
        residual = float(np.max(np.abs(eval_basis(p, test).values[lay.cells] - fit)))
        if residual > 1e-9:
            raise RuntimeError(f"interior permutation fit residual {residual:.2e}")
        T[lay.cells, lay.cells] = interior
    for arr in (T, signs, interior):
        arr.setflags(write=False)
    return PermutationTransform(Q, p, T, signs, interior, residual)


# ---------------------------------------------------------------- conditioning

def conditioning_study(p_range) -> list[dict]:
    """Extremal eigenvalues of M and M+S and of their edge/interior blocks."""
    rows = []
    for p in p_range:
        if not 1 <= p <= 20:
            raise ValueError("p outside [1, 20]")
        M = mass_matrix(p).matrix
        MS = M + stiffness_matrix(p).matrix
        lay = LocalLayout(p)
        blocks = [("full", slice(0, lay.size))]
        if p >= 2:
            blocks.append(("edge", lay.edges))
        if p >= 3:
            blocks.append(("interior", lay.cells))
        for name, A in (("M", M), ("M+S", MS)):
            for bname, sl in blocks:
                ev = eigvalsh(A[sl, sl])
                rows.append({"p": p, "block": f"{name}:{bname}",
                             "lambda_min": float(ev[0]), "lambda_max": float(ev[-1]),
                             "kappa": float(ev[-1] / ev[0])})
    return rows
