"""Additive Schwarz preconditioners B^{-1} = sum_i R_i^T A_i^{-1} R_i.

Available splittings:

* diagonal scaling,
* ``B``: exact solve on the vertex (lowest order) dofs plus exact patch blocks,
* ``B2``: local multilevel diagonal scaling (LMLD) on the lowest order space
  plus exact patch blocks,
* ``B3``: LMLD plus patch solves borrowed from a regular reference polygon
  of the same valence, one shared factorization per valence.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from .assembly import QuadratureOrders, assemble_reference_patch
from .mesh import (MeshHierarchy, Patch, classify_reference_patch, reference_patch_diameter,
                   vertex_patches)
from .operator import SymmetricOperator
from .ref_element import LocalLayout, permutation_transform
from .space import DofMap, build_dof_map, p1_embedding, patch_dofs, uncovered_dofs

FLOAT_BYTES = 8
INDEX_BYTES = 8


class CoverageError(ValueError):
    def __init__(self, missing):
        self.missing = np.asarray(missing)
        super().__init__(f"subspaces miss {len(self.missing)} dofs: {self.missing[:20].tolist()}")


def _matrix(A):
    return A.matrix if isinstance(A, SymmetricOperator) else np.asarray(A, dtype=float)


def _cholesky(block, what):
    try:
        return cho_factor(block, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"{what}: local matrix not positive definite") from exc


# ---------------------------------------------------------------- subspaces

@dataclass
class BlockSubspace:
    """Index injection with an exact dense Cholesky-factorized local solver."""

    indices: np.ndarray
    factor: tuple

    count = 1

    def apply(self, r, out):
        out[self.indices] += cho_solve(self.factor, r[self.indices])

    def add_dense(self, M):
        k = len(self.indices)
        M[np.ix_(self.indices, self.indices)] += cho_solve(self.factor, np.eye(k))

    def covered(self):
        return self.indices

    def factor_bytes(self):
        k = len(self.indices)
        return k * k * FLOAT_BYTES + k * INDEX_BYTES


@dataclass
class ScalarSubspaces:
    """One scalar subspace per listed dof (diagonal scaling)."""

    indices: np.ndarray
    inverse: np.ndarray

    @property
    def count(self):
        return len(self.indices)

    def apply(self, r, out):
        np.add.at(out, self.indices, self.inverse * r[self.indices])

    def add_dense(self, M):
        np.add.at(M, (self.indices, self.indices), self.inverse)

    def covered(self):
        return self.indices


@dataclass
class RankOneSubspaces:
    """Columns v_k of a sparse prolongation, each with scalar solver 1/(v_k^T A v_k)."""

    vectors: sp.csc_matrix      # (N, m)
    inverse: np.ndarray         # (m,)

    @property
    def count(self):
        return self.vectors.shape[1]

    def apply(self, r, out):
        out += self.vectors @ (self.inverse * (self.vectors.T @ r))

    def add_dense(self, M):
        V = self.vectors
        M += (V @ sp.diags(self.inverse) @ V.T).toarray()

    def covered(self):
        return np.unique(self.vectors.nonzero()[0])


@dataclass
class ReferenceSubspace:
    """Patch solve (diam_ref / h_z) P Dref^{-1} P^T with a shared reference factor."""

    indices: np.ndarray
    transform: sp.csr_matrix    # orthogonal, patch dofs x reference dofs
    factor: tuple               # shared Cholesky factor of the reference block
    scale: float
    valence: int

    count = 1

    def apply(self, r, out):
        y = cho_solve(self.factor, self.transform.T @ r[self.indices])
        out[self.indices] += self.scale * (self.transform @ y)

    def local_inverse(self):
        P = self.transform.toarray()
        return self.scale * P @ cho_solve(self.factor, P.T)

    def add_dense(self, M):
        M[np.ix_(self.indices, self.indices)] += self.local_inverse()

    def covered(self):
        return self.indices

    def bookkeeping_bytes(self):
        P = self.transform
        return (len(self.indices) * INDEX_BYTES + P.data.nbytes + P.indices.nbytes
                + P.indptr.nbytes + FLOAT_BYTES)


@dataclass
class AdditiveSchwarzPreconditioner:
    n: int
    components: list
    name: str = ""
    coarse: list = field(default_factory=list)  # components excluded from memory statistics

    def apply(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if r.shape != (self.n,):
            raise ValueError(f"residual has shape {r.shape}, expected ({self.n},)")
        out = np.zeros(self.n)
        for comp in self.components:
            comp.apply(r, out)
        return out

    __call__ = apply

    def dense(self) -> np.ndarray:
        """Explicit symmetric matrix of B^{-1}."""
        M = np.zeros((self.n, self.n))
        for comp in self.components:
            comp.add_dense(M)
        return 0.5 * (M + M.T)

    @property
    def subspace_count(self) -> int:
        return sum(c.count for c in self.components)

    def check_coverage(self) -> None:
        covered = np.zeros(self.n, dtype=bool)
        for comp in self.components:
            covered[comp.covered()] = True
        if not covered.all():
            raise CoverageError(np.flatnonzero(~covered))

    def stats(self) -> dict:
        """Stored factor memory of the high-order part (lowest-order components excluded)."""
        blocks = 0
        nbytes = 0
        shared = {}
        for comp in self.components:
            if any(comp is c for c in self.coarse):
                continue
            if isinstance(comp, BlockSubspace):
                blocks += 1
                nbytes += comp.factor_bytes()
            elif isinstance(comp, ReferenceSubspace):
                shared[comp.valence] = comp.factor[0].shape[0]
                nbytes += comp.bookkeeping_bytes()
            elif isinstance(comp, ScalarSubspaces):
                nbytes += comp.inverse.nbytes + comp.indices.nbytes
        for k in shared.values():
            blocks += 1
            nbytes += k * k * FLOAT_BYTES
        return {"name": self.name, "blocks": blocks, "stored_factor_bytes": int(nbytes),
                "bytes_per_dof": nbytes / self.n, "subspaces": self.subspace_count}


# ---------------------------------------------------------------- builders

def build_diagonal(A) -> AdditiveSchwarzPreconditioner:
    A = _matrix(A)
    d = np.diag(A).copy()
    if np.any(d <= 0):
        raise ValueError(f"nonpositive diagonal entries at {np.flatnonzero(d <= 0)[:10].tolist()}")
    n = len(d)
    return AdditiveSchwarzPreconditioner(n, [ScalarSubspaces(np.arange(n), 1.0 / d)], "diag")


def _patch_blocks(A, dofmap, patches):
    comps = []
    for patch in patches:
        idx = patch_dofs(dofmap, patch)
        comps.append(BlockSubspace(idx, _cholesky(A[np.ix_(idx, idx)], f"patch {patch.center}")))
    return comps


def _require_coverage(dofmap, patches):
    missing = uncovered_dofs(dofmap, patches)
    if missing.size:
        raise CoverageError(missing)


def build_coarse_plus_patch(D, mesh, dofmap: DofMap) -> AdditiveSchwarzPreconditioner:
    """Exact solve on all vertex dofs plus one exact block per eligible vertex patch."""
    A = _matrix(D)
    patches = vertex_patches(mesh)
    _require_coverage(dofmap, patches)
    vdofs = np.sort(dofmap.vertex_dofs)
    coarse = BlockSubspace(vdofs, _cholesky(A[np.ix_(vdofs, vdofs)], "vertex space"))
    comps = [coarse] + _patch_blocks(A, dofmap, patches)
    pre = AdditiveSchwarzPreconditioner(dofmap.n_dofs, comps, "B", coarse=[coarse])
    pre.check_coverage()
    return pre


def lmld_vectors(hierarchy: MeshHierarchy) -> sp.csc_matrix:
    """Hat functions of every (level, vertex in V~_level) on the finest lowest-order space.

    Rows follow the finest p = 1 dof numbering (eligible finest vertices).
    """
    finest = hierarchy.finest
    dm1 = build_dof_map(finest, 1)
    mask = dm1.vertex_dof >= 0
    cols = []
    for level in range(hierarchy.n_levels):
        vt = hierarchy.vtilde[level]
        if len(vt) == 0:
            continue
        P = hierarchy.prolongation_to_finest(level).tocsc()[:, vt]
        cols.append(P[np.flatnonzero(mask)])
    V = sp.hstack(cols).tocsc()
    V.eliminate_zeros()
    return V


def build_lmld(hierarchy: MeshHierarchy, D1) -> AdditiveSchwarzPreconditioner:
    """LMLD on the finest lowest-order space; ``D1`` is its Galerkin matrix."""
    if len(hierarchy.vtilde) != hierarchy.n_levels:
        raise ValueError("hierarchy lacks the V~ sets of some level")
    A = _matrix(D1)
    V = lmld_vectors(hierarchy)
    if V.shape[0] != A.shape[0]:
        raise ValueError("lowest-order matrix does not match the finest mesh")
    diag = np.asarray((V.multiply(sp.csc_matrix(A @ V.toarray()))).sum(axis=0)).ravel()
    if np.any(diag <= 0):
        raise ValueError("nonpositive LMLD scalar")
    comp = RankOneSubspaces(V, 1.0 / diag)
    pre = AdditiveSchwarzPreconditioner(A.shape[0], [comp], "LMLD")
    pre.check_coverage()
    return pre


def _embedded_lmld(D, hierarchy, dofmap):
    """LMLD rank-one subspaces pushed into the vertex dofs of the degree-p space."""
    A = _matrix(D)
    dm1 = build_dof_map(hierarchy.finest, 1)
    emb = p1_embedding(dofmap, dm1)
    V1 = lmld_vectors(hierarchy)
    D1 = A[np.ix_(emb, emb)]
    diag = np.asarray(V1.multiply(sp.csc_matrix(D1 @ V1.toarray())).sum(axis=0)).ravel()
    if np.any(diag <= 0):
        raise ValueError("nonpositive LMLD scalar")
    E = sp.csc_matrix((np.ones(len(emb)), (emb, np.arange(len(emb)))),
                      shape=(dofmap.n_dofs, len(emb)))
    return RankOneSubspaces((E @ V1).tocsc(), 1.0 / diag)


def build_b2(D, hierarchy: MeshHierarchy, dofmap: DofMap) -> AdditiveSchwarzPreconditioner:
    if dofmap.mesh is not hierarchy.finest:
        raise ValueError("dof map must live on the finest mesh of the hierarchy")
    A = _matrix(D)
    patches = vertex_patches(dofmap.mesh)
    _require_coverage(dofmap, patches)
    lmld = _embedded_lmld(A, hierarchy, dofmap)
    pre = AdditiveSchwarzPreconditioner(dofmap.n_dofs, [lmld] + _patch_blocks(A, dofmap, patches),
                                        "B2", coarse=[lmld])
    pre.check_coverage()
    return pre


def reference_transform(dofmap: DofMap, patch: Patch, ref_dofmap: DofMap):
    """Orthogonal map between patch dofs and reference-polygon dofs.

    Returns (patch dof ids, P) with P[i, j] the coefficient of reference
    basis function j in the pullback of patch basis function i.
    """
    p = dofmap.p
    lay = LocalLayout(p)
    _, pull = classify_reference_patch(patch)
    idx = patch_dofs(dofmap, patch)
    pos = {int(g): k for k, g in enumerate(idx)}
    P = np.full((len(idx), ref_dofmap.n_dofs), np.nan)
    gd, gs = dofmap.element_table
    rd, rs = ref_dofmap.element_table
    for i, (t, frame) in enumerate(zip(patch.triangles, pull.frames)):
        T = permutation_transform(frame, p).matrix
        k = patch.center_position[i]
        local = [k] + list(range(lay.edge_slice(k).start, lay.edge_slice(k).stop)) \
            + list(range(lay.edge_slice((k + 2) % 3).start, lay.edge_slice((k + 2) % 3).stop)) \
            + list(range(lay.cells.start, lay.cells.stop))
        for a in local:
            g = int(gd[t, a])
            row = np.zeros(ref_dofmap.n_dofs)
            nz = np.flatnonzero(T[a])
            for b in nz:
                if rd[i, b] < 0:
                    raise RuntimeError("patch function maps outside the reference patch space")
                row[rd[i, b]] += gs[t, a] * T[a, b] * rs[i, b]
            r = pos[g]
            if np.isnan(P[r, 0]):
                P[r] = row
            elif np.max(np.abs(P[r] - row)) > 1e-12:
                raise RuntimeError(f"inconsistent pullback for dof {g} of patch {patch.center}")
    if np.isnan(P).any():
        raise RuntimeError(f"patch {patch.center}: pullback incomplete")
    if P.shape[0] != P.shape[1]:
        raise RuntimeError("patch and reference spaces differ in dimension")
    return idx, P


def build_b3(D, hierarchy: MeshHierarchy, dofmap: DofMap,
             orders: QuadratureOrders | None = None) -> AdditiveSchwarzPreconditioner:
    """LMLD plus reference-patch local solvers; one Cholesky factor per valence."""
    if dofmap.mesh is not hierarchy.finest:
        raise ValueError("dof map must live on the finest mesh of the hierarchy")
    A = _matrix(D)
    mesh = dofmap.mesh
    p = dofmap.p
    patches = vertex_patches(mesh)
    _require_coverage(dofmap, patches)
    lmld = _embedded_lmld(A, hierarchy, dofmap)
    factors = {}
    comps = [lmld]
    for patch in patches:
        n = patch.valence
        if n not in factors:
            ref = assemble_reference_patch(n, p, orders)
            factors[n] = (ref, _cholesky(ref.matrix, f"reference polygon n={n}"))
        ref, fac = factors[n]
        idx, P = reference_transform(dofmap, patch, ref.dofmap)
        scale = reference_patch_diameter(n) / patch.diameter
        comps.append(ReferenceSubspace(idx, sp.csr_matrix(P), fac, scale, n))
    pre = AdditiveSchwarzPreconditioner(dofmap.n_dofs, comps, "B3", coarse=[lmld])
    pre.check_coverage()
    return pre
