"""Global numbering of the continuous piecewise polynomial space of degree p.

Numbering: free vertices, then free edges (p-1 each), then cells, each in id
order. An edge's intrinsic direction runs from its lower to its higher vertex
id; an element traversing the edge the other way multiplies edge function i
by (-1)^i. On open surfaces, boundary vertices and edges carry no dofs.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh import Patch, SurfaceMesh
from .ref_element import LocalLayout, eval_basis, n_local


@dataclass(eq=False)
class DofMap:
    mesh: SurfaceMesh
    p: int
    vertex_dof: np.ndarray   # (V,), -1 where no dof
    edge_dofs: np.ndarray    # (E, p-1), -1 rows for boundary edges
    cell_dofs: np.ndarray    # (T, (p-1)(p-2)/2)
    n_dofs: int

    @cached_property
    def element_table(self):
        """(T, n_local) global dof ids (-1 = none) and (T, n_local) signs."""
        mesh, p = self.mesh, self.p
        lay = LocalLayout(p)
        T = mesh.n_triangles
        dofs = np.full((T, lay.size), -1, dtype=np.int64)
        signs = np.ones((T, lay.size))
        dofs[:, :3] = self.vertex_dof[mesh.triangles]
        if p >= 2:
            tri = mesh.triangles
            reversed_ = tri > np.roll(tri, -1, axis=1)   # local edge k runs v_k -> v_{k+1}
            alt = (-1.0) ** np.arange(p - 1)
            for k in range(3):
                sl = lay.edge_slice(k)
                dofs[:, sl] = self.edge_dofs[mesh.tri_edges[:, k]]
                signs[:, sl] = np.where(reversed_[:, k, None], alt[None, :], 1.0)
        if p >= 3:
            dofs[:, lay.cells] = self.cell_dofs
        signs[dofs < 0] = 0.0
        dofs.setflags(write=False)
        signs.setflags(write=False)
        return dofs, signs

    def element_dofs(self, t: int):
        """Global dof id (-1 for constrained) and sign for each local basis function."""
        dofs, signs = self.element_table
        return dofs[t], signs[t]

    @property
    def vertex_dofs(self) -> np.ndarray:
        return self.vertex_dof[self.vertex_dof >= 0]

    def evaluate(self, coeffs, t: int, points) -> np.ndarray:
        """Value of sum_i coeffs_i phi_i on triangle t at reference points."""
        dofs, signs = self.element_dofs(t)
        tab = eval_basis(self.p, points)
        c = np.where(dofs >= 0, np.asarray(coeffs)[np.maximum(dofs, 0)], 0.0) * signs
        return c @ tab.values


def expected_dimension(mesh: SurfaceMesh, p: int) -> int:
    if mesh.closed:
        nv, ne = mesh.n_vertices, mesh.n_edges
    else:
        nv = int((~mesh.boundary).sum())
        ne = int((~mesh.boundary_edges).sum())
    return nv + ne * (p - 1) + mesh.n_triangles * (p - 1) * (p - 2) // 2


def build_dof_map(mesh: SurfaceMesh, p: int) -> DofMap:
    if p < 1:
        raise ValueError("polynomial degree must be at least 1")
    free_v = mesh.eligible
    free_e = np.ones(mesh.n_edges, bool) if mesh.closed else ~mesh.boundary_edges
    vdof = np.full(mesh.n_vertices, -1, dtype=np.int64)
    vdof[free_v] = np.arange(free_v.sum())
    n = int(free_v.sum())
    edofs = np.full((mesh.n_edges, max(p - 1, 0)), -1, dtype=np.int64)
    ne = int(free_e.sum())
    edofs[free_e] = n + np.arange(ne * (p - 1)).reshape(ne, p - 1)
    n += ne * (p - 1)
    nc = (p - 1) * (p - 2) // 2
    cdofs = n + np.arange(mesh.n_triangles * nc, dtype=np.int64).reshape(mesh.n_triangles, nc)
    n += mesh.n_triangles * nc
    return DofMap(mesh, p, vdof, edofs, cdofs, n)


def p1_embedding(dofmap_p: DofMap, dofmap_1: DofMap) -> np.ndarray:
    """For each lowest-order dof, the index of the matching vertex dof of the degree-p space."""
    if dofmap_p.mesh is not dofmap_1.mesh or dofmap_1.p != 1:
        raise ValueError("embedding needs a p = 1 dof map on the same mesh")
    out = np.empty(dofmap_1.n_dofs, dtype=np.int64)
    mask = dofmap_1.vertex_dof >= 0
    out[dofmap_1.vertex_dof[mask]] = dofmap_p.vertex_dof[mask]
    return out


def patch_dofs(dofmap: DofMap, patch: Patch) -> np.ndarray:
    """Dofs supported in the closed patch: centre vertex, spoke edges, patch cells."""
    mesh = dofmap.mesh
    z = patch.center
    ids = [dofmap.vertex_dof[z]]
    for t, k in zip(patch.triangles, patch.center_position):
        # spoke edges of t are local edges k (z -> next) and k-1 (prev -> z)
        for e in (mesh.tri_edges[t, k], mesh.tri_edges[t, (k + 2) % 3]):
            ids.extend(dofmap.edge_dofs[e])
        ids.extend(dofmap.cell_dofs[t])
    ids = np.unique(np.array(ids, dtype=np.int64))
    return ids[ids >= 0]


def uncovered_dofs(dofmap: DofMap, patches) -> np.ndarray:
    """Dofs in neither the vertex space nor any patch space."""
    covered = np.zeros(dofmap.n_dofs, dtype=bool)
    covered[dofmap.vertex_dofs] = True
    for patch in patches:
        covered[patch_dofs(dofmap, patch)] = True
    return np.flatnonzero(~covered)


def local_size(dofmap: DofMap) -> int:
    return n_local(dofmap.p)
