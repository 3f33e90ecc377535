import functools
import warnings

import numpy as np
import pytest

from conftest import hypersingular
from hpbem.assembly import assemble_hypersingular
from hpbem.experiments import memory_statistics
from hpbem.mesh import MeshHierarchy, generate_fichera, generate_screen, mark_uniform, nvb_refine
from hpbem.precond import (CoverageError, ReferenceSubspace, build_b2, build_b3,
                           build_coarse_plus_patch, build_diagonal, build_lmld)
from hpbem.solvers import spectral_bounds
from hpbem.space import build_dof_map, p1_embedding, patch_dofs
from oracles import hex_lattice_mesh


@functools.lru_cache(maxsize=None)
def two_level(p):
    """Screen(3) refined once uniformly, with the Galerkin matrix of degree p."""
    H = MeshHierarchy.from_mesh(generate_screen(3))
    H.refine(mark_uniform(H.finest))
    dm = build_dof_map(H.finest, p)
    return H, dm, assemble_hypersingular(H.finest, dm).matrix


def all_preconditioners(p=2):
    H, dm, D = two_level(p)
    return D, {"diag": build_diagonal(D), "B": build_coarse_plus_patch(D, H.finest, dm),
               "B2": build_b2(D, H, dm), "B3": build_b3(D, H, dm)}


@pytest.mark.parametrize("name", ["diag", "B", "B2", "B3"])
def test_symmetric_positive(name, rng):
    D, pres = all_preconditioners()
    B = pres[name]
    n = D.shape[0]
    for _ in range(20):
        r, s = rng.standard_normal(n), rng.standard_normal(n)
        assert r @ B.apply(s) == pytest.approx(s @ B.apply(r), rel=1e-12, abs=1e-14)
        assert r @ B.apply(r) > 0
    M = B.dense()
    assert np.allclose(M @ r, B.apply(r), rtol=1e-12, atol=1e-14)
    assert np.linalg.eigvalsh(M)[0] > 0


@pytest.mark.parametrize("name", ["B", "B2", "B3"])
def test_additivity(name, rng):
    D, pres = all_preconditioners()
    B = pres[name]
    r = rng.standard_normal(D.shape[0])
    total = np.zeros_like(r)
    for comp in B.components:
        out = np.zeros_like(r)
        comp.apply(r, out)
        total += out
    assert np.allclose(total, B.apply(r), rtol=1e-13, atol=1e-15)


def test_diagonal_apply(rng):
    D, pres = all_preconditioners()
    r = rng.standard_normal(D.shape[0])
    assert np.allclose(pres["diag"].apply(r), r / np.diag(D), rtol=1e-15)
    with pytest.raises(ValueError):
        pres["diag"].apply(r[:-1])
    with pytest.raises(ValueError):
        build_diagonal(-np.eye(3))


def test_subspace_counts():
    H, dm, D = two_level(2)
    _, pres = all_preconditioners()
    interior = int(H.finest.eligible.sum())
    assert pres["B"].subspace_count == 1 + interior
    lmld = sum(len(v) for v in H.vtilde)
    assert pres["B2"].subspace_count == lmld + interior
    assert pres["B3"].subspace_count == lmld + interior


def test_coverage_error():
    mesh = generate_screen(1)          # no interior vertex, but interior edge and cell dofs
    dm = build_dof_map(mesh, 3)
    assert dm.n_dofs > 0
    D = assemble_hypersingular(mesh, dm).matrix
    with pytest.raises(CoverageError):
        build_coarse_plus_patch(D, mesh, dm)


def test_lmld_single_level_is_diagonal_scaling():
    mesh, dm, D = hypersingular("screen:3", 1)
    B = build_lmld(MeshHierarchy.from_mesh(mesh), D.matrix)
    assert np.allclose(B.dense(), np.diag(1 / np.diag(D.matrix)), rtol=1e-14, atol=0)


def test_lmld_rejects_wrong_size():
    H, dm, D = two_level(1)
    with pytest.raises(ValueError):
        build_lmld(H, D[:-1, :-1])


def test_b2_close_to_b_on_one_level():
    mesh, dm, D = hypersingular("screen:3", 3)
    H = MeshHierarchy.from_mesh(mesh)
    kB = spectral_bounds(D, build_coarse_plus_patch(D, mesh, dm)).kappa
    kB2 = spectral_bounds(D, build_b2(D, H, dm)).kappa
    assert kB2 <= 3 * kB


def test_b2_product_bound():
    H, dm, D = two_level(2)
    _, pres = all_preconditioners()
    dm1 = build_dof_map(H.finest, 1)
    emb = p1_embedding(dm, dm1)
    D1 = D[np.ix_(emb, emb)]
    k_lmld = spectral_bounds(D1, build_lmld(H, D1)).kappa
    kB = spectral_bounds(D, pres["B"]).kappa
    kB2 = spectral_bounds(D, pres["B2"]).kappa
    assert kB2 <= 4 * k_lmld * kB


def test_b2_requires_finest_dofmap():
    H, dm, D = two_level(2)
    coarse_dm = build_dof_map(H.levels[0], 2)
    with pytest.raises(ValueError):
        build_b2(D, H, coarse_dm)


def test_b3_local_solve_on_regular_hexagon():
    mesh, centre = hex_lattice_mesh()
    p = 3
    dm = build_dof_map(mesh, p)
    D = assemble_hypersingular(mesh, dm).matrix
    B3 = build_b3(D, MeshHierarchy.from_mesh(mesh), dm)
    comp = next(c for c in B3.components if isinstance(c, ReferenceSubspace)
                and c.valence == 6 and np.array_equal(c.indices, _centre_dofs(dm, centre)))
    assert comp.scale == pytest.approx(1.0)
    exact = np.linalg.inv(D[np.ix_(comp.indices, comp.indices)])
    assert np.max(np.abs(comp.local_inverse() - exact)) <= 1e-6 * np.max(np.abs(exact))


def _centre_dofs(dm, centre):
    from hpbem.mesh import vertex_patches
    patch = next(pt for pt in vertex_patches(dm.mesh) if pt.center == centre)
    return patch_dofs(dm, patch)


def test_b3_factor_count_constant_on_uniform_fichera():
    mesh = generate_fichera()
    stats = []
    for level in range(3):
        mesh = nvb_refine(mesh, mark_uniform(mesh)).mesh
        stats.append(memory_statistics(mesh, 2))
    counts = [s["B3_blocks"] for s in stats]
    exact = [s["B_blocks"] for s in stats]
    assert counts[0] == counts[1] == counts[2]
    assert exact[0] < exact[1] < exact[2]
    # exact blocks grow with the vertex count, roughly fourfold per level
    assert 3.5 <= exact[2] / exact[1] <= 4.5
    assert stats[2]["B3_bytes_per_dof"] < stats[2]["B_bytes_per_dof"]


def test_memory_statistics_match_preconditioner_stats():
    mesh, dm, D = hypersingular("fichera", 2, 0.2)
    H = MeshHierarchy.from_mesh(mesh)
    st = memory_statistics(mesh, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b = build_coarse_plus_patch(D, mesh, dm).stats()
        b3 = build_b3(D, H, dm).stats()
    assert (b["blocks"], b["stored_factor_bytes"]) == (st["B_blocks"], st["B_bytes"])
    assert (b3["blocks"], b3["stored_factor_bytes"]) == (st["B3_blocks"], st["B3_bytes"])
