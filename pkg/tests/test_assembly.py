import numpy as np
import pytest
from scipy.linalg import cholesky

from conftest import hypersingular, screen
from hpbem.assembly import (StabilizationConfig, assemble_h1,
                            assemble_hypersingular, assemble_mass, assemble_patch_block,
                            assemble_reference_patch, classify_pairs, load_vector_of_one,
                            pair_blocks, rhs_vector, separation_ratio)
from hpbem.mesh import (MeshHierarchy, SurfaceMesh, generate_fichera, generate_screen,
                        mark_corner_weighted, mark_uniform, screen_features, vertex_patches)
from hpbem.operator import SymmetricOperator
from hpbem.precond import reference_transform
from hpbem.space import build_dof_map, patch_dofs
from oracles import brute_force_block, hex_lattice_mesh


def rel_max(A, B):
    return np.max(np.abs(A - B)) / np.max(np.abs(B))


def test_symmetry_screen2():
    mesh = generate_screen(2)
    D = assemble_hypersingular(mesh, build_dof_map(mesh, 3))
    assert D.asymmetry() < 1e-12


def test_constants_in_kernel_closed_surface():
    mesh, dm, D = hypersingular("fichera", 2, 0.0)
    one = np.zeros(dm.n_dofs)
    one[dm.vertex_dofs] = 1.0
    assert np.max(np.abs(D.matrix @ one)) <= 1e-6 * np.max(np.abs(D.matrix))


def test_alpha_zero_closed_warns():
    mesh = generate_fichera()
    with pytest.warns(UserWarning):
        StabilizationConfig(0.0).check(mesh)
    with pytest.raises(ValueError):
        StabilizationConfig(-1.0)


def test_stabilization_is_rank_one():
    mesh, dm, D0 = hypersingular("fichera", 2, 0.0)
    _, _, Da = hypersingular("fichera", 2, 0.2)
    m = load_vector_of_one(mesh, dm)
    diff = Da.matrix - D0.matrix
    assert np.max(np.abs(diff - 0.04 * np.outer(m, m))) <= 1e-12 * max(1.0, np.max(np.abs(diff)))
    s = np.linalg.svd(diff, compute_uv=False)
    assert s[1] <= 1e-10 * s[0]
    assert m[dm.vertex_dofs].sum() == pytest.approx(mesh.total_area, rel=1e-12)


def test_spd():
    for geom, alpha in (("screen:3", 0.0), ("fichera", 0.2)):
        for p in (1, 3):
            cholesky(hypersingular(geom, p, alpha)[2].matrix)


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_dilation(c):
    mesh = screen(3)
    dm = build_dof_map(mesh, 2)
    D = assemble_hypersingular(mesh, dm).matrix
    big = generate_screen(3, side=c)
    Dc = assemble_hypersingular(big, build_dof_map(big, 2)).matrix
    assert rel_max(Dc, c * D) < 1e-8


def test_congruent_elements_identical_blocks():
    mesh = generate_screen(3)
    shifted = SurfaceMesh(mesh.vertices + np.array([3.0, -1.0, 2.0]), mesh.triangles,
                          mesh.ref_edge, mesh.boundary, mesh.closed)
    for a, b in ((0, 0), (0, 1), (0, 5), (0, 17)):
        A = pair_blocks(mesh, 3, [a], [b])
        B = pair_blocks(shifted, 3, [a], [b])
        assert np.allclose(A, B, rtol=1e-12, atol=1e-14)


def _disjoint_sample(mesh, k, rng):
    t1, t2 = classify_pairs(mesh)[0]
    ratio = separation_ratio(mesh, t1, t2)
    picks = []
    for lo, hi in ((0, 1.2), (1.2, 2), (2, 4), (4, 100)):
        idx = np.flatnonzero((ratio >= lo) & (ratio < hi))
        if idx.size:
            picks += list(rng.choice(idx, size=min(k, idx.size), replace=False))
    return t1[picks], t2[picks]


@pytest.mark.parametrize("geom", ["screen", "fichera"])
def test_disjoint_blocks_against_brute_force(geom, rng):
    mesh = generate_screen(4) if geom == "screen" else generate_fichera()
    p = 3
    t1, t2 = _disjoint_sample(mesh, 4, rng)
    blocks = pair_blocks(mesh, p, t1, t2, case="disjoint")
    for a, b, blk in zip(t1, t2, blocks):
        ref = brute_force_block(mesh.vertices[mesh.triangles[a]], mesh.vertices[mesh.triangles[b]], p)
        assert rel_max(blk, ref) < 1e-8


@pytest.mark.parametrize("geom,p", [("screen:3", 1), ("screen:3", 3), ("fichera", 2)])
def test_quadrature_self_consistency(geom, p):
    alpha = 0.2 if geom == "fichera" else 0.0
    A = hypersingular(geom, p, alpha)[2].matrix
    B = hypersingular(geom, p, alpha, bump=2)[2].matrix
    assert rel_max(B, A) < 1e-7


@pytest.mark.parametrize("mode", ["uniform", "corner"])
def test_variational_nesting(mode):
    H = MeshHierarchy.from_mesh(generate_screen(3))
    marks = mark_uniform(H.finest) if mode == "uniform" else \
        mark_corner_weighted(H.finest, screen_features(), 0.25)
    H.refine(marks)
    coarse, fine = H.levels
    dc, df = build_dof_map(coarse, 1), build_dof_map(fine, 1)
    Dc = assemble_hypersingular(coarse, dc).matrix
    Df = assemble_hypersingular(fine, df).matrix
    P = H.prolongation(0).toarray()
    P = P[np.ix_(np.flatnonzero(df.vertex_dof >= 0), np.flatnonzero(dc.vertex_dof >= 0))]
    assert rel_max(P.T @ Df @ P, Dc) < 1e-8


def test_mass_p1_row_sums():
    mesh = generate_screen(4)
    dm = build_dof_map(mesh, 1)
    M = assemble_mass(mesh, dm).matrix
    patch_area = np.bincount(mesh.triangles.ravel(), np.repeat(mesh.areas, 3), mesh.n_vertices)
    interior = np.flatnonzero(dm.vertex_dof >= 0)
    # row sums over all hats (including boundary ones) give the hat integrals
    full = build_dof_map(SurfaceMesh(mesh.vertices, mesh.triangles, mesh.ref_edge,
                                     np.zeros(mesh.n_vertices, bool), True), 1)
    Mf = assemble_mass(full.mesh, full).matrix
    assert np.allclose(Mf.sum(axis=1), patch_area / 3, atol=1e-15)
    assert np.allclose(np.diag(M), patch_area[interior] / 6, atol=1e-15)


def test_mass_eigenvalues_scale_like_h2():
    # the smallest eigenvalue approaches its h^2 law from above, so use the finer pair
    hs, lo, hi = [], [], []
    for n in (8, 16):
        mesh = generate_screen(n)
        ev = np.linalg.eigvalsh(assemble_mass(mesh, build_dof_map(mesh, 2)).matrix)
        hs.append(1 / n)
        lo.append(ev[0])
        hi.append(ev[-1])
    for vals in (lo, hi):
        slope = np.polyfit(np.log(hs), np.log(vals), 1)[0]
        assert 1.8 <= slope <= 2.2


def test_h1_kernel_and_symmetry():
    mesh = generate_fichera()
    dm = build_dof_map(mesh, 3)
    S = assemble_h1(mesh, dm)
    one = np.zeros(dm.n_dofs)
    one[dm.vertex_dofs] = 1.0
    assert np.max(np.abs(S.matrix @ one)) < 1e-12
    assert S.asymmetry() < 1e-14


def test_rhs_vector(rng):
    mesh = generate_screen(3)
    dm = build_dof_map(mesh, 1)
    assert np.all(rhs_vector(mesh, dm, lambda x: np.zeros(len(x))) == 0)
    ones = rhs_vector(mesh, dm, lambda x: np.ones(len(x)))
    patch_area = np.bincount(mesh.triangles.ravel(), np.repeat(mesh.areas, 3), mesh.n_vertices)
    assert np.allclose(ones, patch_area[dm.vertex_dof >= 0] / 3)
    dm3 = build_dof_map(mesh, 3)
    f = lambda x: np.sin(x[:, 0]) + x[:, 1] ** 2
    g = lambda x: np.exp(x[:, 0] * x[:, 1])
    a, b = rng.standard_normal(2)
    lhs = rhs_vector(mesh, dm3, lambda x: a * f(x) + b * g(x))
    assert np.allclose(lhs, a * rhs_vector(mesh, dm3, f) + b * rhs_vector(mesh, dm3, g), atol=1e-14)


def test_patch_blocks():
    mesh, dm, D = hypersingular("screen:3", 3)
    for patch in vertex_patches(mesh):
        idx = patch_dofs(dm, patch)
        blk = assemble_patch_block(D, idx)
        assert np.array_equal(blk, D.matrix[np.ix_(idx, idx)])
        cholesky(blk)
    mesh1, dm1, D1 = hypersingular("screen:3", 1)
    patch = vertex_patches(mesh1)[0]
    idx = patch_dofs(dm1, patch)
    assert assemble_patch_block(D1, idx).item() == D1.matrix[idx[0], idx[0]]
    with pytest.raises(ValueError):
        assemble_patch_block(D, [])


def test_reference_patch_cache_and_spd():
    a = assemble_reference_patch(5, 2)
    b = assemble_reference_patch(5, 2)
    assert a is b
    cholesky(a.matrix)


def test_hexagon_patch_equals_reference_block():
    mesh, centre = hex_lattice_mesh()
    p = 3
    dm = build_dof_map(mesh, p)
    D = assemble_hypersingular(mesh, dm)
    patch = next(pt for pt in vertex_patches(mesh) if pt.center == centre)
    assert patch.valence == 6 and patch.diameter == pytest.approx(2.0)
    ref = assemble_reference_patch(6, p)
    idx, P = reference_transform(dm, patch, ref.dofmap)
    assert np.allclose(P @ P.T, np.eye(len(idx)), atol=1e-12)
    blk = assemble_patch_block(D, idx)
    assert rel_max(P @ ref.matrix @ P.T, blk) < 1e-8


def test_operator_dump_roundtrip(tmp_path):
    A = np.array([[2.0, 1.0 / 3], [1.0 / 3, 5.0]])
    op = SymmetricOperator(A, "mass")
    op.dump(tmp_path / "a.txt")
    back = SymmetricOperator.load(tmp_path / "a.txt", kind="mass")
    assert np.array_equal(back.matrix, A)
    with pytest.raises(ValueError):
        SymmetricOperator(np.zeros((2, 3)), "mass")


def test_mismatched_dofmap():
    with pytest.raises(ValueError):
        assemble_hypersingular(generate_screen(2), build_dof_map(generate_screen(2), 1))
