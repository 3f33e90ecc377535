"""Condition-number experiments: reference element, p- and h-sweeps,
preconditioner memory, and coefficient-norm equivalences."""
from __future__ import annotations

import csv
import io
import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigvalsh

from .assembly import (QuadratureOrders, assemble_h1, assemble_hypersingular, assemble_mass,
                       assemble_reference_patch, rhs_vector)
from .mesh import (MeshHierarchy, fichera_features, generate_fichera, generate_screen,
                   mark_corner_weighted, mark_uniform, read_marks, screen_features,
                   vertex_patches)
from .precond import (FLOAT_BYTES, INDEX_BYTES, build_b2, build_b3, build_coarse_plus_patch,
                      build_diagonal, reference_transform)
from .ref_element import conditioning_study
from .solvers import pcg, spectral_bounds
from .space import build_dof_map, expected_dimension, patch_dofs

log = logging.getLogger(__name__)

PRECONDITIONERS = ("none", "diag", "B", "B2", "B3")
MAX_DOFS = 6000
MAX_P = 6
SWEEP_COLUMNS = ("geometry", "level", "triangles", "p", "ndof", "preconditioner",
                 "lambda_min", "lambda_max", "kappa", "pcg_iterations")


class InvariantViolation(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    geometry: str = "screen:3"
    p_values: tuple = (1, 2, 3, 4, 5)
    refinement: str = "uniform"          # uniform | corner:THETA | file:PATH
    levels: int = 0
    alpha: float | None = None           # None: 0 on screens, 0.2 on closed surfaces
    preconditioners: tuple = PRECONDITIONERS
    quadrature: QuadratureOrders = field(default_factory=QuadratureOrders)
    dense_limit: int = 4000
    output_dir: str = "results"
    seed: int = 1729
    pcg_tol: float = 1e-8
    pcg_max_iter: int = 2000

    def __post_init__(self):
        self.p_values = tuple(int(p) for p in self.p_values)
        self.preconditioners = tuple(self.preconditioners)
        if self.levels < 0:
            raise ValueError("levels must be nonnegative")
        if any(p < 1 or p > MAX_P for p in self.p_values):
            raise ValueError(f"p must lie in [1, {MAX_P}]")
        unknown = set(self.preconditioners) - set(PRECONDITIONERS)
        if unknown:
            raise ValueError(f"unknown preconditioners {sorted(unknown)}")
        kind, _ = parse_geometry(self.geometry)
        if self.alpha is None:
            self.alpha = 0.0 if kind == "screen" else 0.2
        if self.alpha == 0 and kind != "screen":
            raise ValueError("alpha = 0 is only allowed on the screen")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        parse_refinement(self.refinement)


def parse_geometry(spec: str):
    if spec == "fichera":
        return "fichera", None
    if spec.startswith("screen"):
        n = int(spec.split(":", 1)[1]) if ":" in spec else 3
        if n < 1:
            raise ValueError("screen size must be positive")
        return "screen", n
    raise ValueError(f"unknown geometry {spec!r}")


def parse_refinement(spec: str):
    if spec == "uniform":
        return "uniform", None
    if spec.startswith("corner"):
        theta = float(spec.split(":", 1)[1]) if ":" in spec else 0.25
        if not 0 < theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        return "corner", theta
    if spec.startswith("file:"):
        return "file", spec[5:]
    raise ValueError(f"unknown refinement mode {spec!r}")


def make_geometry(spec: str):
    kind, n = parse_geometry(spec)
    if kind == "screen":
        return generate_screen(n), screen_features()
    return generate_fichera(), fichera_features()


def build_hierarchy(config: ExperimentConfig, levels: int | None = None) -> MeshHierarchy:
    mesh, features = make_geometry(config.geometry)
    H = MeshHierarchy.from_mesh(mesh)
    mode, arg = parse_refinement(config.refinement)
    for level in range(config.levels if levels is None else levels):
        if mode == "uniform":
            marked = mark_uniform(H.finest)
        elif mode == "corner":
            marked = mark_corner_weighted(H.finest, features, arg)
        else:
            marked = read_marks(arg.replace("{level}", str(level + 1)))
        H.refine(marked)
    return H


def truncate(H: MeshHierarchy, level: int) -> MeshHierarchy:
    return MeshHierarchy(H.levels[:level + 1], H.parents[:level + 1], H.vtilde[:level + 1],
                         H.new_vertex_parents[:level + 1])


# ---------------------------------------------------------------- CSV helpers

def write_csv(path, rows, columns, comments=()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k, "")) for k in columns})
    text = buf.getvalue()
    if path is not None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def loglog_slope(x, y) -> float:
    x = np.log(np.asarray(x, float))
    y = np.log(np.asarray(y, float))
    return float(np.polyfit(x, y, 1)[0])


def check_spectral_rows(rows) -> None:
    for r in rows:
        lo, hi, k = r["lambda_min"], r["lambda_max"], r["kappa"]
        if not (np.isfinite(lo) and np.isfinite(hi) and 0 < lo <= hi * (1 + 1e-12)):
            raise InvariantViolation(f"invalid spectrum in row {r}")
        if abs(k - hi / lo) > 1e-12 * k:
            raise InvariantViolation(f"kappa != lambda_max / lambda_min in row {r}")


# ---------------------------------------------------------------- reference element

def run_refel_study(p_values, out=None, seed: int = 0):
    rows = conditioning_study(p_values)
    slopes = {}
    ps = [p for p in p_values if p >= 4]
    for block in sorted({r["block"] for r in rows}):
        sel = [r for r in rows if r["block"] == block and r["p"] in ps]
        if len(sel) >= 2:
            slopes[block] = {
                "kappa": loglog_slope([r["p"] for r in sel], [r["kappa"] for r in sel]),
                "lambda_min": loglog_slope([r["p"] for r in sel], [r["lambda_min"] for r in sel]),
                "lambda_max": loglog_slope([r["p"] for r in sel], [r["lambda_max"] for r in sel]),
            }
    for r in rows:
        if r["block"].endswith("interior") and r["block"].startswith("M:") \
                and abs(r["kappa"] - 1) > 1e-10:
            raise InvariantViolation(f"interior mass block not the identity at p={r['p']}")
    check_spectral_rows(rows)
    comments = [f"seed={seed}", "reference triangle conditioning"]
    comments += [f"slope {b} p>=4: kappa {s['kappa']:.4f} lambda_min {s['lambda_min']:.4f} "
                 f"lambda_max {s['lambda_max']:.4f}" for b, s in slopes.items()]
    text = write_csv(out, rows, ("p", "block", "lambda_min", "lambda_max", "kappa"), comments)
    return rows, slopes, text


# ---------------------------------------------------------------- sweeps

def _preconditioner(name, D, hierarchy, dm, config):
    if name == "none":
        return None
    if name == "diag":
        return build_diagonal(D)
    if name == "B":
        return build_coarse_plus_patch(D, dm.mesh, dm)
    if name == "B2":
        return build_b2(D, hierarchy, dm)
    if name == "B3":
        return build_b3(D, hierarchy, dm, config.quadrature)
    raise ValueError(name)


def evaluate_cell(hierarchy: MeshHierarchy, p: int, config: ExperimentConfig, level=None):
    """Spectral data and PCG counts for every requested preconditioner on the finest mesh."""
    mesh = hierarchy.finest
    dm = build_dof_map(mesh, p)
    if dm.n_dofs > MAX_DOFS:
        raise ValueError(f"{dm.n_dofs} dofs exceed the desk-scale cap {MAX_DOFS}")
    if dm.n_dofs == 0:
        raise ValueError("discrete space is empty on this mesh")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        D = assemble_hypersingular(mesh, dm, config.alpha, config.quadrature)
    b = rhs_vector(mesh, dm, lambda x: x[:, 0])
    rows = []
    for name in config.preconditioners:
        try:
            B = _preconditioner(name, D, hierarchy, dm, config)
        except Exception as exc:
            raise RuntimeError(f"{name} on {config.geometry} level {level} p={p}: {exc}") from exc
        rep = spectral_bounds(D, B, dense_limit=config.dense_limit)
        sol = pcg(D, B, b, config.pcg_tol, config.pcg_max_iter)
        rows.append({"geometry": config.geometry, "level": hierarchy.n_levels - 1 if level is None else level,
                     "triangles": mesh.n_triangles, "p": p, "ndof": dm.n_dofs,
                     "preconditioner": name, "lambda_min": rep.lambda_min,
                     "lambda_max": rep.lambda_max, "kappa": rep.kappa,
                     "pcg_iterations": sol.iterations if sol.converged else -1})
        log.info("%s level %s p=%d N=%d %s: kappa %.4g, %d its", config.geometry,
                 rows[-1]["level"], p, dm.n_dofs, name, rep.kappa, sol.iterations)
    return rows


def _comments(config, what):
    return [f"seed={config.seed}", what,
            f"geometry={config.geometry} refinement={config.refinement} alpha={config.alpha}",
            f"quadrature singular=max(2p+4,10)+{config.quadrature.bump} far=p+2+{config.quadrature.bump}"]


def run_p_sweep(config: ExperimentConfig, out=None):
    H = build_hierarchy(config)
    rows = []
    for p in config.p_values:
        rows += evaluate_cell(H, p, config)
    check_spectral_rows(rows)
    return rows, write_csv(out, rows, SWEEP_COLUMNS, _comments(config, "p sweep"))


def run_h_sweep(config: ExperimentConfig, out=None):
    H = build_hierarchy(config)
    rows = []
    for level in range(H.n_levels):
        sub = truncate(H, level)
        for p in config.p_values:
            rows += evaluate_cell(sub, p, config, level)
    check_spectral_rows(rows)
    counts = [r["triangles"] for r in rows if r["preconditioner"] == rows[0]["preconditioner"]
              and r["p"] == rows[0]["p"]]
    if any(b <= a for a, b in zip(counts, counts[1:])):
        raise InvariantViolation("element counts do not grow with the level")
    return rows, write_csv(out, rows, SWEEP_COLUMNS, _comments(config, "h sweep"))


# ---------------------------------------------------------------- memory

def memory_statistics(mesh, p: int, orders: QuadratureOrders | None = None) -> dict:
    """Stored bytes of the patch solvers of B (exact blocks) and B3 (reference blocks).

    Mirrors the accounting of ``AdditiveSchwarzPreconditioner.stats`` without
    assembling the Galerkin matrix; lowest-order components are excluded.
    """
    dm = build_dof_map(mesh, p)
    patches = vertex_patches(mesh)
    exact = 0
    book = 0
    shared = {}
    for patch in patches:
        k = len(patch_dofs(dm, patch))
        exact += k * k * FLOAT_BYTES + k * INDEX_BYTES
        if patch.valence not in shared:
            shared[patch.valence] = assemble_reference_patch(patch.valence, p, orders)
        ref = shared[patch.valence]
        idx, P = reference_transform(dm, patch, ref.dofmap)
        Ps = sp.csr_matrix(P)
        book += (len(idx) * INDEX_BYTES + Ps.data.nbytes + Ps.indices.nbytes
                 + Ps.indptr.nbytes + FLOAT_BYTES)
    ref_bytes = sum(r.matrix.shape[0] ** 2 * FLOAT_BYTES for r in shared.values())
    return {"ndof": dm.n_dofs, "triangles": mesh.n_triangles,
            "B_blocks": len(patches), "B_bytes": exact,
            "B3_blocks": len(shared), "B3_bytes": ref_bytes + book,
            "B_bytes_per_dof": exact / dm.n_dofs, "B3_bytes_per_dof": (ref_bytes + book) / dm.n_dofs}


MEMORY_COLUMNS = ("p", "level", "triangles", "ndof", "B_blocks", "B3_blocks",
                  "B_bytes_per_dof", "B3_bytes_per_dof", "ratio")


def run_memory_table(config: ExperimentConfig, out=None):
    H = build_hierarchy(config)
    rows = []
    for p in config.p_values:
        for level, mesh in enumerate(H.levels):
            st = memory_statistics(mesh, p, config.quadrature)
            st.update(p=p, level=level, ratio=st["B3_bytes"] / st["B_bytes"])
            rows.append(st)
    return rows, write_csv(out, rows, MEMORY_COLUMNS, _comments(config, "patch solver memory"))


# ---------------------------------------------------------------- norm equivalences

NORM_COLUMNS = ("n", "h", "p", "ndof", "matrix", "inv_lambda_max", "inv_lambda_min")
# exponents (of 1/h, of p) of the lower and upper bounds for 1/lambda
BRACKETS = {
    "L2": {"h": (2.0, 2.0), "p": (0.0, 6.0)},
    "H1": {"h": (0.0, 2.0), "p": (-4.0, 2.0)},
    "H1/2": {"h": (1.0, 2.0), "p": (-2.0, 4.0)},
}


def _extremes(A):
    ev = eigvalsh(A)
    return float(ev[0]), float(ev[-1])


def norm_matrices(mesh, p, config: ExperimentConfig, matrices=tuple(BRACKETS)):
    dm = build_dof_map(mesh, p)
    out = {}
    if "L2" in matrices or "H1" in matrices:
        M = assemble_mass(mesh, dm).matrix
        if "L2" in matrices:
            out["L2"] = M
        if "H1" in matrices:
            out["H1"] = M + assemble_h1(mesh, dm).matrix
    if "H1/2" in matrices:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            out["H1/2"] = assemble_hypersingular(mesh, dm, config.alpha, config.quadrature).matrix
    return dm, out


def run_norm_equivalence_study(config: ExperimentConfig, out=None, sizes=None,
                               matrices=tuple(BRACKETS), dof_cap: int = 2500,
                               p_fit_min: int = 3):
    """Extremal eigenvalues of mass, H^1 and hypersingular matrices on uniform screens.

    ``sizes`` lists the screen subdivisions; by default n/2 and n for
    ``geometry = screen:n``. Cells above ``dof_cap`` unknowns are skipped.
    The exact eigenvalue extremes bound every Rayleigh quotient, so random
    coefficient vectors are not needed; the seed is still recorded.
    """
    kind, n = parse_geometry(config.geometry)
    if kind != "screen":
        raise ValueError("norm study runs on screens")
    unknown = set(matrices) - set(BRACKETS)
    if unknown:
        raise ValueError(f"unknown matrices {sorted(unknown)}")
    sizes = sizes or sorted({m for m in (n // 2, n) if m >= 2})
    rows = []
    for m in sizes:
        mesh = generate_screen(m)
        for p in config.p_values:
            if expected_dimension(mesh, p) > dof_cap:
                log.info("norm study: skipping n=%d p=%d above the dof cap", m, p)
                continue
            dm, mats = norm_matrices(mesh, p, config, matrices)
            for name, A in mats.items():
                lo, hi = _extremes(A)
                rows.append({"n": m, "h": 1.0 / m, "p": p, "ndof": dm.n_dofs, "matrix": name,
                             "inv_lambda_max": 1.0 / hi, "inv_lambda_min": 1.0 / lo})
    fits = fit_norm_exponents(rows, p_fit_min)
    comments = _comments(config, "coefficient norm equivalence") + [
        f"h exponents over n in {sizes}; p exponents over p >= {p_fit_min}"] + [
        f"exponent {k}: {v:.4f}" for k, v in sorted(fits.items())]
    return rows, fits, write_csv(out, rows, NORM_COLUMNS, comments)


def fit_norm_exponents(rows, p_fit_min: int = 3) -> dict:
    """Growth exponents of 1/lambda in 1/h (for each p) and in p.

    The p exponents use degrees >= ``p_fit_min`` on the mesh that has the
    most of them; lower degrees are dominated by constants.
    """
    fits = {}
    for name in sorted({r["matrix"] for r in rows}):
        sel = [r for r in rows if r["matrix"] == name]
        for q in ("inv_lambda_max", "inv_lambda_min"):
            for p in sorted({r["p"] for r in sel}):
                pts = sorted((r["n"], r[q]) for r in sel if r["p"] == p)
                if len(pts) >= 2:
                    fits[f"{name}:{q}:h:p={p}"] = loglog_slope(*zip(*pts))
            by_n = {}
            for r in sel:
                if r["p"] >= p_fit_min:
                    by_n.setdefault(r["n"], []).append((r["p"], r[q]))
            if by_n:
                n_best = max(by_n, key=lambda m: (len(by_n[m]), m))
                pts = sorted(by_n[n_best])
                if len(pts) >= 2:
                    fits[f"{name}:{q}:p"] = loglog_slope(*zip(*pts))
    return fits


def bracket_violations(fits: dict, slack: float = 0.1) -> list:
    """Exponents outside the proven brackets, widened by ``slack`` relative (at least 0.1 absolute)."""
    bad = []
    for key, val in fits.items():
        name, _, var = key.split(":")[:3]
        lo, hi = BRACKETS[name][var]
        if not (lo - slack * max(abs(lo), 1.0) <= val <= hi + slack * max(abs(hi), 1.0)):
            bad.append((key, val, (lo, hi)))
    return bad
