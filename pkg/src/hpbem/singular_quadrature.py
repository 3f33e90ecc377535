"""Regularized tensor Gauss rules for weakly singular double integrals over
pairs of reference triangles (identical, common edge, common vertex).

Points are returned in reference coordinates of the triangle
{(0,0), (1,0), (0,1)}. The rules assume the two triangles are listed in
frames where the shared vertex is vertex 0 (common vertex), or the shared
edge is (vertex 0, vertex 1) in both (common edge). The Duffy-type
substitutions remove the 1/|x - y| singularity, so smooth tensor Gauss rules
in the four remaining variables converge exponentially.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .polynomials import gauss_rule

CASES = ("identical", "edge", "vertex")


@dataclass(frozen=True)
class PairRule:
    case: str
    x: np.ndarray        # (Q, 2) points in the first triangle
    y: np.ndarray        # (Q, 2) points in the second triangle
    weights: np.ndarray  # (Q,), sum 1/4 = |K|^2 of the reference triangle


def _cube(q):
    g = gauss_rule(q).on_unit_interval()
    grids = np.meshgrid(g.nodes, g.nodes, g.nodes, g.nodes, indexing="ij")
    w = np.einsum("i,j,k,l->ijkl", g.weights, g.weights, g.weights, g.weights)
    return [a.ravel() for a in grids], w.ravel()


def _to_ref(a, b):
    """Points of {0 <= x2 <= x1 <= 1} mapped onto the reference triangle."""
    return np.stack([a - b, b], axis=1)


def _identical(q):
    (xi, e1, e2, e3), w = _cube(q)
    jac = w * xi ** 3 * e1 ** 2 * e2
    regions = [
        ((xi, xi * (1 - e1 + e1 * e2)), (xi * (1 - e1 * e2 * e3), xi * (1 - e1))),
        ((xi * (1 - e1 * e2 * e3), xi * (1 - e1)), (xi, xi * (1 - e1 + e1 * e2))),
        ((xi, xi * e1 * (1 - e2 + e2 * e3)), (xi * (1 - e1 * e2), xi * e1 * (1 - e2))),
        ((xi * (1 - e1 * e2), xi * e1 * (1 - e2)), (xi, xi * e1 * (1 - e2 + e2 * e3))),
        ((xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3)), (xi, xi * e1 * (1 - e2))),
        ((xi, xi * e1 * (1 - e2)), (xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3))),
    ]
    return [(a, b, jac) for a, b in regions]


def _edge(q):
    (xi, e1, e2, e3), w = _cube(q)
    jac = w * xi ** 3 * e1 ** 2
    return [
        ((xi, xi * e1 * e3), (xi * (1 - e1 * e2), xi * e1 * (1 - e2)), jac),
        ((xi, xi * e1), (xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3)), jac * e2),
        ((xi * (1 - e1 * e2), xi * e1 * (1 - e2)), (xi, xi * e1 * e2 * e3), jac * e2),
        ((xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3)), (xi, xi * e1), jac * e2),
        ((xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3)), (xi, xi * e1 * e2), jac * e2),
    ]


def _vertex(q):
    (xi, e1, e2, e3), w = _cube(q)
    jac = w * xi ** 3 * e2
    return [
        ((xi, xi * e1), (xi * e2, xi * e2 * e3), jac),
        ((xi * e2, xi * e2 * e3), (xi, xi * e1), jac),
    ]


@lru_cache(maxsize=32)
def pair_rule(case: str, q: int) -> PairRule:
    """Regularized rule with q Gauss points per direction in each subregion."""
    builders = {"identical": _identical, "edge": _edge, "vertex": _vertex}
    if case not in builders:
        raise ValueError(f"unknown singular case {case!r}")
    parts = builders[case](q)
    x = np.concatenate([_to_ref(*a) for a, _, _ in parts])
    y = np.concatenate([_to_ref(*b) for _, b, _ in parts])
    w = np.concatenate([j for _, _, j in parts])
    for arr in (x, y, w):
        arr.setflags(write=False)
    return PairRule(case, x, y, w)
