"""Jacobi, Legendre and integrated Legendre polynomials, their scaled
(homogenized) versions, and Gauss-Legendre quadrature.

All families are evaluated by three-term recurrences. Array arguments are
broadcast; results carry the degree as leading axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_DOMAIN_TOL = 1e-12


@dataclass(frozen=True)
class JacobiParams:
    """Exponents of the Jacobi weight (1-x)^alpha (1+x)^beta."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > -1 and self.beta > -1):
            raise ValueError(
                f"Jacobi exponents must exceed -1, got ({self.alpha}, {self.beta})")


@dataclass(frozen=True)
class QuadratureRule1D:
    nodes: np.ndarray
    weights: np.ndarray

    def on_unit_interval(self) -> "QuadratureRule1D":
        """Same rule mapped affinely to [0, 1]."""
        return QuadratureRule1D((self.nodes + 1.0) / 2.0, self.weights / 2.0)


def _check_domain(x):
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0 + _DOMAIN_TOL):
        raise ValueError("argument outside [-1, 1]")
    return x


def _jacobi_coeffs(n, a, b):
    """Coefficients (A, B, C) with P_n = (A x + B) P_{n-1} - C P_{n-2}, n >= 2."""
    s = 2 * n + a + b
    den = 2.0 * n * (n + a + b) * (s - 2)
    A = (s - 1) * s * (s - 2) / den
    B = (s - 1) * (a * a - b * b) / den
    C = 2.0 * (n + a - 1) * (n + b - 1) * s / den
    return A, B, C


def jacobi_eval(params: JacobiParams, n_max: int, x) -> np.ndarray:
    """P_k^{(alpha,beta)}(x) for k = 0..n_max, normalized by P_k(1) = binom(k+alpha, k)."""
    x = _check_domain(x)
    return scaled_jacobi(params, n_max, x, np.ones_like(x))


def legendre_eval(n_max: int, x) -> np.ndarray:
    x = _check_domain(x)
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = x
    for n in range(1, n_max):
        out[n + 1] = ((2 * n + 1) * x * out[n] - n * out[n - 1]) / (n + 1)
    return out


def integrated_legendre_eval(n_max: int, x) -> np.ndarray:
    """L_n(x) = int_{-1}^x l_{n-1}, rows n = 0..n_max.

    Row 0 is padding (zeros); it is not part of the family.
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    x = _check_domain(x)
    return scaled_integrated_legendre(n_max, x, np.ones_like(x))


def scaled_jacobi(params: JacobiParams, n_max: int, s, t, with_grad: bool = False):
    """t^n P_n(s/t) by the homogenized recurrence.

    With ``with_grad`` also returns the partial derivatives with respect to s
    and t, each with the same shape as the values.
    """
    a, b = params.alpha, params.beta
    s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
    shape = (n_max + 1,) + s.shape
    P = np.empty(shape)
    P[0] = 1.0
    if with_grad:
        Ps = np.zeros(shape)
        Pt = np.zeros(shape)
    if n_max >= 1:
        c1 = (a + b + 2) / 2.0
        c0 = (a + 1) - c1
        P[1] = c1 * s + c0 * t
        if with_grad:
            Ps[1] = c1
            Pt[1] = c0
    for n in range(2, n_max + 1):
        A, B, C = _jacobi_coeffs(n, a, b)
        lin = A * s + B * t
        P[n] = lin * P[n - 1] - C * t * t * P[n - 2]
        if with_grad:
            Ps[n] = A * P[n - 1] + lin * Ps[n - 1] - C * t * t * Ps[n - 2]
            Pt[n] = (B * P[n - 1] + lin * Pt[n - 1]
                     - 2.0 * C * t * P[n - 2] - C * t * t * Pt[n - 2])
    if with_grad:
        return P, Ps, Pt
    return P


def scaled_integrated_legendre(n_max: int, s, t, with_grad: bool = False):
    """t^n L_n(s/t) for n = 1..n_max (row 0 is zero padding)."""
    s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
    shape = (n_max + 1,) + s.shape
    L = np.zeros(shape)
    Ls = np.zeros(shape)
    Lt = np.zeros(shape)
    if n_max >= 1:
        L[1] = s + t
        Ls[1] = 1.0
        Lt[1] = 1.0
    if n_max >= 2:
        L[2] = 0.5 * (s * s - t * t)
        Ls[2] = s
        Lt[2] = -t
    # (n+1) L_{n+1} = (2n-1) s L_n - (n-2) t^2 L_{n-1}
    for n in range(2, n_max):
        c = 1.0 / (n + 1)
        L[n + 1] = c * ((2 * n - 1) * s * L[n] - (n - 2) * t * t * L[n - 1])
        if with_grad:
            Ls[n + 1] = c * ((2 * n - 1) * (L[n] + s * Ls[n]) - (n - 2) * t * t * Ls[n - 1])
            Lt[n + 1] = c * ((2 * n - 1) * s * Lt[n]
                             - (n - 2) * (2.0 * t * L[n - 1] + t * t * Lt[n - 1]))
    if with_grad:
        return L, Ls, Lt
    return L


def scaled_eval(kind, n: int, s: float, t: float) -> float:
    """Single scaled polynomial value.

    ``kind`` is either a :class:`JacobiParams` or the string
    ``"integrated_legendre"``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if isinstance(kind, JacobiParams):
        return float(scaled_jacobi(kind, n, s, t)[n])
    if kind == "integrated_legendre":
        if n < 1:
            raise ValueError("integrated Legendre index starts at 1")
        return float(scaled_integrated_legendre(n, s, t)[n])
    raise ValueError(f"unknown polynomial kind {kind!r}")


@lru_cache(maxsize=None)
def _gauss_cached(n: int):
    k = np.arange(1, n + 1)
    x = np.cos(np.pi * (k - 0.25) / (n + 0.5))
    for _ in range(100):
        P = legendre_eval(n, np.clip(x, -1, 1))
        dP = n * (x * P[n] - P[n - 1]) / (x * x - 1.0)
        dx = P[n] / dP
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    P = legendre_eval(n, x)
    dP = n * (x * P[n] - P[n - 1]) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dP * dP)
    order = np.argsort(x)
    x, w = x[order], w[order]
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_rule(n: int) -> QuadratureRule1D:
    """n-point Gauss-Legendre rule on [-1, 1], exact up to degree 2n-1."""
    if n < 1:
        raise ValueError("need at least one node")
    if n == 1:
        return QuadratureRule1D(np.array([0.0]), np.array([2.0]))
    x, w = _gauss_cached(n)
    return QuadratureRule1D(x, w)
