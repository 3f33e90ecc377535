"""Preconditioned conjugate gradients and extremal eigenvalues of B^{-1} A."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, eigh, eigvalsh

DENSE_LIMIT = 4000


class IndefiniteError(ArithmeticError):
    pass


@dataclass
class SpectralReport:
    lambda_min: float
    lambda_max: float
    method: str
    iterations: int = 0

    @property
    def kappa(self) -> float:
        return self.lambda_max / self.lambda_min

    def __post_init__(self):
        if not (0 < self.lambda_min <= self.lambda_max * (1 + 1e-12)):
            raise ValueError(f"invalid spectrum [{self.lambda_min}, {self.lambda_max}]")


@dataclass
class PCGResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residuals: list = field(default_factory=list)


def _as_apply(B):
    if B is None:
        return lambda r: r.copy()
    if callable(B):
        return B
    M = np.asarray(B)
    return lambda r: M @ r


def _matvec(A):
    if callable(A):
        return A
    M = A.matrix if hasattr(A, "matrix") else np.asarray(A)
    return lambda x: M @ x


def pcg(A, B, b, tol: float = 1e-8, max_iter: int = 1000, x0=None) -> PCGResult:
    """Preconditioned CG; stops once sqrt(r^T B^{-1} r) <= tol times its initial value."""
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    Av = _matvec(A)
    Bv = _as_apply(B)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - Av(x)
    z = Bv(r)
    rz = float(r @ z)
    if rz < 0:
        raise IndefiniteError("preconditioner is not positive definite")
    norm0 = np.sqrt(rz)
    hist = [norm0]
    if norm0 == 0:
        return PCGResult(x, 0, True, hist)
    d = z.copy()
    for it in range(1, max_iter + 1):
        Ad = Av(d)
        dAd = float(d @ Ad)
        if dAd <= 0:
            raise IndefiniteError(f"d^T A d = {dAd:.3e} at iteration {it}")
        step = rz / dAd
        x += step * d
        r -= step * Ad
        z = Bv(r)
        rz_new = float(r @ z)
        hist.append(np.sqrt(max(rz_new, 0.0)))
        if hist[-1] <= tol * norm0:
            return PCGResult(x, it, True, hist)
        d = z + (rz_new / rz) * d
        rz = rz_new
    return PCGResult(x, max_iter, False, hist)


def _dense_spectrum(A, Binv):
    if Binv is None:
        ev = eigvalsh(A)
    else:
        L = cholesky(Binv, lower=True)
        S = L.T @ A @ L
        ev = eigvalsh(0.5 * (S + S.T))
    return float(ev[0]), float(ev[-1])


def lanczos_extremes(A, Bapply, n: int, max_iter: int = 200, seed: int = 0, tol: float = 1e-10):
    """Extremal Ritz values of B^{-1}A, symmetric in the A-inner product.

    Full reorthogonalization. Returns (lambda_min, lambda_max, iterations).
    """
    Av = _matvec(A)
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(n)
    Aq = Av(q)
    nrm = np.sqrt(q @ Aq)
    q /= nrm
    Aq /= nrm
    Q, AQ = [q], [Aq]
    alpha, beta = [], []
    m = min(max_iter, n)
    prev = None
    for k in range(m):
        w = Bapply(AQ[-1])
        a = float(w @ AQ[-1])
        alpha.append(a)
        Qm = np.array(Q)
        AQm = np.array(AQ)
        for _ in range(2):
            w = w - Qm.T @ (AQm @ w)
        Aw = Av(w)
        b = np.sqrt(max(float(w @ Aw), 0.0))
        T = np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1)
        ritz = eigh(T, eigvals_only=True)
        cur = (ritz[0], ritz[-1])
        if b <= 1e-13 * abs(a) or k == m - 1:
            return float(cur[0]), float(cur[1]), k + 1
        if prev is not None and abs(cur[0] - prev[0]) <= tol * abs(cur[0]) \
                and abs(cur[1] - prev[1]) <= tol * abs(cur[1]) and k > 10:
            return float(cur[0]), float(cur[1]), k + 1
        prev = cur
        beta.append(b)
        Q.append(w / b)
        AQ.append(Aw / b)
    return float(cur[0]), float(cur[1]), m


def spectral_bounds(A, B=None, method: str = "auto", dense_limit: int = DENSE_LIMIT,
                    max_iter: int = 200) -> SpectralReport:
    """Extremal eigenvalues of B^{-1} A.

    ``B`` may be None, an object with ``dense()``/``apply``, a callable, or a
    dense matrix of B^{-1}.
    """
    M = A.matrix if hasattr(A, "matrix") else np.asarray(A, dtype=float)
    n = M.shape[0]
    if method == "auto":
        method = "dense" if n <= dense_limit else "lanczos"
    if method == "dense":
        if B is None:
            Binv = None
        elif hasattr(B, "dense"):
            Binv = B.dense()
        elif callable(B):
            Binv = np.column_stack([B(e) for e in np.eye(n)])
            Binv = 0.5 * (Binv + Binv.T)
        else:
            Binv = np.asarray(B, dtype=float)
        lo, hi = _dense_spectrum(M, Binv)
        return SpectralReport(lo, hi, "dense", 0)
    if method == "lanczos":
        lo, hi, it = lanczos_extremes(M, _as_apply(B), n, max_iter)
        return SpectralReport(lo, hi, "lanczos", it)
    raise ValueError(f"unknown method {method!r}")
