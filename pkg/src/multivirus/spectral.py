"""Spectral abscissa, symmetric top eigenvalue, irreducibility, averaged abscissa.

Every matrix the stability conditions need is either Metzler (``B - D``,
``B - D - U``) or symmetric, so the dominant eigenpair is reached by power
iteration on a shifted matrix; no general eigensolver is involved.
"""
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .errors import PreconditionError

TOL = 1e-10
MAX_ITER = 10_000
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class SpectralReport:
    value: float
    dominant_vector: np.ndarray
    iterations: int
    converged: bool
    residual: float = 0.0
    irreducible: Optional[bool] = None


def _as_square(m):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise PreconditionError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise PreconditionError("matrix has non-finite entries")
    return m


def is_metzler(m) -> bool:
    m = np.asarray(m, dtype=float)
    off = m - np.diag(np.diag(m))
    return bool(np.all(off >= 0))


def _residual(a, lam, v):
    return float(np.abs(a @ v - lam * v).max() / np.abs(v).max())


def _polish(a, lam, v, steps=3):
    """Inverse iteration just above ``lam``; returns a sharper (lam, v) or the input."""
    n = a.shape[0]
    scale = max(1.0, abs(lam))
    shifted = a - (lam + 1e-10 * scale) * np.eye(n)
    best = (lam, v, _residual(a, lam, v))
    w = v
    for _ in range(steps):
        try:
            w = np.linalg.solve(shifted, w)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(w)):
            break
        w = w / w[np.argmax(np.abs(w))]
        est = float(w @ (a @ w) / (w @ w))
        res = _residual(a, est, w)
        if res < best[2]:
            best = (est, w, res)
    return best


def spectral_abscissa(m, tol: float = TOL, max_iter: int = MAX_ITER) -> SpectralReport:
    """``s(M)``, the largest real part of the spectrum of a Metzler matrix.

    ``M + cI`` with ``c = max(max_i -M_ii, 0) + 1`` is non-negative, so its
    Perron root ``rho`` is reached by power iteration from the all-ones vector
    and ``s(M) = rho - c``. For irreducible ``M`` the returned vector is
    strictly positive; for reducible ``M`` the value is still reported and
    ``irreducible`` is False.
    """
    m = _as_square(m)
    if not is_metzler(m):
        raise PreconditionError("matrix is not Metzler (negative off-diagonal entry)")
    n = m.shape[0]
    c = max(float(np.max(-np.diag(m))), 0.0) + 1.0
    a = m + c * np.eye(n)
    rho, v, iters, converged = kernels.power_iterate(a, np.ones(n), tol, max_iter)
    rho, v, res = _polish(a, float(rho), np.asarray(v, dtype=float))
    v = np.abs(v) / np.abs(v).max()
    converged = bool(converged or res <= RESIDUAL_TOL)
    return SpectralReport(
        value=rho - c,
        dominant_vector=v,
        iterations=int(iters),
        converged=converged,
        residual=res,
        irreducible=is_strongly_connected(m - np.diag(np.diag(m))),
    )


def _start_vector(m):
    n = m.shape[0]
    if is_metzler(m):
        return np.ones(n)
    # all-ones can be orthogonal to the top eigenvector of a signed matrix
    return 1.0 + np.mod(np.arange(1, n + 1) * 0.6180339887498949, 1.0)


def lambda_max_symmetric(m, tol: float = TOL, max_iter: int = MAX_ITER) -> SpectralReport:
    """Largest eigenvalue of a symmetric matrix.

    Power iteration on the positive definite ``M + cI`` with ``c = ||M||_inf + 1``,
    followed by Rayleigh-quotient iteration. Every Rayleigh quotient bounds the
    top eigenvalue from below, so the largest one seen is reported.
    """
    m = _as_square(m)
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > 1e-12 * scale:
        raise PreconditionError("matrix is not symmetric")
    m = 0.5 * (m + m.T)
    n = m.shape[0]
    c = float(np.abs(m).sum(axis=1).max()) + 1.0
    a = m + c * np.eye(n)
    mu, v, iters, converged = kernels.power_iterate(a, _start_vector(m), tol, max_iter)
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    best_val, best_vec = float(v @ m @ v), v
    rho = best_val
    eye = np.eye(n)
    for _ in range(6):
        try:
            w = np.linalg.solve(m - rho * eye, v)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(w)) or not np.any(w):
            break
        v = w / np.linalg.norm(w)
        rho = float(v @ m @ v)
        if rho >= best_val:
            best_val, best_vec = rho, v
        if _residual(m, rho, v) <= 1e-14 * scale:
            break
    res = _residual(m, best_val, best_vec)
    vec = best_vec / best_vec[np.argmax(np.abs(best_vec))]
    metzler = is_metzler(m)
    if metzler:
        vec = np.abs(vec)
    return SpectralReport(
        value=best_val,
        dominant_vector=vec,
        iterations=int(iters),
        converged=bool(converged or res <= RESIDUAL_TOL * scale),
        residual=res,
        irreducible=is_strongly_connected(m - np.diag(np.diag(m))) if metzler else None,
    )


def _reaches_all(adj):
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        j = queue.popleft()
        for i in np.flatnonzero(adj[:, j] & ~seen):
            seen[i] = True
            queue.append(i)
    return bool(seen.all())


def is_strongly_connected(b) -> bool:
    """Whether the digraph with an arc ``j -> i`` for every ``B[i, j] > 0`` is strongly connected.

    One sweep over the graph and one over its transpose, both from vertex 0.
    Equivalent to irreducibility of a non-negative ``B``. A single vertex counts
    as strongly connected.
    """
    b = np.asarray(b)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise PreconditionError(f"expected a square matrix, got shape {b.shape}")
    if b.shape[0] <= 1:
        return True
    adj = b > 0
    return _reaches_all(adj) and _reaches_all(adj.T)


@dataclass(frozen=True)
class AverageReport:
    """Running window averages of a sampled abscissa trace."""

    window: float
    end_times: np.ndarray
    averages: np.ndarray
    threshold: Optional[float] = None

    @property
    def max_average(self) -> float:
        return float(self.averages.max())

    @property
    def below_threshold(self) -> Optional[bool]:
        if self.threshold is None:
            return None
        return bool(np.all(self.averages <= self.threshold))


def _cumulative_trapezoid(times, values):
    out = np.zeros(len(times))
    out[1:] = np.cumsum(np.diff(times) * 0.5 * (values[1:] + values[:-1]))
    return out


def _integral_to(x, times, values, cum):
    i = int(np.searchsorted(times, x, side="right")) - 1
    i = min(max(i, 0), len(times) - 1)
    if i == len(times) - 1:
        return cum[-1]
    span = times[i + 1] - times[i]
    frac = (x - times[i]) / span
    s_x = values[i] + frac * (values[i + 1] - values[i])
    return cum[i] + (x - times[i]) * 0.5 * (values[i] + s_x)


def average_abscissa_monitor(times, values, window: float, threshold: Optional[float] = None):
    """Trapezoidal average of ``s(t)`` over every window ``[t_j - T, t_j]`` inside the samples.

    Repeated time stamps are allowed and encode jumps of a piecewise signal.
    ``threshold`` (negative) is the level the averages are compared against.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape or times.ndim != 1:
        raise PreconditionError("times and values must be 1-D arrays of equal length")
    if len(times) < 2:
        raise PreconditionError("need at least two samples")
    if np.any(np.diff(times) < 0):
        raise PreconditionError("samples must be sorted by time")
    if window <= 0:
        raise PreconditionError("window must be positive")
    if threshold is not None and threshold >= 0:
        raise PreconditionError("threshold must be negative")
    if times[-1] - times[0] < window * (1 - 1e-12):
        raise PreconditionError("window is longer than the sampled time span")
    cum = _cumulative_trapezoid(times, values)
    ends = np.unique(times[times >= times[0] + window * (1 - 1e-12)])
    avgs = np.array(
        [
            (_integral_to(t, times, values, cum)
             - _integral_to(max(t - window, times[0]), times, values, cum)) / window
            for t in ends
        ]
    )
    return AverageReport(window=float(window), end_times=ends, averages=avgs, threshold=threshold)
