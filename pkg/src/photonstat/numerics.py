"""Shared numerics: damped least squares, grid convolution, reproducible RNG substreams.

Everything stochastic in this package draws randomness exclusively through
:func:`rng_substream`, so a (seed, stream_index) pair pins every simulated
byte.  The fitter is a damped Gauss-Newton (Levenberg-Marquardt style damping
schedule) over a finite-difference Jacobian; it is deterministic for fixed
inputs and never consumes randomness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence
import warnings

import numpy as np
from scipy.signal import fftconvolve

__all__ = [
    "FitError",
    "FitProblem",
    "FitResult",
    "least_squares",
    "finite_difference_jacobian",
    "convolve_profiles",
    "profile_fwhm",
    "SubStream",
    "rng_substream",
    "RNG_ALGORITHM",
]

RNG_ALGORITHM = "philox4x64"

_MASK64 = (1 << 64) - 1
_FD_REL_STEP = 1e-6
_FD_ABS_STEP = 1e-9
_DAMP_UP = 10.0
_DAMP_DOWN = 3.0
_DAMP_MAX = 1e12


class FitError(RuntimeError):
    """Raised when a least-squares problem cannot be solved (singular normal
    equations, degenerate data, or an explicitly fatal non-convergence)."""


@dataclass(frozen=True)
class FitProblem:
    """A weighted nonlinear least-squares problem.

    Parameters
    ----------
    model : callable
        ``model(params, x) -> y`` evaluated on the full abscissa array.
    x, y : ndarray
        Data.  ``x`` is passed through to the model untouched, so it can be
        any object the model understands.
    initial_params : sequence of float
        Starting point.  Clipped into bounds before the first iteration.
    bounds : sequence of (lo, hi), optional
        Box bounds per parameter, ``None`` for unbounded.
    weights : ndarray, optional
        Per-point weights w_i (interpreted as 1/variance).  ``None`` means
        unweighted.
    max_iterations : int
        Iteration cap.  Hitting it returns the last iterate with
        ``converged=False`` rather than raising.
    tolerance : float
        Relative parameter-change threshold declaring convergence.
    """

    model: Callable[[np.ndarray, object], np.ndarray]
    x: object
    y: np.ndarray
    initial_params: Sequence[float]
    bounds: Optional[Sequence[tuple[float, float]]] = None
    weights: Optional[np.ndarray] = None
    max_iterations: int = 200
    tolerance: float = 1e-8


@dataclass(frozen=True)
class FitResult:
    """Outcome of :func:`least_squares`.

    ``covariance`` is (J^T W J)^-1, scaled by the reduced chi-square for
    unweighted problems; it is symmetrized, and meaningful only when
    ``converged`` is true.  ``residual_norm`` is the weighted L2 norm of the
    final residual.
    """

    params: np.ndarray
    covariance: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    message: str = ""


def finite_difference_jacobian(
    fun: Callable[[np.ndarray], np.ndarray],
    params: np.ndarray,
    f0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Forward-difference Jacobian of ``fun`` at ``params``.

    Step per parameter is ``max(1e-6 * |p|, 1e-9)``.
    """
    p = np.asarray(params, dtype=float)
    if f0 is None:
        f0 = np.asarray(fun(p), dtype=float)
    jac = np.empty((f0.size, p.size))
    for i in range(p.size):
        step = max(_FD_REL_STEP * abs(p[i]), _FD_ABS_STEP)
        q = p.copy()
        q[i] += step
        jac[:, i] = (np.asarray(fun(q), dtype=float) - f0) / step
    return jac


def _problem_bounds(problem: FitProblem, n: int) -> tuple[np.ndarray, np.ndarray]:
    if problem.bounds is None:
        return np.full(n, -np.inf), np.full(n, np.inf)
    lo = np.array([b[0] if b[0] is not None else -np.inf for b in problem.bounds], float)
    hi = np.array([b[1] if b[1] is not None else np.inf for b in problem.bounds], float)
    if lo.size != n or np.any(lo > hi):
        raise ValueError("bounds must be one (lo, hi) pair per parameter with lo <= hi")
    return lo, hi


def least_squares(problem: FitProblem) -> FitResult:
    """Solve a nonlinear least-squares problem by damped Gauss-Newton.

    The normal equations are damped Levenberg-Marquardt style,
    ``(J^T W J + lam * diag(J^T W J)) delta = -J^T W r``; ``lam`` shrinks on
    accepted steps and grows on rejected ones.  Candidate steps are projected
    onto the box bounds.  Deterministic for fixed inputs.

    Raises
    ------
    FitError
        If the normal equations are singular, which includes the case of a
        parameter with no effect on the residual (zero Jacobian column).
    """
    y = np.asarray(problem.y, dtype=float)
    p = np.asarray(problem.initial_params, dtype=float).copy()
    if p.ndim != 1:
        raise ValueError("initial_params must be one-dimensional")
    if y.size < p.size:
        raise ValueError(
            f"need at least as many data points as parameters ({y.size} < {p.size})"
        )
    lo, hi = _problem_bounds(problem, p.size)
    p = np.clip(p, lo, hi)

    if problem.weights is None:
        sqw = np.ones_like(y)
    else:
        w = np.asarray(problem.weights, dtype=float)
        if w.shape != y.shape:
            raise ValueError("weights must match y in shape")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        sqw = np.sqrt(w)

    def residual(q: np.ndarray) -> np.ndarray:
        return sqw * (np.asarray(problem.model(q, problem.x), dtype=float) - y)

    r = residual(p)
    if not np.all(np.isfinite(r)):
        raise FitError("model is not finite at the initial parameters")
    cost = float(r @ r)
    lam = 1e-3
    converged = False
    message = "iteration cap reached"
    iterations = 0

    for iterations in range(1, problem.max_iterations + 1):
        jac = finite_difference_jacobian(residual, p, r)
        if not np.all(np.isfinite(jac)):
            raise FitError("Jacobian is not finite")
        a = jac.T @ jac
        g = jac.T @ r
        diag = np.diag(a).copy()
        dead = diag <= 0.0
        if np.any(dead):
            idx = int(np.nonzero(dead)[0][0])
            raise FitError(
                f"singular normal equations: parameter {idx} has no effect on the residual"
            )

        accepted = False
        while lam <= _DAMP_MAX:
            try:
                delta = np.linalg.solve(a + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError as exc:
                raise FitError(f"singular normal equations: {exc}") from exc
            q = np.clip(p + delta, lo, hi)
            rq = residual(q)
            cq = float(rq @ rq)
            if np.isfinite(cq) and cq <= cost:
                step = q - p
                improvement = cost - cq
                p, r, cost = q, rq, cq
                lam = max(lam / _DAMP_DOWN, 1e-14)
                accepted = True
                break
            lam *= _DAMP_UP
        if not accepted:
            message = "damping exhausted without improving the cost"
            break
        if np.all(np.abs(step) <= problem.tolerance * (np.abs(p) + problem.tolerance)):
            converged = True
            message = "converged"
            break
        if improvement <= 1e-12 * max(cost, 1e-300):
            converged = True
            message = "converged"
            break

    jac = finite_difference_jacobian(residual, p, r)
    a = jac.T @ jac
    try:
        cov = np.linalg.inv(a)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(a)
    if problem.weights is None:
        dof = max(y.size - p.size, 1)
        cov = cov * (cost / dof)
    cov = 0.5 * (cov + cov.T)
    return FitResult(
        params=p,
        covariance=cov,
        residual_norm=float(np.sqrt(cost)),
        iterations=iterations,
        converged=converged,
        message=message,
    )


def _grid_spacing(x: np.ndarray) -> float:
    dx = np.diff(x)
    if dx.size == 0 or dx[0] <= 0:
        raise ValueError("grid must be increasing with at least two points")
    if np.any(np.abs(dx - dx[0]) > 1e-9 * abs(dx[0])):
        raise ValueError("grid must be uniform")
    return float(dx[0])


def convolve_profiles(x: np.ndarray, f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Convolve two profiles sampled on a common uniform grid.

    The grid must contain t = 0 on a node; the result is returned on the same
    grid, normalized so that the area (trapezoid rule) of the output equals
    the product of the input areas.  A delta profile (a single nonzero node at
    t = 0 with value 1/dx) is therefore an exact identity element.

    Profiles are expected to decay below 1e-6 of their peak at the grid edges;
    if they do not, the truncated tails bias the result and a warning is
    emitted.
    """
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if not (x.shape == f.shape == g.shape) or x.ndim != 1:
        raise ValueError("x, f, g must be one-dimensional arrays of equal length")
    dx = _grid_spacing(x)
    i0 = int(round(-x[0] / dx))
    if i0 < 0 or i0 >= x.size or abs(x[0] + i0 * dx) > 1e-6 * dx:
        raise ValueError("grid must contain t = 0 on a node")
    for name, prof in (("f", f), ("g", g)):
        peak = np.max(np.abs(prof))
        if peak > 0 and max(abs(prof[0]), abs(prof[-1])) > 1e-6 * peak:
            warnings.warn(
                f"profile {name} does not decay below 1e-6 of its peak at the grid "
                "edges; the convolution truncates its tails",
                RuntimeWarning,
                stacklevel=2,
            )
    full = fftconvolve(f, g, mode="full") * dx
    n = x.size
    out = np.zeros(n)
    start = i0
    stop = min(start + n, full.size)
    if stop > start:
        out[: stop - start] = full[start:stop]
    return out


def profile_fwhm(x: np.ndarray, y: np.ndarray) -> float:
    """Full width at half maximum of a sampled single-peaked profile, by
    linear interpolation of the half-height crossings."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = int(np.argmax(y))
    half = y[k] / 2.0
    left = np.nonzero(y[: k + 1] < half)[0]
    right = np.nonzero(y[k:] < half)[0]
    if left.size == 0 or right.size == 0:
        raise ValueError("profile does not fall below half maximum on both sides")
    i = left[-1]
    xl = x[i] + (x[i + 1] - x[i]) * (half - y[i]) / (y[i + 1] - y[i])
    j = k + right[0]
    xr = x[j - 1] + (x[j] - x[j - 1]) * (half - y[j - 1]) / (y[j] - y[j - 1])
    return float(xr - xl)


class SubStream:
    """A deterministic random substream keyed by (seed, stream_index).

    Thin wrapper over a counter-based generator so that disjoint stream
    indices drawn from the same seed are statistically independent and
    reproducible regardless of scheduling.  Exposes the five draws the
    simulator needs.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int, stream_index: int):
        self.seed = int(seed)
        self.stream_index = int(stream_index)
        key = np.array([self.seed & _MASK64, self.stream_index & _MASK64], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def uniform(self, size=None):
        """U(0, 1)."""
        return self._gen.random(size)

    def exponential(self, mean: float = 1.0, size=None):
        return self._gen.exponential(mean, size)

    def normal(self, mean: float = 0.0, sigma: float = 1.0, size=None):
        return self._gen.normal(mean, sigma, size)

    def poisson(self, mean: float, size=None):
        return self._gen.poisson(mean, size)

    def bernoulli(self, p: float, size=None):
        return self._gen.random(size) < p


def rng_substream(seed: int, stream_index: int) -> SubStream:
    """Return the reproducible substream for (seed, stream_index).

    Identical arguments give bitwise-identical draw sequences; distinct
    stream indices under one seed give independent streams.  All randomness
    in this package flows through here.
    """
    return SubStream(seed, stream_index)
