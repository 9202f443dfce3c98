"""Maximum-likelihood fitting from a single data stream.

The optimizer is a BFGS ascent with an Armijo backtracking line search.
Gradients come from the model when it implements
``log_likelihood_grad_batch`` and from central differences otherwise.
Covariance is the inverse observed information, scaled by the number of
transitions so that ``covariance / n`` is the sampling variance.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import EstimationError, History, InsufficientDataError, log_likelihood, log_likelihood_grad

log = logging.getLogger(__name__)

GRAD_TOL = 1e-6
POLISH_STEPS = 3
COND_LIMIT = 1e12


@dataclass
class FitResult:
    theta_hat: np.ndarray
    covariance: np.ndarray
    converged: bool
    loglik: float
    iterations: int
    grad_norm: float = math.nan
    pinv_used: bool = False
    trace: list[tuple[int, float, float, float]] = field(default_factory=list, repr=False)

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "grad_norm", "step"])
            for row in self.trace:
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


def fd_step(theta: np.ndarray) -> np.ndarray:
    return np.maximum(1e-5, 1e-5 * np.abs(theta))


def numerical_gradient(f, x: np.ndarray) -> np.ndarray:
    h = fd_step(x)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        g[j] = (f(x + e) - f(x - e)) / (2.0 * h[j])
    return g


def numerical_hessian(f, x: np.ndarray) -> np.ndarray:
    """Central-difference Hessian of a scalar function, symmetrized."""
    q = x.size
    h = fd_step(x)
    f0 = f(x)
    H = np.empty((q, q))
    for i in range(q):
        ei = np.zeros(q)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i + 1, q):
            ej = np.zeros(q)
            ej[j] = h[j]
            fpp = f(x + ei + ej)
            fpm = f(x + ei - ej)
            fmp = f(x - ei + ej)
            fmm = f(x - ei - ej)
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])
    return 0.5 * (H + H.T)


def hessian_from_gradient(grad, x: np.ndarray) -> np.ndarray:
    q = x.size
    h = fd_step(x)
    H = np.empty((q, q))
    for j in range(q):
        e = np.zeros(q)
        e[j] = h[j]
        H[:, j] = (grad(x + e) - grad(x - e)) / (2.0 * h[j])
    return 0.5 * (H + H.T)


def _objective(history, model, ridge, next_state, center=None):
    c = 0.0 if center is None else np.asarray(center, dtype=float)

    def f(theta):
        d = theta - c
        return log_likelihood(history, model, theta, next_state) - ridge * float(d @ d)

    grad_fn = None
    if getattr(model, "log_likelihood_grad_batch", None) is not None:
        def grad_fn(theta):
            return log_likelihood_grad(history, model, theta, next_state) - 2.0 * ridge * (theta - c)
    return f, grad_fn


def invert_information(info: np.ndarray) -> tuple[np.ndarray, bool]:
    """Inverse of a symmetric information matrix, pseudo-inverse if ill-conditioned.

    Returns ``(inverse, pinv_used)``.
    """
    info = 0.5 * (info + info.T)
    w, V = np.linalg.eigh(info)
    top = w.max() if w.size else 0.0
    if not np.isfinite(w).all() or top <= 0.0:
        raise EstimationError("observed information has no positive eigenvalue")
    cond = top / w.min() if w.min() > 0 else math.inf
    if cond <= COND_LIMIT:
        return (V / w) @ V.T, False
    keep = w > top / COND_LIMIT
    inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    return (V * inv_w) @ V.T, True


def observed_information(history: History, model, theta_hat: np.ndarray, next_state=None,
                         sample_count: int | None = None, ridge: float = 0.0, center=None) -> np.ndarray:
    """Covariance estimate ``n * (-Hessian)^-1`` at ``theta_hat``.

    ``n`` defaults to the number of transitions entering the likelihood.
    With ``ridge > 0`` the Hessian is that of the penalized objective.
    """
    cov, _ = _covariance(history, model, np.asarray(theta_hat, dtype=float), next_state, sample_count,
                         ridge, center)
    return cov


def _covariance(history, model, theta, next_state, sample_count, ridge=0.0, center=None):
    n = len(history.transitions(next_state)) if sample_count is None else int(sample_count)
    if n < 1:
        raise InsufficientDataError("no transitions to build the observed information from")
    f, grad_fn = _objective(history, model, ridge, next_state, center)
    if grad_fn is not None:
        H = hessian_from_gradient(grad_fn, theta)
    else:
        H = numerical_hessian(f, theta)
    inv, pinv_used = invert_information(-H)
    cov = n * inv
    return 0.5 * (cov + cov.T), pinv_used


def fit_mle(history: History, model, init: np.ndarray, ridge: float = 1e-6, *, next_state=None,
            max_iter: int = 500, inv_hessian0: np.ndarray | None = None,
            with_covariance: bool = True, center=None) -> FitResult:
    """Maximize ``log_likelihood - ridge * |theta - center|^2`` from ``init``.

    ``center`` defaults to the origin. A nonzero center turns the ridge
    into a Gaussian prior around a historical estimate. The covariance uses
    the Hessian of the same penalized objective.

    Stops when the gradient norm is at most ``1e-6 * (1 + |objective|)``.
    Hitting ``max_iter`` returns the best iterate with ``converged=False``.
    """
    if len(history.transitions(next_state)) < 1:
        raise InsufficientDataError("fit_mle needs at least two observed states")
    x = np.array(init, dtype=float)
    f, grad_fn = _objective(history, model, ridge, next_state, center)
    if grad_fn is None:
        grad_fn = lambda th: numerical_gradient(f, th)  # noqa: E731

    fx = f(x)
    if not math.isfinite(fx):
        raise EstimationError(f"objective is not finite at the initial value ({fx})")
    g = grad_fn(x)
    q = x.size
    scaled = inv_hessian0 is not None
    # without a curvature guess, keep the first step at unit length
    Hinv = np.eye(q) / max(1.0, float(np.linalg.norm(g))) if not scaled else np.array(inv_hessian0, dtype=float)
    trace = [(0, fx, float(np.linalg.norm(g)), 0.0)]
    converged = False
    polish = POLISH_STEPS
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= GRAD_TOL * (1.0 + abs(fx)):
            converged = True
            if polish == 0 or gnorm == 0.0:
                it -= 1
                break
            # the tolerance is relative to |objective|, which includes constants;
            # a few more superlinear steps cost little and sharpen the estimate
            polish -= 1
        else:
            converged = False
        p = Hinv @ g
        slope = float(g @ p)
        if slope <= 0.0 or not np.isfinite(slope):
            Hinv = np.eye(q) / max(1.0, gnorm)
            p = Hinv @ g
            slope = float(g @ p)
        alpha = 1.0
        accepted = False
        for _ in range(60):
            x_new = x + alpha * p
            f_new = f(x_new)
            if math.isfinite(f_new) and f_new >= fx + 1e-4 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # no ascent possible at working precision
            converged = gnorm <= GRAD_TOL * (1.0 + abs(fx))
            break
        g_new = grad_fn(x_new)
        s = x_new - x
        y = g - g_new  # gradient of the minimized objective (-f)
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            if not scaled:
                Hinv = np.eye(q) * (sy / float(y @ y))
                scaled = True
            rho = 1.0 / sy
            I = np.eye(q)
            Hinv = (I - rho * np.outer(s, y)) @ Hinv @ (I - rho * np.outer(y, s)) + rho * np.outer(s, s)
        x, fx, g = x_new, f_new, g_new
        trace.append((it, fx, float(np.linalg.norm(g)), alpha))
    else:
        log.debug("fit_mle hit the iteration cap (%d)", max_iter)

    gnorm = float(np.linalg.norm(g))
    if with_covariance:
        cov, pinv_used = _covariance(history, model, x, next_state, None, ridge, center)
    else:
        cov, pinv_used = np.full((q, q), np.nan), False
    return FitResult(theta_hat=x, covariance=cov, converged=converged, loglik=fx,
                     iterations=it, grad_norm=gnorm, pinv_used=pinv_used, trace=trace)


class MLEstimator:
    """Stateful wrapper used by the engine: warm-starts from the previous fit."""

    def __init__(self, ridge: float = 1e-6, max_iter: int = 500, center=None):
        self.ridge = ridge
        self.max_iter = max_iter
        self.center = None if center is None else np.asarray(center, dtype=float)
        self.last: FitResult | None = None

    def fit(self, history: History, model, init: np.ndarray, next_state=None) -> FitResult:
        start = init if self.last is None else self.last.theta_hat
        Hinv0 = None
        if self.last is not None and np.isfinite(self.last.covariance).all():
            n_prev = max(1, len(history.transitions(next_state)) - 1)
            Hinv0 = self.last.covariance / n_prev
            if not np.all(np.linalg.eigvalsh(0.5 * (Hinv0 + Hinv0.T)) > 0):
                Hinv0 = None
        try:
            res = fit_mle(history, model, start, self.ridge, next_state=next_state,
                          max_iter=self.max_iter, inv_hessian0=Hinv0, center=self.center)
        except EstimationError:
            if self.last is None:
                raise
            res = fit_mle(history, model, init, self.ridge, next_state=next_state, max_iter=self.max_iter,
                          center=self.center)
        self.last = res
        return res
