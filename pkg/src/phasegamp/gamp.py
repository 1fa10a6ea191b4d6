"""Damped min-sum GAMP precoder for flat channels.

Two criteria are supported: the sum MSE with active constellation extension
(:class:`MseProblem`) and the QPSK detection-error likelihood
(:class:`SerProblem`). Everything is batched: ``H`` may carry leading batch
axes and ``d`` may carry more (several symbol vectors per channel).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import erfcx, log_ndtr

from .alphabet import Constellation, PhaseAlphabet, ace_project, phase_project, phase_soft_project

SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


class NumericalError(RuntimeError):
    """A message became NaN/inf during iteration."""


@dataclass
class GampConfig:
    damping: float = 0.5
    theta0: float = 1.0
    max_iters: int = 100
    min_iters: int = 40
    rel_tol: float = 1e-4
    patience: int = 3
    gamma0: float = 1.0
    gamma_rate: float = 1.1
    gamma_max: float = 1e4
    input_slope_mode: str = "gibbs"
    ser_mode: str = "newton"
    update_beta: bool = True
    freeze_annealing: bool = False
    ser_noise0: Optional[float] = 1.0  # design noise variance the SER criterion starts from

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iters < 1 or self.patience < 1:
            raise ValueError("max_iters and patience must be at least 1")
        if self.theta0 <= 0:
            raise ValueError("theta0 must be positive")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.input_slope_mode not in ("gibbs", "inverse_magnitude"):
            raise ValueError(f"unknown input_slope_mode {self.input_slope_mode!r}")
        if self.ser_noise0 is not None and self.ser_noise0 <= 0:
            raise ValueError("ser_noise0 must be positive")
        if self.ser_mode not in ("taylor", "newton"):
            raise ValueError(f"unknown ser_mode {self.ser_mode!r}")

    def gamma(self, it):
        return np.minimum(self.gamma0 * self.gamma_rate ** np.asarray(it, dtype=float), self.gamma_max)

    def ser_noise(self, it, sigma_n_sq):
        """Design noise variance of the SER output step, shrunk towards the
        true value at the annealing rate."""
        if self.ser_noise0 is None:
            return np.full(np.shape(it), float(sigma_n_sq))
        return np.maximum(self.ser_noise0 / self.gamma_rate ** np.asarray(it, dtype=float), sigma_n_sq)


# the SER criterion spends its first iterations shrinking the design noise,
# so it needs a longer run after reaching the true noise level
SER_CONFIG = GampConfig(min_iters=80, max_iters=150)


@dataclass
class MseProblem:
    H: np.ndarray
    d: np.ndarray
    sigma_n_sq: float
    constellation: Constellation
    ace: bool = True
    beta: float = 1.0


@dataclass
class SerProblem:
    H: np.ndarray
    d: np.ndarray
    sigma_n_sq: float
    constellation: Constellation = field(default_factory=Constellation.qpsk)

    def __post_init__(self):
        if not (self.constellation.kind == "qam" and self.constellation.order == 2):
            raise ValueError("the SER criterion is implemented for QPSK only")
        if self.sigma_n_sq <= 0:
            raise ValueError("the SER criterion needs a positive noise variance")


@dataclass
class GampState:
    x: np.ndarray
    z: np.ndarray
    theta: np.ndarray
    xi: np.ndarray
    beta: np.ndarray
    cost: np.ndarray
    cost_trace: np.ndarray
    iterations: np.ndarray


# scalar Gaussian helpers -----------------------------------------------------

def inv_mills(t):
    """``phi(t) / Phi(t)``, stable far into the left tail."""
    return SQRT_2_OVER_PI / erfcx(-np.asarray(t, dtype=float) / np.sqrt(2.0))


def neg_log_phi(t):
    """``-log Phi(t)`` and its first three derivatives."""
    t = np.asarray(t, dtype=float)
    rho = inv_mills(t)
    h1 = -rho
    h2 = rho * (rho + t)
    h3 = rho * (1.0 - (rho + t) * (2 * rho + t))
    return -log_ndtr(t), h1, h2, h3


def _axes(w):
    w = np.asarray(w, dtype=complex)
    return np.stack([w.real, w.imag], axis=-1)


def _axis_scale(d, sigma_n):
    return _axes(d) * np.sqrt(2.0) / sigma_n


def gamma_ser(w, d, sigma_n):
    """Detection-error penalty ``sum_axes -log Phi(d_ax w_ax / sqrt(sigma^2/2))``.

    Returns ``(value, axis_grad, axis_hess)``; the last two carry a trailing
    axis of length 2 (real, imaginary).
    """
    if np.any(np.asarray(sigma_n) <= 0):
        raise ValueError("sigma_n must be positive")
    c = _axis_scale(d, sigma_n)
    h0, h1, h2, _ = neg_log_phi(c * _axes(w))
    return h0.sum(axis=-1), c * h1, c * c * h2


def ser_axis_shift(u, c, theta, tol=1e-12, max_steps=60):
    """Displacement ``w* - u`` of the minimiser of ``-log Phi(c w) + (w - u)^2 / theta``.

    Safeguarded Newton on the (strictly convex) objective, run on the
    displacement itself so that ``(w* - u) / theta`` keeps full relative
    precision for small ``theta``. Steps leaving the current bracket fall
    back to bisection.
    """
    u, c, theta = np.broadcast_arrays(np.asarray(u, float), np.asarray(c, float),
                                      np.asarray(theta, float))
    shape = u.shape
    sgn = np.where(c < 0, -1.0, 1.0).ravel()
    a = np.abs(c).ravel()
    up = sgn * u.ravel()
    th = theta.ravel()
    # in sign-normalised coordinates the minimiser moves right by at most this
    lo = np.zeros_like(up)
    hi = th * a * inv_mills(a * up) / 2
    delta = np.zeros_like(up)
    idx = np.arange(up.size)  # elements still iterating
    for _ in range(max_steps):
        ai, ti, di = a[idx], th[idx], delta[idx]
        t = ai * (up[idx] + di)
        rho = inv_mills(t)
        g = -ai * rho + 2 * di / ti
        lo[idx] = np.where(g < 0, di, lo[idx])
        hi[idx] = np.where(g > 0, di, hi[idx])
        new = di - g / (ai * ai * rho * (rho + t) + 2 / ti)
        # a vanishing Newton step means convergence, even if rounding puts it on the bracket edge
        conv = (np.abs(new - di) <= tol * np.abs(new)) | (g == 0)
        bad = ~conv & ((new <= lo[idx]) | (new >= hi[idx]))
        new = np.where(bad, 0.5 * (lo[idx] + hi[idx]), new)
        delta[idx] = new
        idx = idx[~(conv | (hi[idx] - lo[idx] <= tol * np.abs(new)))]
        if idx.size == 0:
            break
    return (sgn * delta).reshape(shape)


def ser_axis_prox(u, c, theta, tol=1e-12, max_steps=60):
    """Minimiser of ``-log Phi(c w) + (w - u)^2 / theta`` over real ``w``."""
    return np.asarray(u, float) + ser_axis_shift(u, c, theta, tol, max_steps)


def mse_output_step(u, d, theta, constellation: Constellation, ace: bool = True):
    """Output step for the MSE criterion, evaluated at ``-u``.

    ``z = (prox_S(d)(u) - u) / (1 + theta)``; ``slope`` is its Wirtinger
    derivative with respect to ``-u``.
    """
    u = np.asarray(u, dtype=complex)
    if ace:
        s, k = ace_project(u, d, constellation)
        kept = k.sum(axis=-1)
    else:
        s = np.broadcast_to(d, u.shape)
        kept = np.zeros(u.shape)
    z = (s - u) / (1 + theta)
    slope = (1 - 0.5 * kept) / (1 + theta)
    return z, slope


def ser_output_step(u, d, theta, sigma_n, mode="newton"):
    """Output step for the QPSK detection-error criterion.

    ``mode="newton"`` solves the per-axis proximal problem exactly;
    ``mode="taylor"`` uses the second-order expansion of the penalty at ``u``.
    """
    c = _axis_scale(d, sigma_n)
    ua = _axes(u)
    th = np.asarray(theta, dtype=float)[..., None]
    if mode == "newton":
        shift = ser_axis_shift(ua, c, th)
        _, _, h2, _ = neg_log_phi(c * (ua + shift))
        g2 = c * c * h2
        za = shift / th
        sa = g2 / (th * g2 + 2)
    elif mode == "taylor":
        _, h1, h2, h3 = neg_log_phi(c * ua)
        g1, g2, g3 = c * h1, c * c * h2, c**3 * h3
        den = th * g2 + 2
        za = -g1 / den
        sa = np.maximum((g2 * den - g1 * th * g3) / den**2, 0.0)
    else:
        raise ValueError(f"unknown SER mode {mode!r}")
    return za[..., 0] + 1j * za[..., 1], 0.5 * sa.sum(axis=-1)


# costs ----------------------------------------------------------------------

def _matvec(H, x):
    return (H @ x[..., None])[..., 0]


def mse_cost(x, beta, H, s, sigma_n_sq):
    """``||beta H x - s||^2 + K beta^2 sigma^2`` for a given ACE vector ``s``."""
    w = np.asarray(beta)[..., None] * _matvec(H, x)
    K = w.shape[-1]
    return np.sum(np.abs(w - s) ** 2, axis=-1) + K * np.asarray(beta) ** 2 * sigma_n_sq


def ser_cost(x, H, d, sigma_n_sq):
    """Negative log-probability of correct per-axis decisions (beta = 1)."""
    w = _matvec(H, x)
    value, _, _ = gamma_ser(w, d, np.sqrt(sigma_n_sq))
    return value.sum(axis=-1)


def refine_beta(x, H, d, sigma_n_sq, constellation, ace=True, beta=1.0, steps=3):
    """Alternate closed-form receiver-gain and ACE-point updates.

    Each step is an exact coordinate minimisation, so the MSE cost never
    increases. Returns ``(beta, s, cost)``.
    """
    w0 = _matvec(H, x)
    K = w0.shape[-1]
    beta = np.broadcast_to(np.asarray(beta, dtype=float), w0.shape[:-1]).copy()
    energy = np.sum(np.abs(w0) ** 2, axis=-1) + K * sigma_n_sq
    for _ in range(steps):
        s = ace_project(beta[..., None] * w0, d, constellation)[0] if ace \
            else np.broadcast_to(d, w0.shape)
        beta = np.real(np.sum(np.conj(s) * w0, axis=-1)) / energy
        beta = np.maximum(beta, 1e-12)
    s = ace_project(beta[..., None] * w0, d, constellation)[0] if ace else np.broadcast_to(d, w0.shape)
    cost = np.sum(np.abs(beta[..., None] * w0 - s) ** 2, axis=-1) + K * beta**2 * sigma_n_sq
    return beta, s, cost


def optimal_mse_cost(x, H, d, sigma_n_sq, constellation, ace=True, beta=1.0):
    """MSE cost of ``x`` minimised over the receiver gain (to convergence)."""
    beta, _, cost = refine_beta(x, H, d, sigma_n_sq, constellation, ace, beta, steps=200)
    return beta, cost


# main loop ------------------------------------------------------------------

class _BestTracker:
    """Best-so-far bookkeeping and the patience-based stopping rule."""

    def __init__(self, shape, cfg: GampConfig):
        self.cfg = cfg
        self.best = np.full(shape, np.inf)
        self.stall = np.zeros(shape, dtype=int)
        self.active = np.ones(shape, dtype=bool)
        self.iterations = np.zeros(shape, dtype=int)
        self.anneal = np.zeros(shape, dtype=int)

    def gamma(self):
        """Inverse temperature per instance; the schedule only advances while
        the cost keeps improving if ``freeze_annealing`` is set."""
        return self.cfg.gamma(self.anneal)

    def update(self, it, cost):
        improved = cost < self.best * (1 - self.cfg.rel_tol)
        better = (cost < self.best) & self.active
        self.stall = np.where(improved, 0, self.stall + 1)
        self.best = np.where(better, cost, self.best)
        self.iterations = np.where(self.active, it, self.iterations)
        step = (self.stall == 0) if self.cfg.freeze_annealing else np.ones_like(self.active)
        self.anneal = self.anneal + (step & self.active)
        if it >= self.cfg.min_iters:
            self.active &= self.stall < self.cfg.patience
        return better


def run_gamp(problem, alphabet: PhaseAlphabet, config: Optional[GampConfig] = None,
             callback: Optional[Callable] = None) -> GampState:
    """Damped min-sum GAMP with a softmax input step and simulated annealing.

    The returned ``x`` is the hard-projected iterate with the lowest cost seen;
    for the MSE criterion ``beta`` is the receiver gain that goes with it.
    """
    is_mse = isinstance(problem, MseProblem)
    cfg = config or (GampConfig() if is_mse else SER_CONFIG)
    H = np.asarray(problem.H, dtype=complex)
    d = np.asarray(problem.d, dtype=complex)
    K, N = H.shape[-2:]
    if d.shape[-1] != K:
        raise ValueError(f"d has {d.shape[-1]} entries, channel has K={K}")
    batch = np.broadcast_shapes(H.shape[:-2], d.shape[:-1])
    d = np.broadcast_to(d, batch + (K,))
    sigma_n_sq = float(problem.sigma_n_sq)
    sigma_n = np.sqrt(sigma_n_sq)
    mu = cfg.damping
    HH = np.conj(np.swapaxes(H, -1, -2))
    E = np.abs(H) ** 2
    ET = np.swapaxes(E, -1, -2)

    x = np.zeros(batch + (N,), dtype=complex)
    z = np.zeros(batch + (K,), dtype=complex)
    theta = np.full(batch + (K,), float(cfg.theta0))
    xi = np.ones(batch + (N,))
    beta = np.full(batch, float(problem.beta) if is_mse else 1.0)

    tracker = _BestTracker(batch, cfg)
    best_x = np.tile(alphabet.points[0], batch + (N,))
    best_beta = beta.copy()
    trace = []

    for it in range(1, cfg.max_iters + 1):
        b = beta[..., None]
        u = b * _matvec(H, x) - theta * z
        if is_mse:
            z_new, gslope = mse_output_step(u, d, theta, problem.constellation, problem.ace)
        else:
            s_eff = np.sqrt(cfg.ser_noise(tracker.anneal, sigma_n_sq))[..., None, None]
            z_new, gslope = ser_output_step(u, d, theta, s_eff, cfg.ser_mode)
        xi_new = np.maximum(b**2 * _matvec(ET, gslope), 1e-12)
        v = b * _matvec(HH, z_new) + xi_new * x
        f, fslope = phase_soft_project(v, xi_new, np.broadcast_to(tracker.gamma()[..., None], v.shape), alphabet,
                                       cfg.input_slope_mode)
        x_new = (1 - mu) * x + mu * f
        theta_new = mu * beta[..., None] ** 2 * _matvec(E, np.real(fslope))
        theta_new = np.maximum(theta_new, 1e-12)

        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(z_new))
                and np.all(np.isfinite(theta_new)) and np.all(np.isfinite(xi_new))):
            raise NumericalError(f"non-finite GAMP message at iteration {it}")

        act = tracker.active
        x = np.where(act[..., None], x_new, x)
        z = np.where(act[..., None], z_new, z)
        theta = np.where(act[..., None], theta_new, theta)
        xi = np.where(act[..., None], xi_new, xi)

        xh = phase_project(x, alphabet)
        if is_mse:
            if cfg.update_beta:
                nb, _, cost = refine_beta(xh, H, d, sigma_n_sq, problem.constellation,
                                          problem.ace, beta, steps=1)
                beta = np.where(act, nb, beta)
            else:
                _, _, cost = refine_beta(xh, H, d, sigma_n_sq, problem.constellation,
                                         problem.ace, beta, steps=0)
        else:
            cost = ser_cost(xh, H, d, sigma_n_sq)

        better = tracker.update(it, cost)
        best_x = np.where(better[..., None], xh, best_x)
        best_beta = np.where(better, beta, best_beta)
        trace.append(tracker.best.copy())
        if callback is not None:
            callback(it, {"x": x, "z": z, "theta": theta, "xi": xi, "beta": beta,
                          "cost": cost, "best": tracker.best})
        if not tracker.active.any():
            break

    if is_mse:
        if cfg.update_beta:
            best_beta, best_cost = optimal_mse_cost(best_x, H, d, sigma_n_sq, problem.constellation,
                                                    problem.ace, best_beta)
        else:
            best_cost = tracker.best
    else:
        best_cost = tracker.best
    return GampState(x=best_x, z=z, theta=theta, xi=xi, beta=best_beta, cost=best_cost,
                     cost_trace=np.array(trace), iterations=tracker.iterations)
