"""State-evolution analysis of the GAMP precoder in the large-system limit.

The precoder is reduced to the scalar channel ``s_hat = theta g(-u, d, theta)
+ u + beta n`` with ``u ~ CN(0, beta^2 q)``; ``q = 1`` for a phase-only DAC.
The fixed point couples the output variance ``nu`` and the input curvature
``theta`` through the phase-quantiser constant of Stein's lemma.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar
from scipy.special import ndtr

from .alphabet import Constellation
from .gamp import neg_log_phi, ser_axis_prox, ser_axis_shift

Q_PHASE = 1.0
_COLLAPSE = 1e-13


def _quantiser_gain(b) -> float:
    """``2^b sin(pi / 2^b)``; ``b=None`` or ``inf`` is the unquantised limit."""
    if b is None or np.isinf(b):
        return np.pi
    n = 2.0**b
    return n * np.sin(np.pi / n)


def stein_theta(nu, beta, q, b):
    """Input curvature of the phase quantiser for ``v ~ CN(0, beta^2 nu)``.

    ``nu = 0`` (no residual interference) gives ``theta = inf``.
    """
    if np.ndim(nu) == 0 and nu == 0:
        return np.inf
    return _quantiser_gain(b) / (2 * np.sqrt(np.pi * nu / (beta**2 * q)))


def se_gain(b, N_over_K):
    """The coefficient ``a = 2^{2b} N sin^2(pi/2^b) / (4 pi K)``."""
    return _quantiser_gain(b) ** 2 * N_over_K / (4 * np.pi)


def sinr_of_theta(theta, a, snr):
    return (a * (1 + theta) ** 2 - theta**2) / (1 + (1 + theta) ** 2 / snr)


def sinr_opt(a, snr):
    """SINR-maximising curvature (equal to the optimal SINR) and the rate."""
    h = (a - 1) / 2 * snr - 0.5
    theta = h + np.sqrt(a * snr + h * h)
    return theta, np.log2(1 + theta)


def capacity(b, N_over_K, snr):
    return sinr_opt(se_gain(b, N_over_K), snr)[1]


def nu_mse_no_ace(theta, beta, q, sigma_d_sq, ratio):
    return ratio * (sigma_d_sq + beta**2 * q) / (1 + theta) ** 2


def nu_ace_qam(theta, beta, q, L, ratio):
    """Output variance for L^2-QAM with ACE (inner points fixed, outer
    points free to move outwards on their extended axis)."""
    a = L - 1.0
    s = beta * np.sqrt(q / 2)  # per-axis std of u
    inner = (1 - 2.0 / L) * (2.0 / 3.0 * ((L - 2) ** 2 - 1) + beta**2 * q)
    # E[(a - u)^2 ; u < a] for u ~ N(0, s^2), both axes, both outer levels
    tail = (a * a + s * s) * ndtr(a / s) + a * s * np.exp(-0.5 * (a / s) ** 2) / np.sqrt(2 * np.pi)
    outer = 4.0 / L * tail
    return ratio * (inner + outer) / (1 + theta) ** 2


def hermgauss_expect(f, var, order=64):
    """``E[f(u)]`` for real ``u ~ N(0, var)`` by Gauss-Hermite quadrature."""
    x, w = np.polynomial.hermite.hermgauss(order)
    return np.sum(w * f(np.sqrt(2 * var) * x), axis=-1) / np.sqrt(np.pi)


def g_scalar_ser(u, theta, sigma_n):
    """Per-axis output function of the detection-error criterion (d_R = +1)."""
    c = np.sqrt(2.0) / sigma_n
    u = np.asarray(u, dtype=float)
    if theta == 0:
        # vanishing proximal weight: a plain half gradient step
        return -c * neg_log_phi(c * u)[1] / 2
    return ser_axis_shift(u, c, theta) / theta


def nu_ser(theta, q, sigma_n, ratio, order=64):
    return 2 * ratio * hermgauss_expect(lambda u: g_scalar_ser(u, theta, sigma_n) ** 2, q / 2, order)


def ber_ser(theta, q, sigma_n, order=128):
    def err(u):
        return ndtr(-np.sqrt(2.0) * (theta * g_scalar_ser(u, theta, sigma_n) + u) / sigma_n)
    return float(np.clip(hermgauss_expect(err, q / 2, order), 0.0, 1.0))


def ser_from_ber(ber):
    return 2 * ber - ber**2


def ser_awgn_qam(sinr, L):
    """SER of L^2-QAM on an AWGN channel at the given (unbiased) SINR."""
    p = 2 * (1 - 1 / L) * ndtr(-np.sqrt(3 * sinr / (L * L - 1)))
    return 1 - (1 - p) ** 2


@dataclass
class SeConfig:
    b: Optional[float]
    ratio: float  # K / N
    snr: float  # q / sigma_n^2, linear
    constellation: Constellation
    beta: float = 1.0
    criterion: str = "mse-ace"  # "mse-ace", "mse-no-ace" or "ser"
    q: float = Q_PHASE

    def __post_init__(self):
        if self.ratio <= 0 or self.snr <= 0:
            raise ValueError("ratio and snr must be positive")
        if self.criterion not in ("mse-ace", "mse-no-ace", "ser"):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.criterion == "ser" and not (self.constellation.kind == "qam" and self.constellation.order == 2):
            raise ValueError("the SER criterion analysis is for QPSK only")
        if self.criterion == "mse-ace" and self.constellation.kind != "qam":
            raise ValueError("the ACE analysis is for square QAM only")

    @property
    def sigma_n(self) -> float:
        return float(np.sqrt(self.q / self.snr))


@dataclass
class SePoint:
    q: float
    nu: float
    theta: float
    xi: float
    beta: float
    sinr: float
    mse: float
    ser: float
    ber: float
    capacity: float
    converged: bool
    residual: float
    iterations: int


class SeConvergenceError(RuntimeError):
    pass


def _nu_function(cfg: SeConfig) -> Callable[[float], float]:
    if cfg.criterion == "mse-no-ace":
        return lambda th: nu_mse_no_ace(th, cfg.beta, cfg.q, cfg.constellation.sigma_d_sq, cfg.ratio)
    if cfg.criterion == "mse-ace":
        return lambda th: nu_ace_qam(th, cfg.beta, cfg.q, cfg.constellation.order, cfg.ratio)
    return lambda th: nu_ser(th, cfg.q, cfg.sigma_n, cfg.ratio)


def _iterate(cfg: SeConfig, damping=0.5, tol=1e-10, max_iter=10_000):
    nu_of = _nu_function(cfg)
    nu0 = nu = nu_of(0.0)
    res = np.inf
    for it in range(1, max_iter + 1):
        theta = stein_theta(nu, cfg.beta, cfg.q, cfg.b)
        nu_new = (1 - damping) * nu + damping * nu_of(theta)
        res = abs(nu_new - nu) / nu
        nu = nu_new
        if res < tol:
            return nu, stein_theta(nu, cfg.beta, cfg.q, cfg.b), True, res, it
        if nu < _COLLAPSE * nu0:
            # interference-free phase: nu = 0 is the (stable) fixed point
            return 0.0, np.inf, True, 0.0, it
    return nu, stein_theta(nu, cfg.beta, cfg.q, cfg.b), False, res, max_iter


def _shrink(theta):
    """``(theta/(1+theta), 1/(1+theta))``, finite at ``theta = inf``."""
    if np.isinf(theta):
        return 1.0, 0.0
    return theta / (1 + theta), 1 / (1 + theta)


def _linear_sinr(theta, beta, q, sigma_d_sq, snr):
    t, r = _shrink(theta)
    return t * t * sigma_d_sq / (beta**2 * q) / (r * r + 1 / snr)


def ser_ace(point: SePoint, L: int, sigma_n: float, beta: float, snr: float) -> float:
    """Symbol error probability of L^2-QAM with ACE in the scalar model.

    Decisions are taken on the unbiased estimate; inner points see Gaussian
    interference-plus-noise, outer points get the ACE push.
    """
    q = point.q
    t, r = _shrink(point.theta)
    inner = 2 * (L - 2) / L * ndtr(-np.sqrt(2 * t * t / (beta**2 * q) / (r * r + 1 / snr)))

    def outer_err(u):
        return ndtr(-(r * u + t * np.maximum(1.0, u - L + 2)) / (beta * sigma_n / np.sqrt(2)))

    # the ACE push starts at u = L - 1; integrate the two smooth pieces apart
    sd = beta * np.sqrt(q / 2)

    def weighted(u):
        return outer_err(u) * np.exp(-0.5 * (u / sd) ** 2) / (sd * np.sqrt(2 * np.pi))

    outer = 2 / L * sum(quad(weighted, lo, hi, epsabs=1e-13, epsrel=1e-11, limit=200)[0]
                        for lo, hi in ((-np.inf, L - 1.0), (L - 1.0, np.inf)))
    return float(np.clip(1 - (1 - inner - outer) ** 2, 0.0, 1.0))


def _xi(cfg: SeConfig, theta, order=64):
    b2 = cfg.beta**2
    if cfg.criterion == "mse-no-ace":
        return cfg.ratio * b2 * _shrink(theta)[1]
    if cfg.criterion == "mse-ace":
        L = cfg.constellation.order
        moved = 2 / L * ndtr(-(L - 1) / (cfg.beta * np.sqrt(cfg.q / 2)))
        return cfg.ratio * b2 * (1 - moved) * _shrink(theta)[1]

    c = np.sqrt(2.0) / cfg.sigma_n

    def slope(u):
        w = ser_axis_prox(u, c, theta)
        g2 = c * c * neg_log_phi(c * w)[2]
        return g2 / (theta * g2 + 2)

    return cfg.ratio * hermgauss_expect(slope, cfg.q / 2, order)


def solve_fixed_point(cfg: SeConfig, damping=0.5, tol=1e-10, max_iter=10_000,
                      strict=False) -> SePoint:
    """Damped fixed-point iteration for ``(nu, theta)`` from a cold start."""
    nu, theta, ok, res, its = _iterate(cfg, damping, tol, max_iter)
    if strict and not ok:
        raise SeConvergenceError(f"no convergence after {its} iterations, residual {res:.3g}")
    sd2 = cfg.constellation.sigma_d_sq
    sinr = _linear_sinr(theta, cfg.beta, cfg.q, sd2, cfg.snr)
    sigma_n = cfg.sigma_n
    if cfg.criterion == "ser":
        ber = ber_ser(theta, cfg.q, sigma_n)
        ser = ser_from_ber(ber)
        mse = nu / cfg.ratio + sigma_n**2
    else:
        mse = nu / cfg.ratio + cfg.beta**2 * sigma_n**2
        if cfg.criterion == "mse-ace":
            pt = SePoint(cfg.q, nu, theta, 0.0, cfg.beta, sinr, mse, np.nan, np.nan, np.nan, ok, res, its)
            ser = ser_ace(pt, cfg.constellation.order, sigma_n, cfg.beta, cfg.snr)
        else:
            ser = float(ser_awgn_qam(sinr, cfg.constellation.order)) if cfg.constellation.kind == "qam" \
                else np.nan
        ber = 1 - np.sqrt(1 - ser) if cfg.constellation.order == 2 and cfg.constellation.kind == "qam" \
            else np.nan
    return SePoint(q=cfg.q, nu=nu, theta=theta, xi=_xi(cfg, theta), beta=cfg.beta, sinr=sinr,
                   mse=mse, ser=ser, ber=ber, capacity=float(np.log2(1 + sinr)), converged=ok,
                   residual=res, iterations=its)


def solve_ace_fixed_point(cfg: SeConfig, **kw) -> SePoint:
    return solve_fixed_point(replace(cfg, criterion="mse-ace"), **kw)


def solve_ser_fixed_point(cfg: SeConfig, **kw) -> SePoint:
    return solve_fixed_point(replace(cfg, criterion="ser", beta=1.0), **kw)


def optimize_beta(cfg: SeConfig, objective: str = "mse", bounds=(1e-3, 1e3), xtol=1e-6) -> SePoint:
    """Fixed point at the receiver gain minimising the MSE or the SER.

    Bounded Brent search (golden section with parabolic steps) over
    ``log(beta)``.
    """
    if cfg.criterion == "ser":
        return solve_ser_fixed_point(cfg)
    if objective not in ("mse", "ser"):
        raise ValueError(f"unknown objective {objective!r}")

    def f(logb):
        pt = solve_fixed_point(replace(cfg, beta=float(np.exp(logb))))
        return pt.mse if objective == "mse" else pt.ser

    lo, hi = np.log(bounds[0]), np.log(bounds[1])
    # coarse scan first: the search interval spans six decades
    grid = np.linspace(lo, hi, 61)
    vals = np.array([f(g) for g in grid])
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(f, bounds=(a, b), method="bounded", options={"xatol": xtol})
    return solve_fixed_point(replace(cfg, beta=float(np.exp(res.x))))
