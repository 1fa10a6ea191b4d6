"""Joint precoding and over-the-air spectral shaping on frequency-selective
channels.

A block holds ``M`` time samples per antenna (two samples per data symbol).
Received tones are ``y[m] = beta H[m] X[m]`` with ``X`` the centered,
orthonormal DFT of the antenna signals, and the users should see the shaped
waveform ``G s`` where ``s`` lies in the extended constellation sets.

Arrays use the layout ``x: (..., M, N)`` (time, antenna), ``y: (..., M, K)``
(tone, user) and symbol streams ``s: (..., Ms, K)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .alphabet import Constellation, PhaseAlphabet, ace_project, phase_project, phase_soft_project
from .channel import WidebandChannel
from .gamp import GampConfig, GampState, NumericalError, _BestTracker

SHAPERS = ("ofdm-cp", "cp-sc", "oqam-sc")

# The shaped problem is larger and keeps improving well past the flat
# problem's stopping point; lighter damping and slower annealing help.
BLOCK_CONFIG = GampConfig(damping=0.4, gamma_rate=1.05, min_iters=150, max_iters=200)


# spectral profiles ----------------------------------------------------------

def raised_cosine(f, rolloff: float, symbol_period: float = 2.0):
    """Raised-cosine spectrum at normalised frequency ``f`` (cycles/sample),
    Nyquist for the given symbol period in samples."""
    f = np.abs(np.asarray(f, dtype=float))
    T = symbol_period
    f1 = (1 - rolloff) / (2 * T)
    f2 = (1 + rolloff) / (2 * T)
    out = np.where(f <= f1, 1.0, 0.0)
    if rolloff > 0:
        mid = (f > f1) & (f < f2)
        out = np.where(mid, 0.5 * (1 + np.cos(np.pi * T / rolloff * (f - f1))), out)
    return out


def centered_dft(x, axis=-2):
    return np.fft.fftshift(np.fft.fft(x, axis=axis, norm="ortho"), axes=axis)


def centered_idft(X, axis=-2):
    return np.fft.ifft(np.fft.ifftshift(X, axes=axis), axis=axis, norm="ortho")


@dataclass(frozen=True)
class Shaper:
    """Spectral shaping matrix ``G`` (``M x Ms``), applied matrix-free.

    ``ofdm-cp`` maps ``M/2`` symbols onto tones; ``cp-sc`` is single-carrier
    with a root-raised-cosine spectrum; ``oqam-sc`` carries ``M`` real values
    on alternating real/imaginary samples, so its orthogonality holds for the
    real part of ``G^H G``.
    """

    kind: str
    M: int
    rolloff: float = 0.22
    layout: str = "center"

    def __post_init__(self):
        if self.kind not in SHAPERS:
            raise ValueError(f"unknown shaper {self.kind!r}")
        if self.M < 4 or self.M % 4:
            raise ValueError(f"M must be a positive multiple of 4, got {self.M}")
        if self.layout not in ("center", "edge"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if not 0 <= self.rolloff <= 1:
            raise ValueError("rolloff must lie in [0, 1]")

    @property
    def real_symbols(self) -> bool:
        return self.kind == "oqam-sc"

    @property
    def n_symbols(self) -> int:
        """Length of each user's symbol stream (real values for OQAM)."""
        return self.M if self.real_symbols else self.M // 2

    @cached_property
    def tones(self) -> np.ndarray:
        """Centered tone positions (row indices) of the OFDM data, column order."""
        M = self.M
        k = np.arange(M // 2)
        if self.layout == "center":
            return k + M // 4
        # the literal block layout read in centered order: outer tones
        return np.where(k < M // 4, k, k + M // 2)

    @cached_property
    def profile(self) -> np.ndarray:
        """Spectral profile ``Lambda`` in centered tone order."""
        M = self.M
        f = np.arange(-M // 2, M // 2) / M
        if self.kind == "ofdm-cp":
            out = np.zeros(M)
            out[self.tones] = 1.0
            return out
        rc = raised_cosine(f, self.rolloff)
        # renormalise each aliasing pair (f, f + 1/2) so the folded spectrum
        # is exactly flat
        pair = np.roll(rc, M // 2)
        rc = rc / (rc + pair)
        return np.sqrt(rc) if self.kind == "cp-sc" else np.sqrt(2 * rc)

    @cached_property
    def _oqam_phase(self) -> np.ndarray:
        return np.where(np.arange(self.M) % 2 == 0, 1.0 + 0j, 1j)

    def apply(self, s):
        """``G s`` along axis -2: ``(..., Ms, K) -> (..., M, K)``."""
        s = np.asarray(s)
        M = self.M
        if self.kind == "ofdm-cp":
            out = np.zeros(s.shape[:-2] + (M, s.shape[-1]), dtype=complex)
            out[..., self.tones, :] = s
            return out
        lam = self.profile[:, None]
        if self.kind == "cp-sc":
            S = np.fft.fft(s, axis=-2, norm="ortho")
            return lam * np.fft.fftshift(np.concatenate([S, S], axis=-2), axes=-2)
        return lam * centered_dft(self._oqam_phase[:, None] * s)

    def adjoint(self, y):
        """``G^H y``: ``(..., M, K) -> (..., Ms, K)`` (complex)."""
        y = np.asarray(y, dtype=complex)
        M = self.M
        if self.kind == "ofdm-cp":
            return y[..., self.tones, :]
        ly = self.profile[:, None] * y
        if self.kind == "cp-sc":
            U = np.fft.ifftshift(ly, axes=-2)
            T = U[..., : M // 2, :] + U[..., M // 2:, :]
            return np.fft.ifft(T, axis=-2, norm="ortho")
        return np.conj(self._oqam_phase)[:, None] * centered_idft(ly)

    def matched_filter(self, y):
        """Receiver front end: ``G^H y``, real part for real-valued symbols."""
        r = self.adjoint(y)
        return r.real if self.real_symbols else r

    def matrix(self) -> np.ndarray:
        """Dense ``G`` (for tests and small problems)."""
        eye = np.eye(self.n_symbols)
        return self.apply(eye[:, :, None])[..., 0].T

    def gram(self) -> np.ndarray:
        G = self.matrix()
        g = G.conj().T @ G
        return g.real if self.real_symbols else g


def build_shaper(kind: str, M: int, rolloff: float = 0.22, layout: str = "center") -> Shaper:
    return Shaper(kind.lower(), int(M), float(rolloff), layout)


# streams <-> symbols ----------------------------------------------------------

def symbols_to_stream(d, shaper: Shaper):
    """Complex symbols ``(..., M/2, K)`` to the shaper's input stream.

    OQAM interleaves real and imaginary parts into ``M`` real values.
    """
    d = np.asarray(d, dtype=complex)
    if not shaper.real_symbols:
        return d
    out = np.empty(d.shape[:-2] + (2 * d.shape[-2], d.shape[-1]))
    out[..., 0::2, :] = d.real
    out[..., 1::2, :] = d.imag
    return out


def stream_to_symbols(s, shaper: Shaper):
    if not shaper.real_symbols:
        return np.asarray(s)
    s = np.real(s)
    return s[..., 0::2, :] + 1j * s[..., 1::2, :]


# block operator ---------------------------------------------------------------

def block_forward(x, H, beta=1.0):
    """``A x`` with ``A = beta Diag(H[m]) (F_M kron I_N)``; ``x`` is ``(..., M, N)``."""
    X = centered_dft(np.asarray(x, dtype=complex))
    Y = (H @ X[..., None])[..., 0]
    return np.asarray(beta)[..., None, None] * Y


def block_adjoint(y, H, beta=1.0):
    """``A^H y`` for ``y`` of shape ``(..., M, K)``."""
    HH = np.conj(np.swapaxes(H, -1, -2))
    X = (HH @ np.asarray(y, dtype=complex)[..., None])[..., 0]
    return np.asarray(beta)[..., None, None] * centered_idft(X)


def apply_block_operator(x, channel: WidebandChannel, beta=1.0, adjoint=False):
    """Stacked-vector interface: ``x`` of length ``MN`` (time-major) to ``MK``
    (tone-major), or the reverse for ``adjoint=True``."""
    M, K, N = channel.H.shape
    x = np.asarray(x)
    if adjoint:
        return block_adjoint(x.reshape(x.shape[:-1] + (M, K)), channel.H, beta).reshape(x.shape[:-1] + (M * N,))
    return block_forward(x.reshape(x.shape[:-1] + (M, N)), channel.H, beta).reshape(x.shape[:-1] + (M * K,))


def block_operator_matrix(H, beta=1.0) -> np.ndarray:
    """Dense ``A`` built literally from the Kronecker form (small sizes)."""
    M, K, N = H.shape
    F = np.fft.fftshift(np.fft.fft(np.eye(M), norm="ortho"), axes=0)
    D = np.zeros((M * K, M * N), dtype=complex)
    for m in range(M):
        D[m * K:(m + 1) * K, m * N:(m + 1) * N] = H[m]
    return beta * D @ np.kron(F, np.eye(N))


# output step, receiver gain and cost ------------------------------------------

def _ace(w, d, constellation):
    s, k = ace_project(w, d, constellation)
    return s, k.sum(axis=-1)


def block_output_step(u, d, theta, shaper: Shaper, constellation: Constellation, ace=True):
    """Shaped MSE output step.

    ``z = ((G kron I) prox_S((G kron I)^H u) - u) / (1 + theta)`` with a scalar
    ``theta`` per instance; ``trace_slope`` is ``tr(grad z) / (MK)``.
    """
    u = np.asarray(u, dtype=complex)
    th = np.asarray(theta, dtype=float)
    w = shaper.matched_filter(u)
    if ace:
        s, kept = _ace(w, d, constellation)
    else:
        s = np.broadcast_to(np.asarray(d, dtype=complex), w.shape)
        kept = np.zeros(w.shape)
    if shaper.real_symbols:
        s = s.real
    z = (shaper.apply(s) - u) / (1 + th[..., None, None])
    MK = u.shape[-2] * u.shape[-1]
    trace_slope = (MK - 0.5 * kept.sum(axis=(-2, -1))) / ((1 + th) * MK)
    return z, trace_slope


def ace_points(y0, beta, d, shaper: Shaper, constellation, ace=True):
    w = shaper.matched_filter(np.asarray(beta)[..., None, None] * y0)
    if not ace:
        return np.broadcast_to(np.asarray(d), w.shape)
    s = ace_project(w, d, constellation)[0]
    return s.real if shaper.real_symbols else s


def update_beta(y0, s, shaper: Shaper, sigma_n_sq: float):
    """Closed-form receiver gain for fixed ``x`` and ``s``; ``y0`` is the
    noiseless unit-gain received block ``Diag(H)(F kron I) x``."""
    M, K = y0.shape[-2:]
    num = np.real(np.sum(np.conj(shaper.apply(s)) * y0, axis=(-2, -1)))
    den = np.sum(np.abs(y0) ** 2, axis=(-2, -1)) + K * M * sigma_n_sq
    return num / den


def block_cost(y0, beta, s, shaper: Shaper, sigma_n_sq: float):
    M, K = y0.shape[-2:]
    b = np.asarray(beta)
    r = b[..., None, None] * y0 - shaper.apply(s)
    return np.sum(np.abs(r) ** 2, axis=(-2, -1)) + K * M * b**2 * sigma_n_sq


def refine_block_beta(y0, d, shaper, constellation, sigma_n_sq, ace=True, beta=1.0, steps=1):
    """Alternate ACE-point and gain updates (each an exact coordinate descent)."""
    beta = np.broadcast_to(np.asarray(beta, dtype=float), y0.shape[:-2]).copy()
    for _ in range(steps):
        s = ace_points(y0, beta, d, shaper, constellation, ace)
        beta = np.maximum(update_beta(y0, s, shaper, sigma_n_sq), 1e-12)
    s = ace_points(y0, beta, d, shaper, constellation, ace)
    return beta, s, block_cost(y0, beta, s, shaper, sigma_n_sq)


# GAMP loop --------------------------------------------------------------------

@dataclass
class BlockProblem:
    channel: WidebandChannel
    d: np.ndarray  # (..., Ms, K) shaper input stream
    sigma_n_sq: float
    shaper: Shaper
    constellation: Constellation
    ace: bool = True

    def __post_init__(self):
        d = np.asarray(self.d)
        if d.shape[-2:] != (self.shaper.n_symbols, self.channel.K):
            raise ValueError(f"d must end in shape {(self.shaper.n_symbols, self.channel.K)}, got {d.shape}")
        if self.shaper.M != self.channel.M:
            raise ValueError("shaper and channel disagree on M")


@dataclass
class BlockResult:
    x: np.ndarray
    beta: np.ndarray
    state: GampState


def run_block_gamp(problem: BlockProblem, alphabet: PhaseAlphabet,
                   config: Optional[GampConfig] = None,
                   callback: Optional[Callable] = None) -> BlockResult:
    """GAMP for the shaped block problem with scalar curvature messages."""
    cfg = config or BLOCK_CONFIG
    H = np.asarray(problem.channel.H, dtype=complex)
    M, K, N = H.shape[-3:]
    d = np.asarray(problem.d)
    batch = np.broadcast_shapes(H.shape[:-3], d.shape[:-2])
    d = np.broadcast_to(d, batch + d.shape[-2:])
    shaper, const = problem.shaper, problem.constellation
    s2 = float(problem.sigma_n_sq)
    mu = cfg.damping

    E = np.abs(H) ** 2
    row_energy = E.sum(axis=-1).mean(axis=(-2, -1))  # mean ||h_k[m]||^2
    col_energy = E.sum(axis=-2).mean(axis=-2)  # (1/M) sum_m sum_k |h_kn[m]|^2
    row_energy = np.broadcast_to(row_energy, batch)
    col_energy = np.broadcast_to(col_energy, batch + (N,))

    x = np.zeros(batch + (M, N), dtype=complex)
    z = np.zeros(batch + (M, K), dtype=complex)
    theta = np.full(batch, float(cfg.theta0))
    xi = np.ones(batch + (N,))
    beta = np.ones(batch)

    tracker = _BestTracker(batch, cfg)
    best_x = np.tile(alphabet.points[0], batch + (M, N))
    best_beta = beta.copy()
    trace = []

    for it in range(1, cfg.max_iters + 1):
        u = block_forward(x, H, beta) - theta[..., None, None] * z
        z_new, tslope = block_output_step(u, d, theta, shaper, const, problem.ace)
        xi_new = np.maximum(beta[..., None] ** 2 * tslope[..., None] * col_energy, 1e-12)
        xi_full = np.broadcast_to(xi_new[..., None, :], x.shape)
        v = block_adjoint(z_new, H, beta) + xi_full * x
        f, fslope = phase_soft_project(v, xi_full, np.broadcast_to(tracker.gamma()[..., None, None], v.shape), alphabet,
                                       cfg.input_slope_mode)
        x_new = (1 - mu) * x + mu * f
        theta_new = np.maximum(mu * beta**2 * row_energy * np.real(fslope).mean(axis=(-2, -1)), 1e-12)

        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(z_new))
                and np.all(np.isfinite(theta_new))):
            raise NumericalError(f"non-finite block GAMP message at iteration {it}")

        act = tracker.active
        x = np.where(act[..., None, None], x_new, x)
        z = np.where(act[..., None, None], z_new, z)
        theta = np.where(act, theta_new, theta)
        xi = np.where(act[..., None], xi_new, xi)

        xh = phase_project(x, alphabet)
        y0 = block_forward(xh, H)
        steps = 1 if cfg.update_beta else 0
        nb, _, cost = refine_block_beta(y0, d, shaper, const, s2, problem.ace, beta, steps)
        beta = np.where(act, nb, beta)

        better = tracker.update(it, cost)
        best_x = np.where(better[..., None, None], xh, best_x)
        best_beta = np.where(better, beta, best_beta)
        trace.append(tracker.best.copy())
        if callback is not None:
            callback(it, {"x": x, "z": z, "theta": theta, "xi": xi, "beta": beta,
                          "cost": cost, "best": tracker.best})
        if not tracker.active.any():
            break

    y0 = block_forward(best_x, H)
    if cfg.update_beta:
        best_beta, _, best_cost = refine_block_beta(y0, d, shaper, const, s2, problem.ace, best_beta, 200)
    else:
        best_cost = tracker.best
    state = GampState(x=best_x, z=z, theta=theta, xi=xi, beta=best_beta, cost=best_cost,
                      cost_trace=np.array(trace), iterations=tracker.iterations)
    return BlockResult(best_x, best_beta, state)
