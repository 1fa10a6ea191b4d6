"""Propagation models: IID flat fading, ray-based wideband ULA channels and the
radiation coupling matrix of a uniform planar array."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class FlatChannel:
    """``H`` has shape ``(..., K, N)``; leading axes index independent draws."""

    H: np.ndarray

    @property
    def K(self) -> int:
        return self.H.shape[-2]

    @property
    def N(self) -> int:
        return self.H.shape[-1]


@dataclass
class WidebandChannel:
    """Per-tone matrices ``H[i]`` for tone ``m = i - M/2`` (centered order).

    ``H`` has shape ``(M, K, N)``.
    """

    H: np.ndarray
    Ts: float = 1.0
    fc: float = 1.0

    def __post_init__(self):
        M = self.H.shape[-3]
        if M < 1 or M & (M - 1):
            raise ValueError(f"M must be a power of two, got {M}")

    @property
    def M(self) -> int:
        return self.H.shape[-3]

    @property
    def K(self) -> int:
        return self.H.shape[-2]

    @property
    def N(self) -> int:
        return self.H.shape[-1]

    @property
    def tones(self) -> np.ndarray:
        return np.arange(-self.M // 2, self.M // 2)

    @classmethod
    def from_flat(cls, H, M: int) -> "WidebandChannel":
        H = np.asarray(H)
        return cls(np.broadcast_to(H, (M,) + H.shape[-2:]).copy())


@dataclass
class RayParams:
    """Path gains, departure angles (rad) and delays (s); one array per user."""

    alpha: list
    phi: list
    delay: list

    def __post_init__(self):
        for k, a in enumerate(self.alpha):
            if len(a) < 1:
                raise ValueError(f"user {k} has no paths")
            if not (len(a) == len(self.phi[k]) == len(self.delay[k])):
                raise ValueError(f"user {k}: path arrays differ in length")

    @property
    def K(self) -> int:
        return len(self.alpha)


@dataclass
class CouplingMatrix:
    B: np.ndarray
    side: int
    spacing: float
    wavelength: float

    @property
    def N(self) -> int:
        return self.B.shape[0]


def crandn(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circular complex Gaussian samples with variance ``var``."""
    return np.sqrt(var / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _shape(batch, K, N):
    return tuple(int(b) for b in np.atleast_1d(batch)) + (K, N)


def draw_iid_flat(K: int, N: int, rng: np.random.Generator, batch=()) -> FlatChannel:
    if K < 1 or N < 1:
        raise ValueError("K and N must be positive")
    return FlatChannel(crandn(rng, _shape(batch, K, N), 1.0 / N))


def draw_correlated_flat(K: int, R: np.ndarray, rng: np.random.Generator, batch=()) -> FlatChannel:
    """Rows ``h_k ~ CN(0, R/ (tr R))``, i.e. entry variance 1/N on average.

    With ``R`` the radiation coupling matrix this is the isotropic-scattering
    channel seen by the array.
    """
    R = np.asarray(R, dtype=float)
    N = R.shape[0]
    w, V = np.linalg.eigh(R / np.trace(R))
    root = V * np.sqrt(np.clip(w, 0, None))
    G = crandn(rng, _shape(batch, K, N), 1.0)
    return FlatChannel(G @ root.T)


def ula_response(m, phi: float, N: int, M: int, Ts: float, fc: float) -> np.ndarray:
    """Frequency response of a half-wavelength ULA at DFT tone ``m``.

    The tone's offset from the carrier is ``m / (M Ts)``.
    """
    m = np.asarray(m, dtype=float)
    n = np.arange(N)
    scale = m[..., None] / (M * Ts * fc) + 1.0
    return np.exp(-1j * np.pi * np.cos(phi) * n * scale)


def draw_ray_params(K: int, Q: int, rng: np.random.Generator, Ts: float,
                    max_delay_samples: float = 50.0, phi_range=(0.0, np.pi)) -> RayParams:
    """Random rays: ``alpha ~ CN(0, 1/Q)``, uniform AoD and uniform delay."""
    alpha, phi, delay = [], [], []
    for _ in range(K):
        alpha.append(crandn(rng, Q, 1.0 / Q))
        phi.append(rng.uniform(phi_range[0], phi_range[1], Q))
        delay.append(rng.uniform(0.0, max_delay_samples * Ts, Q))
    return RayParams(alpha, phi, delay)


def draw_ray_channel(params: RayParams, N: int, M: int, Ts: float, fc: float) -> WidebandChannel:
    """Assemble ``h_k[m] = sum_l alpha a_ULA(m, phi) exp(-j 2 pi m t / (M Ts))``."""
    m = np.arange(-M // 2, M // 2)
    H = np.zeros((M, params.K, N), dtype=complex)
    for k in range(params.K):
        for a, ph, t in zip(params.alpha[k], params.phi[k], params.delay[k]):
            H[:, k, :] += a * ula_response(m, ph, N, M, Ts, fc) \
                * np.exp(-2j * np.pi * m * t / (M * Ts))[:, None]
    return WidebandChannel(H, Ts, fc)


# Bessel J1 ------------------------------------------------------------------

_SERIES_LIMIT = 12.0


def _j1_series(x):
    half = x / 2
    term = half.copy()
    total = term.copy()
    q = half * half
    for k in range(1, 60):
        term = -term * q / (k * (k + 1))
        total += term
    return total


def _j1_asymptotic(x):
    # Hankel expansion; terms shrink until k ~ 2x, far beyond the 12 used
    mu = 4.0
    P = np.ones_like(x)
    Q = np.zeros_like(x)
    term = np.ones_like(x)
    eight_x = 8 * x
    for k in range(1, 24):
        term = term * (mu - (2 * k - 1) ** 2) / (k * eight_x)
        if k % 2:
            Q += term if (k // 2) % 2 == 0 else -term
        else:
            P += term if (k // 2) % 2 == 0 else -term
    chi = x - 0.75 * np.pi
    return np.sqrt(2 / (np.pi * x)) * (P * np.cos(chi) - Q * np.sin(chi))


def bessel_j1(x):
    """Bessel function of the first kind, order one, for ``x >= 0``.

    Power series below 12, Hankel asymptotic expansion above.
    """
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    out = np.empty_like(ax)
    small = ax < _SERIES_LIMIT
    out[small] = _j1_series(ax[small])
    out[~small] = _j1_asymptotic(ax[~small])
    out = np.sign(x) * out
    return out if out.ndim else float(out)


def coupling_matrix_upa(side: int, spacing: float, wavelength: float) -> CouplingMatrix:
    """Resistive coupling kernel of a ``side x side`` planar array of isotropic
    elements with element spacing ``spacing``."""
    if side < 1:
        raise ValueError("side must be >= 1")
    r = spacing / wavelength
    idx = np.arange(side * side)
    row, col = idx % side, idx // side
    rho = np.hypot(row[:, None] - row[None, :], col[:, None] - col[None, :])
    B = np.empty_like(rho)
    diag = rho == 0
    B[diag] = np.pi * r * r
    B[~diag] = r * bessel_j1(2 * np.pi * r * rho[~diag]) / rho[~diag]
    return CouplingMatrix(B, side, spacing, wavelength)


# fixtures -------------------------------------------------------------------

def save_channel(path, channel) -> None:
    """Write a flat or wideband channel as self-describing JSON."""
    H = np.asarray(channel.H)
    doc = {
        "format": "phasegamp-channel/1",
        "kind": "wideband" if isinstance(channel, WidebandChannel) else "flat",
        "shape": list(H.shape),
        "tone_order": "centered" if isinstance(channel, WidebandChannel) else None,
        "Ts": getattr(channel, "Ts", None),
        "fc": getattr(channel, "fc", None),
        "data": np.stack([H.real, H.imag], axis=-1).ravel().tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_channel(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "phasegamp-channel/1":
        raise ValueError(f"{path}: not a channel file")
    flat = np.asarray(doc["data"], dtype=float).reshape(tuple(doc["shape"]) + (2,))
    H = flat[..., 0] + 1j * flat[..., 1]
    if doc["kind"] == "wideband":
        return WidebandChannel(H, doc["Ts"], doc["fc"])
    return FlatChannel(H)
