"""Linear zero-forcing precoders followed by phase quantisation."""

from __future__ import annotations

import numpy as np

from .alphabet import PhaseAlphabet, phase_project
from .block import Shaper, block_forward, centered_idft, refine_block_beta
from .gamp import refine_beta


def zf_flat(H, d, rcond=1e-10):
    """Unquantised ``H^H (H H^H)^-1 d`` scaled to unit mean power per antenna."""
    H = np.asarray(H, dtype=complex)
    x = (np.linalg.pinv(H, rcond=rcond) @ np.asarray(d, dtype=complex)[..., None])[..., 0]
    return _unit_power(x, axis=(-1,))


def _unit_power(x, axis):
    p = np.mean(np.abs(x) ** 2, axis=axis, keepdims=True)
    return x / np.sqrt(np.where(p > 0, p, 1.0))


def quantized_zf_precoder(H, d, alphabet: PhaseAlphabet, sigma_n_sq=0.0, constellation=None):
    """Quantised ZF for flat channels.

    Returns ``(x, beta)`` with ``beta`` the least-squares receiver gain for
    targets ``d`` (the same rule as used by the nonlinear precoders, without
    constellation extension).
    """
    x = phase_project(zf_flat(H, d), alphabet)
    beta, _, _ = refine_beta(x, H, d, sigma_n_sq, constellation, ace=False, steps=1)
    return x, beta


def zf_block(H, d, shaper: Shaper, rcond=1e-10):
    """Per-tone ZF of the shaped target ``G d``; ``x`` is ``(..., M, N)`` in
    time, unit mean power per antenna, unquantised."""
    H = np.asarray(H, dtype=complex)
    target = shaper.apply(d)  # (..., M, K)
    X = (np.linalg.pinv(H, rcond=rcond) @ target[..., None])[..., 0]
    return _unit_power(centered_idft(X), axis=(-2, -1))


def quantized_zf_block(H, d, shaper: Shaper, alphabet: PhaseAlphabet, sigma_n_sq=0.0,
                       constellation=None):
    x = phase_project(zf_block(H, d, shaper), alphabet)
    y0 = block_forward(x, H)
    beta, _, _ = refine_block_beta(y0, d, shaper, constellation, sigma_n_sq, ace=False, steps=1)
    return x, beta
