"""Spectra of precoded blocks: the over-the-air PSD seen by the users and
the total radiated power through an array coupling matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import welch

from .block import block_forward, centered_dft, centered_idft


@dataclass
class Spectrum:
    freq: np.ndarray  # normalised frequency, cycles/sample, ascending
    psd: np.ndarray  # linear power per bin
    in_band: float
    out_band: float

    @property
    def aclr_db(self) -> float:
        return float(10 * np.log10(self.out_band / self.in_band))

    def normalised_db(self) -> np.ndarray:
        """PSD in dB relative to the mean in-band level."""
        ref = self.psd[(self.freq >= -0.25) & (self.freq < 0.25)].mean()
        return 10 * np.log10(np.maximum(self.psd, 1e-300) / ref)


def _band_split(freq, psd, edge=0.25):
    # half-open band [-edge, edge), matching the centered tone grid
    inside = (freq >= -edge - 1e-12) & (freq < edge - 1e-12)
    return float(psd[inside].sum()), float(psd[~inside].sum())


def ota_psd(x, H, nperseg=None, noverlap=None, window="boxcar", edge=0.25) -> Spectrum:
    """PSD of the noiseless received signals, averaged over users and blocks.

    ``x`` is ``(..., B, M, N)`` (blocks of time samples) and ``H`` the
    matching per-tone channels. Each user's blocks are concatenated into one
    time sequence and Welch-averaged. The default segment is one block with a
    rectangular window, aligned to block boundaries, which for cyclic blocks
    is the exact per-tone periodogram.
    """
    y = centered_idft(block_forward(x, H))  # (..., B, M, K) time domain
    M, K = y.shape[-2:]
    seq = np.moveaxis(y, -1, 0).reshape(K, -1)  # one sequence per user
    nperseg = M if nperseg is None else int(nperseg)
    noverlap = 0 if noverlap is None else int(noverlap)
    f, P = welch(seq, fs=1.0, window=window, nperseg=nperseg, noverlap=noverlap,
                 return_onesided=False, detrend=False, scaling="density", axis=-1)
    f = np.fft.fftshift(f)
    # power per bin, so that the bins sum to the mean received power
    P = np.fft.fftshift(P.mean(axis=0)) / nperseg
    inb, oob = _band_split(f, P, edge)
    return Spectrum(f, P, inb, oob)


def trp_psd(x, B, edge=0.25) -> Spectrum:
    """Total radiated power per tone, ``X[m]^H B X[m]``, averaged over blocks.

    ``x`` is ``(..., M, N)``; ``B`` the ``N x N`` coupling matrix.
    """
    X = centered_dft(np.asarray(x, dtype=complex))
    M = X.shape[-2]
    P = np.real(np.einsum("...mi,ij,...mj->...m", np.conj(X), np.asarray(B), X))
    P = P.reshape(-1, M).mean(axis=0)
    f = np.arange(-M // 2, M // 2) / M
    inb, oob = _band_split(f, P, edge)
    return Spectrum(f, P, inb, oob)
