"""Phase-DAC alphabet, modulation constellations and their scalar proximal maps.

All operators work element-wise on numpy arrays of any shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# relative slack used when deciding ties and set membership
_TIE_TOL = 1e-12


@dataclass(frozen=True)
class PhaseAlphabet:
    """Output set of a ``bits``-bit phase-only DAC.

    Points are ``exp(j*2*pi*(l + 1/2)/2**bits)`` for ``l = 0 .. 2**bits - 1``.
    """

    bits: int

    def __post_init__(self):
        if int(self.bits) != self.bits or self.bits < 1:
            raise ValueError(f"bits must be a positive integer, got {self.bits!r}")

    @property
    def size(self) -> int:
        return 2**self.bits

    @cached_property
    def angles(self) -> np.ndarray:
        return 2 * np.pi * (np.arange(self.size) + 0.5) / self.size

    @cached_property
    def points(self) -> np.ndarray:
        return np.exp(1j * self.angles)

    def project(self, v):
        return phase_project(v, self)

    def soft_project(self, v, xi, gamma, slope_mode="gibbs", slope_cap=1e6):
        return phase_soft_project(v, xi, gamma, self, slope_mode, slope_cap)


def phase_project(v, alphabet: PhaseAlphabet):
    """Nearest point of the phase alphabet; ties go to the smallest index."""
    v = np.asarray(v, dtype=complex)
    score = np.real(np.conj(alphabet.points) * v[..., None])
    best = score.max(axis=-1, keepdims=True)
    tol = _TIE_TOL * np.maximum(np.abs(v)[..., None], 1e-300)
    idx = np.argmax(score >= best - tol, axis=-1)
    return alphabet.points[idx]


def phase_soft_project(v, xi, gamma, alphabet: PhaseAlphabet,
                       slope_mode: str = "gibbs", slope_cap: float = 1e6):
    """Gibbs (softmax) relaxation of :func:`phase_project`.

    The weights are ``exp(-(gamma/xi) |xi x - v|^2)``. Because every point has
    unit magnitude this reduces to ``exp(2 gamma Re(conj(x) v))`` up to a
    factor common to all points.

    Returns
    -------
    value : ndarray
        Gibbs average of the alphabet.
    slope : ndarray
        Wirtinger derivative of ``value`` with respect to ``v``. In ``"gibbs"``
        mode this is the exact derivative ``gamma * (1 - |value|^2)``; in
        ``"inverse_magnitude"`` mode it is ``1/(2|v|)`` capped at ``slope_cap``.
    """
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= 0):
        raise ValueError("xi must be positive")
    if np.any(np.asarray(gamma) < 0):
        raise ValueError("gamma must be nonnegative")
    v = np.asarray(v, dtype=complex)
    gamma = np.asarray(gamma, dtype=float)

    expo = 2 * gamma[..., None] * np.real(np.conj(alphabet.points) * v[..., None])
    expo -= expo.max(axis=-1, keepdims=True)
    w = np.exp(expo)
    value = (w @ alphabet.points) / w.sum(axis=-1)

    if slope_mode == "gibbs":
        slope = gamma * np.maximum(1.0 - np.abs(value) ** 2, 0.0)
    elif slope_mode == "inverse_magnitude":
        mag = np.abs(v)
        with np.errstate(divide="ignore"):
            slope = np.where(mag > 0, 0.5 / mag, np.inf)
        slope = np.minimum(slope, slope_cap)
    else:
        raise ValueError(f"unknown slope mode {slope_mode!r}")
    return value, slope.astype(complex)


@dataclass(frozen=True)
class Constellation:
    """PSK or square-QAM modulation alphabet.

    QAM points lie on the odd-integer grid ``{±1, ±3, ..., ±(L-1)}`` per axis;
    ``Constellation.qam(2)`` is QPSK with points ``±1 ± j``. PSK points are
    ``exp(j 2 pi p / P)``.
    """

    kind: str
    order: int
    points: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def qam(cls, L: int) -> "Constellation":
        if L < 2 or L % 2:
            raise ValueError(f"QAM needs an even number of levels per axis, got {L}")
        levels = np.arange(-(L - 1), L, 2, dtype=float)
        re, im = np.meshgrid(levels, levels, indexing="ij")
        return cls("qam", L, (re + 1j * im).ravel())

    @classmethod
    def qpsk(cls) -> "Constellation":
        return cls.qam(2)

    @classmethod
    def psk(cls, P: int) -> "Constellation":
        if P < 2:
            raise ValueError(f"PSK needs at least 2 points, got {P}")
        pts = np.exp(2j * np.pi * np.arange(P) / P)
        # snap rounding residue so that e.g. BPSK is exactly ±1
        pts = np.round(pts.real, 15) + 1j * np.round(pts.imag, 15)
        return cls("psk", P, pts)

    @classmethod
    def from_name(cls, name: str) -> "Constellation":
        key = name.strip().lower()
        if key == "qpsk":
            return cls.qpsk()
        if key == "bpsk":
            return cls.psk(2)
        if key.endswith("qam"):
            M = int(key[:-3])
            L = int(round(np.sqrt(M)))
            if L * L != M:
                raise ValueError(f"{name}: only square QAM is supported")
            return cls.qam(L)
        if key.endswith("psk"):
            return cls.psk(int(key[:-3]))
        raise ValueError(f"unknown constellation {name!r}")

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def name(self) -> str:
        if self.kind == "qam":
            return "qpsk" if self.order == 2 else f"{self.order ** 2}qam"
        return "bpsk" if self.order == 2 else f"{self.order}psk"

    @cached_property
    def sigma_d_sq(self) -> float:
        return float(np.mean(np.abs(self.points) ** 2))

    @property
    def bits_per_symbol(self) -> float:
        return float(np.log2(self.size))

    def random_symbols(self, rng: np.random.Generator, shape) -> np.ndarray:
        return self.points[rng.integers(0, self.size, size=shape)]

    def index_of(self, d) -> np.ndarray:
        """Index of each symbol in ``points`` (symbols must be exact points)."""
        d = np.asarray(d, dtype=complex)
        dist = np.abs(d[..., None] - self.points)
        return np.argmin(dist, axis=-1)

    # ACE region description -------------------------------------------------

    def region(self, d) -> "AceRegion":
        return AceRegion.for_symbol(d, self)


@dataclass(frozen=True)
class AceRegion:
    """Extended set of a single constellation symbol.

    For QAM each real axis is ``"fixed"``, ``"lower"`` (bounded below by the
    coordinate) or ``"upper"``; for PSK the region is the wedge cut out by the
    two half-planes facing the angular neighbours.
    """

    symbol: complex
    re: str | None = None
    im: str | None = None
    normals: tuple = ()

    @classmethod
    def for_symbol(cls, d: complex, constellation: Constellation) -> "AceRegion":
        d = complex(d)
        if constellation.kind == "qam":
            edge = constellation.order - 1

            def kind(c):
                if np.isclose(c, edge):
                    return "lower"
                if np.isclose(c, -edge):
                    return "upper"
                return "fixed"

            return cls(d, re=kind(d.real), im=kind(d.imag))
        P = constellation.order
        k = int(np.argmin(np.abs(constellation.points - d)))
        if P == 2:
            nb = [constellation.points[1 - k]]
        else:
            nb = [constellation.points[(k - 1) % P], constellation.points[(k + 1) % P]]
        return cls(d, normals=tuple(complex(d - n) for n in nb))

    def contains(self, s: complex, tol: float = 1e-9) -> bool:
        s = complex(s)
        if self.normals:
            return all(np.real((s - self.symbol) * np.conj(n)) >= -tol for n in self.normals)
        ok = True
        for c_s, c_d, k in ((s.real, self.symbol.real, self.re), (s.imag, self.symbol.imag, self.im)):
            if k == "fixed":
                ok &= abs(c_s - c_d) <= tol
            elif k == "lower":
                ok &= c_s >= c_d - tol
            else:
                ok &= c_s <= c_d + tol
        return bool(ok)


def _qam_axis_clamp(u_ax, d_ax, edge):
    lower = np.isclose(d_ax, edge)
    upper = np.isclose(d_ax, -edge)
    s = np.where(lower, np.maximum(u_ax, d_ax), np.where(upper, np.minimum(u_ax, d_ax), d_ax))
    keep = (lower & (u_ax >= d_ax)) | (upper & (u_ax <= d_ax))
    return s, keep.astype(float)


def _psk_project(u, d, constellation):
    """Projection onto the PSK wedge; also returns the eigenvalues of the
    (real 2x2) Jacobian, which are 1 in the interior, (1, 0) on a face and 0
    at the apex."""
    P = constellation.order
    pts = constellation.points
    k = constellation.index_of(d)
    y = u - d
    if P == 2:
        n = d - pts[1 - k]
        a = np.real(y * np.conj(n))
        inside = a >= 0
        s = np.where(inside, u, u - a * n / np.abs(n) ** 2)
        slopes = np.stack([np.ones_like(a), inside.astype(float)], axis=-1)
        return s, slopes

    n1 = d - pts[(k - 1) % P]
    n2 = d - pts[(k + 1) % P]
    a1 = np.real(y * np.conj(n1))
    a2 = np.real(y * np.conj(n2))
    inside = (a1 >= 0) & (a2 >= 0)
    # projection onto each boundary line through d
    t1 = 1j * n1 / np.abs(n1)
    t2 = 1j * n2 / np.abs(n2)
    p1 = np.real(y * np.conj(t1)) * t1
    p2 = np.real(y * np.conj(t2)) * t2
    ok1 = np.real(p1 * np.conj(n2)) >= -_TIE_TOL
    ok2 = np.real(p2 * np.conj(n1)) >= -_TIE_TOL
    big = np.inf
    e1 = np.where(ok1 & (a1 < 0), np.abs(y - p1), big)
    e2 = np.where(ok2 & (a2 < 0), np.abs(y - p2), big)
    e0 = np.abs(y)
    choice = np.argmin(np.stack([e0, e1, e2], axis=-1), axis=-1)
    proj = np.select([choice == 1, choice == 2], [p1, p2], default=0j)
    s = np.where(inside, u, d + proj)
    on_face = ~inside & (choice > 0)
    slopes = np.stack([(inside | on_face).astype(float), inside.astype(float)], axis=-1)
    return s, slopes


def ace_project(u, d, constellation: Constellation):
    """Euclidean projection of ``u`` onto the extended set of symbol ``d``.

    Returns ``(s, slopes)`` where ``slopes[..., :]`` holds two real numbers
    whose half-sum is the Wirtinger derivative of the projection. For QAM they
    are the derivatives of the real and imaginary clamps.
    """
    u = np.asarray(u, dtype=complex)
    d = np.asarray(d, dtype=complex)
    u, d = np.broadcast_arrays(u, d)
    if constellation.kind == "qam":
        edge = constellation.order - 1
        s_re, k_re = _qam_axis_clamp(u.real, d.real, edge)
        s_im, k_im = _qam_axis_clamp(u.imag, d.imag, edge)
        return s_re + 1j * s_im, np.stack([k_re, k_im], axis=-1)
    return _psk_project(u, d, constellation)


def in_extended_set(s, d, constellation: Constellation, tol: float = 1e-9) -> bool:
    """Membership test ``Re{(s-d)(d-d')*} >= 0`` against every other point."""
    s, d = complex(s), complex(d)
    others = constellation.points[np.abs(constellation.points - d) > 1e-12]
    scale = max(1.0, abs(s), abs(d))
    return bool(np.all(np.real((s - d) * np.conj(d - others)) >= -tol * scale))


def hard_detect(y, constellation: Constellation):
    """Minimum-distance decision; ties resolve to the smallest point index."""
    y = np.asarray(y, dtype=complex)
    dist = np.abs(y[..., None] - constellation.points) ** 2
    best = dist.min(axis=-1, keepdims=True)
    idx = np.argmax(dist <= best + _TIE_TOL * np.maximum(best, 1.0), axis=-1)
    return constellation.points[idx]
