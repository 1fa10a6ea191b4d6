"""Monte Carlo sweeps, spectrum measurements and analytic curves.

Every trial draws its channel and symbols from the counter-seeded stream
``default_rng([seed, trial])`` and its noise from ``[seed, trial, point+1]``,
so results do not depend on the number of workers or on execution order.
The same channels are reused across SNR points and across runs that share a
seed, which makes curve-to-curve comparisons less noisy.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from .alphabet import Constellation, PhaseAlphabet, hard_detect
from .baselines import quantized_zf_block, quantized_zf_precoder
from .block import (BLOCK_CONFIG, BlockProblem, block_forward, build_shaper, run_block_gamp,
                    stream_to_symbols, symbols_to_stream)
from .channel import (WidebandChannel, coupling_matrix_upa, crandn, draw_correlated_flat,
                      draw_iid_flat, draw_ray_channel, draw_ray_params)
from .gamp import SER_CONFIG, GampConfig, MseProblem, SerProblem, run_gamp
from .sevo import SeConfig, capacity, optimize_beta, solve_ser_fixed_point
from .spectrum import Spectrum, ota_psd, trp_psd

KINDS = ("flat-sweep", "block-sweep", "sevo-curve", "ota-spectrum", "trp-spectrum")
CRITERIA = ("mse-ace", "mse-no-ace", "ser")
CHANNELS = ("iid-flat", "correlated-flat", "ray-wideband")
WORKERS_ENV = "PHASEGAMP_WORKERS"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    name: str = "experiment"
    N: int = 40
    K: int = 20
    M: int = 256
    b: Optional[int] = 2
    constellation: str = "qpsk"
    criterion: str = "mse-ace"
    precoder: str = "gamp"  # "gamp" or "zf"
    snr_db: list = field(default_factory=lambda: [0.0, 3.0, 6.0, 9.0, 12.0])
    trials: int = 100  # channel realisations
    vectors: int = 50  # symbol vectors (flat) or blocks (block) per channel
    max_trials: Optional[int] = None  # cap for error-floor extension
    min_errors: int = 100
    seed: int = 0
    gamp: dict = field(default_factory=dict)  # GampConfig overrides
    shaper: str = "ofdm-cp"
    rolloff: float = 0.22
    layout: str = "center"
    channel: str = "iid-flat"
    rays: int = 10
    max_delay_samples: float = 50.0
    Ts: float = 1 / 7e9
    fc: float = 60.5e9
    array_side: int = 8
    spacing: list = field(default_factory=lambda: [0.5])  # element spacing / wavelength
    b_values: list = field(default_factory=lambda: [1, 2, 3, None])
    with_se: bool = True
    welch: dict = field(default_factory=dict)

    def __post_init__(self):
        def bad(name, why):
            raise ConfigError(f"field '{name}': {why}")

        if self.kind not in KINDS:
            bad("kind", f"must be one of {', '.join(KINDS)}")
        for name in ("N", "K", "M", "trials", "vectors", "min_errors"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                bad(name, f"must be a positive integer, got {v!r}")
        if self.b is not None and (not isinstance(self.b, int) or self.b < 1):
            bad("b", f"must be a positive integer or null, got {self.b!r}")
        if self.criterion not in CRITERIA:
            bad("criterion", f"must be one of {', '.join(CRITERIA)}")
        if self.precoder not in ("gamp", "zf"):
            bad("precoder", "must be 'gamp' or 'zf'")
        if self.channel not in CHANNELS:
            bad("channel", f"must be one of {', '.join(CHANNELS)}")
        if not isinstance(self.snr_db, (list, tuple)) or not self.snr_db:
            bad("snr_db", "must be a nonempty list")
        try:
            self.const = Constellation.from_name(self.constellation)
        except ValueError as e:
            bad("constellation", str(e))
        if self.criterion == "ser" and self.const.name != "qpsk":
            bad("criterion", "the SER criterion needs QPSK")
        if self.max_trials is not None and self.max_trials < self.trials:
            bad("max_trials", "must be at least trials")
        try:
            self.gamp_config()
        except (TypeError, ValueError) as e:
            bad("gamp", str(e))
        if self.kind in ("block-sweep", "ota-spectrum", "trp-spectrum"):
            try:
                self.make_shaper()
            except ValueError as e:
                bad("shaper", str(e))
            if self.M & (self.M - 1):
                bad("M", "must be a power of two")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown field(s): {', '.join(sorted(extra))}")
        if "kind" not in doc:
            raise ConfigError("field 'kind': missing")
        return cls(**doc)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def is_block(self) -> bool:
        return self.kind in ("block-sweep", "ota-spectrum", "trp-spectrum")

    def gamp_config(self) -> GampConfig:
        if self.is_block:
            base = asdict(BLOCK_CONFIG)
        elif self.criterion == "ser":
            base = asdict(SER_CONFIG)
        else:
            base = {}
        base.update(self.gamp)
        return GampConfig(**base)

    def make_shaper(self):
        return build_shaper(self.shaper, self.M, self.rolloff, self.layout)


# bit mapping (per-axis Gray labels) --------------------------------------------

def _gray(i):
    return i ^ (i >> 1)


def _popcount(v):
    v = np.asarray(v, dtype=np.int64)
    n = np.zeros_like(v)
    while np.any(v):
        n += v & 1
        v = v >> 1
    return n


def bit_errors(d_hat, d, constellation: Constellation) -> int:
    """Bit errors under a Gray labelling (per axis for QAM, around the
    circle for PSK)."""
    if constellation.kind == "qam":
        L = constellation.order

        def level(v):
            return np.rint((np.asarray(v) + L - 1) / 2).astype(np.int64)

        diff = (_gray(level(d_hat.real)) ^ _gray(level(d.real))) | 0
        diff_im = _gray(level(d_hat.imag)) ^ _gray(level(d.imag))
        return int(_popcount(diff).sum() + _popcount(diff_im).sum())
    i = constellation.index_of(d_hat)
    j = constellation.index_of(d)
    return int(_popcount(_gray(i) ^ _gray(j)).sum())


# single trials -----------------------------------------------------------------

def _flat_channel(cfg: ExperimentConfig, rng):
    if cfg.channel == "correlated-flat":
        B = coupling_matrix_upa(cfg.array_side, cfg.spacing[0], 1.0).B
        if B.shape[0] != cfg.N:
            raise ConfigError("field 'array_side': array_side^2 must equal N")
        return draw_correlated_flat(cfg.K, B, rng).H
    return draw_iid_flat(cfg.K, cfg.N, rng).H


def _wideband_channel(cfg: ExperimentConfig, rng, spacing=None):
    if cfg.channel == "ray-wideband":
        params = draw_ray_params(cfg.K, cfg.rays, rng, cfg.Ts, cfg.max_delay_samples)
        ch = draw_ray_channel(params, cfg.N, cfg.M, cfg.Ts, cfg.fc)
        # unit mean gain per user, matching the IID convention
        return WidebandChannel(ch.H / np.sqrt(cfg.N), cfg.Ts, cfg.fc)
    if cfg.channel == "correlated-flat":
        sp = cfg.spacing[0] if spacing is None else spacing
        B = coupling_matrix_upa(cfg.array_side, sp, 1.0).B
        if B.shape[0] != cfg.N:
            raise ConfigError("field 'array_side': array_side^2 must equal N")
        return WidebandChannel.from_flat(draw_correlated_flat(cfg.K, B, rng).H, cfg.M)
    return WidebandChannel.from_flat(draw_iid_flat(cfg.K, cfg.N, rng).H, cfg.M)


def _precode_flat(cfg, H, d, sigma_n_sq):
    A = PhaseAlphabet(cfg.b)
    if cfg.precoder == "zf":
        x, beta = quantized_zf_precoder(H, d, A, sigma_n_sq, cfg.const)
        return x, beta, 0.0
    if cfg.criterion == "ser":
        st = run_gamp(SerProblem(H, d, sigma_n_sq), A, cfg.gamp_config())
    else:
        st = run_gamp(MseProblem(H, d, sigma_n_sq, cfg.const, ace=cfg.criterion == "mse-ace"), A,
                      cfg.gamp_config())
    return st.x, st.beta, float(np.mean(st.iterations))


def _precode_block(cfg, shaper, channel, stream, sigma_n_sq):
    A = PhaseAlphabet(cfg.b)
    if cfg.precoder == "zf":
        x, beta = quantized_zf_block(channel.H, stream, shaper, A, sigma_n_sq, cfg.const)
        return x, beta, 0.0
    prob = BlockProblem(channel, stream, sigma_n_sq, shaper, cfg.const, ace=cfg.criterion == "mse-ace")
    res = run_block_gamp(prob, A, cfg.gamp_config())
    return res.x, res.beta, float(np.mean(res.state.iterations))


def run_trial(cfg: ExperimentConfig, point: int, trial: int) -> dict:
    """Counts for one channel realisation at one SNR point."""
    rng = np.random.default_rng([cfg.seed, trial])
    noise_rng = np.random.default_rng([cfg.seed, trial, point + 1])
    s2 = 10.0 ** (-float(cfg.snr_db[point]) / 10)
    const = cfg.const
    if cfg.kind == "block-sweep":
        shaper = cfg.make_shaper()
        channel = _wideband_channel(cfg, rng)
        d = const.random_symbols(rng, (cfg.vectors, cfg.M // 2, cfg.K))
        x, beta, its = _precode_block(cfg, shaper, channel, symbols_to_stream(d, shaper), s2)
        y = block_forward(x, channel.H) + crandn(noise_rng, (cfg.vectors, cfg.M, cfg.K), s2)
        est = stream_to_symbols(shaper.matched_filter(np.asarray(beta)[..., None, None] * y), shaper)
    else:
        H = _flat_channel(cfg, rng)
        d = const.random_symbols(rng, (cfg.vectors, cfg.K))
        x, beta, its = _precode_flat(cfg, H, d, s2)
        y = (H @ x[..., None])[..., 0] + crandn(noise_rng, d.shape, s2)
        est = np.asarray(beta)[..., None] * y
    dh = hard_detect(est, const)
    return {
        "symbol_errors": int(np.sum(dh != d)),
        "bit_errors": bit_errors(dh, d, const),
        "symbols": int(d.size),
        "bits": int(d.size * round(const.bits_per_symbol)),
        "sq_error": float(np.sum(np.abs(est - d) ** 2)),
        "iterations": its,
    }


def _trial_job(args):
    cfg_dict, point, trial = args
    return run_trial(ExperimentConfig.from_dict(cfg_dict), point, trial)


# sweeps --------------------------------------------------------------------------

@dataclass
class SweepPoint:
    snr_db: float
    ebn0_db: float
    ser: float
    ber: float
    mse: float
    symbol_errors: int
    bit_errors: int
    symbols: int
    bits: int
    trials: int
    mean_iterations: float
    unreliable: bool
    ser_se: float = float("nan")
    ber_se: float = float("nan")
    wall_time: float = 0.0


@dataclass
class SweepResult:
    config: ExperimentConfig
    points: list

    CSV_FIELDS = ("snr_db", "ebn0_db", "ser", "ber", "mse", "symbol_errors", "bit_errors", "symbols",
                  "bits", "trials", "mean_iterations", "unreliable", "ser_se", "ber_se")

    def column(self, name) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points])


def resolve_workers(workers: Optional[int] = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def _run_trials(cfg, point, trial_ids, workers):
    jobs = [(cfg.to_dict(), point, t) for t in trial_ids]
    if workers == 1 or len(jobs) == 1:
        return [_trial_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_trial_job, jobs))


def se_prediction(cfg: ExperimentConfig, snr_db: float):
    """``(ser, ber)`` from state evolution, or NaNs where no analysis applies."""
    nan = (float("nan"), float("nan"))
    if cfg.precoder != "gamp" or cfg.channel != "iid-flat" or cfg.const.kind != "qam":
        return nan
    se = SeConfig(b=cfg.b, ratio=cfg.K / cfg.N, snr=10 ** (snr_db / 10), constellation=cfg.const,
                  criterion=cfg.criterion)
    pt = solve_ser_fixed_point(se) if cfg.criterion == "ser" else optimize_beta(se)
    ber = pt.ber if cfg.const.order == 2 else float("nan")
    return float(pt.ser), float(ber)


def monte_carlo_sweep(cfg: ExperimentConfig, workers: Optional[int] = None,
                      on_point: Optional[Callable[[SweepPoint], None]] = None) -> SweepResult:
    """Symbol/bit error rates over the SNR grid.

    If fewer than ``min_errors`` symbol errors were seen, more trials are run
    (in chunks of ``trials``) up to ``max_trials``; rates still resting on
    fewer errors are flagged unreliable.
    """
    if cfg.kind not in ("flat-sweep", "block-sweep"):
        raise ConfigError(f"field 'kind': {cfg.kind} is not a sweep")
    workers = resolve_workers(workers)
    cap = cfg.max_trials or cfg.trials
    points = []
    for i, snr in enumerate(cfg.snr_db):
        t0 = time.perf_counter()
        counts = _run_trials(cfg, i, range(cfg.trials), workers)
        done = cfg.trials
        while sum(c["symbol_errors"] for c in counts) < cfg.min_errors and done < cap:
            more = range(done, min(done + cfg.trials, cap))
            counts += _run_trials(cfg, i, more, workers)
            done = more.stop
        tot = {k: sum(c[k] for c in counts) for k in counts[0]}
        ser_se, ber_se = se_prediction(cfg, snr) if (cfg.with_se and cfg.kind == "flat-sweep") \
            else (float("nan"), float("nan"))
        p = SweepPoint(
            snr_db=float(snr),
            ebn0_db=float(snr - 10 * np.log10(cfg.const.bits_per_symbol)),
            ser=tot["symbol_errors"] / tot["symbols"],
            ber=tot["bit_errors"] / tot["bits"],
            mse=tot["sq_error"] / tot["symbols"],
            symbol_errors=tot["symbol_errors"],
            bit_errors=tot["bit_errors"],
            symbols=tot["symbols"],
            bits=tot["bits"],
            trials=done,
            mean_iterations=tot["iterations"] / len(counts),
            unreliable=tot["symbol_errors"] < cfg.min_errors,
            ser_se=ser_se,
            ber_se=ber_se,
            wall_time=time.perf_counter() - t0,
        )
        points.append(p)
        if on_point is not None:
            on_point(p)
    return SweepResult(cfg, points)


# spectra ----------------------------------------------------------------------------

@dataclass
class SpectrumResult:
    config: ExperimentConfig
    curves: dict  # label -> Spectrum

    @property
    def freq(self):
        return next(iter(self.curves.values())).freq


def _spectrum_trial(cfg, trial, precoder, spacing=None):
    rng = np.random.default_rng([cfg.seed, trial])
    s2 = 10.0 ** (-float(cfg.snr_db[0]) / 10)
    shaper = cfg.make_shaper()
    channel = _wideband_channel(cfg, rng, spacing)
    d = cfg.const.random_symbols(rng, (cfg.vectors, cfg.M // 2, cfg.K))
    sub = ExperimentConfig.from_dict({**cfg.to_dict(), "kind": "block-sweep", "precoder": precoder})
    x, _, _ = _precode_block(sub, shaper, channel, symbols_to_stream(d, shaper), s2)
    return x, channel.H


def ota_spectrum(cfg: ExperimentConfig) -> SpectrumResult:
    """Received PSD (noiseless) for the nonlinear precoder and quantised ZF.

    The precoders are designed at the first SNR of ``snr_db``.
    """
    curves = {}
    for pre in ("gamp", "zf"):
        xs, Hs = zip(*(_spectrum_trial(cfg, t, pre) for t in range(cfg.trials)))
        curves[pre] = ota_psd(np.stack(xs), np.stack(Hs)[:, None], **cfg.welch)
    return SpectrumResult(cfg, curves)


def trp_spectrum(cfg: ExperimentConfig) -> SpectrumResult:
    """Total radiated power spectra per element spacing and precoder."""
    curves = {}
    for sp in cfg.spacing:
        B = coupling_matrix_upa(cfg.array_side, sp, 1.0).B
        for pre in ("gamp", "zf"):
            xs = [_spectrum_trial(cfg, t, pre, sp)[0] for t in range(cfg.trials)]
            curves[f"{pre}_{sp:g}"] = trp_psd(np.stack(xs), B)
    return SpectrumResult(cfg, curves)


# analytic curves ------------------------------------------------------------------

@dataclass
class CurveResult:
    config: ExperimentConfig
    snr_db: np.ndarray
    capacity: dict  # label -> array


def sevo_curve(cfg: ExperimentConfig) -> CurveResult:
    """Achievable rate ``log2(1 + SINR_opt)`` versus SNR for several resolutions."""
    snr = np.asarray(cfg.snr_db, dtype=float)
    out = {}
    for b in cfg.b_values:
        label = "inf" if b is None else str(b)
        out[label] = np.array([capacity(b, cfg.N / cfg.K, 10 ** (s / 10)) for s in snr])
    return CurveResult(cfg, snr, out)
