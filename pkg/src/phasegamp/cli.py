"""Command-line experiment runner.

    phasegamp <kind> CONFIG.json [--out DIR] [--name NAME] [--plot] [--workers N]

Writes ``NAME.csv`` (one row per SNR or frequency point), ``NAME.meta.json``
and, with ``--plot``, ``NAME.svg``. Exit codes: 0 ok, 2 configuration error,
3 numerical failure, 130 interrupted (rows finished so far are kept).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (KINDS, ConfigError, ExperimentConfig, monte_carlo_sweep, ota_spectrum,
                          resolve_workers, sevo_curve, trp_spectrum)
from .gamp import NumericalError
from .sevo import SeConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INTERRUPT = 0, 2, 3, 130

# CSV header -> SweepPoint attribute
SWEEP_COLUMNS = {
    "snr_db": "snr_db",
    "ebn0_db": "ebn0_db",
    "ber_mc": "ber",
    "ber_se": "ber_se",
    "ser_mc": "ser",
    "ser_se": "ser_se",
    "mse": "mse",
    "bit_errors": "bit_errors",
    "symbol_errors": "symbol_errors",
    "bits": "bits",
    "symbols": "symbols",
    "trials": "trials",
    "mean_iterations": "mean_iterations",
    "unreliable": "unreliable",
}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if np.isnan(v) else format(v, ".10g")


class CsvWriter:
    """Row-at-a-time CSV writer that flushes every row."""

    def __init__(self, path: Path, header):
        self.fh = open(path, "w", encoding="utf-8", newline="\n")
        self.fh.write(",".join(header) + "\n")
        self.fh.flush()

    def row(self, values):
        self.fh.write(",".join(_fmt(v) for v in values) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()


def load_config(path: Path, kind: str) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}:1:1: expected a JSON object")
    if doc.get("kind", kind) != kind:
        raise ConfigError(f"{path}: field 'kind': file says {doc['kind']!r}, command is {kind!r}")
    doc["kind"] = kind
    try:
        return ExperimentConfig.from_dict(doc)
    except TypeError as e:
        raise ConfigError(f"{path}: {e}") from None
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _git_revision():
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None


# per-kind runners: each writes rows through ``csv`` and returns (metadata, plot data)

def _run_sweep(cfg, csv_path, workers):
    w = CsvWriter(csv_path, list(SWEEP_COLUMNS))
    points = []

    def emit(p):
        points.append(p)
        w.row([getattr(p, a) for a in SWEEP_COLUMNS.values()])

    try:
        monte_carlo_sweep(cfg, workers, on_point=emit)
    finally:
        w.close()
    meta = {"points": [{"snr_db": p.snr_db, "wall_time": p.wall_time, "unreliable": p.unreliable}
                       for p in points]}
    curves = {"ber_mc": ([p.snr_db for p in points], [p.ber for p in points])}
    if any(np.isfinite(p.ber_se) for p in points):
        curves["ber_se"] = ([p.snr_db for p in points], [p.ber_se for p in points])
    return meta, ("SNR [dB]", "BER", True, curves)


def _run_sevo(cfg, csv_path, workers):
    res = sevo_curve(cfg)
    labels = list(res.capacity)
    bps = cfg.const.bits_per_symbol
    w = CsvWriter(csv_path, ["snr_db", "ebn0_db"] + [f"capacity_b{lab}" for lab in labels])
    for i, s in enumerate(res.snr_db):
        w.row([s, s - 10 * np.log10(bps)] + [res.capacity[lab][i] for lab in labels])
    w.close()
    curves = {f"b={lab}": (res.snr_db, res.capacity[lab]) for lab in labels}
    return {}, ("SNR [dB]", "rate [bit/s/Hz]", False, curves)


def _run_spectrum(cfg, csv_path, workers):
    res = ota_spectrum(cfg) if cfg.kind == "ota-spectrum" else trp_spectrum(cfg)
    labels = list(res.curves)
    w = CsvWriter(csv_path, ["freq"] + [f"psd_{lab}" for lab in labels] + [f"psd_{lab}_db" for lab in labels])
    f = res.freq
    for i in range(len(f)):
        w.row([f[i]] + [res.curves[lab].psd[i] for lab in labels]
              + [10 * np.log10(max(res.curves[lab].psd[i], 1e-300)) for lab in labels])
    w.close()
    meta = {"bands": {lab: {"in_band": s.in_band, "out_band": s.out_band, "aclr_db": s.aclr_db}
                      for lab, s in res.curves.items()}}
    if cfg.kind == "ota-spectrum":
        curves = {lab: (f, s.normalised_db()) for lab, s in res.curves.items()}
        ylabel = "PSD [dB rel. in-band]"
    else:
        curves = {lab: (f, 10 * np.log10(np.maximum(s.psd, 1e-300))) for lab, s in res.curves.items()}
        ylabel = "TRP [dB]"
    return meta, ("normalised frequency", ylabel, False, curves)


RUNNERS = {
    "flat-sweep": _run_sweep,
    "block-sweep": _run_sweep,
    "sevo-curve": _run_sevo,
    "ota-spectrum": _run_spectrum,
    "trp-spectrum": _run_spectrum,
}


def write_plot(path: Path, title: str, spec) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xlabel, ylabel, logy, curves = spec
    plt.rcParams["svg.hashsalt"] = "phasegamp"
    fig, ax = plt.subplots(figsize=(6, 4))
    for lab, (x, y) in curves.items():
        ax.plot(x, y, marker="o" if logy else None, label=lab)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phasegamp", description="Phase-quantised precoding experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        s = sub.add_parser(kind)
        s.add_argument("config", type=Path, help="JSON experiment configuration")
        s.add_argument("--out", type=Path, default=Path("."), help="output directory")
        s.add_argument("--name", help="output base name (default: config 'name')")
        s.add_argument("--plot", action="store_true", help="also write an SVG figure")
        s.add_argument("--workers", type=int, help="worker processes (default: $PHASEGAMP_WORKERS or 1)")
    return p


def run_cli(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.kind)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    name = args.name or cfg.name
    args.out.mkdir(parents=True, exist_ok=True)
    csv_path = args.out / f"{name}.csv"
    workers = resolve_workers(args.workers)
    meta = {
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "version": __version__,
        "git": _git_revision(),
        "workers": workers,
    }
    t0 = time.perf_counter()
    status = EXIT_OK
    plot = None
    try:
        extra, plot = RUNNERS[cfg.kind](cfg, csv_path, workers)
        meta.update(extra)
    except ConfigError as e:
        print(f"config error: {args.config}: {e}", file=sys.stderr)
        status = EXIT_CONFIG
    except (NumericalError, SeConvergenceError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        status = EXIT_NUMERIC
    except KeyboardInterrupt:
        print("interrupted; partial results kept", file=sys.stderr)
        status = EXIT_INTERRUPT
    meta["runtime_s"] = time.perf_counter() - t0
    meta["status"] = status
    (args.out / f"{name}.meta.json").write_text(json.dumps(meta, indent=2, default=str) + "\n",
                                                encoding="utf-8")
    if status == EXIT_OK and args.plot:
        write_plot(args.out / f"{name}.svg", name, plot)
    return status


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
