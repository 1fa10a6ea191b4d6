"""Nonlinear multi-user precoding for phase-quantised transmitters.

Message-passing precoders (MSE with constellation extension, and SER),
joint precoding and spectral shaping for block transmission, state-evolution
performance predictions and a Monte Carlo / spectrum harness.
"""

__version__ = "0.1.0"

from .alphabet import (AceRegion, Constellation, PhaseAlphabet, ace_project, hard_detect,
                       in_extended_set, phase_project, phase_soft_project)
from .baselines import quantized_zf_block, quantized_zf_precoder, zf_block, zf_flat
from .block import (BLOCK_CONFIG, BlockProblem, BlockResult, Shaper, apply_block_operator,
                    block_operator_matrix, build_shaper, run_block_gamp)
from .channel import (CouplingMatrix, FlatChannel, RayParams, WidebandChannel, coupling_matrix_upa,
                      draw_correlated_flat, draw_iid_flat, draw_ray_channel, draw_ray_params,
                      load_channel, save_channel)
from .experiments import ExperimentConfig, SweepResult, monte_carlo_sweep
from .gamp import SER_CONFIG, GampConfig, GampState, MseProblem, NumericalError, SerProblem, run_gamp
from .sevo import (SeConfig, SePoint, capacity, optimize_beta, sinr_of_theta, sinr_opt,
                   solve_fixed_point, stein_theta)
from .spectrum import Spectrum, ota_psd, trp_psd
