"""Desk-scale laboratory for a one-decoy time-bin BB84 QKD link.

Photonic-layer Monte Carlo, analytic rate model, one-decoy finite-key
analysis, classical post-processing, and a two-endpoint protocol harness.
"""

from .core import (
    ChannelModel,
    DetectorModel,
    ProtocolParams,
    SecretKeyReport,
    TallyCounts,
    binary_entropy,
    epsilon_budget,
    photon_number_prob,
    qber_from_visibility,
)
from .config import ConfigError, RunConfig, RunOptions, load_config, parse_config, save_config
from .finitekey import (
    DecoyBounds,
    analyze,
    decoy_bounds,
    hoeffding_delta,
    load_tallies,
    secret_key_length,
)
from .harness import SessionConfig, SessionResult, connect_session, run_session, serve_session
from .photonics import LinkResult, StopTargetUnreachable, run_link, simulate_dead_time
from .postproc import PaSeed, confirm, privacy_amplify, reconcile, sift, toeplitz_hash
from .rates import SearchSpec, expected_rates, optimize_intensities, predict_skr
from .presets import DETECTOR_PRESETS, default_channel, default_params, detector_preset

__version__ = "0.1.0"
