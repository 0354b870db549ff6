"""Shared domain types and closed-form math helpers.

Everything here is a pure function over immutable values; the dataclasses
are frozen and validated on construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

__all__ = [
    "ProtocolParams",
    "ChannelModel",
    "DetectorModel",
    "TallyCounts",
    "SecretKeyReport",
    "binary_entropy",
    "qber_from_visibility",
    "visibility_from_qber",
    "photon_number_prob",
    "epsilon_budget",
    "db_to_transmittance",
    "EPSILON_TESTS",
]

# Number of Hoeffding-type deviation tests sharing the secrecy budget; this
# is the 19 inside the 6*log2(19/eps_sec) key-length penalty.
EPSILON_TESTS = 19

INTENSITY_LABELS = ("mu1", "mu2", "mu3")


def db_to_transmittance(loss_db: float) -> float:
    """Convert a loss in dB to a transmittance in (0, 1]."""
    if loss_db < 0:
        raise ValueError(f"loss must be >= 0 dB, got {loss_db}")
    return 10.0 ** (-loss_db / 10.0)


def binary_entropy(x: float) -> float:
    """Binary entropy H2(x) in bits, with H2(0) = H2(1) = 0 by continuity."""
    if x < 0.0 or x > 1.0:
        raise ValueError(f"binary_entropy requires x in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def qber_from_visibility(vis: float) -> float:
    """X-basis error rate of an interferometer with the given visibility."""
    if vis < 0.0 or vis > 1.0:
        raise ValueError(f"visibility must be in [0, 1], got {vis}")
    return (1.0 - vis) / 2.0


def visibility_from_qber(qber_x: float) -> float:
    """Inverse of qber_from_visibility on [0, 0.5]."""
    if qber_x < 0.0 or qber_x > 0.5:
        raise ValueError(f"qber_x must be in [0, 0.5], got {qber_x}")
    return 1.0 - 2.0 * qber_x


def epsilon_budget(eps_sec: float) -> float:
    """Per-test epsilon: the secrecy failure budget split over the union bound."""
    if not (0.0 < eps_sec < 1.0):
        raise ValueError(f"eps_sec must be in (0, 1), got {eps_sec}")
    return eps_sec / EPSILON_TESTS


@dataclass(frozen=True)
class ProtocolParams:
    """Transmitter-side protocol constants.

    Intensities are mean photon numbers per pulse; ``p_mu`` is the probability
    of choosing each of (mu1, mu2, mu3) and must sum to 1.
    """

    mu1: float
    mu2: float
    mu3: float = 0.0
    p_mu: tuple[float, float, float] = (0.7, 0.3, 0.0)
    p_z_alice: float = 0.5
    p_z_bob: float = 0.5
    rep_rate: float = 119e6
    block_size_nz: int = 100_000
    eps_sec: float = 1e-12
    eps_corr: float = 1e-12
    bin_separation: float = 800e-12

    def __post_init__(self):
        if not (self.mu1 > self.mu2 >= self.mu3 >= 0.0):
            raise ValueError(
                f"intensities must satisfy mu1 > mu2 >= mu3 >= 0, got "
                f"({self.mu1}, {self.mu2}, {self.mu3})"
            )
        if self.mu1 <= 0.0:
            raise ValueError("mu1 must be positive")
        p = np.asarray(self.p_mu, dtype=float)
        if p.shape != (3,) or np.any(p < 0.0):
            raise ValueError(f"p_mu must be 3 nonnegative entries, got {self.p_mu}")
        if abs(float(p.sum()) - 1.0) > 1e-12:
            raise ValueError(f"p_mu must sum to 1, got sum {p.sum()!r}")
        if not (0.0 < self.p_z_alice < 1.0):
            raise ValueError(f"p_z_alice must be in (0, 1), got {self.p_z_alice}")
        if not (0.0 < self.p_z_bob < 1.0):
            raise ValueError(f"p_z_bob must be in (0, 1), got {self.p_z_bob}")
        if self.rep_rate <= 0.0:
            raise ValueError("rep_rate must be positive")
        if self.block_size_nz < 1:
            raise ValueError("block_size_nz must be >= 1")
        for name in ("eps_sec", "eps_corr"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ValueError(f"{name} must be in (0, 1), got {v}")

    @property
    def intensities(self) -> tuple[float, float, float]:
        return (self.mu1, self.mu2, self.mu3)

    @property
    def frame_period(self) -> float:
        return 1.0 / self.rep_rate

    def mean_intensity(self) -> float:
        return float(np.dot(self.p_mu, self.intensities))

    def with_overrides(self, **kwargs) -> "ProtocolParams":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class ChannelModel:
    """Quantum channel plus receiver insertion losses and interferometer quality."""

    channel_loss_db: float
    receiver_loss_z_db: float = 1.0
    receiver_loss_x_db: float = 3.0
    visibility: float = 0.98

    def __post_init__(self):
        for name in ("channel_loss_db", "receiver_loss_z_db", "receiver_loss_x_db"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not (0.0 <= self.visibility <= 1.0):
            raise ValueError(f"visibility must be in [0, 1], got {self.visibility}")

    def transmittance_z(self) -> float:
        return db_to_transmittance(self.channel_loss_db + self.receiver_loss_z_db)

    def transmittance_x(self) -> float:
        return db_to_transmittance(self.channel_loss_db + self.receiver_loss_x_db)


MAX_GATE_RATE = 150e6  # circuit limit of the fast-gated quenching design


@dataclass(frozen=True)
class DetectorModel:
    """One detector's response model.

    ``mode`` is "gated" (armed once per frame, synchronously with the pulse
    clock) or "free_running".  For gated detectors the dark probability per
    gate is ``dark_rate * gate_on_window`` when an ON window is given, else
    ``dark_rate / gate_rate``.  Hold-off is realized as an integer number of
    skipped gates (gated) or skipped frame slots (free-running).
    """

    name: str
    efficiency: float
    dark_rate: float
    mode: str = "gated"
    gate_rate: float = 119e6
    gate_on_window: float | None = None
    holdoff_time: float = 1e-6
    afterpulse_amplitude: float = 0.0
    afterpulse_tau: float = 1e-6
    # probability that a genuine photon detection is recorded in the wrong
    # time bin (timing jitter / bin crosstalk); the intrinsic Z error floor
    intrinsic_error_z: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.efficiency <= 1.0):
            raise ValueError(f"efficiency must be in [0, 1], got {self.efficiency}")
        if self.dark_rate < 0.0:
            raise ValueError("dark_rate must be >= 0")
        if self.holdoff_time < 0.0:
            raise ValueError("holdoff_time must be >= 0")
        if self.mode not in ("gated", "free_running"):
            raise ValueError(f"mode must be 'gated' or 'free_running', got {self.mode!r}")
        if self.mode == "gated":
            if self.gate_rate <= 0.0:
                raise ValueError("gate_rate must be positive in gated mode")
            if self.gate_rate > MAX_GATE_RATE:
                raise ValueError(
                    f"gate_rate {self.gate_rate:.3g} Hz exceeds the "
                    f"{MAX_GATE_RATE:.0f} Hz circuit limit"
                )
        if not (0.0 <= self.afterpulse_amplitude < 1.0):
            raise ValueError("afterpulse_amplitude must be in [0, 1)")
        if self.afterpulse_tau <= 0.0:
            raise ValueError("afterpulse_tau must be positive")
        if not (0.0 <= self.intrinsic_error_z <= 0.5):
            raise ValueError("intrinsic_error_z must be in [0, 0.5]")

    def holdoff_slots(self, frame_period: float) -> int:
        """Hold-off expressed in skipped slots (gates or frames).

        The hold-off is realized as an integer number of skipped slots, at
        least ceil(holdoff_time * slot_rate); a tiny slack absorbs float
        representation noise in exact products.
        """
        rate = self.gate_rate if self.mode == "gated" else 1.0 / frame_period
        return max(0, math.ceil(self.holdoff_time * rate - 1e-9))

    def dark_prob_per_slot(self, frame_period: float) -> float:
        if self.mode == "gated":
            if self.gate_on_window is not None:
                p = self.dark_rate * self.gate_on_window
            else:
                p = self.dark_rate / self.gate_rate
        else:
            p = self.dark_rate * frame_period
        return min(p, 1.0)


@dataclass
class TallyCounts:
    """Per-basis, per-intensity detection and error counts.

    Arrays are indexed by intensity (mu1, mu2, mu3).  Totals are derived.
    """

    n_z: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    m_z: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    n_x: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    m_x: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))

    def __post_init__(self):
        for name in ("n_z", "m_z", "n_x", "m_x"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if arr.shape != (3,):
                raise ValueError(f"{name} must have 3 entries, got shape {arr.shape}")
            setattr(self, name, arr)
        self.validate()

    def validate(self):
        for arr, name in ((self.n_z, "n_z"), (self.m_z, "m_z"),
                          (self.n_x, "n_x"), (self.m_x, "m_x")):
            if np.any(arr < 0):
                raise ValueError(f"{name} has negative entries: {arr.tolist()}")
        if np.any(self.m_z > self.n_z):
            raise ValueError(f"m_z exceeds n_z: {self.m_z.tolist()} > {self.n_z.tolist()}")
        if np.any(self.m_x > self.n_x):
            raise ValueError(f"m_x exceeds n_x: {self.m_x.tolist()} > {self.n_x.tolist()}")

    @property
    def n_z_total(self) -> int:
        return int(self.n_z.sum())

    @property
    def m_z_total(self) -> int:
        return int(self.m_z.sum())

    @property
    def n_x_total(self) -> int:
        return int(self.n_x.sum())

    @property
    def m_x_total(self) -> int:
        return int(self.m_x.sum())

    def qber_z(self) -> float:
        return self.m_z_total / self.n_z_total if self.n_z_total else 0.0

    def qber_x(self) -> float:
        return self.m_x_total / self.n_x_total if self.n_x_total else 0.0

    def __iadd__(self, other: "TallyCounts") -> "TallyCounts":
        self.n_z += other.n_z
        self.m_z += other.m_z
        self.n_x += other.n_x
        self.m_x += other.m_x
        return self

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "n_z": self.n_z.tolist(),
            "m_z": self.m_z.tolist(),
            "n_x": self.n_x.tolist(),
            "m_x": self.m_x.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TallyCounts":
        known = {"format_version", "n_z", "m_z", "n_x", "m_x"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown tally fields: {sorted(unknown)}")
        missing = {"n_z", "m_z", "n_x", "m_x"} - set(d)
        if missing:
            raise ValueError(f"missing tally fields: {sorted(missing)}")
        return cls(
            n_z=np.asarray(d["n_z"], dtype=np.int64),
            m_z=np.asarray(d["m_z"], dtype=np.int64),
            n_x=np.asarray(d["n_x"], dtype=np.int64),
            m_x=np.asarray(d["m_x"], dtype=np.int64),
        )


@dataclass(frozen=True)
class SecretKeyReport:
    """Outputs of one finite-key evaluation."""

    s_z0_lower: float
    s_z1_lower: float
    phi_z_upper: float
    lambda_ec: float
    key_length_l: int
    skr: float
    elapsed_protocol_time: float

    def __post_init__(self):
        if self.key_length_l < 0:
            raise ValueError("key_length_l must be clamped to >= 0")
        if not (0.0 <= self.phi_z_upper <= 0.5):
            raise ValueError(f"phi_z_upper must be in [0, 0.5], got {self.phi_z_upper}")

    def to_dict(self) -> dict:
        return {
            "s_z0_lower": self.s_z0_lower,
            "s_z1_lower": self.s_z1_lower,
            "phi_z_upper": self.phi_z_upper,
            "lambda_ec": self.lambda_ec,
            "key_length_l": self.key_length_l,
            "skr": self.skr,
            "elapsed_protocol_time": self.elapsed_protocol_time,
        }


def photon_number_prob(params: ProtocolParams, n: int) -> float:
    """A-priori probability that an emitted frame carries exactly n photons.

    Marginalizes Poissonian photon statistics over the intensity choice:
    tau_n = sum_k p_k * exp(-mu_k) * mu_k^n / n!.
    """
    if n < 0:
        raise ValueError(f"photon number must be >= 0, got {n}")
    total = 0.0
    for p_k, mu_k in zip(params.p_mu, params.intensities):
        if p_k == 0.0:
            continue
        if mu_k == 0.0:
            total += p_k if n == 0 else 0.0
        else:
            total += p_k * math.exp(-mu_k + n * math.log(mu_k) - math.lgamma(n + 1))
    return total
