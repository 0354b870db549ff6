"""Closed-form expectation model of the link and the intensity optimizer.

This is the planning-side counterpart of the Monte Carlo engine: detection
and error rates per basis and intensity, with gate-level dead-time
saturation and an afterpulse cascade correction, evaluated without
simulating events.  It is validated against `photonics.run_link` (see the
analytic/Monte-Carlo agreement tests) and drives both key-rate prediction
at large block sizes and the parameter search.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import ChannelModel, DetectorModel, ProtocolParams, SecretKeyReport, TallyCounts
from .finitekey import DEFAULT_F_EC, analyze
from .photonics import arm_survival_probs

__all__ = [
    "ArmRates",
    "ExpectedRates",
    "expected_rates",
    "predict_skr",
    "SearchSpec",
    "OptimizationResult",
    "optimize_intensities",
]


@dataclass(frozen=True)
class ArmRates:
    """Per-slot accepted-click structure for one detector arm."""

    q_k: np.ndarray            # signal click prob per slot, by intensity
    p_dark: float
    c_k: np.ndarray            # candidate prob per slot, by intensity
    c_bar: float
    y_total: float             # accepted clicks per slot, all causes
    y_prim_k: np.ndarray       # accepted signal-or-dark clicks, by intensity
    y_ap_k: np.ndarray         # accepted afterpulse clicks, by intensity
    holdoff_slots: int

    @property
    def y_prim(self) -> float:
        return float(self.y_prim_k.sum())

    @property
    def y_ap(self) -> float:
        return float(self.y_ap_k.sum())


def _arm_rates(params: ProtocolParams, detector: DetectorModel, p_survive: float) -> ArmRates:
    frame_period = params.frame_period
    mus = np.asarray(params.intensities)
    p_mu = np.asarray(params.p_mu)
    q_k = 1.0 - np.exp(-mus * p_survive)
    p_dark = detector.dark_prob_per_slot(frame_period)
    c_k = 1.0 - (1.0 - q_k) * (1.0 - p_dark)
    c_bar = float(np.dot(p_mu, c_k))
    g_off = detector.holdoff_slots(frame_period)
    tau_s = detector.afterpulse_tau / frame_period
    amp = detector.afterpulse_amplitude

    def ap_per_click(live: float) -> float:
        """Expected accepted afterpulses per accepted click.

        Trap releases follow the density amp * exp(-u / tau_s) in slots after
        the parent click.  A release inside the hold-off window [0, G) is
        absorbed; just after the window the detector is live unless a new
        candidate arrived first (survival exp(-c_bar * v) for an offset v up
        to about one more hold-off), and far out it is live with the
        stationary probability.
        """
        if amp <= 0.0:
            return 0.0
        if g_off == 0:
            return amp * tau_s
        rate = 1.0 / tau_s + c_bar
        near = math.exp(-g_off / tau_s) * (1.0 - math.exp(-g_off * rate)) / rate
        far = live * tau_s * math.exp(-2.0 * g_off / tau_s)
        return amp * (near + far)

    # accepted-click rate under dead time + afterpulse cascade.  The balance
    # y = c_bar * live + a * y with live = 1 - y * g_off is solved in closed
    # form for y at fixed a; only the weak dependence of a on the live
    # fraction is iterated (direct iteration on y diverges when c_bar * g_off
    # exceeds one, i.e. deep in saturation).
    y = c_bar / (1.0 + c_bar * g_off) if c_bar > 0 else 0.0
    a = 0.0
    for _ in range(60):
        live = max(0.0, 1.0 - y * g_off)
        a = min(ap_per_click(live), 0.95)
        y_new = c_bar / max(1.0 + c_bar * g_off - a, 1e-9)
        if abs(y_new - y) < 1e-18:
            y = y_new
            break
        y = y_new
    live = max(0.0, 1.0 - y * g_off)
    y_prim_k = p_mu * c_k * live
    y_ap_total = max(0.0, y - float(y_prim_k.sum()))
    y_ap_k = y_ap_total * p_mu
    return ArmRates(
        q_k=q_k, p_dark=p_dark, c_k=c_k, c_bar=c_bar, y_total=y,
        y_prim_k=y_prim_k, y_ap_k=y_ap_k, holdoff_slots=g_off,
    )


@dataclass(frozen=True)
class ExpectedRates:
    """Expected sifted tallies per slot and per second, plus expected QBERs."""

    z: ArmRates
    x: ArmRates
    n_z_k: np.ndarray   # sifted Z detections per slot, by intensity
    m_z_k: np.ndarray
    n_x_k: np.ndarray
    m_x_k: np.ndarray
    qber_z: float
    qber_x: float
    rep_rate: float

    @property
    def n_z_per_slot(self) -> float:
        return float(self.n_z_k.sum())

    @property
    def n_x_per_slot(self) -> float:
        return float(self.n_x_k.sum())

    def n_z_rate_hz(self) -> float:
        return self.n_z_per_slot * self.rep_rate

    def tallies_for_nz(self, n_z_target: int) -> tuple[TallyCounts, float]:
        """Expectation tallies scaled so the total Z count hits the target.

        Returns (tallies, elapsed_protocol_time_seconds).
        """
        total = self.n_z_per_slot
        if total <= 0.0:
            raise ValueError("expected Z detection rate is zero; target unreachable")
        slots = n_z_target / total
        t = TallyCounts(
            n_z=np.rint(self.n_z_k * slots).astype(np.int64),
            m_z=np.rint(self.m_z_k * slots).astype(np.int64),
            n_x=np.rint(self.n_x_k * slots).astype(np.int64),
            m_x=np.rint(self.m_x_k * slots).astype(np.int64),
        )
        return t, slots / self.rep_rate


def expected_rates(
    params: ProtocolParams,
    channel: ChannelModel,
    detector_z: DetectorModel,
    detector_x: DetectorModel,
) -> ExpectedRates:
    p_sz, p_sx = arm_survival_probs(params, channel, detector_z, detector_x)
    arm_z = _arm_rates(params, detector_z, p_sz)
    arm_x = _arm_rates(params, detector_x, p_sx)
    e_vis = (1.0 - channel.visibility) / 2.0

    # double-click discard: a click survives if the other arm did not also
    # accept a click in the same slot
    keep_z = 1.0 - arm_x.y_total
    keep_x = 1.0 - arm_z.y_total

    with np.errstate(invalid="ignore", divide="ignore"):
        denom_z = arm_z.q_k + arm_z.p_dark
        dark_frac_z = np.divide(arm_z.p_dark, denom_z, out=np.zeros(3), where=denom_z > 0)
        sig_frac_z = np.divide(arm_z.q_k, denom_z, out=np.zeros(3), where=denom_z > 0)
        denom_x = arm_x.q_k + arm_x.p_dark
        dark_frac_x = np.divide(arm_x.p_dark, denom_x, out=np.zeros(3), where=denom_x > 0)
        sig_frac_x = np.divide(arm_x.q_k, denom_x, out=np.zeros(3), where=denom_x > 0)

    pz_a = params.p_z_alice
    e_int = detector_z.intrinsic_error_z
    n_z_k = pz_a * (arm_z.y_prim_k + arm_z.y_ap_k) * keep_z
    m_z_k = pz_a * (
        arm_z.y_prim_k * (dark_frac_z * 0.5 + sig_frac_z * e_int) + arm_z.y_ap_k * 0.5
    ) * keep_z
    n_x_k = (1.0 - pz_a) * (arm_x.y_prim_k + arm_x.y_ap_k) * keep_x
    m_x_k = (1.0 - pz_a) * (
        arm_x.y_prim_k * (sig_frac_x * e_vis + dark_frac_x * 0.5) + arm_x.y_ap_k * 0.5
    ) * keep_x

    nz, nx = float(n_z_k.sum()), float(n_x_k.sum())
    return ExpectedRates(
        z=arm_z, x=arm_x,
        n_z_k=n_z_k, m_z_k=m_z_k, n_x_k=n_x_k, m_x_k=m_x_k,
        qber_z=float(m_z_k.sum()) / nz if nz > 0 else 0.0,
        qber_x=float(m_x_k.sum()) / nx if nx > 0 else 0.0,
        rep_rate=params.rep_rate,
    )


def predict_skr(
    params: ProtocolParams,
    channel: ChannelModel,
    detector_z: DetectorModel,
    detector_x: DetectorModel,
    n_z: int | None = None,
    f_ec: float = DEFAULT_F_EC,
) -> SecretKeyReport:
    """Expected secret key report at the given block size (expectation mode)."""
    if n_z is None:
        n_z = params.block_size_nz
    exp = expected_rates(params, channel, detector_z, detector_x)
    if exp.n_z_per_slot <= 0.0:
        return SecretKeyReport(0.0, 0.0, 0.5, 0.0, 0, 0.0, 0.0)
    tallies, elapsed = exp.tallies_for_nz(n_z)
    return analyze(
        tallies, params,
        qber_z_for_ec=exp.qber_z,
        elapsed_protocol_time=elapsed,
        f_ec=f_ec,
    )


@dataclass(frozen=True)
class SearchSpec:
    """Box constraints for the coordinate grid search.

    A bounds pair of None pins the variable at its template value.  The
    intensity probability is parametrized by p_mu1 with p_mu3 fixed to the
    template value (0 for one-decoy operation).
    """

    mu1_bounds: tuple[float, float] | None = (0.05, 0.9)
    mu2_bounds: tuple[float, float] | None = (0.01, 0.5)
    p_mu1_bounds: tuple[float, float] | None = (0.2, 0.95)
    p_z_alice_bounds: tuple[float, float] | None = None
    p_z_bob_bounds: tuple[float, float] | None = None
    grid_points: int = 9
    rounds: int = 4
    shrink: float = 0.4

    def __post_init__(self):
        for name in ("mu1_bounds", "mu2_bounds", "p_mu1_bounds",
                     "p_z_alice_bounds", "p_z_bob_bounds"):
            b = getattr(self, name)
            if b is not None and not (b[0] <= b[1]):
                raise ValueError(f"{name} must satisfy lo <= hi, got {b}")
        if self.grid_points < 1 or self.rounds < 1:
            raise ValueError("grid_points and rounds must be >= 1")


@dataclass(frozen=True)
class OptimizationResult:
    params: ProtocolParams
    skr: float


_MU_GAP = 1e-6  # enforced strict separation mu1 > mu2


def optimize_intensities(
    template: ProtocolParams,
    channel: ChannelModel,
    detector_z: DetectorModel,
    detector_x: DetectorModel,
    spec: SearchSpec = SearchSpec(),
    n_z: int | None = None,
    f_ec: float = DEFAULT_F_EC,
) -> OptimizationResult:
    """Deterministic coordinate grid descent maximizing the predicted SKR.

    Ties break toward the lexicographically smallest parameter value; results
    are independent of evaluation order.
    """
    p_mu3 = template.p_mu[2]

    def build(vals: dict) -> ProtocolParams | None:
        mu1, mu2 = vals["mu1"], vals["mu2"]
        if mu1 <= mu2 + _MU_GAP / 2 or mu2 < template.mu3:
            return None
        p1 = vals["p_mu1"]
        p2 = 1.0 - p_mu3 - p1
        if p2 < 0.0:
            return None
        try:
            return replace(
                template, mu1=mu1, mu2=mu2, p_mu=(p1, p2, p_mu3),
                p_z_alice=vals["p_z_alice"], p_z_bob=vals["p_z_bob"],
            )
        except ValueError:
            return None

    def objective(vals: dict) -> float:
        p = build(vals)
        if p is None:
            return -1.0
        return predict_skr(p, channel, detector_z, detector_x, n_z=n_z, f_ec=f_ec).skr

    bounds = {
        "mu1": spec.mu1_bounds,
        "mu2": spec.mu2_bounds,
        "p_mu1": spec.p_mu1_bounds,
        "p_z_alice": spec.p_z_alice_bounds,
        "p_z_bob": spec.p_z_bob_bounds,
    }
    current = {
        "mu1": template.mu1,
        "mu2": template.mu2,
        "p_mu1": template.p_mu[0],
        "p_z_alice": template.p_z_alice,
        "p_z_bob": template.p_z_bob,
    }
    # clip the start point into the box
    for name, b in bounds.items():
        if b is not None:
            current[name] = min(max(current[name], b[0]), b[1])
    if build(current) is None:
        # nudge mu2 below mu1 if the clipped start is infeasible
        if bounds["mu2"] is not None:
            current["mu2"] = min(current["mu2"], current["mu1"] - _MU_GAP)
            current["mu2"] = max(current["mu2"], bounds["mu2"][0])
        if build(current) is None:
            raise ValueError("search box contains no feasible point at the start")

    widths = {
        name: (b[1] - b[0]) if b is not None else 0.0 for name, b in bounds.items()
    }
    best = objective(current)
    if best < 0:
        raise ValueError("search box contains no feasible point")

    for rnd in range(spec.rounds):
        scale = spec.shrink**rnd
        for name in sorted(bounds):
            b = bounds[name]
            if b is None or widths[name] == 0.0:
                continue
            half = widths[name] * scale / 2.0
            lo = max(b[0], current[name] - half)
            hi = min(b[1], current[name] + half)
            grid = np.linspace(lo, hi, spec.grid_points)
            for v in grid:
                trial = dict(current)
                trial[name] = float(v)
                val = objective(trial)
                if val > best + 1e-15:
                    best = val
                    current = trial
    final = build(current)
    assert final is not None
    return OptimizationResult(params=final, skr=best)
