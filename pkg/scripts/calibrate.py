"""Calibration of the unpublished detector constants in qkdlink.presets.

The published record fixes the hold-off times, base dark rates, the InGaAs
reference efficiency (20%) and the per-loss intensity schedule, and reports
secret key rates and QBERs over channel losses of 3..20 dB.  The SiP
efficiency, temporal acceptance windows, afterpulse constants and the
timing-jitter error floors are free parameters.  This script fits them:

1. SiP arm: grid over (efficiency, gate_on_window, afterpulse_amplitude),
   anchored at the 3 dB point, minimizing the worst multiplicative deviation
   of the analytic SKR sweep (n_Z = 1e9) from the reference key rates.
2. InGaAs arm: grid over (intrinsic_error_z, afterpulse_amplitude) with the
   acceptance window fixed at 2 ns (two bins), subject to the cross-detector
   constraints: SKR monotone in loss, SiP:InGaAs SKR ratio at 20 dB >= 7,
   InGaAs QBER_Z at 20 dB above SiP's, and every SKR within x3 of the
   reference value.  Among feasible points, minimize the worst deviation.

Run:  python scripts/calibrate.py
Output: the winning constants and their verification sweep.  The values in
qkdlink/presets.py were produced by this procedure (finer grids converge to
the same neighborhood; the landscape is smooth except for the key-positive
cliff at 20 dB, which the constraints keep us away from).
"""
from __future__ import annotations

import dataclasses
import itertools

from qkdlink import default_channel, default_params, expected_rates, predict_skr
from qkdlink.presets import DETECTOR_PRESETS, INTENSITY_SCHEDULE

REFERENCE_SKR_KBPS = {
    "sip-polimi-10um": {3: 24.65, 5: 21.75, 10: 13.10, 15: 5.80, 20: 1.50},
    "id221": {3: 3.25, 5: 3.05, 10: 2.10, 15: 1.05, 20: 0.11},
}
N_Z = 10**9


def sweep(det, schedule_name):
    """(skr_kbps, qber_z) per loss for the analytic model at n_Z = 1e9."""
    out = {}
    for loss, (mu1, mu2) in INTENSITY_SCHEDULE[schedule_name].items():
        params = default_params(mu1=mu1, mu2=mu2)
        channel = default_channel(float(loss))
        rates = expected_rates(params, channel, det, det)
        report = predict_skr(params, channel, det, det, n_z=N_Z)
        out[loss] = (report.skr / 1e3, rates.qber_z)
    return out


def worst_deviation(skr_by_loss, reference):
    devs = []
    for loss, target in reference.items():
        got = skr_by_loss[loss][0]
        if got <= 0.0:
            return float("inf")
        devs.append(max(got / target, target / got))
    return max(devs)


def is_monotone(skr_by_loss):
    losses = sorted(skr_by_loss)
    vals = [skr_by_loss[L][0] for L in losses]
    return all(a >= b - 1e-9 for a, b in zip(vals, vals[1:]))


def calibrate_sip():
    base = DETECTOR_PRESETS["sip-polimi-10um"]
    ref = REFERENCE_SKR_KBPS["sip-polimi-10um"]
    best = None
    for eta, window, amp in itertools.product(
        (0.030, 0.035, 0.040, 0.045, 0.050, 0.065),
        (1e-10, 2e-10, 3.5e-10, 5e-10),
        (5e-5, 1e-4, 2e-4),
    ):
        det = dataclasses.replace(
            base, efficiency=eta, gate_on_window=window, afterpulse_amplitude=amp
        )
        s = sweep(det, "sip-polimi-10um")
        if not is_monotone(s):
            continue
        score = worst_deviation(s, ref)
        if best is None or score < best[0]:
            best = (score, det, s)
    return best


def calibrate_id221(sip_sweep):
    base = DETECTOR_PRESETS["id221"]
    ref = REFERENCE_SKR_KBPS["id221"]
    sip_skr20 = sip_sweep[20][0]
    sip_qz20 = sip_sweep[20][1]
    best = None
    for e_int, amp in itertools.product(
        (0.038, 0.040, 0.042, 0.044),
        (4.5e-6, 5e-6, 5.5e-6, 6e-6, 6.5e-6, 7e-6),
    ):
        det = dataclasses.replace(
            base, intrinsic_error_z=e_int, afterpulse_amplitude=amp
        )
        s = sweep(det, "id221")
        if not is_monotone(s):
            continue
        if s[20][0] <= 0 or sip_skr20 / s[20][0] < 7.0:
            continue
        if s[20][1] <= sip_qz20:
            continue
        score = worst_deviation(s, ref)
        if best is None or score < best[0]:
            best = (score, det, s)
    return best


def report(tag, score, det, s, ref):
    print(f"--- {tag}: worst deviation x{score:.2f} (allowed x3) ---")
    print(f"  efficiency={det.efficiency} gate_on_window={det.gate_on_window} "
          f"afterpulse=({det.afterpulse_amplitude}, {det.afterpulse_tau}) "
          f"intrinsic_error_z={det.intrinsic_error_z}")
    for loss in sorted(s):
        got, qz = s[loss]
        print(f"  {loss:5.1f} dB: SKR {got:8.3f} kbps (reference {ref[loss]:6.2f})"
              f"  QBER_Z {100 * qz:5.2f}%")


def main():
    score, det, s = calibrate_sip()
    report("sip-polimi-10um", score, det, s, REFERENCE_SKR_KBPS["sip-polimi-10um"])
    result = calibrate_id221(s)
    if result is None:
        print("id221: no feasible point in the search grid")
        return
    score_id, det_id, s_id = result
    report("id221", score_id, det_id, s_id, REFERENCE_SKR_KBPS["id221"])
    print(f"SKR ratio at 20 dB: {s[20][0] / s_id[20][0]:.1f} (constraint >= 7)")


if __name__ == "__main__":
    main()
