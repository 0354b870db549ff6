"""Key rate versus channel loss, for both detector generations.

Walks the analytic model over the 3..20 dB loss range with the per-loss
intensity schedule, prints a table like the ones that come out of a field
trial, and dumps a plot-data file (loss vs SKR, one block per detector)
for gnuplot or matplotlib.

Run:  python demos/key_rate_sweep.py
"""
from pathlib import Path

from qkdlink import default_channel, default_params, expected_rates, predict_skr
from qkdlink.presets import DETECTOR_PRESETS, INTENSITY_SCHEDULE

N_Z = 10**9  # large-block analytic mode

out_lines = ["# loss_db skr_bps"]
for name in ("sip-polimi-10um", "id221"):
    det = DETECTOR_PRESETS[name]
    print(f"\n=== {name} (efficiency {det.efficiency:.0%}, "
          f"hold-off {det.holdoff_time * 1e6:.0f} us) ===")
    print(f"{'loss':>6} {'mu1':>5} {'mu2':>5} {'QBER_Z':>7} {'QBER_X':>7} "
          f"{'SKR':>12}")
    out_lines.append(f"# detector {name}")
    for loss, (mu1, mu2) in sorted(INTENSITY_SCHEDULE[name].items()):
        params = default_params(mu1=mu1, mu2=mu2)
        channel = default_channel(float(loss))
        rates = expected_rates(params, channel, det, det)
        report = predict_skr(params, channel, det, det, n_z=N_Z)
        print(f"{loss:4.0f}dB {mu1:5.2f} {mu2:5.2f} "
              f"{rates.qber_z:6.2%} {rates.qber_x:6.2%} "
              f"{report.skr / 1e3:9.2f} kbps")
        out_lines.append(f"{loss} {report.skr}")
    out_lines.append("")

target = Path(__file__).with_name("key_rate_sweep.dat")
target.write_text("\n".join(out_lines))
print(f"\nplot data written to {target}")
print("Note how the fast-gated SiP device holds a large rate advantage at")
print("deep loss: its short hold-off and tiny dark window keep the error")
print("floor low exactly where the InGaAs reference drowns in noise.")
