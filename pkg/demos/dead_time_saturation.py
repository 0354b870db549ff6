"""Dead-time saturation: why a SPAD's count rate caps at 1/tau_off.

After every click the detector enforces a hold-off period tau_off (skipped
gates), so the measured rate under a Poissonian drive R follows the
classic saturation law R / (1 + R * tau_off).  This demo sweeps the drive
over five decades for a free-running detector and shows the gated device
pinning at 1 MHz for tau_off = 1 us.

Run:  python demos/dead_time_saturation.py
"""
import numpy as np

from qkdlink import DetectorModel
from qkdlink.photonics import simulate_dead_time

free = DetectorModel(name="free-running", efficiency=1.0, dark_rate=0.0,
                     mode="free_running", holdoff_time=20e-6)

print("=== free-running, tau_off = 20 us ===")
print(f"{'drive (Hz)':>12} {'measured (Hz)':>14} {'R/(1+R*tau)':>14} {'pull':>8}")
for drive in np.logspace(3, 7, 9):
    rate, se = simulate_dead_time(drive, free, n_clicks=100_000, seed=1)
    law = drive / (1.0 + drive * free.holdoff_time)
    print(f"{drive:12.3g} {rate:14.1f} {law:14.1f} {(rate - law) / se:+7.1f}s")

print()
print("=== gated at 119 MHz, tau_off = 1 us: saturation toward 1/tau_off ===")
gated = DetectorModel(name="gated", efficiency=1.0, dark_rate=0.0,
                      mode="gated", gate_rate=119e6, holdoff_time=1e-6)
print(f"{'drive (Hz)':>12} {'measured (Hz)':>14}")
for drive in (1e6, 1e7, 5e7, 1.19e8):
    rate, _ = simulate_dead_time(drive, gated, n_clicks=100_000, seed=2)
    print(f"{drive:12.3g} {rate:14.1f}")
print("\nAt full drive every open gate clicks, so the rate settles at")
print("gate_rate / (1 + holdoff_slots) ~= 1/tau_off = 1 MHz.  This cap is")
print("what ultimately limits the detected rate at low channel loss.")
