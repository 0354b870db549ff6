"""A complete two-endpoint key exchange, message by message.

Runs the full protocol between an Alice and a Bob state machine over the
in-memory transport: simulated quantum exchange, basis sifting, error
sampling, reconciliation accounting, finite-key evaluation, Toeplitz
privacy amplification and tag confirmation.  Then repeats the session
with a full intercept-resend eavesdropper and watches it abort.

Run:  python demos/two_endpoint_session.py
"""
import dataclasses

import numpy as np

from qkdlink import SessionConfig, run_session
from qkdlink.presets import DETECTOR_PRESETS, default_channel, default_params


def make_config(adversary_fraction: float = 0.0) -> SessionConfig:
    det = DETECTOR_PRESETS["sip-polimi-10um"]
    return SessionConfig(
        params=default_params(mu1=0.36, mu2=0.16),
        channel=default_channel(3.0),
        detector_z=det, detector_x=det,
        quantum_seed=2024, target_nz=100_000,
        adversary_fraction=adversary_fraction,
    )


print("=== honest session ===")
result = run_session(make_config(), make_config(), seed=7)
alice_man = result.manifest["alice"]
print("message flow (alice):", " -> ".join(alice_man["messages_sent"]))
print(f"leakage ledger: {alice_man['leakage']}")
rep = result.report
print(f"secret key: l = {rep.key_length_l} bits, SKR = {rep.skr / 1e3:.2f} kbps")
assert np.array_equal(result.key_alice, result.key_bob)
print(f"keys match on both sides; first bytes: "
      f"{np.packbits(result.key_alice)[:8].tobytes().hex()}")

print("\n=== same link, full intercept-resend attack ===")
attacked = run_session(make_config(1.0), make_config(1.0), seed=7)
print(f"aborted: {attacked.aborted}  reason: {attacked.abort_reason}")
print(f"key released: {attacked.key_alice}")
print("\nThe eavesdropper's measurements inject ~25% errors in the key")
print("basis; the phase-error bound then swallows the whole key budget and")
print("the finite-key length clamps to zero, so the endpoints abort rather")
print("than release a single bit.")
