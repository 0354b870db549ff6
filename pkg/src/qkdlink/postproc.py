"""Classical post-processing: sifting, parameter estimation, reconciliation
accounting, Toeplitz privacy amplification, and key confirmation.

Reconciliation is cost-accounted only: no decoder is run, the disclosed-bit
budget is charged via the f_EC * n * H2(q) model.  Privacy amplification and
confirmation both use Toeplitz matrices over GF(2) as the 2-universal family.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .core import ProtocolParams, TallyCounts, binary_entropy
from .photonics import SIG, X, Z, DetectionRecord, EmittedFrame

__all__ = [
    "SiftedKey",
    "PaSeed",
    "SiftResult",
    "sift",
    "estimate_parameters",
    "reconcile",
    "privacy_amplify",
    "toeplitz_hash",
    "confirm",
    "confirmation_tag",
]


@dataclass
class SiftedKey:
    bits: np.ndarray  # uint8 0/1
    frame_indices: np.ndarray  # strictly increasing int64

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        self.frame_indices = np.asarray(self.frame_indices, dtype=np.int64)
        if self.bits.shape != self.frame_indices.shape:
            raise ValueError("bits and frame_indices must have equal length")
        if len(self.frame_indices) > 1 and np.any(np.diff(self.frame_indices) <= 0):
            raise ValueError("frame_indices must be strictly increasing")

    def __len__(self):
        return len(self.bits)


@dataclass(frozen=True)
class PaSeed:
    """Seed bits for a Toeplitz matrix of shape (out_len x in_len)."""

    bits: np.ndarray
    out_len: int
    in_len: int

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=np.uint8))
        if len(self.bits) != self.out_len + self.in_len - 1:
            raise ValueError(
                f"seed must have out_len + in_len - 1 = "
                f"{self.out_len + self.in_len - 1} bits, got {len(self.bits)}"
            )

    @classmethod
    def random(cls, out_len: int, in_len: int, rng: np.random.Generator) -> "PaSeed":
        n = out_len + in_len - 1
        return cls(bits=(rng.random(n) < 0.5).astype(np.uint8), out_len=out_len, in_len=in_len)


@dataclass
class SiftResult:
    key_alice: SiftedKey
    key_bob: SiftedKey
    tallies: TallyCounts


def sift(alice_frames, bob_detections) -> SiftResult:
    """Match detections against emitted frames and split by basis.

    Z-and-Z matches yield key bits for both parties; X-and-X matches feed the
    check-basis tallies only.  Alice's intensity labels are disclosed for all
    detected frames (standard decoy disclosure), which is what breaks the
    tallies down by intensity.
    """
    frames: dict[int, EmittedFrame] = {}
    last = -1
    for f in alice_frames:
        if f.frame_index <= last:
            raise ValueError(f"alice frames unsorted or duplicated at index {f.frame_index}")
        last = f.frame_index
        frames[f.frame_index] = f

    bits_a, bits_b, idx = [], [], []
    tallies = TallyCounts()
    last = -1
    for d in bob_detections:
        if d.frame_index <= last:
            raise ValueError(f"detections unsorted or duplicated at index {d.frame_index}")
        last = d.frame_index
        f = frames.get(d.frame_index)
        if f is None:
            raise ValueError(f"detection for unknown frame {d.frame_index}")
        if f.alice_basis != d.bob_basis:
            continue
        k = f.intensity_label
        if d.bob_basis == Z:
            tallies.n_z[k] += 1
            if d.measured_bit != f.alice_bit:
                tallies.m_z[k] += 1
            bits_a.append(f.alice_bit)
            bits_b.append(d.measured_bit)
            idx.append(d.frame_index)
        else:
            tallies.n_x[k] += 1
            if d.measured_bit == 1:  # destructive interferometer slot
                tallies.m_x[k] += 1
    key_a = SiftedKey(np.array(bits_a, dtype=np.uint8), np.array(idx, dtype=np.int64))
    key_b = SiftedKey(np.array(bits_b, dtype=np.uint8), np.array(idx, dtype=np.int64))
    return SiftResult(key_alice=key_a, key_bob=key_b, tallies=tallies)


def estimate_parameters(
    tallies: TallyCounts,
    disclosed_error_sample: list[tuple[int, int, int]],
) -> tuple[float, float]:
    """(QBER_Z estimate from the disclosed sample, QBER_X from tallies).

    The sample is a list of (frame_index, alice_bit, bob_bit); it must have
    been removed from the keys before amplification.
    """
    if tallies.n_x_total == 0:
        raise ValueError("no X-basis detections: abort the run, QBER_X cannot be estimated")
    qber_x = tallies.qber_x()
    if disclosed_error_sample:
        errs = sum(1 for _, a, b in disclosed_error_sample if a != b)
        qber_z = errs / len(disclosed_error_sample)
    else:
        qber_z = 0.0
    return qber_z, qber_x


def reconcile(
    key_a: np.ndarray,
    key_b: np.ndarray,
    qber_estimate: float,
    f_ec: float = 1.16,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Simulation-grade reconciliation.

    Bob's key is replaced by Alice's (the simulator holds both sides) and
    lambda_EC = f_EC * n * H2(q) bits are charged against the privacy budget.
    """
    key_a = np.asarray(key_a, dtype=np.uint8)
    key_b = np.asarray(key_b, dtype=np.uint8)
    if key_a.shape != key_b.shape:
        raise ValueError(f"key length mismatch: {key_a.shape} vs {key_b.shape}")
    lambda_ec = f_ec * len(key_a) * binary_entropy(qber_estimate)
    return key_a, key_a.copy(), lambda_ec


def toeplitz_hash(bits: np.ndarray, seed: PaSeed) -> np.ndarray:
    """Toeplitz-matrix product over GF(2): out_i = XOR_j T[i, j] * bits_j.

    T[i, j] = seed[i - j + in_len - 1], so a seed with a single 1 at position
    in_len - 1 is the identity on the first out_len bits.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    n = seed.in_len
    l = seed.out_len
    if len(bits) != n:
        raise ValueError(f"input must have {n} bits, got {len(bits)}")
    if l == 0:
        return np.zeros(0, dtype=np.uint8)
    if n == 0:
        return np.zeros(l, dtype=np.uint8)
    # out_i = sum_j seed[(i + n - 1) - j] * key_j  -> a convolution slice
    if n * l <= 1 << 18:
        conv = np.convolve(seed.bits.astype(np.int64), bits.astype(np.int64))
    else:
        conv = np.rint(fftconvolve(seed.bits.astype(float), bits.astype(float))).astype(np.int64)
    return (conv[n - 1 : n - 1 + l] & 1).astype(np.uint8)


def privacy_amplify(key: np.ndarray, l: int, seed: PaSeed) -> np.ndarray:
    """Compress the reconciled key to exactly l bits with a Toeplitz hash."""
    key = np.asarray(key, dtype=np.uint8)
    if l > len(key):
        raise ValueError(f"cannot extract {l} bits from a {len(key)}-bit key")
    if seed.out_len != l or seed.in_len != len(key):
        raise ValueError(
            f"seed shape ({seed.out_len} x {seed.in_len}) does not match "
            f"request ({l} x {len(key)})"
        )
    return toeplitz_hash(key, seed)


def confirmation_tag(key: np.ndarray, tag_bits: int, tag_seed: np.ndarray) -> np.ndarray:
    """Universal-hash confirmation tag of the key (Toeplitz family)."""
    key = np.asarray(key, dtype=np.uint8)
    if tag_bits < 1:
        raise ValueError("tag_bits must be >= 1")
    if len(key) == 0:
        return np.zeros(tag_bits, dtype=np.uint8)
    seed = PaSeed(bits=tag_seed, out_len=tag_bits, in_len=len(key))
    return toeplitz_hash(key, seed)


def confirm(
    key_a: np.ndarray,
    key_b: np.ndarray,
    tag_bits: int = 64,
    seed=0,
) -> bool:
    """Compare seeded universal-hash tags of both keys.

    A mismatch means the run must be aborted with no key.  For equal-length
    keys the collision probability of unequal keys is at most 2^-tag_bits,
    which documents the achieved correctness failure surrogate.
    """
    key_a = np.asarray(key_a, dtype=np.uint8)
    key_b = np.asarray(key_b, dtype=np.uint8)
    if len(key_a) != len(key_b):
        return False
    if len(key_a) == 0:
        return True
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tag_seed = (rng.random(tag_bits + len(key_a) - 1) < 0.5).astype(np.uint8)
    tag_a = confirmation_tag(key_a, tag_bits, tag_seed)
    tag_b = confirmation_tag(key_b, tag_bits, tag_seed)
    return bool(np.array_equal(tag_a, tag_b))
