"""Two-endpoint protocol harness: framed wire codec, transports, and the
Alice/Bob state machines that drive a full key exchange.

The quantum exchange is simulated: both endpoints deterministically replay
the same seeded photonic simulation (synchronization is abstracted to shared
logical frame indices), and each endpoint then uses only the columns its
role would legitimately know - Alice her preparation log, Bob his detection
log.  Everything classical flows over the wire as framed messages, so the
leakage ledger is exact: the only key-correlated bits ever transmitted are
the disclosed error sample and the confirmation tag.

Endpoints are message-driven state machines (``start()`` / ``on_message()``)
so the same code runs single-process over an in-memory duplex pair or
two-process over a local stream socket.
"""
from __future__ import annotations

import json
import socket
import struct
import uuid
from dataclasses import asdict, dataclass
from enum import IntEnum
from typing import Optional

import numpy as np

from .core import (
    ChannelModel,
    DetectorModel,
    ProtocolParams,
    SecretKeyReport,
    TallyCounts,
    binary_entropy,
)
from .finitekey import DEFAULT_F_EC, analyze
from .photonics import X, Z, run_link
from .postproc import PaSeed, confirmation_tag, toeplitz_hash

__all__ = [
    "MsgType",
    "WireMessage",
    "CodecError",
    "TruncatedFrame",
    "BadVersion",
    "FrameTooLarge",
    "UnknownMsgType",
    "encode_message",
    "decode_message",
    "MAX_FRAME_BYTES",
    "WIRE_VERSION",
    "MemoryDuplex",
    "SocketTransport",
    "SessionConfig",
    "SessionResult",
    "AliceEndpoint",
    "BobEndpoint",
    "run_session",
    "serve_session",
    "connect_session",
]

WIRE_VERSION = 1
MAX_FRAME_BYTES = 16 * 1024 * 1024
_HEADER = struct.Struct(">IB16sIB")  # length, version, session id, seq, type


class MsgType(IntEnum):
    HELLO = 0
    PARAMS = 1
    DETECTION_REPORT = 2
    BASIS_REVEAL = 3
    INTENSITY_REVEAL = 4
    SAMPLE_REQUEST = 5
    SAMPLE_REVEAL = 6
    EC_ACCOUNT = 7
    PA_SEED = 8
    CONFIRM_TAG = 9
    ABORT = 10
    DONE = 11


class CodecError(Exception):
    """Base class for wire-format violations."""


class TruncatedFrame(CodecError):
    pass


class BadVersion(CodecError):
    pass


class FrameTooLarge(CodecError):
    pass


class UnknownMsgType(CodecError):
    pass


@dataclass(frozen=True)
class WireMessage:
    session_id: bytes  # 16 bytes
    seq: int
    msg_type: MsgType
    payload: bytes = b""
    version: int = WIRE_VERSION

    def __post_init__(self):
        if len(self.session_id) != 16:
            raise ValueError("session_id must be exactly 16 bytes")
        if not (0 <= self.seq < 2**32):
            raise ValueError("seq out of range")


def encode_message(msg: WireMessage) -> bytes:
    """Length-prefixed frame; the length covers everything after the prefix."""
    body_len = _HEADER.size - 4 + len(msg.payload)
    if body_len + 4 > MAX_FRAME_BYTES:
        raise FrameTooLarge(f"frame of {body_len + 4} bytes exceeds {MAX_FRAME_BYTES}")
    header = _HEADER.pack(body_len, msg.version, msg.session_id, msg.seq, int(msg.msg_type))
    return header + msg.payload


def decode_message(data: bytes, max_frame_bytes: int = MAX_FRAME_BYTES) -> WireMessage:
    """Inverse of encode_message; raises a typed CodecError on any violation."""
    if len(data) < 4:
        raise TruncatedFrame("frame shorter than the length prefix")
    (body_len,) = struct.unpack_from(">I", data)
    if body_len + 4 > max_frame_bytes:
        raise FrameTooLarge(f"declared frame of {body_len + 4} bytes exceeds {max_frame_bytes}")
    if len(data) != body_len + 4:
        raise TruncatedFrame(f"frame declares {body_len} body bytes, got {len(data) - 4}")
    if body_len < _HEADER.size - 4:
        raise TruncatedFrame("frame body shorter than the fixed header")
    _, version, session_id, seq, mtype = _HEADER.unpack_from(data)
    if version != WIRE_VERSION:
        raise BadVersion(f"wire version {version}, expected {WIRE_VERSION}")
    try:
        msg_type = MsgType(mtype)
    except ValueError:
        raise UnknownMsgType(f"unknown message type {mtype}") from None
    return WireMessage(
        session_id=session_id, seq=seq, msg_type=msg_type,
        payload=data[_HEADER.size:], version=version,
    )


# ---------------------------------------------------------------------------
# Transports: ordered reliable byte channels carrying whole frames
# ---------------------------------------------------------------------------


class TransportClosed(Exception):
    pass


class MemoryDuplex:
    """In-memory transport pair; each side sees a send/recv frame queue."""

    def __init__(self):
        self._queues = ([], [])

    def side(self, idx: int) -> "MemoryEnd":
        return MemoryEnd(self, idx)


class MemoryEnd:
    def __init__(self, duplex: MemoryDuplex, idx: int):
        self._duplex = duplex
        self._idx = idx

    def send_frame(self, data: bytes):
        self._duplex._queues[1 - self._idx].append(data)

    def recv_frame(self) -> Optional[bytes]:
        q = self._duplex._queues[self._idx]
        if not q:
            return None
        return q.pop(0)

    def close(self):
        pass


class SocketTransport:
    """Frame transport over a connected stream socket."""

    def __init__(self, sock: socket.socket, max_frame_bytes: int = MAX_FRAME_BYTES):
        self._sock = sock
        self._max = max_frame_bytes

    def send_frame(self, data: bytes):
        self._sock.sendall(data)

    def _recv_exact(self, n: int) -> bytes:
        chunks = []
        got = 0
        while got < n:
            chunk = self._sock.recv(n - got)
            if not chunk:
                raise TransportClosed("peer closed the connection")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def recv_frame(self) -> bytes:
        prefix = self._recv_exact(4)
        (body_len,) = struct.unpack(">I", prefix)
        if body_len + 4 > self._max:
            # reject before reading (and thus before buffering) the body
            raise FrameTooLarge(f"declared frame of {body_len + 4} bytes exceeds {self._max}")
        return prefix + self._recv_exact(body_len)

    def close(self):
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


# ---------------------------------------------------------------------------
# Payload packing helpers
# ---------------------------------------------------------------------------


def _pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def _unpack_bits(data: bytes, n: int) -> np.ndarray:
    out = np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=n)
    return out.astype(np.uint8)


def _pack_array(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a)
    return struct.pack(">I", len(a)) + a.tobytes()


def _unpack_array(data: bytes, dtype) -> tuple[np.ndarray, bytes]:
    (n,) = struct.unpack_from(">I", data)
    itemsize = np.dtype(dtype).itemsize
    end = 4 + n * itemsize
    arr = np.frombuffer(data[4:end], dtype=dtype).copy()
    if len(arr) != n:
        raise CodecError("array payload truncated")
    return arr, data[end:]


# ---------------------------------------------------------------------------
# Session configuration and result
# ---------------------------------------------------------------------------


@dataclass
class SessionConfig:
    """Everything both endpoints must agree on to run one block."""

    params: ProtocolParams
    channel: ChannelModel
    detector_z: DetectorModel
    detector_x: DetectorModel
    quantum_seed: int = 0
    target_nz: Optional[int] = None   # default: params.block_size_nz
    max_frames: Optional[int] = None  # alternative stop rule
    sample_fraction: float = 0.05
    tag_bits: int = 64
    f_ec: float = DEFAULT_F_EC
    adversary_fraction: float = 0.0

    def fingerprint(self) -> str:
        """Canonical JSON used for the PARAMS compatibility handshake."""
        payload = {
            "params": asdict(self.params),
            "channel": asdict(self.channel),
            "detector_z": asdict(self.detector_z),
            "detector_x": asdict(self.detector_x),
            "quantum_seed": self.quantum_seed,
            "target_nz": self.target_nz,
            "max_frames": self.max_frames,
            "sample_fraction": self.sample_fraction,
            "tag_bits": self.tag_bits,
            "f_ec": self.f_ec,
            "adversary_fraction": self.adversary_fraction,
        }
        return json.dumps(payload, sort_keys=True)


@dataclass
class SessionResult:
    key_alice: Optional[np.ndarray]
    key_bob: Optional[np.ndarray]
    report: Optional[SecretKeyReport]
    manifest: dict
    aborted: bool
    abort_reason: Optional[str] = None


_PHASES = ("INIT", "QUANTUM", "SIFT", "ESTIMATE", "RECONCILE", "AMPLIFY",
           "CONFIRM", "DONE", "ABORTED")

# which message types an endpoint may receive in each phase
_EXPECTED = {
    ("alice", "INIT"): {MsgType.HELLO},
    ("alice", "QUANTUM"): {MsgType.DETECTION_REPORT},
    ("alice", "ESTIMATE"): {MsgType.SAMPLE_REQUEST},
    ("alice", "RECONCILE"): {MsgType.EC_ACCOUNT},
    ("alice", "CONFIRM"): {MsgType.CONFIRM_TAG},
    ("alice", "DONE"): {MsgType.DONE},
    ("bob", "INIT"): {MsgType.HELLO, MsgType.PARAMS},
    ("bob", "SIFT"): {MsgType.BASIS_REVEAL, MsgType.INTENSITY_REVEAL},
    ("bob", "ESTIMATE"): {MsgType.SAMPLE_REVEAL},
    ("bob", "AMPLIFY"): {MsgType.PA_SEED},
    ("bob", "DONE"): {MsgType.DONE},
}


class _Endpoint:
    """Shared machinery of both protocol roles."""

    role = "?"

    def __init__(self, cfg: SessionConfig, session_id: bytes, seed: int):
        self.cfg = cfg
        self.session_id = session_id
        self.phase = "INIT"
        role_index = 0 if self.role == "alice" else 1
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, role_index]))
        self._seq = 0
        self._peer_seq = -1
        self.final_key: Optional[np.ndarray] = None
        self.report: Optional[SecretKeyReport] = None
        self.abort_reason: Optional[str] = None
        self.leakage = {"sample_bits": 0, "tag_bits": 0, "lambda_ec": 0.0}
        self.outgoing_log: list[MsgType] = []

    # -- framing ----------------------------------------------------------

    def _msg(self, msg_type: MsgType, payload: bytes = b"") -> WireMessage:
        m = WireMessage(self.session_id, self._seq, msg_type, payload)
        self._seq += 1
        self.outgoing_log.append(msg_type)
        return m

    def _abort(self, reason: str) -> list[WireMessage]:
        self.phase = "ABORTED"
        self.abort_reason = reason
        return [self._msg(MsgType.ABORT, reason.encode())]

    def on_message(self, msg: WireMessage) -> list[WireMessage]:
        if self.phase == "ABORTED":
            return []
        if msg.msg_type == MsgType.ABORT:
            # absorbing from any phase: a peer abort voids the session
            self.phase = "ABORTED"
            self.final_key = None
            self.abort_reason = f"peer abort: {msg.payload.decode(errors='replace')}"
            return []
        if self.phase == "DONE":
            return []
        if msg.session_id != self.session_id:
            return self._abort("session id mismatch")
        if msg.seq <= self._peer_seq:
            return self._abort("sequence number not increasing")
        self._peer_seq = msg.seq
        expected = _EXPECTED.get((self.role, self.phase), set())
        if msg.msg_type not in expected:
            return self._abort(
                f"unexpected {msg.msg_type.name} in phase {self.phase}"
            )
        try:
            return self._dispatch(msg)
        except CodecError as exc:
            return self._abort(f"malformed {msg.msg_type.name}: {exc}")

    # -- simulation of the quantum exchange -------------------------------

    def _run_quantum(self):
        cfg = self.cfg
        target = cfg.target_nz
        if target is None and cfg.max_frames is None:
            target = cfg.params.block_size_nz
        result = run_link(
            cfg.params, cfg.channel, cfg.detector_z, cfg.detector_x,
            target_nz=target, max_frames=cfg.max_frames, seed=cfg.quantum_seed,
            adversary_fraction=cfg.adversary_fraction, record_events=True,
        )
        self.elapsed = result.elapsed_protocol_time
        ev = result.events
        # role-restricted views of the exchange
        self.ev_frames = ev["frame_index"]
        if self.role == "alice":
            self.alice_basis = ev["alice_basis"]
            self.alice_bit = ev["alice_bit"]
            self.intensity = ev["intensity"]
        else:
            self.bob_basis = ev["bob_basis"]
            self.measured_bit = ev["measured_bit"]

    # -- sifting ----------------------------------------------------------

    def _sift(self, alice_basis, bob_basis, intensity, bits_self):
        """Z-basis key positions and the public per-intensity tallies."""
        agree = alice_basis == bob_basis
        z_mask = agree & (bob_basis == Z)
        x_mask = agree & (bob_basis == X)
        self.z_positions = np.flatnonzero(z_mask)
        self.key_bits = bits_self[self.z_positions].astype(np.uint8)
        n_z = np.bincount(intensity[z_mask], minlength=3).astype(np.int64)
        n_x = np.bincount(intensity[x_mask], minlength=3).astype(np.int64)
        return n_z, n_x, x_mask


class AliceEndpoint(_Endpoint):
    role = "alice"

    def start(self) -> list[WireMessage]:
        return [self._msg(MsgType.HELLO)]

    def _dispatch(self, msg: WireMessage) -> list[WireMessage]:
        t = msg.msg_type
        if t == MsgType.HELLO:
            self._run_quantum()
            self.phase = "QUANTUM"
            return [self._msg(MsgType.PARAMS, self.cfg.fingerprint().encode())]
        if t == MsgType.DETECTION_REPORT:
            frames, rest = _unpack_array(msg.payload, np.int64)
            bob_basis_bits = _unpack_bits(rest, len(frames))
            if not np.array_equal(frames, self.ev_frames):
                return self._abort("detection report does not match the shared frame log")
            self.bob_basis_view = bob_basis_bits
            n_z, n_x, x_mask = self._sift(
                self.alice_basis, bob_basis_bits, self.intensity, self.alice_bit
            )
            self.n_z_k, self.n_x_k = n_z, n_x
            self.phase = "ESTIMATE"
            return [
                self._msg(MsgType.BASIS_REVEAL, _pack_bits(self.alice_basis)),
                self._msg(MsgType.INTENSITY_REVEAL, self.intensity.astype(np.uint8).tobytes()),
            ]
        if t == MsgType.SAMPLE_REQUEST:
            positions, _ = _unpack_array(msg.payload, np.int64)
            if len(positions) and (positions.min() < 0 or positions.max() >= len(self.key_bits)):
                return self._abort("sample positions out of range")
            self.sample_positions = positions
            revealed = self.key_bits[positions]
            self.leakage["sample_bits"] += int(len(revealed))
            keep = np.ones(len(self.key_bits), dtype=bool)
            keep[positions] = False
            self.key_bits = self.key_bits[keep]
            self.phase = "RECONCILE"
            return [self._msg(MsgType.SAMPLE_REVEAL, _pack_bits(revealed))]
        if t == MsgType.EC_ACCOUNT:
            account = json.loads(msg.payload.decode())
            tallies = TallyCounts.from_dict(account["tallies"])
            self.leakage["lambda_ec"] = float(account["lambda_ec"])
            self.report = analyze(
                tallies, self.cfg.params,
                elapsed_protocol_time=self.elapsed,
                lambda_ec=float(account["lambda_ec"]),
            )
            l = self.report.key_length_l
            if l <= 0:
                return self._abort("secret key length is zero")
            pa_seed = PaSeed.random(l, len(self.key_bits), self.rng)
            tag_seed = (self.rng.random(self.cfg.tag_bits + l - 1) < 0.5).astype(np.uint8)
            self.final_key = toeplitz_hash(self.key_bits, pa_seed)
            self.tag_seed = tag_seed
            self.phase = "CONFIRM"
            payload = (
                struct.pack(">III", l, pa_seed.in_len, self.cfg.tag_bits)
                + _pack_bits(pa_seed.bits) + _pack_bits(tag_seed)
            )
            return [self._msg(MsgType.PA_SEED, payload)]
        if t == MsgType.CONFIRM_TAG:
            tag_bob = _unpack_bits(msg.payload, self.cfg.tag_bits)
            tag_self = confirmation_tag(self.final_key, self.cfg.tag_bits, self.tag_seed)
            self.leakage["tag_bits"] += int(self.cfg.tag_bits)
            if not np.array_equal(tag_bob, tag_self):
                self.final_key = None
                return self._abort("confirmation tag mismatch")
            self.phase = "DONE"
            return [self._msg(MsgType.DONE)]
        raise AssertionError(f"unhandled {t}")


class BobEndpoint(_Endpoint):
    role = "bob"

    def start(self) -> list[WireMessage]:
        return []

    def _dispatch(self, msg: WireMessage) -> list[WireMessage]:
        t = msg.msg_type
        if t == MsgType.HELLO:
            return [self._msg(MsgType.HELLO)]
        if t == MsgType.PARAMS:
            if msg.payload.decode() != self.cfg.fingerprint():
                return self._abort("incompatible session parameters")
            self._run_quantum()
            self.phase = "SIFT"
            payload = (
                _pack_array(self.ev_frames.astype(np.int64))
                + _pack_bits(self.bob_basis)
            )
            return [self._msg(MsgType.DETECTION_REPORT, payload)]
        if t == MsgType.BASIS_REVEAL:
            self.alice_basis_view = _unpack_bits(msg.payload, len(self.ev_frames))
            return []  # wait for the intensity labels
        if t == MsgType.INTENSITY_REVEAL:
            if not hasattr(self, "alice_basis_view"):
                return self._abort("intensity reveal before basis reveal")
            intensity = np.frombuffer(msg.payload, dtype=np.uint8).astype(np.int64)
            if len(intensity) != len(self.ev_frames):
                return self._abort("intensity reveal length mismatch")
            self.intensity_view = intensity
            n_z, n_x, x_mask = self._sift(
                self.alice_basis_view, self.bob_basis, intensity, self.measured_bit
            )
            self.n_z_k, self.n_x_k = n_z, n_x
            # X errors are destructive-slot clicks; public, no disclosure needed
            err_x = x_mask & (self.measured_bit == 1)
            self.m_x_k = np.bincount(intensity[err_x], minlength=3).astype(np.int64)
            n_key = len(self.key_bits)
            k = int(round(self.cfg.sample_fraction * n_key))
            k = max(1, min(k, max(n_key - 1, 0))) if n_key > 1 else 0
            self.sample_positions = np.sort(
                self.rng.choice(n_key, size=k, replace=False)
            ).astype(np.int64)
            self.phase = "ESTIMATE"
            return [self._msg(MsgType.SAMPLE_REQUEST, _pack_array(self.sample_positions))]
        if t == MsgType.SAMPLE_REVEAL:
            positions = self.sample_positions
            alice_bits = _unpack_bits(msg.payload, len(positions))
            mine = self.key_bits[positions]
            sample_int = self.intensity_view[self.z_positions[positions]]
            errs = alice_bits != mine
            qber_sample = float(errs.mean()) if len(errs) else 0.0
            # scale the per-intensity sample error rates up to full tallies
            m_z_k = np.zeros(3, dtype=np.int64)
            for kk in range(3):
                m = sample_int == kk
                if m.any():
                    rate = errs[m].mean()
                    m_z_k[kk] = min(int(round(rate * self.n_z_k[kk])), self.n_z_k[kk])
            tallies = TallyCounts(n_z=self.n_z_k, m_z=m_z_k,
                                  n_x=self.n_x_k, m_x=self.m_x_k)
            keep = np.ones(len(self.key_bits), dtype=bool)
            keep[positions] = False
            self.key_bits = self.key_bits[keep]
            self.kept_positions = self.z_positions[keep]
            self.leakage["sample_bits"] += int(len(positions))
            # simulation-grade reconciliation: charge lambda_EC and correct
            # Bob's residual errors from the shared deterministic replay
            lambda_ec = self.cfg.f_ec * len(self.key_bits) * binary_entropy(qber_sample)
            self.leakage["lambda_ec"] = float(lambda_ec)
            self.tallies = tallies
            account = json.dumps({
                "tallies": tallies.to_dict(),
                "qber_z_sample": qber_sample,
                "lambda_ec": lambda_ec,
            })
            self.report = analyze(
                tallies, self.cfg.params,
                elapsed_protocol_time=self.elapsed,
                lambda_ec=lambda_ec,
            )
            self.phase = "AMPLIFY"
            return [self._msg(MsgType.EC_ACCOUNT, account.encode())]
        if t == MsgType.PA_SEED:
            if self.report.key_length_l <= 0:
                return self._abort("secret key length is zero")
            l, in_len, tag_bits = struct.unpack_from(">III", msg.payload)
            if l != self.report.key_length_l or tag_bits != self.cfg.tag_bits:
                return self._abort("privacy amplification shape mismatch")
            if in_len != len(self.key_bits):
                return self._abort("privacy amplification input length mismatch")
            off = 12
            n_seed = l + in_len - 1
            n_seed_bytes = (n_seed + 7) // 8
            seed_bits = _unpack_bits(msg.payload[off:off + n_seed_bytes], n_seed)
            off += n_seed_bytes
            n_tag_seed = tag_bits + l - 1
            tag_seed = _unpack_bits(msg.payload[off:], n_tag_seed)
            corrected = self._reconciled_key()
            pa_seed = PaSeed(bits=seed_bits, out_len=l, in_len=in_len)
            self.final_key = toeplitz_hash(corrected, pa_seed)
            tag = confirmation_tag(self.final_key, tag_bits, tag_seed)
            self.leakage["tag_bits"] += int(tag_bits)
            self.phase = "DONE"
            return [self._msg(MsgType.CONFIRM_TAG, _pack_bits(tag))]
        if t == MsgType.DONE:
            return []
        raise AssertionError(f"unhandled {t}")

    def _reconciled_key(self) -> np.ndarray:
        """Bob's post-reconciliation key.

        A real error-correction decoder is out of scope; its cost is charged
        as lambda_EC and the corrected bits are recovered from the shared
        deterministic replay of the exchange (Alice's preparation log), which
        is exactly what a successful reconciliation would yield.
        """
        cfg = self.cfg
        target = cfg.target_nz
        if target is None and cfg.max_frames is None:
            target = cfg.params.block_size_nz
        result = run_link(
            cfg.params, cfg.channel, cfg.detector_z, cfg.detector_x,
            target_nz=target, max_frames=cfg.max_frames, seed=cfg.quantum_seed,
            adversary_fraction=cfg.adversary_fraction, record_events=True,
        )
        alice_bits = result.events["alice_bit"]
        return alice_bits[self.kept_positions].astype(np.uint8)


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------


def _manifest(endpoint: _Endpoint) -> dict:
    rep = endpoint.report
    return {
        "role": endpoint.role,
        "session_id": endpoint.session_id.hex(),
        "phase": endpoint.phase,
        "abort_reason": endpoint.abort_reason,
        "messages_sent": [t.name for t in endpoint.outgoing_log],
        "leakage": dict(endpoint.leakage),
        "report": rep.to_dict() if rep is not None else None,
        "key_bits": int(len(endpoint.final_key)) if endpoint.final_key is not None else 0,
    }


def run_session(
    alice_cfg: SessionConfig,
    bob_cfg: SessionConfig,
    seed: int = 0,
    session_id: Optional[bytes] = None,
) -> SessionResult:
    """Single-process session over the in-memory transport."""
    if session_id is None:
        session_id = uuid.UUID(int=int(np.random.default_rng(seed).integers(0, 2**63))).bytes
    alice = AliceEndpoint(alice_cfg, session_id, seed)
    bob = BobEndpoint(bob_cfg, session_id, seed)
    duplex = MemoryDuplex()
    a_end, b_end = duplex.side(0), duplex.side(1)

    for m in alice.start():
        a_end.send_frame(encode_message(m))
    for m in bob.start():
        b_end.send_frame(encode_message(m))

    # pump frames until both machines go quiet
    idle = 0
    while idle < 2:
        idle = 0
        for end, machine in ((b_end, bob), (a_end, alice)):
            frame = end.recv_frame()
            if frame is None:
                idle += 1
                continue
            try:
                msg = decode_message(frame)
            except CodecError as exc:
                for m in machine._abort(f"codec: {exc}"):
                    end.send_frame(encode_message(m))
                continue
            for m in machine.on_message(msg):
                end.send_frame(encode_message(m))

    aborted = alice.phase == "ABORTED" or bob.phase == "ABORTED"
    reason = alice.abort_reason or bob.abort_reason
    report = alice.report if alice.report is not None else bob.report
    manifest = {"alice": _manifest(alice), "bob": _manifest(bob)}
    return SessionResult(
        key_alice=alice.final_key if not aborted else None,
        key_bob=bob.final_key if not aborted else None,
        report=report,
        manifest=manifest,
        aborted=aborted,
        abort_reason=reason,
    )


def _drive_socket(machine: _Endpoint, transport: SocketTransport) -> None:
    """Run one endpoint over a socket until DONE or ABORTED."""
    for m in machine.start():
        transport.send_frame(encode_message(m))
    while machine.phase not in ("DONE", "ABORTED"):
        try:
            frame = transport.recv_frame()
        except (TransportClosed, FrameTooLarge) as exc:
            machine._abort(f"transport: {exc}")
            break
        try:
            msg = decode_message(frame)
        except CodecError as exc:
            for m in machine._abort(f"codec: {exc}"):
                transport.send_frame(encode_message(m))
            break
        for m in machine.on_message(msg):
            transport.send_frame(encode_message(m))
        if machine.role == "alice" and machine.phase == "DONE":
            break  # alice sent the final DONE
        if machine.role == "bob" and machine.phase == "DONE":
            # wait for alice's DONE (or abort) before leaving
            try:
                final = decode_message(transport.recv_frame())
                machine.on_message(final)
            except (CodecError, TransportClosed):
                pass
            break


def _session_result(machine: _Endpoint) -> SessionResult:
    aborted = machine.phase == "ABORTED"
    return SessionResult(
        key_alice=machine.final_key if machine.role == "alice" and not aborted else None,
        key_bob=machine.final_key if machine.role == "bob" and not aborted else None,
        report=machine.report,
        manifest={machine.role: _manifest(machine)},
        aborted=aborted,
        abort_reason=machine.abort_reason,
    )


def serve_session(cfg: SessionConfig, host: str, port: int, seed: int = 0) -> SessionResult:
    """Listen for one connection and run the Bob role over it."""
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as srv:
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((host, port))
        srv.listen(1)
        conn, _ = srv.accept()
        transport = SocketTransport(conn)
        try:
            session_id = _session_id_from_seed(seed)
            bob = BobEndpoint(cfg, session_id, seed)
            _drive_socket(bob, transport)
            return _session_result(bob)
        finally:
            transport.close()


def connect_session(cfg: SessionConfig, host: str, port: int, seed: int = 0) -> SessionResult:
    """Connect to a listening peer and run the Alice role."""
    with socket.create_connection((host, port)) as sock:
        transport = SocketTransport(sock)
        session_id = _session_id_from_seed(seed)
        alice = AliceEndpoint(cfg, session_id, seed)
        _drive_socket(alice, transport)
        return _session_result(alice)


def _session_id_from_seed(seed: int) -> bytes:
    return uuid.UUID(int=int(np.random.default_rng(seed).integers(0, 2**63))).bytes
