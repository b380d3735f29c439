"""Strict-alternation exchange between the FEM driver and the network side.

The driver writes strain payloads and reads field payloads; the network side
does the opposite.  Every misuse (a second write before the matching read,
a read with nothing pending, a payload of unregistered width) raises
ProtocolError.
"""
from __future__ import annotations

import struct
import time
from pathlib import Path

import numpy as np

from ..errors import InvalidArgumentError, ProtocolError

BLOCK_MAGIC = b"IFNB"
DIRECTIONS = ("strain", "field")
ROLES = ("both", "driver", "network")

_CYCLES = {
    "both": ("write_strain", "read_strain", "write_field", "read_field"),
    "driver": ("write_strain", "read_field"),
    "network": ("read_strain", "write_field"),
}


def encode_block(a: np.ndarray) -> bytes:
    """Self-describing little-endian float64 block."""
    a = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
    return BLOCK_MAGIC + struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape) + a.tobytes()


def decode_block(raw: bytes) -> np.ndarray:
    if raw[:4] != BLOCK_MAGIC:
        raise ProtocolError("payload block has a bad magic number")
    (ndim,) = struct.unpack_from("<B", raw, 4)
    shape = struct.unpack_from(f"<{ndim}Q", raw, 5)
    off = 5 + 8 * ndim
    n = int(np.prod(shape)) if ndim else 1
    if len(raw) != off + 8 * n:
        raise ProtocolError("payload block is truncated")
    return np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).copy()


class InProcessTransport:
    name = "in-process"

    def __init__(self):
        self._slots: dict[tuple[str, int], bytes] = {}

    def put(self, direction: str, seq: int, payload: np.ndarray):
        self._slots[(direction, seq)] = encode_block(payload)

    def get(self, direction: str, seq: int) -> np.ndarray:
        try:
            return decode_block(self._slots.pop((direction, seq)))
        except KeyError:
            raise ProtocolError(f"no {direction} payload #{seq} pending") from None


class FileTransport:
    """``strain_NNN.bin`` / ``field_NNN.bin`` files, each published by a ``.ready`` marker.

    Readers block until the marker appears or ``timeout`` seconds pass.
    """

    name = "file"

    def __init__(self, root, timeout: float = 30.0, poll: float = 0.002):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.timeout = timeout
        self.poll = poll

    def paths(self, direction: str, seq: int) -> tuple[Path, Path]:
        stem = self.root / f"{direction}_{seq:03d}"
        return stem.with_suffix(".bin"), stem.with_suffix(".ready")

    def put(self, direction: str, seq: int, payload: np.ndarray):
        data, ready = self.paths(direction, seq)
        if ready.exists():
            raise ProtocolError(f"{ready.name} already published")
        tmp = data.with_suffix(".tmp")
        tmp.write_bytes(encode_block(payload))
        tmp.replace(data)
        ready.write_bytes(b"\x01")

    def get(self, direction: str, seq: int) -> np.ndarray:
        data, ready = self.paths(direction, seq)
        deadline = time.monotonic() + self.timeout
        while not ready.exists():
            if time.monotonic() > deadline:
                raise ProtocolError(f"timed out waiting for {ready.name}")
            time.sleep(self.poll)
        return decode_block(data.read_bytes())


class CouplingChannel:
    """Sequence-numbered mailbox pair with a fixed operation cycle per role.

    ``exchanges`` counts completed strain-out/field-in round trips; it is
    also the sequence number stamped on the payloads of the current round.
    """

    def __init__(self, transport=None, role: str = "both"):
        if role not in ROLES:
            raise InvalidArgumentError(f"role must be one of {ROLES}")
        self.transport = transport if transport is not None else InProcessTransport()
        self.role = role
        self.exchanges = 0
        self.strain_writes = 0
        self.field_reads = 0
        self._cycle = _CYCLES[role]
        self._pos = 0
        self._widths: dict[str, int] = {}

    def register(self, direction: str, width: int):
        """Fix the trailing dimension accepted for ``direction`` payloads."""
        if direction not in DIRECTIONS:
            raise InvalidArgumentError(f"direction must be one of {DIRECTIONS}")
        self._widths[direction] = int(width)

    @property
    def expected(self) -> str:
        return self._cycle[self._pos]

    def _advance(self, op: str):
        if op not in self._cycle:
            raise ProtocolError(f"{op} is not allowed for role {self.role!r}")
        if op != self.expected:
            raise ProtocolError(f"out-of-order access: expected {self.expected}, got {op} "
                                f"(exchange {self.exchanges + 1})")
        self._pos = (self._pos + 1) % len(self._cycle)

    def _check_width(self, direction: str, payload: np.ndarray):
        width = self._widths.get(direction)
        if width is None:
            raise ProtocolError(f"no payload shape registered for {direction!r}")
        if payload.ndim == 0 or payload.shape[-1] != width:
            raise ProtocolError(f"{direction} payload {payload.shape} does not end in width {width}")

    def _seq(self) -> int:
        return self.exchanges + 1

    def send_strain(self, payload):
        payload = np.asarray(payload, dtype=float)
        self._check_width("strain", payload)
        self._advance("write_strain")
        self.transport.put("strain", self._seq(), payload)
        self.strain_writes += 1

    def receive_strain(self) -> np.ndarray:
        self._advance("read_strain")
        return self.transport.get("strain", self._seq())

    def send_field(self, payload):
        payload = np.asarray(payload, dtype=float)
        self._check_width("field", payload)
        self._advance("write_field")
        self.transport.put("field", self._seq(), payload)
        if self.role == "network":
            self.exchanges += 1

    def receive_field(self) -> np.ndarray:
        self._advance("read_field")
        out = self.transport.get("field", self._seq())
        self.field_reads += 1
        self.exchanges += 1
        return out


def channel_roundtrip(channel: CouplingChannel, payload) -> np.ndarray:
    """Push ``payload`` out as strain, echo it back as the field and return what arrives."""
    if channel.role != "both":
        raise InvalidArgumentError("round trip needs a channel playing both roles")
    channel.send_strain(payload)
    channel.send_field(channel.receive_strain())
    return channel.receive_field()
