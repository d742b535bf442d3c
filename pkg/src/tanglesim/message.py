"""Atomic messages: header, payload, signature, and their canonical encoding.

Byte layout (little-endian, fixed widths)::

    version(1) parentCount(1) parents(32 each) issuerId(32)
    timestamp(8, microseconds) nonce(8) payloadTag(1) payloadLen(4)
    payload(payloadLen) signature(64)

Payload bodies:

* Data     -- raw bytes
* ValueTx  -- see :func:`tanglesim.utxo.encode_transaction`
* Custom   -- applicationTag(4) followed by raw bytes
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from functools import cached_property

from .crypto import (
    DIGEST_SIZE,
    SIGNATURE_SIZE,
    content_hash,
    leading_zero_bits,
    stub_sign,
    stub_verify,
)
from .errors import DuplicateParent, MalformedEncoding, ParentCountOutOfRange
from .utxo import Transaction, decode_transaction, encode_transaction

MIN_PARENTS = 2
MAX_PARENTS = 8
PROTOCOL_VERSION = 1
TIMESTAMP_WINDOW = 30.0  # sim-seconds
LEGACY_TRANSACTION_SIZE = 1700  # bytes, fixed-size legacy transactions

MessageId = bytes


class PayloadKind(enum.IntEnum):
    DATA = 0
    VALUE_TX = 1
    CUSTOM = 2


@dataclass(frozen=True)
class DataPayload:
    data: bytes = b""

    kind = PayloadKind.DATA

    def body(self) -> bytes:
        return self.data


@dataclass(frozen=True)
class ValueTxPayload:
    transaction: Transaction

    kind = PayloadKind.VALUE_TX

    def body(self) -> bytes:
        return encode_transaction(self.transaction)


@dataclass(frozen=True)
class CustomPayload:
    application_tag: int
    data: bytes = b""

    kind = PayloadKind.CUSTOM

    def body(self) -> bytes:
        return struct.pack("<I", self.application_tag) + self.data


Payload = DataPayload | ValueTxPayload | CustomPayload


def _decode_payload(tag: int, body: bytes) -> Payload:
    if tag == PayloadKind.DATA:
        return DataPayload(body)
    if tag == PayloadKind.VALUE_TX:
        return ValueTxPayload(decode_transaction(body))
    if tag == PayloadKind.CUSTOM:
        if len(body) < 4:
            raise MalformedEncoding("custom payload shorter than its application tag")
        (app,) = struct.unpack_from("<I", body)
        return CustomPayload(app, body[4:])
    raise MalformedEncoding(f"unknown payload tag {tag}")


@dataclass(frozen=True)
class Message:
    version: int
    parents: tuple[MessageId, ...]
    issuer_id: bytes
    timestamp_us: int
    nonce: int
    payload: Payload
    signature: bytes

    @property
    def timestamp(self) -> float:
        return self.timestamp_us / 1_000_000

    def header_bytes(self) -> bytes:
        """Header fields up to, but excluding, the nonce."""
        return (
            struct.pack("<BB", self.version, len(self.parents))
            + b"".join(self.parents)
            + self.issuer_id
            + struct.pack("<Q", self.timestamp_us)
        )

    def body_bytes(self) -> bytes:
        body = self.payload.body()
        return (
            self.header_bytes()
            + struct.pack("<QBI", self.nonce, self.payload.kind, len(body))
            + body
        )

    def encode(self) -> bytes:
        return self.body_bytes() + self.signature

    @cached_property
    def id(self) -> MessageId:
        return content_hash(self.encode())

    def pow_digest(self) -> bytes:
        return content_hash(self.header_bytes() + struct.pack("<Q", self.nonce))

    def signature_valid(self) -> bool:
        return stub_verify(self.issuer_id, self.body_bytes(), self.signature)


def to_microseconds(seconds: float) -> int:
    if seconds < 0:
        raise ValueError("timestamps are non-negative")
    return round(seconds * 1_000_000)


def _check_parents(parents) -> tuple[MessageId, ...]:
    parents = tuple(parents)
    if not MIN_PARENTS <= len(parents) <= MAX_PARENTS:
        raise ParentCountOutOfRange(f"{len(parents)} parents; need {MIN_PARENTS}..{MAX_PARENTS}")
    if len(set(parents)) != len(parents):
        raise DuplicateParent("parents must be distinct")
    if any(len(p) != DIGEST_SIZE for p in parents):
        raise ValueError("parent ids are 32-byte digests")
    return parents


def build_and_sign(
    issuer_id: bytes,
    parents,
    payload: Payload,
    timestamp: float,
    nonce: int = 0,
    version: int = PROTOCOL_VERSION,
) -> Message:
    parents = _check_parents(parents)
    if len(issuer_id) != DIGEST_SIZE:
        raise ValueError("issuer id is 32 bytes")
    unsigned = Message(version, parents, issuer_id, to_microseconds(timestamp), nonce, payload, b"")
    return Message(
        version, parents, issuer_id, unsigned.timestamp_us, nonce, payload,
        stub_sign(issuer_id, unsigned.body_bytes()),
    )


def with_nonce(message: Message, nonce: int) -> Message:
    """Re-sign ``message`` with a different nonce."""
    return build_and_sign(
        message.issuer_id, message.parents, message.payload, message.timestamp, nonce, message.version
    )


def encode(message: Message) -> bytes:
    return message.encode()


def decode(data: bytes) -> Message:
    view = memoryview(data)
    try:
        version, count = struct.unpack_from("<BB", view, 0)
        off = 2
        parents = tuple(bytes(view[off + i * 32: off + (i + 1) * 32]) for i in range(count))
        off += 32 * count
        issuer = bytes(view[off: off + 32])
        off += 32
        timestamp_us, nonce, tag, length = struct.unpack_from("<QQBI", view, off)
        off += 21
    except struct.error as exc:
        raise MalformedEncoding("truncated header") from exc
    if len(issuer) != 32 or any(len(p) != 32 for p in parents):
        raise MalformedEncoding("truncated header")
    if off + length + SIGNATURE_SIZE != len(data):
        raise MalformedEncoding(
            f"payload length {length} does not match {len(data) - off - SIGNATURE_SIZE} available bytes"
        )
    payload = _decode_payload(tag, bytes(view[off: off + length]))
    signature = bytes(view[off + length:])
    return Message(version, parents, issuer, timestamp_us, nonce, payload, signature)


class Check(enum.Enum):
    PARENT_COUNT = "parent_count"
    DUPLICATE_PARENT = "duplicate_parent"
    SELF_PARENT = "self_parent"
    SIGNATURE = "signature"
    POW = "pow"
    TIMESTAMP = "timestamp"


@dataclass(frozen=True)
class ValidationVerdict:
    failed: Check | None = None

    @property
    def ok(self) -> bool:
        return self.failed is None

    def __bool__(self) -> bool:
        return self.ok


def validate(message: Message, now: float, difficulty: int, window: float = TIMESTAMP_WINDOW) -> ValidationVerdict:
    if difficulty < 0:
        raise ValueError("difficulty must be non-negative")
    if not MIN_PARENTS <= len(message.parents) <= MAX_PARENTS:
        return ValidationVerdict(Check.PARENT_COUNT)
    if len(set(message.parents)) != len(message.parents):
        return ValidationVerdict(Check.DUPLICATE_PARENT)
    if message.id in message.parents:
        return ValidationVerdict(Check.SELF_PARENT)
    if not message.signature_valid():
        return ValidationVerdict(Check.SIGNATURE)
    if difficulty and leading_zero_bits(message.pow_digest()) < difficulty:
        return ValidationVerdict(Check.POW)
    if abs(message.timestamp - now) > window:
        return ValidationVerdict(Check.TIMESTAMP)
    return ValidationVerdict()


def solve_pow(message: Message, difficulty: int, start_nonce: int = 0) -> tuple[Message, int]:
    """Brute-force a nonce meeting ``difficulty``. Returns the signed message and the attempt count."""
    header = message.header_bytes()
    nonce = start_nonce
    attempts = 0
    while True:
        attempts += 1
        digest = content_hash(header + struct.pack("<Q", nonce & 0xFFFFFFFFFFFFFFFF))
        if leading_zero_bits(digest) >= difficulty:
            return with_nonce(message, nonce & 0xFFFFFFFFFFFFFFFF), attempts
        nonce += 1
