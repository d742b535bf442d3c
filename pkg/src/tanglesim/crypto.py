"""Project-wide content hash and the structural signature stub."""

import hashlib

DIGEST_SIZE = 32
SIGNATURE_SIZE = 64


def content_hash(data: bytes) -> bytes:
    """BLAKE2b-256."""
    return hashlib.blake2b(data, digest_size=DIGEST_SIZE).digest()


def stub_sign(issuer_id: bytes, body: bytes) -> bytes:
    # not a real signature: binds the issuer to the exact body bytes only
    return content_hash(issuer_id + body) * (SIGNATURE_SIZE // DIGEST_SIZE)


def stub_verify(issuer_id: bytes, body: bytes, signature: bytes) -> bool:
    return signature == stub_sign(issuer_id, body)


def leading_zero_bits(digest: bytes) -> int:
    value = int.from_bytes(digest, "big")
    return len(digest) * 8 - value.bit_length()


def node_id(index: int) -> bytes:
    """Deterministic 32-byte identifier for simulated node ``index``."""
    return content_hash(b"node:" + str(index).encode())
