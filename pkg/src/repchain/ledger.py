"""Cryptographic primitives, identities, transactions, and blocks.

Everything here is an immutable value.  Hashing is SHA-256 throughout.
Signatures are produced by a pluggable scheme; the default is a
deterministic keyed-hash (HMAC-SHA256) construction backed by a key
directory held inside the scheme object, which stands in for a PKI.

Storage accounting is a model, not the in-memory size: a plain
transaction record counts 99 bytes, a stored hash record 32 bytes, and a
block header 120 bytes.  Roll-up payloads count 32 bytes per carried hash
plus 32 bytes for the committed tree root.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .errors import OversizedPayload

DIGEST_BYTES = 32
PLAIN_TX_BYTES = 99
HASH_RECORD_BYTES = 32
BLOCK_HEADER_BYTES = 120
MAX_PAYLOAD_BYTES = 1 << 24


class Digest(bytes):
    """A 32-byte SHA-256 output."""

    def __new__(cls, value: bytes) -> "Digest":
        if len(value) != DIGEST_BYTES:
            raise ValueError(f"digest must be {DIGEST_BYTES} bytes, got {len(value)}")
        return super().__new__(cls, value)

    def hex_short(self) -> str:
        return self.hex()[:12]


def hash_data(data: bytes) -> Digest:
    """SHA-256 of raw bytes."""
    return Digest(hashlib.sha256(data).digest())


@dataclass(frozen=True)
class Identity:
    """A participant keypair.  The address is the public key."""

    public_key: bytes
    private_key: bytes

    @property
    def address(self) -> bytes:
        return self.public_key


class SignatureScheme:
    """Interface for signing and verification.

    verify() must return False (never raise) on any mismatch.
    """

    def new_identity(self, seed_material: bytes) -> Identity:
        raise NotImplementedError

    def sign(self, identity: Identity, message: bytes) -> bytes:
        raise NotImplementedError

    def verify(self, address: bytes, message: bytes, signature: bytes) -> bool:
        raise NotImplementedError


class KeyedHashSigner(SignatureScheme):
    """Deterministic keyed-hash signatures (HMAC-SHA256).

    The scheme instance keeps the private key of every identity it issued,
    playing the role of a trusted key directory: verification recomputes
    the MAC under the key registered for the claimed address.  Identities
    created from distinct seed material get distinct keys and addresses.
    """

    def __init__(self) -> None:
        self._keys: dict[bytes, bytes] = {}

    def new_identity(self, seed_material: bytes) -> Identity:
        private = hashlib.sha256(b"priv:" + seed_material).digest()
        public = hashlib.sha256(b"pub:" + private).digest()
        self._keys[public] = private
        return Identity(public_key=public, private_key=private)

    def sign(self, identity: Identity, message: bytes) -> bytes:
        return hmac.new(identity.private_key, message, hashlib.sha256).digest()

    def verify(self, address: bytes, message: bytes, signature: bytes) -> bool:
        private = self._keys.get(bytes(address))
        if private is None:
            return False
        expected = hmac.new(private, message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, signature)


class TxKind(Enum):
    OPINION_UPDATE = 1
    REPUTATION_ROLLUP = 2
    TRANSFER_CHANNEL = 3


@dataclass(frozen=True)
class Transaction:
    """A fee-bearing ledger record with a kind-tagged payload."""

    sender: bytes
    receiver: Optional[bytes]
    payload: bytes
    fee: float
    signature: bytes
    kind: TxKind


def _prefixed(field: bytes) -> bytes:
    return struct.pack(">I", len(field)) + field


def signable_bytes(sender: bytes, receiver: Optional[bytes], payload: bytes,
                   fee: float, kind: TxKind) -> bytes:
    """Canonical bytes covered by the transaction signature."""
    if len(payload) > MAX_PAYLOAD_BYTES:
        raise OversizedPayload(f"payload of {len(payload)} bytes exceeds limit")
    return b"".join([
        _prefixed(sender),
        _prefixed(receiver if receiver is not None else b""),
        _prefixed(payload),
        struct.pack(">d", fee),
        struct.pack(">B", kind.value),
    ])


def make_transaction(scheme: SignatureScheme, sender: Identity,
                     receiver: Optional[bytes], payload: bytes, fee: float,
                     kind: TxKind) -> Transaction:
    """Build and sign a transaction."""
    message = signable_bytes(sender.address, receiver, payload, fee, kind)
    return Transaction(sender=sender.address, receiver=receiver,
                       payload=payload, fee=fee,
                       signature=scheme.sign(sender, message), kind=kind)


def verify_transaction(scheme: SignatureScheme, tx: Transaction) -> bool:
    try:
        message = signable_bytes(tx.sender, tx.receiver, tx.payload, tx.fee, tx.kind)
    except OversizedPayload:
        return False
    return scheme.verify(tx.sender, message, tx.signature)


def serialize_transaction(tx: Transaction) -> bytes:
    """Canonical length-prefixed concatenation in field declaration order."""
    if len(tx.payload) > MAX_PAYLOAD_BYTES:
        raise OversizedPayload(f"payload of {len(tx.payload)} bytes exceeds limit")
    return b"".join([
        _prefixed(tx.sender),
        _prefixed(tx.receiver if tx.receiver is not None else b""),
        _prefixed(tx.payload),
        struct.pack(">d", tx.fee),
        _prefixed(tx.signature),
        struct.pack(">B", tx.kind.value),
    ])


def deserialize_transaction(data: bytes) -> Transaction:
    offset = 0
    fields: list[bytes] = []
    for _ in range(3):
        (length,) = struct.unpack_from(">I", data, offset)
        offset += 4
        fields.append(data[offset:offset + length])
        if len(fields[-1]) != length:
            raise ValueError("truncated transaction record")
        offset += length
    (fee,) = struct.unpack_from(">d", data, offset)
    offset += 8
    (sig_len,) = struct.unpack_from(">I", data, offset)
    offset += 4
    signature = data[offset:offset + sig_len]
    offset += sig_len
    (kind_value,) = struct.unpack_from(">B", data, offset)
    offset += 1
    if offset != len(data):
        raise ValueError("trailing bytes after transaction record")
    sender, receiver, payload = fields
    return Transaction(sender=sender,
                       receiver=receiver if receiver else None,
                       payload=payload, fee=fee, signature=signature,
                       kind=TxKind(kind_value))


def transaction_digest(tx: Transaction) -> Digest:
    return hash_data(serialize_transaction(tx))


def rollup_payload_hash_count(payload: bytes) -> int:
    """Number of opinion hashes carried by a roll-up payload."""
    (count,) = struct.unpack_from(">I", payload, 0)
    return count


def transaction_accounting_size(tx: Transaction) -> int:
    """Bytes the transaction occupies in the storage-accounting model."""
    if tx.kind is TxKind.REPUTATION_ROLLUP:
        count = rollup_payload_hash_count(tx.payload)
        return HASH_RECORD_BYTES * count + HASH_RECORD_BYTES
    return PLAIN_TX_BYTES


@dataclass(frozen=True)
class BlockHeader:
    index: int
    previous_digest: Digest
    timestamp: float
    producer: bytes


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[Transaction, ...]

    def accounting_size(self) -> int:
        return BLOCK_HEADER_BYTES + sum(
            transaction_accounting_size(tx) for tx in self.transactions)


def block_digest(block: Block) -> Digest:
    hasher = hashlib.sha256()
    hasher.update(struct.pack(">Q", block.header.index))
    hasher.update(block.header.previous_digest)
    hasher.update(struct.pack(">d", block.header.timestamp))
    hasher.update(_prefixed(block.header.producer))
    for tx in block.transactions:
        hasher.update(transaction_digest(tx))
    return Digest(hasher.digest())


GENESIS_DIGEST = hash_data(b"genesis")
