"""Primitives: hashing, signatures, canonical serialization, accounting."""

import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repchain.errors import OversizedPayload
from repchain.ledger import (
    BLOCK_HEADER_BYTES,
    MAX_PAYLOAD_BYTES,
    Block,
    BlockHeader,
    Digest,
    GENESIS_DIGEST,
    KeyedHashSigner,
    Transaction,
    TxKind,
    deserialize_transaction,
    hash_data,
    make_transaction,
    serialize_transaction,
    transaction_accounting_size,
    verify_transaction,
)

SHA256_EMPTY = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_hash_of_empty_input_is_the_published_constant():
    assert hash_data(b"").hex() == SHA256_EMPTY


def test_hash_is_deterministic():
    assert hash_data(b"abc") == hash_data(b"abc")


def test_digest_is_exactly_32_bytes():
    assert len(hash_data(b"x")) == 32
    with pytest.raises(ValueError):
        Digest(b"short")


def test_collision_sweep_over_distinct_pairs():
    # 10^6 random distinct pairs, no collision expected.
    import random

    rnd = random.Random(0xC0FFEE)
    for _ in range(1_000_000):
        a = rnd.getrandbits(64)
        b = rnd.getrandbits(64) | (1 << 64)  # ranges disjoint, so a != b
        assert hashlib.sha256(a.to_bytes(9, "big")).digest() != \
            hashlib.sha256(b.to_bytes(9, "big")).digest()


@pytest.fixture
def scheme():
    return KeyedHashSigner()


def test_sign_verify_round_trip(scheme):
    alice = scheme.new_identity(b"alice")
    sig = scheme.sign(alice, b"message")
    assert scheme.verify(alice.address, b"message", sig)


def test_verify_rejects_wrong_signer(scheme):
    alice = scheme.new_identity(b"alice")
    bob = scheme.new_identity(b"bob")
    sig = scheme.sign(alice, b"message")
    assert not scheme.verify(bob.address, b"message", sig)


def test_verify_rejects_tampered_message(scheme):
    alice = scheme.new_identity(b"alice")
    sig = scheme.sign(alice, b"message")
    assert not scheme.verify(alice.address, b"messagE", sig)


def test_verify_rejects_unknown_address(scheme):
    alice = scheme.new_identity(b"alice")
    sig = scheme.sign(alice, b"m")
    assert not scheme.verify(b"\x00" * 32, b"m", sig)


def test_identities_from_distinct_seeds_have_distinct_addresses(scheme):
    addresses = {scheme.new_identity(f"id:{i}".encode()).address for i in range(64)}
    assert len(addresses) == 64


def _tx(scheme, payload=b"data", fee=1.5, kind=TxKind.OPINION_UPDATE):
    sender = scheme.new_identity(b"sender")
    receiver = scheme.new_identity(b"receiver")
    return make_transaction(scheme, sender, receiver.address, payload, fee, kind)


def test_serialization_round_trip(scheme):
    tx = _tx(scheme)
    assert deserialize_transaction(serialize_transaction(tx)) == tx


def test_round_trip_with_null_receiver(scheme):
    sender = scheme.new_identity(b"s")
    tx = make_transaction(scheme, sender, None, b"p", 0.0, TxKind.REPUTATION_ROLLUP)
    assert deserialize_transaction(serialize_transaction(tx)) == tx


@settings(max_examples=50)
@given(payload=st.binary(max_size=256), fee=st.floats(0, 1e9, allow_nan=False),
       kind=st.sampled_from(list(TxKind)))
def test_round_trip_property(payload, fee, kind):
    scheme = KeyedHashSigner()
    sender = scheme.new_identity(b"prop-sender")
    tx = make_transaction(scheme, sender, None, payload, fee, kind)
    assert deserialize_transaction(serialize_transaction(tx)) == tx


def test_plain_transaction_accounts_99_bytes(scheme):
    assert transaction_accounting_size(_tx(scheme)) == 99
    assert transaction_accounting_size(
        _tx(scheme, kind=TxKind.TRANSFER_CHANNEL)) == 99


def test_rollup_transaction_accounts_32_per_hash_plus_root(scheme):
    from repchain.rollup import RollupBlock

    hashes = tuple(hash_data(bytes([i])) for i in range(10))
    block = RollupBlock(hashes=hashes, rt_root=hash_data(b"root"))
    sender = scheme.new_identity(b"rco")
    tx = make_transaction(scheme, sender, None, block.to_payload(), 0.0,
                          TxKind.REPUTATION_ROLLUP)
    assert transaction_accounting_size(tx) == 32 * 10 + 32


def test_block_header_accounts_120_bytes(scheme):
    header = BlockHeader(index=0, previous_digest=GENESIS_DIGEST,
                         timestamp=0.0, producer=b"\x01" * 32)
    empty = Block(header=header, transactions=())
    assert empty.accounting_size() == BLOCK_HEADER_BYTES == 120
    block = Block(header=header, transactions=(_tx(scheme), _tx(scheme)))
    assert block.accounting_size() == 120 + 99 * 2


def test_storage_accounting_is_additive(scheme):
    header = BlockHeader(index=0, previous_digest=GENESIS_DIGEST,
                         timestamp=0.0, producer=b"\x01" * 32)
    txs = tuple(_tx(scheme, payload=bytes([i])) for i in range(7))
    block = Block(header=header, transactions=txs)
    assert block.accounting_size() == 120 + 99 * len(txs)


def test_oversized_payload_is_a_distinct_error(scheme):
    sender = scheme.new_identity(b"s")
    with pytest.raises(OversizedPayload):
        make_transaction(scheme, sender, None, b"\x00" * (MAX_PAYLOAD_BYTES + 1),
                         0.0, TxKind.OPINION_UPDATE)


@settings(max_examples=80)
@given(bit=st.integers(min_value=0))
def test_any_single_bit_flip_invalidates_the_transaction(bit):
    scheme = KeyedHashSigner()
    sender = scheme.new_identity(b"flip-sender")
    tx = make_transaction(scheme, sender, None, b"payload-bytes", 2.0,
                          TxKind.OPINION_UPDATE)
    raw = bytearray(serialize_transaction(tx))
    index = bit % (len(raw) * 8)
    raw[index // 8] ^= 1 << (index % 8)
    try:
        mutated = deserialize_transaction(bytes(raw))
    except Exception:
        return  # structurally rejected is also a failure to validate
    if mutated == tx:
        pytest.fail("bit flip produced an identical transaction")
    assert not verify_transaction(scheme, mutated)
