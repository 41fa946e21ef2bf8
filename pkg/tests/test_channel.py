"""Transfer channels: hash-lock rounds, timers, rollback, settlement."""

import math

import numpy as np
import pytest

from repchain.anchor import AnchorChain, ChainParams
from repchain.channel import (
    Channel,
    ChannelRegistry,
    ChannelState,
    ChannelStatus,
    DelayModel,
    HashLock,
    LockStatus,
    StorageChainMock,
    TokenLedger,
    execute_with_timer,
    state_message,
)
from repchain.errors import ChannelError, DomainError
from repchain.ledger import KeyedHashSigner, hash_data


@pytest.fixture
def scheme():
    return KeyedHashSigner()


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def _registry(scheme, deposit_funds=1e6, timeout=10.0):
    tokens = TokenLedger()
    anchor = AnchorChain(ChainParams(), scheme)
    registry = ChannelRegistry(scheme, anchor, tokens, timeout=timeout)
    client = scheme.new_identity(b"client")
    masp = scheme.new_identity(b"masp")
    tokens.fund(client.address, deposit_funds)
    return registry, tokens, client, masp


class TestStorageMock:
    def test_round_trip(self):
        store = StorageChainMock()
        key = store.put(b"content bytes")
        assert key == hash_data(b"content bytes")
        assert store.fetch(key) == b"content bytes"

    def test_missing_key_is_an_error(self):
        store = StorageChainMock()
        with pytest.raises(ChannelError):
            store.fetch(hash_data(b"missing"))


class TestHashLock:
    def test_unlock_requires_the_exact_preimage(self):
        secret = b"\x07" * 32
        lock = HashLock(hash_data(secret), "fee", None, 5.0, b"holder")
        assert not lock.unlock(b"\x08" * 32)
        assert lock.status is LockStatus.LOCKED
        assert lock.unlock(secret)
        assert lock.status is LockStatus.UNLOCKED

    def test_rollback_only_from_locked(self):
        secret = b"\x07" * 32
        lock = HashLock(hash_data(secret), "fee", None, 5.0, b"holder")
        lock.unlock(secret)
        lock.roll_back()
        assert lock.status is LockStatus.UNLOCKED


class TestOpenClose:
    def test_genesis_state(self, scheme):
        registry, tokens, client, masp = _registry(scheme)
        channel = registry.open_channel(client, masp, 100.0)
        assert channel.balance == 100.0
        assert channel.ownership == ()
        assert channel.rounds_completed == 0
        assert tokens.balance(client.address) == pytest.approx(1e6 - 100.0)

    def test_zero_deposit_channel_cannot_run_a_round(self, scheme, rng):
        registry, _, client, masp = _registry(scheme)
        channel = registry.open_channel(client, masp, 0.0)
        with pytest.raises(ChannelError):
            channel.transfer_round(1.0, hash_data(b"k"), rng)

    def test_duplicate_open_is_an_error(self, scheme):
        registry, _, client, masp = _registry(scheme)
        registry.open_channel(client, masp, 10.0)
        with pytest.raises(ChannelError):
            registry.open_channel(client, masp, 10.0)

    def test_insufficient_balance_is_an_error(self, scheme):
        registry, _, client, masp = _registry(scheme, deposit_funds=5.0)
        with pytest.raises(ChannelError):
            registry.open_channel(client, masp, 10.0)

    def test_open_and_close_anchor_transactions(self, scheme, rng):
        registry, _, client, masp = _registry(scheme)
        channel = registry.open_channel(client, masp, 100.0)
        storage = StorageChainMock()
        channel.transfer_round(10.0, storage.put(b"p1"), rng)
        registry.close_channel(channel)
        kinds = [tx.kind.name for tx in
                 (registry.anchor.pool.take(10))]
        assert kinds == ["TRANSFER_CHANNEL", "TRANSFER_CHANNEL"]


class TestTransferRound:
    def test_spec_round_example(self, scheme, rng):
        registry, _, client, masp = _registry(scheme)
        channel = registry.open_channel(client, masp, 100.0)
        storage = StorageChainMock()
        key = storage.put(b"output-1")
        outcome = channel.transfer_round(10.0, key, rng)
        assert outcome.completed
        assert channel.balance == pytest.approx(90.0)
        assert channel.ownership == (key,)
        assert channel.rounds_completed == 1

    def test_latency_is_the_protocol_constant_without_delays(self, scheme, rng):
        registry, _, client, masp = _registry(scheme)
        channel = registry.open_channel(client, masp, 100.0)
        storage = StorageChainMock()
        latencies = [channel.transfer_round(1.0, storage.put(bytes([i])), rng).latency
                     for i in range(5)]
        assert all(lat == pytest.approx(6 * channel.step_time) for lat in latencies)

    def test_mean_latency_increases_with_delay_probability(self, scheme):
        storage = StorageChainMock()
        means = []
        for prob in (0.0, 0.25, 0.5):
            registry, _, client, masp = _registry(scheme, timeout=None)
            channel = registry.open_channel(client, masp, 1e5)
            rng = np.random.default_rng(5)
            model = DelayModel(probability=prob, magnitude=5.0)
            lats = [channel.transfer_round(1.0, storage.put(f"{prob}:{i}".encode()),
                                           rng, model).latency
                    for i in range(300)]
            means.append(sum(lats) / len(lats))
        assert means[0] < means[1] < means[2]

    def test_fee_beyond_balance_rejected_before_any_lock(self, scheme, rng):
        registry, _, client, masp = _registry(scheme)
        channel = registry.open_channel(client, masp, 5.0)
        with pytest.raises(ChannelError):
            channel.transfer_round(10.0, hash_data(b"k"), rng)
        assert channel.locks == []

    def test_halt_with_timer_rolls_back_cleanly(self, scheme, rng):
        registry, _, client, masp = _registry(scheme)
        channel = registry.open_channel(client, masp, 100.0)
        # halt probability 1: the first step exceeds its timer
        model = DelayModel(halt_probability=1.0)
        outcome = channel.transfer_round(10.0, hash_data(b"k"), rng, model)
        assert not outcome.completed
        assert outcome.timed_out_step == 1
        assert channel.balance == 100.0
        assert channel.ownership == ()
        assert channel.rounds_completed == 0
        assert all(lock.status is not LockStatus.LOCKED for lock in channel.locks)

    def test_halt_without_timer_is_an_error(self, scheme, rng):
        registry, _, client, masp = _registry(scheme, timeout=None)
        channel = registry.open_channel(client, masp, 100.0)
        model = DelayModel(halt_probability=1.0)
        with pytest.raises(DomainError):
            channel.transfer_round(10.0, hash_data(b"k"), rng, model)

    def test_rollback_leaves_previous_signed_state_in_force(self, scheme, rng):
        registry, _, client, masp = _registry(scheme)
        channel = registry.open_channel(client, masp, 100.0)
        storage = StorageChainMock()
        channel.transfer_round(10.0, storage.put(b"p1"), rng)
        state_before = channel.current
        model = DelayModel(halt_probability=1.0)
        channel.transfer_round(10.0, storage.put(b"p2"), rng, model)
        assert channel.current == state_before

    def test_execute_with_timer_outcomes(self):
        assert execute_with_timer(1.0, 10.0)
        assert not execute_with_timer(11.0, 10.0)
        assert execute_with_timer(1.0, None)
        with pytest.raises(DomainError):
            execute_with_timer(math.inf, None)


class TestStateLog:
    def test_monotone_rounds_balance_and_ownership(self, scheme, rng):
        registry, _, client, masp = _registry(scheme)
        channel = registry.open_channel(client, masp, 100.0)
        storage = StorageChainMock()
        for i in range(6):
            channel.transfer_round(5.0, storage.put(bytes([i])), rng)
        rounds = [s.round_number for s in channel.states]
        balances = [s.balance for s in channel.states]
        owned = [len(s.ownership) for s in channel.states]
        assert rounds == list(range(7))
        assert all(a >= b for a, b in zip(balances, balances[1:]))
        assert all(a <= b for a, b in zip(owned, owned[1:]))

    def test_every_completed_state_is_dual_signed(self, scheme, rng):
        registry, _, client, masp = _registry(scheme)
        channel = registry.open_channel(client, masp, 50.0)
        storage = StorageChainMock()
        channel.transfer_round(5.0, storage.put(b"x"), rng)
        for state in channel.states:
            message = state_message(channel.id, state.round_number,
                                    state.balance, state.ownership)
            assert scheme.verify(client.address, message, state.client_signature)
            assert scheme.verify(masp.address, message, state.masp_signature)


class TestSettlement:
    def test_three_rounds_of_fee_ten(self, scheme, rng):
        registry, tokens, client, masp = _registry(scheme)
        channel = registry.open_channel(client, masp, 100.0)
        storage = StorageChainMock()
        for i in range(3):
            channel.transfer_round(10.0, storage.put(bytes([i])), rng)
        settlement = registry.close_channel(channel)
        assert settlement.total_fees == pytest.approx(30.0)
        assert settlement.rounds == 3
        assert len(settlement.digests) == 3
        assert tokens.balance(masp.address) == pytest.approx(30.0)
        assert tokens.balance(client.address) == pytest.approx(1e6 - 30.0)

    def test_empty_channel_returns_full_deposit(self, scheme):
        registry, tokens, client, masp = _registry(scheme)
        channel = registry.open_channel(client, masp, 100.0)
        settlement = registry.close_channel(channel)
        assert settlement.total_fees == 0.0
        assert settlement.refund == pytest.approx(100.0)
        assert tokens.balance(client.address) == pytest.approx(1e6)

    def test_forged_state_freezes_the_channel(self, scheme, rng):
        registry, tokens, client, masp = _registry(scheme)
        channel = registry.open_channel(client, masp, 100.0)
        storage = StorageChainMock()
        channel.transfer_round(10.0, storage.put(b"real"), rng)
        real = channel.current
        forged = ChannelState(
            round_number=real.round_number, balance=real.balance,
            ownership=tuple(sorted(set(real.ownership) | {hash_data(b"stolen")})),
            client_signature=real.client_signature,
            masp_signature=real.masp_signature)
        channel.states[-1] = forged
        with pytest.raises(ChannelError):
            registry.close_channel(channel)
        assert channel.status is ChannelStatus.FROZEN
        # funds stay escrowed, nothing was paid out
        assert tokens.balance(masp.address) == 0.0

    def test_settlement_equals_state_log_replay(self, scheme, rng):
        registry, _, client, masp = _registry(scheme)
        channel = registry.open_channel(client, masp, 200.0)
        storage = StorageChainMock()
        fees = [7.0, 13.0, 20.0, 2.5]
        for i, fee in enumerate(fees):
            channel.transfer_round(fee, storage.put(bytes([i])), rng)
        replayed = channel.states[0].balance - channel.states[-1].balance
        settlement = registry.close_channel(channel)
        assert settlement.total_fees == pytest.approx(replayed)
        assert settlement.total_fees == pytest.approx(sum(fees))

    def test_conservation_across_many_random_rounds(self, scheme, rng):
        registry, tokens, client, masp = _registry(scheme)
        total_before = tokens.total()
        channel = registry.open_channel(client, masp, 500.0)
        storage = StorageChainMock()
        model = DelayModel(probability=0.3, magnitude=20.0,
                           halt_probability=0.1)
        completed_fees = 0.0
        for i in range(200):
            fee = 1.0 + (i % 5)
            outcome = channel.transfer_round(fee, storage.put(bytes([i % 256, i // 256])),
                                             rng, model)
            if outcome.completed:
                completed_fees += fee
        settlement = registry.close_channel(channel)
        assert settlement.total_fees == pytest.approx(completed_fees)
        assert settlement.refund == pytest.approx(500.0 - completed_fees)
        assert tokens.total() == pytest.approx(total_before)
