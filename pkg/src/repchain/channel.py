"""Duplex client/provider transfer channels with hash-locked rounds.

One transfer round runs six steps: the client draws a fresh secret and
publishes its hash; the provider locks the content key under that hash;
the client locks the round fee the same way; the client unlocks the
content by revealing the secret and signs the reduced balance; the
provider unlocks the fee with the revealed secret and signs the grown
ownership set; finally the fully signed new state is appended.  Any step
that times out triggers a rollback that releases the locks in reverse
order and leaves the previous signed state in force, so a round either
fully happens or leaves no trace.

Only channel establishment and closing touch the anchor chain.  Closing
replays the signed state log: the client is refunded the final balance,
the provider is credited the accumulated fees, and the ownership digests
are registered on-chain.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .anchor import AnchorChain
from .errors import ChannelError, DomainError
from .ledger import (
    Digest,
    Identity,
    SignatureScheme,
    TxKind,
    hash_data,
    make_transaction,
)


class StorageChainMock:
    """In-memory content-addressable store keyed by SHA-256."""

    def __init__(self) -> None:
        self._store: dict[Digest, bytes] = {}

    def put(self, content: bytes) -> Digest:
        key = hash_data(content)
        self._store[key] = content
        return key

    def fetch(self, key: Digest) -> bytes:
        try:
            return self._store[key]
        except KeyError:
            raise ChannelError(f"no stored content for key {key.hex()[:12]}") from None

    def __len__(self) -> int:
        return len(self._store)


class TokenLedger:
    """On-chain token balances for clients and providers."""

    def __init__(self) -> None:
        self._balances: dict[bytes, float] = {}
        self._escrow = 0.0

    def fund(self, address: bytes, amount: float) -> None:
        self._balances[address] = self._balances.get(address, 0.0) + amount

    def balance(self, address: bytes) -> float:
        return self._balances.get(address, 0.0)

    def escrow(self, address: bytes, amount: float) -> None:
        if self.balance(address) < amount:
            raise ChannelError("insufficient balance for channel deposit")
        self._balances[address] -= amount
        self._escrow += amount

    def release(self, address: bytes, amount: float) -> None:
        if amount > self._escrow + 1e-9:
            raise ChannelError("escrow release exceeds escrowed total")
        self._escrow -= amount
        self.fund(address, amount)

    def total(self) -> float:
        return sum(self._balances.values()) + self._escrow


class LockStatus(Enum):
    LOCKED = "locked"
    UNLOCKED = "unlocked"
    ROLLED_BACK = "rolled_back"


@dataclass
class HashLock:
    """A conditional lock releasable only by the preimage of its digest."""

    lock_digest: Digest
    item_kind: str  # "content" or "fee"
    content_key: Optional[Digest]
    amount: float
    holder: bytes
    status: LockStatus = LockStatus.LOCKED

    def unlock(self, preimage: bytes) -> bool:
        if self.status is not LockStatus.LOCKED:
            return False
        if hash_data(preimage) != self.lock_digest:
            return False
        self.status = LockStatus.UNLOCKED
        return True

    def roll_back(self) -> None:
        if self.status is LockStatus.LOCKED:
            self.status = LockStatus.ROLLED_BACK


@dataclass(frozen=True)
class ChannelState:
    """One fully signed snapshot of the channel."""

    round_number: int
    balance: float
    ownership: tuple[Digest, ...]
    client_signature: bytes
    masp_signature: bytes


def state_message(channel_id: Digest, round_number: int, balance: float,
                  ownership: tuple[Digest, ...]) -> bytes:
    body = channel_id + struct.pack(">Id", round_number, balance)
    return body + b"".join(sorted(ownership))


class ChannelStatus(Enum):
    OPEN = "open"
    CLOSING = "closing"
    CLOSED = "closed"
    FROZEN = "frozen"


PROTOCOL_STEPS = 6


@dataclass(frozen=True)
class DelayModel:
    """Per-step execution-time disturbance injected by a dishonest party."""

    probability: float = 0.0
    magnitude: float = 5.0
    halt_probability: float = 0.0

    def step_extra(self, rng: np.random.Generator) -> float:
        if self.halt_probability > 0 and rng.random() < self.halt_probability:
            return math.inf
        if self.probability > 0 and rng.random() < self.probability:
            return self.magnitude
        return 0.0


@dataclass(frozen=True)
class RoundOutcome:
    completed: bool
    timed_out_step: Optional[int]
    latency: float
    fee: float


def execute_with_timer(duration: float, timeout: Optional[float]) -> bool:
    """True when the step fits its timer (or no timer is armed)."""
    if timeout is None:
        if math.isinf(duration):
            raise DomainError("a halted step without a timer would hang forever")
        return True
    return duration <= timeout


class Channel:
    """State machine for one client/provider duplex channel."""

    def __init__(self, channel_id: Digest, client: Identity, masp: Identity,
                 deposit: float, scheme: SignatureScheme,
                 step_time: float = 0.5,
                 timeout: Optional[float] = 10.0) -> None:
        self.id = channel_id
        self.client = client
        self.masp = masp
        self.deposit = deposit
        self.scheme = scheme
        self.step_time = step_time
        self.timeout = timeout
        self.status = ChannelStatus.OPEN
        self.locks: list[HashLock] = []
        genesis_msg = state_message(channel_id, 0, deposit, ())
        self.states: list[ChannelState] = [ChannelState(
            round_number=0, balance=deposit, ownership=(),
            client_signature=scheme.sign(client, genesis_msg),
            masp_signature=scheme.sign(masp, genesis_msg))]

    @property
    def current(self) -> ChannelState:
        return self.states[-1]

    @property
    def balance(self) -> float:
        return self.current.balance

    @property
    def ownership(self) -> tuple[Digest, ...]:
        return self.current.ownership

    @property
    def rounds_completed(self) -> int:
        return self.current.round_number

    def _append_state(self, balance: float, ownership: tuple[Digest, ...],
                      client_signature: bytes, masp_signature: bytes) -> ChannelState:
        previous = self.current
        if balance > previous.balance:
            raise ChannelError("channel balance may never increase")
        if not set(previous.ownership) <= set(ownership):
            raise ChannelError("channel ownership may never shrink")
        state = ChannelState(round_number=previous.round_number + 1,
                             balance=balance, ownership=ownership,
                             client_signature=client_signature,
                             masp_signature=masp_signature)
        self.states.append(state)
        return state

    def transfer_round(self, fee: float, content_key: Digest,
                       rng: np.random.Generator,
                       delays: Optional[DelayModel] = None) -> RoundOutcome:
        """Run one hash-locked fee/ownership exchange.

        Returns a completed outcome with the new state in force, or a
        timed-out outcome after a full rollback (no partial effects).
        """
        if self.status is not ChannelStatus.OPEN:
            raise ChannelError(f"channel is {self.status.value}, not open")
        if fee <= 0:
            raise ChannelError("round fee must be positive")
        if fee > self.balance:
            raise ChannelError("round fee exceeds remaining channel balance")
        delays = delays or DelayModel()
        round_locks: list[HashLock] = []
        latency = 0.0
        secret: Optional[bytes] = None
        lock_digest: Optional[Digest] = None
        new_balance = self.balance
        new_ownership = self.ownership
        client_sig = b""
        masp_sig = b""

        def rollback() -> None:
            for lock in reversed(round_locks):
                lock.roll_back()

        for step in range(1, PROTOCOL_STEPS + 1):
            duration = self.step_time + delays.step_extra(rng)
            if not execute_with_timer(duration, self.timeout):
                rollback()
                return RoundOutcome(completed=False, timed_out_step=step,
                                    latency=latency + (self.timeout or 0.0),
                                    fee=fee)
            latency += duration
            if step == 1:
                secret = rng.bytes(32)
                lock_digest = hash_data(secret)
            elif step == 2:
                lock = HashLock(lock_digest=lock_digest, item_kind="content",
                                content_key=content_key, amount=0.0,
                                holder=self.client.address)
                self.locks.append(lock)
                round_locks.append(lock)
            elif step == 3:
                lock = HashLock(lock_digest=lock_digest, item_kind="fee",
                                content_key=None, amount=fee,
                                holder=self.masp.address)
                self.locks.append(lock)
                round_locks.append(lock)
            elif step == 4:
                if not round_locks[0].unlock(secret):
                    rollback()
                    return RoundOutcome(False, step, latency, fee)
                new_balance = self.balance - fee
                new_ownership = tuple(sorted(set(self.ownership) | {content_key}))
                message = state_message(self.id, self.rounds_completed + 1,
                                        new_balance, new_ownership)
                client_sig = self.scheme.sign(self.client, message)
            elif step == 5:
                if not round_locks[1].unlock(secret):
                    rollback()
                    return RoundOutcome(False, step, latency, fee)
                message = state_message(self.id, self.rounds_completed + 1,
                                        new_balance, new_ownership)
                masp_sig = self.scheme.sign(self.masp, message)
            else:
                self._append_state(new_balance, new_ownership, client_sig, masp_sig)
        return RoundOutcome(completed=True, timed_out_step=None,
                            latency=latency, fee=fee)


@dataclass(frozen=True)
class Settlement:
    channel_id: Digest
    rounds: int
    total_fees: float
    refund: float
    digests: tuple[Digest, ...]


class ChannelRegistry:
    """Opens, tracks, and settles channels against the anchor chain."""

    def __init__(self, scheme: SignatureScheme, anchor: AnchorChain,
                 tokens: TokenLedger, step_time: float = 0.5,
                 timeout: Optional[float] = 10.0,
                 channel_tx_fee: float = 1.0) -> None:
        self.scheme = scheme
        self.anchor = anchor
        self.tokens = tokens
        self.step_time = step_time
        self.timeout = timeout
        self.channel_tx_fee = channel_tx_fee
        self._open: dict[tuple[bytes, bytes], Channel] = {}
        self._counter = 0
        self.settlements: list[Settlement] = []

    def is_active(self, client: bytes, masp: bytes) -> bool:
        return (client, masp) in self._open

    def get(self, client: bytes, masp: bytes) -> Channel:
        return self._open[(client, masp)]

    def open_channels(self) -> list[Channel]:
        return list(self._open.values())

    def open_channel(self, client: Identity, masp: Identity,
                     deposit: float) -> Channel:
        pair = (client.address, masp.address)
        if pair in self._open:
            raise ChannelError("an open channel already exists for this pair")
        if deposit < 0:
            raise ChannelError("deposit must be non-negative")
        self.tokens.escrow(client.address, deposit)
        self._counter += 1
        channel_id = hash_data(b"channel:" + client.address + masp.address
                               + struct.pack(">Q", self._counter))
        payload = b"\x01" + channel_id + struct.pack(">d", deposit)
        tx = make_transaction(self.scheme, client, masp.address, payload,
                              self.channel_tx_fee, TxKind.TRANSFER_CHANNEL)
        self.anchor.submit(tx)
        channel = Channel(channel_id, client, masp, deposit, self.scheme,
                          step_time=self.step_time, timeout=self.timeout)
        self._open[pair] = channel
        return channel

    def close_channel(self, channel: Channel) -> Settlement:
        """Validate the signed state log and settle on-chain.

        A single invalid signature freezes the channel: funds stay in
        escrow and the failure surfaces to the caller.
        """
        if channel.status not in (ChannelStatus.OPEN, ChannelStatus.CLOSING):
            raise ChannelError(f"channel is {channel.status.value}")
        channel.status = ChannelStatus.CLOSING
        for state in channel.states:
            message = state_message(channel.id, state.round_number,
                                    state.balance, state.ownership)
            ok = (self.scheme.verify(channel.client.address, message,
                                     state.client_signature)
                  and self.scheme.verify(channel.masp.address, message,
                                         state.masp_signature))
            if not ok:
                channel.status = ChannelStatus.FROZEN
                raise ChannelError(
                    f"invalid signature in state {state.round_number}; channel frozen")
        final = channel.current
        total_fees = channel.deposit - final.balance
        payload = (b"\x02" + channel.id
                   + struct.pack(">Id", final.round_number, total_fees)
                   + b"".join(final.ownership))
        tx = make_transaction(self.scheme, channel.client, channel.masp.address,
                              payload, self.channel_tx_fee, TxKind.TRANSFER_CHANNEL)
        self.anchor.submit(tx)
        self.tokens.release(channel.client.address, final.balance)
        self.tokens.release(channel.masp.address, total_fees)
        channel.status = ChannelStatus.CLOSED
        del self._open[(channel.client.address, channel.masp.address)]
        settlement = Settlement(channel_id=channel.id,
                                rounds=final.round_number,
                                total_fees=total_fees,
                                refund=final.balance,
                                digests=final.ownership)
        self.settlements.append(settlement)
        return settlement
