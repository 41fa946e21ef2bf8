"""Anchor-chain simulation: fee-prioritized pool, DPoS block production.

The chain is fork-free: a fixed super-node set produces one block every
``block_interval`` simulated seconds, round-robin.  The transaction pool
is kept sorted by fee descending with FIFO tie-break; the first
``block_capacity`` entries are exactly the ones packed into the next
block.  A virtual clock drives everything, so runs are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from sortedcontainers import SortedKeyList

from .errors import DomainError, InvalidSignature, UnknownTransaction
from .ledger import (
    GENESIS_DIGEST,
    Block,
    BlockHeader,
    Digest,
    SignatureScheme,
    Transaction,
    block_digest,
    transaction_digest,
    verify_transaction,
)


@dataclass(frozen=True)
class ChainParams:
    """Static chain configuration.

    ``block_interval`` is 1/lambda in seconds.  ``fork_probability`` is
    fixed at 0 for DPoS.  ``honest_broadcast_prob`` is 1 - Q/K when Q of
    the K nodes are attackers.
    """

    block_interval: float = 5.0
    block_capacity: int = 2000
    node_count: int = 8
    super_node_count: int = 4
    avg_neighbors: float = 4.0
    avg_bandwidth: float = 1e6
    fork_probability: float = 0.0
    honest_broadcast_prob: float = 1.0

    def __post_init__(self) -> None:
        if self.fork_probability != 0.0:
            raise DomainError("fork probability is fixed at 0 in the DPoS model")
        if not 0.0 < self.honest_broadcast_prob <= 1.0:
            raise DomainError("honest broadcast probability must be in (0, 1]")
        if self.block_interval <= 0 or self.block_capacity <= 0:
            raise DomainError("block interval and capacity must be positive")

    @property
    def block_rate(self) -> float:
        return 1.0 / self.block_interval


class TransactionPool:
    """Pending transactions sorted by fee descending, FIFO at equal fee.

    Tracks the time-weighted average queue length E(L), sampled at every
    submit and every block production.
    """

    def __init__(self) -> None:
        self._entries: SortedKeyList = SortedKeyList(key=lambda e: (-e[0], e[1]))
        self._arrival_seq = 0
        self._length_time_integral = 0.0
        self._last_sample_time = 0.0

    def __len__(self) -> int:
        return len(self._entries)

    def _sample(self, now: float) -> None:
        dt = now - self._last_sample_time
        if dt > 0:
            self._length_time_integral += len(self._entries) * dt
            self._last_sample_time = now

    def submit(self, tx: Transaction, now: float = 0.0) -> int:
        """Insert a transaction; returns its position in the queue."""
        if tx.fee < 0:
            raise DomainError("transaction fee must be non-negative")
        self._sample(now)
        entry = (tx.fee, self._arrival_seq, tx)
        self._arrival_seq += 1
        self._entries.add(entry)
        return self._entries.index(entry)

    def take(self, count: int, now: float = 0.0) -> list[Transaction]:
        """Remove and return up to ``count`` highest-priority transactions."""
        self._sample(now)
        taken = [self._entries.pop(0)[2] for _ in range(min(count, len(self._entries)))]
        return taken

    def fees(self) -> list[float]:
        return [entry[0] for entry in self._entries]

    def average_length(self, now: float) -> float:
        """Time-weighted average queue length over [0, now]."""
        if now <= 0:
            return float(len(self._entries))
        integral = self._length_time_integral
        dt = now - self._last_sample_time
        if dt > 0:
            integral += len(self._entries) * dt
        return integral / now


@dataclass
class Ledger:
    """Append-only hash-chained block list with storage accounting."""

    blocks: list[Block] = field(default_factory=list)
    total_bytes: int = 0

    def append(self, block: Block) -> None:
        expected_prev = (block_digest(self.blocks[-1])
                         if self.blocks else GENESIS_DIGEST)
        if block.header.previous_digest != expected_prev:
            raise DomainError("block does not chain onto the ledger head")
        expected_index = len(self.blocks)
        if block.header.index != expected_index:
            raise DomainError(f"block index {block.header.index}, expected {expected_index}")
        self.blocks.append(block)
        self.total_bytes += block.accounting_size()

    def verify_chain(self) -> bool:
        prev = GENESIS_DIGEST
        for i, block in enumerate(self.blocks):
            if block.header.index != i or block.header.previous_digest != prev:
                return False
            prev = block_digest(block)
        return True


@dataclass
class TxRecord:
    submitted_at: float
    packed_at: Optional[float] = None
    block_index: Optional[int] = None


class AnchorChain:
    """Single-sequencer DPoS chain with a virtual clock.

    ``advance_to(t)`` produces every block whose boundary falls in the
    elapsed window, rotating the producer round-robin over super nodes.
    """

    def __init__(self, params: ChainParams, scheme: SignatureScheme,
                 super_nodes: Optional[list[bytes]] = None) -> None:
        self.params = params
        self.scheme = scheme
        self.pool = TransactionPool()
        self.ledger = Ledger()
        self.clock = 0.0
        self.super_nodes = super_nodes or [
            bytes([i]) * 32 for i in range(params.super_node_count)]
        self._producer_index = 0
        self._next_block_time = params.block_interval
        self.trace: dict[Digest, TxRecord] = {}
        self.packed_count = 0

    def submit(self, tx: Transaction, check_signature: bool = True) -> int:
        """Validate and enqueue a transaction; returns the queue position."""
        if check_signature and not verify_transaction(self.scheme, tx):
            raise InvalidSignature("transaction signature does not verify")
        position = self.pool.submit(tx, self.clock)
        self.trace[transaction_digest(tx)] = TxRecord(submitted_at=self.clock)
        return position

    def produce_block(self) -> Block:
        """Pack the highest-priority pool entries into the next block."""
        txs = tuple(self.pool.take(self.params.block_capacity, self.clock))
        prev = (block_digest(self.ledger.blocks[-1])
                if self.ledger.blocks else GENESIS_DIGEST)
        header = BlockHeader(index=len(self.ledger.blocks),
                             previous_digest=prev,
                             timestamp=self.clock,
                             producer=self.super_nodes[self._producer_index])
        self._producer_index = (self._producer_index + 1) % len(self.super_nodes)
        block = Block(header=header, transactions=txs)
        self.ledger.append(block)
        for tx in txs:
            record = self.trace.get(transaction_digest(tx))
            if record is not None:
                record.packed_at = self.clock
                record.block_index = header.index
        self.packed_count += len(txs)
        return block

    def advance_to(self, t: float) -> list[Block]:
        """Advance the clock to ``t``, producing all due blocks."""
        produced = []
        while self._next_block_time <= t:
            self.clock = self._next_block_time
            produced.append(self.produce_block())
            self._next_block_time += self.params.block_interval
        self.clock = max(self.clock, t)
        return produced

    @property
    def height(self) -> int:
        return len(self.ledger.blocks)

    def confirmation_latency(self, tx_id: Digest) -> float:
        record = self.trace.get(tx_id)
        if record is None:
            raise UnknownTransaction(f"no trace entry for {tx_id.hex()[:12]}")
        if record.packed_at is None:
            raise UnknownTransaction(f"{tx_id.hex()[:12]} not packed yet")
        return record.packed_at - record.submitted_at

    def throughput(self) -> float:
        """Packed transactions per simulated second."""
        if self.clock <= 0:
            return 0.0
        return self.packed_count / self.clock
