"""Layer-2 reputation roll-up.

Coordinators collect signed opinion transactions off-chain, hash them
sequentially into a roll-up block of at most ROLLUP_CAPACITY digests,
update the reputation tree, and anchor a single transaction carrying the
digests plus the new tree root.  Validators re-derive the tree
independently; a mismatch triggers a poison rollback that reverts the
tree and requeues the batch.

The reputation tree is a complete binary hash tree over (address,
reputation) leaves in ascending address order, padded with empty-leaf
digests to the next power of two.  Leaf reputations are quantized to 12
fractional decimal digits (round half to even) before hashing so the root
is bit-deterministic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Callable, Optional

from .anchor import AnchorChain
from .errors import InvalidSignature, RollupError, UnknownAddress
from .ledger import (
    Digest,
    Identity,
    SignatureScheme,
    Transaction,
    TxKind,
    hash_data,
    make_transaction,
    serialize_transaction,
    transaction_digest,
    verify_transaction,
)

ROLLUP_CAPACITY = 500

_EMPTY_LEAF = hash_data(b"rt:empty")
_EMPTY_TREE_ROOT = hash_data(b"rt:empty-tree")
_TWELVE_PLACES = Decimal("1.000000000000")


def quantize_reputation(value: float) -> str:
    """Fixed-point text form used for leaf hashing (12 decimals, half-even)."""
    return str(Decimal(repr(value)).quantize(_TWELVE_PLACES, rounding=ROUND_HALF_EVEN))


def leaf_digest(address: bytes, reputation: float) -> Digest:
    return hash_data(b"rt:leaf" + address + quantize_reputation(reputation).encode())


class ReputationTree:
    """Immutable snapshot of every provider's committed reputation."""

    def __init__(self, leaves: dict[bytes, float]) -> None:
        self._leaves = dict(leaves)
        self._root: Optional[Digest] = None

    @classmethod
    def genesis(cls, addresses: list[bytes], prior: float) -> "ReputationTree":
        return cls({address: prior for address in addresses})

    def value(self, address: bytes) -> float:
        return self._leaves[address]

    def addresses(self) -> list[bytes]:
        return sorted(self._leaves)

    def items(self) -> list[tuple[bytes, float]]:
        return sorted(self._leaves.items())

    def __len__(self) -> int:
        return len(self._leaves)

    def with_updates(self, updates: dict[bytes, float]) -> "ReputationTree":
        for address in updates:
            if address not in self._leaves:
                raise UnknownAddress(f"unregistered provider {address.hex()[:12]}")
        merged = dict(self._leaves)
        merged.update(updates)
        return ReputationTree(merged)

    @property
    def root(self) -> Digest:
        if self._root is None:
            self._root = self._compute_root()
        return self._root

    def _compute_root(self) -> Digest:
        digests = [leaf_digest(a, v) for a, v in self.items()]
        if not digests:
            return _EMPTY_TREE_ROOT
        width = 1 << max(0, (len(digests) - 1).bit_length())
        level = digests + [_EMPTY_LEAF] * (width - len(digests))
        while len(level) > 1:
            level = [hash_data(b"rt:node" + level[i] + level[i + 1])
                     for i in range(0, len(level), 2)]
        return level[0]


@dataclass(frozen=True)
class RollupBlock:
    """Batch of opinion-transaction digests plus the new tree root."""

    hashes: tuple[Digest, ...]
    rt_root: Digest

    def __post_init__(self) -> None:
        if not self.hashes:
            raise RollupError("roll-up block must carry at least one hash")
        if len(self.hashes) > ROLLUP_CAPACITY:
            raise RollupError(f"roll-up block exceeds capacity {ROLLUP_CAPACITY}")

    def accounting_size(self) -> int:
        return 32 * len(self.hashes) + 32

    def to_payload(self) -> bytes:
        return struct.pack(">I", len(self.hashes)) + b"".join(self.hashes) + self.rt_root

    @classmethod
    def from_payload(cls, payload: bytes) -> "RollupBlock":
        (count,) = struct.unpack_from(">I", payload, 0)
        body = payload[4:]
        hashes = tuple(Digest(body[i * 32:(i + 1) * 32]) for i in range(count))
        root = Digest(body[count * 32:count * 32 + 32])
        return cls(hashes=hashes, rt_root=root)


def compress(pending: list[Transaction]) -> tuple[Digest, ...]:
    """Hash each pending transaction sequentially, in received order."""
    if not pending:
        raise RollupError("cannot compress an empty batch")
    return tuple(hash_data(serialize_transaction(tx)) for tx in pending)


# Opinion payload wire format: judgment flag, opinion triple, paid value,
# and the block index current when the opinion was formed.
_OPINION_STRUCT = struct.Struct(">BddddQ")


@dataclass(frozen=True)
class OpinionPayload:
    satisfied: bool
    s: float
    u: float
    c: float
    value: float
    block_index: int

    def encode(self) -> bytes:
        return _OPINION_STRUCT.pack(1 if self.satisfied else 0, self.s, self.u,
                                    self.c, self.value, self.block_index)

    @classmethod
    def decode(cls, payload: bytes) -> "OpinionPayload":
        flag, s, u, c, value, block_index = _OPINION_STRUCT.unpack(payload)
        return cls(bool(flag), s, u, c, value, block_index)


@dataclass(frozen=True)
class RollupProposal:
    batch: tuple[Transaction, ...]
    block: RollupBlock
    new_tree: ReputationTree
    duty_rco: Identity
    context_block: int


@dataclass
class RollupRecord:
    sequence: int
    tx_id: Digest
    tx_count: int
    bytes_raw: int
    bytes_compressed: int
    root: Digest
    previous_tree: ReputationTree
    tree: ReputationTree
    batch: tuple[Transaction, ...]
    invalid: bool = False


@dataclass(frozen=True)
class RcoCosts:
    """Simulated processing budget, for throughput accounting."""

    per_opinion: float = 0.002
    per_rollup: float = 0.05


class RcoGroup:
    """A set of coordinators sharing one replicated pending list.

    Replication is modeled as atomic: every member sees the same pending
    state.  Duty for submitting a roll-up rotates round-robin over the
    member identities by roll-up sequence number.
    """

    def __init__(self, members: list[Identity], scheme: SignatureScheme,
                 tree: ReputationTree,
                 leaf_value: Callable[[bytes, int], float],
                 max_count: int = ROLLUP_CAPACITY,
                 max_time: float = 60.0,
                 rollup_fee: float = 1.0,
                 costs: RcoCosts = RcoCosts(),
                 on_opinion: Optional[Callable[[Transaction, OpinionPayload], None]] = None,
                 ) -> None:
        if not members:
            raise RollupError("coordinator group needs at least one member")
        if not 1 <= max_count <= ROLLUP_CAPACITY:
            raise RollupError("count threshold must be within roll-up capacity")
        self.members = members
        self.scheme = scheme
        self.tree = tree
        self.leaf_value = leaf_value
        self.max_count = max_count
        self.max_time = max_time
        self.rollup_fee = rollup_fee
        self.costs = costs
        self.on_opinion = on_opinion
        self.pending: list[Transaction] = []
        self.sequence = 0
        self.last_rollup_time = 0.0
        self.busy_seconds = 0.0
        self.records: list[RollupRecord] = []
        self._rolled_back: set[Digest] = set()

    @property
    def last_committed_root(self) -> Digest:
        return self.tree.root

    def make_opinion_tx(self, client: Identity, provider: bytes,
                        payload: OpinionPayload, fee: float = 0.0) -> Transaction:
        return make_transaction(self.scheme, client, provider,
                                payload.encode(), fee, TxKind.OPINION_UPDATE)

    def ingest(self, tx: Transaction) -> bool:
        """Validate and append an opinion transaction to the pending list.

        Returns False (and leaves state untouched) on a bad signature.
        """
        if tx.kind is not TxKind.OPINION_UPDATE:
            raise RollupError("coordinators only ingest opinion transactions")
        if not verify_transaction(self.scheme, tx):
            return False
        payload = OpinionPayload.decode(tx.payload)
        self.pending.append(tx)
        self.busy_seconds += self.costs.per_opinion
        if self.on_opinion is not None:
            self.on_opinion(tx, payload)
        return True

    def collect_opinion(self, client: Identity, provider: bytes,
                        payload: OpinionPayload, fee: float = 0.0) -> Transaction:
        tx = self.make_opinion_tx(client, provider, payload, fee)
        if not self.ingest(tx):
            raise InvalidSignature("freshly built opinion failed validation")
        return tx

    def should_rollup(self, now: float) -> bool:
        if len(self.pending) >= self.max_count:
            return True
        return bool(self.pending) and (now - self.last_rollup_time) >= self.max_time

    def _touched_providers(self, batch: tuple[Transaction, ...]) -> list[bytes]:
        seen: dict[bytes, None] = {}
        for tx in batch:
            seen.setdefault(tx.receiver, None)
        return list(seen)

    def _context_block(self, batch: tuple[Transaction, ...]) -> int:
        return max(OpinionPayload.decode(tx.payload).block_index for tx in batch)

    def _derive_tree(self, base: ReputationTree, batch: tuple[Transaction, ...],
                     ) -> tuple[ReputationTree, int]:
        """Recompute the leaves touched by a batch.

        Leaf values are evaluated at the batch's latest opinion block so
        the result depends only on batch content, not on commit timing.
        """
        context = self._context_block(batch)
        updates = {provider: self.leaf_value(provider, context)
                   for provider in self._touched_providers(batch)}
        return base.with_updates(updates), context

    def propose_rollup(self) -> RollupProposal:
        if not self.pending:
            raise RollupError("no pending opinions to roll up")
        batch = tuple(self.pending[:self.max_count])
        hashes = compress(list(batch))
        new_tree, context = self._derive_tree(self.tree, batch)
        block = RollupBlock(hashes=hashes, rt_root=new_tree.root)
        duty = self.members[self.sequence % len(self.members)]
        return RollupProposal(batch=batch, block=block, new_tree=new_tree,
                              duty_rco=duty, context_block=context)

    def validate_proposal(self, proposal: RollupProposal) -> bool:
        """Independent reconstruction performed by every other coordinator."""
        expected_hashes = compress(list(proposal.batch))
        if expected_hashes != proposal.block.hashes:
            return False
        reconstructed, _ = self._derive_tree(self.tree, proposal.batch)
        return reconstructed.root == proposal.block.rt_root

    def commit_rollup(self, anchor: Optional[AnchorChain], now: float,
                      proposal: Optional[RollupProposal] = None,
                      force: bool = False) -> Optional[Transaction]:
        """Validate a proposal, anchor it, and advance the committed tree.

        An invalid proposal is rejected: nothing is anchored, the batch
        stays pending, and None is returned.  ``force`` skips validation,
        modeling a malicious duty coordinator anchoring a bad roll-up that
        honest nodes must later poison.  With ``anchor=None`` the tree
        still advances but no roll-up transaction is recorded on-chain
        (the baseline architecture, where opinions are anchored in full).
        """
        if proposal is None:
            proposal = self.propose_rollup()
        self.busy_seconds += self.costs.per_rollup
        if not force and not self.validate_proposal(proposal):
            return None
        tx = make_transaction(self.scheme, proposal.duty_rco, None,
                              proposal.block.to_payload(), self.rollup_fee,
                              TxKind.REPUTATION_ROLLUP)
        if anchor is not None:
            anchor.submit(tx)
        batch_size = len(proposal.batch)
        del self.pending[:batch_size]
        record = RollupRecord(
            sequence=self.sequence,
            tx_id=transaction_digest(tx),
            tx_count=batch_size,
            bytes_raw=99 * batch_size,
            bytes_compressed=proposal.block.accounting_size(),
            root=proposal.block.rt_root,
            previous_tree=self.tree,
            tree=proposal.new_tree,
            batch=proposal.batch,
        )
        self.records.append(record)
        self.tree = proposal.new_tree
        self.sequence += 1
        self.last_rollup_time = now
        return tx

    def poison_rollback(self, rollup_tx_id: Digest) -> bool:
        """Revert a committed roll-up; idempotent for already-reverted ids.

        The tree returns to its pre-roll-up snapshot and the batch is
        requeued ahead of any newer pending opinions.
        """
        if rollup_tx_id in self._rolled_back:
            return False
        for record in reversed(self.records):
            if record.tx_id == rollup_tx_id:
                if record.invalid:
                    return False
                record.invalid = True
                self._rolled_back.add(rollup_tx_id)
                self.tree = record.previous_tree
                self.pending = list(record.batch) + self.pending
                return True
        raise RollupError(f"unknown roll-up {rollup_tx_id.hex()[:12]}")
