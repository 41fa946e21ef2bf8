"""Focused comparison experiments.

These drivers exercise the same primitives as the full agent loop but
strip away everything irrelevant to the quantity under study, so the
high-volume comparisons stay fast and interpretable:

* storage_comparison: anchored bytes with roll-up compression versus the
  same opinion stream recorded as full on-chain transactions.
* partitioned_throughput: opinion-processing throughput when the
  providers are split across 1, 2, or 4 coordinator groups working in
  parallel, measured over simulated coordinator busy time.
* latency_decoupling: confirmation latency growth under overload
  injection on the base chain, against in-channel transfer latency.
* channel_stress: atomicity accounting over many transfer rounds with
  injected delays and halts.
* queue_oracle: a discrete-event unit-capacity priority pool fed
  chi-square sampled fees, the empirical reference for the analytic
  per-band queuing delays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .anchor import AnchorChain, ChainParams, TransactionPool
from .assessment import FeeModel, queue_delays
from .channel import Channel, DelayModel, StorageChainMock, TokenLedger
from .ledger import (
    Identity,
    KeyedHashSigner,
    TxKind,
    hash_data,
    make_transaction,
    transaction_digest,
)
from .reputation import AblationFlags, InteractionBook, ReputationParams, local_opinion
from .rollup import OpinionPayload, RcoGroup, ReputationTree


@dataclass(frozen=True)
class OpinionEvent:
    client_index: int
    provider_index: int
    satisfied: bool
    value: float


def _make_events(n_opinions: int, n_clients: int, n_providers: int,
                 rng: np.random.Generator,
                 satisfied_prob: float = 0.8,
                 value: float = 10.0) -> list[OpinionEvent]:
    clients = rng.integers(0, n_clients, size=n_opinions)
    providers = rng.integers(0, n_providers, size=n_opinions)
    satisfied = rng.random(n_opinions) < satisfied_prob
    return [OpinionEvent(int(c), int(p), bool(s), value)
            for c, p, s in zip(clients, providers, satisfied)]


@dataclass
class _OpinionPipeline:
    """Minimal client/provider/coordinator wiring for opinion streams."""

    scheme: KeyedHashSigner
    anchor: AnchorChain
    book: InteractionBook
    group: RcoGroup
    clients: list[Identity]
    providers: list[Identity]

    @classmethod
    def build(cls, n_clients: int, n_providers: int,
              batch_size: int = 500, block_capacity: int = 2000,
              coordinator_count: int = 4,
              provider_subset: Optional[Sequence[int]] = None,
              ) -> "_OpinionPipeline":
        scheme = KeyedHashSigner()
        coordinators = [scheme.new_identity(f"coordinator:{i}".encode())
                        for i in range(coordinator_count)]
        params = ChainParams(block_capacity=block_capacity)
        anchor = AnchorChain(params, scheme,
                             super_nodes=[c.address for c in coordinators])
        clients = [scheme.new_identity(f"client:{i}".encode())
                   for i in range(n_clients)]
        providers = [scheme.new_identity(f"provider:{j}".encode())
                     for j in range(n_providers)]
        book = InteractionBook(ReputationParams())
        subset = (list(range(n_providers)) if provider_subset is None
                  else list(provider_subset))
        tree = ReputationTree.genesis([providers[j].address for j in subset],
                                      prior=ReputationParams().gamma)

        def on_opinion(tx, payload: OpinionPayload) -> None:
            book.record(tx.sender, tx.receiver, payload.satisfied,
                        payload.value, payload.block_index)

        group = RcoGroup(members=coordinators, scheme=scheme, tree=tree,
                         leaf_value=lambda a, b: book.leaf_reputation(a, b),
                         max_count=batch_size, max_time=math.inf,
                         on_opinion=on_opinion)
        return cls(scheme, anchor, book, group, clients, providers)

    def feed(self, event: OpinionEvent, block_index: int,
             opinion_fee: float = 1.0) -> None:
        client = self.clients[event.client_index]
        provider = self.providers[event.provider_index]
        p, n = self.book.pair_counts(client.address, provider.address)
        if event.satisfied:
            p += 1
        else:
            n += 1
        triple = local_opinion(p, n)
        payload = OpinionPayload(event.satisfied, triple.s, triple.u, triple.c,
                                 event.value, block_index)
        self.group.collect_opinion(client, provider.address, payload,
                                   fee=opinion_fee)


@dataclass(frozen=True)
class StorageComparison:
    opinions: int
    rollup_record_bytes: int
    baseline_record_bytes: int
    rollup_ledger_bytes: int
    baseline_ledger_bytes: int
    rollup_root: str
    baseline_root: str

    @property
    def record_ratio(self) -> float:
        return self.rollup_record_bytes / self.baseline_record_bytes

    @property
    def reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.record_ratio)


def storage_comparison(n_opinions: int = 100_000, n_clients: int = 8,
                       n_providers: int = 4, batch_size: int = 500,
                       seed: int = 7) -> StorageComparison:
    """Anchor the same opinion stream with and without roll-up compression."""
    rng = np.random.default_rng(seed)
    events = _make_events(n_opinions, n_clients, n_providers, rng)

    def drive(use_rollup: bool) -> tuple[int, int, str]:
        pipe = _OpinionPipeline.build(n_clients, n_providers,
                                      batch_size=batch_size)
        interval = pipe.anchor.params.block_interval
        record_bytes = 0
        for i, event in enumerate(events):
            pipe.feed(event, pipe.anchor.height)
            if not use_rollup:
                tx = pipe.group.pending[-1]
                pipe.anchor.submit(tx)
                record_bytes += 99
            if len(pipe.group.pending) >= batch_size:
                now = pipe.anchor.clock
                if use_rollup:
                    tx = pipe.group.commit_rollup(pipe.anchor, now)
                    record_bytes += pipe.group.records[-1].bytes_compressed
                else:
                    pipe.group.commit_rollup(None, now)
                pipe.anchor.advance_to(pipe.anchor.clock + interval)
        if pipe.group.pending:
            tx = pipe.group.commit_rollup(pipe.anchor if use_rollup else None,
                                          pipe.anchor.clock)
            if use_rollup:
                record_bytes += pipe.group.records[-1].bytes_compressed
        pipe.anchor.advance_to(pipe.anchor.clock + 2 * interval)
        return record_bytes, pipe.anchor.ledger.total_bytes, pipe.group.tree.root.hex()

    rollup_records, rollup_ledger, rollup_root = drive(True)
    base_records, base_ledger, base_root = drive(False)
    return StorageComparison(
        opinions=n_opinions,
        rollup_record_bytes=rollup_records,
        baseline_record_bytes=base_records,
        rollup_ledger_bytes=rollup_ledger,
        baseline_ledger_bytes=base_ledger,
        rollup_root=rollup_root,
        baseline_root=base_root)


@dataclass(frozen=True)
class ThroughputPoint:
    coordinator_groups: int
    opinions: int
    makespan_seconds: float

    @property
    def throughput(self) -> float:
        return self.opinions / self.makespan_seconds


def partitioned_throughput(group_counts: Sequence[int] = (1, 2, 4),
                           n_opinions: int = 20_000, n_clients: int = 16,
                           n_providers: int = 8, seed: int = 7,
                           ) -> list[ThroughputPoint]:
    """Throughput over simulated coordinator busy time, per partition count.

    Each group owns a disjoint provider subset and its own tree; opinion
    work routes to the owner, so the makespan is the busiest group's
    accumulated processing time.
    """
    rng = np.random.default_rng(seed)
    events = _make_events(n_opinions, n_clients, n_providers, rng)
    points = []
    for count in group_counts:
        pipes = []
        for g in range(count):
            subset = [j for j in range(n_providers) if j % count == g]
            pipes.append(_OpinionPipeline.build(
                n_clients, n_providers, provider_subset=subset))
        for event in events:
            pipe = pipes[event.provider_index % count]
            pipe.feed(event, pipe.anchor.height)
            if len(pipe.group.pending) >= pipe.group.max_count:
                pipe.group.commit_rollup(pipe.anchor, pipe.anchor.clock)
                pipe.anchor.advance_to(
                    pipe.anchor.clock + pipe.anchor.params.block_interval)
        for pipe in pipes:
            if pipe.group.pending:
                pipe.group.commit_rollup(pipe.anchor, pipe.anchor.clock)
        makespan = max(pipe.group.busy_seconds for pipe in pipes)
        points.append(ThroughputPoint(count, n_opinions, makespan))
    return points


@dataclass(frozen=True)
class LatencyDecoupling:
    window_means: tuple[float, ...]      # on-chain confirmation per window
    channel_latencies: tuple[float, ...]  # in-channel latency per window
    channel_baseline: float


def latency_decoupling(windows: int = 30, block_capacity: int = 200,
                       load_factor: float = 2.0, seed: int = 7,
                       step_time: float = 0.5) -> LatencyDecoupling:
    """Overload the base chain while channels keep their protocol latency."""
    rng = np.random.default_rng(seed)
    scheme = KeyedHashSigner()
    params = ChainParams(block_capacity=block_capacity)
    anchor = AnchorChain(params, scheme)
    sender = scheme.new_identity(b"stress-sender")
    interval = params.block_interval
    per_window = int(load_factor * block_capacity)

    window_means = []
    counter = 0
    for window in range(windows):
        start = window * interval
        offsets = np.sort(rng.random(per_window)) * interval
        for offset in offsets:
            counter += 1
            tx = make_transaction(scheme, sender, None,
                                  counter.to_bytes(8, "big"), 1.0,
                                  TxKind.OPINION_UPDATE)
            anchor.clock = max(anchor.clock, start + float(offset))
            anchor.submit(tx)
        blocks = anchor.advance_to(start + interval)
        packed_waits = []
        for block in blocks:
            for tx in block.transactions:
                record = anchor.trace[transaction_digest(tx)]
                packed_waits.append(record.packed_at - record.submitted_at)
        window_means.append(sum(packed_waits) / len(packed_waits)
                            if packed_waits else 0.0)

    tokens = TokenLedger()
    client = scheme.new_identity(b"stress-client")
    provider = scheme.new_identity(b"stress-provider")
    tokens.fund(client.address, 1e6)
    tokens.escrow(client.address, 1e5)
    channel = Channel(hash_data(b"stress-channel"), client, provider, 1e5,
                      scheme, step_time=step_time, timeout=None)
    storage = StorageChainMock()
    channel_rng = np.random.default_rng(seed + 1)
    latencies = []
    for window in range(windows):
        key = storage.put(window.to_bytes(4, "big"))
        outcome = channel.transfer_round(1.0, key, channel_rng, DelayModel())
        latencies.append(outcome.latency)
    return LatencyDecoupling(tuple(window_means), tuple(latencies),
                             channel_baseline=latencies[0])


@dataclass(frozen=True)
class AtomicityReport:
    delay_prob: float
    rounds: int
    completed: int
    rolled_back: int
    violations: int
    mean_latency: float
    settled_fees: float
    refund: float
    deposit: float

    @property
    def atomic(self) -> bool:
        return self.violations == 0


def channel_stress(rounds_per_level: int = 3334,
                   delay_probs: Sequence[float] = (0.0, 0.25, 0.5),
                   halt_prob: float = 0.02,
                   timers: bool = True,
                   fee: float = 1.0,
                   seed: int = 7) -> list[AtomicityReport]:
    """Hammer one channel per delay level and audit all-or-nothing rounds.

    Every round must either complete (balance down by the fee, ownership
    grown by exactly the new key) or roll back with zero state change;
    anything else counts as a violation.  Settlement cross-checks fee
    conservation at the end.
    """
    scheme = KeyedHashSigner()
    storage = StorageChainMock()
    reports = []
    for level, prob in enumerate(delay_probs):
        rng = np.random.default_rng(seed + level)
        client = scheme.new_identity(f"stress-client:{level}".encode())
        provider = scheme.new_identity(f"stress-provider:{level}".encode())
        deposit = rounds_per_level * fee * 2.0
        channel = Channel(hash_data(f"stress:{level}".encode()), client,
                          provider, deposit, scheme, step_time=0.5,
                          timeout=(10.0 if timers else None))
        delays = DelayModel(probability=prob, magnitude=5.0,
                            halt_probability=halt_prob if timers else 0.0)
        completed = rolled_back = violations = 0
        latencies = []
        for round_number in range(rounds_per_level):
            key = storage.put(f"{level}:{round_number}".encode())
            balance_before = channel.balance
            owned_before = set(channel.ownership)
            state_count_before = len(channel.states)
            outcome = channel.transfer_round(fee, key, rng, delays)
            latencies.append(outcome.latency)
            if outcome.completed:
                completed += 1
                ok = (math.isclose(channel.balance, balance_before - fee)
                      and set(channel.ownership) == owned_before | {key}
                      and len(channel.states) == state_count_before + 1)
            else:
                rolled_back += 1
                ok = (channel.balance == balance_before
                      and set(channel.ownership) == owned_before
                      and len(channel.states) == state_count_before
                      and all(lock.status.value != "locked"
                              for lock in channel.locks))
            if not ok:
                violations += 1
        total_fees = channel.deposit - channel.balance
        expected_fees = completed * fee
        if not math.isclose(total_fees, expected_fees):
            violations += 1
        reports.append(AtomicityReport(
            delay_prob=prob, rounds=rounds_per_level, completed=completed,
            rolled_back=rolled_back, violations=violations,
            mean_latency=sum(latencies) / len(latencies),
            settled_fees=total_fees, refund=channel.balance, deposit=deposit))
    return reports


@dataclass(frozen=True)
class _PoolTx:
    fee: float
    submitted: float


@dataclass(frozen=True)
class QueueOracleResult:
    band_means: tuple[float, ...]
    band_counts: tuple[int, ...]
    avg_queue_len: float
    analytic: tuple[float, ...]

    def relative_errors(self) -> tuple[float, ...]:
        return tuple(abs(a - m) / m if m > 0 else math.inf
                     for a, m in zip(self.analytic, self.band_means))


def queue_oracle(model: FeeModel, load_factor: float = 0.7,
                 n_packed: int = 200_000, service_rate: float = 1.0,
                 seed: int = 7, weight_mode: str = "integral",
                 ) -> QueueOracleResult:
    """Discrete-event priority pool versus the analytic band delays.

    Unit-capacity blocks depart as a Poisson process at ``service_rate``;
    arrivals are Poisson at ``load_factor * service_rate`` with fees
    sampled from the chi-square law.  Per-band mean waits are compared
    against the induction evaluated at the measured average pool length,
    with the formula's rate parameter mapped to the block rate.
    """
    rng = np.random.default_rng(seed)
    pool = TransactionPool()
    arrival_rate = load_factor * service_rate
    now = 0.0
    next_arrival = rng.exponential(1.0 / arrival_rate)
    next_departure = rng.exponential(1.0 / service_rate)
    band_sums = [0.0] * model.bands
    band_counts = [0] * model.bands
    packed = 0
    while packed < n_packed:
        if next_arrival <= next_departure:
            now = next_arrival
            fee = float(rng.chisquare(model.df))
            tx = _PoolTx(fee=max(fee, 1e-12), submitted=now)
            pool.submit(tx, now)  # type: ignore[arg-type]
            next_arrival = now + rng.exponential(1.0 / arrival_rate)
        else:
            now = next_departure
            taken = pool.take(1, now)
            if taken:
                tx = taken[0]
                band = model.band_of(tx.fee)
                band_sums[band] += now - tx.submitted
                band_counts[band] += 1
                packed += 1
            next_departure = now + rng.exponential(1.0 / service_rate)
    avg_len = pool.average_length(now)
    analytic = queue_delays(model, service_rate, avg_len, weight_mode)
    means = tuple(band_sums[k] / band_counts[k] if band_counts[k] else math.nan
                  for k in range(model.bands))
    return QueueOracleResult(band_means=means,
                             band_counts=tuple(band_counts),
                             avg_queue_len=avg_len,
                             analytic=analytic.values)
