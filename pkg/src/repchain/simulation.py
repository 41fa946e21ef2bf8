"""End-to-end scenario simulation.

One run wires together the anchor chain, the coordinator group with its
reputation tree, the interaction book, transfer channels, and the
contract engine, then plays a fixed number of rounds.  Each round every
client selects a provider by reputation, agrees a payment scheme, the
provider serves with a level-dependent quality draw, the fee settles
through the pair's channel, and the client's opinion enters the roll-up
pipeline.  All randomness comes from one seeded generator, so a
(scenario, seed) pair determines every output byte.

Besides the full agent loop, this module provides three focused drivers
used by the comparison experiments: a storage comparison at high opinion
volume, a partitioned-coordinator throughput measurement, and an
overload latency run contrasting on-chain confirmation with in-channel
transfer latency.
"""

from __future__ import annotations

import copy
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .anchor import AnchorChain, ChainParams
from .assessment import FeeModel, FusionParams, ServiceContext, fuse
from .attacks import AttackPlan, build_attack
from .channel import ChannelRegistry, DelayModel, StorageChainMock, TokenLedger
from .contracts import (
    Contract,
    ContractEnv,
    Grid,
    MarketState,
    optimize_contract,
    service_fee,
)
from .errors import RepchainError
from .ledger import Identity, KeyedHashSigner, TxKind, hash_data, make_transaction
from .metrics import MetricsSink
from .reputation import (
    AblationFlags,
    AcceptancePolicy,
    CapacityAcceptance,
    InteractionBook,
    ReputationParams,
    local_opinion,
    select_provider,
)
from .rollup import OpinionPayload, RcoGroup, ReputationTree
from .scenario import Scenario


@dataclass
class ClientAgent:
    index: int
    identity: Identity
    type_index: int
    sensitivity: float
    strictness: float


@dataclass
class ProviderAgent:
    index: int
    identity: Identity
    level: int                  # 0-based
    base_prob: float
    compute_rate: float
    is_attacker: bool = False

    @property
    def address(self) -> bytes:
        return self.identity.address


@dataclass
class World:
    scenario: Scenario
    seed: int
    rng: np.random.Generator
    scheme: KeyedHashSigner
    anchor: AnchorChain
    tokens: TokenLedger
    storage: StorageChainMock
    channels: ChannelRegistry
    book: InteractionBook
    group: RcoGroup
    clients: list[ClientAgent]
    providers: list[ProviderAgent]
    sybils: list[Identity]
    attack: AttackPlan
    fee_model: FeeModel
    fusion: FusionParams
    initial_tokens: float
    sink: MetricsSink
    policy: AcceptancePolicy = field(default_factory=AcceptancePolicy)


def _decay_per_second(decay_per_interval: float, block_interval: float) -> float:
    """Freshness ages in seconds; configs state decay per block interval."""
    return decay_per_interval ** (1.0 / block_interval)


def build_world(scenario: Scenario, seed: Optional[int] = None,
                use_rollup: Optional[bool] = None) -> World:
    scenario = copy.deepcopy(scenario)  # runs must not mutate shared configs
    scenario.validate()
    run_seed = scenario.run.seed if seed is None else seed
    rng = np.random.default_rng(run_seed)
    scheme = KeyedHashSigner()
    pop, chain = scenario.population, scenario.chain

    rco_identities = [scheme.new_identity(f"coordinator:{i}".encode())
                      for i in range(chain.super_nodes)]
    params = ChainParams(
        block_interval=chain.block_interval, block_capacity=chain.block_capacity,
        node_count=chain.nodes, super_node_count=chain.super_nodes,
        avg_neighbors=chain.neighbors, avg_bandwidth=chain.bandwidth,
        honest_broadcast_prob=max(1e-9, 1.0 - pop.attackers / max(pop.providers, 1)))
    anchor = AnchorChain(params, scheme,
                         super_nodes=[i.address for i in rco_identities])

    clients = []
    for i in range(pop.clients):
        type_index = i % pop.client_types
        clients.append(ClientAgent(
            index=i, identity=scheme.new_identity(f"client:{i}".encode()),
            type_index=type_index,
            sensitivity=pop.sensitivities[type_index],
            strictness=pop.strictness[type_index]))

    attack_cfg = scenario.attack
    providers = []
    target_level = attack_cfg.target_level - 1
    for j in range(pop.providers):
        level = j % pop.levels
        providers.append(ProviderAgent(
            index=j, identity=scheme.new_identity(f"provider:{j}".encode()),
            level=level, base_prob=pop.level_probs[level],
            compute_rate=scenario.service.compute_rates[level],
            is_attacker=(attack_cfg.kind != "none" and level == target_level)))

    rep = scenario.reputation
    book = InteractionBook(ReputationParams(
        decay=_decay_per_second(rep.decay_per_interval, chain.block_interval),
        gamma=rep.gamma, mu=rep.mu,
        default_sensitivity=rep.default_sensitivity,
        block_rate=params.block_rate,
        ablations=AblationFlags(familiarity=attack_cfg.familiarity,
                                freshness=attack_cfg.freshness,
                                market_worth=attack_cfg.market_worth)))

    tree = ReputationTree.genesis([p.address for p in providers], rep.gamma)

    def on_opinion(tx, payload: OpinionPayload) -> None:
        book.record(tx.sender, tx.receiver, payload.satisfied,
                    payload.value, payload.block_index)

    group = RcoGroup(members=rco_identities, scheme=scheme, tree=tree,
                     leaf_value=lambda addr, blk: book.leaf_reputation(addr, blk),
                     max_count=scenario.rollup.max_count,
                     max_time=scenario.rollup.max_time,
                     rollup_fee=scenario.rollup.fee,
                     on_opinion=on_opinion)

    tokens = TokenLedger()
    for client in clients:
        tokens.fund(client.identity.address, pop.client_tokens)

    channels = ChannelRegistry(
        scheme, anchor, tokens,
        step_time=scenario.channel.step_time,
        timeout=scenario.channel.timeout if scenario.channel.timers else None,
        channel_tx_fee=scenario.channel.open_fee)

    targets = [p for p in providers if p.is_attacker]
    plan = build_attack(attack_cfg, max(len(targets), 1), pop.providers,
                        scenario.run.rounds)
    sybils = [scheme.new_identity(f"sybil:{s}".encode())
              for s in range(plan.sybils)]

    assess = scenario.assessment
    fee_model = FeeModel(f_min=assess.fee_min, f_max=assess.fee_max,
                         bands=assess.fee_bands)
    fusion = FusionParams(alpha=assess.alpha,
                          objective_bounds=(assess.objective_lo, assess.objective_hi),
                          subjective_bounds=(0.0, 1.0))
    if use_rollup is not None:
        scenario.rollup.enabled = use_rollup

    policy = (CapacityAcceptance(pop.provider_capacity)
              if pop.provider_capacity > 0 else AcceptancePolicy())
    sink = MetricsSink(seed=run_seed, scenario_id=scenario.run.scenario_id)
    return World(scenario=scenario, seed=run_seed, rng=rng, scheme=scheme,
                 anchor=anchor, tokens=tokens, storage=StorageChainMock(),
                 channels=channels, book=book, group=group, clients=clients,
                 providers=providers, sybils=sybils, attack=plan,
                 fee_model=fee_model, fusion=fusion,
                 initial_tokens=pop.clients * pop.client_tokens, sink=sink,
                 policy=policy)


def _effective_prob(world: World, provider: ProviderAgent, round_number: int) -> float:
    run = world.scenario.run
    prob = provider.base_prob
    if run.drop_round and round_number >= run.drop_round:
        if (provider.level + 1) in run.drop_levels:
            prob -= run.drop_delta
    return min(max(prob, 0.0), 1.0)


def _inject_attack(world: World, round_number: int) -> None:
    targets = [p for p in world.providers if p.is_attacker]
    if not targets:
        return
    height = world.anchor.height
    for event in world.attack.events(round_number):
        sybil = world.sybils[event.sybil_index]
        target = targets[event.target_index % len(targets)]
        p, n = world.book.pair_counts(sybil.address, target.address)
        if event.satisfied:
            p += 1
        else:
            n += 1
        triple = local_opinion(p, n)
        payload = OpinionPayload(satisfied=event.satisfied, s=triple.s,
                                 u=triple.u, c=triple.c, value=event.value,
                                 block_index=height)
        world.group.collect_opinion(sybil, target.address, payload,
                                    fee=world.scenario.service.opinion_fee)


def _service_context(world: World, avg_queue_len: float) -> ServiceContext:
    scenario = world.scenario
    return ServiceContext(
        output_bytes=scenario.service.output_bytes,
        bandwidth=scenario.chain.bandwidth,
        difficulty=scenario.service.difficulty,
        block_bytes=120 + 99 * scenario.chain.block_capacity,
        node_count=scenario.population.providers,
        avg_neighbors=scenario.chain.neighbors,
        honest_prob=world.anchor.params.honest_broadcast_prob,
        block_rate=world.anchor.params.block_rate,
        avg_queue_len=avg_queue_len,
        fee_model=world.fee_model)


def _market_state(world: World, avg_queue_len: float, rounds_so_far: int) -> MarketState:
    scenario = world.scenario
    return MarketState(
        output_bytes=scenario.service.output_bytes,
        bandwidth=scenario.chain.bandwidth,
        difficulty=scenario.service.difficulty,
        block_capacity=scenario.chain.block_capacity,
        client_count=scenario.population.clients,
        avg_neighbors=scenario.chain.neighbors,
        honest_prob=world.anchor.params.honest_broadcast_prob,
        avg_queue_len=max(avg_queue_len, 1e-9),
        block_rate=world.anchor.params.block_rate,
        roi=scenario.service.roi,
        compute_unit_cost=0.05,
        interaction_round=max(rounds_so_far, 1))


def run_world(world: World) -> MetricsSink:
    scenario = world.scenario
    run = scenario.run
    interval = scenario.chain.block_interval
    sink = world.sink
    delays = DelayModel(probability=scenario.channel.delay_prob,
                        magnitude=scenario.channel.delay_magnitude)
    completed_rounds = 0
    rolled_back_rounds = 0

    for round_number in range(run.rounds):
        now = round_number * interval
        height = world.anchor.height
        _inject_attack(world, round_number)
        channel_latencies = []
        if isinstance(world.policy, CapacityAcceptance):
            world.policy.reset()
        # Round-start reputation table: selections within one round see the
        # coordinator state replicated at the round boundary.
        table: dict[tuple[int, bytes], float] = {}
        for client in world.clients:
            for p in world.providers:
                table[(client.index, p.address)] = world.book.reputation(
                    client.identity.address, p.address, height,
                    client.sensitivity)

        for client in world.clients:
            reputations = {p.address: table[(client.index, p.address)]
                           for p in world.providers}
            if round_number == 0:
                chosen_addr = world.providers[
                    int(world.rng.integers(len(world.providers)))].address
            else:
                chosen_addr = select_provider(reputations, world.policy, world.rng)
            if chosen_addr is None:
                continue
            provider = next(p for p in world.providers if p.address == chosen_addr)

            pair_rounds = sum(world.book.pair_counts(
                client.identity.address, provider.address)) + 1
            avg_queue = scenario.assessment.queue_len
            channel_active = (scenario.channel.enabled and
                              world.channels.is_active(client.identity.address,
                                                       provider.address))
            if scenario.contract.optimize:
                env = ContractEnv(fee_model=world.fee_model, fusion=world.fusion,
                                  subjective_score=reputations[chosen_addr],
                                  channel_active=channel_active,
                                  expected_assessment=scenario.assessment.expected)
                cc = scenario.contract
                solution = optimize_contract(
                    _market_state(world, avg_queue, pair_rounds), env,
                    Grid(*cc.bonus_grid), Grid(*cc.fixed_grid),
                    Grid(*cc.compute_grid), Grid(*cc.fee_grid),
                    cc.provider_threshold)
                if not solution.feasible:
                    continue
                contract = solution.contract
                compute_rate = solution.action.compute_rate
            else:
                contract = Contract(scenario.contract.bonus_rate,
                                    scenario.contract.fixed_rate
                                    * scenario.service.difficulty)
                compute_rate = provider.compute_rate

            ctx = _service_context(world, avg_queue)
            latency = ctx.latency(compute_rate, scenario.channel.open_fee,
                                  channel_active)
            objective = 1.0 / latency
            assessed = fuse(objective, reputations[chosen_addr], world.fusion)
            fee = service_fee(contract, assessed)

            content = struct.pack(">IIQ", round_number, client.index,
                                  provider.index)
            content_key = world.storage.put(content)

            satisfied = bool(world.rng.random()
                             < _effective_prob(world, provider, round_number)
                             - client.strictness)

            if scenario.channel.enabled:
                if not channel_active:
                    world.channels.open_channel(client.identity,
                                                provider.identity,
                                                scenario.channel.deposit)
                channel = world.channels.get(client.identity.address,
                                             provider.address)
                if channel.balance < fee:
                    world.channels.close_channel(channel)
                    channel = world.channels.open_channel(
                        client.identity, provider.identity,
                        scenario.channel.deposit)
                outcome = channel.transfer_round(fee, content_key, world.rng,
                                                 delays)
                if not outcome.completed:
                    rolled_back_rounds += 1
                    continue
                completed_rounds += 1
                channel_latencies.append(outcome.latency)
            else:
                payload = b"\x03" + content_key + struct.pack(">d", fee)
                tx = make_transaction(world.scheme, client.identity,
                                      provider.address, payload,
                                      scenario.service.opinion_fee,
                                      TxKind.TRANSFER_CHANNEL)
                world.anchor.submit(tx)
                completed_rounds += 1

            p, n = world.book.pair_counts(client.identity.address,
                                          provider.address)
            if satisfied:
                p += 1
            else:
                n += 1
            triple = local_opinion(p, n)
            payload = OpinionPayload(satisfied=satisfied, s=triple.s, u=triple.u,
                                     c=triple.c, value=fee, block_index=height)
            tx = world.group.collect_opinion(client.identity, provider.address,
                                             payload,
                                             fee=scenario.service.opinion_fee)
            if not scenario.rollup.enabled:
                world.anchor.submit(tx)

        if world.group.should_rollup(now):
            world.group.commit_rollup(
                world.anchor if scenario.rollup.enabled else None, now)

        world.anchor.advance_to((round_number + 1) * interval)

        level_sums: dict[int, list[float]] = {}
        leaf_values = {}
        for provider in world.providers:
            leaf = world.book.reputation(None, provider.address,
                                         world.anchor.height)
            leaf_values[provider.index] = leaf
            level_sums.setdefault(provider.level, []).append(leaf)
        level_means = {lvl: sum(vals) / len(vals)
                       for lvl, vals in level_sums.items()}
        for provider in world.providers:
            sink.add("reputation", round_number, provider.index,
                     provider.level + 1, leaf_values[provider.index],
                     level_means[provider.level])
        if channel_latencies:
            sink.add("latency", round_number, 0, 0.0,
                     sum(channel_latencies) / len(channel_latencies))

        total = world.tokens.total()
        if not math.isclose(total, world.initial_tokens, rel_tol=1e-9):
            raise RepchainError(
                f"token conservation violated at round {round_number}: "
                f"{total} != {world.initial_tokens}")

    if world.group.pending:
        world.group.commit_rollup(
            world.anchor if scenario.rollup.enabled else None,
            run.rounds * interval)

    for channel in world.channels.open_channels():
        settlement = world.channels.close_channel(channel)
        sink.add("settlements", settlement.channel_id.hex()[:16],
                 settlement.rounds, settlement.total_fees, settlement.refund,
                 len(settlement.digests))
    world.anchor.advance_to((run.rounds + 1) * interval)

    for record in world.group.records:
        sink.add("rollups", record.sequence, record.tx_count, record.bytes_raw,
                 record.bytes_compressed, record.root.hex())
    for block in world.anchor.ledger.blocks:
        sink.add("ledger", block.header.index, block.header.timestamp,
                 len(block.transactions), block.accounting_size(),
                 0)
    _fill_cumulative_ledger_bytes(sink)

    sink.add("summary", "throughput_tps", world.anchor.throughput())
    sink.add("summary", "ledger_bytes", world.anchor.ledger.total_bytes)
    sink.add("summary", "completed_rounds", completed_rounds)
    sink.add("summary", "rolled_back_rounds", rolled_back_rounds)
    sink.add("summary", "opinion_count",
             sum(r.tx_count for r in world.group.records) + len(world.group.pending))
    sink.add("summary", "tree_root", world.group.tree.root.hex())
    return sink


def _fill_cumulative_ledger_bytes(sink: MetricsSink) -> None:
    rows = sink.tables.get("ledger")
    if not rows:
        return
    cumulative = 0
    updated = []
    for row in rows:
        cumulative += row[5]
        updated.append(row[:6] + (cumulative,))
    sink.tables["ledger"] = updated


def run_scenario(scenario: Scenario, seed: Optional[int] = None,
                 baseline: bool = False) -> MetricsSink:
    """Simulate one scenario; ``baseline`` disables roll-up compression."""
    world = build_world(scenario, seed=seed,
                        use_rollup=False if baseline else None)
    return run_world(world)
