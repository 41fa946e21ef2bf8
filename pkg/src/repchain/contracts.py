"""Contract-based payment optimization.

The service fee pays a fixed difficulty-dependent part plus a bonus per
unit of assessed quality, so a provider that skimps on invested compute
earns less.  The client picks the contract (bonus rate, fixed fee) that
maximizes its own utility subject to the provider playing a best response
(incentive compatibility, solved by exhaustive argmax over an action
grid) and clearing a participation threshold (individual rationality).

The provider's compute cost r * c * T2 collapses to r * difficulty
because T2 = difficulty / c; the action's compute component therefore
influences utility only through the assessed quality's latency term.
This degeneracy is surfaced in the audit report rather than altered.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .assessment import FeeModel, FusionParams, ServiceContext, normalize
from .errors import DomainError
from .ledger import BLOCK_HEADER_BYTES, PLAIN_TX_BYTES


@dataclass(frozen=True)
class MarketState:
    """The 12-component market state for one contracting episode."""

    output_bytes: float        # generated output size
    bandwidth: float           # average link bandwidth, bytes/s
    difficulty: float          # task difficulty, compute units
    block_capacity: int        # anchor block capacity, transactions
    client_count: int          # market population
    avg_neighbors: float       # gossip fan-out
    honest_prob: float         # share of honest broadcasters
    avg_queue_len: float       # observed mean pool length
    block_rate: float          # blocks per second
    roi: float                 # client return on investment
    compute_unit_cost: float   # price of one compute unit-second
    interaction_round: int     # how many rounds this pair has interacted

    def __post_init__(self) -> None:
        values = (self.output_bytes, self.bandwidth, self.difficulty,
                  self.block_capacity, self.client_count, self.avg_neighbors,
                  self.honest_prob, self.avg_queue_len, self.block_rate,
                  self.roi, self.compute_unit_cost, self.interaction_round)
        if any(v <= 0 for v in values):
            raise DomainError("every market-state component must be positive")
        if self.interaction_round != int(self.interaction_round):
            raise DomainError("interaction round must be an integer")

    @property
    def block_bytes(self) -> float:
        return BLOCK_HEADER_BYTES + PLAIN_TX_BYTES * self.block_capacity


@dataclass(frozen=True)
class Contract:
    bonus_rate: float
    fixed_fee: float

    def __post_init__(self) -> None:
        if self.bonus_rate < 0 or self.fixed_fee < 0:
            raise DomainError("contract terms must be non-negative")


@dataclass(frozen=True)
class ProviderAction:
    compute_rate: float
    channel_fee: float


@dataclass(frozen=True)
class Grid:
    """Inclusive linear grid over one decision axis."""

    lo: float
    hi: float
    points: int

    def values(self) -> np.ndarray:
        if self.points < 1:
            raise DomainError("grid needs at least one point")
        if self.points == 1:
            return np.array([self.lo], dtype=float)
        return np.linspace(self.lo, self.hi, self.points)


def service_fee(contract: Contract, assessed: float) -> float:
    """Round fee: fixed part plus bonus per unit of assessed quality."""
    return contract.fixed_fee + contract.bonus_rate * assessed


def client_utility(fee: float, assessed: float, roi: float,
                   expected: float) -> float:
    """Revenue scaled by realized-over-expected quality, minus the fee."""
    if expected <= 0:
        raise DomainError("expected assessment must be positive")
    return (1.0 + roi) * fee * (assessed / expected) - fee


def provider_cost(state: MarketState, channel_fee: float) -> float:
    """Amortized channel fee plus compute cost (constant in the rate)."""
    return (channel_fee / state.interaction_round
            + state.compute_unit_cost * state.difficulty)


def provider_utility(contract: Contract, state: MarketState,
                     channel_fee: float, assessed: float) -> float:
    return service_fee(contract, assessed) - provider_cost(state, channel_fee)


@dataclass(frozen=True)
class ContractEnv:
    """Assessment context shared by every (contract, action) evaluation."""

    fee_model: FeeModel
    fusion: FusionParams
    subjective_score: float
    channel_active: bool = False
    expected_assessment: float = 0.5

    def service_context(self, state: MarketState) -> ServiceContext:
        return ServiceContext(
            output_bytes=state.output_bytes, bandwidth=state.bandwidth,
            difficulty=state.difficulty, block_bytes=state.block_bytes,
            node_count=state.client_count, avg_neighbors=state.avg_neighbors,
            honest_prob=state.honest_prob, block_rate=state.block_rate,
            avg_queue_len=state.avg_queue_len, fee_model=self.fee_model)


def assessment_for_actions(state: MarketState, env: ContractEnv,
                           compute_rates: np.ndarray,
                           channel_fees: np.ndarray) -> np.ndarray:
    """Assessed quality for every grid action, shape (rates, fees).

    The compute rate drives inference time; the channel fee picks the
    queuing band of the establishment transaction (zero while a channel
    is already active).
    """
    ctx = env.service_context(state)
    latencies = np.array([[ctx.latency(float(c), float(f), env.channel_active)
                           for f in channel_fees] for c in compute_rates])
    if np.any(latencies <= 0):
        raise DomainError("non-positive latency in action grid")
    objective = 1.0 / latencies
    lo, hi = env.fusion.objective_bounds
    if not lo < hi:
        raise DomainError("degenerate objective bounds")
    obj_norm = (np.clip(objective, lo, hi) - lo) / (hi - lo)
    sub_norm = normalize(env.subjective_score, *env.fusion.subjective_bounds)
    return env.fusion.alpha * obj_norm + (1.0 - env.fusion.alpha) * sub_norm


@dataclass(frozen=True)
class BestResponse:
    action: ProviderAction
    utility: float
    assessed: float


def best_response(contract: Contract, state: MarketState, env: ContractEnv,
                  compute_grid: Grid, fee_grid: Grid) -> BestResponse:
    """Exhaustive provider argmax; ties break to the lowest rate, then fee."""
    rates = compute_grid.values()
    fees = fee_grid.values()
    assessed = assessment_for_actions(state, env, rates, fees)
    utilities = (contract.fixed_fee + contract.bonus_rate * assessed
                 - (fees / state.interaction_round
                    + state.compute_unit_cost * state.difficulty)[None, :])
    flat_index = int(np.argmax(utilities))
    i_rate, i_fee = divmod(flat_index, len(fees))
    return BestResponse(
        action=ProviderAction(float(rates[i_rate]), float(fees[i_fee])),
        utility=float(utilities[i_rate, i_fee]),
        assessed=float(assessed[i_rate, i_fee]))


@dataclass(frozen=True)
class ContractSolution:
    feasible: bool
    contract: Optional[Contract]
    action: Optional[ProviderAction]
    client_utility: float
    provider_utility: float
    assessed: float


def optimize_contract(state: MarketState, env: ContractEnv,
                      bonus_grid: Grid, fixed_grid: Grid,
                      compute_grid: Grid, fee_grid: Grid,
                      provider_threshold: float) -> ContractSolution:
    """Bilevel grid search for the client-optimal contract.

    For every grid contract the provider best response is computed
    exhaustively; contracts whose best-response provider utility falls
    below the participation threshold are discarded; among the rest the
    contract with the highest client utility wins.  Contract ties break
    to the lowest bonus rate, then the lowest fixed fee.
    """
    rates = compute_grid.values()
    fees = fee_grid.values()
    assessed = assessment_for_actions(state, env, rates, fees).ravel()
    cost = (np.repeat(fees[None, :], len(rates), axis=0).ravel()
            / state.interaction_round
            + state.compute_unit_cost * state.difficulty)
    bonus = bonus_grid.values()
    fixed = fixed_grid.values()
    n_actions = assessed.size
    n_contracts = len(bonus) * len(fixed)
    bonus_col = np.repeat(bonus, len(fixed))[:, None]
    fixed_col = np.tile(fixed, len(bonus))[:, None]
    fee_matrix = fixed_col + bonus_col * assessed[None, :]
    u_sp = fee_matrix - cost[None, :]
    best_idx = np.argmax(u_sp, axis=1)
    rows = np.arange(n_contracts)
    u_sp_best = u_sp[rows, best_idx]
    fee_best = fee_matrix[rows, best_idx]
    assessed_best = assessed[best_idx]
    u_c = ((1.0 + state.roi) * fee_best
           * (assessed_best / env.expected_assessment) - fee_best)
    feasible = u_sp_best >= provider_threshold
    if not bool(np.any(feasible)):
        return ContractSolution(False, None, None,
                                float("-inf"), float("-inf"), 0.0)
    ranked = np.where(feasible, u_c, -np.inf)
    winner = int(np.argmax(ranked))
    i_bonus, i_fixed = divmod(winner, len(fixed))
    action_flat = int(best_idx[winner])
    i_rate, i_fee = divmod(action_flat, len(fees))
    return ContractSolution(
        feasible=True,
        contract=Contract(float(bonus[i_bonus]), float(fixed[i_fixed])),
        action=ProviderAction(float(rates[i_rate]), float(fees[i_fee])),
        client_utility=float(u_c[winner]),
        provider_utility=float(u_sp_best[winner]),
        assessed=float(assessed_best[winner]))


def random_market_states(count: int, rng: np.random.Generator) -> list[MarketState]:
    """Draw market states spanning the supported parameter ranges."""
    states = []
    for _ in range(count):
        states.append(MarketState(
            output_bytes=float(rng.uniform(1e5, 5e6)),
            bandwidth=float(rng.uniform(5e5, 5e6)),
            difficulty=float(rng.uniform(10.0, 100.0)),
            block_capacity=int(rng.integers(500, 2001)),
            client_count=int(rng.integers(4, 64)),
            avg_neighbors=float(rng.uniform(2.0, 8.0)),
            honest_prob=float(rng.uniform(0.5, 1.0)),
            avg_queue_len=float(rng.uniform(1.0, 200.0)),
            block_rate=float(rng.uniform(0.1, 1.0)),
            roi=float(rng.uniform(0.05, 0.5)),
            compute_unit_cost=float(rng.uniform(0.01, 0.2)),
            interaction_round=int(rng.integers(1, 10))))
    return states


@dataclass(frozen=True)
class DeviationRow:
    compute_rate: float
    channel_fee: float
    provider_utility: float
    delta: float


@dataclass(frozen=True)
class AuditReport:
    best: BestResponse
    rows: tuple[DeviationRow, ...]
    max_delta: float
    compute_cost_constant: float  # r * difficulty: invariant in the rate

    @property
    def no_profitable_deviation(self) -> bool:
        return self.max_delta <= 0.0


def moral_hazard_audit(contract: Contract, state: MarketState, env: ContractEnv,
                       compute_grid: Grid, fee_grid: Grid) -> AuditReport:
    """Record the provider's utility loss for every deviation from best response."""
    rates = compute_grid.values()
    fees = fee_grid.values()
    assessed = assessment_for_actions(state, env, rates, fees)
    utilities = (contract.fixed_fee + contract.bonus_rate * assessed
                 - (fees / state.interaction_round
                    + state.compute_unit_cost * state.difficulty)[None, :])
    flat = int(np.argmax(utilities))
    i_rate, i_fee = divmod(flat, len(fees))
    best = BestResponse(ProviderAction(float(rates[i_rate]), float(fees[i_fee])),
                        float(utilities[i_rate, i_fee]),
                        float(assessed[i_rate, i_fee]))
    deltas = utilities - best.utility
    rows = tuple(DeviationRow(float(rates[i]), float(fees[j]),
                              float(utilities[i, j]), float(deltas[i, j]))
                 for i in range(len(rates)) for j in range(len(fees)))
    return AuditReport(best=best, rows=rows, max_delta=float(deltas.max()),
                       compute_cost_constant=state.compute_unit_cost * state.difficulty)
