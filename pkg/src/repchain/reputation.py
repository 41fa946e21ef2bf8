"""Multi-weight subjective-logic reputation.

A client's judgment history toward a provider is condensed into a local
opinion triple (satisfying, unsatisfying, uncertainty):

    c = 1/(p + n)
    s = (1 - c) * p/(p + n)
    u = (1 - c) * n/(p + n)

Opinions shared by other clients are calibrated by three factors before
averaging: familiarity (share of the provider's total interactions),
freshness (geometric decay in the age of the opinion's block), and market
worth (decay-weighted sum of fees the client actually paid, excluding the
most recent round).  The per-client weight is the 2-norm of the
elementwise product of the factor vector with configurable factor weights.
The averaged reference triple scales its satisfying part by (1 - theta)
and its unsatisfying part by theta, where theta is the querying client's
sensitivity; the reference triple therefore need not lie on the simplex.

Local and reference triples are fused by uncertainty-weighted cross
multiplication, and the final reputation credits a gamma fraction of the
fused uncertainty on top of the fused satisfaction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import DomainError


class Opinion(NamedTuple):
    """Subjective-logic triple.  Outputs of local_opinion lie on the simplex."""

    s: float
    u: float
    c: float

    def on_simplex(self, tol: float = 1e-9) -> bool:
        return (min(self.s, self.u, self.c) >= -tol
                and abs(self.s + self.u + self.c - 1.0) <= tol)


def local_opinion(p: int, n: int) -> Opinion:
    """Condense p positive and n negative judgments into an opinion."""
    total = p + n
    if total < 1:
        raise DomainError("local opinion requires at least one interaction")
    c = 1.0 / total
    s = (1.0 - c) * p / total
    u = (1.0 - c) * n / total
    return Opinion(s, u, c)


def familiarity(pair_count: int, provider_total: int) -> float:
    """Share of the provider's interactions contributed by one client."""
    if provider_total <= 0:
        raise DomainError("provider has no interactions")
    return pair_count / provider_total


def freshness(block_of_opinion: int, latest_block: int, block_rate: float,
              decay: float) -> float:
    """decay ** age, age measured in seconds of block-index difference."""
    if latest_block < block_of_opinion:
        raise DomainError("latest block precedes the opinion's block")
    if not 0.0 < decay < 1.0:
        raise DomainError("decay must be in (0, 1)")
    age = (latest_block - block_of_opinion) / block_rate
    return decay ** age


def market_worth(values: Sequence[float], blocks: Sequence[int],
                 latest_block: int, block_rate: float, decay: float) -> float:
    """Decay-weighted sum of past service fees, most recent round excluded."""
    if len(values) != len(blocks):
        raise DomainError("value/block history lengths differ")
    if len(values) <= 1:
        return 0.0
    past_values = np.asarray(values[:-1], dtype=float)
    past_blocks = np.asarray(blocks[:-1], dtype=float)
    ages = (latest_block - past_blocks) / block_rate
    return float(np.dot(past_values, decay ** ages))


@dataclass(frozen=True)
class CalibrationFactors:
    """Weighting factors attached to one client's shared opinion."""

    familiarity: float
    freshness: float
    worth: float

    def weight(self, mu: tuple[float, float, float]) -> float:
        """2-norm of the elementwise product with the factor weights."""
        return math.sqrt((mu[0] * self.familiarity) ** 2
                         + (mu[1] * self.freshness) ** 2
                         + (mu[2] * self.worth) ** 2)


def reference_opinion(entries: Sequence[tuple[Opinion, CalibrationFactors]],
                      mu: tuple[float, float, float],
                      sensitivity: float) -> Opinion:
    """Weighted average of shared opinions, scaled by the client's sensitivity.

    The satisfying part is scaled by (1 - sensitivity) and the unsatisfying
    part by sensitivity; uncertainty is averaged unscaled.
    """
    if not entries:
        raise DomainError("reference aggregation needs at least one client")
    weights = [factors.weight(mu) for _, factors in entries]
    total = sum(weights)
    if total <= 0.0:
        raise DomainError("all reference weights are zero")
    s_bar = sum(w * op.s for w, (op, _) in zip(weights, entries)) / total
    u_bar = sum(w * op.u for w, (op, _) in zip(weights, entries)) / total
    c_bar = sum(w * op.c for w, (op, _) in zip(weights, entries)) / total
    return Opinion((1.0 - sensitivity) * s_bar, sensitivity * u_bar, c_bar)


def fuse_opinions(local: Opinion, reference: Opinion) -> Opinion:
    """Uncertainty-weighted fusion of a local and a reference triple."""
    denominator = local.c + reference.c - local.c * reference.c
    if denominator <= 0.0:
        raise DomainError("fusion undefined: joint certainty denominator is zero")
    s = (local.s * reference.c + reference.s * local.c) / denominator
    u = (local.u * reference.c + reference.u * local.c) / denominator
    c = (reference.c * local.c) / denominator
    return Opinion(s, u, c)


def reputation_value(fused: Opinion, gamma: float) -> float:
    """Final reputation: fused satisfaction plus gamma credit on uncertainty."""
    if not 0.0 <= gamma <= 1.0:
        raise DomainError("gamma must be in [0, 1]")
    return fused.s + gamma * fused.c


@dataclass(frozen=True)
class AblationFlags:
    """Which calibration factors are active.

    Disabling familiarity or market worth zeroes that factor's weight
    component; disabling freshness also freezes the decay inside market
    worth at 1 (the factor and the decay are the same mechanism).
    """

    familiarity: bool = True
    freshness: bool = True
    market_worth: bool = True


@dataclass(frozen=True)
class ReputationParams:
    """Scheme-wide calibration constants.

    ``default_sensitivity`` applies to aggregate queries with no client
    preference (the committed tree leaves); zero keeps the leaf equal to
    the unscaled calibrated satisfaction plus the uncertainty credit.
    """

    decay: float = 0.99
    gamma: float = 0.5
    mu: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    default_sensitivity: float = 0.0
    block_rate: float = 0.2
    ablations: AblationFlags = field(default_factory=AblationFlags)


@dataclass
class _PairRecord:
    positive: int = 0
    negative: int = 0
    values: list[float] = field(default_factory=list)
    blocks: list[int] = field(default_factory=list)

    @property
    def count(self) -> int:
        return self.positive + self.negative

    @property
    def latest_block(self) -> int:
        return self.blocks[-1]


class ReferenceSnapshot:
    """Per-provider aggregation state frozen at one block index.

    Precomputes every interactor's opinion and weight so that a reference
    triple excluding any single client is an O(1) subtraction.  Market
    worth is range-normalized to [0, 1] across all interactors of the
    provider before entering the weight norm.
    """

    def __init__(self, clients: list[bytes], opinions: list[Opinion],
                 factors: list[CalibrationFactors],
                 mu: tuple[float, float, float]) -> None:
        self.clients = clients
        self.opinions = opinions
        self.factors = factors
        self._index = {client: i for i, client in enumerate(clients)}
        self._weights = [f.weight(mu) for f in factors]
        self._sum_w = sum(self._weights)
        self._sum_ws = sum(w * op.s for w, op in zip(self._weights, opinions))
        self._sum_wu = sum(w * op.u for w, op in zip(self._weights, opinions))
        self._sum_wc = sum(w * op.c for w, op in zip(self._weights, opinions))

    def reference(self, sensitivity: float,
                  exclude: Optional[bytes] = None) -> Opinion:
        sum_w, sum_ws = self._sum_w, self._sum_ws
        sum_wu, sum_wc = self._sum_wu, self._sum_wc
        excluded_index = self._index.get(exclude) if exclude is not None else None
        if excluded_index is not None:
            w = self._weights[excluded_index]
            op = self.opinions[excluded_index]
            sum_w -= w
            sum_ws -= w * op.s
            sum_wu -= w * op.u
            sum_wc -= w * op.c
        remaining = len(self.clients) - (1 if excluded_index is not None else 0)
        if remaining <= 0:
            raise DomainError("reference aggregation needs at least one client")
        if sum_w <= 0.0:
            raise DomainError("all reference weights are zero")
        return Opinion((1.0 - sensitivity) * sum_ws / sum_w,
                       sensitivity * sum_wu / sum_w,
                       sum_wc / sum_w)


class InteractionBook:
    """Interaction ledger plus reputation queries.

    Owned by the simulation event loop; queries build per-provider
    snapshots lazily and memoize them until the next recorded interaction
    or a later block index invalidates them.
    """

    def __init__(self, params: ReputationParams) -> None:
        self.params = params
        self._pairs: dict[tuple[bytes, bytes], _PairRecord] = {}
        self._provider_clients: dict[bytes, list[bytes]] = {}
        self._provider_totals: dict[bytes, int] = {}
        self._snapshot_cache: dict[bytes, tuple[int, int, ReferenceSnapshot]] = {}
        self._version = 0

    def record(self, client: bytes, provider: bytes, satisfied: bool,
               value: float, block_index: int) -> None:
        pair = self._pairs.get((client, provider))
        if pair is None:
            pair = _PairRecord()
            self._pairs[(client, provider)] = pair
            self._provider_clients.setdefault(provider, []).append(client)
        if satisfied:
            pair.positive += 1
        else:
            pair.negative += 1
        pair.values.append(value)
        pair.blocks.append(block_index)
        self._provider_totals[provider] = self._provider_totals.get(provider, 0) + 1
        self._version += 1

    def pair_counts(self, client: bytes, provider: bytes) -> tuple[int, int]:
        pair = self._pairs.get((client, provider))
        if pair is None:
            return (0, 0)
        return (pair.positive, pair.negative)

    def local(self, client: bytes, provider: bytes) -> Opinion:
        p, n = self.pair_counts(client, provider)
        return local_opinion(p, n)

    def familiarity(self, client: bytes, provider: bytes) -> float:
        pair = self._pairs.get((client, provider))
        count = pair.count if pair is not None else 0
        return familiarity(count, self._provider_totals.get(provider, 0))

    def calibration(self, client: bytes, provider: bytes,
                    latest_block: int) -> CalibrationFactors:
        """Raw (un-normalized-worth) factors for one shared opinion."""
        ab = self.params.ablations
        pair = self._pairs[(client, provider)]
        fresh = (freshness(pair.latest_block, latest_block,
                           self.params.block_rate, self.params.decay)
                 if ab.freshness else 1.0)
        decay = self.params.decay if ab.freshness else 1.0
        worth = market_worth(pair.values, pair.blocks, latest_block,
                             self.params.block_rate, decay)
        return CalibrationFactors(
            familiarity=self.familiarity(client, provider),
            freshness=fresh, worth=worth)

    def _effective_mu(self) -> tuple[float, float, float]:
        ab = self.params.ablations
        mu = self.params.mu
        return (mu[0] if ab.familiarity else 0.0,
                mu[1] if ab.freshness else 0.0,
                mu[2] if ab.market_worth else 0.0)

    def snapshot(self, provider: bytes, latest_block: int) -> ReferenceSnapshot:
        cached = self._snapshot_cache.get(provider)
        if cached is not None and cached[0] == self._version and cached[1] == latest_block:
            return cached[2]
        clients = self._provider_clients.get(provider)
        if not clients:
            raise DomainError("provider has no interactions")
        opinions = [self.local(client, provider) for client in clients]
        raw = [self.calibration(client, provider, latest_block)
               for client in clients]
        worths = [f.worth for f in raw]
        w_min, w_max = min(worths), max(worths)
        span = w_max - w_min
        factors = [CalibrationFactors(f.familiarity, f.freshness,
                                      (f.worth - w_min) / span if span > 0 else 0.0)
                   for f in raw]
        snap = ReferenceSnapshot(clients, opinions, factors, self._effective_mu())
        self._snapshot_cache[provider] = (self._version, latest_block, snap)
        return snap

    def reputation(self, client: Optional[bytes], provider: bytes,
                   latest_block: int, sensitivity: Optional[float] = None) -> float:
        """Reputation of ``provider`` from ``client``'s point of view.

        Falls back to the reference-only path when the client has no
        interactions with the provider, to the local-only path when no
        other client has any, and to the vacuous prior gamma when the
        provider is entirely unknown.
        """
        theta = (sensitivity if sensitivity is not None
                 else self.params.default_sensitivity)
        gamma = self.params.gamma
        has_local = (client is not None
                     and (client, provider) in self._pairs)
        try:
            snap = self.snapshot(provider, latest_block)
            reference = snap.reference(theta, exclude=client)
        except DomainError:
            reference = None
        if has_local:
            local = self.local(client, provider)
            if reference is None:
                return reputation_value(local, gamma)
            fused = fuse_opinions(local, reference)
            return reputation_value(fused, gamma)
        if reference is None:
            return gamma  # vacuous prior: full uncertainty, gamma credit
        return reputation_value(reference, gamma)

    def leaf_reputation(self, provider: bytes, latest_block: int) -> float:
        """Client-independent aggregate stored in the reputation tree."""
        return self.reputation(None, provider, latest_block)


class AcceptancePolicy:
    """Decides whether a provider accepts a handshake stage."""

    def accepts(self, provider: bytes, stage: int, rng: np.random.Generator) -> bool:
        return True


class ProbabilisticAcceptance(AcceptancePolicy):
    def __init__(self, probability: float) -> None:
        self.probability = probability

    def accepts(self, provider: bytes, stage: int, rng: np.random.Generator) -> bool:
        return bool(rng.random() < self.probability)


class CapacityAcceptance(AcceptancePolicy):
    """Each provider serves at most ``capacity`` requests per round.

    A full provider rejects the first handshake, sending the client to
    the next candidate; reset() starts a new round.
    """

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise DomainError("capacity must be at least 1")
        self.capacity = capacity
        self._served: dict[bytes, int] = {}

    def reset(self) -> None:
        self._served.clear()

    def accepts(self, provider: bytes, stage: int, rng: np.random.Generator) -> bool:
        if stage == 1:
            return self._served.get(provider, 0) < self.capacity
        self._served[provider] = self._served.get(provider, 0) + 1
        return True


def select_provider(reputations: dict[bytes, float],
                    policy: AcceptancePolicy,
                    rng: np.random.Generator,
                    on_attempt: Optional[Callable[[bytes, bool], None]] = None,
                    ) -> Optional[bytes]:
    """Try candidates in reputation-descending order with two handshakes.

    Each candidate must acknowledge the service request and then the
    delivered prompts; the first candidate passing both stages wins.
    Returns None when every candidate rejects or the list is empty.
    """
    ordered = sorted(reputations, key=lambda a: (-reputations[a], a))
    for provider in ordered:
        accepted = (policy.accepts(provider, 1, rng)
                    and policy.accepts(provider, 2, rng))
        if on_attempt is not None:
            on_attempt(provider, accepted)
        if accepted:
            return provider
    return None
