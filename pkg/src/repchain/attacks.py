"""Attack opinion-stream generators.

Each attack yields forged opinion events per round, injected into the
coordinator pipeline ahead of honest traffic:

* flooding: many sybil clients post frequent positive dust-value opinions
  on the targets during the attack window.
* long_range: a few sybils post a handful of very high-value opinions
  early, then go silent; with freshness disabled the weight persists.
* dusting: massive sybil opinion volume at dust value, which dominates
  familiarity and freshness unless market worth gates it.

Generators refuse populations where attackers control more than half of
the providers.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ScenarioError
from .scenario import AttackConfig


@dataclass(frozen=True)
class InjectedOpinion:
    round_number: int
    sybil_index: int
    target_index: int     # index into the attacked provider list
    satisfied: bool
    value: float


@dataclass(frozen=True)
class AttackPlan:
    kind: str
    sybils: int
    events_by_round: dict[int, tuple[InjectedOpinion, ...]]

    def events(self, round_number: int) -> tuple[InjectedOpinion, ...]:
        return self.events_by_round.get(round_number, ())


def check_threat_bound(attacker_count: int, provider_count: int) -> None:
    if attacker_count * 2 > provider_count:
        raise ScenarioError(
            f"threat bound violated: {attacker_count} attackers over "
            f"{provider_count} providers exceeds 50%")


def build_attack(config: AttackConfig, target_count: int,
                 provider_count: int, rounds: int) -> AttackPlan:
    """Materialize the full deterministic event stream for one attack."""
    if config.kind == "none":
        return AttackPlan("none", 0, {})
    check_threat_bound(target_count, provider_count)
    if config.kind in ("flooding", "dusting"):
        return _volume_attack(config, target_count, rounds)
    if config.kind == "long_range":
        return _long_range(config, target_count, rounds)
    raise ScenarioError(f"unknown attack kind {config.kind!r}")


def _volume_attack(config: AttackConfig, target_count: int,
                   rounds: int) -> AttackPlan:
    events: dict[int, tuple[InjectedOpinion, ...]] = {}
    end = min(config.end_round, rounds)
    for round_number in range(config.start_round, end):
        batch = []
        for sybil in range(config.sybils):
            for k in range(config.per_round):
                batch.append(InjectedOpinion(
                    round_number=round_number, sybil_index=sybil,
                    target_index=(sybil + k) % target_count,
                    satisfied=True, value=config.value))
        events[round_number] = tuple(batch)
    return AttackPlan(config.kind, config.sybils, events)


def _long_range(config: AttackConfig, target_count: int,
                rounds: int) -> AttackPlan:
    # Few forged opinions, each claiming an outsized service value.
    events: dict[int, tuple[InjectedOpinion, ...]] = {}
    end = min(config.end_round, rounds)
    for round_number in range(config.start_round, end):
        batch = []
        for sybil in range(config.sybils):
            batch.append(InjectedOpinion(
                round_number=round_number, sybil_index=sybil,
                target_index=sybil % target_count,
                satisfied=True, value=config.value))
        events[round_number] = tuple(batch)
    return AttackPlan(config.kind, config.sybils, events)
