"""Scenario files: a line-oriented key=value format with [section] headers.

Grammar (documented in the README):

    # comment            blank lines and comments are ignored
    [section]            sections group keys; order is free
    key = value          values are int, float, bool (on/off/true/false),
                         bare strings, or comma-separated lists

Unknown sections or keys, type mismatches, and inconsistent populations
are reported with the offending line number.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields as dataclass_fields
from pathlib import Path
from typing import Optional, Union

from .errors import ScenarioError


@dataclass
class PopulationConfig:
    clients: int = 16
    providers: int = 16
    levels: int = 4
    level_probs: tuple[float, ...] = (0.95, 0.85, 0.7, 0.55)
    client_types: int = 4
    sensitivities: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    strictness: tuple[float, ...] = (0.0, 0.04, 0.08, 0.12)
    attackers: int = 0
    client_tokens: float = 1e7
    provider_capacity: int = 1      # accepted requests per provider per round; 0 = unlimited


@dataclass
class ChainConfig:
    block_interval: float = 5.0
    block_capacity: int = 2000
    nodes: int = 8
    super_nodes: int = 4
    neighbors: float = 4.0
    bandwidth: float = 1e6


@dataclass
class RollupConfig:
    enabled: bool = True
    max_count: int = 500
    max_time: float = 25.0
    fee: float = 1.0


@dataclass
class ChannelConfig:
    enabled: bool = True
    deposit: float = 50000.0
    step_time: float = 0.5
    timeout: float = 10.0
    timers: bool = True
    open_fee: float = 1.0
    delay_prob: float = 0.0
    delay_magnitude: float = 5.0


@dataclass
class ReputationConfig:
    decay_per_interval: float = 0.95
    gamma: float = 0.5
    mu: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    default_sensitivity: float = 0.0


@dataclass
class AssessmentConfig:
    alpha: float = 0.5
    fee_min: float = 0.05
    fee_max: float = 10.0
    fee_bands: int = 2
    objective_lo: float = 0.0
    objective_hi: float = 1.0
    expected: float = 0.5
    queue_len: float = 10.0      # E(L) used by the analytic latency model


@dataclass
class ContractConfig:
    bonus_rate: float = 5.0
    fixed_rate: float = 0.2          # fixed fee = fixed_rate * difficulty
    optimize: bool = False
    provider_threshold: float = 0.0
    bonus_grid: tuple[float, float, int] = (0.0, 20.0, 8)
    fixed_grid: tuple[float, float, int] = (1.0, 20.0, 8)
    compute_grid: tuple[float, float, int] = (5.0, 50.0, 8)
    fee_grid: tuple[float, float, int] = (0.1, 9.0, 8)


@dataclass
class ServiceConfig:
    output_bytes: float = 1e6
    difficulty: float = 50.0
    compute_rates: tuple[float, ...] = (40.0, 30.0, 20.0, 10.0)
    roi: float = 0.2
    opinion_fee: float = 1.0


@dataclass
class AttackConfig:
    kind: str = "none"               # none | flooding | long_range | dusting
    target_level: int = 2
    sybils: int = 20
    per_round: int = 2
    value: float = 0.01
    start_round: int = 0
    end_round: int = 40
    familiarity: bool = True
    freshness: bool = True
    market_worth: bool = True


@dataclass
class RunConfig:
    rounds: int = 200
    seed: int = 7
    scenario_id: str = "scenario"
    drop_round: int = 0              # 0 disables the capability drop
    drop_levels: tuple[int, ...] = ()
    drop_delta: float = 0.25


@dataclass
class Scenario:
    population: PopulationConfig = field(default_factory=PopulationConfig)
    chain: ChainConfig = field(default_factory=ChainConfig)
    rollup: RollupConfig = field(default_factory=RollupConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    reputation: ReputationConfig = field(default_factory=ReputationConfig)
    assessment: AssessmentConfig = field(default_factory=AssessmentConfig)
    contract: ContractConfig = field(default_factory=ContractConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> None:
        pop = self.population
        if pop.attackers * 2 > pop.providers:
            raise ScenarioError(
                f"attackers={pop.attackers} exceeds half of providers={pop.providers}")
        if len(pop.level_probs) != pop.levels:
            raise ScenarioError("level_probs length must equal levels")
        if len(pop.sensitivities) != pop.client_types:
            raise ScenarioError("sensitivities length must equal client_types")
        if len(pop.strictness) != pop.client_types:
            raise ScenarioError("strictness length must equal client_types")
        if len(self.service.compute_rates) != pop.levels:
            raise ScenarioError("compute_rates length must equal levels")
        if self.attack.kind not in ("none", "flooding", "long_range", "dusting"):
            raise ScenarioError(f"unknown attack kind {self.attack.kind!r}")
        if self.attack.kind != "none" and \
                not 1 <= self.attack.target_level <= pop.levels:
            raise ScenarioError("attack target_level out of range")
        for level in self.run.drop_levels:
            if not 1 <= level <= pop.levels:
                raise ScenarioError(f"drop level {level} out of range")


_SECTIONS = {
    "population": PopulationConfig,
    "chain": ChainConfig,
    "rollup": RollupConfig,
    "channel": ChannelConfig,
    "reputation": ReputationConfig,
    "assessment": AssessmentConfig,
    "contract": ContractConfig,
    "service": ServiceConfig,
    "attack": AttackConfig,
    "run": RunConfig,
}

_TRUE = {"true", "on", "yes", "1"}
_FALSE = {"false", "off", "no", "0"}


def _convert(raw: str, target_type, line_no: int, key: str):
    raw = raw.strip()
    origin = getattr(target_type, "__origin__", None)
    try:
        if target_type is bool:
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is str:
            return raw
        if origin is tuple:
            args = target_type.__args__
            items = [piece.strip() for piece in raw.split(",") if piece.strip()]
            if len(args) == 2 and args[1] is Ellipsis:
                return tuple(_convert(item, args[0], line_no, key) for item in items)
            if len(items) != len(args):
                raise ValueError(f"expected {len(args)} items, got {len(items)}")
            return tuple(_convert(item, arg, line_no, key)
                         for item, arg in zip(items, args))
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f"line {line_no}: bad value for {key!r}: {exc}") from None
    raise ScenarioError(f"line {line_no}: unsupported type for {key!r}")


def parse_scenario(text: str) -> Scenario:
    scenario = Scenario()
    section_name: Optional[str] = None
    section_obj = None
    section_types: dict[str, type] = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section_name = line[1:-1].strip()
            if section_name not in _SECTIONS:
                raise ScenarioError(f"line {line_no}: unknown section [{section_name}]")
            section_obj = getattr(scenario, section_name)
            section_types = {f.name: f.type for f in dataclass_fields(section_obj)}
            continue
        if "=" not in line:
            raise ScenarioError(f"line {line_no}: expected 'key = value', got {raw_line!r}")
        if section_obj is None:
            raise ScenarioError(f"line {line_no}: key outside any [section]")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        if key not in section_types:
            raise ScenarioError(
                f"line {line_no}: unknown key {key!r} in [{section_name}]")
        resolved = _resolve_type(section_types[key])
        setattr(section_obj, key, _convert(raw_value, resolved, line_no, key))
    scenario.validate()
    return scenario


def _resolve_type(annotation):
    """Dataclass field annotations are strings under future-annotations."""
    if isinstance(annotation, str):
        namespace = {"tuple": tuple, "int": int, "float": float,
                     "bool": bool, "str": str}
        return eval(annotation, namespace)  # noqa: S307 - controlled input
    return annotation


def load_scenario(path: Union[str, Path]) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from None
    return parse_scenario(text)
