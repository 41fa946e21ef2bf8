"""Objective service-quality model and objective/subjective fusion.

Latency of one service round decomposes into three parts: output
transfer (size over bandwidth), inference (task difficulty over invested
compute), and on-chain confirmation.  Confirmation is zero while a
transfer channel is active; otherwise it is (broadcast + queuing) /
(1 - fork probability), with fork probability pinned at 0 for DPoS.

Transaction fees are modeled as chi-square distributed with 0.59 degrees
of freedom.  The fee range [f_min, f_max] is split into Z bands; a
transaction's queuing delay depends only on its band.  Band z's delay
follows a downward induction from the top band Z:

    T_q(Z) = E(L) / (w_Z * lambda)
    T_q(z) = [ E(L) / (lambda * sum_{k>=z} w_k)
               - sum_{k>z} w_k * T_q(k) ] / w_z

where w_k is the band's chi-square weight and E(L) the average pool
length.  The induction is evaluated exactly as stated; it is not
guaranteed non-negative or monotone for Z >= 3, so results carry a flag
instead of being clamped.

The printed form of the density uses a positive exponent e^{x/2}; that
variant cannot integrate to 1 and is kept behind a flag.  The default is
the standard negative-exponent density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from scipy import integrate

from .errors import DomainError

CHI_SQUARE_DF = 0.59


def normalize(x: float, x_min: float, x_max: float) -> float:
    """Map x linearly onto [0, 1], clamping out-of-range inputs first."""
    if not x_min < x_max:
        raise DomainError(f"degenerate normalization bounds [{x_min}, {x_max}]")
    clamped = min(max(x, x_min), x_max)
    return (clamped - x_min) / (x_max - x_min)


def transfer_time(output_bytes: float, bandwidth: float) -> float:
    """Seconds to move the generated output at the average bandwidth."""
    if bandwidth <= 0:
        raise DomainError("bandwidth must be positive")
    return output_bytes / bandwidth


def inference_time(difficulty: float, compute_rate: float) -> float:
    """Seconds of inference at the invested compute rate."""
    if compute_rate <= 0:
        raise DomainError("compute rate must be positive")
    return difficulty / compute_rate


def chi_square_pdf(x: float, df: float = CHI_SQUARE_DF,
                   printed_exponent: bool = False) -> float:
    """Chi-square density; zero for x <= 0.

    ``printed_exponent=True`` evaluates the e^{+x/2} variant for fidelity
    comparison; the default is the standard e^{-x/2} form.
    """
    if x <= 0:
        return 0.0
    half = df / 2.0
    sign = 1.0 if printed_exponent else -1.0
    return (x ** (half - 1.0) * math.exp(sign * x / 2.0)
            / (2.0 ** half * math.gamma(half)))


def broadcast_time(block_bytes: float, node_count: int, avg_neighbors: float,
                   avg_bandwidth: float, honest_prob: float,
                   log_base: Optional[float] = None) -> float:
    """Gossip latency: log(nodes) * block size / (neighbors * bandwidth * honesty)."""
    if node_count < 1 or avg_neighbors <= 0 or avg_bandwidth <= 0:
        raise DomainError("broadcast parameters must be positive")
    if honest_prob <= 0:
        raise DomainError("honest broadcast probability must be positive")
    spread = math.log(node_count) if log_base is None else math.log(node_count, log_base)
    return spread * block_bytes / (avg_neighbors * avg_bandwidth * honest_prob)


@dataclass(frozen=True)
class FeeModel:
    """Fee bands over [f_min, f_max], weighted by the chi-square law."""

    f_min: float
    f_max: float
    bands: int
    df: float = CHI_SQUARE_DF

    def __post_init__(self) -> None:
        if not 0 < self.f_min < self.f_max:
            raise DomainError("fee bounds must satisfy 0 < f_min < f_max")
        if self.bands < 1:
            raise DomainError("need at least one fee band")

    @property
    def edges(self) -> list[float]:
        width = (self.f_max - self.f_min) / self.bands
        return [self.f_min + k * width for k in range(self.bands + 1)]

    @property
    def band_means(self) -> list[float]:
        edges = self.edges
        return [(edges[k] + edges[k + 1]) / 2.0 for k in range(self.bands)]

    def band_of(self, fee: float) -> int:
        """Band index (0-based) of a fee, clamping to the bounds."""
        if fee <= self.f_min:
            return 0
        if fee >= self.f_max:
            return self.bands - 1
        width = (self.f_max - self.f_min) / self.bands
        return min(int((fee - self.f_min) / width), self.bands - 1)

    def band_weights(self, mode: str = "integral") -> list[float]:
        """Chi-square weight per band.

        ``integral`` (default): probability mass over the sub-range, by
        numeric quadrature of the density.  ``density``: density at the
        band mean, kept for fidelity comparison.
        """
        if mode == "density":
            return [chi_square_pdf(m, self.df) for m in self.band_means]
        if mode != "integral":
            raise DomainError(f"unknown band weight mode {mode!r}")
        edges = self.edges
        weights = []
        for k in range(self.bands):
            value, _ = integrate.quad(lambda x: chi_square_pdf(x, self.df),
                                      edges[k], edges[k + 1])
            weights.append(value)
        return weights


@dataclass(frozen=True)
class FeeFitReport:
    """Goodness of fit of a fee corpus against the chi-square law."""

    samples: int
    ks_statistic: float
    f_min: float
    f_max: float


def fit_fee_corpus(fees: Sequence[float], bands: int) -> tuple[FeeModel, FeeFitReport]:
    """Calibrate a FeeModel from observed fees.

    Bounds come from the positive part of the corpus; the fit against the
    fixed chi-square(0.59) law is summarized by the one-sample
    Kolmogorov-Smirnov statistic (reported, not thresholded).
    """
    from scipy import stats

    positive = sorted(f for f in fees if f > 0)
    if len(positive) < 2:
        raise DomainError("fee corpus needs at least two positive samples")
    ks = stats.kstest(positive, lambda x: stats.chi2.cdf(x, CHI_SQUARE_DF))
    model = FeeModel(f_min=positive[0], f_max=positive[-1], bands=bands)
    report = FeeFitReport(samples=len(positive), ks_statistic=float(ks.statistic),
                          f_min=positive[0], f_max=positive[-1])
    return model, report


@dataclass(frozen=True)
class QueueDelays:
    """Per-band analytic queuing delay, lowest fee band first."""

    values: tuple[float, ...]
    has_negative: bool

    def for_fee(self, model: FeeModel, fee: float) -> float:
        return self.values[model.band_of(fee)]


def queue_delays(model: FeeModel, block_rate: float, avg_queue_len: float,
                 mode: str = "integral") -> QueueDelays:
    """Evaluate the queuing induction for every band.

    Negative analytic values are possible for three or more bands; they
    are reported via ``has_negative``, never clamped.
    """
    if block_rate <= 0:
        raise DomainError("block rate must be positive")
    weights = model.band_weights(mode)
    if any(w <= 0 for w in weights):
        raise DomainError("zero band weight: induction undefined")
    z_top = model.bands - 1
    delays = [0.0] * model.bands
    delays[z_top] = avg_queue_len / (weights[z_top] * block_rate)
    for z in range(z_top - 1, -1, -1):
        tail = sum(weights[z:])
        settled = sum(delays[k] * weights[k] for k in range(z + 1, model.bands))
        delays[z] = (avg_queue_len / (block_rate * tail) - settled) / weights[z]
    return QueueDelays(values=tuple(delays),
                       has_negative=any(d < 0 for d in delays))


def confirmation_time(broadcast: float, queueing: float,
                      fork_probability: float = 0.0,
                      channel_active: bool = False) -> float:
    """On-chain confirmation latency; zero while a channel is active."""
    if channel_active:
        return 0.0
    if fork_probability >= 1.0:
        raise DomainError("fork probability must be below 1")
    return (broadcast + queueing) / (1.0 - fork_probability)


@dataclass(frozen=True)
class Kpi:
    """One objective indicator with its weight and admission threshold."""

    name: str
    weight: float
    threshold: float

    def __post_init__(self) -> None:
        if self.weight < 0:
            raise DomainError("KPI weights must be non-negative")


def kpi_score(kpis: Sequence[Kpi], values: dict[str, float]) -> float:
    """Threshold-gated weighted sum: each KPI counts only above its threshold."""
    total = 0.0
    for kpi in kpis:
        if kpi.name not in values:
            raise DomainError(f"missing value for KPI {kpi.name!r}")
        value = values[kpi.name]
        if value - kpi.threshold > 0:
            total += kpi.weight * value
    return total


@dataclass(frozen=True)
class FusionParams:
    """Weight and normalization bounds for the objective/subjective blend."""

    alpha: float = 0.5
    objective_bounds: tuple[float, float] = (0.0, 1.0)
    subjective_bounds: tuple[float, float] = (0.0, 1.5)

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError("alpha must lie in [0, 1]")


def fuse(objective: float, subjective: float, params: FusionParams) -> float:
    """alpha-weighted blend of the normalized components; always in [0, 1]."""
    obj = normalize(objective, *params.objective_bounds)
    sub = normalize(subjective, *params.subjective_bounds)
    return params.alpha * obj + (1.0 - params.alpha) * sub


@dataclass(frozen=True)
class ServiceContext:
    """Everything needed to price one round's latency analytically."""

    output_bytes: float
    bandwidth: float
    difficulty: float
    block_bytes: float
    node_count: int
    avg_neighbors: float
    honest_prob: float
    block_rate: float
    avg_queue_len: float
    fee_model: FeeModel
    fork_probability: float = 0.0
    log_base: Optional[float] = None
    weight_mode: str = "integral"
    _delays: QueueDelays = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_delays", queue_delays(
            self.fee_model, self.block_rate, self.avg_queue_len, self.weight_mode))

    def latency(self, compute_rate: float, fee: float,
                channel_active: bool) -> float:
        """Total round latency for one (compute, fee) choice."""
        t1 = transfer_time(self.output_bytes, self.bandwidth)
        t2 = inference_time(self.difficulty, compute_rate)
        if channel_active:
            return t1 + t2
        t_b = broadcast_time(self.block_bytes, self.node_count,
                             self.avg_neighbors, self.bandwidth,
                             self.honest_prob, self.log_base)
        t_q = self._delays.for_fee(self.fee_model, fee)
        return t1 + t2 + confirmation_time(t_b, t_q, self.fork_probability, False)

    def objective_score(self, compute_rate: float, fee: float,
                        channel_active: bool,
                        kpis: Optional[Sequence[Kpi]] = None) -> float:
        """Reciprocal-latency KPI score (single default indicator)."""
        latency = self.latency(compute_rate, fee, channel_active)
        if latency <= 0:
            raise DomainError("total latency must be positive for the reciprocal KPI")
        value = 1.0 / latency
        specs = list(kpis) if kpis is not None else [Kpi("reciprocal_latency", 1.0, 0.0)]
        return kpi_score(specs, {spec.name: value for spec in specs})
