"""Inference cost model for edge, cloud and edge-cloud strategies, plus WiFi/GPU energy arithmetic.

Per-instance costs are in whatever unit the caller uses (we use mJ); totals
come out in the same unit.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Sequence

from .errors import ConfigError, InvalidInputError

# WiFi upload power law (mW per Mbps, and mW)
UPLOAD_SLOPE_MW_PER_MBPS = 283.17
UPLOAD_INTERCEPT_MW = 132.86


def upload_power(s_upload_mbps: float) -> float:
    """Upload power in mW at a throughput given in Mbps."""
    if s_upload_mbps < 0:
        raise InvalidInputError("throughput must be nonnegative")
    return UPLOAD_SLOPE_MW_PER_MBPS * s_upload_mbps + UPLOAD_INTERCEPT_MW


def upload_time(payload_bytes: float, s_upload_mbps: float) -> float:
    """Milliseconds to push ``payload_bytes`` at ``s_upload_mbps``."""
    if s_upload_mbps == 0:
        raise ZeroDivisionError("throughput is zero")
    if payload_bytes < 0 or s_upload_mbps < 0:
        raise InvalidInputError("payload and throughput must be nonnegative")
    return 8.0 * payload_bytes / (s_upload_mbps * 1e6) * 1e3


def comm_energy(power_mw: float, time_ms: float) -> float:
    """mW x ms = uJ; returned in mJ."""
    return power_mw * time_ms / 1e3


def compute_energy(gpu_power_w: float, t_cp_ms: float) -> float:
    """W x ms = mJ."""
    if gpu_power_w < 0 or t_cp_ms < 0:
        raise InvalidInputError("power and time must be nonnegative")
    return gpu_power_w * t_cp_ms


class Strategy(str, enum.Enum):
    EDGE_ONLY = "EdgeOnly"
    CLOUD_ONLY = "CloudOnly"
    EDGE_CLOUD_RAW = "EdgeCloudRaw"
    EDGE_CLOUD_FEATURES = "EdgeCloudFeatures"


@dataclass
class CostParams:
    n: float
    x: float  # edge cost per instance
    x_cl: float  # cloud cost per instance
    x_cu: float  # raw-data upload cost per instance
    x_cu_prime: float | None = None  # feature upload cost per instance
    q: float | None = None  # fraction of a split network kept at the edge
    beta: float = 0.0

    def __post_init__(self) -> None:
        for name in ("n", "x", "x_cl", "x_cu"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be nonnegative")
        if self.x_cu_prime is not None and self.x_cu_prime < 0:
            raise InvalidInputError("x_cu_prime must be nonnegative")
        if not 0 <= self.beta <= 1:
            raise InvalidInputError("beta must lie in [0, 1]")
        if self.q is not None and not 0 < self.q < 1:
            raise InvalidInputError("q must lie in (0, 1)")


@dataclass
class CostBreakdown:
    edge_compute: float
    cloud_compute: float
    communication: float

    @property
    def total(self) -> float:
        return self.edge_compute + self.cloud_compute + self.communication

    def scaled(self, factor: float) -> CostBreakdown:
        return CostBreakdown(self.edge_compute * factor, self.cloud_compute * factor,
                             self.communication * factor)


def strategy_cost(strategy: Strategy | str, p: CostParams) -> CostBreakdown:
    strategy = Strategy(strategy)
    if strategy is Strategy.EDGE_ONLY:
        return CostBreakdown(p.n * p.x, 0.0, 0.0)
    if strategy is Strategy.CLOUD_ONLY:
        return CostBreakdown(0.0, p.n * p.x_cl, p.n * p.x_cu)
    if strategy is Strategy.EDGE_CLOUD_RAW:
        return CostBreakdown(p.n * p.x, p.beta * p.n * p.x_cl, p.beta * p.n * p.x_cu)
    if p.q is None:
        raise ConfigError("feature offloading needs q, the edge share of the split network")
    if p.x_cu_prime is None:
        raise ConfigError("feature offloading needs x_cu_prime, the feature upload cost")
    return CostBreakdown(
        p.n * (p.q * p.x),
        p.beta * p.n * ((1 - p.q) * p.x_cl),
        p.beta * p.n * p.x_cu_prime,
    )


@dataclass
class EnergyParams:
    s_upload: float = 18.88  # Mbps
    gpu_power: float = 56.0  # W
    t_cp: float = 0.056  # ms per instance through the main block
    image_bytes: int = 32 * 32 * 3
    feature_bytes: int | None = None
    cloud_energy: float = 0.0  # mJ per instance; only the edge side is metered by default

    def __post_init__(self) -> None:
        if self.s_upload <= 0 or self.gpu_power <= 0 or self.t_cp <= 0 or self.image_bytes <= 0:
            raise InvalidInputError("energy parameters must be positive")

    @property
    def main_energy(self) -> float:
        return compute_energy(self.gpu_power, self.t_cp)

    def upload_energy(self, payload_bytes: float) -> float:
        return comm_energy(upload_power(self.s_upload), upload_time(payload_bytes, self.s_upload))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MeasuredCost:
    breakdown: CostBreakdown
    beta: float
    n: int
    n_extension: int
    edge_per_instance: float  # average, so that N * this == edge total
    upload_per_instance: float


def measured_cost_report(
    decisions: Sequence[str],
    extension_ran: Sequence[bool],
    energy: EnergyParams,
    extension_mac_ratio: float,
    payload: str = "RawData",
    feature_dim: int | None = None,
) -> MeasuredCost:
    """Edge-side energy of a routed run.

    Every instance pays the main block; instances that ran the adaptive and
    extension blocks pay an extra share of the main block's energy equal to
    ``extension_mac_ratio`` (their MACs over the main block's MACs).
    Offloaded instances pay one upload each.
    """
    n = len(decisions)
    if n == 0:
        raise InvalidInputError("no records")
    if len(extension_ran) != n:
        raise InvalidInputError("decisions and extension flags differ in length")
    n_cloud = sum(1 for d in decisions if d == "CloudExit")
    n_ext = sum(1 for e in extension_ran if e)
    x_main = energy.main_energy
    edge = n * x_main + n_ext * x_main * extension_mac_ratio
    if payload == "Features":
        nbytes = energy.feature_bytes
        if nbytes is None:
            if feature_dim is None:
                raise ConfigError("feature payload size needs feature_bytes or feature_dim")
            nbytes = 8 * feature_dim
    else:
        nbytes = energy.image_bytes
    x_cu = energy.upload_energy(nbytes)
    beta = n_cloud / n
    breakdown = CostBreakdown(edge, n_cloud * energy.cloud_energy, n_cloud * x_cu)
    return MeasuredCost(breakdown, beta, n, n_ext, edge / n, x_cu)
