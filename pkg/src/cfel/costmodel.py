"""Simulated wall-clock time per global round.

Only device uploads and computation are charged; downloads and server-side
aggregation are free.  FedAvg's cloud upload is modelled as every device
using its own ``b_d2c`` link in parallel.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError

MBPS = 1e6
BITS_PER_PARAM = 32


@dataclass(frozen=True)
class SystemProfile:
    flops_per_iter: float            # C
    device_flops: tuple              # c_k, one entry per device (or one shared value)
    model_bits: float                # W
    b_d2e: float
    b_e2e: float
    b_d2c: float = 1 * MBPS

    def __post_init__(self):
        object.__setattr__(self, "device_flops", tuple(float(c) for c in np.atleast_1d(self.device_flops)))
        rates = (self.flops_per_iter, self.model_bits, self.b_d2e, self.b_e2e, self.b_d2c) + self.device_flops
        if not self.device_flops or any(not (r > 0) for r in rates):
            raise DomainError("workloads, capabilities and bandwidths must be strictly positive")

    @classmethod
    def from_params(cls, n_params: int, flops_per_sample: float, batch_size: int, device_flops,
                    b_d2e: float, b_e2e: float, b_d2c: float = 1 * MBPS,
                    bits_per_param: int = BITS_PER_PARAM) -> "SystemProfile":
        return cls(flops_per_sample * batch_size, device_flops, n_params * bits_per_param,
                   b_d2e, b_e2e, b_d2c)

    def with_params(self, n_params: int, bits_per_param: int = BITS_PER_PARAM) -> "SystemProfile":
        return replace(self, model_bits=float(n_params * bits_per_param))


PRESETS = {
    # CNN on FEMNIST, iPhone X class devices
    "femnist-paper": SystemProfile.from_params(893_342, 13.30e6, 50, 691.2e9, 10 * MBPS, 50 * MBPS, 1 * MBPS),
    # VGG-11 on CIFAR-10
    "cifar-paper": SystemProfile.from_params(9_750_922, 920.67e6, 50, 691.2e9, 10 * MBPS, 50 * MBPS, 1 * MBPS),
}


@dataclass(frozen=True)
class RoundCost:
    compute: float
    uplink: float
    backhaul: float
    cloud: float

    @property
    def total(self) -> float:
        return self.compute + self.uplink + self.backhaul + self.cloud


def round_breakdown(algorithm: str, profile: SystemProfile, tau: int, q: int, pi: int) -> RoundCost:
    compute = max(q * tau * profile.flops_per_iter / c for c in profile.device_flops)
    w = profile.model_bits
    if algorithm == "ce_fedavg":
        return RoundCost(compute, q * w / profile.b_d2e, pi * w / profile.b_e2e, 0.0)
    if algorithm == "fedavg":
        return RoundCost(compute, 0.0, 0.0, w / profile.b_d2c)
    if algorithm == "hier_favg":
        return RoundCost(compute, (q - 1) * w / profile.b_d2e, 0.0, w / profile.b_d2c)
    if algorithm == "local_edge":
        return RoundCost(compute, q * w / profile.b_d2e, 0.0, 0.0)
    raise DomainError(f"unknown algorithm {algorithm!r}")


def round_time(algorithm: str, profile: SystemProfile, tau: int, q: int, pi: int) -> float:
    """Seconds for one global round of ``algorithm``."""
    return round_breakdown(algorithm, profile, tau, q, pi).total


def total_time(round_seconds: float, p: int) -> float:
    if p < 1:
        raise DomainError("need at least one global round")
    return p * round_seconds
