"""Machine and workload presets.

Machine presets carry the SuperMUC cores-per-node figures at desk-scale node
counts. Workload presets are qualitative stand-ins for the applications in
the usage study: their runtime log-normals are fitted so the quartiles land
near the published execution-time statistics, and their counter behaviour
only reproduces the qualitative signatures (BQCD: high CPI and heavily
vectorized; unoptimized SeisSol: almost no AVX). None of these numbers are
measurements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

__all__ = [
    "MachinePreset",
    "WorkloadProfile",
    "MACHINES",
    "WORKLOADS",
    "machine_preset",
    "workload_preset",
    "lognormal_from_quartiles",
]

# the normal distribution's 75th percentile in units of sigma
_Z75 = 0.6744897501960817


@dataclass(frozen=True)
class MachinePreset:
    name: str
    cores_per_node: int
    node_count: int = 64

    def __post_init__(self):
        if self.cores_per_node < 1 or self.node_count < 1:
            raise ValueError("machine needs positive cores_per_node and node_count")
        if self.name in MACHINE_CORES and MACHINE_CORES[self.name] != self.cores_per_node:
            raise ValueError(f"preset {self.name} has {MACHINE_CORES[self.name]} cores per node")

    @property
    def total_cores(self) -> int:
        return self.cores_per_node * self.node_count


MACHINE_CORES = {"phase1_thin": 16, "phase1_fat": 40, "phase2": 28}
MACHINES = {name: MachinePreset(name, cpn) for name, cpn in MACHINE_CORES.items()}


def machine_preset(name: str, node_count: int = 64) -> MachinePreset:
    try:
        return MachinePreset(name, MACHINE_CORES[name], node_count)
    except KeyError:
        raise ValueError(f"unknown machine {name!r}; known: {', '.join(MACHINE_CORES)}") from None


def lognormal_from_quartiles(q1: float, median: float, q3: float) -> tuple[float, float]:
    """(mu, sigma) of a log-normal whose median is ``median`` and IQR matches."""
    return math.log(median), math.log(q3 / q1) / (2 * _Z75)


@dataclass(frozen=True)
class WorkloadProfile:
    name: str
    cpi_mean: float
    cpi_sd: float
    mispredict_mean: float
    mispredict_sd: float
    flops_rate_mean: float
    flops_rate_sd: float
    avx_fraction_mean: float
    avx_fraction_sd: float
    runtime_mu: float
    runtime_sigma: float
    cores_dist: tuple[tuple[int, float], ...]
    runtime_min: Optional[float] = None
    runtime_max: Optional[float] = None

    def __post_init__(self):
        if not self.cpi_mean > 0:
            raise ValueError(f"{self.name}: cpi_mean must be positive")
        for attr in ("mispredict_mean", "avx_fraction_mean"):
            if not 0 <= getattr(self, attr) <= 1:
                raise ValueError(f"{self.name}: {attr} must lie in [0, 1]")
        if self.flops_rate_mean < 0:
            raise ValueError(f"{self.name}: flops_rate_mean must be >= 0")
        sds = (self.cpi_sd, self.mispredict_sd, self.flops_rate_sd,
               self.avx_fraction_sd, self.runtime_sigma)
        if any(s < 0 for s in sds):
            raise ValueError(f"{self.name}: standard deviations must be >= 0")
        dist = tuple((int(c), float(w)) for c, w in self.cores_dist)
        if not dist or any(c < 1 or w < 0 for c, w in dist) or sum(w for _, w in dist) <= 0:
            raise ValueError(f"{self.name}: cores_dist needs positive core counts and weights")
        object.__setattr__(self, "cores_dist", dist)

    @property
    def runtime_median(self) -> float:
        return math.exp(self.runtime_mu)

    def with_(self, **changes) -> "WorkloadProfile":
        return replace(self, **changes)


def _profile(name, cpi, misp, flops, avx, runtime, cores, **kw):
    mu, sigma = runtime
    return WorkloadProfile(name, cpi[0], cpi[1], misp[0], misp[1], flops[0], flops[1],
                           avx[0], avx[1], mu, sigma, cores, **kw)


WORKLOADS = {
    # quartiles 86 / 95 / 112 s, clustered at 1000 cores
    "bqcd": _profile("bqcd", (1.6, 0.15), (0.002, 0.0005), (2.4e9, 2e8), (0.85, 0.04),
                     lognormal_from_quartiles(86, 95, 112), ((1000, 1.0),)),
    # Sumatra quartiles 30 / 270 / 1654 s, around 500 cores
    "seissol_opt": _profile("seissol_opt", (0.9, 0.08), (0.004, 0.001), (3.0e9, 3e8),
                            (0.8, 0.05), lognormal_from_quartiles(30, 270, 1654),
                            ((256, 0.3), (512, 0.7))),
    "seissol_unopt": _profile("seissol_unopt", (0.7, 0.06), (0.005, 0.001), (4.0e8, 6e7),
                              (0.01, 0.005), lognormal_from_quartiles(30, 270, 1654),
                              ((256, 0.3), (512, 0.7))),
    # long-run quartiles 5356 / 14440 / 54770 s, node-multiple clusters
    "gadget": _profile("gadget", (1.1, 0.1), (0.01, 0.002), (1.2e9, 2e8), (0.3, 0.05),
                       lognormal_from_quartiles(5356, 14440, 54770),
                       ((16, 0.2), (256, 0.2), (640, 0.2), (1024, 0.2), (2048, 0.2))),
    "namd": _profile("namd", (0.8, 0.1), (0.006, 0.001), (1.8e9, 2e8), (0.6, 0.05),
                     (math.log(300.0), 1.5), ((64, 0.4), (128, 0.4), (512, 0.2))),
    # small CFD runs clustered at 128 cores and about 66 s
    "mglet": _profile("mglet", (1.3, 0.1), (0.008, 0.002), (9.0e8, 1e8), (0.4, 0.05),
                      (math.log(66.0), 0.4), ((128, 0.6), (28, 0.2), (112, 0.2))),
}


def workload_preset(name: str) -> WorkloadProfile:
    try:
        return WORKLOADS[name]
    except KeyError:
        raise ValueError(f"unknown workload {name!r}; known: {', '.join(WORKLOADS)}") from None
