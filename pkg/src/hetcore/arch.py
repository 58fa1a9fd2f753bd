"""
Hardware description for the heterogeneous multi-core CPU.

The chip is organised as ``groups`` identical groups, each holding some
compute-centric (CC) clusters with systolic-array coprocessors and some
memory-centric (MC) clusters with digital compute-in-memory macros. Every
other module consumes an :class:`ArchConfig`; none of them mutate it.

All byte quantities are bytes, all frequencies Hz, bandwidth bytes/s.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Union

import yaml


class ClusterKind(str, Enum):
    CC = "compute-centric"
    MC = "memory-centric"


@dataclass(frozen=True)
class SaSpec:
    """Weight-stationary systolic array of ``rows`` x ``cols`` MAC PEs."""

    rows: int = 16
    cols: int = 16
    matrix_register_count: int = 4
    operand_bits: int = 16

    @property
    def macs_per_cycle(self) -> float:
        return float(self.rows * self.cols)

    @property
    def operand_bytes(self) -> int:
        return max(1, self.operand_bits // 8)


@dataclass(frozen=True)
class CimSpec:
    """Digital CIM macro: ``cols`` columns of ``subarrays_per_col`` subarrays.

    Each subarray stores ``depth`` weights of ``weight_bits`` bits; activations
    are broadcast bit-serially, ``act_bits`` cycles per activation row.
    """

    cols: int = 44
    subarrays_per_col: int = 32
    depth: int = 64
    weight_bits: int = 16
    act_bits: int = 16

    @property
    def capacity_weights(self) -> int:
        return self.depth * self.subarrays_per_col * self.cols

    @property
    def macro_bytes(self) -> int:
        return self.capacity_weights * self.weight_bits // 8

    @property
    def macs_per_cycle(self) -> float:
        # bit-serial: R*C MACs complete every W cycles
        return self.subarrays_per_col * self.cols / self.act_bits


Coproc = Union[SaSpec, CimSpec]


@dataclass(frozen=True)
class ClusterSpec:
    kind: ClusterKind
    cores: int
    data_memory_bytes: int
    coproc: Coproc
    # number of DMA buffers the per-core memory share is split into
    dma_buffers: int = 2

    @property
    def transfer_chunk_bytes(self) -> int:
        """Largest single DMA transfer a core of this cluster can land on chip."""
        if isinstance(self.coproc, CimSpec):
            per_core = self.coproc.macro_bytes
        else:
            per_core = self.data_memory_bytes // max(1, self.cores)
        return max(1, per_core // max(1, self.dma_buffers))

    @property
    def macs_per_cycle(self) -> float:
        return self.cores * self.coproc.macs_per_cycle


def default_cc_cluster() -> ClusterSpec:
    return ClusterSpec(ClusterKind.CC, cores=4, data_memory_bytes=128 * 1024,
                       coproc=SaSpec(), dma_buffers=2)


def default_mc_cluster(shared_buffer_bytes: int = 16 * 1024) -> ClusterSpec:
    cim = CimSpec()
    cores = 2
    return ClusterSpec(ClusterKind.MC, cores=cores,
                       data_memory_bytes=cores * cim.macro_bytes + shared_buffer_bytes,
                       coproc=cim, dma_buffers=2)


@dataclass(frozen=True)
class ArchConfig:
    groups: int = 4
    cc_clusters_per_group: int = 2
    mc_clusters_per_group: int = 2
    cc_cluster: ClusterSpec = field(default_factory=default_cc_cluster)
    mc_cluster: ClusterSpec = field(default_factory=default_mc_cluster)
    clock_hz: float = 1.0e9
    dram_bandwidth_bytes_per_s: float = 336.0e9
    dma_overhead_bytes: int = 24 * 1024
    shared_buffer_bytes: int = 16 * 1024
    throttle_interval_cycles: int = 10_000
    name: str = "default"

    @property
    def n_cc_clusters(self) -> int:
        return self.groups * self.cc_clusters_per_group

    @property
    def n_mc_clusters(self) -> int:
        return self.groups * self.mc_clusters_per_group

    @property
    def n_clusters(self) -> int:
        return self.n_cc_clusters + self.n_mc_clusters

    @property
    def cc_cores(self) -> int:
        return self.n_cc_clusters * self.cc_cluster.cores

    @property
    def mc_cores(self) -> int:
        return self.n_mc_clusters * self.mc_cluster.cores

    @property
    def dram_bytes_per_cycle(self) -> float:
        return self.dram_bandwidth_bytes_per_s / self.clock_hz

    def cluster(self, kind: ClusterKind) -> ClusterSpec:
        return self.cc_cluster if kind == ClusterKind.CC else self.mc_cluster

    def n_clusters_of(self, kind: ClusterKind) -> int:
        return self.n_cc_clusters if kind == ClusterKind.CC else self.n_mc_clusters

    def replace(self, **changes: Any) -> "ArchConfig":
        return dataclasses.replace(self, **changes)

    def homogeneous(self, kind: ClusterKind) -> "ArchConfig":
        """All-CC or all-MC variant holding the total core count constant."""
        total = self.cc_cores + self.mc_cores
        per_group = total // self.groups
        if kind == ClusterKind.CC:
            n = max(1, per_group // self.cc_cluster.cores)
            return self.replace(cc_clusters_per_group=n, mc_clusters_per_group=0,
                                name=f"{self.name}-homo-cc")
        n = max(1, per_group // self.mc_cluster.cores)
        return self.replace(cc_clusters_per_group=0, mc_clusters_per_group=n,
                            name=f"{self.name}-homo-mc")


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:  # truthy when usable
        return self.ok

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(f"- {v}" for v in self.violations)


def _positive(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0


def _check_cluster(label: str, cl: Any, expected: ClusterKind, out: list[str]) -> None:
    if not isinstance(cl, ClusterSpec):
        out.append(f"{label}: not a cluster spec")
        return
    if cl.kind != expected:
        out.append(f"{label}: kind must be {expected.value}")
    if not _positive(cl.cores):
        out.append(f"{label}: cores must be >= 1")
    if not _positive(cl.data_memory_bytes):
        out.append(f"{label}: data_memory_bytes must be > 0")
    if not _positive(cl.dma_buffers):
        out.append(f"{label}: dma_buffers must be >= 1")
    want = SaSpec if cl.kind == ClusterKind.CC else CimSpec
    if not isinstance(cl.coproc, want):
        out.append(f"{label}: coproc kind mismatch ({cl.kind.value} cluster needs {want.__name__})")
        return
    if isinstance(cl.coproc, SaSpec):
        sa = cl.coproc
        if not _positive(sa.rows) or not _positive(sa.cols):
            out.append(f"{label}: SA rows and cols must be >= 1")
        if not isinstance(sa.matrix_register_count, int) or sa.matrix_register_count < 2:
            out.append(f"{label}: matrix_register_count must be >= 2")
        if not _positive(sa.operand_bits):
            out.append(f"{label}: operand_bits must be >= 1")
    else:
        cim = cl.coproc
        for name in ("cols", "subarrays_per_col", "depth"):
            if not _positive(getattr(cim, name)):
                out.append(f"{label}: CIM {name} must be >= 1")
        if cim.weight_bits not in (4, 8, 16):
            out.append(f"{label}: CIM weight_bits must be one of 4, 8, 16")
        if not _positive(cim.act_bits):
            out.append(f"{label}: CIM act_bits must be >= 1")


def validate(cfg: Any) -> ValidationReport:
    """Check every invariant downstream modules rely on. Never raises."""
    out: list[str] = []
    if not isinstance(cfg, ArchConfig):
        return ValidationReport([f"not an ArchConfig: {type(cfg).__name__}"])
    try:
        if not isinstance(cfg.groups, int) or cfg.groups < 1:
            out.append("groups must be ≥ 1")
        for name in ("cc_clusters_per_group", "mc_clusters_per_group"):
            v = getattr(cfg, name)
            if not isinstance(v, int) or v < 0:
                out.append(f"{name} must be ≥ 0")
        _check_cluster("cc_cluster", cfg.cc_cluster, ClusterKind.CC, out)
        _check_cluster("mc_cluster", cfg.mc_cluster, ClusterKind.MC, out)
        if not out and cfg.cc_cores + cfg.mc_cores <= 0:
            out.append("total core count must be > 0")
        if not _positive(cfg.clock_hz):
            out.append("clock_hz must be > 0")
        if not _positive(cfg.dram_bandwidth_bytes_per_s):
            out.append("dram_bandwidth_bytes_per_s must be > 0")
        if not isinstance(cfg.dma_overhead_bytes, (int, float)) or cfg.dma_overhead_bytes < 0:
            out.append("dma_overhead_bytes must be ≥ 0")
        if not isinstance(cfg.shared_buffer_bytes, int) or cfg.shared_buffer_bytes < 0:
            out.append("shared_buffer_bytes must be ≥ 0")
        if not isinstance(cfg.throttle_interval_cycles, int) or cfg.throttle_interval_cycles < 1:
            out.append("throttle_interval_cycles must be ≥ 1")
        if (not out and cfg.n_cc_clusters > 0 and cfg.n_mc_clusters > 0
                and cfg.mc_cluster.data_memory_bytes < cfg.cc_cluster.data_memory_bytes):
            out.append("MC cluster data memory must be ≥ CC cluster data memory")
        if not out:
            pf = peak_flops(cfg)
            if not (pf > 0 and pf < float("inf")):
                out.append("peak MAC throughput must be finite and positive")
    except Exception as exc:  # report-style: malformed field types end up here
        out.append(f"malformed config: {exc}")
    return ValidationReport(out)


def peak_flops(cfg: ArchConfig, include_cim: bool = True) -> float:
    """Peak FLOP/s, counting 2 FLOPs per MAC."""
    macs = cfg.n_cc_clusters * cfg.cc_cluster.macs_per_cycle
    if include_cim:
        macs += cfg.n_mc_clusters * cfg.mc_cluster.macs_per_cycle
    return macs * 2.0 * cfg.clock_hz


# -- serialization --------------------------------------------------------------

def _cluster_to_dict(cl: ClusterSpec) -> dict[str, Any]:
    d: dict[str, Any] = {
        "kind": cl.kind.value,
        "cores": cl.cores,
        "data_memory_bytes": cl.data_memory_bytes,
        "dma_buffers": cl.dma_buffers,
    }
    if isinstance(cl.coproc, SaSpec):
        d["sa"] = dataclasses.asdict(cl.coproc)
    else:
        d["cim"] = dataclasses.asdict(cl.coproc)
    return d


def _cluster_from_dict(d: dict[str, Any], default_kind: ClusterKind) -> ClusterSpec:
    kind = ClusterKind(d.get("kind", default_kind.value))
    if "sa" in d:
        coproc: Coproc = SaSpec(**d["sa"])
    elif "cim" in d:
        coproc = CimSpec(**d["cim"])
    else:
        raise ValueError("cluster needs an 'sa' or 'cim' section")
    return ClusterSpec(kind=kind, cores=d["cores"], data_memory_bytes=d["data_memory_bytes"],
                       coproc=coproc, dma_buffers=d.get("dma_buffers", 2))


def to_dict(cfg: ArchConfig) -> dict[str, Any]:
    return {
        "arch": {
            "name": cfg.name,
            "groups": cfg.groups,
            "cc_clusters_per_group": cfg.cc_clusters_per_group,
            "mc_clusters_per_group": cfg.mc_clusters_per_group,
            "clock_hz": float(cfg.clock_hz),
            "dram_bandwidth_bytes_per_s": float(cfg.dram_bandwidth_bytes_per_s),
            "dma_overhead_bytes": cfg.dma_overhead_bytes,
            "shared_buffer_bytes": cfg.shared_buffer_bytes,
            "throttle_interval_cycles": cfg.throttle_interval_cycles,
            "cc_cluster": _cluster_to_dict(cfg.cc_cluster),
            "mc_cluster": _cluster_to_dict(cfg.mc_cluster),
        }
    }


def from_dict(d: dict[str, Any]) -> ArchConfig:
    a = d.get("arch", d)
    return ArchConfig(
        name=a.get("name", "default"),
        groups=a["groups"],
        cc_clusters_per_group=a["cc_clusters_per_group"],
        mc_clusters_per_group=a["mc_clusters_per_group"],
        cc_cluster=_cluster_from_dict(a["cc_cluster"], ClusterKind.CC),
        mc_cluster=_cluster_from_dict(a["mc_cluster"], ClusterKind.MC),
        clock_hz=a["clock_hz"],
        dram_bandwidth_bytes_per_s=a["dram_bandwidth_bytes_per_s"],
        dma_overhead_bytes=a["dma_overhead_bytes"],
        shared_buffer_bytes=a["shared_buffer_bytes"],
        throttle_interval_cycles=a.get("throttle_interval_cycles", 10_000),
    )


def dumps(cfg: ArchConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def loads(text: str) -> ArchConfig:
    return from_dict(yaml.safe_load(text))


def load(path: Union[str, Path]) -> ArchConfig:
    return loads(Path(path).read_text())


def save(cfg: ArchConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps(cfg))
