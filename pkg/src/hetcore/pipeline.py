"""
Phase-to-cluster mapping, balance lengths, bandwidth allocation and the
two-stage streaming pipeline.

Encode and prefill run on CC clusters, decode on MC clusters. Each stage
sees the DRAM bandwidth its clusters' budgets grant; kernels inside a stage
run back to back, each under roofline overlap of compute and DRAM time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence


from .arch import ArchConfig, ClusterKind
from .coproc import map_kernel, map_simd
from .memory import BandwidthBudget, MemoryPort
from .pruning import traffic_reduction
from .workload import (Kernel, ModelConfig, OperatorGraph, Phase, Scenario, check_overflow,
                       decode_step_kernels, encoder_kernels, llm_layer_kernels, prefill_kernels)

STAGE_KIND = {Phase.ENCODE: ClusterKind.CC, Phase.PREFILL: ClusterKind.CC,
              Phase.DECODE: ClusterKind.MC}
DEFAULT_RATIOS: tuple[tuple[int, int], ...] = ((1, 1), (1, 3), (1, 7))
# kernels whose shape depends on the context length
_CTX_KERNELS = frozenset({"attn_scores", "softmax", "attn_context"})
L_SEARCH_MAX = 1 << 16


@dataclass(frozen=True)
class PhaseStats:
    cycles: float = 0.0
    dram_bytes: float = 0.0
    ideal_cycles: float = 0.0

    @property
    def utilization(self) -> float:
        return min(1.0, self.ideal_cycles / self.cycles) if self.cycles > 0 else 0.0

    def __add__(self, other: "PhaseStats") -> "PhaseStats":
        return PhaseStats(self.cycles + other.cycles, self.dram_bytes + other.dram_bytes,
                          self.ideal_cycles + other.ideal_cycles)

    def scaled(self, n: float) -> "PhaseStats":
        return PhaseStats(self.cycles * n, self.dram_bytes * n, self.ideal_cycles * n)


def _port(arch: ArchConfig, kind: ClusterKind, bytes_per_cycle: float) -> tuple[int, MemoryPort]:
    cl = arch.cluster(kind)
    cores = arch.n_clusters_of(kind) * cl.cores
    if cores < 1:
        raise ValueError(f"architecture {arch.name!r} has no {kind.value} cores")
    if bytes_per_cycle <= 0:
        raise ValueError("stage bandwidth must be positive")
    return cores, MemoryPort(bytes_per_cycle, cl.transfer_chunk_bytes, arch.dma_overhead_bytes, cores)


def stage_stats(kernels: Iterable[Kernel], arch: ArchConfig, kind: ClusterKind,
                bytes_per_cycle: float, strict: bool = True) -> PhaseStats:
    """Sequential roofline time of ``kernels`` on all ``kind`` clusters of ``arch``.

    With ``strict`` every kernel's phase must belong on ``kind`` clusters.
    """
    kernels = list(kernels)
    if not kernels:
        return PhaseStats()
    if strict:
        for kn in kernels:
            if STAGE_KIND[kn.phase] != kind:
                raise ValueError(f"{kn.phase.value} kernel {kn.name!r} cannot run on "
                                 f"{kind.value} clusters")
    cores, port = _port(arch, kind, bytes_per_cycle)
    cl = arch.cluster(kind)
    t = d = ideal = 0.0
    for kn in kernels:
        rep = map_kernel(kn, cl, cores, port)
        t += rep.time_cycles
        d += rep.dram_bytes
        ideal += rep.ideal_cycles
    return PhaseStats(t, d, ideal)


def stage_latency(kernels: Iterable[Kernel], arch: ArchConfig, kind: ClusterKind,
                  bytes_per_cycle: float, strict: bool = True) -> float:
    """Cycles for one stage; ``bytes_per_cycle`` is the stage's share of DRAM bandwidth."""
    return stage_stats(kernels, arch, kind, bytes_per_cycle, strict).cycles


def simd_stats(kernels: Iterable[Kernel], cores: int, bytes_per_cycle: float,
               chunk_bytes: float, overhead: float) -> PhaseStats:
    port = MemoryPort(bytes_per_cycle, chunk_bytes, overhead, cores)
    out = PhaseStats()
    for kn in kernels:
        rep = map_simd(kn, cores, port)
        out = out + PhaseStats(rep.time_cycles, rep.dram_bytes, rep.ideal_cycles)
    return out


# -- budgets -----------------------------------------------------------------------

def budget_for(arch: ArchConfig, ratio: tuple[int, int]) -> BandwidthBudget:
    return BandwidthBudget.from_ratio(ratio[0], ratio[1], arch.n_cc_clusters, arch.n_mc_clusters,
                                      arch.dram_bytes_per_cycle, arch.throttle_interval_cycles)


def stage_bandwidths(arch: ArchConfig, ratio: tuple[int, int]) -> tuple[float, float]:
    b = budget_for(arch, ratio)
    return b.cc_bytes_per_cycle(arch.n_cc_clusters), b.mc_bytes_per_cycle(arch.n_mc_clusters)


def _order_ratios(ratio_set: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """Most equal first, so a stable min keeps it on ties."""
    if not ratio_set:
        raise ValueError("ratio_set must not be empty")
    return sorted(set(tuple(r) for r in ratio_set),
                  key=lambda r: abs(math.log(r[1] / r[0])))


def ratio_label(ratio: tuple[int, int]) -> str:
    return f"{ratio[0]}:{ratio[1]}"


# -- stage models ------------------------------------------------------------------

def _prune(kernels: list[Kernel], scen: Optional[Scenario]) -> list[Kernel]:
    if scen is None or not scen.pruning_enabled:
        return kernels
    ratios = scen.prune_ratios if scen.prune_ratios else scen.prune_ratio
    if not ratios:
        return kernels
    return traffic_reduction(OperatorGraph(kernels), ratios).kernels


class DecodeModel:
    """Decode-stage cost for any output length at one bandwidth and batch.

    A step's cost splits into a context-independent part and per-layer
    attention that grows with the context; the latter is accumulated in a
    prefix table so ``latency(l)`` is O(1) after the first call.
    """

    def __init__(self, model: ModelConfig, arch: ArchConfig, bytes_per_cycle: float,
                 input_tokens: int, batch: int = 1, scen: Optional[Scenario] = None,
                 kind: ClusterKind = ClusterKind.MC, strict: bool = True):
        self.model, self.arch, self.bw = model, arch, bytes_per_cycle
        self.input_tokens, self.batch, self.kind, self.strict = input_tokens, batch, kind, strict
        step = _prune(decode_step_kernels(model, input_tokens + 1, batch), scen)
        self.fixed = stage_stats([k for k in step if k.name not in _CTX_KERNELS], arch, kind,
                                 bytes_per_cycle, strict)
        self._prefix = [PhaseStats()]

    def _attention(self, ctx: int) -> PhaseStats:
        ks = [k for k in llm_layer_kernels(self.model, Phase.DECODE, 1, 1, ctx, self.batch)
              if k.name in _CTX_KERNELS]
        return stage_stats(ks, self.arch, self.kind, self.bw, self.strict).scaled(self.model.llm_layers)

    def stats(self, l: int) -> PhaseStats:
        if l < 0:
            raise ValueError("output length must be non-negative")
        while len(self._prefix) <= l:
            t = len(self._prefix) - 1
            self._prefix.append(self._prefix[-1] + self._attention(self.input_tokens + t + 1))
        return self.fixed.scaled(l) + self._prefix[l]

    def latency(self, l: int) -> float:
        return self.stats(l).cycles


@dataclass
class StageModels:
    """Cached CC-stage and decode-stage costs for one model/arch/scenario."""

    model: ModelConfig
    arch: ArchConfig
    scen: Scenario
    _cc: dict = field(default_factory=dict, init=False, repr=False)
    _mc: dict = field(default_factory=dict, init=False, repr=False)

    def cc_phases(self, bw: float) -> tuple[PhaseStats, PhaseStats]:
        if bw not in self._cc:
            enc = stage_stats(encoder_kernels(self.model), self.arch, ClusterKind.CC, bw)
            pre = stage_stats(prefill_kernels(self.model, self.scen.input_tokens), self.arch,
                              ClusterKind.CC, bw)
            self._cc[bw] = (enc, pre)
        return self._cc[bw]

    def cc_latency(self, ratio: tuple[int, int]) -> float:
        enc, pre = self.cc_phases(stage_bandwidths(self.arch, ratio)[0])
        return enc.cycles + pre.cycles

    def decode(self, ratio: tuple[int, int], batch: int) -> DecodeModel:
        bw = stage_bandwidths(self.arch, ratio)[1]
        key = (bw, batch)
        if key not in self._mc:
            self._mc[key] = DecodeModel(self.model, self.arch, bw, self.scen.input_tokens, batch,
                                        self.scen)
        return self._mc[key]

    def decode_latency(self, l: int, ratio: tuple[int, int], batch: int = 1) -> float:
        return self.decode(ratio, batch).latency(l)

    def objective(self, l: int, ratio: tuple[int, int], batch: int = 1) -> float:
        return max(batch * self.cc_latency(ratio), self.decode_latency(l, ratio, batch))


# -- balance and allocation ----------------------------------------------------------

@dataclass(frozen=True)
class BalancePoints:
    l_e: int
    l_b: int


def _first_reaching(f, target: float, hi: int = L_SEARCH_MAX) -> int:
    """Smallest integer l ≥ 1 with f(l) ≥ target, for non-decreasing f."""
    lo, top = 1, 1
    while f(top) < target:
        if top >= hi:
            raise ValueError(f"decode latency stays below the CC stage up to l={hi}")
        lo, top = top + 1, min(hi, 2 * top)
    hi = top
    while lo < hi:
        mid = (lo + hi) // 2
        if f(mid) >= target:
            hi = mid
        else:
            lo = mid + 1
    return lo


def balance_length(model: ModelConfig, arch: ArchConfig, scen: Optional[Scenario] = None,
                   ratio_set: Sequence[tuple[int, int]] = DEFAULT_RATIOS,
                   stages: Optional[StageModels] = None) -> BalancePoints:
    """Output lengths where decode starts to dominate (l_e) and where no ratio helps (l_b)."""
    stages = stages or StageModels(model, arch, scen or Scenario())
    eq = (1, 1)
    if stages.decode_latency(1, eq) <= 0:
        raise ValueError("decode latency is identically zero")
    l_e = _first_reaching(lambda l: stages.decode_latency(l, eq), stages.cc_latency(eq))
    most = _order_ratios(ratio_set)[-1]
    l_b = _first_reaching(lambda l: stages.decode_latency(l, most), stages.cc_latency(most))
    return BalancePoints(l_e, max(l_e, l_b))


def choose_ratio(stages: StageModels, l: int, batch: int = 1,
                 ratio_set: Sequence[tuple[int, int]] = DEFAULT_RATIOS) -> tuple[int, int]:
    best, best_val = None, math.inf
    for r in _order_ratios(ratio_set):
        val = stages.objective(l, r, batch)
        if val < best_val * (1 - 1e-12):
            best, best_val = r, val
    assert best is not None
    return best


def allocate_bandwidth(l: int, model: ModelConfig, arch: ArchConfig,
                       ratio_set: Sequence[tuple[int, int]] = DEFAULT_RATIOS,
                       scen: Optional[Scenario] = None, batch: int = 1,
                       stages: Optional[StageModels] = None) -> BandwidthBudget:
    """Budget whose B_c:B_m ratio minimises the slower pipeline stage at length ``l``."""
    stages = stages or StageModels(model, arch, scen or Scenario())
    return budget_for(arch, choose_ratio(stages, l, batch, ratio_set))


# -- pipeline ------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelinePlan:
    stage_map: dict
    ratio: tuple[int, int]
    budget: BandwidthBudget
    batch: int
    output_tokens: int
    clock_hz: float
    encode: PhaseStats
    prefill: PhaseStats
    decode: PhaseStats
    cc_stage_cycles: float
    mc_stage_cycles: float
    period_cycles: float
    latency_cycles: float
    throughput_tokens_per_s: float

    @property
    def latency_ms(self) -> float:
        return self.latency_cycles / self.clock_hz * 1e3

    @property
    def ratio_label(self) -> str:
        return ratio_label(self.ratio)


def _policy_ratio(stages: StageModels, scen: Scenario,
                  ratio_set: Sequence[tuple[int, int]]) -> tuple[int, int]:
    if scen.bandwidth_policy == "equal":
        return (1, 1)
    if scen.bandwidth_policy == "fixed-ratio":
        return tuple(scen.fixed_ratio)  # type: ignore[return-value]
    return choose_ratio(stages, scen.output_tokens, scen.batch, ratio_set)


def pipeline_simulate(model: ModelConfig, arch: ArchConfig, scen: Scenario,
                      ratio_set: Sequence[tuple[int, int]] = DEFAULT_RATIOS,
                      stages: Optional[StageModels] = None) -> PipelinePlan:
    """Steady-state two-stage pipeline: ``batch`` CC instances in series, then one batched decode."""
    errs = model.validate() + scen.validate()
    if errs:
        raise ValueError("; ".join(errs))
    check_overflow(model, scen)
    stages = stages or StageModels(model, arch, scen)
    ratio = _policy_ratio(stages, scen, ratio_set)
    cc_bw, _ = stage_bandwidths(arch, ratio)
    enc, pre = stages.cc_phases(cc_bw)
    dec = stages.decode(ratio, scen.batch).stats(scen.output_tokens)
    B = scen.batch
    cc_stage = B * (enc.cycles + pre.cycles)
    period = max(cc_stage, dec.cycles)
    return PipelinePlan(
        stage_map={p.value: STAGE_KIND[p].value for p in Phase},
        ratio=ratio, budget=budget_for(arch, ratio), batch=B, output_tokens=scen.output_tokens,
        clock_hz=arch.clock_hz, encode=enc.scaled(B), prefill=pre.scaled(B), decode=dec,
        cc_stage_cycles=cc_stage, mc_stage_cycles=dec.cycles, period_cycles=period,
        latency_cycles=cc_stage + dec.cycles,
        throughput_tokens_per_s=B * scen.output_tokens * arch.clock_hz / period)


# -- homogeneous vs heterogeneous ------------------------------------------------------

DESIGNS = ("simd", "homo-cc", "homo-mc", "hetero")
PHASES = ("encode", "prefill", "decode", "total")


@dataclass
class Comparison:
    """Per-design, per-phase stats; ``total`` of a homogeneous design is the phase sum."""

    stats: dict[str, dict[str, PhaseStats]]

    def cycles(self, design: str, phase: str) -> float:
        return self.stats[design][phase].cycles

    def speedup(self, design: str, phase: str, baseline: str = "simd") -> float:
        return self.cycles(baseline, phase) / self.cycles(design, phase)

    def gemm_cycles(self, design: str) -> float:
        return self.cycles(design, "encode") + self.cycles(design, "prefill")

    @property
    def gemm_ratio(self) -> float:
        """How much faster homo-CC runs the GEMM phases than homo-MC."""
        return self.gemm_cycles("homo-mc") / self.gemm_cycles("homo-cc")

    @property
    def gemv_ratio(self) -> float:
        """How much faster homo-MC runs decode than homo-CC."""
        return self.cycles("homo-cc", "decode") / self.cycles("homo-mc", "decode")

    def hetero_over(self, design: str) -> float:
        return self.cycles(design, "total") / self.cycles("hetero", "total")

    def rows(self) -> list[tuple[str, str, PhaseStats, float]]:
        return [(d, p, self.stats[d][p], self.speedup(d, p)) for d in DESIGNS for p in PHASES]


def _homo_stats(model: ModelConfig, arch: ArchConfig, scen: Scenario,
                kind: ClusterKind) -> dict[str, PhaseStats]:
    homo = arch.homogeneous(kind)
    bw = homo.dram_bytes_per_cycle
    enc = stage_stats(encoder_kernels(model), homo, kind, bw, strict=False)
    pre = stage_stats(prefill_kernels(model, scen.input_tokens), homo, kind, bw, strict=False)
    dec = DecodeModel(model, homo, bw, scen.input_tokens, scen.batch, scen, kind,
                      strict=False).stats(scen.output_tokens)
    return {"encode": enc, "prefill": pre, "decode": dec, "total": enc + pre + dec}


def compare_homo_hetero(model: ModelConfig, arch: ArchConfig, scen: Scenario) -> Comparison:
    """SIMD baseline, homo-CC, homo-MC and the heterogeneous pipeline at equal core count.

    Homogeneous designs run the phases back to back with the full DRAM
    bandwidth. The heterogeneous total is its pipeline period, the
    steady-state time per request under streaming input.
    """
    check_overflow(model, scen)
    cores = arch.cc_cores + arch.mc_cores
    bw = arch.dram_bytes_per_cycle
    chunk = arch.cc_cluster.transfer_chunk_bytes
    simd = {
        "encode": simd_stats(encoder_kernels(model), cores, bw, chunk, arch.dma_overhead_bytes),
        "prefill": simd_stats(prefill_kernels(model, scen.input_tokens), cores, bw, chunk,
                              arch.dma_overhead_bytes),
    }
    dec = PhaseStats()
    for t in range(scen.output_tokens):
        dec = dec + simd_stats(_prune(decode_step_kernels(model, scen.input_tokens + t + 1,
                                                          scen.batch), scen),
                               cores, bw, chunk, arch.dma_overhead_bytes)
    simd["decode"] = dec
    simd["total"] = simd["encode"] + simd["prefill"] + dec
    plan = pipeline_simulate(model, arch, scen)
    B = scen.batch
    het = {"encode": plan.encode.scaled(1 / B), "prefill": plan.prefill.scaled(1 / B),
           "decode": plan.decode}
    het["total"] = PhaseStats(plan.period_cycles,
                              sum(het[p].dram_bytes for p in ("encode", "prefill", "decode")),
                              sum(het[p].ideal_cycles for p in ("encode", "prefill", "decode")))
    return Comparison({"simd": simd,
                       "homo-cc": _homo_stats(model, arch, scen, ClusterKind.CC),
                       "homo-mc": _homo_stats(model, arch, scen, ClusterKind.MC),
                       "hetero": het})
