"""
Config-only calibration against the directional performance targets.

Only configuration values move here (coprocessor dims, DMA knobs, encoder
token count, batch); every cycle formula stays fixed.
"""

from __future__ import annotations

import dataclasses
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .arch import ArchConfig, ClusterKind, peak_flops
from .pipeline import Comparison, StageModels, balance_length, compare_homo_hetero, pipeline_simulate
from .workload import ModelConfig, Scenario

# (low, high) bands; the two design ratios get ±40% around their reference values
TARGETS = {
    "l_e": (20, 60),
    "latency_cut_l128": (0.25, None),
    "throughput_gain_l128": (1.5, None),
    "batch_throughput_gain": (10.0, None),
    "batch_latency_overhead": (None, 0.60),
    "gemm_ratio": (3.0, 6.0),
    "gemv_ratio": (1.8, 3.2),
    "hetero_over_homo_cc": (1.79 * 0.6, 1.79 * 1.4),
    "hetero_over_homo_mc": (2.65 * 0.6, 2.65 * 1.4),
    "peak_tflops": (16.0, 20.0),
}


@dataclass(frozen=True)
class CalibrationPoint:
    cim_cols: int
    cim_subarrays: int
    dma_overhead_bytes: int
    cc_dma_buffers: int
    mc_dma_buffers: int
    cc_data_memory_bytes: int
    encoder_tokens: int

    @classmethod
    def from_configs(cls, arch: ArchConfig, model: ModelConfig) -> "CalibrationPoint":
        cim = arch.mc_cluster.coproc
        return cls(cim.cols, cim.subarrays_per_col, arch.dma_overhead_bytes,
                   arch.cc_cluster.dma_buffers, arch.mc_cluster.dma_buffers,
                   arch.cc_cluster.data_memory_bytes, model.encoder_tokens)

    def apply(self, arch: ArchConfig, model: ModelConfig) -> tuple[ArchConfig, ModelConfig]:
        cim = dataclasses.replace(arch.mc_cluster.coproc, cols=self.cim_cols,
                                  subarrays_per_col=self.cim_subarrays)
        mc = dataclasses.replace(arch.mc_cluster, coproc=cim, dma_buffers=self.mc_dma_buffers,
                                 data_memory_bytes=arch.mc_cluster.cores * cim.macro_bytes
                                 + arch.shared_buffer_bytes)
        cc = dataclasses.replace(arch.cc_cluster, dma_buffers=self.cc_dma_buffers,
                                 data_memory_bytes=self.cc_data_memory_bytes)
        arch = arch.replace(cc_cluster=cc, mc_cluster=mc, dma_overhead_bytes=self.dma_overhead_bytes)
        return arch, dataclasses.replace(model, encoder_tokens=self.encoder_tokens)


def ordering(c: Comparison) -> dict[str, bool]:
    """Each design should win the phase it is built for."""
    gemm = {d: c.gemm_cycles(d) for d in ("homo-cc", "homo-mc", "hetero")}
    gemv = {d: c.cycles(d, "decode") for d in ("homo-cc", "homo-mc", "hetero")}
    total = {d: c.cycles(d, "total") for d in ("homo-cc", "homo-mc", "hetero")}
    return {"homo_cc_fastest_gemm": gemm["homo-cc"] <= min(gemm.values()),
            "homo_mc_fastest_gemv": gemv["homo-mc"] <= min(gemv.values()),
            "hetero_fastest_total": total["hetero"] < min(total["homo-cc"], total["homo-mc"])}


def batch_sweep(stages: StageModels, base: Scenario, batches: Iterable[int],
                l: int = 1024) -> list[tuple[int, float, float]]:
    """(batch, throughput gain, latency overhead) against batch 1 under the same policy."""
    one = pipeline_simulate(stages.model, stages.arch,
                            dataclasses.replace(base, output_tokens=l, batch=1), stages=stages)
    out = []
    for B in batches:
        p = pipeline_simulate(stages.model, stages.arch,
                              dataclasses.replace(base, output_tokens=l, batch=B), stages=stages)
        out.append((B, p.throughput_tokens_per_s / one.throughput_tokens_per_s,
                    p.latency_cycles / one.latency_cycles - 1.0))
    return out


def measure(arch: ArchConfig, model: ModelConfig, input_tokens: int = 300,
            batch: Optional[int] = None, compare_tokens: int = 32,
            batches: Sequence[int] = tuple(range(8, 17))) -> dict:
    """All calibrated quantities for one configuration.

    With ``batch`` unset, the batch for the long-output check is the one
    with the most slack among ``batches``.
    """
    dyn = Scenario(input_tokens=input_tokens, bandwidth_policy="dynamic")
    eq = dataclasses.replace(dyn, bandwidth_policy="equal")
    stages = StageModels(model, arch, dyn)
    m: dict = {"l_e": balance_length(model, arch, stages=stages).l_e}
    p_eq = pipeline_simulate(model, arch, dataclasses.replace(eq, output_tokens=128), stages=stages)
    p_dy = pipeline_simulate(model, arch, dataclasses.replace(dyn, output_tokens=128), stages=stages)
    m["ratio_l128"] = p_dy.ratio_label
    m["latency_cut_l128"] = 1.0 - p_dy.latency_cycles / p_eq.latency_cycles
    m["throughput_gain_l128"] = p_dy.throughput_tokens_per_s / p_eq.throughput_tokens_per_s
    sweep = batch_sweep(stages, dyn, [batch] if batch else batches)
    B, gain, ovh = max(sweep, key=lambda r: min(r[1] / 10.0 - 1.0, 1.0 - r[2] / 0.6))
    m.update(batch=B, batch_throughput_gain=gain, batch_latency_overhead=ovh)
    c = compare_homo_hetero(model, arch, Scenario(input_tokens=input_tokens, output_tokens=compare_tokens))
    m.update(gemm_ratio=c.gemm_ratio, gemv_ratio=c.gemv_ratio,
             hetero_over_homo_cc=c.hetero_over("homo-cc"),
             hetero_over_homo_mc=c.hetero_over("homo-mc"),
             peak_tflops=peak_flops(arch) / 1e12)
    m.update(ordering(c))
    return m


def slack(m: dict) -> float:
    """Smallest relative distance to a band edge; negative when a target is missed."""
    worst = 1.0
    for key, (lo, hi) in TARGETS.items():
        v = m[key]
        if lo is not None:
            worst = min(worst, (v - lo) / abs(lo))
        if hi is not None:
            worst = min(worst, (hi - v) / abs(hi))
    if not all(v for k, v in m.items() if isinstance(v, bool)):
        worst = min(worst, -1.0)
    return worst


def passed(m: dict) -> bool:
    return slack(m) >= 0.0


def _score(args: tuple[CalibrationPoint, ArchConfig, ModelConfig, int]) -> tuple[CalibrationPoint, float, dict]:
    point, arch, model, input_tokens = args
    a, mdl = point.apply(arch, model)
    try:
        m = measure(a, mdl, input_tokens)
    except (ValueError, OverflowError) as exc:
        return point, -float("inf"), {"error": str(exc)}
    return point, slack(m), m


def default_grid(arch: ArchConfig, model: ModelConfig) -> list[CalibrationPoint]:
    base = CalibrationPoint.from_configs(arch, model)
    o = base.dma_overhead_bytes
    enc = base.encoder_tokens
    return [CalibrationPoint(c, base.cim_subarrays, oo, base.cc_dma_buffers, base.mc_dma_buffers,
                             base.cc_data_memory_bytes, e)
            for c, oo, e in itertools.product(
                sorted({base.cim_cols - 4, base.cim_cols, base.cim_cols + 4}),
                sorted({o - 4096, o, o + 4096}),
                sorted({enc - 192, enc, enc + 192}))]


def search(arch: ArchConfig, model: ModelConfig, points: Sequence[CalibrationPoint],
           input_tokens: int = 300, jobs: int = 1) -> list[tuple[CalibrationPoint, float, dict]]:
    """Score every point; best (largest slack) first."""
    work = [(p, arch, model, input_tokens) for p in points]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_score, work))
    else:
        results = [_score(w) for w in work]
    return sorted(results, key=lambda r: -r[1])
