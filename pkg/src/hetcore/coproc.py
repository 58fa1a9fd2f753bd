"""
Cycle and traffic models for the two coprocessor types.

Systolic array (CC cores): weight-stationary R x C PE array. Multiplying an
R x C weight tile by an M x R activation block costs ``2R + C + M - 3``
cycles: R cycles of weight load, R - 1 of skew fill and C + M - 1 of
streaming, with activation injection starting in the last load cycle.

CIM macro (MC cores): each of the C columns holds R subarrays; a W-bit
activation row is broadcast bit-serially, so M rows against resident
weights take ``M * W + 1`` cycles (one extra for the final accumulate).

:func:`micro_simulate` steps both datapaths cycle by cycle on real integer
data and serves as the oracle for the closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .arch import CimSpec, ClusterKind, ClusterSpec, SaSpec
from .memory import INF, MemoryPort
from .workload import Kernel, KernelKind

# kernels whose weight footprint exceeds this cannot be addressed (40-bit space)
ADDRESS_SPACE_BYTES = 2**40

MICRO_SIM_MAX_DIM = 64


def sa_tile_cycles(R: int, C: int, M: int) -> int:
    if R < 1 or C < 1 or M < 1:
        raise ValueError(f"systolic tile dims must be >= 1, got R={R} C={C} M={M}")
    return max(1, 2 * R + C + M - 3)


def cim_pass_cycles(M: int, W: int) -> int:
    if M < 1 or W < 1:
        raise ValueError(f"CIM pass needs M >= 1 and W >= 1, got M={M} W={W}")
    return M * W + 1


@dataclass(frozen=True)
class TileSchedule:
    """How one kernel is cut into coprocessor-sized pieces for the busiest core."""

    tile_rows: int            # K extent of a tile (R)
    tile_cols: int            # N extent of a tile (C)
    k_tiles: int
    n_tiles: int
    instances: int
    tiles_per_core: int
    m_chunks: tuple[int, ...]  # activation-row chunk sizes streamed through each tile
    k_split: int = 1
    n_split: int = 1
    padded_k: int = 0
    padded_n: int = 0

    @property
    def total_tiles(self) -> int:
        return self.k_tiles * self.n_tiles * self.instances


@dataclass(frozen=True)
class CycleReport:
    compute_cycles: float
    dram_bytes: float
    onchip_bytes: float
    mem_cycles: float
    time_cycles: float
    utilization: float
    ideal_cycles: float = 0.0
    schedule: Optional[TileSchedule] = field(default=None, compare=False)
    error: str = ""

    @classmethod
    def build(cls, compute: float, dram: float, onchip: float, ideal: float,
              port: Optional[MemoryPort], schedule: Optional[TileSchedule] = None,
              error: str = "") -> "CycleReport":
        mem = port.cycles(dram) if port is not None else 0.0
        time = max(float(compute), mem)
        util = ideal / time if time > 0 else 0.0
        return cls(float(compute), float(dram), float(onchip), mem, time, min(1.0, util),
                   ideal, schedule, error)

    def __add__(self, other: "CycleReport") -> "CycleReport":
        time = self.time_cycles + other.time_cycles
        ideal = self.ideal_cycles + other.ideal_cycles
        return CycleReport(self.compute_cycles + other.compute_cycles,
                           self.dram_bytes + other.dram_bytes,
                           self.onchip_bytes + other.onchip_bytes,
                           self.mem_cycles + other.mem_cycles, time,
                           ideal / time if time > 0 else 0.0, ideal)


EMPTY_REPORT = CycleReport(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def _ceil(a: int, b: int) -> int:
    return -(-a // b)


def _m_chunks(M: int, cap: int) -> tuple[int, ...]:
    cap = max(1, min(M, cap))
    full, rem = divmod(M, cap)
    return (cap,) * full + ((rem,) if rem else ())


def _too_large(kernel: Kernel) -> str:
    if kernel.k * kernel.n * kernel.count * 2 > ADDRESS_SPACE_BYTES:
        return f"{kernel.name}: operand exceeds addressable memory"
    return ""


# -- systolic array ---------------------------------------------------------------

def sa_schedule(kernel: Kernel, sa: SaSpec, cores: int, m_chunk: Optional[int] = None) -> TileSchedule:
    R, C = sa.rows, sa.cols
    K, N = kernel.live_k, kernel.n
    kt, nt = _ceil(K, R), _ceil(N, C)
    total = kt * nt * kernel.count
    per_core = _ceil(total, max(1, cores))
    return TileSchedule(R, C, kt, nt, kernel.count, per_core,
                        _m_chunks(kernel.m, m_chunk or kernel.m),
                        padded_k=kt * R - K, padded_n=nt * C - N)


def map_gemm_sa(kernel: Kernel, sa: SaSpec, cores: int, m_chunk: Optional[int] = None,
                port: Optional[MemoryPort] = None) -> CycleReport:
    """Weight-stationary mapping of a GEMM (or GEMV, M=1) onto ``cores`` systolic arrays.

    Weight tiles are dealt out in N-then-K order in contiguous blocks; the
    busiest core sets the compute time. Partial sums across K tiles stay in
    the matrix registers. DRAM traffic is once-through.
    """
    if kernel.kind not in (KernelKind.GEMM, KernelKind.GEMV):
        raise ValueError(f"{kernel.name}: systolic mapping needs a GEMM/GEMV kernel")
    err = _too_large(kernel)
    sched = sa_schedule(kernel, sa, cores, m_chunk)
    per_tile = sum(sa_tile_cycles(sa.rows, sa.cols, mc) for mc in sched.m_chunks)
    compute = sched.tiles_per_core * per_tile
    ideal = kernel.m * kernel.live_k * kernel.n * kernel.count / (cores * sa.macs_per_cycle)
    dram = kernel.dram_bytes
    onchip = kernel.m * kernel.live_k * kernel.count * sched.n_tiles * sa.operand_bytes
    return CycleReport.build(compute, dram, onchip, ideal, port, sched, err)


# -- compute-in-memory -------------------------------------------------------------

def cim_schedule(kernel: Kernel, cim: CimSpec, cores: int) -> TileSchedule:
    """Split output channels across cores first, then input channels."""
    R, C = cim.subarrays_per_col, cim.cols
    K, N = kernel.live_k, kernel.n
    inst_per_core = _ceil(kernel.count, cores)
    cores_per_inst = max(1, cores // kernel.count) if kernel.count < cores else 1
    n_split = max(1, min(cores_per_inst, _ceil(N, C)))
    k_split = max(1, min(cores_per_inst // n_split, _ceil(K, R)))
    d_out = _ceil(N, n_split)
    d_in = _ceil(K, k_split)
    kt, nt = _ceil(d_in, R), _ceil(d_out, C)
    return TileSchedule(R, C, kt, nt, kernel.count, inst_per_core * kt * nt, (kernel.m,),
                        k_split=k_split, n_split=n_split,
                        padded_k=kt * R - d_in, padded_n=nt * C - d_out)


def cim_core_cycles(sched: TileSchedule, cim: CimSpec, m: int) -> int:
    """Busiest-core cycles: passes grouped by macro depth, plus split-K reduction."""
    inst = _ceil(sched.tiles_per_core, sched.k_tiles * sched.n_tiles)
    passes = sched.k_tiles * sched.n_tiles
    full, rem = divmod(passes, cim.depth)
    per_inst = full * cim_pass_cycles(cim.depth * m, cim.act_bits)
    if rem:
        per_inst += cim_pass_cycles(rem * m, cim.act_bits)
    if sched.k_split > 1:
        # partial outputs reduced through the shared buffer, one channel per cycle
        per_inst += sched.n_tiles * sched.tile_cols - sched.padded_n
    return inst * per_inst


def map_gemv_cim(kernel: Kernel, cim: CimSpec, cores: int, resident: bool = False,
                 port: Optional[MemoryPort] = None) -> CycleReport:
    """Bit-serial broadcast mapping of a GEMV (or M-row GEMM) onto ``cores`` CIM macros.

    With ``resident`` the weights already sit in the macros and no weight
    bytes cross DRAM; otherwise (decode steady state) every weight is
    streamed in once.
    """
    if kernel.kind not in (KernelKind.GEMM, KernelKind.GEMV):
        raise ValueError(f"{kernel.name}: CIM mapping needs a GEMM/GEMV kernel")
    err = _too_large(kernel)
    sched = cim_schedule(kernel, cim, cores)
    compute = cim_core_cycles(sched, cim, kernel.m)
    ideal = kernel.m * kernel.live_k * kernel.n * kernel.count / (cores * cim.macs_per_cycle)
    dram = kernel.dram_bytes - (kernel.weight_bytes if resident else 0)
    onchip = kernel.m * kernel.live_k * kernel.count * 2
    return CycleReport.build(compute, dram, onchip, ideal, port, sched, err)


def map_vector(kernel: Kernel, lanes: int, cores: int,
               port: Optional[MemoryPort] = None) -> CycleReport:
    """Elementwise / softmax work on the per-core vector units."""
    compute = math.ceil(kernel.flops / (lanes * max(1, cores)))
    return CycleReport.build(compute, kernel.dram_bytes, 0, compute, port)


def map_kernel(kernel: Kernel, cluster: ClusterSpec, cores: int,
               port: Optional[MemoryPort] = None) -> CycleReport:
    """Dispatch a kernel to the coprocessor of ``cluster`` spread over ``cores`` cores."""
    cp = cluster.coproc
    if kernel.kind in (KernelKind.ELEMENTWISE, KernelKind.SOFTMAX):
        return map_vector(kernel, cp.cols, cores, port)
    if isinstance(cp, SaSpec):
        return map_gemm_sa(kernel, cp, cores, sa_m_chunk(cluster), port)
    return map_gemv_cim(kernel, cp, cores, resident=False, port=port)


def sa_m_chunk(cluster: ClusterSpec) -> int:
    """Activation rows per systolic pass that fit in one core's DMA buffer."""
    sa = cluster.coproc
    assert isinstance(sa, SaSpec)
    return max(1, cluster.transfer_chunk_bytes // (sa.rows * sa.operand_bytes))


def map_simd(kernel: Kernel, cores: int, port: Optional[MemoryPort] = None) -> CycleReport:
    """Scalar baseline core: one MAC (or one elementwise op) per core per cycle."""
    work = kernel.macs if kernel.kind in (KernelKind.GEMM, KernelKind.GEMV) else kernel.flops
    compute = math.ceil(work / max(1, cores))
    return CycleReport.build(compute, kernel.dram_bytes, 0, compute, port)


# -- event-level oracle ------------------------------------------------------------

def _simulate_sa_tile(w: np.ndarray, x: np.ndarray) -> tuple[int, np.ndarray]:
    """Cycle-step one R x C weight tile against M x R activations.

    Row ``r`` of weights is written in cycle ``r``. Activation ``x[m, r]``
    enters PE(r, 0) in cycle ``R - 1 + m + r`` and moves one column right per
    cycle; partial sums move one row down per cycle and leave the bottom row.
    Returns (cycles until the last output leaves, M x C result).
    """
    R, C = w.shape
    M = x.shape[0]
    loaded = np.full(R, -1)
    a_val = np.zeros((R, C), dtype=np.int64)
    a_ok = np.zeros((R, C), dtype=bool)
    p_val = np.zeros((R, C), dtype=np.int64)
    out = np.zeros((M, C), dtype=np.int64)
    got = np.zeros((M, C), dtype=bool)
    t = 0
    last = 0
    rows = np.arange(R)
    while not got.all():
        if t < R:
            loaded[t] = t
        # shift activations right, inject skewed column 0
        na_val = np.zeros_like(a_val)
        na_ok = np.zeros_like(a_ok)
        na_val[:, 1:] = a_val[:, :-1]
        na_ok[:, 1:] = a_ok[:, :-1]
        m_idx = t - (R - 1) - rows
        inj = (m_idx >= 0) & (m_idx < M)
        na_val[inj, 0] = x[m_idx[inj], rows[inj]]
        na_ok[inj, 0] = True
        if np.any(na_ok & (loaded[:, None] < 0)):
            raise AssertionError("activation reached a PE before its weight was loaded")
        p_in = np.zeros_like(p_val)
        p_in[1:] = p_val[:-1]
        p_val = np.where(na_ok, p_in + w * na_val, 0)
        a_val, a_ok = na_val, na_ok
        cols = np.nonzero(a_ok[R - 1])[0]
        for c in cols:
            m = t - 2 * (R - 1) - c
            out[m, c] = p_val[R - 1, c]
            got[m, c] = True
            last = t
        t += 1
    return last + 1, out


def _simulate_cim_group(wblocks: list[np.ndarray], xs: list[np.ndarray], W: int) -> tuple[int, list[np.ndarray]]:
    """Bit-serial column pipeline over the passes of one resident weight group.

    ``wblocks[p]`` is the R x C weight block at depth address ``p``; ``xs[p]``
    its M x R unsigned activation rows. Every cycle one activation bit is
    broadcast to all columns, each column's adder tree sums R one-bit
    products and the shift-accumulator folds it in. A finished row's sum is
    latched one cycle after its last bit, overlapping the next row.
    """
    t = 0
    last_latch = 0
    results = []
    for wb, x in zip(wblocks, xs):
        M = x.shape[0]
        res = np.zeros((M, wb.shape[1]), dtype=np.int64)
        for m in range(M):
            acc = np.zeros(wb.shape[1], dtype=np.int64)
            for bit in range(W):
                bits = (x[m] >> bit) & 1
                acc += (bits[:, None] * wb).sum(axis=0) << bit
                t += 1
            res[m] = acc
            last_latch = t + 1  # latch in the cycle after the last bit
        results.append(res)
    return last_latch, results


def micro_simulate(kernel: Kernel, spec: Union[SaSpec, CimSpec], cores: int = 1,
                   m_chunk: Optional[int] = None, seed: int = 0) -> int:
    """Event-level cycle count for the busiest core, checked against a dense product.

    Every axis (M, K, N, instances, array dims) must be at most 64.
    """
    dims = (kernel.m, kernel.live_k, kernel.n, kernel.count)
    arr = (spec.rows, spec.cols) if isinstance(spec, SaSpec) else (spec.subarrays_per_col, spec.cols)
    if max(dims + arr) > MICRO_SIM_MAX_DIM:
        raise ValueError(f"micro-simulator is capped at {MICRO_SIM_MAX_DIM} per axis, got {dims + arr}")
    if kernel.kind not in (KernelKind.GEMM, KernelKind.GEMV):
        raise ValueError("micro-simulator handles GEMM/GEMV kernels only")
    rng = np.random.default_rng(seed)
    M, K, N = kernel.m, kernel.live_k, kernel.n
    if isinstance(spec, SaSpec):
        return _micro_sa(rng, M, K, N, kernel.count, spec, cores, m_chunk or M)
    return _micro_cim(rng, M, K, N, kernel.count, spec, cores)


def _micro_sa(rng, M, K, N, count, sa: SaSpec, cores: int, m_chunk: int) -> int:
    R, C = sa.rows, sa.cols
    kt, nt = _ceil(K, R), _ceil(N, C)
    # tile order: N fastest, then K, then instance; contiguous blocks per core
    order = [(i, k, n) for i in range(count) for k in range(kt) for n in range(nt)]
    q = _ceil(len(order), cores)
    mine = order[:q]
    insts = {i for i, _, _ in mine}
    a = {i: rng.integers(-8, 8, size=(M, kt * R)) for i in insts}
    w = {i: rng.integers(-8, 8, size=(kt * R, nt * C)) for i in insts}
    for i in insts:  # explicit zero padding on the ragged edge
        a[i][:, K:] = 0
        w[i][K:, :] = 0
        w[i][:, N:] = 0
    acc = {i: np.zeros((M, nt * C), dtype=np.int64) for i in insts}
    cycles = 0
    for i, k, n in mine:
        wt = w[i][k * R:(k + 1) * R, n * C:(n + 1) * C]
        m0 = 0
        while m0 < M:
            m1 = min(M, m0 + m_chunk)
            cyc, part = _simulate_sa_tile(wt, a[i][m0:m1, k * R:(k + 1) * R])
            acc[i][m0:m1, n * C:(n + 1) * C] += part
            cycles += cyc
            m0 = m1
    for i in insts:
        # only instances whose every tile landed on this core have a complete product
        if sum(1 for ii, _, _ in mine if ii == i) == kt * nt:
            assert np.array_equal(acc[i][:, :N], a[i][:, :K] @ w[i][:K, :N]), "SA datapath mismatch"
    return cycles


def _micro_cim(rng, M, K, N, count, cim: CimSpec, cores: int) -> int:
    R, C, W, depth = cim.subarrays_per_col, cim.cols, cim.act_bits, cim.depth
    kern = Kernel("probe", KernelKind.GEMV, None, 0, m=M, k=K, n=N, count=count)  # type: ignore[arg-type]
    sched = cim_schedule(kern, cim, cores)
    d_in = _ceil(K, sched.k_split)
    d_out = _ceil(N, sched.n_split)
    inst = _ceil(count, cores)
    wmax = 2 ** min(cim.weight_bits, 8)
    total = 0
    for _ in range(inst):
        w = rng.integers(0, wmax, size=(sched.k_tiles * R, sched.n_tiles * C))
        x = rng.integers(0, 2 ** min(W, 16), size=(M, sched.k_tiles * R))
        w[d_in:, :] = 0
        w[:, d_out:] = 0
        x[:, d_in:] = 0
        blocks = [(kk, nn) for kk in range(sched.k_tiles) for nn in range(sched.n_tiles)]
        out = np.zeros((M, sched.n_tiles * C), dtype=np.int64)
        for g0 in range(0, len(blocks), depth):
            grp = blocks[g0:g0 + depth]
            wbs = [w[kk * R:(kk + 1) * R, nn * C:(nn + 1) * C] for kk, nn in grp]
            xs = [x[:, kk * R:(kk + 1) * R] for kk, nn in grp]
            cyc, res = _simulate_cim_group(wbs, xs, W)
            total += cyc
            for (kk, nn), r in zip(grp, res):
                out[:, nn * C:(nn + 1) * C] += r
        assert np.array_equal(out[:, :d_out], x[:, :d_in] @ w[:d_in, :d_out]), "CIM datapath mismatch"
        if sched.k_split > 1:
            # shared-buffer reduction of partial outputs, one channel per cycle
            for _c in range(d_out):
                total += 1
    return total
