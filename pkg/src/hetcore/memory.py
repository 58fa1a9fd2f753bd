"""
DRAM bandwidth, DMA effective bandwidth and per-cluster budget throttling.

DRAM is a bandwidth pool with no bank state. Each cluster DMA has a
performance-monitoring counter (PMC) that accumulates granted bytes within
an interval of ``T`` cycles; once a request would push it past the cluster
budget the DMA stalls until the next interval boundary, where the counter
is reset before the pending request is accounted.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

INF = float("inf")


def effective_bandwidth(transfer_bytes: float, ideal_bw: float, overhead_bytes: float) -> float:
    """Achieved bandwidth of one DMA transfer of ``transfer_bytes``.

    Each transfer pays a fixed setup cost equivalent to ``overhead_bytes`` of
    data, so ``bw_eff = ideal_bw * s / (s + o)``.
    """
    if transfer_bytes <= 0:
        raise ValueError("transfer_bytes must be positive")
    if ideal_bw <= 0:
        raise ValueError("ideal_bw must be positive")
    if overhead_bytes < 0:
        raise ValueError("overhead_bytes must be non-negative")
    s = float(transfer_bytes)
    return ideal_bw * s / (s + overhead_bytes)


def phase_memory_time(dram_bytes: float, allocated_bw: float, transfer_chunk_bytes: float,
                      overhead_bytes: float, clock_hz: float = 1.0) -> float:
    """Cycles to move ``dram_bytes`` at ``allocated_bw`` bytes/s in ``transfer_chunk_bytes`` pieces.

    Callers pass the chunk already clipped to the on-chip landing capacity
    (see :class:`MemoryPort`). Returns fractional cycles.
    """
    if allocated_bw <= 0:
        raise ValueError("allocated bandwidth must be positive")
    if dram_bytes <= 0:
        return 0.0
    bw = effective_bandwidth(transfer_chunk_bytes, allocated_bw, overhead_bytes)
    return dram_bytes / (bw / clock_hz)


@dataclass(frozen=True)
class MemoryPort:
    """DRAM path seen by a set of cores: aggregate bytes/cycle and DMA chunk limit."""

    bytes_per_cycle: float
    chunk_bytes: float
    overhead_bytes: float
    cores: int = 1

    def cycles(self, dram_bytes: float) -> float:
        if dram_bytes <= 0:
            return 0.0
        if self.bytes_per_cycle == INF:
            return 0.0
        per_core = dram_bytes / max(1, self.cores)
        chunk = max(1.0, min(per_core, self.chunk_bytes))
        return phase_memory_time(dram_bytes, self.bytes_per_cycle, chunk, self.overhead_bytes)


@dataclass(frozen=True)
class BandwidthBudget:
    """Per-cluster byte budgets for one throttling interval of ``T`` cycles."""

    B_c: float
    B_m: float
    T: int

    @property
    def ratio(self) -> tuple[float, float]:
        return (self.B_c, self.B_m)

    def check(self, n_cc: int, n_mc: int, bytes_per_cycle: float) -> list[str]:
        out = []
        if self.T < 1:
            out.append("T must be ≥ 1")
        if self.B_c < 0 or self.B_m < 0:
            out.append("budgets must be non-negative")
        if n_cc * self.B_c + n_mc * self.B_m > bytes_per_cycle * self.T * (1 + 1e-9):
            out.append("budgets exceed DRAM bytes deliverable per interval")
        return out

    @classmethod
    def from_ratio(cls, c: float, m: float, n_cc: int, n_mc: int, bytes_per_cycle: float,
                   T: int) -> "BandwidthBudget":
        """Split the interval's DRAM bytes so that ``B_c : B_m = c : m`` per cluster."""
        weight = n_cc * c + n_mc * m
        total = bytes_per_cycle * T
        unit = total / weight if weight else 0.0
        return cls(B_c=c * unit, B_m=m * unit, T=T)

    def cc_bytes_per_cycle(self, n_cc: int) -> float:
        return n_cc * self.B_c / self.T

    def mc_bytes_per_cycle(self, n_mc: int) -> float:
        return n_mc * self.B_m / self.T


@dataclass
class PmcState:
    d: float = 0.0
    interval_start: int = 0
    blocked: bool = False


class ThrottleResult(NamedTuple):
    granted: bool
    blocked_until: Optional[int]


def throttle_step(pmc: PmcState, request_bytes: float, budget: float, T: int,
                  now_cycle: int) -> ThrottleResult:
    """Account one DMA request against the cluster budget, updating ``pmc`` in place."""
    start = (now_cycle // T) * T
    if start != pmc.interval_start:
        # reset first: a request landing on a boundary belongs to the new interval
        pmc.d = 0.0
        pmc.interval_start = start
        pmc.blocked = False
    if pmc.d + request_bytes <= budget:
        pmc.d += request_bytes
        return ThrottleResult(True, None)
    pmc.blocked = True
    return ThrottleResult(False, start + T)


@dataclass
class Grant:
    cluster: int
    issue_cycle: int
    grant_cycle: int
    nbytes: float


@dataclass
class ThrottleSim:
    """Queue-and-release DMA throttling for a set of clusters.

    Requests blocked by the PMC wait in FIFO order per cluster and are retried
    at the next interval boundary.
    """

    budgets: list[float]
    T: int
    pmcs: list[PmcState] = field(init=False)
    grants: list[Grant] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.pmcs = [PmcState() for _ in self.budgets]

    def run(self, requests: Iterable[tuple[int, int, float]]) -> list[Grant]:
        """``requests`` are ``(cycle, cluster, nbytes)``; returns grants in order."""
        heap: list[tuple[int, int, int, int, float]] = []
        for seq, (cyc, cl, nb) in enumerate(requests):
            if nb > self.budgets[cl]:
                raise ValueError(f"request of {nb} B exceeds cluster {cl} budget")
            heapq.heappush(heap, (cyc, seq, cyc, cl, nb))
        stalled_until = [0] * len(self.budgets)
        while heap:
            now, seq, issued, cl, nb = heapq.heappop(heap)
            if now < stalled_until[cl]:
                # FIFO: nothing overtakes a blocked request of the same cluster
                heapq.heappush(heap, (stalled_until[cl], seq, issued, cl, nb))
                continue
            res = throttle_step(self.pmcs[cl], nb, self.budgets[cl], self.T, now)
            if res.granted:
                self.grants.append(Grant(cl, issued, now, nb))
            else:
                stalled_until[cl] = res.blocked_until
                heapq.heappush(heap, (res.blocked_until, seq, issued, cl, nb))
        return self.grants


def granted_per_interval(grants: Iterable[Grant], cluster: int, T: int) -> dict[int, float]:
    out: dict[int, float] = {}
    for g in grants:
        if g.cluster == cluster:
            out[g.grant_cycle // T] = out.get(g.grant_cycle // T, 0.0) + g.nbytes
    return out


def max_window_bytes(per_interval: dict[int, float], n: int) -> float:
    """Largest byte total over any ``n`` consecutive intervals."""
    if not per_interval:
        return 0.0
    lo, hi = min(per_interval), max(per_interval)
    vals = [per_interval.get(i, 0.0) for i in range(lo, hi + 1)]
    best = acc = 0.0
    for i, v in enumerate(vals):
        acc += v
        if i >= n:
            acc -= vals[i - n]
        best = max(best, acc)
    return best


def interval_count(cycles: float, T: int) -> int:
    return max(1, math.ceil(cycles / T))
