"""Shared case generators for the coprocessor oracle checks."""

import numpy as np

from hetcore.arch import CimSpec, SaSpec
from hetcore.workload import Kernel, KernelKind, Phase


def gemm(M, K, N, count=1):
    kind = KernelKind.GEMV if M == 1 else KernelKind.GEMM
    return Kernel("k", kind, Phase.PREFILL, 1, M, K, N, count, flops=2 * M * K * N * count)


def oracle_cases(n=200, seed=0, cap=32):
    """(kernel, spec, cores, m_chunk) tuples with every axis <= cap."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        M, K, N = (int(x) for x in rng.integers(1, cap + 1, 3))
        kn = gemm(M, K, N, int(rng.integers(1, 5)))
        cores = int(rng.integers(1, 5))
        if i % 2:
            spec = SaSpec(rows=int(rng.integers(1, cap + 1)), cols=int(rng.integers(1, cap + 1)))
            out.append((kn, spec, cores, int(rng.integers(1, M + 1))))
        else:
            spec = CimSpec(cols=int(rng.integers(1, cap + 1)),
                           subarrays_per_col=int(rng.integers(1, cap + 1)),
                           depth=int(rng.integers(1, 9)), act_bits=int(rng.integers(1, 17)))
            out.append((kn, spec, cores, None))
    return out
