import dataclasses
import itertools
import time

import pytest
from hypothesis import given, settings, strategies as st

from hetcore.arch import CimSpec, SaSpec
from hetcore.coproc import (cim_pass_cycles, map_gemm_sa, map_gemv_cim, map_simd, micro_simulate,
                            sa_tile_cycles)
from hetcore.memory import MemoryPort

from _cases import gemm, oracle_cases


def analytic(kn, spec, cores, m_chunk):
    if isinstance(spec, SaSpec):
        return map_gemm_sa(kn, spec, cores, m_chunk).compute_cycles
    return map_gemv_cim(kn, spec, cores).compute_cycles


def test_sa_tile_formula_grid():
    grid = list(itertools.product([1, 2, 7, 16, 64], [1, 3, 16, 33], [1, 5, 16, 128, 1000]))[:100]
    for R, C, M in grid:
        assert sa_tile_cycles(R, C, M) == max(1, 2 * R + C + M - 3)


def test_sa_smallest_tile_takes_one_cycle():
    # 2+1+1-3 = 1 already; the floor only guards the formula
    assert sa_tile_cycles(1, 1, 1) == 1


def test_cim_pass_formula():
    assert cim_pass_cycles(1, 16) == 17
    assert cim_pass_cycles(4, 8) == 33


@pytest.mark.parametrize("args", [(0, 1, 1), (1, 0, 1), (1, 1, 0)])
def test_sa_rejects_nonpositive(args):
    with pytest.raises(ValueError):
        sa_tile_cycles(*args)


@pytest.mark.parametrize("args", [(0, 16), (1, 0)])
def test_cim_rejects_nonpositive(args):
    with pytest.raises(ValueError):
        cim_pass_cycles(*args)


@given(st.integers(1, 512), st.integers(1, 512), st.integers(1, 4096))
def test_sa_monotone_in_each_dim(R, C, M):
    t = sa_tile_cycles(R, C, M)
    assert sa_tile_cycles(R + 1, C, M) == t + 2
    assert sa_tile_cycles(R, C + 1, M) == t + 1
    assert sa_tile_cycles(R, C, M + 1) == t + 1


def test_micro_simulator_matches_analytic():
    t0 = time.perf_counter()
    for kn, spec, cores, mc in oracle_cases(200):
        assert analytic(kn, spec, cores, mc) == micro_simulate(kn, spec, cores, m_chunk=mc)
    assert time.perf_counter() - t0 < 10.0


def test_micro_simulator_refuses_large_dims():
    with pytest.raises(ValueError):
        micro_simulate(gemm(1, 65, 4), SaSpec())


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 12), st.integers(1, 3))
def test_micro_sa_property(M, K, N, cores):
    kn, sa = gemm(M, K, N), SaSpec(rows=4, cols=4)
    assert map_gemm_sa(kn, sa, cores, M).compute_cycles == micro_simulate(kn, sa, cores, m_chunk=M)


def test_roofline_takes_the_slower_side():
    kn = dataclasses.replace(gemm(1, 1024, 1024), weight_bytes=2 * 1024 * 1024)
    slow = MemoryPort(bytes_per_cycle=1.0, chunk_bytes=4096, overhead_bytes=0)
    rep = map_gemv_cim(kn, CimSpec(), 1, port=slow)
    assert rep.mem_cycles > rep.compute_cycles
    assert rep.time_cycles == rep.mem_cycles
    fast = map_gemv_cim(kn, CimSpec(), 1, port=MemoryPort(1e9, 1e9, 0))
    assert fast.time_cycles == fast.compute_cycles


def test_cim_cycles_scale_with_batch_rows():
    cim = CimSpec()
    one = map_gemv_cim(gemm(1, 2048, 2048), cim, 2).compute_cycles
    four = map_gemv_cim(gemm(4, 2048, 2048), cim, 2).compute_cycles
    assert four > 3 * one


def test_simd_one_mac_per_core():
    rep = map_simd(gemm(8, 64, 64), cores=4)
    assert rep.compute_cycles == 8 * 64 * 64 / 4
