"""Acceptance criteria, one test each, at the stated tolerances.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""

import dataclasses
import itertools
import time

import numpy as np
import pytest
import yaml

from conftest import ACCEPTANCE
from hetcore.arch import CimSpec, SaSpec
from hetcore.calibrate import TARGETS, batch_sweep, ordering
from hetcore.cli import DATA_DIR
from hetcore.coproc import cim_pass_cycles, micro_simulate, sa_tile_cycles
from hetcore.memory import ThrottleSim, granted_per_interval, max_window_bytes
from hetcore.pipeline import (StageModels, allocate_bandwidth, balance_length, compare_homo_hetero,
                              pipeline_simulate)
from hetcore.pruning import (FfnWeights, PruneParams, TokenPruner, decode_weight_bytes,
                             pruned_ffn_eval, traffic_reduction)
from hetcore.traceio import shipped_trace
from hetcore.workload import Scenario, build_graph, ffn_reference

from _cases import oracle_cases
from test_coproc import analytic


def check(cid, ok, detail):
    ACCEPTANCE[cid] = (bool(ok), detail)
    print(f"{cid} {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"{cid}: {detail}"


def in_band(v, key):
    lo, hi = TARGETS[key]
    return (lo is None or v >= lo) and (hi is None or v <= hi)


# -- A: exact formulas and oracles ---------------------------------------------------

def test_A1_sa_formula():
    t0 = time.perf_counter()
    grid = list(itertools.product([1, 2, 3, 8, 16], [1, 4, 16, 32], [1, 2, 16, 64, 257]))[:100]
    bad = [(R, C, M) for R, C, M in grid if sa_tile_cycles(R, C, M) != 2 * R + C + M - 3]
    dt = time.perf_counter() - t0
    check("A1", len(grid) == 100 and not bad and dt < 1.0,
          f"{len(grid)} triples, {len(bad)} mismatches, {dt * 1e3:.1f} ms")


def test_A2_cim_formula():
    t0 = time.perf_counter()
    grid = list(itertools.product(range(1, 11), [1, 2, 4, 8, 16, 3, 5, 7, 12, 32]))
    bad = [(M, W) for M, W in grid if cim_pass_cycles(M, W) != M * W + 1]
    dt = time.perf_counter() - t0
    check("A2", len(grid) == 100 and not bad and dt < 1.0,
          f"{len(grid)} pairs, {len(bad)} mismatches, {dt * 1e3:.1f} ms")


def test_A3_oracle_equivalence():
    t0 = time.perf_counter()
    cases = oracle_cases(200, seed=11, cap=32)
    bad = sum(analytic(kn, spec, cores, mc) != micro_simulate(kn, spec, cores, m_chunk=mc)
              for kn, spec, cores, mc in cases)
    dt = time.perf_counter() - t0
    check("A3", bad == 0 and dt < 10.0, f"{len(cases)} cases, {bad} mismatches, {dt:.2f} s")


def test_A4_pruning_algebra():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(50):
        d, f = int(rng.integers(2, 48)), int(rng.integers(2, 96))
        up, gate, down = rng.normal(size=(f, d)), rng.normal(size=(f, d)), rng.normal(size=(d, f))
        v = rng.normal(size=d)
        keep = rng.random(d) < rng.uniform(0.1, 0.9)
        keep[rng.integers(d)] = True
        a = ffn_reference(np.where(keep, v, 0.0), up, gate, down)
        b = ffn_reference(v[keep], up[:, keep], gate[:, keep], down)
        worst = max(worst, float(np.linalg.norm(a - b) / np.linalg.norm(a)))
    check("A4", worst <= 1e-6, f"50 FFNs, worst relative error {worst:.2e}")


# -- B: invariants ------------------------------------------------------------------

def test_B1_k_monotone():
    rng = np.random.default_rng(5)
    params = PruneParams(t=16, cores=8)
    d, layers, grew, not_reset = 256, 16, 0, 0
    for _ in range(1000):
        p = TokenPruner(d, params)
        not_reset += p.ks != [s.stop - s.start for s in p.slices]
        prev = None
        for _ in range(layers):
            heavy = rng.random(d) < 0.05
            p.step(rng.normal(size=d) * np.where(heavy, rng.uniform(5, 40), 1.0))
            if prev is not None:
                grew += any(a > b for a, b in zip(p.ks, prev))
            prev = p.ks
    check("B1", grew == 0 and not_reset == 0,
          f"1000 tokens x {layers} layers, {grew} increases, {not_reset} missed resets")


def test_B2_throttle_conservation():
    rng = np.random.default_rng(6)
    T, budgets = 32, [100.0, 300.0, 50.0, 700.0]
    reqs, cyc = [], 0
    for _ in range(10_000):
        cyc += int(rng.integers(0, 3))
        cl = int(rng.integers(len(budgets)))
        reqs.append((cyc, cl, float(rng.uniform(1, budgets[cl]))))
    grants = ThrottleSim(budgets, T).run(reqs)
    worst = 0.0
    for cl, B in enumerate(budgets):
        per = granted_per_interval(grants, cl, T)
        for n in (1, 2, 3, 10, 100):
            worst = max(worst, max_window_bytes(per, n) / (n * B))
    check("B2", worst <= 1.0 + 1e-12 and len(grants) == len(reqs),
          f"10000 requests, max window fill {worst:.4f} of n*B")


@pytest.fixture(scope="module")
def stages(arch, sphinx):
    return StageModels(sphinx, arch, Scenario(bandwidth_policy="dynamic"))


def test_B3_allocation_dominance(arch, sphinx, stages):
    worse = []
    for l in range(1, 1025):
        budget = allocate_bandwidth(l, sphinx, arch, stages=stages)
        ratio = (1, round(budget.B_m / budget.B_c))
        dyn = pipeline_simulate(sphinx, arch, Scenario(output_tokens=l, bandwidth_policy="fixed-ratio",
                                                       fixed_ratio=ratio), stages=stages)
        eq = pipeline_simulate(sphinx, arch, Scenario(output_tokens=l), stages=stages)
        if dyn.latency_cycles > eq.latency_cycles * (1 + 1e-12):
            worse.append(l)
    check("B3", not worse, f"l=1..1024, {len(worse)} lengths worse than equal split")


def test_B4_batch_monotone(arch, sphinx, stages):
    bad = []
    for policy, l in itertools.product(("equal", "dynamic"), (128, 1024)):
        plans = [pipeline_simulate(sphinx, arch, Scenario(output_tokens=l, batch=B, bandwidth_policy=policy),
                                   stages=stages) for B in (1, 2, 4, 8, 16)]
        for a, b in zip(plans, plans[1:]):
            if b.throughput_tokens_per_s < a.throughput_tokens_per_s or b.latency_cycles < a.latency_cycles:
                bad.append((policy, l, b.batch))
    check("B4", not bad, f"B in 1,2,4,8,16 at l=128,1024 under equal and dynamic; violations {bad}")


def test_B5_gemm_gemv_dichotomy():
    sa, cim = SaSpec(), CimSpec()
    R, C, W = sa.rows, sa.cols, cim.act_bits
    weights = R * C

    def per_weight(M):
        return sa_tile_cycles(R, C, M) / weights, cim_pass_cycles(M, W) / weights

    s1, c1 = per_weight(1)
    reversed_ = all(per_weight(M)[1] > per_weight(M)[0] for M in range(W, 4 * W + 1))
    check("B5", c1 < s1 and reversed_,
          f"R=C={R}, W={W}: M=1 CIM {c1:.3f} < SA {s1:.3f} cyc/weight; reversed for all M in [W, 4W]: {reversed_}")


# -- C: calibrated shape targets ---------------------------------------------------------

def test_C1_design_ordering(arch, sphinx):
    t0 = time.perf_counter()
    c = compare_homo_hetero(sphinx, arch, Scenario(input_tokens=300, output_tokens=32))
    dt = time.perf_counter() - t0
    order = ordering(c)
    vals = {"gemm_ratio": c.gemm_ratio, "gemv_ratio": c.gemv_ratio,
            "hetero_over_homo_cc": c.hetero_over("homo-cc"),
            "hetero_over_homo_mc": c.hetero_over("homo-mc")}
    ok = all(order.values()) and all(in_band(v, k) for k, v in vals.items()) and dt < 60
    detail = ", ".join(f"{k}={v:.3f}" for k, v in vals.items())
    check("C1", ok, f"{detail}; ordering {all(order.values())}; {dt:.1f} s")


def test_C2_pruning_shape(sphinx):
    tr = shipped_trace()
    kurt = tr.layer_kurtosis()
    rep = pruned_ffn_eval(tr, FfnWeights.random(tr.d_model, tr.d_ffn, seed=1), PruneParams(cores=16))
    ratio = rep.layer_ratio
    dyn_cos = rep.mean_cosine
    f01 = float(rep.layer_fixed_cosine(0.1).mean())
    gap07 = float(rep.layer_cosine[:5].mean() - rep.layer_fixed_cosine(0.7)[:5].mean())
    g = build_graph(sphinx, Scenario(input_tokens=300, output_tokens=1))
    red = 1.0 - decode_weight_bytes(traffic_reduction(g, tuple(ratio))) / decode_weight_bytes(g)
    monotone = bool(np.all(np.diff(ratio) >= 0))
    ok = (bool(np.all(np.diff(kurt) > 0)) and monotone and dyn_cos >= f01 - 0.005
          and gap07 >= 0.02 and 0.30 <= red <= 0.55)
    check("C2", ok, f"ratio non-decreasing {monotone} (mean {ratio.mean():.3f}); cos dyn {dyn_cos:.4f} "
                    f"vs fixed-0.1 {f01:.4f}; fixed-0.7 first-5 deficit {gap07:.3f}; "
                    f"decode weight traffic cut {red:.3f}")


def shipped_batch():
    pack = yaml.safe_load((DATA_DIR / "scenarios" / "bandwidth_sweep.yaml").read_text())
    batched = next(s for s in pack["scenarios"] if s["id"] == "batched")
    return max(batched["sweep"]["batch"]), batched["output_tokens"]


def test_C3_bandwidth_shape(arch, sphinx, stages):
    l_e = balance_length(sphinx, arch, stages=stages).l_e
    eq = pipeline_simulate(sphinx, arch, Scenario(output_tokens=128), stages=stages)
    dy = pipeline_simulate(sphinx, arch, Scenario(output_tokens=128, bandwidth_policy="dynamic"),
                           stages=stages)
    cut = 1.0 - dy.latency_cycles / eq.latency_cycles
    gain = dy.throughput_tokens_per_s / eq.throughput_tokens_per_s
    B, l = shipped_batch()
    (_, bgain, bovh), = batch_sweep(stages, Scenario(bandwidth_policy="dynamic"), [B], l)
    ok = (in_band(l_e, "l_e") and in_band(cut, "latency_cut_l128") and in_band(gain, "throughput_gain_l128")
          and in_band(bgain, "batch_throughput_gain") and in_band(bovh, "batch_latency_overhead"))
    check("C3", ok, f"l_e={l_e}; l=128 ({dy.ratio_label}) latency cut {cut:.3f}, throughput x{gain:.2f}; "
                    f"l={l} batch {B}: throughput x{bgain:.2f}, latency +{bovh:.3f}")
