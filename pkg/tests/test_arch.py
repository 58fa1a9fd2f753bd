import dataclasses

import pytest
from hypothesis import given, strategies as st

from hetcore import arch as archmod
from hetcore.arch import ArchConfig, ClusterKind, CimSpec, SaSpec, peak_flops, validate


def test_defaults_validate(arch):
    assert validate(arch).ok


def test_default_topology(arch):
    assert (arch.n_cc_clusters, arch.n_mc_clusters) == (8, 8)
    assert arch.cc_cores == 32 and arch.mc_cores == 16
    assert arch.dram_bytes_per_cycle == pytest.approx(336.0)


def test_peak_flops_counts_both_coprocessors(arch):
    sa = 8 * 4 * 16 * 16
    cim = 8 * 2 * 32 * 44 / 16
    assert peak_flops(arch) == pytest.approx((sa + cim) * 2e9)
    assert 16e12 <= peak_flops(arch) <= 20e12
    assert peak_flops(arch, include_cim=False) == pytest.approx(sa * 2e9)


def test_mc_memory_holds_the_macros(arch):
    mc = arch.mc_cluster
    assert mc.data_memory_bytes >= mc.cores * mc.coproc.macro_bytes
    assert mc.data_memory_bytes >= arch.cc_cluster.data_memory_bytes


def test_yaml_round_trip(arch, tmp_path):
    p = tmp_path / "a.yaml"
    archmod.save(arch, p)
    assert archmod.load(p) == arch


def test_shipped_default_matches_code(arch):
    from hetcore.cli import DATA_DIR
    assert archmod.load(DATA_DIR / "arch" / "default.yaml") == arch


@pytest.mark.parametrize("kind,clusters", [(ClusterKind.CC, 12), (ClusterKind.MC, 24)])
def test_homogeneous_keeps_core_count(arch, kind, clusters):
    h = arch.homogeneous(kind)
    assert h.n_clusters_of(kind) == clusters
    assert h.cc_cores + h.mc_cores == arch.cc_cores + arch.mc_cores
    assert validate(h).ok


@pytest.mark.parametrize("change,needle", [
    (dict(groups=0), "groups"),
    (dict(clock_hz=0.0), "clock_hz"),
    (dict(dram_bandwidth_bytes_per_s=-1.0), "dram_bandwidth"),
    (dict(throttle_interval_cycles=0), "throttle_interval"),
    (dict(dma_overhead_bytes=-5), "dma_overhead"),
])
def test_violations_are_reported(arch, change, needle):
    rep = validate(arch.replace(**change))
    assert not rep.ok
    assert any(needle in v for v in rep.violations)


def test_coproc_kind_mismatch(arch):
    bad = dataclasses.replace(arch.mc_cluster, coproc=SaSpec())
    rep = validate(arch.replace(mc_cluster=bad))
    assert any("coproc kind mismatch" in v for v in rep.violations)


def test_mc_memory_smaller_than_cc_rejected(arch):
    small = dataclasses.replace(arch.mc_cluster, data_memory_bytes=1024)
    assert any("MC cluster data memory" in v for v in validate(arch.replace(mc_cluster=small)).violations)


def test_cim_weight_bits_restricted(arch):
    cim = dataclasses.replace(arch.mc_cluster.coproc, weight_bits=12)
    mc = dataclasses.replace(arch.mc_cluster, coproc=cim)
    assert not validate(arch.replace(mc_cluster=mc)).ok


def test_validate_never_raises():
    assert not validate("nope").ok
    assert not validate(ArchConfig(groups="four")).ok


def test_malformed_yaml_raises():
    with pytest.raises((KeyError, ValueError, TypeError)):
        archmod.loads("arch:\n  groups: 2\n")


@given(st.integers(1, 64), st.integers(1, 64))
def test_sa_macs(rows, cols):
    assert SaSpec(rows=rows, cols=cols).macs_per_cycle == rows * cols


@given(st.integers(1, 128), st.integers(1, 128), st.sampled_from([4, 8, 16]))
def test_cim_capacity(cols, sub, wb):
    cim = CimSpec(cols=cols, subarrays_per_col=sub, weight_bits=wb)
    assert cim.capacity_weights == cim.depth * sub * cols
    assert cim.macro_bytes * 8 == cim.capacity_weights * wb
