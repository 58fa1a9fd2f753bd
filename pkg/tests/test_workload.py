import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hetcore.workload import (KernelKind, Phase, Scenario, build_graph, decode_step_kernels,
                              ffn_reference, iter_presets, load_preset, model_from_dict,
                              model_to_dict, scenario_from_dict)


def test_presets_listed():
    assert {"sphinx_tiny", "karmavlm"} <= set(iter_presets())


@pytest.mark.parametrize("name", ["sphinx_tiny", "karmavlm"])
def test_presets_validate(name):
    m = load_preset(name)
    assert m.validate() == []
    assert model_from_dict(model_to_dict(m)) == m


def test_graph_phases(sphinx):
    g = build_graph(sphinx, Scenario(input_tokens=16, output_tokens=3))
    enc, pre, dec = (g.phase(p) for p in (Phase.ENCODE, Phase.PREFILL, Phase.DECODE))
    assert enc and pre and dec
    assert all(k.kind == KernelKind.GEMM for k in pre if k.name == "ffn_up")
    assert all(k.kind == KernelKind.GEMV for k in dec if k.weight_bytes)
    assert len(g.listing().splitlines()) == len(g) + 1


def test_decode_streams_all_weights_each_step(sphinx):
    g = build_graph(sphinx, Scenario(input_tokens=8, output_tokens=4))
    assert g.totals(Phase.DECODE)["weight_bytes"] == 4 * sphinx.llm_weight_bytes()


def test_kv_traffic_grows_with_context(sphinx):
    kv = [sum(k.kv_bytes for k in decode_step_kernels(sphinx, ctx)) for ctx in (10, 20)]
    assert kv[1] == 2 * kv[0]
    per = 2 * sphinx.llm_layers * 10 * sphinx.kv_dim * sphinx.act_bytes_per_elem
    assert kv[0] == per


def test_batch_shares_weights(sphinx):
    one = decode_step_kernels(sphinx, 64, batch=1)
    four = decode_step_kernels(sphinx, 64, batch=4)
    assert sum(k.weight_bytes for k in one) == sum(k.weight_bytes for k in four)
    assert sum(k.flops for k in four) == pytest.approx(4 * sum(k.flops for k in one))


def test_only_decode_ffn_is_prunable(sphinx):
    g = build_graph(sphinx, Scenario(input_tokens=4, output_tokens=1))
    tags = {(k.phase, k.name, k.prunable) for k in g if k.prunable}
    assert tags == {(Phase.DECODE, "ffn_up", "vx"), (Phase.DECODE, "ffn_gate", "vx"),
                    (Phase.DECODE, "ffn_down", "vd")}


def test_invalid_inputs(sphinx):
    with pytest.raises(ValueError):
        build_graph(sphinx, Scenario(output_tokens=0))
    with pytest.raises(ValueError):
        build_graph(dataclasses.replace(sphinx, heads=7), Scenario())
    with pytest.raises(OverflowError):
        build_graph(sphinx, Scenario(output_tokens=10**9))
    with pytest.raises(ValueError):
        scenario_from_dict({"bogus": 1})


def test_scenario_from_dict_coerces():
    s = scenario_from_dict({"prune_ratios": [0.1, 0.2], "fixed_ratio": ["1", "3"]})
    assert s.prune_ratios == (0.1, 0.2) and s.fixed_ratio == (1, 3)


def test_ffn_reference_matches_manual():
    rng = np.random.default_rng(0)
    v, up, gate, down = rng.normal(size=8), rng.normal(size=(16, 8)), rng.normal(size=(16, 8)), \
        rng.normal(size=(8, 16))
    g = gate @ v
    expect = down @ ((up @ v) * g / (1 + np.exp(-g)))
    assert np.allclose(ffn_reference(v, up, gate, down, "silu"), expect)


def test_ffn_reference_shape_errors():
    with pytest.raises(ValueError):
        ffn_reference(np.ones(4), np.ones((8, 5)), np.ones((8, 5)), np.ones((4, 8)))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 64), st.integers(1, 8))
def test_flops_linear_in_context(ctx, batch):
    from hetcore.workload import llm_layer_kernels, load_preset
    m = load_preset("karmavlm")
    ks = {k.name: k for k in llm_layer_kernels(m, Phase.DECODE, 1, 1, ctx, batch)}
    assert ks["attn_scores"].flops == 2 * m.head_dim * ctx * batch * m.heads
