"""
Multimodal-LLM workload description and per-phase operator graphs.

A model is a vision encoder stack, an MLP projector and a decoder-only LLM
with a gated-MLP FFN. :func:`build_graph` expands it into an ordered list of
kernels for the three inference phases (encode, prefill, decode), each with
exact FLOP and byte footprints.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Union

import numpy as np
import yaml

# byte totals above this are treated as an accounting overflow
MAX_BYTES = 2**62


class Phase(str, Enum):
    ENCODE = "encode"
    PREFILL = "prefill"
    DECODE = "decode"


class KernelKind(str, Enum):
    GEMM = "gemm"
    GEMV = "gemv"
    ELEMENTWISE = "elementwise"
    SOFTMAX = "softmax"


@dataclass(frozen=True)
class ModelConfig:
    name: str
    encoder_layers: int
    encoder_d_model: int
    encoder_d_ffn: int
    encoder_heads: int
    encoder_tokens: int
    llm_layers: int
    d_model: int
    d_ffn: int
    heads: int
    kv_heads: int
    vocab: int
    weight_bytes_per_elem: int = 2
    act_bytes_per_elem: int = 2
    activation_fn: str = "silu"

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @property
    def kv_dim(self) -> int:
        return self.kv_heads * self.head_dim

    def llm_layer_params(self) -> int:
        attn = self.d_model * (self.d_model + 2 * self.kv_dim) + self.d_model * self.d_model
        ffn = 3 * self.d_model * self.d_ffn
        return attn + ffn

    def llm_weight_params(self) -> int:
        """Weights streamed once per decode step: all layers plus the LM head."""
        return self.llm_layers * self.llm_layer_params() + self.vocab * self.d_model

    def llm_weight_bytes(self) -> int:
        return self.llm_weight_params() * self.weight_bytes_per_elem

    def ffn_weight_bytes(self) -> int:
        return self.llm_layers * 3 * self.d_model * self.d_ffn * self.weight_bytes_per_elem

    def encoder_params(self) -> int:
        d, f = self.encoder_d_model, self.encoder_d_ffn
        return self.encoder_layers * (4 * d * d + 2 * d * f)

    def validate(self) -> list[str]:
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, int) and not isinstance(v, bool) and v <= 0:
                out.append(f"{f.name} must be positive")
        if self.d_ffn < self.d_model:
            out.append("d_ffn must be ≥ d_model")
        if self.heads > 0 and self.d_model % self.heads:
            out.append("d_model must be divisible by heads")
        if self.kv_heads > self.heads:
            out.append("kv_heads must be ≤ heads")
        if self.encoder_heads > 0 and self.encoder_d_model % self.encoder_heads:
            out.append("encoder_d_model must be divisible by encoder_heads")
        if self.activation_fn not in ACTIVATIONS:
            out.append(f"activation_fn must be one of {sorted(ACTIVATIONS)}")
        return out


@dataclass(frozen=True)
class Scenario:
    id: str = "default"
    input_tokens: int = 300
    output_tokens: int = 32
    batch: int = 1
    pruning_enabled: bool = False
    # uniform V_x prune ratio applied when no per-layer ratios are supplied
    prune_ratio: float = 0.0
    prune_ratios: tuple[float, ...] = ()
    bandwidth_policy: str = "equal"  # equal | dynamic | fixed-ratio
    fixed_ratio: tuple[int, int] = (1, 1)

    def validate(self) -> list[str]:
        out = []
        if self.input_tokens < 1:
            out.append("input_tokens must be ≥ 1")
        if self.output_tokens < 1:
            out.append("output_tokens must be ≥ 1")
        if self.batch < 1:
            out.append("batch must be ≥ 1")
        if self.bandwidth_policy not in ("equal", "dynamic", "fixed-ratio"):
            out.append("bandwidth_policy must be equal, dynamic or fixed-ratio")
        if not 0.0 <= self.prune_ratio < 1.0:
            out.append("prune_ratio must lie in [0, 1)")
        if any(not 0.0 <= r < 1.0 for r in self.prune_ratios):
            out.append("prune_ratios must lie in [0, 1)")
        if len(self.fixed_ratio) != 2 or min(self.fixed_ratio) < 1:
            out.append("fixed_ratio must be two positive integers")
        return out


@dataclass(frozen=True)
class Kernel:
    """One operator instance.

    Dimensions follow ``out[m, n] = act[m, k] @ weight[k, n]``. A GEMV is the
    ``m``-row case where ``m`` is the decode batch (1 for a single stream);
    ``d_in = k`` and ``d_out = n``. ``count`` independent instances (e.g.
    attention heads) share one kernel record. ``kv_bytes`` is KV-cache traffic.
    ``density`` < 1 marks a pruned GEMV: only that fraction of ``k`` is live.
    """

    name: str
    kind: KernelKind
    phase: Phase
    layer: int
    m: int = 1
    k: int = 1
    n: int = 1
    count: int = 1
    weight_bytes: float = 0
    act_bytes: float = 0
    out_bytes: float = 0
    kv_bytes: float = 0
    flops: float = 0
    prunable: str = ""  # "" | "vx" | "vd"
    density: float = 1.0

    @property
    def d_in(self) -> int:
        return self.k

    @property
    def d_out(self) -> int:
        return self.n

    @property
    def dram_bytes(self) -> float:
        return self.weight_bytes + self.act_bytes + self.out_bytes + self.kv_bytes

    @property
    def macs(self) -> float:
        return self.flops / 2.0

    @property
    def live_k(self) -> int:
        return max(1, int(round(self.k * self.density)))


@dataclass
class OperatorGraph:
    kernels: list[Kernel] = field(default_factory=list)

    def phase(self, ph: Phase) -> list[Kernel]:
        return [k for k in self.kernels if k.phase == ph]

    def totals(self, ph: Phase | None = None) -> dict[str, float]:
        ks = self.kernels if ph is None else self.phase(ph)
        return {
            "flops": float(sum(k.flops for k in ks)),
            "weight_bytes": float(sum(k.weight_bytes for k in ks)),
            "dram_bytes": float(sum(k.dram_bytes for k in ks)),
            "kernels": float(len(ks)),
        }

    def __iter__(self) -> Iterator[Kernel]:
        return iter(self.kernels)

    def __len__(self) -> int:
        return len(self.kernels)

    def listing(self) -> str:
        """Line-oriented dump, one kernel per line, tab separated."""
        cols = ["phase", "layer", "name", "kind", "m", "k", "n", "count",
                "weight_bytes", "act_bytes", "out_bytes", "kv_bytes", "flops", "prunable", "density"]
        lines = ["\t".join(cols)]
        for kn in self.kernels:
            row = [kn.phase.value, kn.layer, kn.name, kn.kind.value, kn.m, kn.k, kn.n, kn.count,
                   kn.weight_bytes, kn.act_bytes, kn.out_bytes, kn.kv_bytes, kn.flops,
                   kn.prunable or "-", kn.density]
            lines.append("\t".join(str(x) for x in row))
        return "\n".join(lines) + "\n"


# -- kernel constructors ---------------------------------------------------------

def _gemm(name: str, phase: Phase, layer: int, m: int, k: int, n: int, wb: int, ab: int,
          *, weights: bool = True, count: int = 1, kv_in: int = 0, prunable: str = "") -> Kernel:
    """Dense weight GEMM (or activation x activation when ``weights`` is False)."""
    kind = KernelKind.GEMV if m == 1 or (phase == Phase.DECODE and weights) else KernelKind.GEMM
    return Kernel(
        name=name, kind=kind, phase=phase, layer=layer, m=m, k=k, n=n, count=count,
        weight_bytes=k * n * wb * count if weights else 0,
        act_bytes=m * k * ab * count if weights or not kv_in else 0,
        out_bytes=m * n * ab * count,
        kv_bytes=kv_in,
        flops=2 * m * k * n * count,
        prunable=prunable,
    )


def _elementwise(name: str, phase: Phase, layer: int, length: int, flops_per_elem: int = 1,
                 kind: KernelKind = KernelKind.ELEMENTWISE) -> Kernel:
    return Kernel(name=name, kind=kind, phase=phase, layer=layer, m=1, k=1, n=length,
                  flops=flops_per_elem * length)


def encoder_kernels(model: ModelConfig) -> list[Kernel]:
    T, d, f, h = model.encoder_tokens, model.encoder_d_model, model.encoder_d_ffn, model.encoder_heads
    hd = d // h
    wb, ab = model.weight_bytes_per_elem, model.act_bytes_per_elem
    ph = Phase.ENCODE
    ks: list[Kernel] = [_gemm("patch_embed", ph, 0, T, d, d, wb, ab)]
    for L in range(1, model.encoder_layers + 1):
        ks += [
            _gemm("qkv", ph, L, T, d, 3 * d, wb, ab),
            # fused attention: scores and softmax stay on chip
            Kernel("attn_scores", KernelKind.GEMM, ph, L, m=T, k=hd, n=T, count=h,
                   flops=2 * T * hd * T * h),
            _elementwise("softmax", ph, L, h * T * T, 5, KernelKind.SOFTMAX),
            Kernel("attn_context", KernelKind.GEMM, ph, L, m=T, k=T, n=hd, count=h,
                   out_bytes=T * d * ab, flops=2 * T * T * hd * h),
            _gemm("o_proj", ph, L, T, d, d, wb, ab),
            _gemm("ffn_up", ph, L, T, d, f, wb, ab),
            _elementwise("ffn_act", ph, L, T * f, 4),
            _gemm("ffn_down", ph, L, T, f, d, wb, ab),
        ]
    ks.append(_gemm("projector", ph, model.encoder_layers + 1, T, d, model.d_model, wb, ab))
    return ks


def llm_layer_kernels(model: ModelConfig, phase: Phase, layer: int, tokens: int, ctx: int,
                      batch: int = 1) -> list[Kernel]:
    """One decoder layer. ``tokens`` new rows per stream, ``ctx`` cached + new positions."""
    d, f = model.d_model, model.d_ffn
    h, hd, kvd = model.heads, model.head_dim, model.kv_dim
    wb, ab = model.weight_bytes_per_elem, model.act_bytes_per_elem
    m = tokens * batch
    # only decode GEMVs carry activation-selected channels
    vx, vd = ("vx", "vd") if phase == Phase.DECODE else ("", "")
    ks = [
        _elementwise("attn_norm", phase, layer, m * d, 4),
        _gemm("qkv", phase, layer, m, d, d + 2 * kvd, wb, ab),
    ]
    if phase == Phase.DECODE:
        kv_read = batch * ctx * kvd * ab
        ks += [
            Kernel("attn_scores", KernelKind.GEMV, phase, layer, m=1, k=hd, n=ctx, count=batch * h,
                   kv_bytes=kv_read, flops=2 * hd * ctx * batch * h),
            _elementwise("softmax", phase, layer, batch * h * ctx, 5, KernelKind.SOFTMAX),
            Kernel("attn_context", KernelKind.GEMV, phase, layer, m=1, k=ctx, n=hd, count=batch * h,
                   kv_bytes=kv_read, flops=2 * ctx * hd * batch * h),
        ]
    else:
        ks += [
            Kernel("attn_scores", KernelKind.GEMM, phase, layer, m=tokens, k=hd, n=ctx,
                   count=batch * h, flops=2 * tokens * hd * ctx * batch * h),
            _elementwise("softmax", phase, layer, batch * h * tokens * ctx, 5, KernelKind.SOFTMAX),
            Kernel("attn_context", KernelKind.GEMM, phase, layer, m=tokens, k=ctx, n=hd,
                   count=batch * h, flops=2 * tokens * ctx * hd * batch * h),
        ]
    ks += [
        _gemm("o_proj", phase, layer, m, d, d, wb, ab),
        _elementwise("ffn_norm", phase, layer, m * d, 4),
        _gemm("ffn_up", phase, layer, m, d, f, wb, ab, prunable=vx),
        _gemm("ffn_gate", phase, layer, m, d, f, wb, ab, prunable=vx),
        _elementwise("ffn_act_mul", phase, layer, m * f, 5),
        _gemm("ffn_down", phase, layer, m, f, d, wb, ab, prunable=vd),
    ]
    return ks


def lm_head_kernel(model: ModelConfig, phase: Phase, batch: int = 1) -> Kernel:
    return _gemm("lm_head", phase, model.llm_layers + 1, batch, model.d_model, model.vocab,
                 model.weight_bytes_per_elem, model.act_bytes_per_elem)


def prefill_kernels(model: ModelConfig, input_tokens: int) -> list[Kernel]:
    ks: list[Kernel] = []
    for L in range(1, model.llm_layers + 1):
        ks += llm_layer_kernels(model, Phase.PREFILL, L, input_tokens, input_tokens)
    ks.append(lm_head_kernel(model, Phase.PREFILL))
    return ks


def decode_step_kernels(model: ModelConfig, ctx: int, batch: int = 1) -> list[Kernel]:
    """One token step of all streams in the batch against a ``ctx``-long cache."""
    ks: list[Kernel] = []
    for L in range(1, model.llm_layers + 1):
        ks += llm_layer_kernels(model, Phase.DECODE, L, 1, ctx, batch)
    ks.append(lm_head_kernel(model, Phase.DECODE, batch))
    return ks


def check_overflow(model: ModelConfig, scen: Scenario) -> None:
    per_step = model.llm_weight_bytes() + 2 * model.llm_layers * model.kv_dim * (
        scen.input_tokens + scen.output_tokens) * model.act_bytes_per_elem * scen.batch
    if per_step * scen.output_tokens > MAX_BYTES or model.encoder_params() * 8 > MAX_BYTES:
        raise OverflowError("workload byte accounting overflows")


def build_graph(model: ModelConfig, scen: Scenario) -> OperatorGraph:
    """Expand a model and scenario into the full three-phase operator graph.

    Encode and prefill are built for one request; decode covers all
    ``output_tokens`` steps for the whole ``batch``.
    """
    errs = model.validate() + scen.validate()
    if errs:
        raise ValueError("; ".join(errs))
    check_overflow(model, scen)
    ks = encoder_kernels(model) + prefill_kernels(model, scen.input_tokens)
    for t in range(scen.output_tokens):
        ks += decode_step_kernels(model, scen.input_tokens + t + 1, scen.batch)
    return OperatorGraph(ks)


# -- functional gated-MLP reference --------------------------------------------

def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def _identity(x: np.ndarray) -> np.ndarray:
    return x


ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "relu": _relu, "silu": _silu, "gelu": _gelu, "identity": _identity,
}


def ffn_reference(v_x, w_up, w_gate, w_down, act: Union[str, Callable] = "silu") -> np.ndarray:
    """Gated MLP: ``w_down @ ((w_up @ v) * act(w_gate @ v))`` in float64.

    ``w_up`` and ``w_gate`` are ``d_ffn x d_model``, ``w_down`` is
    ``d_model x d_ffn``.
    """
    v = np.asarray(v_x, dtype=np.float64)
    up = np.asarray(w_up, dtype=np.float64)
    gate = np.asarray(w_gate, dtype=np.float64)
    down = np.asarray(w_down, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("v_x must be a vector")
    d = v.shape[0]
    if up.ndim != 2 or up.shape[1] != d or gate.shape != up.shape:
        raise ValueError(f"w_up/w_gate must be (d_ffn, {d}); got {up.shape}, {gate.shape}")
    if down.ndim != 2 or down.shape[1] != up.shape[0]:
        raise ValueError(f"w_down must be (d_out, {up.shape[0]}); got {down.shape}")
    fn = ACTIVATIONS[act] if isinstance(act, str) else act
    return down @ ((up @ v) * fn(gate @ v))


# -- presets ---------------------------------------------------------------------

_MODEL_FIELDS = {f.name for f in dataclasses.fields(ModelConfig)}
_SCEN_FIELDS = {f.name for f in dataclasses.fields(Scenario)}


def model_from_dict(d: dict[str, Any]) -> ModelConfig:
    m = d.get("model", d)
    unknown = set(m) - _MODEL_FIELDS
    if unknown:
        raise ValueError(f"unknown model fields: {sorted(unknown)}")
    return ModelConfig(**m)


def model_to_dict(model: ModelConfig) -> dict[str, Any]:
    return {"model": dataclasses.asdict(model)}


def load_model(path: Union[str, Path]) -> ModelConfig:
    return model_from_dict(yaml.safe_load(Path(path).read_text()))


def scenario_from_dict(d: dict[str, Any]) -> Scenario:
    unknown = set(d) - _SCEN_FIELDS
    if unknown:
        raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
    d = dict(d)
    if "prune_ratios" in d:
        d["prune_ratios"] = tuple(float(x) for x in d["prune_ratios"])
    if "fixed_ratio" in d:
        d["fixed_ratio"] = tuple(int(x) for x in d["fixed_ratio"])
    return Scenario(**d)


def preset_path(name: str) -> Path:
    return Path(__file__).parent / "data" / "models" / f"{name}.yaml"


def load_preset(name: str) -> ModelConfig:
    return load_model(preset_path(name))


def iter_presets() -> Iterable[str]:
    return sorted(p.stem for p in (Path(__file__).parent / "data" / "models").glob("*.yaml"))
