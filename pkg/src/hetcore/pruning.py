"""
Layer-wise dynamic Top-k activation-aware weight pruning.

Each MC core owns an even slice of the activation channels. Per layer the
core keeps its ``k`` largest-magnitude channels (and the matching weight
rows), then counts ``n``, the channels within a factor ``t`` of the slice
maximum. If ``n < k`` the next layer runs with ``k = n``. The first layer of
every token is left dense and ``k`` returns to the slice width at each new
token.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import brentq

from .workload import ACTIVATIONS, Kernel, OperatorGraph, Phase, ffn_reference


@dataclass(frozen=True)
class PruneParams:
    t: float = 16.0
    skip_first_layer: bool = True
    prune_vd: bool = False
    cores: int = 16

    def __post_init__(self) -> None:
        if not self.t > 1:
            raise ValueError("threshold t must be > 1")
        if self.cores < 1:
            raise ValueError("cores must be >= 1")


@dataclass(frozen=True)
class PruningState:
    """Top-k state of one core: the ``k`` to use at ``layer_index`` (1-based)."""

    k: int
    layer_index: int
    d_local: int
    index_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool), compare=False)
    realized_ratio: float = 0.0

    @classmethod
    def fresh(cls, d_local: int) -> "PruningState":
        return cls(k=d_local, layer_index=1, d_local=d_local,
                   index_mask=np.ones(d_local, dtype=bool))


def topk_indices(v: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest |v|; ties go to the lower index. Sorted ascending."""
    order = np.argsort(-np.abs(v), kind="stable")
    return np.sort(order[:k])


def dynamic_topk_step(v, state: PruningState, params: PruneParams) -> tuple[np.ndarray, PruningState]:
    v = np.asarray(v, dtype=np.float64)
    d = v.shape[0]
    if d == 0:
        raise ValueError("empty activation slice")
    if d != state.d_local:
        raise ValueError(f"slice width {d} does not match state width {state.d_local}")
    k = state.k
    if state.layer_index == 1 and params.skip_first_layer:
        k = d
    mag = np.abs(v)
    vmax = mag.max()
    mask = np.zeros(d, dtype=bool)
    if vmax == 0.0:
        # degenerate slice: nothing worth fetching, keep a one-channel floor
        sel = np.zeros(0, dtype=np.int64)
        next_k = 1
        ratio = 1.0
    else:
        sel = topk_indices(v, k)
        mask[sel] = True
        n = int(np.count_nonzero(mag > vmax / params.t))
        next_k = n if n < k else k
        ratio = 1.0 - k / d
    new = PruningState(k=max(1, next_k), layer_index=state.layer_index + 1, d_local=d,
                       index_mask=mask, realized_ratio=ratio)
    return sel, new


def core_slices(d: int, cores: int) -> list[slice]:
    """Even channel partition; the first ``d % cores`` slices get one extra channel."""
    cores = min(cores, d)
    base, extra = divmod(d, cores)
    out, start = [], 0
    for c in range(cores):
        w = base + (1 if c < extra else 0)
        out.append(slice(start, start + w))
        start += w
    return out


class TokenPruner:
    """Per-core Top-k states for one token generation across all layers."""

    def __init__(self, d: int, params: PruneParams):
        self.params = params
        self.slices = core_slices(d, params.cores)
        self.states = [PruningState.fresh(s.stop - s.start) for s in self.slices]

    def step(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Prune one layer's vector; returns (channel mask, per-core realized ratios)."""
        mask = np.zeros(v.shape[0], dtype=bool)
        ratios = np.empty(len(self.slices))
        for i, sl in enumerate(self.slices):
            sel, self.states[i] = dynamic_topk_step(v[sl], self.states[i], self.params)
            mask[sl.start + sel] = True
            ratios[i] = self.states[i].realized_ratio
        return mask, ratios

    @property
    def ks(self) -> list[int]:
        return [s.k for s in self.states]


def fixed_ratio_mask(v: np.ndarray, ratio: float, cores: int) -> np.ndarray:
    """Per-core Top-k with a fixed keep count ``d_local - round(ratio * d_local)``."""
    mask = np.zeros(v.shape[0], dtype=bool)
    for sl in core_slices(v.shape[0], cores):
        d = sl.stop - sl.start
        keep = max(1, d - int(round(ratio * d)))
        mask[sl.start + topk_indices(v[sl], keep)] = True
    return mask


# -- metrics -----------------------------------------------------------------------

def kurtosis(v) -> float:
    """Pearson (non-excess) kurtosis ``m4 / m2**2`` over the channels of ``v``."""
    x = np.asarray(v, dtype=np.float64)
    if x.size < 2:
        raise ValueError("kurtosis needs at least two values")
    c = x - x.mean()
    m2 = np.mean(c * c)
    if m2 == 0.0:
        raise ValueError("kurtosis undefined for a constant vector")
    return float(np.mean(c**4) / m2**2)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


# -- synthetic traces ----------------------------------------------------------------

@dataclass
class ActivationTrace:
    """``vx[token, layer]`` (d_model) and optionally ``vd[token, layer]`` (d_ffn)."""

    vx: np.ndarray
    vd: Optional[np.ndarray] = None
    model: str = "synthetic"

    def __post_init__(self) -> None:
        self.vx = np.asarray(self.vx, dtype=np.float32)
        if self.vx.ndim != 3:
            raise ValueError("vx must be (tokens, layers, d_model)")
        if self.vd is not None:
            self.vd = np.asarray(self.vd, dtype=np.float32)
            if self.vd.ndim != 3 or self.vd.shape[:2] != self.vx.shape[:2]:
                raise ValueError("vd must be (tokens, layers, d_ffn) matching vx")
        if not np.all(np.isfinite(self.vx)) or (self.vd is not None and not np.all(np.isfinite(self.vd))):
            raise ValueError("trace contains non-finite values")

    @property
    def tokens(self) -> int:
        return self.vx.shape[0]

    @property
    def layers(self) -> int:
        return self.vx.shape[1]

    @property
    def d_model(self) -> int:
        return self.vx.shape[2]

    @property
    def d_ffn(self) -> int:
        return 0 if self.vd is None else self.vd.shape[2]

    def layer_kurtosis(self) -> np.ndarray:
        """Mean over tokens of the per-vector V_x kurtosis, one value per layer."""
        return np.array([np.mean([kurtosis(self.vx[t, L]) for t in range(self.tokens)])
                         for L in range(self.layers)])


def mixture_kurtosis(amplitude: float, outlier_fraction: float) -> float:
    """Population kurtosis of unit-Gaussian channels where a fraction also carries ``±amplitude``."""
    f, a2 = outlier_fraction, amplitude * amplitude
    m2 = 1.0 + f * a2
    m4 = 3.0 + 6.0 * f * a2 + f * a2 * a2
    return m4 / (m2 * m2)


def kurtosis_cap(outlier_fraction: float) -> float:
    """Limit of :func:`mixture_kurtosis` as the amplitude grows without bound."""
    return 1.0 / outlier_fraction


def amplitude_for_kurtosis(target: float, outlier_fraction: float) -> float:
    """Outlier amplitude whose mixture kurtosis equals ``target``."""
    cap = kurtosis_cap(outlier_fraction)
    if not 3.0 <= target < cap:
        raise ValueError(f"target kurtosis must lie in [3, {cap:.4g}) for outlier fraction {outlier_fraction}")
    if target == 3.0:
        return 0.0
    hi = 1.0
    while mixture_kurtosis(hi, outlier_fraction) < target:
        hi *= 2.0
    return float(brentq(lambda a: mixture_kurtosis(a, outlier_fraction) - target, 0.0, hi, xtol=1e-12))


def synth_trace(layers: int, d_model: int, d_ffn: int, tokens: int,
                kurtosis_schedule: Sequence[float], seed: int,
                outlier_fraction: float = 0.12, model: str = "synthetic") -> ActivationTrace:
    """Seeded activation trace whose per-layer kurtosis follows ``kurtosis_schedule``.

    Every channel carries unit Gaussian noise. A fixed set of outlier
    channels, shared by all tokens and layers, adds ``±A`` with a fixed sign
    pattern; ``A`` is solved per layer so the population kurtosis hits the
    scheduled value.
    """
    if len(kurtosis_schedule) != layers:
        raise ValueError(f"schedule has {len(kurtosis_schedule)} entries for {layers} layers")
    if min(layers, d_model, d_ffn, tokens) < 1:
        raise ValueError("layers, dims and tokens must be positive")
    if not 0.0 < outlier_fraction < 1.0 / 3.0:
        raise ValueError("outlier_fraction must lie in (0, 1/3)")
    rng = np.random.default_rng(seed)
    amps = [amplitude_for_kurtosis(k, outlier_fraction) for k in kurtosis_schedule]

    def profile(d: int) -> np.ndarray:
        n_out = max(1, int(round(outlier_fraction * d)))
        prof = np.zeros(d)
        prof[rng.choice(d, size=n_out, replace=False)] = rng.choice([-1.0, 1.0], size=n_out)
        return prof

    px, pd = profile(d_model), profile(d_ffn)
    vx = np.empty((tokens, layers, d_model), dtype=np.float32)
    vd = np.empty((tokens, layers, d_ffn), dtype=np.float32)
    for t in range(tokens):
        for L in range(layers):
            vx[t, L] = rng.standard_normal(d_model) + amps[L] * px
            vd[t, L] = rng.standard_normal(d_ffn) + amps[L] * pd
    return ActivationTrace(vx, vd, model)


def default_kurtosis_schedule(layers: int, outlier_fraction: float = 0.12, shallow: int = 5,
                              shallow_amp: float = 3.0, deep_amps: tuple[float, float] = (20.0, 64.0)
                              ) -> list[float]:
    """Increasing schedule: near-Gaussian shallow layers, then outlier-dominated deep layers.

    Built in amplitude space (linear ramp to ``shallow_amp`` over the first
    ``shallow`` layers, geometric ramp over ``deep_amps`` afterwards) and
    mapped to kurtosis, which keeps the deep targets spaced below the cap.
    """
    shallow = min(shallow, layers)
    amps = list(np.linspace(0.0, shallow_amp, shallow)) if shallow > 1 else [0.0] * shallow
    deep = layers - shallow
    if deep == 1:
        amps.append(deep_amps[0])
    elif deep > 1:
        amps += list(np.geomspace(deep_amps[0], deep_amps[1], deep))
    return [mixture_kurtosis(a, outlier_fraction) for a in amps]


# -- fidelity evaluation ---------------------------------------------------------------

@dataclass
class FfnWeights:
    w_up: np.ndarray
    w_gate: np.ndarray
    w_down: np.ndarray
    act: str = "silu"

    @classmethod
    def random(cls, d_model: int, d_ffn: int, seed: int = 0, act: str = "silu") -> "FfnWeights":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((d_ffn, d_model)) / math.sqrt(d_model),
                   rng.standard_normal((d_ffn, d_model)) / math.sqrt(d_model),
                   rng.standard_normal((d_model, d_ffn)) / math.sqrt(d_ffn), act)

    @property
    def d_model(self) -> int:
        return self.w_up.shape[1]

    @property
    def d_ffn(self) -> int:
        return self.w_up.shape[0]


@dataclass
class FidelityReport:
    cosine: np.ndarray               # (tokens, layers), dynamic scheme
    ratio: np.ndarray                # (tokens, layers, cores) realized V_x prune ratio
    fixed_cosine: dict[float, np.ndarray]
    vd_ratio: Optional[np.ndarray] = None
    ks: Optional[np.ndarray] = None  # (tokens, layers, cores) k used at each layer

    @property
    def layer_ratio(self) -> np.ndarray:
        """Mean realized V_x prune ratio per layer (over tokens and cores)."""
        return self.ratio.mean(axis=(0, 2))

    @property
    def layer_vd_ratio(self) -> Optional[np.ndarray]:
        return None if self.vd_ratio is None else self.vd_ratio.mean(axis=(0, 2))

    def core_ratio(self, core: int = 0) -> np.ndarray:
        return self.ratio[:, :, core].mean(axis=0)

    @property
    def layer_cosine(self) -> np.ndarray:
        return self.cosine.mean(axis=0)

    def layer_fixed_cosine(self, r: float) -> np.ndarray:
        return self.fixed_cosine[r].mean(axis=0)

    @property
    def mean_cosine(self) -> float:
        return float(self.cosine.mean())


def _ffn_masked(v: np.ndarray, w: FfnWeights, mask_x: np.ndarray,
                mask_d: Optional[np.ndarray] = None) -> np.ndarray:
    act = ACTIVATIONS[w.act]
    vm = np.where(mask_x, v, 0.0)
    h = (w.w_up @ vm) * act(w.w_gate @ vm)
    if mask_d is not None:
        h = np.where(mask_d, h, 0.0)
    return w.w_down @ h


def pruned_ffn_eval(trace: ActivationTrace, weights: FfnWeights, params: PruneParams,
                    fixed_ratios: Sequence[float] = (0.1, 0.7),
                    force_dense: bool = False) -> FidelityReport:
    """Score dynamic Top-k pruning (and fixed-ratio baselines) against the dense FFN.

    Each layer's V_x from the trace goes through the same small FFN dense and
    pruned; the cosine of the two outputs measures fidelity.
    ``force_dense`` pins ``k`` to the slice width (no pruning).
    """
    if trace.d_model != weights.d_model:
        raise ValueError(f"trace d_model {trace.d_model} != FFN d_model {weights.d_model}")
    T, L = trace.tokens, trace.layers
    ncores = len(core_slices(trace.d_model, params.cores))
    cos = np.empty((T, L))
    ratio = np.empty((T, L, ncores))
    ks = np.empty((T, L, ncores), dtype=np.int64)
    fixed = {r: np.empty((T, L)) for r in fixed_ratios}
    vd_ratio = np.empty((T, L, len(core_slices(weights.d_ffn, params.cores)))) if params.prune_vd else None
    act = ACTIVATIONS[weights.act]
    for t in range(T):
        px = TokenPruner(trace.d_model, params)
        pd = TokenPruner(weights.d_ffn, params) if params.prune_vd else None
        for li in range(L):
            v = trace.vx[t, li].astype(np.float64)
            dense = ffn_reference(v, weights.w_up, weights.w_gate, weights.w_down, weights.act)
            if force_dense:
                mask = np.ones(v.shape[0], dtype=bool)
                r = np.zeros(ncores)
                ks[t, li] = [s.stop - s.start for s in px.slices]
            else:
                ks[t, li] = [s.d_local if (s.layer_index == 1 and params.skip_first_layer) else s.k
                             for s in px.states]
                mask, r = px.step(v)
            ratio[t, li] = r
            mask_d = None
            if pd is not None:
                vm = np.where(mask, v, 0.0)
                h = (weights.w_up @ vm) * act(weights.w_gate @ vm)
                mask_d, rd = pd.step(h)
                vd_ratio[t, li] = rd
            pruned = _ffn_masked(v, weights, mask, mask_d)
            cos[t, li] = cosine_similarity(dense, pruned)
            for fr in fixed_ratios:
                fm = fixed_ratio_mask(v, fr, params.cores)
                fixed[fr][t, li] = cosine_similarity(dense, _ffn_masked(v, weights, fm))
    return FidelityReport(cos, ratio, fixed, vd_ratio, ks)


# -- traffic accounting ------------------------------------------------------------------

def _as_layer_map(ratios: Union[float, Sequence[float], dict[int, float]], layers: int) -> dict[int, float]:
    if isinstance(ratios, (int, float)):
        return {L: float(ratios) for L in range(1, layers + 1)}
    if isinstance(ratios, dict):
        return {int(k): float(v) for k, v in ratios.items()}
    return {i + 1: float(r) for i, r in enumerate(ratios)}


def traffic_reduction(graph: OperatorGraph, ratios, prune_vd: bool = False,
                      vd_ratios=None) -> OperatorGraph:
    """Scale weight bytes and FLOPs of prunable decode GEMVs by the kept fraction.

    ``ratios`` (per layer, 1-based, or a scalar) apply to the V_x-indexed
    up/gate projections; ``vd_ratios`` (default: same) to the down projection
    when ``prune_vd`` is set. Everything else passes through unchanged.
    """
    layers = max((k.layer for k in graph.kernels), default=0)
    rx = _as_layer_map(ratios, layers)
    rd = _as_layer_map(vd_ratios if vd_ratios is not None else ratios, layers)
    for r in list(rx.values()) + list(rd.values()):
        if not 0.0 <= r < 1.0:
            raise ValueError(f"prune ratio {r} outside [0, 1)")
    out = []
    for kn in graph.kernels:
        r = 0.0
        if kn.prunable == "vx":
            r = rx.get(kn.layer, 0.0)
        elif kn.prunable == "vd" and prune_vd:
            r = rd.get(kn.layer, 0.0)
        out.append(prune_kernel(kn, r) if r > 0.0 else kn)
    return OperatorGraph(out)


def prune_kernel(kn: Kernel, ratio: float) -> Kernel:
    keep = 1.0 - ratio
    return dataclasses.replace(kn, weight_bytes=kn.weight_bytes * keep, flops=kn.flops * keep,
                               density=kn.density * keep)


def decode_weight_bytes(graph: OperatorGraph) -> float:
    return float(sum(k.weight_bytes for k in graph.kernels if k.phase == Phase.DECODE))
