"""Activation trace files: a line-oriented text format and a compact binary one."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .pruning import ActivationTrace, default_kurtosis_schedule, synth_trace

TEXT_MAGIC = "# hetcore activation trace v1"
BIN_MAGIC = b"HCAT"
BIN_VERSION = 1
_HEADER = struct.Struct("<4sHHIIIIII")  # 32 bytes
FLAG_HAS_VD = 0x1
TRACE_DIR = Path(__file__).parent / "data" / "traces"
SHIPPED_TRACE = TRACE_DIR / "default.hcat"

PathLike = Union[str, Path]


def write_text(trace: ActivationTrace, path: PathLike) -> None:
    T, L, d = trace.vx.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TEXT_MAGIC + "\n")
        fh.write(f"# model={trace.model} layers={L} d_model={d} d_ffn={trace.d_ffn} tokens={T}\n")
        for t in range(T):
            for layer in range(L):
                fh.write(f"{t} {layer} vx " + " ".join(f"{x:.9g}" for x in trace.vx[t, layer]) + "\n")
                if trace.vd is not None:
                    fh.write(f"{t} {layer} vd " + " ".join(f"{x:.9g}" for x in trace.vd[t, layer]) + "\n")


def _parse_meta(line: str) -> dict[str, str]:
    if not line.startswith("#"):
        raise ValueError("missing trace metadata line")
    out = {}
    for tok in line[1:].split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise ValueError(f"bad metadata token {tok!r}")
        out[key] = val
    return out


def read_text(path: PathLike) -> ActivationTrace:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != TEXT_MAGIC:
            raise ValueError(f"{path}: not a hetcore text trace")
        meta = _parse_meta(fh.readline())
        try:
            L, d, dffn, T = (int(meta[k]) for k in ("layers", "d_model", "d_ffn", "tokens"))
        except KeyError as exc:
            raise ValueError(f"{path}: metadata lacks {exc}") from None
        vx = np.full((T, L, d), np.nan, dtype=np.float32)
        vd = np.full((T, L, dffn), np.nan, dtype=np.float32) if dffn else None
        for lineno, line in enumerate(fh, start=3):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            t, layer, which = int(parts[0]), int(parts[1]), parts[2]
            vals = np.array(parts[3:], dtype=np.float32)
            if which == "vx":
                target = vx
            elif which == "vd" and vd is not None:
                target = vd
            else:
                raise ValueError(f"{path}:{lineno}: unexpected vector tag {which!r}")
            if vals.size != target.shape[2]:
                raise ValueError(f"{path}:{lineno}: expected {target.shape[2]} values, got {vals.size}")
            target[t, layer] = vals
    if np.isnan(vx).any() or (vd is not None and np.isnan(vd).any()):
        raise ValueError(f"{path}: trace is incomplete")
    return ActivationTrace(vx, vd, meta.get("model", "synthetic"))


def write_binary(trace: ActivationTrace, path: PathLike) -> None:
    T, L, d = trace.vx.shape
    flags = FLAG_HAS_VD if trace.vd is not None else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BIN_MAGIC, BIN_VERSION, flags, T, L, d, trace.d_ffn, 0, 0))
        if trace.vd is None:
            fh.write(trace.vx.astype("<f4").tobytes())
        else:
            # token -> layer -> (vx, vd) interleaving
            body = np.concatenate([trace.vx, trace.vd], axis=2).astype("<f4")
            fh.write(body.tobytes())


def read_binary(path: PathLike) -> ActivationTrace:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, flags, T, L, d, dffn, _, _ = _HEADER.unpack_from(raw)
    if magic != BIN_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != BIN_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    has_vd = bool(flags & FLAG_HAS_VD)
    width = d + (dffn if has_vd else 0)
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if body.size != T * L * width:
        raise ValueError(f"{path}: body has {body.size} floats, expected {T * L * width}")
    body = body.reshape(T, L, width)
    vd = body[:, :, d:].copy() if has_vd else None
    return ActivationTrace(body[:, :, :d].copy(), vd)


def save(trace: ActivationTrace, path: PathLike) -> None:
    """Binary for ``.hcat``/``.bin`` suffixes, text otherwise."""
    if Path(path).suffix in (".hcat", ".bin"):
        write_binary(trace, path)
    else:
        write_text(trace, path)


def load(path: PathLike) -> ActivationTrace:
    with open(path, "rb") as fh:
        head = fh.read(4)
    return read_binary(path) if head == BIN_MAGIC else read_text(path)


def shipped_trace() -> ActivationTrace:
    """The packaged reference trace (22 layers, rising kurtosis)."""
    return load(SHIPPED_TRACE)


def trace_from_spec(spec: dict, seed: int = 0) -> ActivationTrace:
    """Trace from a scenario ``trace:`` block: either ``path`` or synthetic generator settings."""
    if "path" in spec:
        path = Path(spec["path"])
        if not path.is_absolute() and not path.exists():
            path = TRACE_DIR / path
        return load(path)
    layers = int(spec.get("layers", 22))
    frac = float(spec.get("outlier_fraction", 0.12))
    sched = spec.get("schedule") or default_kurtosis_schedule(layers, frac)
    return synth_trace(layers, int(spec.get("d_model", 1024)), int(spec.get("d_ffn", 2816)),
                       int(spec.get("tokens", 8)), [float(x) for x in sched],
                       int(spec.get("seed", seed)), outlier_fraction=frac,
                       model=str(spec.get("model", "synthetic")))
