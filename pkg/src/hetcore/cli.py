"""Command-line front end: ``hetcore run|sweep|gen-trace|validate|calibrate``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from . import __version__, arch as archmod, traceio
from .arch import ArchConfig
from .calibrate import TARGETS, CalibrationPoint, default_grid, search
from .pipeline import DEFAULT_RATIOS, PhaseStats, compare_homo_hetero, pipeline_simulate
from .pruning import default_kurtosis_schedule, synth_trace
from .workload import ModelConfig, Scenario, load_model, scenario_from_dict

log = logging.getLogger("hetcore")

EXIT_OK, EXIT_INVALID, EXIT_OVERFLOW = 0, 2, 3
CONFIG_ENV = "HETCORE_CONFIG_DIR"
DATA_DIR = Path(__file__).parent / "data"
COLUMNS = ["scenario_id", "design", "phase", "cycles", "dram_bytes", "utilization", "latency_ms",
           "throughput_tokens_per_s", "prune_ratio_mean", "ratio", "manifest_hash"]
# scenario keys consumed here rather than by the Scenario type
_PACK_KEYS = ("kind", "sweep", "ratio_set", "trace")


class ConfigError(Exception):
    """Unreadable or invalid configuration; maps to exit status 2."""


# -- config resolution -------------------------------------------------------------

def _resolve(name: Optional[str], kind: str, default: str) -> Path:
    """Explicit path, else a bare name looked up in the config dir, else the shipped default."""
    candidates = []
    base = os.environ.get(CONFIG_ENV)
    target = name or default
    p = Path(target)
    if p.suffix in (".yaml", ".yml") and p.exists():
        return p
    if base:
        candidates += [Path(base) / target, Path(base) / kind / f"{target}.yaml",
                       Path(base) / f"{target}.yaml"]
    candidates += [DATA_DIR / kind / f"{target}.yaml"]
    for c in candidates:
        if c.is_file():
            return c
    raise ConfigError(f"{kind} config {target!r} not found")


def _read_yaml(path: Path) -> Any:
    try:
        return yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_arch(path: Path) -> ArchConfig:
    try:
        cfg = archmod.from_dict(_read_yaml(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed arch config ({exc})") from None
    report = archmod.validate(cfg)
    if not report.ok:
        raise ConfigError(f"{path}: invalid arch config\n{report}")
    return cfg


def load_model_cfg(path: Path) -> ModelConfig:
    try:
        model = load_model(path)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed model config ({exc})") from None
    errs = model.validate()
    if errs:
        raise ConfigError(f"{path}: invalid model config\n" + "\n".join(f"  - {e}" for e in errs))
    return model


@dataclasses.dataclass
class ScenarioSpec:
    scenario: Scenario
    kind: str = "pipeline"  # pipeline | compare
    ratio_set: tuple = DEFAULT_RATIOS
    trace: Optional[dict] = None


def expand_pack(data: Any, origin: str = "<scenarios>") -> list[ScenarioSpec]:
    """Scenario pack → flat list; a ``sweep`` mapping expands to its Cartesian product."""
    if data is None:
        return []
    entries = data.get("scenarios", []) if isinstance(data, dict) else data
    if entries is None:
        return []
    if not isinstance(entries, list):
        raise ConfigError(f"{origin}: 'scenarios' must be a list")
    out = []
    for raw in entries:
        if not isinstance(raw, dict):
            raise ConfigError(f"{origin}: scenario entries must be mappings")
        raw = dict(raw)
        extra = {k: raw.pop(k) for k in _PACK_KEYS if k in raw}
        sweep = extra.get("sweep") or {}
        keys = list(sweep)
        combos = list(itertools.product(*(sweep[k] for k in keys))) if keys else [()]
        for combo in combos:
            d = dict(raw)
            d.update(zip(keys, combo))
            if keys:
                d["id"] = f"{raw.get('id', 'scenario')}-" + "-".join(f"{k}{v}" for k, v in zip(keys, combo))
            try:
                scen = scenario_from_dict(d)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{origin}: {exc}") from None
            errs = scen.validate()
            if errs:
                raise ConfigError(f"{origin}: scenario {scen.id!r} invalid: " + "; ".join(errs))
            kind = extra.get("kind", "pipeline")
            if kind not in ("pipeline", "compare"):
                raise ConfigError(f"{origin}: unknown scenario kind {kind!r}")
            ratios = tuple(tuple(int(x) for x in r) for r in extra.get("ratio_set", DEFAULT_RATIOS))
            out.append(ScenarioSpec(scen, kind, ratios, extra.get("trace")))
    return out


def load_scenarios(paths: Sequence[str]) -> list[ScenarioSpec]:
    specs: list[ScenarioSpec] = []
    for p in paths:
        path = _resolve(p, "scenarios", p)
        specs += expand_pack(_read_yaml(path), str(path))
    return specs


def manifest_hash(arch: ArchConfig, model: ModelConfig, spec: ScenarioSpec, seed: int) -> str:
    blob = json.dumps({"arch": archmod.to_dict(arch), "model": dataclasses.asdict(model),
                       "scenario": dataclasses.asdict(spec.scenario), "kind": spec.kind,
                       "ratio_set": spec.ratio_set, "trace": spec.trace, "seed": seed,
                       "version": __version__}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- simulation ----------------------------------------------------------------------

def trace_prune_ratios(trace_spec: dict, seed: int) -> tuple[float, ...]:
    """Per-layer dynamic prune ratios realised on a synthetic trace."""
    from .pruning import FfnWeights, PruneParams, pruned_ffn_eval
    tr = traceio.trace_from_spec(trace_spec, seed)
    w = FfnWeights.random(tr.d_model, tr.d_ffn, seed=trace_spec.get("weight_seed", seed + 1))
    rep = pruned_ffn_eval(tr, w, PruneParams(cores=trace_spec.get("cores", 16)), fixed_ratios=())
    return tuple(float(r) for r in rep.layer_ratio)


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def simulate(arch: ArchConfig, model: ModelConfig, spec: ScenarioSpec, seed: int) -> tuple[list[dict], dict]:
    """Rows for the results table and a summary record for one scenario."""
    scen = spec.scenario
    if spec.trace is not None and scen.pruning_enabled and not scen.prune_ratios:
        ratios = trace_prune_ratios(spec.trace, seed)
        if len(ratios) != model.llm_layers:
            raise ConfigError(f"trace has {len(ratios)} layers, model has {model.llm_layers}")
        scen = dataclasses.replace(scen, prune_ratios=ratios)
    if scen.pruning_enabled:
        pr = float(np.mean(scen.prune_ratios)) if scen.prune_ratios else scen.prune_ratio
    else:
        pr = 0.0
    h = manifest_hash(arch, model, spec, seed)
    clock = arch.clock_hz
    rows: list[dict] = []

    def row(design, phase, stats, ratio, tput):
        rows.append({"scenario_id": scen.id, "design": design, "phase": phase,
                     "cycles": _fmt(stats.cycles), "dram_bytes": _fmt(stats.dram_bytes),
                     "utilization": _fmt(stats.utilization),
                     "latency_ms": _fmt(stats.cycles / clock * 1e3),
                     "throughput_tokens_per_s": _fmt(tput), "prune_ratio_mean": _fmt(pr),
                     "ratio": ratio, "manifest_hash": h})

    if spec.kind == "compare":
        c = compare_homo_hetero(model, arch, scen)
        for design, phase, stats, _ in c.rows():
            ratio = "1:1" if design == "hetero" else "-"
            tput = scen.batch * scen.output_tokens * clock / stats.cycles if phase == "total" else 0.0
            row(design, phase, stats, ratio, tput)
        summary = {"gemm_ratio": c.gemm_ratio, "gemv_ratio": c.gemv_ratio,
                   "hetero_over_homo_cc": c.hetero_over("homo-cc"),
                   "hetero_over_homo_mc": c.hetero_over("homo-mc")}
    else:
        plan = pipeline_simulate(model, arch, scen, spec.ratio_set)
        for phase in ("encode", "prefill", "decode"):
            row("hetero", phase, getattr(plan, phase), plan.ratio_label, 0.0)
        total = PhaseStats(plan.latency_cycles,
                           plan.encode.dram_bytes + plan.prefill.dram_bytes + plan.decode.dram_bytes,
                           plan.encode.ideal_cycles + plan.prefill.ideal_cycles + plan.decode.ideal_cycles)
        row("hetero", "total", total, plan.ratio_label, plan.throughput_tokens_per_s)
        summary = {"ratio": plan.ratio_label, "batch": plan.batch,
                   "period_cycles": plan.period_cycles, "latency_ms": plan.latency_ms,
                   "throughput_tokens_per_s": plan.throughput_tokens_per_s}
    summary.update(scenario_id=scen.id, kind=spec.kind, manifest_hash=h, prune_ratio_mean=pr)
    return rows, summary


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def write_table(path: Path, rows: list[dict]) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    _write_atomic(path, buf.getvalue())


def _job(args):
    arch, model, spec, seed, out = args
    rows, summary = simulate(arch, model, spec, seed)
    write_table(out / f"{spec.scenario.id}.csv", rows)
    return summary


# -- subcommands -------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, scenarios: bool = True) -> None:
    p.add_argument("--arch", help="arch config file or name (default: shipped default)")
    p.add_argument("--model", help="model config file or preset name (default: sphinx_tiny)")
    if scenarios:
        p.add_argument("--scenario", action="append", default=[],
                       help="scenario pack file or name; repeatable")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--jobs", type=int, default=1)


def _configs(args) -> tuple[ArchConfig, ModelConfig, Path, Path]:
    ap = _resolve(args.arch, "arch", "default")
    mp = _resolve(args.model, "models", "sphinx_tiny")
    return load_arch(ap), load_model_cfg(mp), ap, mp


def cmd_run(args) -> int:
    arch, model, ap, mp = _configs(args)
    specs = load_scenarios(args.scenario)
    if not specs:
        log.warning("no scenarios given; nothing to do")
        return EXIT_OK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    work = [(arch, model, s, args.seed, out) for s in specs]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            summaries = list(ex.map(_job, work))
    else:
        summaries = [_job(w) for w in work]
    manifest = {"arch": str(ap), "model": str(mp), "scenarios": list(args.scenario),
                "seed": args.seed, "out": str(out), "version": __version__,
                "timestamp": datetime.now(timezone.utc).isoformat(),
                "kurtosis": "Pearson m4/m2^2 (non-excess)"}
    _write_atomic(out / "summary.json",
                  json.dumps({"manifest": manifest, "results": summaries}, indent=2) + "\n")
    for s in summaries:
        print(f"{s['scenario_id']}: " + ", ".join(
            f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
            for k, v in s.items() if k not in ("scenario_id", "manifest_hash")))
    return EXIT_OK


def cmd_validate(args) -> int:
    arch, model, ap, mp = _configs(args)
    specs = load_scenarios(args.scenario)
    print(f"arch {ap}: ok")
    print(f"model {mp}: ok")
    print(f"{len(specs)} scenario(s): ok")
    return EXIT_OK


def _parse_schedule(text: Optional[str], layers: int) -> list[float]:
    if not text:
        return default_kurtosis_schedule(layers)
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"bad kurtosis schedule {text!r}") from None


def cmd_gen_trace(args) -> int:
    sched = _parse_schedule(args.schedule, args.layers)
    if len(sched) != args.layers:
        raise ConfigError(f"schedule has {len(sched)} entries for {args.layers} layers")
    try:
        tr = synth_trace(args.layers, args.d_model, args.d_ffn, args.tokens, sched, args.seed,
                         outlier_fraction=args.outlier_fraction, model=args.name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    traceio.save(tr, out)
    print(f"# wrote {out} (Pearson kurtosis, non-excess)")
    for L, k in enumerate(tr.layer_kurtosis()):
        print(f"layer {L:3d} kurtosis {k:.4f}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    arch, model, ap, mp = _configs(args)
    points = [CalibrationPoint.from_configs(arch, model)] if args.quick else default_grid(arch, model)
    log.info("scoring %d configurations", len(points))
    results = search(arch, model, points, jobs=args.jobs)
    best, score, metrics = results[0]
    a, m = best.apply(arch, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    calib = {"point": dataclasses.asdict(best), "slack": score,
             "metrics": {k: v for k, v in metrics.items()},
             "targets": {k: list(v) for k, v in TARGETS.items()},
             "arch": archmod.to_dict(a)["arch"], "model": dataclasses.asdict(m)}
    _write_atomic(out / "calibration.yaml", yaml.safe_dump(calib, sort_keys=False))
    archmod.save(a, out / "arch.yaml")
    print(f"best slack {score:+.3f} ({'all targets met' if score >= 0 else 'targets missed'})")
    for k, v in metrics.items():
        print(f"  {k}: {v:.4g}" if isinstance(v, float) else f"  {k}: {v}")
    return EXIT_OK if score >= 0 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hetcore", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    for name, fn, helptext in (("run", cmd_run, "run scenario packs"),
                               ("sweep", cmd_run, "run sweep packs (alias of run)"),
                               ("validate", cmd_validate, "validate configs only")):
        sp = sub.add_parser(name, help=helptext)
        _common(sp)
        sp.set_defaults(func=fn)
    sp = sub.add_parser("calibrate", help="fit config values to the performance targets")
    _common(sp, scenarios=False)
    sp.add_argument("--quick", action="store_true", help="score the current config only, no grid")
    sp.set_defaults(func=cmd_calibrate)
    sp = sub.add_parser("gen-trace", help="write a synthetic activation trace")
    sp.add_argument("--layers", type=int, default=22)
    sp.add_argument("--d-model", type=int, default=1024)
    sp.add_argument("--d-ffn", type=int, default=2816)
    sp.add_argument("--tokens", type=int, default=8)
    sp.add_argument("--schedule", help="per-layer kurtosis targets, comma or space separated")
    sp.add_argument("--outlier-fraction", type=float, default=0.12)
    sp.add_argument("--name", default="synthetic")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="trace.txt", help="output file (.hcat/.bin for binary)")
    sp.set_defaults(func=cmd_gen_trace)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OverflowError as exc:
        print(f"error: simulation overflow: {exc}", file=sys.stderr)
        return EXIT_OVERFLOW


if __name__ == "__main__":
    sys.exit(main())
