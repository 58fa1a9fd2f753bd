import csv
import json

import pytest
import yaml

from hetcore import traceio
from hetcore.cli import COLUMNS, ConfigError, expand_pack, main


def write(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


@pytest.fixture
def small_pack(tmp_path):
    return write(tmp_path / "pack.yaml", {"scenarios": [
        {"id": "cmp", "kind": "compare", "input_tokens": 16, "output_tokens": 4},
        {"id": "eq", "input_tokens": 16, "sweep": {"output_tokens": [4, 8]}},
    ]})


def test_run_writes_tables_and_summary(tmp_path, small_pack):
    out = tmp_path / "out"
    assert main(["run", "--model", "karmavlm", "--scenario", small_pack, "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["cmp.csv", "eq-output_tokens4.csv",
                                                     "eq-output_tokens8.csv", "summary.json"]
    with open(out / "cmp.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == COLUMNS and len(rows) == 16
    assert {r["design"] for r in rows} == {"simd", "homo-cc", "homo-mc", "hetero"}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["manifest"]["version"] and len(summary["results"]) == 3
    assert not list(out.glob("*.tmp"))


def test_manifest_hash_is_stable(tmp_path, small_pack):
    hashes = []
    for i in range(2):
        out = tmp_path / f"o{i}"
        main(["run", "--model", "karmavlm", "--scenario", small_pack, "--out", str(out)])
        hashes.append(json.loads((out / "summary.json").read_text())["results"][0]["manifest_hash"])
    assert hashes[0] == hashes[1]


def test_sweep_alias(tmp_path, small_pack):
    assert main(["sweep", "--model", "karmavlm", "--scenario", small_pack,
                 "--out", str(tmp_path / "s")]) == 0


def test_empty_pack_is_a_noop(tmp_path, caplog):
    out = tmp_path / "o"
    assert main(["run", "--scenario", "empty", "--out", str(out)]) == 0
    assert not out.exists()
    assert main(["run", "--out", str(out)]) == 0


def test_validate_shipped_packs():
    assert main(["validate", "--scenario", "design_compare", "--scenario", "bandwidth_sweep",
                 "--scenario", "pruning"]) == 0


@pytest.mark.parametrize("data", [
    {"arch": {"groups": 2}},
    {"arch": {"groups": 0, "cc_clusters_per_group": 2, "mc_clusters_per_group": 2}},
])
def test_bad_arch_exits_2(tmp_path, data):
    assert main(["validate", "--arch", write(tmp_path / "a.yaml", data)]) == 2


def test_missing_config_exits_2():
    assert main(["validate", "--model", "no_such_model"]) == 2


def test_bad_scenario_exits_2(tmp_path):
    pack = write(tmp_path / "p.yaml", {"scenarios": [{"id": "x", "output_tokens": 0}]})
    assert main(["validate", "--scenario", pack]) == 2
    pack = write(tmp_path / "q.yaml", {"scenarios": [{"id": "x", "kind": "other"}]})
    assert main(["validate", "--scenario", pack]) == 2


def test_overflow_exits_3(tmp_path):
    pack = write(tmp_path / "p.yaml", {"scenarios": [{"id": "big", "kind": "compare",
                                                       "output_tokens": 10**12}]})
    assert main(["run", "--scenario", pack, "--out", str(tmp_path / "o")]) == 3


def test_config_dir_env(tmp_path, monkeypatch):
    (tmp_path / "models").mkdir()
    src = yaml.safe_load(open(__import__("hetcore.workload", fromlist=["x"]).preset_path("karmavlm")))
    src["model"]["name"] = "mine"
    write(tmp_path / "models" / "mine.yaml", src)
    monkeypatch.setenv("HETCORE_CONFIG_DIR", str(tmp_path))
    assert main(["validate", "--model", "mine"]) == 0


def test_expand_pack_cartesian():
    specs = expand_pack({"scenarios": [{"id": "s", "sweep": {"output_tokens": [1, 2],
                                                              "batch": [1, 4]}}]})
    assert [s.scenario.id for s in specs] == ["s-output_tokens1-batch1", "s-output_tokens1-batch4",
                                              "s-output_tokens2-batch1", "s-output_tokens2-batch4"]
    assert expand_pack(None) == [] and expand_pack({"scenarios": None}) == []
    with pytest.raises(ConfigError):
        expand_pack({"scenarios": {"id": 1}})


def test_gen_trace(tmp_path, capsys):
    out = tmp_path / "t.hcat"
    assert main(["gen-trace", "--layers", "3", "--d-model", "32", "--d-ffn", "64", "--tokens", "2",
                 "--out", str(out)]) == 0
    assert traceio.load(out).vx.shape == (2, 3, 32)
    assert capsys.readouterr().out.count("kurtosis") == 4


def test_gen_trace_bad_schedule(tmp_path):
    assert main(["gen-trace", "--layers", "3", "--schedule", "3,4", "--out", str(tmp_path / "t")]) == 2
    assert main(["gen-trace", "--layers", "1", "--schedule", "99", "--out", str(tmp_path / "t")]) == 2


def test_calibrate_quick(tmp_path):
    rc = main(["calibrate", "--quick", "--out", str(tmp_path)])
    cal = yaml.safe_load((tmp_path / "calibration.yaml").read_text())
    assert rc == (0 if cal["slack"] >= 0 else 1)
    assert (tmp_path / "arch.yaml").exists()
