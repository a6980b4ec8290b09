import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from kawaflow.cli import execute, main
from kawaflow.errors import CapacityError, ParameterError
from kawaflow.manifest import (
    atomic_write, dumps, instance_hash, output_digest, parse_manifest, run_manifest, sha256_file, task_seed,
)
from kawaflow.studies import RRGStudyConfig, study_rrg

ROOT = Path(__file__).resolve().parents[1]
MANIFESTS = ROOT / "manifests"


def copy_manifests(tmp_path):
    dst = tmp_path / "manifests"
    shutil.copytree(MANIFESTS, dst, ignore=shutil.ignore_patterns("out"))
    return dst


def test_check_sc_verb_reports_exact_M():
    status, rec = execute(["ising", "check-sc", "--graph", "complete:4", "--beta", "0.3"])
    assert status == 0 and rec["result"]["M_beta"] == 1.0
    status, rec = execute(["ising", "check-sc", "--graph", "cycle:4", "--beta", "0.2"])
    assert abs(rec["result"]["M_beta"] - 5.0) <= 1e-12
    for key in ("instance_hash", "seed", "version"):
        assert key in rec


def test_exit_codes(capsys):
    assert main(["ising", "check-sc", "--graph", "complete:4", "--beta", "0.3", "--quiet"]) == 0
    assert main(["ising", "weights", "--graph", "cycle:5", "--m", "0"]) == 2
    assert main(["no-such-group"]) == 2
    assert main(["study-rrg", "--d", "3", "--beta", "0.1"]) == 2
    assert main(["ising", "weights", "--graph", "complete:40", "--m", "0"]) == 3
    assert main(["fi", "mlsi", "--graph", "cycle:4", "--kernel", "down_up", "--n-random", "1",
                 "--require-at-least", "10", "--quiet"]) == 4


def test_parameter_error_message():
    with pytest.raises(ParameterError, match="0.08839"):
        RRGStudyConfig(d=3, beta=0.1).validate()
    RRGStudyConfig(d=4, beta=0.07).validate()


def test_capacity_error_type():
    with pytest.raises(CapacityError):
        execute(["ising", "weights", "--graph", "complete:40", "--m", "0"])


def test_seeds_are_per_task():
    assert task_seed(1, "a") == task_seed(1, "a")
    assert task_seed(1, "a") != task_seed(1, "b")
    assert task_seed(1, "a") != task_seed(2, "a")
    assert 0 <= task_seed(2**63, "x") < 2**64


def test_atomic_write_and_digests(tmp_path):
    d = atomic_write(tmp_path / "a" / "x.txt", "hello\n")
    assert d == sha256_file(tmp_path / "a" / "x.txt")
    assert [p.name for p in (tmp_path / "a").iterdir()] == ["x.txt"]
    assert instance_hash({"b": 1, "a": np.float64(2.0)}) == instance_hash({"a": 2.0, "b": 1})
    assert json.loads(dumps({"x": np.inf}))["x"] == "inf"


def test_manifest_validation(tmp_path):
    p = tmp_path / "m.ini"
    p.write_text("[manifest]\nid = x\nseed = 1\n\n[a]\nverb = ising check-sc\nafter = b\n")
    with pytest.raises(ParameterError):
        parse_manifest(p)
    p.write_text("[manifest]\nid = x\nseed = 1\nversion = 9.9\n\n[a]\nverb = ising check-sc\n")
    with pytest.raises(ParameterError):
        parse_manifest(p)
    p.write_text("[manifest]\nid = x\n\n[a]\nverb = ising check-sc\nafter = b\n\n[b]\nverb = ising check-sc\nafter = a\n")
    with pytest.raises(ParameterError):
        run_manifest(p, execute)


def test_manifest_input_pins(tmp_path):
    m = copy_manifests(tmp_path)
    model = m / "models" / "cycle8.txt"
    p = tmp_path / "pin.ini"
    p.write_text(f"[manifest]\nid = pin\nseed = 4\n\n[a]\nverb = ising weights\nmodel = {model}\n"
                 f"inputs = {model}@{'0' * 64}\n")
    with pytest.raises(ParameterError, match="digest mismatch"):
        run_manifest(p, execute)
    p.write_text(f"[manifest]\nid = pin\nseed = 4\n\n[a]\nverb = ising weights\nmodel = {model}\n"
                 f"inputs = {model}@{sha256_file(model)}\n")
    status, records = run_manifest(p, execute)
    assert status == 0 and records["a"]["inputs"][str(model)] == sha256_file(model)


def test_sc_manifest_and_rerun(tmp_path):
    m = copy_manifests(tmp_path)
    status, records = run_manifest(m / "sc-k4.ini", execute)
    assert status == 0 and records["k4"]["result"]["M_beta"] == 1.0
    out = m / "out" / "sc-k4"
    first = output_digest(out)
    shutil.rmtree(out)
    run_manifest(m / "sc-k4.ini", execute)
    assert output_digest(out) == first


def test_gap_sweep_manifest_writes_csv(tmp_path):
    m = copy_manifests(tmp_path)
    assert run_manifest(m / "gap-sweep.ini", execute)[0] == 0
    lines = (m / "out" / "gap-sweep" / "cycle10" / "gaps.csv").read_text().splitlines()
    assert lines[0].split(",")[0] == "beta" and len(lines) == 8


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "kawaflow", "ising", "check-sc", "--graph", "cycle:4", "--beta", "0.2"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["M_beta"] == pytest.approx(5.0)


def test_study_rrg_small():
    res = study_rrg(RRGStudyConfig(d=3, beta=0.08, n_exact=(12,), seeds=(0,)))
    assert res["passed"] and res["exact"][0]["gap"] > 0
