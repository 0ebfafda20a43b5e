import csv
import json
import subprocess
import sys

import pytest

from vscreen import codec
from vscreen.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main


def write_json(path, data):
    path.write_text(json.dumps(data))
    return path


def test_compress_round_trip(tmp_path, small_library, capsys):
    packed, restored = tmp_path / "lib.smz", tmp_path / "back.smi"
    assert main(["compress", str(small_library), str(packed)]) == EXIT_OK
    assert "ratio" in capsys.readouterr().out
    assert main(["decompress", str(packed), str(restored)]) == EXIT_OK
    assert restored.read_text() == small_library.read_text()


def test_compress_with_trained_dictionary(tmp_path, small_library):
    packed, dpath, restored = tmp_path / "lib.smz", tmp_path / "d.smzd", tmp_path / "back.smi"
    assert main(["compress", str(small_library), str(packed), "--train", str(dpath), "--max-entries", "16"]) == EXIT_OK
    assert len(codec.Dictionary.load(dpath)) <= 16
    assert main(["decompress", str(packed), str(restored), "--dictionary", str(dpath)]) == EXIT_OK
    assert restored.read_text() == small_library.read_text()


def test_compress_rejects_non_ascii(tmp_path):
    bad = tmp_path / "bad.smi"
    bad.write_bytes("CCÖ\tx\n".encode())
    assert main(["compress", str(bad), str(tmp_path / "o")]) == EXIT_CONFIG


def test_dock_single_smiles(tmp_path, capsys):
    assert main(["dock", "--smiles", "CCO", "--restarts", "2", "--max-steps", "20"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    poses = [json.loads(line) for line in lines]
    assert poses and all(p["ligand_id"] == "L1" for p in poses)
    assert main(["dock", "--smiles", "C(C", "--max-steps", "5"]) == EXIT_CONFIG


def test_dock_library_to_file(tmp_path, small_library):
    out = tmp_path / "poses.jsonl"
    args = ["dock", "--library", str(small_library), "--restarts", "1", "--max-steps", "10", "--out", str(out)]
    assert main(args) == EXIT_OK
    first = out.read_bytes()
    assert main(args) == EXIT_OK
    assert out.read_bytes() == first
    assert {json.loads(line)["ligand_id"] for line in first.decode().splitlines()} == {
        line.split("\t")[1] for line in small_library.read_text().splitlines()
    }


def test_sched_sim(tmp_path, capsys):
    tasks = write_json(tmp_path / "t.json", {"tasks": [{"id": f"t{i}", "duration": d} for i, d in enumerate([3, 3, 2, 2, 2])]})
    cluster = write_json(tmp_path / "c.json", {"workers": [{"id": "n", "cpu": 1, "count": 2}]})
    trace = tmp_path / "trace.jsonl"
    assert main(["--trace", str(trace), "sched-sim", "--tasks", str(tasks), "--workers", str(cluster)]) == EXIT_OK
    assert capsys.readouterr().out.startswith("makespan 7.000000 s")
    kinds = [json.loads(line)["kind"] for line in trace.read_text().splitlines()]
    assert kinds.count("finish") == 5


def test_sched_sim_starvation_and_bad_input(tmp_path):
    tasks = write_json(tmp_path / "t.json", [{"id": "big", "request": {"cpu": 8}}])
    cluster = write_json(tmp_path / "c.json", {"workers": [{"id": "n", "cpu": 1}]})
    assert main(["sched-sim", "--tasks", str(tasks), "--cluster", str(cluster)]) == EXIT_STAGE
    cyclic = write_json(tmp_path / "cyc.json", [{"id": "a", "dependencies": ["b"]}, {"id": "b", "dependencies": ["a"]}])
    assert main(["sched-sim", "--tasks", str(cyclic), "--cluster", str(cluster)]) == EXIT_CONFIG
    assert main(["sched-sim", "--tasks", str(tmp_path / "none.json"), "--cluster", str(cluster)]) == EXIT_CONFIG


def test_tune_synthetic(tmp_path, capsys):
    out, table = tmp_path / "h.jsonl", tmp_path / "t.csv"
    assert main(["--seed", "2", "tune", "--evals", "12", "--out", str(out), "--csv", str(table)]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 12
    rows = list(csv.DictReader(table.open()))
    assert len(rows) == 12 and any(r["dominated"] == "0" for r in rows)
    assert "pareto front" in capsys.readouterr().out


def test_tune_pipeline_objective(tmp_path):
    out, lib = tmp_path / "h.jsonl", tmp_path / "mini.smi"
    lib.write_text("CCO\ta\nCC(=O)N\tb\n")
    assert main(["tune", "--objective", "pipeline", "--library", str(lib), "--evals", "3", "--out", str(out)]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 3


def test_fep_family(capsys):
    assert main(["fep", "--family", "offset", "--steps", "4000", "--target-sem", "0.3", "--max-replicas", "4"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("dF ") and "exact 2.000000" in out


def test_fep_library(tmp_path):
    lib = tmp_path / "lib.smi"
    lib.write_text("CCO\ta\nCCN\tb\nCCCO\tc\nCCCN\td\n")
    out = tmp_path / "fep.tsv"
    args = ["fep", "--library", str(lib), "--steps", "2000", "--max-replicas", "3", "--target-sem", "0.5", "--out", str(out)]
    assert main(args) == EXIT_OK
    rows = list(csv.DictReader(out.open(), delimiter="\t"))
    assert len(rows) == 2
    one = tmp_path / "one.smi"
    one.write_text("CCO\ta\n")
    assert main(["fep", "--library", str(one), "--steps", "2000"]) == EXIT_CONFIG


def test_run_campaign(tmp_path, small_library, capsys):
    config = write_json(
        tmp_path / "campaign.json",
        {"library": str(small_library), "fep": {"target_sem": 0.3, "max_replicas": 3, "steps": 2000}, "knobs": {"max_steps": 10}},
    )
    out = tmp_path / "out"
    trace = tmp_path / "trace.jsonl"
    assert main(["run", str(config), "--out", str(out), "--trace", str(trace), "--seed", "4"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("library 12 -> parsed 12")
    report = json.loads((out / "report.json").read_text())
    assert report["seed"] == 4
    assert trace.is_file()


def test_run_failures(tmp_path, small_library):
    assert main(["run", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    bad = write_json(tmp_path / "bad.json", {"library": str(small_library), "keep": {"shortlist": 2}})
    assert main(["run", str(bad)]) == EXIT_CONFIG
    starving = write_json(
        tmp_path / "starve.json",
        {"library": str(small_library), "cluster": {"workers": [{"id": "m", "memory": 10}]}},
    )
    assert main(["run", str(starving), "--out", str(tmp_path / "o")]) == EXIT_STAGE
    assert (tmp_path / "o" / "report.json").is_file()


def test_usage_errors_exit_two():
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == 2


def test_console_entry_point():
    done = subprocess.run([sys.executable, "-m", "vscreen", "--version"], capture_output=True, text=True)
    assert done.returncode == 0 and done.stdout.startswith("vscreen ")
