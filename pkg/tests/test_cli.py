import csv
import io
import json
from datetime import datetime, timezone

import pytest

from helpers import rec
from tearank.cli import build_parser, run
from tearank.ingest import Snapshot, SyntheticSpec, generate_synthetic, save_snapshot
from tearank.rank import display_score

SUBCOMMANDS = ["rank", "calibrate", "detect", "attack", "audit", "gen", "validate"]

PLAN = """[attack]
kind = width
target = pkg-000010
width = 3
created_at_base = 2024-03-01T00:00:00Z

[thresholds]
width_limit = 2
tree_limit = inf
window = 7d
"""


@pytest.fixture
def snapshot(tmp_path):
    path = tmp_path / "snap.ndjson"
    save_snapshot(generate_synthetic(SyntheticSpec(n=60, model="preferential_attachment"), 1), str(path))
    return str(path)


def read(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


class TestUsage:
    @pytest.mark.parametrize("cmd", SUBCOMMANDS)
    def test_help_lists_defaults(self, cmd, capsys):
        assert run([cmd, "--help"]) == 0
        out = capsys.readouterr().out
        assert "usage: tearank " + cmd in out
        sub = build_parser()._subparsers._group_actions[0].choices[cmd]
        for action in sub._actions:
            for flag in action.option_strings:
                assert flag in out
            if action.default not in (None, False, "==SUPPRESS==") and action.option_strings != ["-h", "--help"]:
                assert "default" in (action.help or "")

    def test_unknown_flag(self, snapshot, capsys):
        assert run(["rank", "--input", snapshot, "--frobnicate"]) == 1
        assert "usage:" in capsys.readouterr().err

    def test_no_subcommand(self, capsys):
        assert run([]) == 1

    def test_missing_input_file(self, tmp_path, capsys):
        assert run(["rank", "--input", str(tmp_path / "missing.ndjson")]) == 1

    def test_bad_parameter(self, snapshot, capsys):
        assert run(["rank", "--input", snapshot, "--kappa", "1.5"]) == 1
        assert "kappa" in capsys.readouterr().err

    def test_conflicting_audit_flags(self, snapshot, capsys):
        assert run(["audit", "--input", snapshot, "--n", "100"]) == 1
        assert "conflicts" in capsys.readouterr().err

    def test_internal_failure(self, snapshot, monkeypatch, capsys):
        import tearank.cli as cli

        def boom(args):
            raise RuntimeError("unexpected")

        monkeypatch.setitem(cli.COMMANDS, "rank", boom)
        assert run(["rank", "--input", snapshot]) == 2


class TestRank:
    def test_kappa_one_uniform(self, snapshot, tmp_path):
        out = tmp_path / "r.csv"
        assert run(["rank", "--input", snapshot, "--kappa", "1", "--d", "0.5", "--output", str(out)]) == 0
        rows = list(csv.DictReader(io.StringIO(read(out))))
        assert len(rows) == 60
        expected = display_score(1 / 60)
        assert all(abs(float(r["display_score"]) - expected) < 1e-9 for r in rows)

    def test_json_lines(self, snapshot, capsys):
        assert run(["rank", "--input", snapshot, "--format", "json-lines"]) == 0
        rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert len(rows) == 60
        assert rows[0]["raw_rank"] >= rows[-1]["raw_rank"]

    def test_human(self, snapshot, capsys):
        assert run(["rank", "--input", snapshot, "--format", "human"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].split() == ["package", "raw_rank", "display"]
        assert len(lines) == 61

    def test_uniform_dangling(self, snapshot, capsys):
        assert run(["rank", "--input", snapshot, "--format", "json-lines", "--dangling", "uniform",
                    "--kappa", "0", "--d", "0.15"]) == 0
        total = sum(json.loads(line)["raw_rank"] for line in capsys.readouterr().out.splitlines())
        assert abs(total - 1) < 1e-8


class TestOtherCommands:
    def test_detect_pre_cutoff_background(self, snapshot, capsys):
        assert run(["detect", "--input", snapshot, "--top", "10"]) == 0
        out = capsys.readouterr().out
        assert "0 sybil (0.00%)" in out
        assert "seed sybils: 0" in out and "propagated sybils: 0" in out
        assert "top-10 direct overlap: 0" in out and "top-10 transitive overlap: 0" in out

    def test_detect_writes_verdicts(self, snapshot, tmp_path, capsys):
        out = tmp_path / "v.csv"
        assert run(["detect", "--input", snapshot, "--output", str(out)]) == 0
        rows = list(csv.DictReader(io.StringIO(read(out))))
        assert len(rows) == 60 and {r["label"] for r in rows} == {"benign"}

    def test_audit_bound(self, capsys):
        assert run(["audit", "--n", "100", "--failures", "0", "--alpha", "0.05"]) == 0
        out = capsys.readouterr().out
        assert "upper bound (95% one-sided): 2.95%" in out
        assert "consistent with ≤3% false-positive claim" in out

    def test_audit_rejects_claim(self, capsys):
        assert run(["audit", "--n", "100", "--failures", "2"]) == 0
        assert "not consistent with ≤3% false-positive claim" in capsys.readouterr().out

    def test_audit_sample(self, snapshot, tmp_path, capsys):
        assert run(["audit", "--input", snapshot, "--sample-size", "5"]) == 1
        assert "cannot sample" in capsys.readouterr().err
        fresh = tmp_path / "fresh.ndjson"
        records = [rec(f"held-{k:02d}", created=datetime(2024, 5, 1, tzinfo=timezone.utc), status="security_holding",
                       tea_registered=True)
                   for k in range(12)]
        save_snapshot(Snapshot(records, captured_at=datetime(2024, 6, 1, tzinfo=timezone.utc), source="t"), str(fresh))
        out = tmp_path / "sample.txt"
        args = ["audit", "--input", str(fresh), "--sample-size", "5", "--seed", "9", "--output", str(out)]
        assert run(args) == 0
        picked = read(out).splitlines()
        assert len(picked) == 5 and picked == sorted(picked) and all(p.startswith("held-") for p in picked)
        assert "upper bound (95% one-sided): 45.07%" in capsys.readouterr().out
        first = read(out)
        assert run(args) == 0 and read(out) == first

    def test_calibrate(self, tmp_path, capsys):
        snap = tmp_path / "obs.ndjson"
        assert run(["gen", "--n", "30", "--output", str(snap)]) == 0
        # attach observed scores from a planted run, then recover them
        ranks = tmp_path / "r.jsonl"
        assert run(["rank", "--input", str(snap), "--kappa", "0.5", "--d", "0.5", "--format", "json-lines",
                    "--output", str(ranks)]) == 0
        scores = {json.loads(l)["package_name"]: json.loads(l)["display_score"] for l in read(ranks).splitlines()}
        lines = read(snap).splitlines()
        body = []
        for line in lines[1:]:
            obj = json.loads(line)
            obj["observed_score"] = scores[obj["name"]]
            body.append(json.dumps(obj))
        snap.write_text("\n".join([lines[0]] + body) + "\n")
        surface = tmp_path / "surface.csv"
        assert run(["calibrate", "--input", str(snap), "--granularity", "0.25", "--output", str(surface)]) == 0
        out = capsys.readouterr().out
        assert "best kappa=0.5 d=0.5" in out
        assert read(surface).splitlines()[0] == "kappa,d,mme"
        assert len(read(surface).splitlines()) == 26

    def test_attack(self, snapshot, tmp_path, capsys):
        plan = tmp_path / "plan.ini"
        plan.write_text(PLAN)
        prov, after = tmp_path / "prov.txt", tmp_path / "after.ndjson"
        assert run(["attack", "--input", snapshot, "--plan", str(plan), "--format", "json-lines",
                    "--provenance", str(prov), "--snapshot-out", str(after)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["injected"] == 3 and report["target_flagged"] is True
        assert report["raw_delta"] > 0 and report["display_delta"] > 0
        assert read(prov).splitlines() == ["sybil-00001", "sybil-00002", "sybil-00003"]
        assert run(["validate", "--input", str(after), "--strict"]) == 0

    def test_attack_threshold_override(self, snapshot, tmp_path, capsys):
        plan = tmp_path / "plan.ini"
        plan.write_text(PLAN)
        assert run(["attack", "--input", snapshot, "--plan", str(plan), "--width-limit", "inf"]) == 0
        out = capsys.readouterr().out
        assert "flagged: none" in out and "target_flagged: False" in out

    def test_gen_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(["gen", "--n", "40", "--seed", "3", "--output", str(a)]) == 0
        assert run(["gen", "--n", "40", "--seed", "3", "--output", str(b)]) == 0
        assert read(a) == read(b)

    def test_validate(self, snapshot, tmp_path, capsys):
        assert run(["validate", "--input", snapshot]) == 0
        assert "status: ok" in capsys.readouterr().out
        bad = tmp_path / "bad.ndjson"
        bad.write_text(read(snapshot) + '{"name":"broken"}\n')
        assert run(["validate", "--input", str(bad)]) == 1
        assert "line 62" in capsys.readouterr().out
