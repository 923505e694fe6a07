"""Runs every CLI command on a small synthetic trace and checks report.json
against schemas/report.schema.json, plus exit codes and config precedence."""

import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema

cli, schema_path = sys.argv[1], Path(sys.argv[2])
schema = json.loads(schema_path.read_text())
jsonschema.Draft202012Validator.check_schema(schema)
validator = jsonschema.Draft202012Validator(schema)
failures = []


def run(args, expect=0):
    proc = subprocess.run([cli, *args], capture_output=True, text=True)
    if proc.returncode != expect:
        failures.append(f"{' '.join(args)}: exit {proc.returncode}, expected {expect}: {proc.stderr.strip()}")
    return proc


def check(out):
    report = json.loads((out / "report.json").read_text())
    errors = sorted(validator.iter_errors(report), key=str)
    for e in errors:
        failures.append(f"{out.name}: {e.message} at {list(e.absolute_path)}")
    for name in report["outputs"]:
        if not (out / name).exists():
            failures.append(f"{out.name}: listed output {name} missing")
    if not (out / "metrics.csv").exists():
        failures.append(f"{out.name}: metrics.csv missing")
    timing = json.loads((out / "timing.json").read_text())
    if timing.get("wall_time_s", -1) < 0:
        failures.append(f"{out.name}: bad timing sidecar")
    return report


with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    trace = tmp / "trace"
    run(["synth", "gen", "--seed", "3", "--noise", "4", "--plant", "L1.H2:0:1.0", "--out", str(trace)])
    check(trace)
    fast = ["--epochs", "3", "--lr", "3e-2"]
    commands = {
        "report_trace": ["report", "trace", "--trace", str(trace)],
        "report_base": ["report", "base", "--trace", str(trace / "manifest.json")],
        "profile": ["profile", "id", "--trace", str(trace)],
        "textspan": ["pursuit", "run", "--trace", str(trace), "--unit", "L1.H2"],
        "somp": ["pursuit", "run", "--trace", str(trace), "--unit", "L0.H1", "--algo", "somp", "--iters", "2"],
        "omp": ["pursuit", "run", "--trace", str(trace), "--unit", "L1.MLP", "--algo", "omp"],
        "grid": ["similarity", "grid", "--trace", str(trace), "--unweighted"],
        "select": ["select", "coarse", "--trace", str(trace), "--fraction", "0.25", *fast],
        "fit_rd": ["residual", "fit", "--trace", str(trace), *fast],
        "fit_star": ["residual", "fit", "--trace", str(trace), "--variant", "RD_star", *fast],
        "fit_y": ["residual", "fit", "--trace", str(trace), "--variant", "RD_Y", *fast],
        "fit_lin": ["residual", "fit", "--trace", str(trace), "--variant", "Lin", *fast],
        "eval_ones": ["residual", "eval", "--trace", str(trace), "--lambda", "ones"],
    }
    reports = {}
    for name, args in commands.items():
        run([*args, "--out", str(tmp / name)])
        if (tmp / name / "report.json").exists():
            reports[name] = check(tmp / name)
        else:
            failures.append(f"{name}: no report written")

    if {"select", "eval_ones", "report_base"} <= reports.keys():
        if reports["select"]["metrics"]["k"] != 2:
            failures.append("select: k should be ceil(0.25 * 8) = 2")
        if reports["eval_ones"]["metrics"]["accuracy"] != reports["report_base"]["metrics"]["base_accuracy"]:
            failures.append("eval with unit lambdas differs from report base")

    # Config file: keys are flag names; flags win.
    cfg = tmp / "cfg.json"
    cfg.write_text(json.dumps({"trace": str(trace), "variant": "RD_Y", "epochs": 2, "lr": 0.01}))
    run(["residual", "fit", "--config", str(cfg), "--epochs", "1", "--out", str(tmp / "cfg_run")])
    if (tmp / "cfg_run" / "report.json").exists():
        echo = check(tmp / "cfg_run")["config"]
        if echo["epochs"] != 1 or echo["variant"] != "RD_Y" or echo["lr"] != 0.01:
            failures.append(f"config precedence wrong: {echo}")

    # Exit codes.
    bad_cfg = tmp / "bad.json"
    bad_cfg.write_text(json.dumps({"trace": str(trace), "bogus": 1}))
    run(["report", "trace", "--config", str(bad_cfg), "--out", str(tmp / "x")], expect=1)
    run(["report", "trace", "--trace", str(trace), "--bogus", "--out", str(tmp / "x")], expect=1)
    run(["pursuit", "run", "--trace", str(trace), "--unit", "L9.H0", "--out", str(tmp / "x")], expect=1)
    run(["residual", "fit", "--trace", str(trace), "--variant", "RDX", "--out", str(tmp / "x")], expect=1)
    run(["report", "trace", "--trace", str(tmp / "missing"), "--out", str(tmp / "x")], expect=2)
    broken = tmp / "broken"
    broken.mkdir()
    (broken / "manifest.json").write_text("{not json")
    run(["report", "trace", "--trace", str(broken), "--out", str(tmp / "x")], expect=1)
    # Truncated payload passes the header check at load time and fails on read.
    cut = tmp / "cut"
    shutil.copytree(trace, cut)
    unit = cut / "units" / "test" / "L01_head02.rdt"
    unit.write_bytes(unit.read_bytes()[:-8])
    run(["report", "base", "--trace", str(cut), "--out", str(tmp / "x")], expect=2)

for f in failures:
    print("FAIL", f)
print(f"{len(failures)} schema/CLI check failures")
sys.exit(1 if failures else 0)
