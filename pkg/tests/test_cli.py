import json
import subprocess
import sys

import pytest

from trustci.canonical import canonical_decode
from trustci.cli import main


def run_dir_of(ws):
    return next((ws / "runs").iterdir())


def test_run_clean_fixture_writes_manifest(tmp_path, capsys):
    ws = tmp_path / "ws"
    assert main(["run", "--workspace", str(ws)]) == 0
    manifest = canonical_decode((run_dir_of(ws) / "manifest.json").read_bytes().rstrip())
    assert manifest["status"] == "completed"
    assert "completed" in capsys.readouterr().out


def test_verify_and_audit_pass_then_revoked_fails(tmp_path, capsys):
    ws = tmp_path / "ws"
    main(["init", "--workspace", str(ws)])
    assert main(["run", "--workspace", str(ws)]) == 0
    rd = str(run_dir_of(ws))
    assert main(["verify", "--workspace", str(ws), "--run", rd]) == 0
    assert main(["audit", "--workspace", str(ws), "--run", rd, "--json"]) == 0
    out = capsys.readouterr().out.strip().splitlines()[-1]
    assert canonical_decode(out.encode())["checks_performed"] == 43
    idx = canonical_decode((run_dir_of(ws) / "manifest.json").read_bytes().rstrip())["final_commitment_index"]
    assert main(["revoke", "--workspace", str(ws), "--index", str(idx)]) == 0
    assert main(["verify", "--workspace", str(ws), "--run", rd]) == 1
    assert main(["audit", "--workspace", str(ws), "--run", rd]) == 1


def test_run_vulnerable_fixture_exits_one(tmp_path):
    ws = tmp_path / "ws"
    main(["init", "--workspace", str(ws), "--vulnerable"])
    assert main(["run", "--workspace", str(ws)]) == 1
    assert main(["verify", "--workspace", str(ws), "--run", str(run_dir_of(ws))]) == 1


def test_tampered_run_exits_one(tmp_path):
    assert main(["run", "--workspace", str(tmp_path / "ws"), "--tamper-stage", "2"]) == 1


def test_simulate_scenario_s3(tmp_path, capsys):
    assert main(["simulate-scenario", "s3", "--workspace", str(tmp_path)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["detected"] is True


@pytest.mark.parametrize("kind", ["s1", "s2"])
def test_simulate_scenario_other_kinds(kind, capsys):
    assert main(["simulate-scenario", kind]) == 0
    assert json.loads(capsys.readouterr().out)["pass"] is True


def test_simulate_scaling(tmp_path, capsys):
    csv_path = tmp_path / "c.csv"
    assert main(["simulate-scaling", "--csv", str(csv_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["untrusted_cumulative"] == pytest.approx(7121.4)
    assert out["trusted_cumulative"] == pytest.approx(199.04)
    assert csv_path.exists()


def test_keygen_chain(tmp_path, capsys):
    ks = str(tmp_path / "k.jsonl")
    assert main(["keygen", "--keystore", ks, "--role", "manufacturer-root"]) == 0
    root = capsys.readouterr().out.strip()
    assert main(["keygen", "--keystore", ks, "--role", "tee-identity", "--endorser", root]) == 0
    assert main(["keygen", "--keystore", ks, "--role", "tee-identity"]) == 2


def test_config_file_supplies_flags(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"growth":0,"months":3}')
    assert main(["--config", str(cfg), "simulate-scaling"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["months"] == 3 and out["untrusted_cumulative"] == 0


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["run"],
    ["simulate-scenario", "s9"],
    ["simulate-scaling", "--months", "many"],
])
def test_usage_errors_exit_two(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_unknown_use_case_exits_two():
    assert main(["simulate-scaling", "--use-case", "mainframe"]) == 2


def test_missing_run_directory_exits_two(tmp_path):
    assert main(["verify", "--workspace", str(tmp_path), "--run", str(tmp_path / "nope")]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "trustci", "simulate-scaling", "--months", "2"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["months"] == 2
