import json
import os

import numpy as np
import pytest

from drosc import cli
from drosc.transport import DiscreteDistribution, save_csv


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    return code, capsys.readouterr().out


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


# --- solve-lcp ------------------------------------------------------------------

def test_solve_lcp_example(tmp_path, capsys):
    f = write_json(tmp_path / "lcp.json", {"M": [[2.0, 1.0], [1.0, 2.0]], "q": [-1.0, 1.0]})
    code, out = run(capsys, "solve-lcp", f, "--out", tmp_path)
    assert code == cli.EXIT_OK
    d = json.loads(out)
    np.testing.assert_allclose(d["y"], [0.5, 0.0], atol=1e-10)
    np.testing.assert_allclose(d["w"], [0.0, 1.5], atol=1e-10)
    assert json.loads((tmp_path / "lcp_solution.json").read_text()) == d


def test_solve_lcp_regularized(tmp_path, capsys):
    f = write_json(tmp_path / "lcp.json", {"M": [[0.0]], "q": [-1.0]})
    code, out = run(capsys, "solve-lcp", f, "--eps", "0.5")
    assert code == cli.EXIT_OK
    assert json.loads(out)["y"] == pytest.approx([2.0], abs=1e-10)


def test_parse_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, "solve-lcp", bad)[0] == cli.EXIT_PARSE
    assert run(capsys, "solve-lcp", tmp_path / "missing.json")[0] == cli.EXIT_PARSE
    shape = write_json(tmp_path / "shape.json", {"M": [[1.0, 0.0]], "q": [1.0]})
    assert run(capsys, "solve-lcp", shape)[0] == cli.EXIT_PARSE
    assert run(capsys, "no-such-command")[0] == cli.EXIT_PARSE
    assert run(capsys, "run", "--eps", "abc")[0] == cli.EXIT_PARSE
    cfg = write_json(tmp_path / "cfg.json", {"eps_list": []})
    assert run(capsys, "run", "--config", cfg, "--out", tmp_path)[0] == cli.EXIT_PARSE


def test_default_config_round_trip(tmp_path, capsys):
    code, out = run(capsys, "default-config")
    assert code == 0
    exp = cli.ExperimentConfig.from_dict(json.loads(out))
    assert exp.eps_list == [0.1] and exp.k_list == [25]
    with pytest.raises(ValueError):
        cli.ExperimentConfig(reference_x=np.full(5, 9.0))


# --- run / certify --------------------------------------------------------------

def test_run_single_sample_at_center(tmp_path, capsys):
    cfg = dict(cli.default_config(), samples=[[0.0, 0.0]])
    f = write_json(tmp_path / "cfg.json", cfg)
    code, out = run(capsys, "run", "--config", f, "--out", tmp_path, "--eps", "0.5")
    assert code == cli.EXIT_OK
    summary = json.loads(out)
    assert summary["status"] == "converged"
    state = json.loads((tmp_path / "state_eps0.5_k1_eta0.5.json").read_text())
    assert state["state"]["p"] == [1.0]
    assert (tmp_path / "certificate_eps0.5_k1_eta0.5.json").exists()


def test_run_infeasible_radius_reports_witness(tmp_path, capsys):
    cfg = dict(cli.default_config(), samples=[[0.8, 0.8], [0.9, 0.6]])
    f = write_json(tmp_path / "cfg.json", cfg)
    code, out = run(capsys, "run", "--config", f, "--out", tmp_path, "--eta", "0.1")
    assert code == cli.EXIT_SOLVE
    rep = json.loads((tmp_path / "infeasible_eps0.1_k2_eta0.1.json").read_text())
    assert rep["witness_feasible"] is False and rep["mean_violation"] > 0
    assert json.loads(out) == rep


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert cli.main(["run", "--out", str(d), "--k", "25", "--eps", "0.5"]) == cli.EXIT_OK
    return d


def test_run_writes_state_and_certificate(run_dir):
    rec = json.loads((run_dir / "state_eps0.5_k25_eta0.5.json").read_text())
    assert rec["state"]["status"] == "converged"
    assert rec["state"]["value"] == pytest.approx(0.02647059, abs=1e-6)
    cert = json.loads((run_dir / "certificate_eps0.5_k25_eta0.5.json").read_text())
    assert cert["passed"] and cert["res_x"] <= 1e-4


def test_certify_round_trip(run_dir, tmp_path, capsys):
    state = run_dir / "state_eps0.5_k25_eta0.5.json"
    code1, out1 = run(capsys, "certify", state, "--out", tmp_path)
    code2, out2 = run(capsys, "certify", state)
    assert code1 == code2 == cli.EXIT_OK
    assert out1 == out2 == (tmp_path / "certificate.json").read_text()
    saved = (run_dir / "certificate_eps0.5_k25_eta0.5.json").read_text()
    assert json.loads(out1)["class"] == json.loads(saved)["class"]


def test_certify_detects_perturbed_x(run_dir, tmp_path, capsys):
    rec = json.loads((run_dir / "state_eps0.5_k25_eta0.5.json").read_text())
    x = np.array(rec["state"]["x"])
    j = int(np.argmax((x > 0.05) & (x < 0.95)))      # a free coordinate
    x[j] += 0.1
    rec["state"]["x"] = x.tolist()
    f = write_json(tmp_path / "pert.json", rec)
    code, out = run(capsys, "certify", f)
    assert code == cli.EXIT_SOLVE
    assert json.loads(out)["res_x"] > 1e-2


def test_certify_detects_tampered_weights(run_dir, tmp_path, capsys):
    rec = json.loads((run_dir / "state_eps0.5_k25_eta0.5.json").read_text())
    p = np.zeros(25)
    p[0] = 1.0                                       # a corner scenario, mean far from center
    rec["state"]["p"] = p.tolist()
    f = write_json(tmp_path / "tamper.json", rec)
    code, out = run(capsys, "certify", f)
    assert code == cli.EXIT_SOLVE
    assert json.loads(out)["feasible"] is False


def test_certify_rejects_mismatched_record(run_dir, tmp_path, capsys):
    rec = json.loads((run_dir / "state_eps0.5_k25_eta0.5.json").read_text())
    rec["state"]["p"] = [1.0]
    f = write_json(tmp_path / "bad.json", rec)
    assert run(capsys, "certify", f)[0] == cli.EXIT_PARSE


# --- sweep ----------------------------------------------------------------------

def test_sweep_csv_is_deterministic(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("DROSC_JOBS", raising=False)
    args = ["sweep", "--k", "9", "--eps", "0.5,0.2", "--eta", "0.5"]
    code1, out1 = run(capsys, *args, "--out", tmp_path / "a")
    code2, out2 = run(capsys, *args, "--out", tmp_path / "b")
    assert code1 == code2 == cli.EXIT_OK
    assert out1 == out2 == (tmp_path / "a" / "sweep.csv").read_text()
    lines = out1.strip().splitlines()
    assert len(lines) == 3
    assert sorted(os.listdir(tmp_path / "a" / "states")) == [
        "state_eps0.2_k9_eta0.5.json", "state_eps0.5_k9_eta0.5.json"]


# --- transport ------------------------------------------------------------------

def test_transport_report(tmp_path, capsys):
    P = DiscreteDistribution([[0.1, 0.2], [-0.3, 0.4]], [0.5, 0.5])
    Q = DiscreteDistribution([[0.1, 0.2]], [1.0])
    save_csv(P, tmp_path / "p.csv")
    save_csv(Q, tmp_path / "q.csv")
    code, out = run(capsys, "transport", tmp_path / "p.csv", tmp_path / "q.csv", "--k", "25")
    assert code == cli.EXIT_OK
    rep = json.loads(out)
    assert rep["wasserstein"] == pytest.approx(0.5 * np.hypot(0.4, 0.2), abs=1e-9)
    assert rep["margin"] >= 0 and rep["projection_distance"] <= rep["fill_distance"]


def test_transport_requires_something(tmp_path, capsys):
    save_csv(DiscreteDistribution([[0.0, 0.0]], [1.0]), tmp_path / "p.csv")
    assert run(capsys, "transport", tmp_path / "p.csv")[0] == cli.EXIT_PARSE
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    assert run(capsys, "transport", tmp_path / "bad.csv", "--k", "4")[0] == cli.EXIT_PARSE


# --- atomic write ---------------------------------------------------------------

def test_write_atomic_replaces_and_cleans_up(tmp_path):
    target = tmp_path / "sub" / "f.txt"
    cli.write_atomic(target, "one")
    cli.write_atomic(target, "two")
    assert target.read_text() == "two"
    assert os.listdir(target.parent) == ["f.txt"]


def test_write_atomic_keeps_old_file_on_failure(tmp_path, monkeypatch):
    target = tmp_path / "f.txt"
    target.write_text("old")

    def boom(*a, **k):
        raise OSError("disk full")
    monkeypatch.setattr(cli.os, "replace", boom)
    with pytest.raises(OSError):
        cli.write_atomic(target, "new")
    assert target.read_text() == "old"
    assert os.listdir(tmp_path) == ["f.txt"]
