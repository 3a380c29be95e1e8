import csv
import io
import json

import pytest

from prefwalk.cli import main

OMEGA = '{"kind": "interval", "lower": [0.3], "upper": [0.8]}'
KAPPA = '{"kind": "indicator_scaled", "domain": {"kind": "interval", "lower": [0.25], "upper": [0.75]}, "inside": 2.0}'


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--setting", "I", "--n", "6", "--p", "0.6", "--L", "30",
                 "--seed", "4", "--out", str(d)]) == 0
    return d


def data_args(d):
    return ["--data", d / "data.csv", "--graph", d / "graph.json"]


def test_simulate_outputs(tmp_path, capsys):
    code, out, _ = run(["simulate", "--setting", "I", "--n", "20", "--p", "0.2", "--L", "50",
                        "--seed", "1", "--out", tmp_path / "a"], capsys)
    assert code == 0
    summary = json.loads(out)
    assert summary["schema"] == "prefwalk/v1" and summary["d"] == 1
    rows = list(csv.reader(io.StringIO((tmp_path / "a" / "data.csv").read_text())))
    assert len(rows) - 1 == summary["edge_count"] * 50 == summary["records"]
    graph = json.loads((tmp_path / "a" / "graph.json").read_text())
    assert graph["schema"] == "prefwalk/v1" and graph["n"] == 20
    run(["simulate", "--setting", "I", "--n", "20", "--p", "0.2", "--L", "50", "--seed", "1",
         "--out", tmp_path / "b"], capsys)
    for name in ("data.csv", "graph.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_setting_two(tmp_path, capsys):
    code, out, _ = run(["simulate", "--setting", "II", "--n", "5", "--p", "0.8", "--L", "3",
                        "--out", tmp_path], capsys)
    assert code == 0 and json.loads(out)["d"] == 50
    header = (tmp_path / "data.csv").read_text().splitlines()[0].split(",")
    assert header[4:] == [f"x_{k}" for k in range(1, 51)]


def test_fit_and_infer(sim_dir, capsys):
    code, out, _ = run(["fit", *data_args(sim_dir), "--model", "linear"], capsys)
    fitted = json.loads(out)
    assert code == 0 and fitted["schema"] == "prefwalk/v1" and fitted["n"] == 6
    code, out, _ = run(["infer", *data_args(sim_dir), "--i0", 1, "--j0", 4, "--omega", OMEGA],
                       capsys)
    rep = json.loads(out)
    assert code == 0 and (rep["i0"], rep["j0"]) == (1, 4)
    assert rep["ci"][0] < rep["q_hat"] < rep["ci"][1]


def test_shift_and_multitest(sim_dir, capsys):
    code, out, _ = run(["shift", *data_args(sim_dir), "--i0", 1, "--j0", 4, "--omega", OMEGA,
                        "--kappa", KAPPA], capsys)
    assert code == 0 and json.loads(out)["diagnostics"]["kappa"]["inside"] == 2.0
    code, out, _ = run(["multitest", *data_args(sim_dir), "--best-item", 6, "--omega", OMEGA,
                        "--draws", 200], capsys)
    res = json.loads(out)
    assert code == 0 and len(res["q_hat"]) == 5 and res["draws"] == 200
    fam = '[{"i": 1, "j": 2}, {"i": 3, "j": 4, "omega": %s}]' % OMEGA
    code, out, _ = run(["multitest", *data_args(sim_dir), "--family", fam, "--draws", 200], capsys)
    assert code == 0 and json.loads(out)["family"][1]["i"] == 3


def test_verify(capsys, tmp_path):
    code, out, _ = run(["verify", "--k2-only", "--cases", 2, "--walks", 1000], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["passes"]
    assert all(c["max_exact_error"] <= 1e-12 and c["max_z"] == 0.0 for c in rep["cases"])
    code, out, _ = run(["verify", "--cases", 3, "--walks", 20000, "--seed", 2], capsys)
    assert code == 0 and json.loads(out)["passes"]
    code, out, _ = run(["verify", "--cases", 2, "--walks", 5000, "--inject-failure"], capsys)
    rep = json.loads(out)
    assert code == 1 and rep["failures"] == [0] and not rep["passes"]


def test_reproduce_small(tmp_path, capsys):
    code, out, _ = run(["reproduce", "--setting", "I", "--grid", "8:0.5", "--L", 40, "--reps", 2,
                        "--truth", -0.17, "--out", tmp_path], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "study.csv").read_text())))
    assert len(rows) == 2
    for col in ("n", "p", "L", "rep", "q_hat", "plugin", "v_hat", "v_tilde", "ci_lo", "ci_hi",
                "covered", "ci_len"):
        assert col in rows[0]
    cell = json.loads((tmp_path / "summary.json").read_text())["cells"][0]
    assert 0.0 <= cell["ecr"] <= 1.0


def test_config_file(sim_dir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"i0": 1, "j0": 4, "omega": json.loads(OMEGA), "seed": 9}))
    _, via_cfg, _ = run(["infer", *data_args(sim_dir), "--config", cfg], capsys)
    _, direct, _ = run(["infer", *data_args(sim_dir), "--i0", 1, "--j0", 4, "--omega", OMEGA,
                        "--seed", 9], capsys)
    assert via_cfg == direct
    # an explicit flag beats the config file
    _, explicit, _ = run(["infer", *data_args(sim_dir), "--config", cfg, "--seed", 0], capsys)
    _, seed0, _ = run(["infer", *data_args(sim_dir), "--i0", 1, "--j0", 4, "--omega", OMEGA],
                      capsys)
    assert explicit == seed0
    cfg.write_text('{"no_such_key": 1}')
    code, _, err = run(["infer", *data_args(sim_dir), "--config", cfg], capsys)
    assert code == 2 and "no_such_key" in err


def test_exit_codes(sim_dir, tmp_path, capsys):
    assert run(["infer", "--data", tmp_path / "missing.csv", "--graph", sim_dir / "graph.json"],
               capsys)[0] == 2
    assert run(["infer", *data_args(sim_dir), "--i0", 1, "--j0", 1], capsys)[0] == 2
    assert run(["infer", *data_args(sim_dir), "--i0", 99], capsys)[0] == 2
    assert run(["infer", *data_args(sim_dir), "--omega", "{bad"], capsys)[0] == 2
    assert run(["shift", *data_args(sim_dir)], capsys)[0] == 2
    assert run(["frobnicate"], capsys)[0] == 2
    assert run(["infer", *data_args(sim_dir), "--threads", 0], capsys)[0] == 2
    disconnected = tmp_path / "g.json"
    disconnected.write_text('{"n": 4, "edges": [[0, 1], [2, 3]]}')
    run(["simulate", "--graph", disconnected, "--L", 5, "--out", tmp_path / "dis"], capsys)
    code, _, err = run(["infer", "--data", tmp_path / "dis" / "data.csv", "--graph", disconnected],
                       capsys)
    assert code == 3 and json.loads(err)["error"] == "numerical"


@pytest.mark.parametrize("command", ["fit", "infer", "shift", "multitest"])
def test_thread_count_does_not_change_output(sim_dir, tmp_path, capsys, command):
    extra = {"fit": [], "infer": ["--omega", OMEGA], "shift": ["--omega", OMEGA, "--kappa", KAPPA],
             "multitest": ["--best-item", 1, "--draws", 200]}[command]
    outs = []
    for threads in (1, 3):
        path = tmp_path / f"{command}-{threads}.json"
        assert run([command, *data_args(sim_dir), *extra, "--seed", 5, "--threads", threads,
                    "--out", path], capsys)[0] == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
