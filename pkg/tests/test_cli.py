import json

import pytest

from a2gloc.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main
from a2gloc.harness import save_trace, simulate_trace
from a2gloc.scenario import load_scenario

TINY = """\
source_region: {x_min: 0, x_max: 60, y_min: 0, y_max: 60}
trajectory: {kind: spiral, region: {x_min: 0, x_max: 60, y_min: 0, y_max: 60}, spacing: 20, altitude: 30}
duration: 3
dt: 0.03
"""
FEATS = ["--n-clusters", "4", "--top-n", "10"]


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    for k in list(__import__("os").environ):
        if k.startswith("A2GLOC_"):
            monkeypatch.delenv(k)
    (tmp_path / "sc.yaml").write_text(TINY, encoding="utf-8")
    return tmp_path


def test_full_pipeline(workdir, capsys):
    w = workdir
    sc = str(w / "sc.yaml")
    assert main(["simulate", "--scenario", sc, "--n", "12", "--out", str(w / "d.bin")]) == EXIT_OK
    assert main(["features", "--dataset", str(w / "d.bin"), "--out", str(w / "f.csv"), *FEATS]) == EXIT_OK
    assert (w / "f.csv").read_text().count("\n") == 13
    assert main(["train", "--scenario", sc, "--dataset", str(w / "d.bin"), "--epochs", "2",
                 "--batch-size", "4", "--out", str(w / "m.bin"), "--loss-curve", str(w / "loss.csv"),
                 *FEATS]) == EXIT_OK
    assert (w / "loss.csv").read_text().count("\n") == 3

    trace = simulate_trace(load_scenario(sc, env={}), (20, 40), seed=0)
    save_trace(trace, w / "t.csv")
    assert main(["predict", "--model", str(w / "m.bin"), "--trace", str(w / "t.csv")]) == EXIT_OK
    pred = json.loads(capsys.readouterr().out)
    assert set(pred) == {"x", "y"}

    assert main(["eval", "--model", str(w / "m.bin"), "--dataset", str(w / "d.bin"),
                 "--out", str(w / "r.json")]) == EXIT_OK
    assert len(json.loads((w / "r.json").read_text())["trials"]) == 12

    assert main(["compare-models", "--scenario", sc, "--trace", str(w / "t.csv"), "--source", "20,40"]) == EXIT_OK
    cmp = json.loads(capsys.readouterr().out)
    assert set(cmp) == {"fspl", "two_ray", "enhanced_two_ray"}

    assert main(["complexity", "--variant", "clustering"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["parameter_count"] > 0


def test_fit_beta_on_simulated_trace(workdir, capsys):
    sc = load_scenario(None, env={}).with_(duration=120, noise_std=0.0)
    save_trace(simulate_trace(sc, (100, 220), seed=4), workdir / "t.csv")
    assert main(["fit-beta", "--trace", str(workdir / "t.csv"), "--source", "100,220"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["shadowed_samples"] > 0
    assert out["beta"] == pytest.approx(sc.propagation.shadow.beta, rel=1e-6)


def test_bad_scenario_exit_code(workdir):
    (workdir / "bad.yaml").write_text("bogus_key: 1\n", encoding="utf-8")
    assert main(["simulate", "--scenario", str(workdir / "bad.yaml"), "--n", "1",
                 "--out", str(workdir / "d.bin")]) == EXIT_CONFIG


def test_missing_dataset_exit_code(workdir):
    assert main(["features", "--dataset", str(workdir / "nope.bin"), "--out", str(workdir / "f.csv")]) == EXIT_DATA


def test_fit_beta_without_shadowed_samples(workdir):
    # receivers straight above the transmitter: steep elevation, never shadowed
    (workdir / "t.csv").write_text(
        "t_s,x_m,y_m,z_m,rss_dbm\n0,0,0,30,-40\n0.03,1,0,30,-40\n0.06,0,1,30,-40\n", encoding="utf-8")
    assert main(["fit-beta", "--trace", str(workdir / "t.csv"), "--source", "0,0"]) == EXIT_NUMERIC


def test_out_required(workdir):
    with pytest.raises(SystemExit):
        main(["simulate", "--n", "1"])
