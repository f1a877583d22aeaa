import json

import pytest

from desira.cli import EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_OK, main
from desira.domain import ProblemInstance, validate


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.fixture(scope="module")
def urban(tmp_path_factory):
    d = tmp_path_factory.mktemp("gen")
    assert main(["generate", "--urban", "--agents", "100", "--stations", "10", "--seed", "7",
                 "--out", str(d)]) == EXIT_OK
    return d / "urban_seed7.json"


def test_generate_writes_valid_instance(urban, capsys):
    inst = ProblemInstance.load(urban)
    assert validate(inst).ok
    assert inst.n_agents == 100 and inst.n_stations == 10
    assert urban.with_suffix(".graph.json").exists()
    assert main(["validate", str(urban)]) == EXIT_OK
    assert "ok: N=100" in capsys.readouterr().out


def test_generate_constellation(tmp_path):
    assert main(["generate", "--constellation", "--seed", "7", "--out", str(tmp_path)]) == EXIT_OK
    assert ProblemInstance.load(tmp_path / "constellation_seed7.json").n_agents == 60


def test_generate_twice_is_identical(tmp_path):
    for sub in ("a", "b"):
        assert main(["generate", "--agents", "100", "--stations", "15", "--seed", "3",
                     "--out", str(tmp_path / sub)]) == EXIT_OK
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("DESIRA_OUT", str(tmp_path / "env"))
    assert main(["generate", "--constellation", "--seed", "1"]) == EXIT_OK
    assert (tmp_path / "env" / "constellation_seed1.json").exists()


def test_generate_invalid_settings(tmp_path):
    assert main(["generate", "--agents", "0", "--out", str(tmp_path)]) == EXIT_INVALID
    bad = tmp_path / "cfg.json"
    bad.write_text(json.dumps({"scenario": {"nonsense": 1}}))
    assert main(["generate", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_INVALID


@pytest.mark.parametrize("method", ["desira", "centralized", "no_side_info", "greedy"])
def test_solve_methods(urban, tmp_path, method):
    code = main(["solve", str(urban), "--method", method, "--out", str(tmp_path)])
    assert code == EXIT_OK
    alloc = json.loads((tmp_path / f"{method}_seed7_allocation.json").read_text())
    assert len(alloc["allocation"]) == 100
    if method != "greedy":
        report = json.loads((tmp_path / f"{method}_seed7_report.json").read_text())
        assert "wall_seconds" not in report
        head = (tmp_path / f"{method}_seed7_residuals.csv").read_text().splitlines()[0]
        assert head == "iter,primal,dual,overflow"


def test_solve_standard_flags_and_timing(urban, tmp_path):
    assert main(["solve", str(urban), "--method", "desira", "--rho", "1.0", "--tol", "1e-3",
                 "--max-iters", "100", "--timing", "--out", str(tmp_path)]) == EXIT_OK
    assert "wall_seconds" in json.loads((tmp_path / "desira_seed7_report.json").read_text())


def test_solve_not_converged_still_writes(urban, tmp_path):
    code = main(["solve", str(urban), "--max-iters", "2", "--out", str(tmp_path)])
    assert code == EXIT_NOT_CONVERGED
    assert json.loads((tmp_path / "desira_seed7_allocation.json").read_text())["converged"] is False


def test_solve_twice_is_identical(urban, tmp_path):
    for sub in ("a", "b"):
        for method in ("greedy", "desira"):
            main(["solve", str(urban), "--method", method, "--seed", "42",
                  "--out", str(tmp_path / sub)])
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    assert "greedy_seed42_allocation.json" in _files(tmp_path / "a")


def test_solve_malformed_input(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["solve", str(bad), "--out", str(tmp_path)]) == EXIT_INVALID
    assert main(["solve", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == EXIT_INVALID
    assert main(["validate", str(bad)]) == EXIT_INVALID


def test_solve_rejects_bad_admm_flags(urban, tmp_path):
    assert main(["solve", str(urban), "--rho", "-1", "--out", str(tmp_path)]) == EXIT_INVALID


def test_unknown_sweep_kind(tmp_path):
    assert main(["sweep", "bogus", "--out", str(tmp_path)]) == EXIT_INVALID


def test_sweep_methods_rows(tmp_path):
    args = ["sweep", "methods", "--seeds", "2", "--agents", "100", "--stations", "15",
            "--draws", "200", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    lines = (tmp_path / "sweep_methods.csv").read_text().splitlines()
    assert len(lines) == 1 + 4 * 2
    summary = json.loads((tmp_path / "sweep_methods_summary.json").read_text())
    assert set(summary) == {"centralized", "desira", "no_side_info", "greedy"}


def test_sweep_rejects_bad_factor(tmp_path):
    assert main(["sweep", "noise", "--factors", "0.2", "--seeds", "1",
                 "--out", str(tmp_path)]) == EXIT_INVALID
    assert main(["sweep", "radius", "--radii", "a,b", "--out", str(tmp_path)]) == EXIT_INVALID


def test_config_file_then_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenario": {"n_agents": 100, "n_stations": 15, "seed": 5}}))
    assert main(["generate", "--config", str(cfg), "--seed", "6", "--out", str(tmp_path)]) == 0
    inst = ProblemInstance.load(tmp_path / "urban_seed6.json")
    assert inst.n_agents == 100 and inst.seed == 6
