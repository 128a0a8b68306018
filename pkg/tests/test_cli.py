import json

import numpy as np
import pytest
from pydantic import ValidationError

from knudsen_layer.cli import main, run_checks, run_solve, run_trace
from knudsen_layer.config import default_config, parse_config
from knudsen_layer.io import (CacheFormatError, load_operator, load_solution, read_summary,
                              save_operator)

SMALL = {
    "schema": "knudsen-layer/1",
    "geometry": {"epsilon": 0.04, "d": 4.0},
    "grids": {"n_velocity": 24, "n_eta": 40, "refined_velocity": 32},
    "checks": {"n_random": 10, "kernel_speeds": 9},
    "scenario": {"family": "exponential", "d_sweep": [2.0, 4.0]},
}


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_round_trip():
    cfg = default_config()
    again = parse_config(cfg.to_json())
    assert again == cfg
    assert parse_config(again.to_json()).to_json() == cfg.to_json()


@pytest.mark.parametrize("patch, match", [
    ({"gas": {"beta": 2.0}}, "beta"),
    ({"geometry": {"a_exp": 0.7}}, "a_exp"),
    ({"gas": {"rho0": "1"}}, "rho0"),
    ({"colour": 1}, "colour"),
    ({"schema": "knudsen-layer/0"}, "schema"),
    ({"grids": {"n_velocity": 24, "n_eta": 2}}, "n_eta"),
])
def test_invalid_configs(patch, match):
    with pytest.raises(ValidationError, match=match):
        parse_config(json.dumps(patch))


def test_int_accepted_for_float():
    assert parse_config('{"gas": {"rho0": 2}}').gas.rho0 == 2.0


def test_invalid_config_exit_code(tmp_path, capsys):
    assert main(["solve", "--config", _write(tmp_path, {"gas": {"beta": 2.0}})]) == 2
    assert "beta" in capsys.readouterr().err


def test_solve_bundle_and_determinism(tmp_path):
    cfg = parse_config(json.dumps(SMALL))
    a = run_solve(cfg, tmp_path / "a")
    run_solve(cfg, tmp_path / "b")
    assert a["passed"] and a["residual_ok"] and a["b1_ok"] and a["flux_ok"]
    for name in ("diagnostics.csv", "convergence.csv", "summary.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    s = read_summary(tmp_path / "a" / "summary.txt")
    assert float(s["sigma_fit"]) > 0 and s["passed"] == "true"
    header, arrays = load_solution(tmp_path / "a" / "solution.bin")
    assert arrays["h"].shape == (40, 24 * 24)
    assert header["residual"] == pytest.approx(a["residual"])


def test_solve_cli_with_sweep_and_cache(tmp_path, capsys):
    p = _write(tmp_path, SMALL)
    cache = str(tmp_path / "op.bin")
    assert main(["solve", "--config", p, "--out", str(tmp_path / "o"), "--d-sweep",
                 "--cache", cache, "--threads", "1"]) == 0
    rows = (tmp_path / "o" / "sweep.csv").read_text().splitlines()
    assert len(rows) == 3
    assert "sweep_ok=True" in capsys.readouterr().out
    op = load_operator(cache)
    assert op.grid.n_per_axis == 24
    assert main(["solve", "--config", p, "--out", str(tmp_path / "o2"), "--cache", cache]) == 0


def test_bad_cache_file(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a cache")
    with pytest.raises(CacheFormatError):
        load_operator(bad)


def test_operator_round_trip(tmp_path, op24):
    save_operator(tmp_path / "k.bin", op24)
    op = load_operator(tmp_path / "k.bin")
    assert np.array_equal(op.k_matrix, op24.k_matrix) and np.array_equal(op.nu, op24.nu)
    assert op.gas == op24.gas


def test_trace_mirror_case(tmp_path):
    cfg = parse_config(json.dumps({
        "geometry": {"epsilon": 0.0, "d": 3.0},
        "trace": {"eta": 1.0, "v1": 0.5, "v2": 0.2, "t": 0.0, "horizon": 5.0,
                  "n_samples": 11}}))
    path = run_trace(cfg, "slab", tmp_path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.max(np.abs(data[:, 1] - np.abs(1.0 + 0.5 * data[:, 0]))) < 1e-14
    first = path.read_bytes()
    assert run_trace(cfg, "slab", tmp_path).read_bytes() == first


def test_trace_disk_oracle(tmp_path):
    path = run_trace(default_config(), "disk", tmp_path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.max(np.abs(data[:, 1] - np.hypot(data[:, 5], data[:, 6]))) < 1e-10


def test_trace_rejects_grazing(tmp_path, capsys):
    p = _write(tmp_path, {"trace": {"eta": 0.0, "v1": 0.0, "v2": 1.0}})
    assert main(["trace", "--config", p, "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "grazing" in err and '"schema": "knudsen-layer/1"' in err


def _by_name(rep):
    return {r.name: r for r in rep.results}


def test_kernel_check_fault_injection():
    cfg = parse_config(json.dumps(SMALL))
    clean = _by_name(run_checks(cfg, which="kernel"))
    noisy = _by_name(run_checks(cfg, which="kernel", inject_noise=1e-3))
    assert clean["collision_self_adjointness"].passed
    assert not noisy["collision_self_adjointness"].passed


def test_jacobian_check_cli(tmp_path, capsys):
    code = main(["jacobian-check", "--config", _write(tmp_path, SMALL), "--seed", "7",
                 "--out", str(tmp_path)])
    out = capsys.readouterr().out
    table = np.loadtxt(tmp_path / "jacobian_check.csv", delimiter=",", skiprows=1)
    assert table.shape == (10, 8) and np.all(table[:, -1] < 1e-5)
    assert "PASS disk_jacobian_vs_fd" in out
    assert "PASS disk_polar_vs_cartesian" in out
    # the closed form does not vanish at s = t10, so this sub-check reports a failure
    assert "FAIL disk_jacobian_zero_at_t10" in out
    assert code == 1


def test_closures_check(tmp_path):
    cfg = parse_config(json.dumps(SMALL))
    res = _by_name(run_checks(cfg, which="closures", out=tmp_path))
    prof = np.loadtxt(tmp_path / "closures.csv", delimiter=",", skiprows=1)
    assert prof.shape == (201, 5) and prof[-1, 0] == 4.0
    assert res["burnett_norm_orthogonality"].passed
    assert res["kappa1_positive"].passed and res["kappa2_positive"].passed
    assert res["macro_lift_residual"].passed and res["macro_lift_flat_case"].passed
    assert "kappa1_refinement_drift" in res


def test_threads_env(monkeypatch, tmp_path):
    monkeypatch.setenv("KNUDSEN_LAYER_THREADS", "1")
    assert main(["trace", "--out", str(tmp_path)]) == 0
    monkeypatch.setenv("KNUDSEN_LAYER_THREADS", "0")
    assert main(["trace", "--out", str(tmp_path)]) == 2
