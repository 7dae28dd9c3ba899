import json

import numpy as np
import pytest

from kelsim import cli, report, validation
from kelsim.grid import make_grid, read_field, write_field

SMALL = {
    "version": 1,
    "params": {"m": 2, "q": 2, "gamma": 1.0},
    "grid": {"n": 2, "L": 4.0, "N": 32},
    "initial": {"profile": "bump", "amplitude": 5.0, "radius": 1.2},
    "T": 0.01,
    "snapshots": {"count": 11},
}


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def with_changes(**kw):
    cfg = json.loads(json.dumps(SMALL))
    cfg.update(kw)
    return cfg


def check_manifest(out):
    man = json.loads((out / "manifest.json").read_text())
    listed = {e["path"]: e["sha256"] for e in man["files"]}
    on_disk = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"}
    assert set(listed) == on_disk
    for path, digest in listed.items():
        assert report.sha256_file(out / path) == digest
    return man


def test_simulate_zero_preset(tmp_path):
    out = tmp_path / "zero"
    assert cli.main(["simulate", "--preset", "zero", "--out", str(out)]) == 0
    dumps = sorted(out.glob("u_*.kfd"))
    assert len(dumps) == 3
    assert all(np.all(read_field(p)[1] == 0) for p in dumps + sorted(out.glob("v_*.kfd")))
    man = check_manifest(out)
    assert man["status"] == "completed"
    assert (out / "mass.csv").read_text().splitlines()[0] == "t,mass"


def test_simulate_blowup_preset(tmp_path):
    out = tmp_path / "blow"
    assert cli.main(["simulate", "--preset", "blowup", "--out", str(out)]) == 3
    man = check_manifest(out)
    assert man["status"] == "blowup"
    traj = json.loads((out / "trajectory.json").read_text())
    assert traj["status"] == "blowup" and traj["annotations"]["supercritical"]


def test_missing_config_path(tmp_path, capsys):
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err


def test_no_source_is_config_error(tmp_path):
    assert cli.main(["simulate", "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize(
    "cfg",
    [
        with_changes(extra=1),
        with_changes(version=2),
        with_changes(params={"m": 2, "q": 2, "gamma": 1.0, "gama": 1.0}),
        with_changes(params={"m": 0.5, "q": 2, "gamma": 1.0}),
        with_changes(initial={"profile": "bump", "amplitud": 1.0}),
        with_changes(initial={"profile": "spiral"}),
        with_changes(initial={"profile": "field", "path": "missing.kfd"}),
        with_changes(T=-1.0),
        with_changes(snapshots={"every": 3}),
        with_changes(cfl=2.0),
        with_changes(grid={"n": 2, "L": 4.0, "N": 31}),
    ],
)
def test_strict_config_errors(tmp_path, cfg):
    assert cli.main(["simulate", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert cli.main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_simulate_is_byte_deterministic(tmp_path):
    path = write_config(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", path, "--out", str(a)]) == 0
    assert cli.main(["simulate", "--config", path, "--out", str(b)]) == 0
    for name in ("trajectory.json", "manifest.json", "mass.csv", "norms.csv", "u_00010.kfd"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_field_profile_round_trip(tmp_path):
    g = make_grid(2, 4.0, 32)
    u0 = np.zeros(g.shape)
    u0[14:18, 14:18] = 1.0
    write_field(tmp_path / "u0.kfd", g, u0)
    cfg = with_changes(initial={"profile": "field", "path": "u0.kfd"})
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", write_config(tmp_path, cfg), "--out", str(out)]) == 0
    assert np.array_equal(read_field(out / "u_00000.kfd")[1], u0)


def test_field_profile_grid_mismatch(tmp_path):
    write_field(tmp_path / "u0.kfd", make_grid(2, 4.0, 16), np.zeros((16, 16)))
    cfg = with_changes(initial={"profile": "field", "path": "u0.kfd"})
    assert cli.main(["simulate", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_boundary_and_step_limit_exit_codes(tmp_path):
    spread = with_changes(
        params={"m": 2, "q": 2, "gamma": 1.0, "chi": 0}, grid={"n": 1, "L": 1.0, "N": 64},
        initial={"profile": "bump", "amplitude": 4.0, "radius": 0.5}, T=1.0, snapshots=[],
    )
    assert cli.main(["simulate", "--config", write_config(tmp_path, spread), "--out", str(tmp_path / "b")]) == 4
    short = with_changes(max_steps=3, T=1.0)
    assert cli.main(["simulate", "--config", write_config(tmp_path, short, "s.json"), "--out", str(tmp_path / "s")]) == 5


def test_holder_on_uniform_state(tmp_path, capsys):
    cfg = with_changes(initial={"profile": "uniform", "value": 0.5}, T=0.02,
                       holder={"center": [0.0, 0.0], "t0": 0.02, "R": 0.1, "A": 1.0})
    assert cli.main(["holder", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    assert "degenerate ω" in capsys.readouterr().err


def test_contraction_identical_data(tmp_path):
    cfg = with_changes(initial_hat=SMALL["initial"], contraction={"samples": 5})
    out = tmp_path / "o"
    assert cli.main(["contraction", "--config", write_config(tmp_path, cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "contraction.json").read_text())
    assert all(row["D"] == 0 for row in rep["terms"])
    check_manifest(out)


def test_contraction_perturbation_has_requested_distance():
    cfg = cli.ExperimentConfig.from_dict(with_changes(contraction={"shift": [0.3, 0.0], "l1": 1e-3}))
    u0 = cli.build_initial(cfg)
    uh = cli._perturbed(cfg, u0, cfg.sections["contraction"])
    g = cfg.grid
    assert np.sum(np.abs(uh - u0)) * g.cell_volume == pytest.approx(1e-3, rel=1e-12)
    assert np.sum(uh) == pytest.approx(np.sum(u0), rel=1e-13)
    assert uh.min() >= 0


def test_holder_outside_trajectory_is_config_error(tmp_path, capsys):
    cfg = with_changes(holder={"center": [0.0, 0.0], "t0": 0.01, "R": 1.0, "A": 1.0})
    assert cli.main(["holder", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    assert "starts before the trajectory" in capsys.readouterr().err


def test_energy_audit_command(tmp_path):
    cfg = with_changes(energy={"r": 1.0, "t1": 0.0, "t2": 0.01, "k": 12.5, "sign": "-"})
    out = tmp_path / "o"
    assert cli.main(["energy-audit", "--config", write_config(tmp_path, cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "energy.json").read_text())
    assert rep["op"] == "energy_audit" and rep["empirical_constants"]["C_emp"] > 0


def test_energy_audit_needs_section(tmp_path):
    assert cli.main(["energy-audit", "--config", write_config(tmp_path, SMALL), "--out", str(tmp_path / "o")]) == 2


def test_sobolev_command(tmp_path):
    cfg = with_changes(grid={"n": 3, "L": 2.0, "N": 16}, T=None, snapshots=[])
    del cfg["T"]
    out = tmp_path / "o"
    assert cli.main(["sobolev", "--config", write_config(tmp_path, cfg), "--out", str(out)]) == 0
    assert json.loads((out / "sobolev.json").read_text())["empirical_constants"]["ratio_3_1"] > 0
    assert cli.main(["sobolev", "--config", write_config(tmp_path, SMALL, "n2.json"), "--out", str(out)]) == 2


def test_multiple_configs_with_jobs(tmp_path):
    a = write_config(tmp_path, SMALL, "first.json")
    b = write_config(tmp_path, with_changes(initial={"profile": "zero"}), "second.json")
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", a, b, "--jobs", "2", "--out", str(out)]) == 0
    assert (out / "00_first" / "manifest.json").is_file() and (out / "01_second" / "manifest.json").is_file()
    assert cli.main(["simulate", "--config", a, "--jobs", "0", "--out", str(out)]) == 2


def test_memory_guard_maps_to_config_error(tmp_path, monkeypatch):
    monkeypatch.setenv("KELSIM_MAX_MEM", "1000")
    assert cli.main(["simulate", "--config", write_config(tmp_path, SMALL), "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("flags,code", [([True, True], 0), ([True, False], 1)])
def test_validate_exit_code_follows_checks(tmp_path, monkeypatch, capsys, flags, code):
    fake = [{"name": f"c{i}", "passed": f, "summary": "s", "values": {}} for i, f in enumerate(flags)]
    monkeypatch.setattr(validation, "run_all", lambda jobs=1: fake)
    assert cli.main(["validate", "--out", str(tmp_path)]) == code
    lines = capsys.readouterr().out.splitlines()
    assert lines == [f"{'PASS' if f else 'FAIL'} c{i}: s" for i, f in enumerate(flags)]
    rep = json.loads((tmp_path / "validate.json").read_text())
    assert rep["empirical_constants"] == {"passed": sum(flags), "total": len(flags)}
    check_manifest(tmp_path)


def test_canonical_json_is_stable():
    obj = {"b": [1.0, float("nan"), np.float64(0.1)], "a": np.arange(2), "c": float("-inf")}
    text = report.canonical_json(obj)
    assert text == report.canonical_json(json.loads(text) | {"a": [0, 1]})
    assert json.loads(text) == {"a": [0, 1], "b": [1.0, "nan", 0.1], "c": "-inf"}


def test_simulate_writes_weak_form_report(tmp_path):
    cfg = with_changes(weak_form={"tests": 3}, seed=5)
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", write_config(tmp_path, cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "weak_form.json").read_text())
    assert len(rep["terms"]) == 3 and rep["empirical_constants"]["residual"] < 0.1
    check_manifest(out)
