"""Command-line front end: ``kelsim <verb> --config PATH --out DIR``.

Exit codes: 0 success, 1 a validation tolerance was violated, 2 configuration
error, 3 the run stopped on the blow-up guard, 4 it stopped on boundary contact,
5 it ran out of its step budget.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from kelsim import diagnostics as diag
from kelsim import report, system
from kelsim.density import CflConfig, ModelParams
from kelsim.grid import GridSpec, integrate, lp_norm, read_field, write_field
from kelsim.kernels import CutoffSpec
from kelsim.oracles import BarenblattSpec, barenblatt_on_grid

log = logging.getLogger("kelsim")

CONFIG_VERSION = 1
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_BLOWUP, EXIT_BOUNDARY, EXIT_STEPS = 0, 1, 2, 3, 4, 5
VERBS = ("simulate", "contraction", "holder", "energy-audit", "sobolev", "validate")

TOP_KEYS = {
    "version", "params", "grid", "initial", "initial_hat", "v_initial", "T", "snapshots", "seed",
    "cfl", "blowup_factor", "max_steps", "contraction", "holder", "energy", "sobolev", "weak_form", "out",
}
SECTION_KEYS = {
    "params": {"m", "q", "gamma", "delta", "chi"},
    "grid": {"n", "L", "N"},
    "contraction": {"samples", "eps", "shift", "l1"},
    "holder": {"center", "t0", "R", "A", "J", "eps"},
    "energy": {"center", "r", "t1", "t2", "k", "sign", "ramp", "a1", "a2"},
    "sobolev": {"l", "center"},
    "weak_form": {"tests"},
}
PROFILE_KEYS = {
    "zero": set(),
    "uniform": {"value"},
    "bump": {"amplitude", "radius", "center"},
    "gaussian": {"mass", "sigma", "center", "cut"},
    "barenblatt": {"mass", "t0"},
    "field": {"path"},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    params: ModelParams
    grid: GridSpec
    initial: dict
    T: float | None = None
    snapshots: list = field(default_factory=list)
    seed: int = 0
    cfl: float = 0.4
    blowup_factor: float = 1e6
    max_steps: int | None = None
    initial_hat: dict | None = None
    v_initial: dict | None = None
    sections: dict = field(default_factory=dict)
    out: str | None = None
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(cls, raw: dict, base_dir=Path(".")) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if raw.get("version") != CONFIG_VERSION:
            raise ConfigError(f"config version must be {CONFIG_VERSION}, got {raw.get('version')!r}")
        for name, keys in SECTION_KEYS.items():
            sec = raw.get(name)
            if sec is None:
                continue
            if not isinstance(sec, dict):
                raise ConfigError(f"section {name!r} must be an object")
            bad = set(sec) - keys
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
        for req in ("params", "grid", "initial"):
            if req not in raw:
                raise ConfigError(f"missing required section {req!r}")
        try:
            params = ModelParams(**raw["params"])
            grid = GridSpec(**raw["grid"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        for key in ("initial", "initial_hat", "v_initial"):
            if raw.get(key) is not None:
                _check_profile(raw[key], key, base_dir)
        T = raw.get("T")
        if T is not None and not (isinstance(T, (int, float)) and T > 0):
            raise ConfigError(f"T must be a positive number, got {T!r}")
        snaps = raw.get("snapshots", [])
        if isinstance(snaps, dict):
            if set(snaps) != {"count"} or T is None:
                raise ConfigError("snapshots object must be {'count': k} and needs T")
            snaps = [float(x) for x in np.linspace(0.0, T, int(snaps["count"]))]
        elif not isinstance(snaps, list):
            raise ConfigError("snapshots must be a list of times or {'count': k}")
        try:
            CflConfig(raw.get("cfl", 0.4))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(
            params=params,
            grid=grid,
            initial=raw["initial"],
            T=None if T is None else float(T),
            snapshots=[float(s) for s in snaps],
            seed=int(raw.get("seed", 0)),
            cfl=float(raw.get("cfl", 0.4)),
            blowup_factor=float(raw.get("blowup_factor", 1e6)),
            max_steps=raw.get("max_steps"),
            initial_hat=raw.get("initial_hat"),
            v_initial=raw.get("v_initial"),
            sections={k: raw[k] for k in SECTION_KEYS if k not in ("params", "grid") and k in raw},
            out=raw.get("out"),
            base_dir=Path(base_dir),
        )

    def need_T(self) -> float:
        if self.T is None:
            raise ConfigError("this command needs T")
        return self.T

    def section(self, name: str) -> dict:
        if name not in self.sections:
            raise ConfigError(f"this command needs a {name!r} section")
        return self.sections[name]


def _check_profile(spec, key, base_dir):
    if not isinstance(spec, dict) or "profile" not in spec:
        raise ConfigError(f"{key} must be an object with a 'profile' field")
    name = spec["profile"]
    if name not in PROFILE_KEYS:
        raise ConfigError(f"unknown profile {name!r} in {key}")
    bad = set(spec) - PROFILE_KEYS[name] - {"profile"}
    if bad:
        raise ConfigError(f"unknown keys for profile {name!r}: {sorted(bad)}")
    if name == "field":
        path = Path(base_dir) / spec.get("path", "")
        if not path.is_file():
            raise ConfigError(f"field dump {path} does not exist")


def _bump(s):
    inside = s < 1
    ss = np.where(inside, s, 0.0)
    return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - ss**2)), 0.0)


def build_profile(spec: dict, grid: GridSpec, base_dir=Path(".")) -> np.ndarray:
    name = spec["profile"]
    center = spec.get("center")
    if name == "zero":
        return np.zeros(grid.shape)
    if name == "uniform":
        return np.full(grid.shape, float(spec.get("value", 1.0)))
    if name == "bump":
        return float(spec.get("amplitude", 1.0)) * _bump(grid.radius(center) / float(spec.get("radius", 1.0)))
    if name == "gaussian":
        sigma = float(spec.get("sigma", 0.25))
        r = grid.radius(center)
        u = np.exp(-(r**2) / (2 * sigma**2))
        u[r > float(spec.get("cut", 4 * sigma))] = 0.0
        return float(spec.get("mass", 1.0)) * u / integrate(u, grid)
    if name == "barenblatt":
        raise ConfigError("barenblatt profile needs the model exponent; use build_initial")
    if name == "field":
        g, values, _ = read_field(Path(base_dir) / spec["path"])
        if g != grid:
            raise ConfigError(f"field dump grid {g} differs from config grid {grid}")
        return values
    raise ConfigError(f"unknown profile {name!r}")


def build_initial(cfg: ExperimentConfig, key: str = "initial") -> np.ndarray:
    spec = getattr(cfg, key)
    if spec["profile"] == "barenblatt":
        b = BarenblattSpec(cfg.params.m, cfg.grid.n, float(spec.get("mass", 1.0)), float(spec.get("t0", 0.1)))
        return barenblatt_on_grid(cfg.grid, 0.0, b)
    return build_profile(spec, cfg.grid, cfg.base_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(raw, path.parent)


# ---------------------------------------------------------------------------
# presets

_COUPLED = {
    "version": 1,
    "params": {"m": 2, "q": 2, "gamma": 1.0, "delta": 0, "chi": 1},
    "grid": {"n": 2, "L": 4.0, "N": 128},
    "initial": {"profile": "bump", "amplitude": 5.0, "radius": 1.2},
    "T": 0.05,
    "snapshots": {"count": 201},
    "energy": {"r": 1.0, "t1": 0.0, "t2": 0.05, "k": 12.5, "sign": "-"},
    "contraction": {"samples": 11, "shift": [0.3, 0.0], "l1": 1e-3},
}

PRESETS = {
    "zero": {
        "version": 1,
        "params": {"m": 2, "q": 2, "gamma": 1.0},
        "grid": {"n": 2, "L": 2.0, "N": 32},
        "initial": {"profile": "zero"},
        "T": 0.1,
        "snapshots": {"count": 3},
    },
    "coupled": _COUPLED,
    "barenblatt": {
        "version": 1,
        "params": {"m": 2, "q": 2, "gamma": 1.0, "chi": 0},
        "grid": {"n": 1, "L": 3.0, "N": 512},
        "initial": {"profile": "barenblatt", "mass": 1.0, "t0": 0.1},
        "T": 1.0,
        "snapshots": [float(x) for x in np.linspace(0.5, 1.0, 1001)],
        "holder": {"center": [1.0], "t0": 1.0, "R": 0.4, "A": 0.005, "J": 4},
    },
    "blowup": {
        "version": 1,
        "params": {"m": 1.5, "q": 3, "gamma": 1.0},
        "grid": {"n": 2, "L": 2.0, "N": 64},
        "initial": {"profile": "gaussian", "mass": 40.0, "sigma": 0.25, "cut": 0.8},
        "T": 0.5,
        "blowup_factor": 20.0,
        "max_steps": 50000,
    },
}


def preset_config(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ExperimentConfig.from_dict(copy.deepcopy(PRESETS[name]))


# ---------------------------------------------------------------------------
# commands


def _simulate(cfg: ExperimentConfig) -> system.Trajectory:
    u0 = build_initial(cfg)
    v0 = build_profile(cfg.v_initial, cfg.grid, cfg.base_dir) if cfg.v_initial else None
    return system.run(
        cfg.params,
        system.InitialData(u0, v0),
        cfg.grid,
        cfg.need_T(),
        cfg.snapshots,
        CflConfig(cfg.cfl),
        blowup_factor=cfg.blowup_factor,
        max_steps=cfg.max_steps,
    )


def _params_dict(p: ModelParams) -> dict:
    return {"m": p.m, "q": p.q, "gamma": p.gamma, "delta": p.delta, "chi": p.chi}


def export_trajectory(traj: system.Trajectory, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    fields = []
    for i, (t, u, v) in enumerate(zip(traj.times, traj.u, traj.v)):
        write_field(out / f"u_{i:05d}.kfd", traj.grid, u, t)
        write_field(out / f"v_{i:05d}.kfd", traj.grid, v, t)
        fields.append({"index": i, "t": t})
    masses = traj.masses
    report.write_csv(out / "mass.csv", ["t", "mass"], zip(traj.times, masses))
    report.write_csv(
        out / "norms.csv",
        ["t", "u_l1", "u_l2", "u_linf", "v_linf"],
        [(t, lp_norm(u, traj.grid, 1), lp_norm(u, traj.grid, 2), float(u.max()), float(np.abs(v).max()))
         for t, u, v in zip(traj.times, traj.u, traj.v)],
    )
    report.write_json(
        out / "trajectory.json",
        {
            "op": "simulate",
            "inputs": {"params": _params_dict(traj.params), "grid": {"n": traj.grid.n, "L": traj.grid.L, "N": traj.grid.N}},
            "terms": fields,
            "empirical_constants": {"mass": masses, "mass_drift": traj.mass_drift(), "final_t": traj.final_t,
                                    "steps": traj.steps},
            "flags": traj.warnings,
            "status": traj.status,
            "annotations": traj.params.annotations(traj.grid.n),
        },
    )


def _status_code(traj: system.Trajectory) -> int:
    return {
        system.COMPLETED: EXIT_OK,
        system.BLOWUP: EXIT_BLOWUP,
        system.BOUNDARY: EXIT_BOUNDARY,
        system.STEP_LIMIT: EXIT_STEPS,
    }[traj.status]


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> int:
    traj = _simulate(cfg)
    export_trajectory(traj, out)
    if "weak_form" in cfg.sections and traj.status == system.COMPLETED:
        count = int(cfg.sections["weak_form"].get("tests", 8))
        bank = system.default_test_bank(cfg.grid, traj.final_t, cfg.seed, count)
        report.write_json(out / "weak_form.json", system.weak_form_residual(traj, bank))
    report.write_manifest(out, {"command": "simulate", "status": traj.status})
    return _status_code(traj)


def _perturbed(cfg: ExperimentConfig, u0: np.ndarray, sec: dict) -> np.ndarray:
    """u0 + s (u0(x - shift) - u0), with s set so the L1 distance equals ``l1`` (mass neutral)."""
    if cfg.initial_hat is not None:
        return build_initial(cfg, "initial_hat")
    shift = np.broadcast_to(np.asarray(sec.get("shift", 0.0), dtype=float), (cfg.grid.n,))
    spec = dict(cfg.initial)
    if "center" in spec or spec["profile"] in ("bump", "gaussian"):
        c = np.broadcast_to(np.asarray(spec.get("center", 0.0), dtype=float), (cfg.grid.n,))
        spec["center"] = list(c + shift)
        moved = build_profile(spec, cfg.grid, cfg.base_dir)
        # resampling off the grid changes the discrete mass slightly; restore it exactly
        moved_mass = integrate(moved, cfg.grid)
        if moved_mass > 0:
            moved = moved * (integrate(u0, cfg.grid) / moved_mass)
    else:
        moved = u0
        for d, s in enumerate(shift):
            moved = np.roll(moved, int(round(s / cfg.grid.h)), axis=d)
    diff = moved - u0
    dist = integrate(np.abs(diff), cfg.grid)
    if dist == 0:
        return u0.copy()
    s = min(float(sec.get("l1", 1e-3)) / dist, 1.0)
    return u0 + s * diff


def cmd_contraction(cfg: ExperimentConfig, out: Path) -> int:
    sec = cfg.section("contraction")
    T = cfg.need_T()
    u0 = build_initial(cfg)
    uh = _perturbed(cfg, u0, sec)
    samples = np.linspace(0.0, T, int(sec.get("samples", 11)))
    res = diag.l1_contraction_experiment(
        cfg.params, cfg.grid, u0, uh, T, samples, cfl=CflConfig(cfg.cfl), eps=float(sec.get("eps", 1.0))
    )
    rep = res.to_dict()
    report.write_json(out / "contraction.json", rep)
    report.write_csv(out / "contraction.csv", ["t", "D"], zip(res.times, res.D))
    report.write_manifest(out, {"command": "contraction"})
    return EXIT_OK


def cmd_holder(cfg: ExperimentConfig, out: Path) -> int:
    sec = cfg.section("holder")
    traj = _simulate(cfg)
    try:
        fit = diag.estimate_holder_exponent(
            traj,
            sec.get("center", [0.0] * cfg.grid.n),
            float(sec.get("t0", traj.final_t)),
            float(sec["R"]),
            float(sec["A"]),
            int(sec.get("J", 4)),
            float(sec.get("eps", 0.1)),
        )
    except diag.DegenerateCylinder as exc:
        print(f"kelsim holder: degenerate ω: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report.write_json(out / "holder.json", fit.to_dict())
    report.write_csv(out / "holder.csv", ["r", "osc"], zip(fit.radii, fit.oscillations))
    report.write_manifest(out, {"command": "holder", "status": traj.status})
    return EXIT_OK


def cmd_energy_audit(cfg: ExperimentConfig, out: Path) -> int:
    sec = cfg.section("energy")
    traj = _simulate(cfg)
    rep = diag.energy_audit(
        traj,
        float(sec["r"]),
        float(sec["t1"]),
        float(sec["t2"]),
        float(sec["k"]),
        sec.get("sign", "-"),
        center=sec.get("center"),
        ramp=bool(sec.get("ramp", True)),
        a1=sec.get("a1"),
        a2=float(sec.get("a2", 2.0)),
    )
    report.write_json(out / "energy.json", rep.to_dict())
    report.write_manifest(out, {"command": "energy-audit", "status": traj.status})
    return EXIT_OK


def cmd_sobolev(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.grid.n != 3:
        raise ConfigError("sobolev check needs n = 3")
    sec = cfg.sections.get("sobolev", {})
    eta = CutoffSpec(float(sec["l"]), tuple(sec.get("center", [0.0] * 3))) if "l" in sec else None
    if cfg.T is None:
        rep = diag.sobolev_check([build_initial(cfg)], cfg.grid, eta=eta)
    else:
        traj = _simulate(cfg)
        times, us, _ = traj.with_initial()
        rep = diag.sobolev_check(list(us), cfg.grid, times, eta=eta)
    report.write_json(out / "sobolev.json", rep)
    report.write_manifest(out, {"command": "sobolev"})
    return EXIT_OK


def cmd_validate(out: Path, jobs: int = 1) -> int:
    """Oracle suite with the acceptance tolerances; nonzero exit if any check fails."""
    from kelsim import validation

    results = validation.run_all(jobs)
    ok = all(r["passed"] for r in results)
    report.write_json(
        out / "validate.json",
        {
            "op": "validate",
            "inputs": {"checks": [r["name"] for r in results]},
            "terms": results,
            "empirical_constants": {"passed": sum(r["passed"] for r in results), "total": len(results)},
            "flags": [r["name"] for r in results if not r["passed"]],
        },
    )
    report.write_manifest(out, {"command": "validate"})
    for r in results:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['name']}: {r['summary']}")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "simulate": cmd_simulate,
    "contraction": cmd_contraction,
    "holder": cmd_holder,
    "energy-audit": cmd_energy_audit,
    "sobolev": cmd_sobolev,
}


def _run_one(verb: str, source: str, is_preset: bool, out: str) -> int:
    try:
        cfg = preset_config(source) if is_preset else load_config(source)
        return COMMANDS[verb](cfg, Path(out))
    except ConfigError as exc:
        print(f"kelsim {verb}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except system.MemoryBudgetError as exc:
        print(f"kelsim {verb}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # precondition of a diagnostic (window, cylinder, radius) not met by the requested inputs
        print(f"kelsim {verb}: invalid request: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kelsim", description=__doc__.splitlines()[0])
    ap.add_argument("verb", choices=VERBS)
    ap.add_argument("--config", nargs="+", metavar="PATH", help="experiment config(s), JSON")
    ap.add_argument("--preset", nargs="+", metavar="NAME", choices=sorted(PRESETS), help="built-in configs")
    ap.add_argument("--out", default="kelsim-out", metavar="DIR")
    ap.add_argument("--jobs", type=int, default=1, metavar="K", help="run independent experiments concurrently")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    out = Path(args.out)
    if args.jobs < 1:
        print("kelsim: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.verb == "validate":
        return cmd_validate(out, args.jobs)
    sources = [(c, False) for c in args.config or []] + [(p, True) for p in args.preset or []]
    if not sources:
        print(f"kelsim {args.verb}: need --config or --preset", file=sys.stderr)
        return EXIT_CONFIG
    if len(sources) == 1:
        dirs = [out]
    else:
        dirs = [out / f"{i:02d}_{Path(s).stem}" for i, (s, _) in enumerate(sources)]
    tasks = [(args.verb, s, p, str(d)) for (s, p), d in zip(sources, dirs)]
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(_run_one, *zip(*tasks)))
    else:
        codes = [_run_one(*t) for t in tasks]
    # the most severe outcome wins: config errors, then blow-up, then boundary contact
    for code in (EXIT_CONFIG, EXIT_BLOWUP, EXIT_BOUNDARY, EXIT_STEPS, EXIT_FAIL):
        if code in codes:
            return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
