"""Command line runner: ``hjnet <subcommand> CONFIG [--out DIR]``.

Configs are YAML or JSON documents.  Every run writes ``manifest.json`` to
the output directory (also on failure) and exits with 0 on success, 2 for
configuration problems, 3 for solver failures and 4 for violated data
invariants.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvariantViolation, SolverFailure

logger = logging.getLogger("hjnet")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT = 0, 2, 3, 4


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# config helpers


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text()
    try:
        if p.suffix in (".yaml", ".yml"):
            import yaml

            doc = yaml.safe_load(text)
        else:
            doc = json.loads(text)
    except Exception as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    doc["_base"] = str(p.parent)
    return doc


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"missing config key {key!r}")
    return cfg[key]


def _network(cfg: dict):
    from .network import build_network, load_network

    spec = _require(cfg, "network")
    if isinstance(spec, str):
        p = Path(spec)
        if not p.is_absolute():
            p = Path(cfg.get("_base", ".")) / p
        if not p.is_file():
            raise ConfigError(f"network file not found: {p}")
        return load_network(p)
    if isinstance(spec, dict) and "edges" in spec:
        verts = spec.get("vertices")
        return build_network(spec["edges"], len(verts) if isinstance(verts, list) else verts)
    raise ConfigError("network must be a file path or a mapping with 'edges'")


def _mesh(cfg: dict, net):
    from .network import Mesh

    m = cfg.get("mesh", {"h_max": 0.05})
    if "n" in m:
        return Mesh.uniform(net, n=int(m["n"]))
    return Mesh.uniform(net, h_max=float(m.get("h_max", 0.05)))


def scalar_field(spec):
    """Named 1-d profiles ``(edge, y) -> values`` (no code evaluation)."""
    if spec is None:
        return lambda e, y: 0.0 * y
    if isinstance(spec, (int, float)):
        return lambda e, y: float(spec) + 0.0 * y
    kind = spec.get("kind", "zero")
    A = float(spec.get("amplitude", 1.0))
    k = float(spec.get("frequency", 1.0))
    ph = float(spec.get("edge_phase", 0.0))
    if kind == "zero":
        return lambda e, y: 0.0 * y
    if kind == "constant":
        v = float(spec.get("value", A))
        return lambda e, y: v + 0.0 * y
    if kind == "cos":
        return lambda e, y: A * np.cos(2 * np.pi * k * y + ph * e)
    if kind == "sin":
        return lambda e, y: A * np.sin(2 * np.pi * k * y + ph * e)
    raise ConfigError(f"unknown field kind {kind!r}")


def control_problem(spec: dict):
    from .hamiltonian import constant_problem, quadratic_problem, single_control_problem

    fam = spec.get("family", "quadratic")
    if fam == "constant":
        return constant_problem(float(spec.get("c", 0.0)))
    if fam == "quadratic":
        return quadratic_problem(int(spec.get("n_controls", 21)), float(spec.get("amax", 1.0)),
                                 potential=scalar_field(spec.get("potential")),
                                 drift_shift=scalar_field(spec.get("drift_shift")))
    if fam == "linear":
        return single_control_problem(scalar_field(spec.get("drift")), scalar_field(spec.get("cost")))
    raise ConfigError(f"unknown control family {fam!r}")


def coupling(spec):
    from .hamiltonian import smoothed_density_coupling, zero_coupling

    if not spec or spec.get("kind", "zero") == "zero":
        return zero_coupling()
    if spec["kind"] == "smoothed_density":
        return smoothed_density_coupling(float(spec.get("strength", 0.05)), float(spec.get("width", 0.2)))
    raise ConfigError(f"unknown coupling kind {spec['kind']!r}")


def initial_measure(spec, mesh):
    from .fokker_planck import Measure

    spec = spec or {"kind": "uniform"}
    kind = spec.get("kind", "uniform")
    if kind == "uniform":
        return Measure.uniform(mesh)
    if kind == "bump":
        edge = int(spec.get("edge", 0))
        c, w = float(spec.get("center", 0.5)), float(spec.get("width", 0.1))
        floor = float(spec.get("floor", 1e-3))
        return Measure.from_density(mesh, lambda a, y: (a == edge) * np.exp(-0.5 * ((y - c) / w) ** 2) + floor)
    raise ConfigError(f"unknown initial measure kind {kind!r}")


def cell_control(spec: dict):
    from .homogenization import constant_cell_control, quadratic_cell_control

    fam = spec.get("family", "quadratic")
    if fam == "constant":
        return constant_cell_control(float(spec.get("c", 0.0)))
    if fam != "quadratic":
        raise ConfigError(f"unknown cell control family {fam!r}")
    pot = spec.get("potential", {}) or {}
    osc = spec.get("oscillation", {}) or {}
    sh = spec.get("drift_shift", {}) or {}
    pa, pk = float(pot.get("amplitude", 0.0)), float(pot.get("frequency", 1.0))
    oa, ok = float(osc.get("amplitude", 0.0)), float(osc.get("frequency", 1.0))
    sa, sk = float(sh.get("amplitude", 0.0)), float(sh.get("frequency", 1.0))
    return quadratic_cell_control(
        int(spec.get("n_controls", 21)), float(spec.get("amax", 1.0)),
        potential=lambda x: pa * np.cos(2 * np.pi * pk * x[0]),
        oscillation=lambda k, y: oa * np.cos(2 * np.pi * ok * y),
        drift_shift=lambda x, k, y: sa * np.sin(2 * np.pi * sk * y),
    )


def lattice_spec(spec: dict, M: int = 4):
    from .homogenization import LatticeSpec, default_gamma

    dim = int(spec.get("dim", 1))
    mu = tuple(float(m) for m in spec.get("mu", [1.0] * dim))
    gamma = spec.get("gamma")
    return LatticeSpec(dim, M, mu, tuple(gamma) if gamma else default_gamma(mu))


# ---------------------------------------------------------------------------
# output


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return str(x)


def _grid_rows(v):
    for a, vals in enumerate(v.values):
        y = v.mesh.abscissae(a)
        for yy, vv in zip(y, vals):
            yield a, float(yy), float(vv)


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve_hjb(cfg, out: Path) -> dict:
    from .hjb import solve_discounted, solve_ergodic

    net = _network(cfg)
    mesh = _mesh(cfg, net)
    cp = control_problem(cfg.get("control", {}))
    lam = float(cfg.get("lam", 0.0))
    tol = float(cfg.get("tol", 1e-10))
    scheme = cfg.get("vertex_scheme", "balance")
    if lam > 0:
        s = solve_discounted(mesh, cp, None, lam, tol=tol, vertex_scheme=scheme)
        res = {"lam": lam, "residual": s.residual, "iterations": s.iterations, "status": s.status}
    else:
        s = solve_ergodic(mesh, cp, mode=cfg.get("mode", "direct"), tol=tol, vertex_scheme=scheme)
        res = {"rho": s.rho, "residual": s.residual, "kirchhoff_residual": s.kirchhoff_residual,
               "iterations": s.iterations, "status": s.status, "mode": s.mode}
    res["sup_v"] = s.v.sup()
    _write_csv(out / "solution.csv", ["edge", "y", "v"], _grid_rows(s.v))
    _write_json(out / "result.json", res)
    return res


def cmd_solve_fp(cfg, out: Path) -> dict:
    from .fokker_planck import solve_fp

    net = _network(cfg)
    mesh = _mesh(cfg, net)
    m0 = initial_measure(cfg.get("m0"), mesh)
    drift = scalar_field(cfg.get("drift"))
    path = solve_fp(mesh, drift, m0, float(_require(cfg, "T")), float(_require(cfg, "dt")))
    every = max(1, int(cfg.get("save_every", 1)))
    rows = []
    for k in range(0, len(path), every):
        for node, val in enumerate(path[k].vector):
            rows.append((float(path.times[k]), node, float(val)))
    _write_csv(out / "path.csv", ["t", "node", "value"], rows)
    d = path.diagnostics
    _write_csv(out / "diagnostics.csv", ["t", "mass", "l2_sq", "h1_sq"],
               zip(path.times, d["mass"], d["l2_sq"], d["h1_sq"]))
    res = {"steps": len(path) - 1, "max_mass_error": float(np.abs(d["mass"] - 1).max()),
           "min_value": path.min_density(), "energy": d["energy"]}
    _write_json(out / "result.json", res)
    return res


def cmd_solve_mfg(cfg, out: Path) -> dict:
    from .mfg import solve_mfg, verify_time_holder

    net = _network(cfg)
    mesh = _mesh(cfg, net)
    cp = control_problem(cfg.get("control", {}))
    F = coupling(cfg.get("coupling"))
    m0 = initial_measure(cfg.get("m0"), mesh)
    sol = solve_mfg(mesh, cp, F, m0, float(_require(cfg, "T")), float(_require(cfg, "dt")),
                    tol=float(cfg.get("tol", 1e-6)), max_iter=int(cfg.get("max_iter", 50)),
                    omega=float(cfg.get("omega", 0.5)))
    _write_csv(out / "rho.csv", ["t", "rho"], zip(sol.times, sol.rho))
    _write_csv(out / "iterations.csv", ["iteration", "w1_step"],
               [(h["iteration"], h["step"]) for h in sol.history])
    rows = [(float(t), node, float(v)) for t, m in zip(sol.times, sol.path.measures) for node, v in enumerate(m.vector)]
    _write_csv(out / "density.csv", ["t", "node", "value"], rows)
    urows = [(float(t), a, y, v) for t, s in zip(sol.times, sol.hj) for a, y, v in _grid_rows(s.v)]
    _write_csv(out / "value.csv", ["t", "edge", "y", "u"], urows)
    holder = verify_time_holder(sol)
    res = {"converged": sol.converged, "iterations": sol.iterations, "residual": sol.residual, "holder": holder}
    _write_json(out / "result.json", res)
    if not sol.converged:
        raise SolverFailure(f"fixed point not reached after {sol.iterations} iterations")
    return res


def cmd_cont_dep(cfg, out: Path) -> dict:
    from .experiments import FAMILIES, c2_dependence_experiment, linf_dependence_experiment, ratio_summary

    net = _network(cfg)
    mesh = _mesh(cfg, net)
    name = cfg.get("family", "drift")
    if name not in FAMILIES:
        raise ConfigError(f"unknown perturbation family {name!r}")
    fam = FAMILIES[name](**cfg.get("family_params", {}))
    scales = [float(s) for s in cfg.get("scales", [1e-1, 1e-2, 1e-3, 1e-4])]
    lams = cfg.get("lam", 0.0)
    lams = [float(l) for l in (lams if isinstance(lams, list) else [lams])]
    variant = cfg.get("variant", "c2")
    summaries = []
    rows = []
    for lam in lams:
        if variant == "c2":
            tab = c2_dependence_experiment(mesh, fam, lam, scales)
        elif variant == "linf":
            tab = linf_dependence_experiment(mesh, fam, lam, scales)
        else:
            raise ConfigError("variant must be 'c2' or 'linf'")
        rows += tab.rows
        summaries.append({"lam": lam, **ratio_summary(tab)})
    from .experiments import COLUMNS

    _write_csv(out / "dependence.csv", COLUMNS, [[r[c] for c in COLUMNS] for r in rows])
    res = {"family": name, "variant": variant, "summary": summaries}
    _write_json(out / "result.json", res)
    return res


def cmd_homogenize(cfg, out: Path) -> dict:
    from .homogenization import rate_experiment

    spec = lattice_spec(cfg.get("lattice", {}))
    cc = cell_control(cfg.get("control", {}))
    eps = [float(e) for e in cfg.get("eps", [1 / 8, 1 / 16, 1 / 32, 1 / 64])]
    tab = rate_experiment(cc, spec, eps, G=cfg.get("G"), n_per_edge=int(cfg.get("n_per_edge", 16)),
                          n_quad=int(cfg.get("n_quad", 64)))
    _write_csv(out / "rate.csv", ["eps", "error"], [(r["eps"], r["error"]) for r in tab.rows()])
    res = {"slope": tab.slope, "constant": tab.constant, "decreasing": tab.decreasing}
    _write_json(out / "result.json", res)
    return res


def cmd_cell_check(cfg, out: Path) -> dict:
    from .homogenization import EffectiveQuery, effective_hamiltonian, solve_cell_problem

    spec = lattice_spec(cfg.get("lattice", {}))
    cc = cell_control(cfg.get("control", {}))
    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    n = int(cfg.get("n", 1024))
    rows = []
    for i in range(int(cfg.get("queries", 50))):
        N = spec.dim
        A = rng.normal(size=(N, N))
        q = EffectiveQuery(rng.uniform(0, 1, N), rng.normal(size=N), A + A.T)
        hb = effective_hamiltonian(cc, spec, q, n_quad=n)
        _, rho = solve_cell_problem(cc, spec, q, n=n)
        rows.append((i, hb, rho, abs(hb + rho)))
    _write_csv(out / "cell_check.csv", ["query", "Hbar", "rho_cell", "gap"], rows)
    res = {"queries": len(rows), "max_gap": max(r[3] for r in rows)}
    _write_json(out / "result.json", res)
    return res


def cmd_wasserstein(cfg, out: Path) -> dict:
    from .transport import AtomizedMeasure, wasserstein1

    net = _network(cfg)

    def atoms(spec):
        return AtomizedMeasure(net, tuple(tuple(p) for p in spec["points"]), np.asarray(spec["masses"], float))

    s, t = atoms(_require(cfg, "sigma")), atoms(_require(cfg, "tau"))
    res = {"w1": wasserstein1(s, t, method=cfg.get("method", "flow"))}
    _write_json(out / "result.json", res)
    return res


COMMANDS = {
    "solve-hjb": cmd_solve_hjb,
    "solve-fp": cmd_solve_fp,
    "solve-mfg": cmd_solve_mfg,
    "cont-dep": cmd_cont_dep,
    "homogenize": cmd_homogenize,
    "cell-check": cmd_cell_check,
    "wasserstein": cmd_wasserstein,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hjnet", description="HJ, Fokker-Planck and MFG solvers on networks.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", help="YAML or JSON config file")
        s.add_argument("--out", default=None, help="output directory (default: config 'output' or ./out)")
    return p


def run(command: str, config_path: str, out_dir: str | None = None) -> int:
    t0 = time.perf_counter()
    manifest = {
        "command": command,
        "config_path": str(config_path),
        "versions": {"hjnet": __version__, "python": platform.python_version(), "numpy": np.__version__},
    }
    try:
        import scipy

        manifest["versions"]["scipy"] = scipy.__version__
    except ImportError:  # pragma: no cover
        pass
    out = Path(out_dir or "out")
    code = EXIT_OK
    try:
        try:
            cfg = load_config(config_path)
        except ConfigError:
            out.mkdir(parents=True, exist_ok=True)
            raise
        out = Path(out_dir or cfg.get("output", "out"))
        out.mkdir(parents=True, exist_ok=True)
        manifest["config"] = {k: v for k, v in cfg.items() if k != "_base"}
        manifest["result"] = COMMANDS[command](cfg, out)
        manifest["status"] = "ok"
    except ConfigError as exc:
        code, manifest["status"], manifest["error"] = EXIT_CONFIG, "config_error", str(exc)
    except InvariantViolation as exc:
        code, manifest["status"], manifest["error"] = EXIT_INVARIANT, "invariant_violation", f"{type(exc).__name__}: {exc}"
    except SolverFailure as exc:
        code, manifest["status"], manifest["error"] = EXIT_SOLVER, "solver_failure", f"{type(exc).__name__}: {exc}"
    except (KeyError, TypeError, ValueError) as exc:
        code, manifest["status"], manifest["error"] = EXIT_CONFIG, "config_error", f"{type(exc).__name__}: {exc}"
        logger.debug("%s", traceback.format_exc())
    finally:
        manifest["exit_code"] = code
        manifest["wall_time_s"] = time.perf_counter() - t0
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "manifest.json", manifest)
    if code:
        print(f"hjnet {command}: {manifest['error']}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
