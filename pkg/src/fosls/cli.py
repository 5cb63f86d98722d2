"""Command-line front end: ``fosls solve|adapt|emulate|verify|report``.

Runs are configured by a TOML file::

    problem = "poisson"            # poisson, helmholtz, elasticity, heat, wave, ocp_poisson
    domain = "l_shape"             # unit_square, l_shape, spacetime_rect (or mesh_file = "...")
    refine = 0                     # uniform refinements of the initial mesh
    manufactured = "poisson_sine"  # optional closed-form solution (overrides [data])
    timing = true                  # false leaves the seconds column empty

    [coefficients]                 # k | lam, mu | a, b, c | lam_ocp
    [data]                         # f, g, u0, v0, sigma0, z as expressions in x, y (or t, x)
    [marking]   strategy = "doerfler", theta = 0.5
    [stop]      tol = 0.0, max_levels = 10, max_ndof (optional)
    [solver]    method = "direct", tol = 1e-10
    [emulate]   variant = "per_factor"
    [verify]    samples = 20, tol = 1e-10

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import mesh as meshmod
from .adapt import AfemError, ConvergenceRecord, LevelRecord, afem_run
from .fespace import make_product
from .fields import expression_field
from .lsq import SolverError, assemble, error_norm, estimate, ls_value, solve
from .manufactured import MANUFACTURED
from .nnemu import (deep_lsq_solve, export_nn, fosls_basis_net, import_nn, nn_local_residual_sq, nn_stats,
                    set_output_weights)
from .systems import make_system

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

PROBLEMS = ("poisson", "helmholtz", "elasticity", "heat", "wave", "ocp_poisson")
SPACETIME = ("heat", "wave")
_COEFFS = {
    "poisson": ("k",), "helmholtz": ("k",), "elasticity": ("lam", "mu"),
    "heat": ("a", "b", "c"), "wave": (), "ocp_poisson": ("lam_ocp",),
}
_DATA = {
    "poisson": {"f": 1, "g": 2}, "helmholtz": {"f": 1, "g": 2}, "elasticity": {"f": 2, "g": 4},
    "heat": {"f": 1, "u0": 1, "g": 1}, "wave": {"f": 1, "g": 1, "v0": 1, "sigma0": 1},
    "ocp_poisson": {"f": 1, "z": 1, "g_y": 2},
}
_SECTIONS = {"coefficients", "data", "marking", "stop", "solver", "emulate", "verify"}
_TOP = {"problem", "domain", "T", "mesh_file", "refine", "manufactured", "timing", "seed", "quad_degree",
        "save_meshes"} | _SECTIONS


class ConfigError(ValueError):
    pass


class RunConfig:
    """Validated run configuration."""

    def __init__(self, raw: dict, overrides: dict | None = None):
        raw = dict(raw)
        unknown = set(raw) - _TOP
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        for sec in _SECTIONS:
            if not isinstance(raw.get(sec, {}), dict):
                raise ConfigError(f"[{sec}] must be a table")
        self.raw = raw
        self.problem = raw.get("problem")
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {', '.join(PROBLEMS)} (got {self.problem!r})")
        self.spacetime = self.problem in SPACETIME
        self.domain = raw.get("domain", "spacetime_rect" if self.spacetime else "unit_square")
        self.T = float(raw.get("T", 1.0))
        self.mesh_file = raw.get("mesh_file")
        self.refine = int(raw.get("refine", 0))
        self.manufactured = raw.get("manufactured")
        self.timing = bool(raw.get("timing", True))
        self.save_meshes = bool(raw.get("save_meshes", False))
        self.seed = int(raw.get("seed", 0))
        self.quad_degree = raw.get("quad_degree")
        self.coefficients = dict(raw.get("coefficients", {}))
        self.data = dict(raw.get("data", {}))
        mk = dict(raw.get("marking", {}))
        self.strategy = mk.get("strategy", "doerfler")
        self.theta = float(mk.get("theta", mk.get("sigma", 0.5)))
        st = dict(raw.get("stop", {}))
        self.tol = float(st.get("tol", 0.0))
        self.max_levels = int(st.get("max_levels", 10))
        self.max_ndof = st.get("max_ndof")
        sv = dict(raw.get("solver", {}))
        self.method = sv.get("method", "direct")
        self.solver_tol = float(sv.get("tol", 1e-10))
        self.variant = dict(raw.get("emulate", {})).get("variant", "per_factor")
        vf = dict(raw.get("verify", {}))
        self.samples = int(vf.get("samples", 20))
        self.verify_tol = float(vf.get("tol", 1e-10))
        for key, val in (overrides or {}).items():
            if val is not None:
                setattr(self, key, val)
        self._validate()

    def _validate(self):
        if self.mesh_file is None and self.domain not in ("unit_square", "l_shape", "spacetime_rect"):
            raise ConfigError(f"unknown domain {self.domain!r}")
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if self.refine < 0 or self.max_levels < 1:
            raise ConfigError("refine must be >= 0 and max_levels >= 1")
        if self.strategy not in ("doerfler", "maximum", "uniform"):
            raise ConfigError(f"unknown marking strategy {self.strategy!r}")
        if self.strategy == "doerfler" and not 0 < self.theta <= 1:
            raise ConfigError("theta must lie in (0, 1]")
        if self.strategy == "maximum" and not 0 < self.theta < 1:
            raise ConfigError("sigma must lie in (0, 1)")
        if self.method not in ("direct", "cg"):
            raise ConfigError(f"unknown solver method {self.method!r}")
        if self.variant not in ("per_factor", "shared"):
            raise ConfigError(f"unknown emulation variant {self.variant!r}")
        if self.quad_degree is not None and int(self.quad_degree) < 0:
            raise ConfigError("quad_degree must be non-negative")
        if self.samples < 1:
            raise ConfigError("verify.samples must be positive")
        if self.manufactured is not None and self.manufactured not in MANUFACTURED:
            raise ConfigError(f"unknown manufactured solution {self.manufactured!r}")
        bad = set(self.coefficients) - set(_COEFFS[self.problem])
        if bad:
            raise ConfigError(f"coefficient(s) {sorted(bad)} do not apply to {self.problem}")
        bad = set(self.data) - set(_DATA[self.problem])
        if bad:
            raise ConfigError(f"data field(s) {sorted(bad)} do not apply to {self.problem}")

    # builders ---------------------------------------------------------------
    def build_mesh(self):
        if self.mesh_file:
            path = Path(self.mesh_file)
            mesh = meshmod.read_json(path) if path.suffix == ".json" else meshmod.read_triangle(path)
        elif self.domain == "spacetime_rect":
            mesh = meshmod.build_reference_mesh("spacetime_rect", self.T)
        else:
            mesh = meshmod.build_reference_mesh(self.domain)
        return meshmod.refine_uniform(mesh, self.refine) if self.refine else mesh

    def _field(self, value):
        return expression_field(value, self.spacetime)

    def build_system(self):
        """(system, exact jets or None)."""
        if self.manufactured:
            params = {}
            if self.manufactured.startswith("poisson"):
                params["k"] = float(self.coefficients.get("k", 0.0))
            elif self.manufactured.startswith("elasticity"):
                params = {k: float(self.coefficients.get(k, 1.0)) for k in ("lam", "mu")}
            man = MANUFACTURED[self.manufactured](**params)
            family = {"helmholtz": "poisson"}.get(man.system.tag, man.system.tag)
            if family != {"helmholtz": "poisson"}.get(self.problem, self.problem):
                raise ConfigError(f"manufactured solution {self.manufactured!r} is for {man.system.tag}")
            return man.system, man.exact
        params = {}
        for name in _COEFFS[self.problem]:
            if name in self.coefficients:
                v = self.coefficients[name]
                params[name] = self._field(v) if self.problem == "heat" else float(v)
        for name, n in _DATA[self.problem].items():
            if name not in self.data:
                continue
            v = self.data[name]
            if n == 1:
                params[name] = self._field(v)
            else:
                if not isinstance(v, list) or len(v) != n:
                    raise ConfigError(f"data.{name} needs a list of {n} expressions")
                params[name] = [self._field(e) for e in v]
        if self.problem in ("elasticity",):
            params.setdefault("lam", 1.0)
            params.setdefault("mu", 1.0)
        if self.problem == "ocp_poisson":
            params.setdefault("lam_ocp", 1.0)
        tag = self.problem
        if tag == "helmholtz":
            tag = "poisson"
        return make_system(tag, **params), None


def _level_record(sys_, space, u, exact, seconds):
    est = estimate(sys_, space, u)
    err = error_norm(sys_, space, u, exact) if exact is not None else None
    return LevelRecord(0, space.total_dim, est.eta, err, seconds, est.local), est


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    t0 = time.perf_counter()
    mesh = cfg.build_mesh()
    sys_, exact = cfg.build_system()
    space = make_product(mesh, sys_.tag)
    qd = None if cfg.quad_degree is None else int(cfg.quad_degree)
    u = solve(assemble(sys_, space, qd), cfg.method, cfg.solver_tol)
    rec, est = _level_record(sys_, space, u, exact, time.perf_counter() - t0)
    record = ConvergenceRecord([rec])
    ls = ls_value(sys_, space, u, qd)
    (out / "solution.json").write_text(json.dumps(
        {"problem": cfg.problem, "ndof": space.total_dim, "ls": ls, "coeffs": u.tolist()}))
    with open(out / "eta.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["element", "eta"])
        for k, e in enumerate(est.local):
            w.writerow([k, repr(float(e))])
    record.write_csv(out / "convergence.csv", cfg.timing)
    err = "" if rec.error is None else f" error={rec.error:.6e}"
    print(f"ndof={space.total_dim} eta={est.eta:.6e} ls={ls:.6e}{err}")
    return EXIT_OK


def cmd_adapt(cfg: RunConfig, out: Path) -> int:
    mesh = cfg.build_mesh()
    sys_, exact = cfg.build_system()
    try:
        record = afem_run(sys_, sys_.tag, mesh, cfg.strategy, cfg.theta, cfg.tol, cfg.max_levels,
                          None if cfg.max_ndof is None else int(cfg.max_ndof), exact, cfg.method,
                          keep_meshes=cfg.save_meshes)
    except AfemError as err:
        err.record.write_csv(out / "convergence.csv", cfg.timing)
        raise SolverError(str(err)) from err
    record.write_csv(out / "convergence.csv", cfg.timing)
    if cfg.save_meshes:
        (out / "meshes").mkdir(exist_ok=True)
        for lvl, m in enumerate(record.meshes):
            meshmod.write_json(m, out / "meshes" / f"level_{lvl:02d}.json")
    for r in record.levels:
        err = "" if r.error is None else f" error={r.error:.4e}"
        print(f"level={r.level} ndof={r.ndof} eta={r.eta:.6e}{err}")
    print(f"rate(last 4 levels) = {record.rate(4):.4f}  stop: {record.reason}")
    return EXIT_OK


def cmd_emulate(cfg: RunConfig, out: Path) -> int:
    mesh = cfg.build_mesh()
    sys_, _ = cfg.build_system()
    space = make_product(mesh, sys_.tag)
    fnet, ls_nn = deep_lsq_solve(sys_, space, cfg.variant, cfg.method)
    ls_fem = ls_value(sys_, space, fnet.coeffs)
    export_nn(fnet.net, out / "nn.json")
    meshmod.write_json(mesh, out / "mesh.json")
    (out / "coeffs.json").write_text(json.dumps({
        "problem": sys_.tag, "variant": cfg.variant, "coeffs": fnet.coeffs.tolist()}))
    stats = nn_stats(fnet.net)
    stats.update({"ls_fem": ls_fem, "ls_nn": ls_nn, "ndof": space.total_dim})
    (out / "stats.json").write_text(json.dumps(stats, indent=1))
    print(f"depth={stats['depth']} size={stats['size']} ndof={space.total_dim} ls_fem={ls_fem:.6e} ls_nn={ls_nn:.6e}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    try:
        net = import_nn(out / "nn.json")
        mesh = meshmod.read_json(out / "mesh.json")
        meta = json.loads((out / "coeffs.json").read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read emulation artifacts in {out}: {err}") from err
    sys_, _ = cfg.build_system()
    space = make_product(mesh, meta["problem"])
    coeffs = np.asarray(meta["coeffs"], dtype=float)
    if coeffs.shape != (space.total_dim,) or net.output_dim != space.ncomp:
        print(f"artifact mismatch: {len(coeffs)} coefficients for {space.total_dim} DOFs, "
              f"{net.output_dim} outputs for {space.ncomp} components")
        return EXIT_VERIFY
    rng = np.random.default_rng(cfg.seed)
    lam = rng.dirichlet(np.ones(3), size=cfg.samples)
    x = mesh.to_physical(np.arange(mesh.n_triangles), lam).reshape(-1, 2)
    tris = np.repeat(np.arange(mesh.n_triangles), cfg.samples)
    dev = float(np.abs(net.realize(x) - space.evaluate(coeffs, x, tris)[:, :, 0]).max())
    # LS value from the stored network, not the rebuilt one
    fnet = set_output_weights(fosls_basis_net(space, meta.get("variant", "per_factor")), coeffs)
    wrapped = _with_net(fnet, net)
    ls_nn = float(nn_local_residual_sq(sys_, wrapped).sum())
    ls_fem = ls_value(sys_, space, coeffs)
    gap = abs(ls_nn - ls_fem) / max(1.0, ls_fem)
    ok = dev <= cfg.verify_tol and gap <= cfg.verify_tol
    print(f"max deviation={dev:.3e} ls_fem={ls_fem:.6e} ls_nn={ls_nn:.6e} gap={gap:.3e} "
          f"{'OK' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_VERIFY


def _with_net(fnet, net):
    """Copy of ``fnet`` whose realization is the given (possibly modified) network."""
    out = replace(fnet)
    out.__dict__["net"] = net
    return out


def cmd_report(cfg: RunConfig | None, out: Path) -> int:
    path = out / "convergence.csv"
    if not path.exists():
        raise ConfigError(f"{path} not found; run solve or adapt first")
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    print(f"{'level':>5} {'ndof':>8} {'eta':>13} {'error':>13}")
    for r in rows:
        print(f"{r['level']:>5} {r['ndof']:>8} {float(r['eta']):13.6e} "
              f"{(float(r['error']) if r['error'] else float('nan')):13.6e}")
    if len(rows) >= 2:
        n = np.log([float(r["ndof"]) for r in rows[-4:]])
        e = np.array([float(r["eta"]) for r in rows[-4:]])
        if np.all(e > 0) and np.ptp(n) > 0:
            print(f"rate(last {len(n)} levels) = {np.polyfit(n, np.log(e), 1)[0]:.4f}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "adapt": cmd_adapt, "emulate": cmd_emulate, "verify": cmd_verify,
            "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fosls", description="FoSLS solver with AFEM and exact NN emulation")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="TOML run configuration")
    p.add_argument("--out", type=Path, default=Path("fosls_out"), help="output directory")
    p.add_argument("--seed", type=int, help="random seed (sampling in verify)")
    p.add_argument("--quad-degree", type=int, help="override the residual quadrature degree")
    p.add_argument("--levels", type=int, help="override stop.max_levels")
    p.add_argument("--theta", type=float, help="override the marking parameter")
    p.add_argument("--no-timing", action="store_true", help="leave the seconds column empty")
    return p


def load_config(path, args) -> RunConfig:
    if path is None:
        raise ConfigError("--config is required")
    try:
        raw = tomllib.loads(Path(path).read_text())
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from err
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from err
    overrides = {"seed": args.seed, "quad_degree": args.quad_degree, "max_levels": args.levels,
                 "theta": args.theta}
    if args.no_timing:
        overrides["timing"] = False
    return RunConfig(raw, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = None if args.command == "report" and args.config is None else load_config(args.config, args)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args.out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, AfemError) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
