"""Command-line entry point: ``pgl3 <subcommand> [options]``.

Every subcommand reads an optional config file, applies flag overrides, runs
one pipeline and writes CSV summaries under ``<out>/<subcommand>/``.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 invariant violated.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import plotting
from .config import ConfigError, parse_config, parse_config_text

log = logging.getLogger("pgl3")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT = 0, 2, 3, 4
COMMANDS = ("rho-solve", "meissner", "split-check", "isoflux", "vortex-detect", "gl-minimize",
            "sweep", "ball-lab")


class InvariantFailure(AssertionError):
    pass


def _solver_errors():
    from .density import SolverError
    from .isoflux import IsofluxError
    from .minimize import DescentError
    from .vortex_detect import DetectionError
    return (SolverError, IsofluxError, DescentError, DetectionError, np.linalg.LinAlgError)


# flag -> config key
OVERRIDES = {
    "grid": "grid.n", "margin": "grid.margin", "eps": "run.eps", "h": "run.h",
    "seed": "run.seed", "trials": "run.trials", "field": "field.kind",
    "pinning": "pinning.kind", "delta": "run.delta", "init": "run.init",
    "neighbors": "run.neighbors", "resolution": "run.resolution",
    "max_iter": "solver.max_iter", "dual_count": "solver.dual_count", "out": "output.dir",
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file (key = value sections)")
    common.add_argument("--grid", type=int, help="cells per axis")
    common.add_argument("--margin", type=float, help="box side / domain diameter")
    common.add_argument("--eps", help="eps or comma-separated list")
    common.add_argument("--h", help="h_ex list or start:step:stop, optional xHc1 suffix")
    common.add_argument("--seed", type=int)
    common.add_argument("--trials", type=int)
    common.add_argument("--field", help="constant | azimuthal | gradient | sampled")
    common.add_argument("--pinning", help="pinning profile kind")
    common.add_argument("--delta", type=float, help="detection grid size")
    common.add_argument("--init", help="meissner | random | vortex-seeded")
    common.add_argument("--neighbors", type=int)
    common.add_argument("--resolution", type=int)
    common.add_argument("--max-iter", type=int)
    common.add_argument("--dual-count", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--snapshots", action="store_true", help="write binary field snapshots")
    common.add_argument("--plot-data", action="store_true", help="write plot-ready CSV/VTK files")
    common.add_argument("--figures", action="store_true", help="also render PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pgl3", description="Pinned Ginzburg-Landau numerical lab")
    sub = p.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True
    helps = {
        "rho-solve": "solve the pinned density problem",
        "meissner": "solve the Meissner optimality system",
        "split-check": "check the energy splitting identity on random configurations",
        "isoflux": "maximize the isoflux ratio and report the critical field",
        "vortex-detect": "build the polyhedral vorticity approximation of a field",
        "gl-minimize": "minimize the full functional at fixed h_ex",
        "sweep": "h_ex sweep locating vortex onset",
        "ball-lab": "2D ball construction on a degree-d fixture",
    }
    subs = {name: sub.add_parser(name, parents=[common], help=helps[name]) for name in COMMANDS}
    vd = subs["vortex-detect"]
    vd.add_argument("--u", help="complex snapshot of the order parameter")
    vd.add_argument("--A", dest="A", help="face snapshot of the potential (default zero)")
    vd.add_argument("--fixture", choices=("line", "ring"), help="synthetic field instead of --u")
    bl = subs["ball-lab"]
    bl.add_argument("--points", type=int, default=401, help="samples per side of the slice")
    bl.add_argument("--degree", type=int, default=1)
    bl.add_argument("--rho2", type=float, default=1.0, help="constant rho^2 on the slice")
    return p


def load_config(args):
    overrides = {}
    for attr, key in OVERRIDES.items():
        v = getattr(args, attr, None)
        if v is not None:
            overrides[key] = v
    if args.snapshots:
        overrides["output.snapshots"] = "yes"
    if args.config:
        return parse_config(args.config, overrides)
    overrides.setdefault("run.eps", "0.1")
    return parse_config_text("", "<flags>", overrides)


class Run:
    """Output bookkeeping for one subcommand."""

    def __init__(self, cfg, args):
        self.cfg = cfg
        self.args = args
        self.dir = cfg.out_dir / args.command
        self.dir.mkdir(parents=True, exist_ok=True)
        self.written = []

    def path(self, name):
        return self.dir / name

    def csv(self, name, rows, columns=None, summary=None):
        self.written.append(plotting.write_csv(self.path(name), rows, columns, summary))

    def snapshot(self, name, obj):
        if self.cfg.output["snapshots"]:
            from .snapshot import save_field
            save_field(self.path(name), obj)
            self.written.append(self.path(name))

    def current(self, stem, current, omega=None):
        self.path(stem + ".txt").write_text(current.to_text())
        self.written.append(self.path(stem + ".txt"))
        if self.args.plot_data:
            self.csv(stem + ".csv", plotting.current_rows(current),
                     ["x0", "y0", "z0", "x1", "y1", "z1", "mult"])
            self.written.append(plotting.write_vtk_current(self.path(stem + ".vtk"), current))
        if self.args.figures:
            self.written.append(plotting.current_figure(self.path(stem + ".png"), current, omega,
                                                        stem))

    def cells(self, stem, grid, arrays: dict):
        if self.args.plot_data:
            self.written.append(plotting.write_vtk_cells(self.path(stem + ".vtk"), grid, arrays,
                                                         stem))
        if self.args.figures:
            for name, vals in arrays.items():
                self.written.append(plotting.slice_figure(self.path(f"{stem}_{name}.png"), grid,
                                                          vals, name))

    def series(self, stem, x, ys, **kw):
        if self.args.figures:
            self.written.append(plotting.series_figure(self.path(stem + ".png"), x, ys, **kw))


def _tag(eps):
    return f"{eps:g}".replace(".", "p")


# ------------------------------------------------------------------ pipelines


def cmd_rho_solve(run):
    from .density import solve_rho
    cfg = run.cfg
    g = cfg.make_grid()
    a = cfg.make_pinning(g)
    m = g.cell_mask
    b = float(a.values[m].min())
    rows, bad = [], []
    for eps in cfg.eps_list:
        sol = solve_rho(a, eps, tol=cfg.solver["rho_tol"] / eps ** 2)
        r2 = sol.rho.values[m] ** 2
        ok = r2.min() >= b * (1 - 1e-12) and r2.max() <= 1 + 1e-12
        rows.append({"eps": eps, "rho2_min": r2.min(), "rho2_max": r2.max(), "a_min": b,
                     "energy": sol.energy, "residual": sol.residual_norm,
                     "iterations": sol.iterations, "bounds_ok": ok})
        if not ok:
            bad.append(eps)
        run.snapshot(f"rho_eps{_tag(eps)}.pgl3", sol.rho)
        run.cells(f"rho_eps{_tag(eps)}", g, {"rho": sol.rho.values, "a": a.values})
    run.csv("rho.csv", rows)
    if bad:
        raise InvariantFailure(f"b <= rho^2 <= 1 violated at eps={bad}")


def cmd_meissner(run):
    from .meissner import (J_functional, meissner_state, orthogonality_residual,
                           variational_residual)
    cfg = run.cfg
    g = cfg.make_grid()
    a = cfg.make_pinning(g)
    ext = cfg.external_field(g)
    rows, bad = [], []
    for eps in cfg.eps_list:
        st, _ = meissner_state(a, eps, ext)
        j_ex = J_functional(st.A0ex, st.rho, st.A0ex)
        var = variational_residual(st, 10, cfg.run["seed"])
        orth = orthogonality_residual(st, 10, cfg.run["seed"])
        row = {"eps": eps, "J_A0": st.J_value, "J_A0ex": j_ex, "variational": var,
               "orthogonality": orth, "B0_norm": float(np.sqrt(st.B0.flat @ st.B0.flat * g.dv))}
        rows.append(row)
        if var > 1e-7 or orth > 1e-9 or st.J_value > j_ex * (1 + 1e-12):
            bad.append(eps)
        run.snapshot(f"B0_eps{_tag(eps)}.pgl3", st.B0)
        run.snapshot(f"A0_eps{_tag(eps)}.pgl3", st.A0)
        if run.args.plot_data or run.args.figures:
            from .mesh import edge_to_cells
            bc = edge_to_cells(g, st.B0.flat)
            run.cells(f"B0_eps{_tag(eps)}", g, {"B0_norm": np.linalg.norm(bc, axis=-1)})
    run.csv("meissner.csv", rows)
    if bad:
        raise InvariantFailure(f"Meissner optimality residuals out of tolerance at eps={bad}")


def cmd_split_check(run):
    from .energy import random_configuration, split_energy
    from .meissner import meissner_state
    cfg = run.cfg
    g = cfg.make_grid()
    a = cfg.make_pinning(g)
    ext = cfg.external_field(g)
    hs = cfg.schedule.values if "run.h" in cfg.lines else (0.0, 1.0, 5.0)
    states = {eps: meissner_state(a, eps, ext)[0] for eps in cfg.eps_list}
    rng = np.random.default_rng(cfg.run["seed"])
    rows = []
    for t in range(cfg.run["trials"]):
        eps = cfg.eps_list[t % len(cfg.eps_list)]
        h = hs[(t // len(cfg.eps_list)) % len(hs)]
        c = random_configuration(g, rng, h, smooth=bool(t % 2))
        br = split_energy(c, states[eps], a, eps)
        rows.append({"trial": t, "eps": eps, "h_ex": h, "smooth": bool(t % 2),
                     **br.as_dict(), "residual": br.residual()})
    run.csv("split.csv", rows)
    worst = max(r["residual"] for r in rows)
    print(f"split-check: {len(rows)} trials, worst residual {worst:.3e}")
    if worst > cfg.solver["split_tol"]:
        raise InvariantFailure(f"splitting residual {worst:.3e} above {cfg.solver['split_tol']:g}")


def _isoflux(cfg, g, a, ext, eps):
    from .isoflux import maximize_ratio
    from .meissner import meissner_state
    from .mesh import ScalarField
    st, _ = meissner_state(a, eps, ext)
    iso = maximize_ratio(st.B0, ScalarField(g, st.rho.values ** 2), cfg.run["resolution"],
                         cfg.run["neighbors"], eps=eps, tol=cfg.solver["isoflux_tol"])
    return st, iso


def cmd_isoflux(run):
    cfg = run.cfg
    g = cfg.make_grid()
    a = cfg.make_pinning(g)
    ext = cfg.external_field(g)
    rows = []
    for eps in cfg.eps_list:
        _, iso = _isoflux(cfg, g, a, ext, eps)
        rows.append({"eps": eps, "ratio": iso.ratio, "hc1": iso.hc1,
                     "circulation": iso.circulation, "weighted_mass": iso.weighted_mass,
                     "lower_bound_L2": iso.lower_bound_L2, "star": iso.star, "slack": iso.slack,
                     "iterations": iso.iterations, "method": iso.method,
                     "current_kind": iso.best_current.kind, "segments": len(iso.best_current)})
        run.current(f"best_current_eps{_tag(eps)}", iso.best_current, g.omega)
        run.snapshot(f"best_current_eps{_tag(eps)}.pgl3", iso.best_current)
    run.csv("isoflux.csv", rows)


def cmd_vortex_detect(run):
    from . import fixtures
    from .density import solve_rho
    from .vortex_detect import assemble_nu
    cfg, args = run.cfg, run.args
    eps = cfg.eps_list[0]
    if args.u:
        from .snapshot import load_field
        u = load_field(args.u)
        g = u.grid
        A = load_field(args.A) if args.A else fixtures.zero_potential(g)
    else:
        g = cfg.make_grid()
        kind = args.fixture or "line"
        if kind == "line":
            u = fixtures.line_vortex(g, (0.0, 0.0, 0.0), (0.03, 0.02, 1.0), eps)
        else:
            u = fixtures.ring_vortex(g, (0.0, 0.0, 0.0), 0.5, eps)
        A = fixtures.zero_potential(g)
    rho = solve_rho(cfg.make_pinning(g), eps).rho
    delta = cfg.run["delta"] or max(4 * float(np.max(g.h)), 0.25)
    approx = assemble_nu(u, A, rho, eps, delta)
    mult = approx.nu.mult
    integer = bool(np.all(mult == np.round(mult)))
    rows = [{"eps": eps, "delta": delta, "mass": approx.mass, "length": approx.length,
             "weighted_mass": approx.weighted_mass, "closed": approx.closed,
             "segments": len(approx.nu), "face_vortices": len(approx.vortices),
             "cubes_used": approx.cubes_used, "support_cells": int(np.count_nonzero(approx.support_cells)),
             "integer_multiplicity": integer}]
    run.csv("vortex.csv", rows)
    run.current("nu", approx.nu, g.omega)
    run.snapshot("nu.pgl3", approx.nu)
    if not integer:
        raise InvariantFailure("non-integer multiplicity in the vorticity current")


def cmd_gl_minimize(run):
    from .isoflux import critical_field
    from .meissner import meissner_state
    from .minimize import meissner_gap, minimize_gl
    cfg = run.cfg
    g = cfg.make_grid()
    a = cfg.make_pinning(g)
    ext = cfg.external_field(g)
    init = cfg.run["init"]
    rows = []
    for eps in cfg.eps_list:
        iso = None
        if init == "vortex-seeded" or cfg.schedule.relative:
            st, iso = _isoflux(cfg, g, a, ext, eps)
        else:
            st, _ = meissner_state(a, eps, ext)
        hs = cfg.schedule.resolve(critical_field(iso.ratio, eps) if cfg.schedule.relative else None)
        for h in hs:
            res = minimize_gl(a, eps, st.H0ex, h, init, state=st, seed=cfg.run["seed"],
                              max_iter=cfg.solver["max_iter"], rtol=cfg.solver["gl_tol"],
                              seed_current=iso.best_current if iso else None)
            br = res.breakdown
            rows.append({"eps": eps, "h_ex": h, "init": init, "energy": res.energy,
                         "gap": meissner_gap(res.config, st, a, eps),
                         "iterations": res.iterations, "converged": res.converged,
                         "split_residual": br.residual() if br else float("nan")})
            tag = f"eps{_tag(eps)}_h{_tag(h)}"
            run.snapshot(f"u_{tag}.pgl3", res.config.u)
            run.snapshot(f"A_{tag}.pgl3", res.config.A)
            run.cells(f"u_{tag}", g, {"abs_u": np.abs(res.config.u.values)})
    run.csv("gl.csv", rows)
    bad = [r for r in rows if r["split_residual"] > cfg.solver["split_tol"]]
    if bad:
        raise InvariantFailure("splitting identity fails on a converged state")


SWEEP_COLUMNS = ("eps", "h_ex", "h_over_hc1", "energy", "meissner_energy", "free_energy",
                 "nu_mass", "min_u_over_rho", "dual_norm_mu", "iterations", "basin", "gap",
                 "above_meissner")


def cmd_sweep(run):
    from .meissner import meissner_state
    from .minimize import hex_sweep
    cfg = run.cfg
    g = cfg.make_grid()
    a = cfg.make_pinning(g)
    ext = cfg.external_field(g)
    rows, summary = [], []
    for eps in cfg.eps_list:
        st, _ = meissner_state(a, eps, ext)
        res = hex_sweep(a, eps, ext, cfg.schedule.values, state=st,
                        max_iter=cfg.solver["max_iter"], delta=cfg.run["delta"],
                        dual_count=cfg.solver["dual_count"], relative=cfg.schedule.relative)
        for r in res.records:
            rows.append({"eps": eps, "h_over_hc1": r.h_ex / res.hc1, **r.as_dict()})
        summary.append({"eps": eps, "hc1": res.hc1, "ratio": res.ratio, "onset": res.onset,
                        "onset_over_hc1": res.onset_over_hc1})
        print(f"sweep eps={eps:g}: Hc1={res.hc1:.6g} onset={res.onset} "
              f"onset/Hc1={res.onset_over_hc1}")
        sub = [r for r in rows if r["eps"] == eps]
        run.series(f"sweep_eps{_tag(eps)}", [r["h_over_hc1"] for r in sub],
                   {"|nu|": [r["nu_mass"] for r in sub]}, xlabel="h_ex / Hc1",
                   ylabel="|nu|", vlines=[1.0])
    run.csv("sweep.csv", rows, list(SWEEP_COLUMNS), summary)


def cmd_ball_lab(run):
    from . import fixtures
    from .vortex_detect import ball_construction
    cfg, args = run.cfg, run.args
    rows = []
    for eps in cfg.eps_list:
        xs, ys, u, mask, _ = fixtures.disk_vortex_2d(args.points, eps, args.degree)
        rho = math.sqrt(args.rho2) * np.ones(u.shape)
        bc = ball_construction(u, rho, eps, 1.0, xs, ys, mask)
        norm = math.pi * args.rho2 * math.log(1 / eps)
        rows.append({"eps": eps, "degree": sum(b.degree for b in bc.balls),
                     "balls": len(bc.balls), "bound": bc.bound, "measured": bc.measured_energy,
                     "normalized": bc.measured_energy / norm, "steps": bc.steps})
    run.csv("balls.csv", rows)
    run.series("balls", [r["eps"] for r in rows], {"E / (pi rho^2 log 1/eps)": [r["normalized"] for r in rows]},
               xlabel="eps")


HANDLERS = {
    "rho-solve": cmd_rho_solve, "meissner": cmd_meissner, "split-check": cmd_split_check,
    "isoflux": cmd_isoflux, "vortex-detect": cmd_vortex_detect, "gl-minimize": cmd_gl_minimize,
    "sweep": cmd_sweep, "ball-lab": cmd_ball_lab,
}


def _threads():
    v = os.environ.get("PGL3_THREADS")
    if not v:
        return None
    n = int(v)
    if n < 1:
        raise ValueError("PGL3_THREADS must be a positive integer")
    return n


def cli_dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        threads = _threads()
    except (ConfigError, ValueError) as exc:
        print(f"pgl3: configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = Run(cfg, args)
    from .vortex_detect import InvariantError
    try:
        with threadpool_limits(limits=threads):
            HANDLERS[args.command](run)
    except (InvariantFailure, InvariantError) as exc:
        print(f"pgl3: invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except _solver_errors() as exc:
        print(f"pgl3: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, ValueError) as exc:
        print(f"pgl3: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for p in run.written:
        log.info("wrote %s", p)
    return EXIT_OK


def main(argv=None):
    sys.exit(cli_dispatch(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
