"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the summary lines are printed at the
end of the session (see conftest).  ``-m "not slow"`` skips the 32^3 sweep.
"""

import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from oracles import brute_force_ratio, random_ratio_graph

from pgl3 import fixtures as fx
from pgl3.density import (PinningProfile, energy_eps, locking_sweep, make_pinning, slab_step_grid,
                          slab_step_pinning, solve_rho, weighted_energy_eps)
from pgl3.energy import random_configuration, split_energy
from pgl3.fields import ExternalField
from pgl3.isoflux import liminf_experiment, max_ratio, maximize_ratio
from pgl3.meissner import (J_functional, meissner_state, orthogonality_residual,
                           variational_residual)
from pgl3.mesh import Ball, ComplexField, GridSpec, ScalarField, VectorField
from pgl3.minimize import hex_sweep
from pgl3.vortex_detect import (assemble_nu, ball_construction, choose_grid, hausdorff_to_line,
                                relative_boundary)

RESULTS = {}

INCLUSION = PinningProfile("inclusion-set", b=0.25, value=0.5, centers=((0.15, -0.1, 0.0),),
                           radii=(0.35,))
SMALL_INCLUSION = PinningProfile("inclusion-set", b=0.25, value=0.5,
                                 centers=((0.08, -0.05, 0.0),), radii=(0.2,))


def record(n, ok, detail):
    RESULTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[n])
    return ok


class Clock:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


# ------------------------------------------------------------------ 1


def test_criterion_1_splitting_identity():
    rng = np.random.default_rng(101)
    sizes = (8, 12, 16, 20, 24)
    worst = 0.0
    with Clock() as clk:
        states = {}
        for n in sizes:
            # radius keeps eps = 0.05 resolved (h <= 4 eps) on the coarsest grid
            g = GridSpec.around(Ball(radius=0.5), n, margin=1.2)
            a = make_pinning(SMALL_INCLUSION, g)
            for eps in (0.05, 0.1):
                states[n, eps] = (g, a, meissner_state(a, eps, ExternalField("azimuthal"))[0])
        for t in range(100):
            n, eps = sizes[t % 5], (0.05, 0.1)[(t // 5) % 2]
            h = (0.0, 1.0, 5.0)[(t // 10) % 3]
            g, a, st = states[n, eps]
            c = random_configuration(g, rng, h, smooth=bool(t % 2))
            br = split_energy(c, st, a, eps)
            worst = max(worst, abs(br.total - br.reconstructed()) / abs(br.total))
    ok = worst <= 1e-7 and clk.elapsed <= 120
    record(1, ok, f"worst relative residual {worst:.2e} over 100 trials, {clk.elapsed:.0f} s")
    assert ok


# ------------------------------------------------------------------ 2


def test_criterion_2_density_bounds_and_decoupling(ball16):
    rng = np.random.default_rng(202)
    profiles = [INCLUSION, PinningProfile("periodic", b=0.3, period=0.7),
                PinningProfile("random-checkerboard", b=0.4, cell_size=0.3, seed=5)]
    m = ball16.cell_mask
    bounds_ok, worst = True, 0.0
    with Clock() as clk:
        for prof in profiles:
            a = make_pinning(prof, ball16)
            for eps in (0.1, 0.2):
                sol = solve_rho(a, eps)
                r2 = sol.rho.values[m] ** 2
                bounds_ok &= bool(r2.min() >= prof.b - 1e-12 and r2.max() <= 1 + 1e-12)
        a = make_pinning(INCLUSION, ball16)
        sol = solve_rho(a, 0.1)
        e_rho = energy_eps(sol.rho, a, 0.1)
        for _ in range(20):
            u = ComplexField(ball16, rng.normal(size=ball16.n) + 1j * rng.normal(size=ball16.n))
            lhs = energy_eps(ComplexField(ball16, sol.rho.values * u.values), a, 0.1)
            rhs = e_rho + weighted_energy_eps(u, sol.rho, 0.1)
            worst = max(worst, abs(lhs - rhs) / abs(lhs))
    ok = bounds_ok and worst <= 1e-8 and clk.elapsed <= 60
    record(2, ok, f"bounds {'hold' if bounds_ok else 'violated'}, decoupling residual "
                  f"{worst:.2e}, {clk.elapsed:.0f} s")
    assert ok


# ------------------------------------------------------------------ 3


def test_criterion_3_exponential_locking():
    with Clock() as clk:
        g = slab_step_grid(400)
        a = slab_step_pinning(g)
        w = g.omega.hi[1]
        trend = locking_sweep(a, (0.1, 0.05, 0.025), (0.2, w / 2, w / 2), 0.05)
    ok = trend.slope < 0 and trend.r2 >= 0.95 and clk.elapsed <= 180
    record(3, ok, f"slope {trend.slope:.3f}, R^2 {trend.r2:.4f}, {clk.elapsed:.0f} s")
    assert ok


# ------------------------------------------------------------------ 4


def test_criterion_4_meissner_optimality():
    with Clock() as clk:
        g = GridSpec.around(Ball(), 24, margin=1.5)
        a = make_pinning(INCLUSION, g)
        st, _ = meissner_state(a, 0.1, ExternalField("azimuthal"))
        var = variational_residual(st, 10, seed=4)
        orth = orthogonality_residual(st, 10, seed=4)
        j0 = st.J_value
        jex = J_functional(st.A0ex, st.rho, st.A0ex)
    ok = var <= 1e-7 and orth <= 1e-9 and j0 <= jex and clk.elapsed <= 120
    record(4, ok, f"variational {var:.2e}, orthogonality {orth:.2e}, J(A0) {j0:.6g} <= "
                  f"J(A0ex) {jex:.6g}, {clk.elapsed:.0f} s")
    assert ok


# ------------------------------------------------------------------ 5


def test_criterion_5_isoflux():
    rng = np.random.default_rng(505)
    with Clock() as clk:
        mismatch = 0
        for _ in range(200):
            G = random_ratio_graph(rng, max_edges=12)
            if abs(max_ratio(G).ratio - brute_force_ratio(G)) > 1e-12:
                mismatch += 1
        g = GridSpec.around(Ball(), 10, margin=1.2)
        B = VectorField.from_function(g, lambda p: np.stack(
            [-p[..., 1], p[..., 0], 0.5 + 0.0 * p[..., 2]], -1), "edge")
        eta = ScalarField(g, np.ones(g.n))
        slacks, bound_ok = [], True
        for res in (1, 2, 4):
            r = maximize_ratio(B, eta, res)
            slacks.append(r.slack)
            bound_ok &= r.ratio >= r.lower_bound_L2 - r.slack
        const = maximize_ratio(VectorField.from_function(
            g, lambda p: np.broadcast_to([0.0, 0.0, 1.0], p.shape), "edge"), eta).ratio
    monotone = all(b <= a for a, b in zip(slacks, slacks[1:]))
    ok = (mismatch == 0 and bound_ok and monotone and abs(const - 1) <= 1e-6
          and clk.elapsed <= 120)
    record(5, ok, f"{mismatch} brute-force mismatches, slacks {slacks}, constant ratio "
                  f"{const:.9f}, {clk.elapsed:.0f} s")
    assert ok


# ------------------------------------------------------------------ 6


def test_criterion_6_liminf_experiment():
    with Clock() as clk:
        g = GridSpec.around(Ball(), 32, margin=1.2)
        prof = PinningProfile("inclusion-set", b=0.25, value=0.5, centers=((0.0, 0.0, 0.0),),
                              radii=(0.4,))
        _, summ = liminf_experiment({"azimuthal": ExternalField("azimuthal"),
                                     "gradient": ExternalField("gradient")},
                                    (0.02, 0.05, 0.1), lambda gg: make_pinning(prof, gg), g)
    band = summ["azimuthal"]["band"]
    grad = summ["gradient"]["B0_over_H_max"]
    ok = band <= 0.25 and grad <= 1e-3 and clk.elapsed <= 300
    record(6, ok, f"azimuthal R band {band:.3f} (<= 0.25), gradient |B0|/|H| {grad:.3e} "
                  f"(<= 1e-3), {clk.elapsed:.0f} s")
    assert ok


# ------------------------------------------------------------------ 7


def test_criterion_7_vortex_detection():
    with Clock() as clk:
        g = GridSpec.around(Ball(), 40, margin=1.2)
        A = fx.zero_potential(g)
        p, d = (0.11, -0.07, 0.0), (0.03, 0.02, 1.0)
        eps, delta = 0.06, 0.25
        line = assemble_nu(fx.line_vortex(g, p, d, eps), A, None, eps, delta)
        dn = np.asarray(d) / np.linalg.norm(d)
        b, c = np.dot(p, dn), np.dot(p, p) - 1.0
        chord = 2 * math.sqrt(b * b - c)
        haus = hausdorff_to_line(line.nu, p, d, g.omega)
        u_ring = fx.ring_vortex(g, (0.03, -0.02, 0.05), 0.5, 0.05)
        ring = assemble_nu(u_ring, A, None, 0.05, 0.3,
                           choose_grid(u_ring, A, None, 0.05, 0.3, per_axis=8))
    length_err = abs(line.length / chord - 1)
    degrees = {abs(v.degree) for v in line.vortices}
    integer = all(np.all(r.nu.mult == np.round(r.nu.mult)) for r in (line, ring))
    ok = (length_err <= 0.1 and haus <= delta and degrees == {1} and line.closed
          and not relative_boundary(line.nu, g.omega) and ring.nu.boundary() == {}
          and integer and clk.elapsed <= 180)
    record(7, ok, f"line length error {length_err:.3f}, Hausdorff {haus:.3f} (delta {delta}), "
                  f"degrees {sorted(degrees)}, ring boundary {len(ring.nu.boundary())} points, "
                  f"{clk.elapsed:.0f} s")
    assert ok


# ------------------------------------------------------------------ 8


def test_criterion_8_ball_construction():
    vals, scaling = [], 0.0
    with Clock() as clk:
        for eps in (0.1, 0.05, 0.025):
            xs, ys, u, mask, _ = fx.disk_vortex_2d(401, eps)
            r1 = ball_construction(u, None, eps, 1.0, xs, ys, mask)
            r4 = ball_construction(u, 0.5 * np.ones(u.shape), eps, 1.0, xs, ys, mask)
            vals.append(r1.measured_energy / (math.pi * 1.0 * math.log(1 / eps)))
            scaling = max(scaling, abs(r4.bound / r1.bound - 0.25))
    approaching = all(abs(b - 1) < abs(a - 1) for a, b in zip(vals, vals[1:]))
    ok = (all(0.8 <= v <= 1.3 for v in vals) and approaching and scaling <= 1e-12
          and clk.elapsed <= 180)
    record(8, ok, f"normalized energies {[round(v, 4) for v in vals]}, 0.25-scaling error "
                  f"{scaling:.1e}, {clk.elapsed:.0f} s")
    assert ok


# ------------------------------------------------------------------ 9


@pytest.mark.slow
def test_criterion_9_critical_field_sweep():
    with Clock() as clk:
        g = GridSpec.around(Ball(), 32, margin=1.2)
        a = ScalarField(g, np.ones(g.n))
        res = hex_sweep(a, 0.05, ExternalField("constant"),
                        [0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0], relative=True)
    ratio = res.onset_over_hc1
    sub = [r for r in res.records if res.onset is None or r.h_ex < res.onset]
    mu = max(r.dual_norm_mu for r in sub)
    gaps = [abs(r.gap) / abs(r.energy) if r.energy else 0.0 for r in sub]
    ok = (ratio is not None and 0.5 <= ratio <= 2.0 and mu <= 0.1 and max(gaps) <= 1e-3
          and clk.elapsed <= 1800)
    record(9, ok, f"Hc1 {res.hc1:.4g}, onset/Hc1 {ratio}, sub-onset max dual norm {mu:.3f}, "
                  f"relative gaps {[f'{x:.1e}' for x in gaps]} (<= 1e-3), {clk.elapsed:.0f} s")
    assert ok


# ------------------------------------------------------------------ 10

CLI_RUNS = [
    ["rho-solve", "--grid", "12", "--eps", "0.2", "--pinning", "inclusion-set", "--plot-data"],
    ["meissner", "--grid", "12", "--eps", "0.2"],
    ["split-check", "--grid", "10", "--eps", "0.2", "--trials", "6", "--seed", "3"],
    ["isoflux", "--grid", "12", "--eps", "0.2", "--field", "azimuthal", "--plot-data"],
    ["vortex-detect", "--fixture", "line", "--grid", "32", "--margin", "1.2", "--eps", "0.1",
     "--delta", "0.35"],
    ["gl-minimize", "--grid", "10", "--margin", "1.5", "--eps", "0.25", "--h", "0.5",
     "--init", "random", "--seed", "5"],
    ["sweep", "--grid", "10", "--margin", "1.5", "--eps", "0.25", "--h", "0,0.5xHc1",
     "--dual-count", "32"],
    ["ball-lab", "--eps", "0.1,0.05", "--points", "201"],
]


def _csvs(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(Path(root).rglob("*.csv"))}


def test_criterion_10_determinism(tmp_path):
    env = dict(os.environ, PGL3_THREADS="1")
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        for args in CLI_RUNS:
            subprocess.run([sys.executable, "-m", "pgl3.cli", *args, "--out", str(out)],
                           env=env, check=True, capture_output=True)
        outs.append(_csvs(out))
    a, b = outs
    differ = [str(k) for k in a if a[k] != b.get(k)]
    ok = len(a) >= len(CLI_RUNS) and a.keys() == b.keys() and not differ
    record(10, ok, f"{len(a)} CSV files from {len(CLI_RUNS)} subcommands, "
                   f"{len(differ)} differ")
    assert ok
