import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from pgl3.cli import cli_dispatch
from pgl3.config import DEFAULT_TOLS, ConfigError, parse_config, parse_config_text, parse_schedule
from pgl3.isoflux import PolyCurrent
from pgl3.mesh import Ball, ComplexField, GridSpec, ScalarField, VectorField
from pgl3.plotting import read_csv
from pgl3.snapshot import (ChecksumError, TruncatedError, VersionError, encode, load_field,
                           parse, save_field)

ROOT = Path(__file__).resolve().parents[1]


# ------------------------------------------------------------------ config


def test_minimal_config_defaults():
    cfg = parse_config_text("[run]\neps = 0.1\n")
    assert cfg.grid["margin"] == 2.0
    assert cfg.solver["rho_tol"] == DEFAULT_TOLS["rho"]
    assert cfg.solver["split_tol"] == 1e-7
    assert cfg.eps_list == [0.1]
    g = cfg.make_grid()
    assert np.allclose(np.subtract(g.box_max, g.box_min), 4.0)


def test_negative_eps_names_key_and_line():
    text = "[grid]\nn = 8\n\n[run]\neps = 0.1, -0.05\n"
    with pytest.raises(ConfigError) as ei:
        parse_config_text(text, "bad.ini")
    assert (5, "run.eps") in [(ln, key) for ln, key, _ in ei.value.errors]
    assert "bad.ini:5: run.eps" in str(ei.value)


def test_errors_are_aggregated():
    text = "[run]\neps = 0.1\ntrials = zero\n[solver]\ngl_tol = -1\n[bogus]\nx = 1\n"
    with pytest.raises(ConfigError) as ei:
        parse_config_text(text)
    keys = {key for _, key, _ in ei.value.errors}
    assert {"run.trials", "bogus"} <= keys


def test_missing_required_and_file():
    with pytest.raises(ConfigError, match="run.eps"):
        parse_config_text("[grid]\nn = 8\n")
    with pytest.raises(ConfigError, match="file not found"):
        parse_config_text("[run]\neps=0.1\n[field]\nkind = sampled\nfile = nope.pgl3\n")


def test_plan_cross_product():
    cfg = parse_config_text("[run]\neps = 0.1, 0.05\nh = 0:0.5:2\n")
    plan = cfg.plan()
    assert len(plan) == 2 * 5
    assert plan[:2] == [(0.1, 0.0), (0.1, 0.5)]


def test_schedule_forms():
    assert parse_schedule("0, 1, 5").values == (0.0, 1.0, 5.0)
    s = parse_schedule("0:0.1:3xHc1")
    assert s.relative and len(s) == 31 and s.values[-1] == 3.0
    assert s.resolve(2.0)[-1] == 6.0
    with pytest.raises(ConfigError, match="strictly increasing"):
        parse_config_text("[run]\neps = 0.1\nh = 1, 0.5\n")


def test_example_configs_parse():
    for p in sorted((ROOT / "configs").glob("*.ini")):
        parse_config(p)


# ------------------------------------------------------------------ snapshots


@pytest.fixture(scope="module")
def grid():
    return GridSpec.around(Ball(), 6)


def test_roundtrip_bitwise(grid, rng, tmp_path):
    z = rng.normal(size=grid.n) + 1j * rng.normal(size=grid.n)
    z.flat[0] = complex(-0.0, -0.0)
    z.flat[1] = complex(5e-324, -np.finfo(float).max)
    cases = [ScalarField(grid, rng.normal(size=grid.n)), ComplexField(grid, z),
             VectorField(grid, rng.normal(size=grid.size("face")), "face"),
             VectorField(grid, rng.normal(size=grid.size("edge")), "edge")]
    for i, f in enumerate(cases):
        save_field(tmp_path / f"f{i}.pgl3", f)
        g = load_field(tmp_path / f"f{i}.pgl3")
        assert type(g) is type(f) and g.grid.same(f.grid)
        a, b = np.asarray(f.values if not isinstance(f, VectorField) else f.flat), \
            np.asarray(g.values if not isinstance(g, VectorField) else g.flat)
        if isinstance(f, VectorField):
            assert g.location == f.location
        assert a.shape == b.shape
        assert a.tobytes() == b.tobytes()


def test_current_roundtrip(rng, tmp_path):
    cur = PolyCurrent(rng.normal(size=(7, 6)), rng.choice([-2, -1, 1, 3], size=7), 0.7, "mixed")
    save_field(tmp_path / "c.pgl3", cur)
    back = load_field(tmp_path / "c.pgl3")
    assert back.segments.tobytes() == cur.segments.tobytes()
    assert np.array_equal(back.mult, cur.mult)
    assert back.weight == cur.weight and back.kind == cur.kind


def test_corruption_detected(grid, rng):
    data = bytearray(encode(ScalarField(grid, rng.normal(size=grid.n))))
    data[-20] ^= 0x01
    with pytest.raises(ChecksumError):
        parse(bytes(data))


def test_version_and_truncation(grid, rng):
    data = encode(ScalarField(grid, rng.normal(size=grid.n)))
    bumped = data[:4] + (2).to_bytes(2, "little") + data[6:]
    with pytest.raises(VersionError):
        parse(bumped)
    for cut in (8, 40, len(data) - 30, len(data) - 1):
        with pytest.raises(TruncatedError):
            parse(data[:cut])


# ------------------------------------------------------------------ dispatch


def test_unknown_subcommand(capsys):
    assert cli_dispatch(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


def test_bad_config_exit(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[run]\neps = -1\n")
    assert cli_dispatch(["rho-solve", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "run.eps" in capsys.readouterr().err


def test_invariant_exit(tmp_path):
    # an impossible split tolerance must surface as an invariant failure
    p = tmp_path / "tight.ini"
    p.write_text("[grid]\nn = 8\n[run]\neps = 0.2\ntrials = 2\n[solver]\nsplit_tol = 1e-300\n")
    assert cli_dispatch(["split-check", "--config", str(p), "--out", str(tmp_path)]) == 4


def test_split_check_command(tmp_path):
    code = cli_dispatch(["split-check", "--grid", "16", "--eps", "0.1", "--trials", "20",
                         "--out", str(tmp_path)])
    assert code == 0
    rows = read_csv(tmp_path / "split-check" / "split.csv")
    assert len(rows) == 20
    assert max(float(r["residual"]) for r in rows) <= 1e-7


def test_isoflux_command(tmp_path):
    code = cli_dispatch(["isoflux", "--field", "azimuthal", "--eps", "0.05", "--grid", "24", "--out",
                         str(tmp_path), "--plot-data", "--snapshots"])
    assert code == 0
    d = tmp_path / "isoflux"
    rows = read_csv(d / "isoflux.csv")
    assert float(rows[0]["ratio"]) > 0
    cur = PolyCurrent.from_text((d / "best_current_eps0p05.txt").read_text())
    assert len(cur) == int(rows[0]["segments"])
    assert (d / "best_current_eps0p05.vtk").exists()
    assert load_field(d / "best_current_eps0p05.pgl3").segments.shape == cur.segments.shape


def test_sweep_command_summary(tmp_path):
    code = cli_dispatch(["sweep", "--grid", "12", "--margin", "1.5", "--eps", "0.25", "--h",
                         "0,0.5xHc1", "--dual-count", "64", "--out", str(tmp_path)])
    assert code == 0
    text = (tmp_path / "sweep" / "sweep.csv").read_text()
    summary = [ln for ln in text.splitlines() if ln.startswith("#")]
    assert len(summary) == 1 and "onset=" in summary[0] and "hc1=" in summary[0]
    assert len(read_csv(tmp_path / "sweep" / "sweep.csv")) == 2


def _run_cli(args, out):
    env = dict(os.environ, PGL3_THREADS="1")
    subprocess.run([sys.executable, "-m", "pgl3.cli", *args, "--out", str(out)], env=env,
                   check=True, capture_output=True)


def test_deterministic_csv(tmp_path):
    args = ["split-check", "--grid", "10", "--eps", "0.1", "--trials", "6", "--seed", "3"]
    _run_cli(args, tmp_path / "a")
    _run_cli(args, tmp_path / "b")
    a = (tmp_path / "a" / "split-check" / "split.csv").read_bytes()
    b = (tmp_path / "b" / "split-check" / "split.csv").read_bytes()
    assert a == b
