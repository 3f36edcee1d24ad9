"""Experiment configuration files.

Plain ``key = value`` lines grouped under ``[section]`` headers; ``#`` starts a
comment.  Every problem found is reported together, each tagged with the line
it came from.  See docs/config.md for the schema.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .density import KINDS as PINNING_KINDS, PinningProfile, make_pinning
from .fields import FIELD_KINDS, ExternalField
from .mesh import Ball, Box, GridSpec

DEFAULT_MARGIN = 2.0
# relative tolerances per stage
DEFAULT_TOLS = {
    "rho": 1e-11,
    "meissner": 1e-13,
    "gl": 1e-10,
    "isoflux": 1e-9,
    "split": 1e-7,
}


class ConfigError(ValueError):
    """Aggregated configuration problems; ``errors`` holds (line, key, message)."""

    def __init__(self, errors, source="<config>"):
        self.errors = list(errors)
        self.source = source
        lines = [f"{source}:{ln}: {key}: {msg}" if ln else f"{source}: {key}: {msg}"
                 for ln, key, msg in self.errors]
        super().__init__("\n".join(lines))


# ------------------------------------------------------------------ raw text


_SECTION = re.compile(r"^\[\s*([A-Za-z_][\w-]*)\s*\]$")


def read_sections(text: str):
    """{section: {key: (value, line)}} plus a list of syntax errors."""
    out, errors = {}, []
    section = None
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            section = m.group(1).lower()
            out.setdefault(section, {})
            continue
        if "=" not in line:
            errors.append((ln, section or "-", f"expected 'key = value', got {raw.strip()!r}"))
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if section is None:
            errors.append((ln, key, "key outside any [section]"))
            continue
        if key in out[section]:
            errors.append((ln, f"{section}.{key}", f"duplicate key (first on line {out[section][key][1]})"))
            continue
        out[section][key] = (value, ln)
    return out, errors


# ------------------------------------------------------------------ schema


def _float(s):
    return float(s)


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError("not an integer")
    return int(v)


def _vec3(s):
    v = tuple(float(x) for x in s.replace(",", " ").split())
    if len(v) != 3:
        raise ValueError("expected three numbers")
    return v


def _floats(s):
    v = [float(x) for x in s.replace(",", " ").split()]
    if not v:
        raise ValueError("empty list")
    return v


def _triples(s):
    return tuple(_vec3(part) for part in s.split(";") if part.strip())


def _str(s):
    return s.strip()


@dataclass(frozen=True)
class Schedule:
    """h_ex values, absolute or in units of the lower critical field."""

    values: tuple
    relative: bool = False

    def resolve(self, hc1=None):
        if not self.relative:
            return list(self.values)
        if hc1 is None:
            raise ValueError("relative schedule needs the critical field")
        return [v * hc1 for v in self.values]

    def __len__(self):
        return len(self.values)


def parse_schedule(s: str) -> Schedule:
    """'0, 1, 5', '0:0.5:3' (inclusive) or either form with an 'xHc1' suffix."""
    s = s.strip()
    relative = False
    m = re.search(r"\s*[xX*]\s*Hc1$", s, flags=re.IGNORECASE)
    if m:
        relative, s = True, s[:m.start()]
    if ":" in s:
        parts = [float(x) for x in s.split(":")]
        if len(parts) != 3:
            raise ValueError("range is start:step:stop")
        start, step, stop = parts
        if step <= 0:
            raise ValueError("range step must be positive")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        if count < 1:
            raise ValueError("empty range")
        vals = tuple(float(x) for x in np.round(start + step * np.arange(count), 12))
    else:
        vals = tuple(_floats(s))
    return Schedule(vals, relative)


# section -> key -> (parser, default); a default of REQUIRED marks mandatory keys
REQUIRED = object()
SCHEMA = {
    "grid": {
        "n": (_int, 16),
        "domain": (_str, "ball"),
        "center": (_vec3, (0.0, 0.0, 0.0)),
        "radius": (_float, 1.0),
        "lo": (_vec3, (-1.0, -1.0, -1.0)),
        "hi": (_vec3, (1.0, 1.0, 1.0)),
        "margin": (_float, DEFAULT_MARGIN),
    },
    "pinning": {
        "kind": (_str, "constant"),
        "b": (_float, 1.0),
        "value": (_float, 1.0),
        "centers": (_triples, ()),
        "radii": (lambda s: tuple(_floats(s)), ()),
        "period": (_float, 0.5),
        "cell_size": (_float, 0.25),
        "seed": (_int, 0),
    },
    "field": {
        "kind": (_str, "constant"),
        "direction": (_vec3, (0.0, 0.0, 1.0)),
        "center": (_vec3, (0.0, 0.0, 0.0)),
        "amplitude": (_float, 1.0),
        "file": (_str, None),
    },
    "run": {
        "eps": (_floats, REQUIRED),
        "h": (parse_schedule, Schedule((0.0,))),
        "seed": (_int, 0),
        "trials": (_int, 20),
        "delta": (_float, None),
        "neighbors": (_int, 6),
        "resolution": (_int, 1),
        "init": (_str, "meissner"),
    },
    "solver": {
        "rho_tol": (_float, DEFAULT_TOLS["rho"]),
        "meissner_tol": (_float, DEFAULT_TOLS["meissner"]),
        "gl_tol": (_float, DEFAULT_TOLS["gl"]),
        "isoflux_tol": (_float, DEFAULT_TOLS["isoflux"]),
        "split_tol": (_float, DEFAULT_TOLS["split"]),
        "max_iter": (_int, 4000),
        "dual_count": (_int, 512),
    },
    "output": {
        "dir": (_str, "pgl3-out"),
        "snapshots": (lambda s: s.strip().lower() in ("1", "true", "yes", "on"), False),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    grid: dict
    pinning: dict
    field: dict
    run: dict
    solver: dict
    output: dict
    source: str = "<config>"
    lines: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def eps_list(self):
        return list(self.run["eps"])

    @property
    def schedule(self) -> Schedule:
        return self.run["h"]

    @property
    def out_dir(self) -> Path:
        return Path(self.output["dir"])

    def plan(self):
        """Cross product of the eps list and the h schedule, eps-major."""
        return list(itertools.product(self.eps_list, self.schedule.values))

    def domain(self):
        g = self.grid
        if g["domain"] == "ball":
            return Ball(g["center"], g["radius"])
        return Box(g["lo"], g["hi"])

    def make_grid(self) -> GridSpec:
        return GridSpec.around(self.domain(), self.grid["n"], margin=self.grid["margin"])

    def pinning_profile(self) -> PinningProfile:
        p = self.pinning
        return PinningProfile(p["kind"], p["b"], p["value"], p["centers"], p["radii"],
                              p["period"], p["cell_size"], p["seed"])

    def make_pinning(self, grid):
        return make_pinning(self.pinning_profile(), grid)

    def external_field(self, grid=None) -> ExternalField:
        f = self.field
        if f["kind"] == "sampled":
            from .snapshot import load_field
            samples = load_field(f["file"])
            if grid is not None and not samples.grid.same(grid):
                raise ConfigError([(self.lines.get("field.file", 0), "field.file",
                                    "sampled field lives on a different grid")], self.source)
            return ExternalField("sampled", samples=samples.values)
        return ExternalField(f["kind"], f["direction"], f["center"], f["amplitude"])


def _validate(values, lines, errors, base_dir):
    def err(key, msg):
        errors.append((lines.get(key, 0), key, msg))

    g, p, f, r, s = (values[k] for k in ("grid", "pinning", "field", "run", "solver"))
    if g["domain"] not in ("ball", "box"):
        err("grid.domain", f"expected ball or box, got {g['domain']!r}")
    if g["n"] < 4:
        err("grid.n", "need at least 4 cells per axis")
    if g["radius"] <= 0:
        err("grid.radius", "must be positive")
    if g["margin"] <= 1.0:
        err("grid.margin", "box must be larger than the domain (margin > 1)")
    if any(h <= l for l, h in zip(g["lo"], g["hi"])):
        err("grid.hi", "hi must exceed lo on every axis")
    if p["kind"] not in PINNING_KINDS:
        err("pinning.kind", f"expected one of {', '.join(PINNING_KINDS)}")
    if not 0 < p["b"] <= 1:
        err("pinning.b", "floor must lie in (0, 1]")
    if not 0 < p["value"] <= 1:
        err("pinning.value", "must lie in (0, 1]")
    if len(p["centers"]) != len(p["radii"]):
        err("pinning.radii", "one radius per inclusion center")
    if f["kind"] not in FIELD_KINDS:
        err("field.kind", f"expected one of {', '.join(FIELD_KINDS)}")
    if f["kind"] == "sampled":
        if not f["file"]:
            err("field.file", "sampled field needs a snapshot file")
        else:
            path = Path(f["file"])
            if not path.is_absolute():
                path = base_dir / path
            if not path.exists():
                err("field.file", f"file not found: {path}")
            f["file"] = str(path)
    if any(e <= 0 for e in r["eps"]):
        err("run.eps", "eps must be positive")
    vals = r["h"].values
    if any(v < 0 for v in vals):
        err("run.h", "field intensities must be non-negative")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        err("run.h", "schedule must be strictly increasing")
    if r["trials"] < 1:
        err("run.trials", "must be at least 1")
    if r["delta"] is not None and r["delta"] <= 0:
        err("run.delta", "must be positive")
    if r["neighbors"] not in (6, 26):
        err("run.neighbors", "expected 6 or 26")
    if r["resolution"] < 1:
        err("run.resolution", "must be at least 1")
    if r["init"] not in ("meissner", "random", "vortex-seeded"):
        err("run.init", "expected meissner, random or vortex-seeded")
    for key in ("rho_tol", "meissner_tol", "gl_tol", "isoflux_tol", "split_tol"):
        if not s[key] > 0:
            err(f"solver.{key}", "tolerance must be positive")
    if s["max_iter"] < 1:
        err("solver.max_iter", "must be at least 1")
    if s["dual_count"] < 4:
        err("solver.dual_count", "need at least 4 test fields")


def build_config(raw, syntax_errors=(), source="<config>", base_dir=Path(".")) -> ExperimentConfig:
    """Apply defaults, parse types and validate a {section: {key: (value, line)}} mapping."""
    errors = list(syntax_errors)
    values, lines = {}, {}
    for section, entries in raw.items():
        if section not in SCHEMA:
            ln = min((v[1] for v in entries.values()), default=0)
            errors.append((ln, section, "unknown section"))
    for section, keys in SCHEMA.items():
        given = raw.get(section, {})
        out = {}
        for key, (value, ln) in given.items():
            if key not in keys:
                errors.append((ln, f"{section}.{key}", "unknown key"))
        for key, (parser, default) in keys.items():
            if key in given:
                text, ln = given[key]
                lines[f"{section}.{key}"] = ln
                try:
                    out[key] = parser(text)
                except (ValueError, TypeError) as exc:
                    errors.append((ln, f"{section}.{key}", f"bad value {text!r}: {exc}"))
                    out[key] = default if default is not REQUIRED else None
            elif default is REQUIRED:
                errors.append((0, f"{section}.{key}", "missing required key"))
                out[key] = None
            else:
                out[key] = default
        values[section] = out
    if not errors:
        _validate(values, lines, errors, Path(base_dir))
    if errors:
        raise ConfigError(sorted(errors, key=lambda e: (e[0], e[1])), source)
    return ExperimentConfig(values["grid"], values["pinning"], values["field"], values["run"],
                            values["solver"], values["output"], source, lines)


def parse_config_text(text: str, source="<config>", overrides=None, base_dir=Path(".")):
    raw, errors = read_sections(text)
    for dotted, value in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        raw.setdefault(section, {})[key] = (str(value), 0)
    return build_config(raw, errors, source, base_dir)


def parse_config(path, overrides=None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([(0, "path", f"config file not found: {path}")], str(path))
    return parse_config_text(path.read_text(), str(path), overrides, path.parent)
