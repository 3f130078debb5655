"""Run configuration: strict schema, YAML/JSON loading and hashing.

A configuration is a nested mapping.  Every block has a fixed key set;
unknown keys are rejected with their dotted path so typos fail loudly.
Missing keys take the defaults below, except ``problem``, which is
required.  Example::

    problem: tsunami
    mesh: {a: 0.0, b: 400000.0, K: 200}
    time: {T_F: 4000.0, cfl: 0.3}
    objective: {kind: regularized, gamma: 0.003, lam_grid: [12, 16, 20]}
    estimator: {methods: [mc, form, sorm], N: 10000}
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError

PROBLEMS = ("tsunami", "toy2d", "linear")
OBJECTIVES = ("regularized", "timeopt")
METHODS = ("mc", "is", "form", "sorm", "fit")
MANIFEST_KEY = "manifest_version"

_REQUIRED = object()

# block -> key -> default (``_REQUIRED`` marks mandatory keys)
SCHEMA: dict[str, Any] = {
    "problem": _REQUIRED,
    "seed": 0,
    "mesh": {"a": 0.0, "b": 400e3, "K": 200},
    "time": {"T_F": 4000.0, "cfl": 0.3, "dt": None},
    "viscosity": {"c_visc": 1.0},
    "bathymetry": {"profile": "tohoku", "file": None},
    "basis": {
        "kind": "surrogate",
        "segment": [178e3, 187e3],
        "n_s": 20,
        "width": 5e3,
        "amplitude": 0.025,
        "file": None,
    },
    "prior": {"std": 10.0},
    "toy": {"curvature": 0.1, "a": [1.0]},
    "objective": {
        "kind": "regularized",
        "gamma": 0.003,
        "lam": 12.0,
        "lam_grid": [12.0, 16.0, 20.0, 24.0, 28.0, 32.0, 36.0, 40.0, 44.0, 48.0],
        "window": [40e3, 44e3],
        "warm": True,
        "tol": 1e-5,
        "max_iter": 500,
        "starts": 0,
    },
    "solve": {"slips": None, "sample": None, "stride": 10},
    "gradcheck": {"directions": 5, "steps": [1e-3, 1e-4, 1e-5, 1e-6, 1e-7], "threshold": 1e-5, "point": "sample"},
    "estimator": {
        "methods": ["mc"],
        "N": 1000,
        "N_is": None,
        "z_grid": None,
        "fit_window": [0.2, 0.4],
        "rank": 10,
        "sweep": None,
    },
    "eigs": {"rank": 10},
    "output": {"dir": "out"},
}


def _merge(schema: Mapping, data: Mapping, path: str) -> dict:
    if not isinstance(data, Mapping):
        raise ConfigError(f"'{path or 'config'}' must be a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - set(schema))
    if unknown:
        where = f" in '{path}'" if path else ""
        names = ", ".join(f"'{path + '.' if path else ''}{k}'" for k in unknown)
        raise ConfigError(f"unknown config key(s){where}: {names}")
    out = {}
    for key, default in schema.items():
        full = f"{path}.{key}" if path else key
        if isinstance(default, dict):
            out[key] = _merge(default, data.get(key) or {}, full)
        elif key in data:
            out[key] = copy.deepcopy(data[key])
        elif default is _REQUIRED:
            raise ConfigError(f"missing required config key '{full}'")
        else:
            out[key] = copy.deepcopy(default)
    return out


def _number(d: dict, key: str, path: str, positive: bool = False, integer: bool = False, optional: bool = False):
    v = d[key]
    if v is None and optional:
        return
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"'{path}.{key}' must be a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"'{path}.{key}' must be an integer, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"'{path}.{key}' must be positive, got {v!r}")
    d[key] = int(v) if integer else float(v)


def _numbers(d: dict, key: str, path: str, length: int | None = None, optional: bool = False):
    v = d[key]
    if v is None and optional:
        return
    if not isinstance(v, (list, tuple)) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in v
    ):
        raise ConfigError(f"'{path}.{key}' must be a list of numbers, got {v!r}")
    if length is not None and len(v) != length:
        raise ConfigError(f"'{path}.{key}' must have {length} entries, got {len(v)}")
    d[key] = [float(x) for x in v]


def _validate(c: dict) -> None:
    if c["problem"] not in PROBLEMS:
        raise ConfigError(f"'problem' must be one of {list(PROBLEMS)}, got {c['problem']!r}")
    seed = c["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"'seed' must be an integer in [0, 2^64), got {seed!r}")

    m = c["mesh"]
    _number(m, "a", "mesh")
    _number(m, "b", "mesh")
    _number(m, "K", "mesh", positive=True, integer=True)
    if not m["b"] > m["a"]:
        raise ConfigError("'mesh.b' must exceed 'mesh.a'")

    t = c["time"]
    _number(t, "T_F", "time", positive=True)
    _number(t, "cfl", "time", positive=True)
    _number(t, "dt", "time", positive=True, optional=True)
    _number(c["viscosity"], "c_visc", "viscosity")
    if c["viscosity"]["c_visc"] < 0:
        raise ConfigError("'viscosity.c_visc' must be nonnegative")

    b = c["bathymetry"]
    if b["file"] is None and not isinstance(b["profile"], str):
        raise ConfigError("'bathymetry.profile' must be a profile name")

    s = c["basis"]
    if s["kind"] not in ("surrogate", "file"):
        raise ConfigError(f"'basis.kind' must be 'surrogate' or 'file', got {s['kind']!r}")
    if s["kind"] == "file" and not s["file"]:
        raise ConfigError("missing required config key 'basis.file' (basis.kind is 'file')")
    _numbers(s, "segment", "basis", 2)
    _number(s, "n_s", "basis", positive=True, integer=True)
    _number(s, "width", "basis", positive=True, optional=True)
    _number(s, "amplitude", "basis", positive=True)

    p = c["prior"]
    if isinstance(p["std"], (list, tuple)):
        _numbers(p, "std", "prior")
        if any(x <= 0 for x in p["std"]):
            raise ConfigError("'prior.std' entries must be positive")
    else:
        _number(p, "std", "prior", positive=True)

    _number(c["toy"], "curvature", "toy")
    _numbers(c["toy"], "a", "toy")
    if not c["toy"]["a"]:
        raise ConfigError("'toy.a' must not be empty")

    o = c["objective"]
    if o["kind"] not in OBJECTIVES:
        raise ConfigError(f"'objective.kind' must be one of {list(OBJECTIVES)}, got {o['kind']!r}")
    _number(o, "gamma", "objective", positive=True)
    _number(o, "lam", "objective")
    if o["lam"] < 0:
        raise ConfigError("'objective.lam' must be nonnegative")
    _numbers(o, "lam_grid", "objective")
    g = o["lam_grid"]
    if not g or any(x <= 0 for x in g) or any(y <= x for x, y in zip(g, g[1:])):
        raise ConfigError("'objective.lam_grid' must be a nonempty, positive, strictly ascending list")
    _numbers(o, "window", "objective", 2)
    if not o["window"][1] > o["window"][0]:
        raise ConfigError("'objective.window' must satisfy c < d")
    if not isinstance(o["warm"], bool):
        raise ConfigError("'objective.warm' must be true or false")
    _number(o, "tol", "objective", positive=True)
    _number(o, "max_iter", "objective", positive=True, integer=True)
    _number(o, "starts", "objective", integer=True)
    if o["starts"] < 0:
        raise ConfigError("'objective.starts' must be nonnegative")

    sv = c["solve"]
    _numbers(sv, "slips", "solve", optional=True)
    if sv["sample"] is not None:
        _number(sv, "sample", "solve", integer=True)
    _number(sv, "stride", "solve", positive=True, integer=True)
    if sv["slips"] is not None and sv["sample"] is not None:
        raise ConfigError("'solve.slips' and 'solve.sample' are mutually exclusive")

    gc = c["gradcheck"]
    _number(gc, "directions", "gradcheck", positive=True, integer=True)
    _numbers(gc, "steps", "gradcheck")
    _number(gc, "threshold", "gradcheck", positive=True)
    if gc["point"] not in ("sample", "mean"):
        raise ConfigError("'gradcheck.point' must be 'sample' or 'mean'")

    e = c["estimator"]
    if isinstance(e["methods"], str):
        e["methods"] = [e["methods"]]
    bad = [x for x in e["methods"] if x not in METHODS]
    if bad or not e["methods"]:
        raise ConfigError(f"'estimator.methods' entries must be among {list(METHODS)}, got {e['methods']!r}")
    _number(e, "N", "estimator", positive=True, integer=True)
    _number(e, "N_is", "estimator", positive=True, integer=True, optional=True)
    _numbers(e, "z_grid", "estimator", optional=True)
    _numbers(e, "fit_window", "estimator", 2)
    _number(e, "rank", "estimator", positive=True, integer=True)
    _number(c["eigs"], "rank", "eigs", positive=True, integer=True)

    if not isinstance(c["output"]["dir"], str):
        raise ConfigError("'output.dir' must be a path string")


def normalize(data: Mapping) -> dict:
    """Merge defaults, reject unknown keys and validate types and ranges."""
    c = _merge(SCHEMA, data, "")
    _validate(c)
    return c


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-5`` (no dot) as a float, like JSON."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


def parse_text(text: str, source: str = "<string>") -> dict:
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: cannot parse configuration ({exc})") from None
    if data is None:
        data = {}
    if isinstance(data, Mapping) and MANIFEST_KEY in data:
        if "config" not in data:
            raise ConfigError(f"{source}: manifest without a 'config' block")
        data = data["config"]
    return normalize(data)


def load(path: str | Path) -> dict:
    """Read a YAML or JSON config (or a run manifest) and normalize it."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_text(text, str(path))


def canonical_json(config: Mapping) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def config_hash(config: Mapping) -> str:
    """SHA-256 of the canonical JSON of the normalized config.

    The ``output`` block is excluded: where files go does not change them.
    """
    body = {k: v for k, v in config.items() if k != "output"}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()


class RunConfig:
    """Validated configuration; item access reads the normalized blocks."""

    def __init__(self, data: Mapping):
        self._data = normalize(data)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        obj = cls.__new__(cls)
        obj._data = load(path)
        return obj

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        obj = cls.__new__(cls)
        obj._data = parse_text(text)
        return obj

    def __getitem__(self, key: str):
        return self._data[key]

    def to_dict(self) -> dict:
        return copy.deepcopy(self._data)

    def replace(self, **blocks) -> "RunConfig":
        """Copy with top-level keys or whole blocks updated (``block={...}`` merges)."""
        data = self.to_dict()
        for k, v in blocks.items():
            if isinstance(v, Mapping) and isinstance(data.get(k), dict):
                data[k].update(v)
            else:
                data[k] = v
        return RunConfig(data)

    @property
    def hash(self) -> str:
        return config_hash(self._data)

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self._data == other._data

    def __repr__(self) -> str:
        return f"RunConfig(problem={self._data['problem']!r}, hash={self.hash[:12]})"
