"""TOML configuration: model files, Jacobian manifests and run configs.

Every table is checked against a fixed set of keys; an unknown key is an
error that names the file and line.  Relative file references resolve against
the directory of the file that mentions them.
"""

from __future__ import annotations

import hashlib
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .dfm import StateSpaceModel
from .errors import ConfigError, DmdlikError
from .io import read_matrix_csv
from .ma import DEFAULT_HORIZON, JacobianSet

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
_REQUIRED = object()
_LINE_COL = re.compile(r"line (\d+)")


def _line_of(text: str, key: str, table: str | None) -> int | None:
    """Best-effort line number of ``key`` (inside ``[table]`` when given)."""
    lines = text.splitlines()
    start = 0
    if table:
        head = re.compile(r"^\s*\[+\s*" + re.escape(table) + r"\s*\]+")
        for i, ln in enumerate(lines):
            if head.match(ln):
                start = i
                break
    pat = re.compile(r"^\s*\"?" + re.escape(key) + r"\"?\s*=")
    tab = re.compile(r"^\s*\[+\s*" + re.escape(key) + r"\s*\]+")
    for i in range(start, len(lines)):
        if pat.match(lines[i]) or tab.match(lines[i]):
            return i + 1
    return None


class Section:
    """Typed, strict view of one TOML table."""

    def __init__(self, data: dict, name: str | None, source: "Source"):
        if not isinstance(data, dict):
            raise source.error(f"[{name}] must be a table", None, None)
        self.data = data
        self.name = name
        self.src = source
        self._used: set[str] = set()

    def error(self, message: str, key: str | None = None) -> ConfigError:
        where = f"[{self.name}] " if self.name else ""
        return self.src.error(where + message, key, self.name)

    def has(self, key: str) -> bool:
        return key in self.data

    def get(self, key: str, kind=None, default=_REQUIRED):
        self._used.add(key)
        if key not in self.data:
            if default is _REQUIRED:
                raise self.error(f"missing required key {key!r}")
            return default
        value = self.data[key]
        if kind is None:
            return value
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind is int and isinstance(value, bool):
            raise self.error(f"{key!r} must be an integer", key)
        if not isinstance(value, kind):
            names = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
            raise self.error(f"{key!r} must be of type {names}, got {type(value).__name__}", key)
        return value

    def section(self, key: str, required: bool = True) -> "Section | None":
        self._used.add(key)
        if key not in self.data:
            if required:
                raise self.error(f"missing required table [{key}]")
            return None
        name = key if not self.name else f"{self.name}.{key}"
        return Section(self.data[key], name, self.src)

    def path(self, key: str, default=_REQUIRED) -> Path | None:
        value = self.get(key, str, default)
        return None if value is None else self.src.resolve(value)

    def finish(self):
        extra = [k for k in self.data if k not in self._used]
        if extra:
            raise self.error(f"unknown key {extra[0]!r}", extra[0])


@dataclass
class Source:
    path: Path
    text: str

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def resolve(self, ref: str) -> Path:
        p = Path(ref)
        return p if p.is_absolute() else (self.path.parent / p).resolve()

    def error(self, message: str, key: str | None, table: str | None) -> ConfigError:
        line = _line_of(self.text, key, table.split(".")[-1] if table else None) if key else None
        return ConfigError(message, path=self.path, line=line)


def load_toml(path) -> tuple[Section, Source]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    src = Source(path.resolve(), text)
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = _LINE_COL.search(str(exc))
        raise ConfigError(f"invalid TOML: {exc}", path=path, line=int(m.group(1)) if m else None) from None
    root = Section(data, None, src)
    version = root.get("schema", int, SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise root.error(f"unsupported schema version {version} (expected {SCHEMA_VERSION})", "schema")
    return root, src


# --------------------------------------------------------------------------- matrices


def _matrix(sec: Section, key: str, shape: tuple[int, int], default=_REQUIRED) -> np.ndarray:
    """A matrix given as a flat row-major list, a nested list, a CSV path, or a random draw."""
    if not sec.has(key) and default is not _REQUIRED:
        return default
    value = sec.get(key)
    if isinstance(value, str):
        X = read_matrix_csv(sec.src.resolve(value))
    elif isinstance(value, dict):
        sub = sec.section(key)
        dist = sub.get("random", str)
        seed = sub.get("seed", int, 0)
        scale = sub.get("scale", float, 1.0)
        sub.finish()
        if dist != "normal":
            raise sub.error(f"unsupported random matrix distribution {dist!r}", "random")
        X = scale * rng.generator(seed, rng.LOADINGS).standard_normal(shape)
    elif isinstance(value, list):
        try:
            X = np.array(value, dtype=float)
        except (TypeError, ValueError):
            raise sec.error(f"{key!r} must be numeric", key) from None
        if X.ndim == 1 and X.size == shape[0] * shape[1]:
            X = X.reshape(shape)
    elif isinstance(value, (int, float)) and not isinstance(value, bool) and shape == (1, 1):
        X = np.array([[float(value)]])
    else:
        raise sec.error(f"{key!r} must be a list, a CSV path or a random-draw table", key)
    X = np.atleast_2d(X)
    if X.shape != shape:
        raise sec.error(f"{key!r} must be {shape[0]} x {shape[1]}, got {X.shape[0]} x {X.shape[1]}", key)
    return X


def load_model(path) -> StateSpaceModel:
    """Model file with keys ``N``, ``M``, ``A``, ``C``, ``G``, ``sigma_v``."""
    root, _ = load_toml(path)
    N = root.get("N", int)
    M = root.get("M", int)
    if N < 1 or M < N:
        raise root.error("need N >= 1 and M >= N", "M")
    A = _matrix(root, "A", (N, N))
    C = _matrix(root, "C", (N, N), np.eye(N))
    G = _matrix(root, "G", (M, N))
    sigma_v = root.get("sigma_v", float, 0.0)
    root.finish()
    try:
        return StateSpaceModel(A, C, G, sigma_v)
    except DmdlikError as exc:
        raise ConfigError(str(exc), path=Path(path)) from exc


@dataclass
class Manifest:
    jac: JacobianSet
    H: int
    c_ss: np.ndarray | None = None


def load_manifest(path) -> Manifest:
    """Jacobian manifest: dimensions, inputs, shocks, AR coefficients and matrix files.

    ``[policy]`` maps each input to its M x H gradient CSV; ``[ge]`` maps
    ``"<input>.<shock>"`` to an H x H CSV; ``[irf]`` optionally gives an input's
    H x r impulse responses directly.
    """
    root, _ = load_toml(path)
    M = root.get("M", int)
    H = root.get("H", int)
    r = root.get("r", int)
    inputs = root.get("inputs", list)
    shocks = root.get("shocks", list)
    if len(shocks) != r:
        raise root.error(f"'shocks' lists {len(shocks)} names but r = {r}", "shocks")
    rho_list = root.get("rho", list, [])
    if rho_list and len(rho_list) != r:
        raise root.error("'rho' must have one entry per shock", "rho")
    rho = {x: float(v) for x, v in zip(shocks, rho_list)}
    pol = root.section("policy")
    policy = {p: _matrix(pol, p, (M, H)) for p in inputs}
    pol.finish()
    ge = {}
    gsec = root.section("ge", required=False)
    if gsec is not None:
        for key in list(gsec.data):
            p, _, x = key.partition(".")
            if p not in inputs or x not in shocks:
                raise gsec.error(f"ge key {key!r} must be '<input>.<shock>' with known names", key)
            ge[(p, x)] = _matrix(gsec, key, (H, H))
        gsec.finish()
    irf = {}
    isec = root.section("irf", required=False)
    if isec is not None:
        for p in list(isec.data):
            if p not in inputs:
                raise isec.error(f"unknown input {p!r}", p)
            irf[p] = _matrix(isec, p, (H, r))
        isec.finish()
    c_ss = None
    if root.has("c_ss"):
        c = root.get("c_ss")
        c_ss = np.full(M, float(c)) if isinstance(c, (int, float)) else _matrix(root, "c_ss", (M, 1)).ravel()
    root.finish()
    jac = JacobianSet(policy, tuple(shocks), rho, ge, irf)
    try:
        jac.validate()
    except DmdlikError as exc:
        raise ConfigError(str(exc), path=Path(path)) from exc
    return Manifest(jac, H, c_ss)


# --------------------------------------------------------------------------- run configs


@dataclass
class ModelSpec:
    kind: str  # dfm | ma
    dfm: StateSpaceModel | None = None
    manifest: Manifest | None = None
    H: int = DEFAULT_HORIZON
    sigma_v: float | None = None
    meas_error_share: float = 0.0
    shock_sigma: dict = field(default_factory=dict)


def parse_model_section(sec: Section) -> ModelSpec:
    kind = sec.get("kind", str, "dfm")
    if kind == "dfm":
        spec = ModelSpec("dfm", dfm=load_model(sec.path("file")))
    elif kind == "ma":
        man = load_manifest(sec.path("manifest"))
        share = sec.get("meas_error_share", float, 0.0)
        sigma_v = sec.get("sigma_v", float, None)
        if not 0.0 <= share < 1.0:
            raise sec.error("meas_error_share must lie in [0, 1)", "meas_error_share")
        H = sec.get("H", int, man.H)
        if H > man.H:
            raise sec.error(f"H = {H} exceeds the manifest horizon {man.H}", "H")
        sigmas = sec.get("shock_sigma", dict, {})
        spec = ModelSpec("ma", manifest=man, H=H, sigma_v=sigma_v, meas_error_share=share, shock_sigma=sigmas)
    else:
        raise sec.error(f"model kind must be 'dfm' or 'ma', got {kind!r}", "kind")
    sec.finish()
    return spec
