"""INI-style run configuration: parsing with line numbers, validation and analytic data presets.

Format: ``[section]`` headers, ``key = value`` lines, ``#`` or ``;`` comments.
Every error is collected (with its line) before ``ConfigError`` is raised.
A key repeated within a section keeps its last value and records a warning.
"""

from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass, field

import numpy as np

# section -> key -> (type, default)
DEFAULTS: dict[str, dict[str, tuple[type, object]]] = {
    "geometry": {"dim": (int, 2), "L": (float, 0.5), "ell": (float, 0.15), "kappa0": (float, 0.5)},
    "grid": {"N": (int, 64), "M": (int, 128), "wall": (str, "no_slip")},
    "time": {"T": (float, 0.5), "T_star": (float, 0.25), "dt": (float, 0.03125)},
    "data": {"eta0": (str, "zero"), "eta_star": (str, "zero"), "u0": (str, "zero"), "T0": (str, "zero"),
             "f": (str, "zero"), "g": (str, "fourier_mode(1, 0.05, 3.141592653589793)")},
    "solver": {"tol_fsi": (float, 1e-10), "tol_fp": (float, 1e-8), "maxit_fp": (int, 10),
               "maxit_fsi": (int, 100), "linear_tol": (float, 1e-13), "relaxation": (str, "newton"),
               "solute_mode": (str, "incremental")},
    "smallness": {"c": (float, 1.0), "eps": (float, 0.1)},
    "output": {"snapshot_every": (int, 0), "vtk": (bool, True)},
    "run": {"seed": (int, 0)},
}

CHOICES = {
    ("grid", "wall"): ("no_slip", "free_slip"),
    ("solver", "relaxation"): ("fixed", "aitken", "newton"),
    ("solver", "solute_mode"): ("backtrace", "incremental"),
    ("geometry", "dim"): (2, 3),
}

# preset name -> (allowed fields, number of required args, max args)
PRESETS = {
    "zero": (("eta0", "eta_star", "u0", "T0", "f", "g"), 0, 0),
    "fourier_mode": (("eta0", "eta_star", "T0", "f", "g"), 2, 4),
    "taylor_green": (("u0", "f"), 0, 1),
    "shear": (("u0", "T0"), 1, 1),
    "gaussian_bump": (("eta0", "eta_star", "T0", "g"), 2, 4),
}


class ConfigError(ValueError):
    def __init__(self, errors: list[tuple[int | None, str]]):
        self.errors = errors
        super().__init__("\n".join(f"line {n}: {m}" if n else m for n, m in errors))


@dataclass(frozen=True)
class Preset:
    name: str
    args: tuple[float, ...] = ()

    def __str__(self):
        return self.name if not self.args else f"{self.name}({', '.join(repr(a) for a in self.args)})"


@dataclass(frozen=True)
class DataSpec:
    """A sum of presets."""

    terms: tuple[Preset, ...]

    def __str__(self):
        return " + ".join(str(t) for t in self.terms)

    @property
    def is_zero(self) -> bool:
        def amp(t):
            if t.name == "zero":
                return 0.0
            i = 0 if t.name in ("shear", "taylor_green") else 1
            return t.args[i] if len(t.args) > i else 1.0

        return all(amp(t) == 0 for t in self.terms)


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]]
    data: dict[str, DataSpec]
    warnings: list[str] = field(default_factory=list)

    def __getitem__(self, key: str):
        sec, k = key.split(".", 1)
        return self.values[sec][k]

    def echo(self) -> str:
        """Canonical text of the full configuration (defaults filled in)."""
        out = []
        for sec, keys in DEFAULTS.items():
            out.append(f"[{sec}]")
            for k in keys:
                v = self.data[k] if sec == "data" else self.values[sec][k]
                out.append(f"{k} = {_fmt(v)}")
            out.append("")
        return "\n".join(out)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_HEADER = re.compile(r"^\[\s*([A-Za-z_][\w]*)\s*\]$")
_PRESET = re.compile(r"^([A-Za-z_]\w*)\s*(?:\((.*)\))?$")


def _convert(kind: type, raw: str):
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError(f"expected a finite number, got {raw!r}")
        return v
    return raw


def parse_data_spec(text: str, target: str) -> DataSpec:
    terms = []
    for part in _split_terms(text):
        m = _PRESET.match(part.strip())
        if not m:
            raise ValueError(f"malformed preset {part.strip()!r}")
        name, argtxt = m.group(1), m.group(2)
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r} (registry: {', '.join(PRESETS)})")
        fields, nmin, nmax = PRESETS[name]
        if target not in fields:
            raise ValueError(f"preset {name!r} is not available for {target}")
        args = ()
        if argtxt is not None and argtxt.strip():
            try:
                parsed = ast.literal_eval("(" + argtxt + ",)")
            except (ValueError, SyntaxError):
                raise ValueError(f"preset arguments must be numbers: {argtxt!r}") from None
            if not all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in parsed):
                raise ValueError(f"preset arguments must be numbers: {argtxt!r}")
            args = tuple(float(a) for a in parsed)
        if not nmin <= len(args) <= nmax:
            raise ValueError(f"preset {name!r} takes {nmin}..{nmax} arguments, got {len(args)}")
        terms.append(Preset(name, args))
    return DataSpec(tuple(terms))


def _split_terms(text: str) -> list[str]:
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "+" and depth == 0 and cur.strip() and not cur.rstrip().endswith(("e", "E")):
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    return parts


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def parse_config(text: str, strict: bool = True, overrides: list[str] | None = None) -> RunConfig:
    """Validated RunConfig from config text plus ``section.key=value`` overrides."""
    errors: list[tuple[int | None, str]] = []
    warnings: list[str] = []
    raw: dict[str, dict[str, tuple[str, int | None]]] = {s: {} for s in DEFAULTS}
    section = None
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = _HEADER.match(s)
        if m:
            section = m.group(1)
            if section not in DEFAULTS:
                if strict:
                    errors.append((n, f"unknown section [{section}]"))
                raw.setdefault(section, {})
            continue
        if "=" not in s:
            errors.append((n, f"malformed line {s!r} (expected key = value)"))
            continue
        if section is None:
            errors.append((n, "key outside of any [section]"))
            continue
        key, val = (p.strip() for p in s.split("=", 1))
        val = re.split(r"\s[#;]", val, maxsplit=1)[0].strip()
        if not key:
            errors.append((n, "empty key"))
            continue
        if key in raw[section]:
            warnings.append(f"line {n}: duplicate key {section}.{key}; last value wins "
                            f"(previous on line {raw[section][key][1]})")
        raw[section][key] = (val, n)
    for ov in overrides or []:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            errors.append((None, f"malformed override {ov!r} (expected section.key=value)"))
            continue
        k, v = ov.split("=", 1)
        sec, key = k.strip().split(".", 1)
        raw.setdefault(sec, {})[key] = (v.strip(), None)
        if sec not in DEFAULTS and strict:
            errors.append((None, f"override: unknown section [{sec}]"))

    values: dict[str, dict[str, object]] = {}
    lines: dict[tuple[str, str], int | None] = {}
    for sec, keys in DEFAULTS.items():
        values[sec] = {}
        for key, (kind, default) in keys.items():
            values[sec][key] = default
        for key, (val, n) in raw.get(sec, {}).items():
            if key not in keys:
                if strict:
                    errors.append((n, f"unknown key {sec}.{key}"))
                else:
                    warnings.append(f"line {n}: ignoring unknown key {sec}.{key}")
                continue
            try:
                values[sec][key] = _convert(keys[key][0], val)
                lines[(sec, key)] = n
            except ValueError as exc:
                errors.append((n, f"{sec}.{key}: {exc}"))

    data = {}
    for key in DEFAULTS["data"]:
        try:
            data[key] = parse_data_spec(values["data"][key], key)
        except ValueError as exc:
            errors.append((lines.get(("data", key)), f"data.{key}: {exc}"))

    def bad(sec, key, msg):
        errors.append((lines.get((sec, key)), msg))

    for (sec, key), allowed in CHOICES.items():
        if values[sec][key] not in allowed:
            bad(sec, key, f"{sec}.{key} must be one of {allowed}")
    g = values["geometry"]
    if not 0 < g["L"] < 1:
        bad("geometry", "L", "L must be in (0, 1) (the tube may not reach the rigid wall)")
    if not 0 < g["ell"]:
        bad("geometry", "ell", "ell must be > 0")
    if not g["ell"] < g["L"]:
        bad("geometry", "ell", "ell must be < L")
    if not 0 < g["kappa0"] <= 1:
        bad("geometry", "kappa0", "kappa0 must be in (0, 1]")
    for key in ("N", "M"):
        if not _is_pow2(values["grid"][key]):
            bad("grid", key, f"{key} must be a power of two")
    t = values["time"]
    for key in ("T", "T_star", "dt"):
        if not t[key] > 0:
            bad("time", key, f"{key} must be > 0")
    if t["dt"] > 0 and t["T"] > 0 and abs(t["T"] / t["dt"] - round(t["T"] / t["dt"])) > 1e-9:
        bad("time", "dt", "T must be an integer multiple of dt")
    for key in ("tol_fsi", "tol_fp", "linear_tol"):
        if not values["solver"][key] > 0:
            bad("solver", key, f"{key} must be > 0")
    for key in ("maxit_fp", "maxit_fsi"):
        if values["solver"][key] < 1:
            bad("solver", key, f"{key} must be >= 1")
    if not values["smallness"]["eps"] > 0:
        bad("smallness", "eps", "eps must be > 0")
    if values["output"]["snapshot_every"] < 0:
        bad("output", "snapshot_every", "snapshot_every must be >= 0")
    if errors:
        errors.sort(key=lambda e: (e[0] is None, e[0] or 0))
        raise ConfigError(errors)
    return RunConfig(values, data, warnings)


# ---------------------------------------------------------------------------
# evaluation of presets


def _time_factor(args, t):
    if len(args) > 2:
        phase = args[3] if len(args) > 3 else 0.0
        return math.sin(args[2] * t + phase)
    return 1.0


def shell_profile(spec: DataSpec, y: np.ndarray, t: float = 0.0) -> np.ndarray:
    """Shell field of ``fourier_mode(k, A[, omega, phase])`` = A cos(k y) [sin(omega t + phase)]
    and ``gaussian_bump(sigma, A[, omega, phase])`` = periodized A exp(-(y - pi)^2 / (2 sigma^2))."""
    out = np.zeros_like(y, dtype=float)
    for p in spec.terms:
        if p.name == "zero":
            continue
        a = p.args[1] * _time_factor(p.args, t)
        if p.name == "fourier_mode":
            out += a * np.cos(p.args[0] * y)
        elif p.name == "gaussian_bump":
            s = p.args[0]
            out += a * sum(np.exp(-((y - np.pi + 2 * np.pi * m) ** 2) / (2 * s * s)) for m in (-1, 0, 1))
    return out


def shell_callable(spec: DataSpec):
    if spec.is_zero:
        return None
    return lambda t, y: shell_profile(spec, y, t)


def stream_preset(spec: DataSpec, X, Z) -> np.ndarray:
    """Reference-coordinate stream function (u = (-d_z psi, d_x psi)) of the velocity presets:
    ``taylor_green([A])`` gives u = A (sin x cos(pi z), -cos x sin(pi z) / pi) and
    ``shear(gamma)`` gives u = (gamma z, 0)."""
    psi = np.zeros(np.broadcast(X, Z).shape)
    for p in spec.terms:
        if p.name == "taylor_green":
            a = p.args[0] if p.args else 1.0
            psi -= a * np.sin(X) * np.sin(np.pi * Z) / np.pi
        elif p.name == "shear":
            psi -= 0.5 * p.args[0] * Z * Z
    return psi


def velocity_preset(spec: DataSpec, X, Z):
    ux = np.zeros(np.broadcast(X, Z).shape)
    uz = np.zeros_like(ux)
    for p in spec.terms:
        if p.name == "taylor_green":
            a = p.args[0] if p.args else 1.0
            ux += a * np.sin(X) * np.cos(np.pi * Z)
            uz -= a * np.cos(X) * np.sin(np.pi * Z) / np.pi
        elif p.name == "shear":
            ux += p.args[0] * Z
    return ux, uz


def force_callable(spec: DataSpec):
    """f(t, x, z); ``fourier_mode(k, A[, omega, phase])`` pushes along x with A cos(k x) sin(pi z)."""
    if spec.is_zero:
        return None

    def f(t, X, Z):
        fx = np.zeros(np.broadcast(X, Z).shape)
        fz = np.zeros_like(fx)
        for p in spec.terms:
            if p.name == "fourier_mode":
                fx += p.args[1] * _time_factor(p.args, t) * np.cos(p.args[0] * X) * np.sin(np.pi * Z)
            elif p.name == "taylor_green":
                a, b = velocity_preset(DataSpec((p,)), X, Z)
                fx += a
                fz += b
        return fx, fz

    return f


def stress_preset(spec: DataSpec, X, Z) -> np.ndarray:
    """Nodal 2x2 stress: ``fourier_mode(k, A)`` = A cos(k x) sin(pi z) I, ``shear(gamma)`` the steady
    shear state [[gamma^2/2, gamma/2], [gamma/2, 0]], ``gaussian_bump(sigma, A)`` an x-periodic bump times I."""
    T = np.zeros(np.broadcast(X, Z).shape + (2, 2))
    eye = np.eye(2)
    for p in spec.terms:
        if p.name == "fourier_mode":
            T += (p.args[1] * np.cos(p.args[0] * X) * np.sin(np.pi * Z))[..., None, None] * eye
        elif p.name == "shear":
            gm = p.args[0]
            T += np.array([[0.5 * gm * gm, 0.5 * gm], [0.5 * gm, 0.0]])
        elif p.name == "gaussian_bump":
            s = p.args[0]
            b = sum(np.exp(-((X - np.pi + 2 * np.pi * m) ** 2) / (2 * s * s)) for m in (-1, 0, 1))
            T += (p.args[1] * b * np.sin(np.pi * Z))[..., None, None] * eye
    return T
