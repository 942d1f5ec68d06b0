"""Study-file loading and validation for the benchmark harness.

A study is a flat INI-style text file, one study per file:

    [study]
    kind = convergence            # or precision
    methods = EPI2, EPIRK4, BE
    t_final = 0.5
    step_sizes = 0.125, 0.0625, 0.03125
    repetitions = 1

    [problem]
    type = diff1d                 # or diff2d
    n_elem = 50
    beta1 = 5e-5
    beta2 = 5e-3

    [reference]
    h_ref = 0.0001220703125
    krylov_tol = 1e-12

    [tolerances]
    krylov_tol = 1e-10
    newton_tol = 1e-10
    gmres_tol = 1e-9

    [output]
    prefix = conv_1d

    [verify]
    order.EPI2 = 2 +- 0.25
    finite.BE = all
    diverged.FE = largest
    max_error.EPIRK4 = 1e-6

Command-line overrides use dotted keys: `--set study.t_final=0.25`.
Validation failures raise ConfigError with a file:line location.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..problems import Diffusion1DParams, Diffusion2DParams
from ..steppers import METHODS

KINDS = ("convergence", "precision")
PROBLEM_TYPES = ("diff1d", "diff2d")

_SECTION_KEYS = {
    "study": {"kind", "methods", "t_final", "step_sizes", "repetitions"},
    "problem": None,  # depends on type, checked separately
    "reference": {"method", "h_ref", "krylov_tol"},
    "tolerances": {"krylov_tol", "newton_tol", "gmres_tol"},
    "output": {"prefix"},
    "verify": None,  # assertion grammar, checked separately
}
_PROBLEM_KEYS = {
    "diff1d": {"type", "n_elem", "beta1", "beta2", "sigma"},
    "diff2d": {"type", "n_side", "kappa", "eps_perp", "beta1", "beta2", "sigma"},
}


class ConfigError(ValueError):
    """Invalid study configuration; formats as `path:line: message`."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        if path is not None and line is not None:
            full = f"{path}:{line}: {message}"
        elif path is not None:
            full = f"{path}: {message}"
        else:
            full = message
        super().__init__(full)


@dataclass(frozen=True)
class VerifyAssertion:
    """One check from the [verify] section.

    kinds: 'order' (value within target +- tol), 'max_error' (all
    non-diverged errors at or below bound), 'finite' (no diverged
    rows), 'diverged' (row at the largest step diverged).
    """

    kind: str
    method: str
    target: float = math.nan
    tolerance: float = math.nan

    def label(self) -> str:
        if self.kind == "order":
            return f"order.{self.method} = {self.target} +- {self.tolerance}"
        if self.kind == "max_error":
            return f"max_error.{self.method} <= {self.target}"
        if self.kind == "finite":
            return f"finite.{self.method} = all"
        return f"diverged.{self.method} = largest"


@dataclass
class StudyConfig:
    kind: str
    methods: tuple
    t_final: float
    h_values: tuple
    repetitions: int
    problem_type: str
    problem: Union[Diffusion1DParams, Diffusion2DParams]
    ref_method: str
    h_ref: float
    ref_krylov_tol: float
    krylov_tol: float
    newton_tol: float
    gmres_tol: float
    out_prefix: str
    assertions: tuple = ()
    source_path: str = ""


class _Locator:
    """Maps (section, key) back to a 1-based line number in the file."""

    def __init__(self, text: str):
        self.lines = text.splitlines()

    def find(self, section: str, key: Optional[str] = None) -> Optional[int]:
        header = re.compile(r"^\s*\[" + re.escape(section) + r"\]\s*(?:[#;].*)?$")
        any_header = re.compile(r"^\s*\[")
        inside = False
        for idx, raw in enumerate(self.lines, start=1):
            if header.match(raw):
                if key is None:
                    return idx
                inside = True
                continue
            if inside and any_header.match(raw):
                return None
            if inside and re.match(r"^\s*" + re.escape(key) + r"\s*[=:]", raw):
                return idx
        return None


def _parse_float(raw: str, what: str, path, line) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{what}: not a number: {raw!r}", path, line) from None
    if not math.isfinite(value):
        raise ConfigError(f"{what}: must be finite, got {raw!r}", path, line)
    return value


def _parse_int(raw: str, what: str, path, line) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{what}: not an integer: {raw!r}", path, line) from None


def _split_list(raw: str) -> list:
    return [part.strip() for part in raw.split(",") if part.strip()]


_ORDER_RE = re.compile(r"^\s*([-+0-9.eE]+)\s*\+-\s*([-+0-9.eE]+)\s*$")
_VERIFY_KEY_RE = re.compile(r"^(order|max_error|finite|diverged)\.([A-Za-z0-9]+)$")


def _parse_assertion(key: str, raw: str, path, line) -> VerifyAssertion:
    m = _VERIFY_KEY_RE.match(key)
    if not m:
        raise ConfigError(
            f"unknown verify key {key!r} (expected order.M, max_error.M, finite.M or diverged.M)",
            path,
            line,
        )
    kind, method = m.group(1), m.group(2).upper()
    if method not in METHODS:
        raise ConfigError(f"verify key {key!r} names unknown method {method!r}", path, line)
    if kind == "order":
        om = _ORDER_RE.match(raw)
        if not om:
            raise ConfigError(f"order assertion must read 'TARGET +- TOL', got {raw!r}", path, line)
        target = _parse_float(om.group(1), key, path, line)
        tol = _parse_float(om.group(2), key, path, line)
        if tol <= 0:
            raise ConfigError(f"{key}: tolerance must be positive", path, line)
        return VerifyAssertion("order", method, target, tol)
    if kind == "max_error":
        bound = _parse_float(raw, key, path, line)
        if bound <= 0:
            raise ConfigError(f"{key}: bound must be positive", path, line)
        return VerifyAssertion("max_error", method, bound)
    if kind == "finite":
        if raw.strip().lower() != "all":
            raise ConfigError(f"{key}: only 'all' is supported, got {raw!r}", path, line)
        return VerifyAssertion("finite", method)
    if raw.strip().lower() != "largest":
        raise ConfigError(f"{key}: only 'largest' is supported, got {raw!r}", path, line)
    return VerifyAssertion("diverged", method)


def parse_overrides(pairs) -> dict:
    """Turn `--set section.key=value` strings into a nested dict."""
    out: dict = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects section.key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        if "." not in key:
            raise ConfigError(f"--set key must be dotted section.key, got {key!r}")
        section, option = key.split(".", 1)
        out.setdefault(section.strip(), {})[option.strip()] = value.strip()
    return out


def _divides_to_half_ulp(span: float, h: float) -> bool:
    ratio = span / h
    nearest = round(ratio)
    return nearest >= 1 and abs(ratio - nearest) <= 0.5 * np.spacing(ratio)


def load_study(path, overrides: Optional[dict] = None) -> StudyConfig:
    """Parse and validate a study file, applying --set overrides first."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read study file: {exc}", str(path)) from exc
    locator = _Locator(text)
    overridden = {
        (s, k) for s, opts in (overrides or {}).items() for k in opts
    }

    def where(section: str, key: Optional[str] = None):
        # overridden values have no meaningful file line
        if key is not None and (section, key) in overridden:
            return str(path), None
        return str(path), locator.find(section, key)

    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # verify keys are case-sensitive
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"malformed study file: {exc.message}", str(path), line) from exc

    for section, opts in (overrides or {}).items():
        if not parser.has_section(section):
            parser.add_section(section)
        for key, value in opts.items():
            parser.set(section, key, value)

    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown section [{section}]", *where(section))
        allowed = _SECTION_KEYS[section]
        if allowed is not None:
            for key in parser[section]:
                if key not in allowed:
                    raise ConfigError(f"unknown key {key!r} in [{section}]", *where(section, key))

    def need(section: str, key: str) -> str:
        if not parser.has_section(section):
            raise ConfigError(f"missing required section [{section}]", str(path))
        if key not in parser[section]:
            raise ConfigError(f"[{section}] is missing required key {key!r}", *where(section))
        return parser[section][key]

    def get(section: str, key: str, default: Optional[str] = None) -> Optional[str]:
        if parser.has_section(section) and key in parser[section]:
            return parser[section][key]
        return default

    # [study]
    kind = need("study", "kind").strip().lower()
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}", *where("study", "kind"))
    method_names = _split_list(need("study", "methods"))
    methods = []
    for name in method_names:
        canon = name.upper()
        if canon not in METHODS:
            raise ConfigError(
                f"unknown method {name!r}; known: {', '.join(METHODS)}", *where("study", "methods")
            )
        if canon in methods:
            raise ConfigError(f"method {name!r} listed twice", *where("study", "methods"))
        methods.append(canon)
    t_final = _parse_float(need("study", "t_final"), "t_final", *where("study", "t_final"))
    if t_final <= 0:
        raise ConfigError("t_final must be positive", *where("study", "t_final"))
    h_raw = _split_list(need("study", "step_sizes"))
    if not h_raw:
        raise ConfigError("step_sizes must not be empty", *where("study", "step_sizes"))
    h_values = tuple(
        _parse_float(tok, "step_sizes", *where("study", "step_sizes")) for tok in h_raw
    )
    for h in h_values:
        if h <= 0:
            raise ConfigError("step sizes must be positive", *where("study", "step_sizes"))
        if not _divides_to_half_ulp(t_final, h):
            raise ConfigError(
                f"step size {h!r} does not divide t_final = {t_final!r} to half an ulp",
                *where("study", "step_sizes"),
            )
    if any(b >= a for a, b in zip(h_values, h_values[1:])) or len(set(h_values)) != len(h_values):
        raise ConfigError("step_sizes must be strictly decreasing", *where("study", "step_sizes"))
    repetitions = _parse_int(
        get("study", "repetitions", "1"), "repetitions", *where("study", "repetitions")
    )
    if repetitions < 1:
        raise ConfigError("repetitions must be at least 1", *where("study", "repetitions"))

    # [problem]
    ptype = need("problem", "type").strip().lower()
    if ptype not in PROBLEM_TYPES:
        raise ConfigError(
            f"problem type must be one of {PROBLEM_TYPES}, got {ptype!r}", *where("problem", "type")
        )
    for key in parser["problem"]:
        if key not in _PROBLEM_KEYS[ptype]:
            raise ConfigError(f"unknown key {key!r} for problem type {ptype}", *where("problem", key))

    def pfloat(key: str, default: Optional[float] = None) -> float:
        raw = get("problem", key)
        if raw is None:
            return default
        return _parse_float(raw, key, *where("problem", key))

    try:
        if ptype == "diff1d":
            n_elem = _parse_int(get("problem", "n_elem", "50"), "n_elem", *where("problem", "n_elem"))
            problem = Diffusion1DParams(
                n_elem=n_elem,
                beta1=pfloat("beta1", 5e-5),
                beta2=pfloat("beta2", 5e-3),
                sigma=pfloat("sigma", 0.05),
            )
        else:
            n_side = _parse_int(get("problem", "n_side", "20"), "n_side", *where("problem", "n_side"))
            problem = Diffusion2DParams(
                n_side=n_side,
                kappa=pfloat("kappa", 1e-2),
                eps_perp=pfloat("eps_perp", 1e-3),
                beta1=pfloat("beta1", 0.0),
                beta2=pfloat("beta2", 10.0),
                sigma=pfloat("sigma", 0.05),
            )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), *where("problem")) from exc

    # [reference]
    ref_method = get("reference", "method", "EPIRK4").strip().upper()
    if ref_method not in METHODS:
        raise ConfigError(f"unknown reference method {ref_method!r}", *where("reference", "method"))
    h_ref = _parse_float(need("reference", "h_ref"), "h_ref", *where("reference", "h_ref"))
    if h_ref <= 0:
        raise ConfigError("h_ref must be positive", *where("reference", "h_ref"))
    if h_ref > min(h_values) / 20.0:
        raise ConfigError(
            f"h_ref = {h_ref!r} too coarse: must be at most min(step_sizes)/20 = {min(h_values) / 20.0!r}",
            *where("reference", "h_ref"),
        )
    if not _divides_to_half_ulp(t_final, h_ref):
        raise ConfigError(
            f"h_ref = {h_ref!r} does not divide t_final = {t_final!r} to half an ulp",
            *where("reference", "h_ref"),
        )
    ref_krylov_tol = _parse_float(
        get("reference", "krylov_tol", "1e-12"), "reference krylov_tol", *where("reference", "krylov_tol")
    )

    # [tolerances]
    def tol(key: str, default: str) -> float:
        value = _parse_float(get("tolerances", key, default), key, *where("tolerances", key))
        if value <= 0:
            raise ConfigError(f"{key} must be positive", *where("tolerances", key))
        return value

    krylov_tol = tol("krylov_tol", "1e-10")
    newton_tol = tol("newton_tol", "1e-10")
    gmres_tol = tol("gmres_tol", "1e-9")
    if ref_krylov_tol <= 0:
        raise ConfigError("reference krylov_tol must be positive", *where("reference", "krylov_tol"))

    out_prefix = get("output", "prefix", path.stem)

    assertions = []
    if parser.has_section("verify"):
        for key, raw in parser["verify"].items():
            assertions.append(_parse_assertion(key, raw, *where("verify", key)))

    return StudyConfig(
        kind=kind,
        methods=tuple(methods),
        t_final=t_final,
        h_values=h_values,
        repetitions=repetitions,
        problem_type=ptype,
        problem=problem,
        ref_method=ref_method,
        h_ref=h_ref,
        ref_krylov_tol=ref_krylov_tol,
        krylov_tol=krylov_tol,
        newton_tol=newton_tol,
        gmres_tol=gmres_tol,
        out_prefix=out_prefix,
        assertions=tuple(assertions),
        source_path=str(path),
    )
