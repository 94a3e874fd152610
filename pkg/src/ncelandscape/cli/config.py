"""Experiment configuration files.

INI format with five sections; every key is optional unless stated::

    [family]
    kind = gaussian_mean_1d        ; or diag_gaussian (required)
    theta_star = 16                ; 1-d: data mean
    theta_q = 0                    ; 1-d: noise mean
    r_values = 4, 6, 8             ; separations used by verify / landscape
    dim = 16                       ; diag: dimension
    mean_star = 0                  ; diag: scalar or one value per coordinate
    mean_q = 0
    var_q = 1
    var_star = 8                   ; diag: fixed data variances, or
    var_star_low = 6               ;   draw them uniformly in [low, high]
    var_star_high = 12             ;   from the [run] seed
    allow_equal = false            ; permit P* = Q

    [objective]
    losses = nce, ence
    backend = auto                 ; quadrature, montecarlo or auto
    batch_size = 512               ; samples per distribution per evaluation
    log_ratio_cap = auto           ; auto: 80 for eNCE, none for NCE
    grad_norm_cap = none

    [optimizer]
    algorithms = gd, ngd           ; gd, ngd, newton
    steps = 100
    eta = auto                     ; number or auto
    delta = auto                   ; NGD target radius; auto = 0.05 ||tau_0 - tau*||

    [run]
    runs = 1
    seed = 0
    annulus_points = 50
    pair_checks = false
    ngd_budget = false
    bound_scale = 1                ; multiplies upper bounds in verify (testing hook)

    [output]
    dir = results
    prefix = experiment

Keys of ``[objective]`` and ``[optimizer]`` accept qualified overrides:
``eta.ngd = 15`` applies to NGD only and ``eta.ngd.ence = 10`` to NGD on
eNCE only (algorithm before loss); likewise ``grad_norm_cap.ence = 10``.  The most specific key
wins.  The output directory can be overridden with the environment variable
``NCELANDSCAPE_OUTPUT_DIR``.
"""

from __future__ import annotations

import configparser
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..exceptions import ConfigError

OUTPUT_ENV = "NCELANDSCAPE_OUTPUT_DIR"
PRESET_DIR = Path(__file__).parent / "presets"

_FAMILY_KINDS = ("gaussian_mean_1d", "diag_gaussian")
_LOSSES = ("nce", "ence")
_ALGOS = ("gd", "ngd", "newton")
_BACKENDS = ("auto", "quadrature", "montecarlo")

_KEYS = {
    "family": {
        "kind", "theta_star", "theta_q", "r_values", "dim", "mean_star", "mean_q", "var_q",
        "var_star", "var_star_low", "var_star_high", "allow_equal",
    },
    "objective": {"losses", "backend", "batch_size", "log_ratio_cap", "grad_norm_cap"},
    "optimizer": {"algorithms", "steps", "eta", "delta"},
    "run": {"runs", "seed", "annulus_points", "pair_checks", "ngd_budget", "bound_scale"},
    "output": {"dir", "prefix"},
}
# keys that accept ".<algo>" / ".<loss>" qualifiers
_QUALIFIABLE = {"eta", "delta", "log_ratio_cap", "grad_norm_cap", "batch_size"}


@dataclass(frozen=True)
class FamilyConfig:
    kind: str
    theta_star: float = 0.0
    theta_q: float = 0.0
    r_values: tuple = ()
    dim: int = 1
    mean_star: tuple = ()
    mean_q: tuple = ()
    var_q: tuple = ()
    var_star: tuple = ()
    allow_equal: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    family: FamilyConfig
    losses: tuple
    algorithms: tuple
    steps: int = 100
    runs: int = 5
    seed: int = 0
    backend: str = "auto"
    output_dir: str = "results"
    prefix: str = "experiment"
    annulus_points: int = 50
    pair_checks: bool = False
    ngd_budget: bool = False
    bound_scale: float = 1.0
    overrides: dict = field(default_factory=dict)
    source: str = "<string>"

    def setting(self, key: str, algo: str | None = None, loss: str | None = None, default="auto"):
        """Most specific value of ``key`` for an (algo, loss) cell."""
        for k in (f"{key}.{algo}.{loss}", f"{key}.{loss}", f"{key}.{algo}", key):
            if k in self.overrides:
                return self.overrides[k]
        return default

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir)


class _LineTrackingParser(configparser.ConfigParser):
    """ConfigParser that remembers the line of every key."""

    def __init__(self):
        super().__init__(interpolation=None, inline_comment_prefixes=(";", "#"), strict=True)
        self.optionxform = str  # keep keys case-sensitive


def _key_lines(text: str) -> dict:
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = no
            continue
        m = re.match(r"^([^=:;#\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            lines[(section, m.group(1).strip())] = no
    return lines


def _parse_float_list(text: str, what: str, errors: list) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        errors.append(f"{what}: expected comma-separated numbers, got {text!r}")
        return ()


def _parse_bool(text: str, what: str, errors: list) -> bool:
    v = text.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    errors.append(f"{what}: expected true or false, got {text!r}")
    return False


def _parse_int(text: str, what: str, errors: list) -> int:
    try:
        return int(text)
    except ValueError:
        errors.append(f"{what}: expected an integer, got {text!r}")
        return 0


def _parse_number_or_auto(text: str, what: str, errors: list, allow_none=False):
    v = text.strip().lower()
    if v == "auto":
        return "auto"
    if allow_none and v == "none":
        return None
    try:
        x = float(v)
    except ValueError:
        extra = ", none" if allow_none else ""
        errors.append(f"{what}: expected a number, auto{extra}; got {text!r}")
        return "auto"
    if not x > 0:
        errors.append(f"{what}: must be positive, got {text!r}")
    return x


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse configuration text; see the module docstring for the grammar."""
    parser = _LineTrackingParser()
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        msg = getattr(exc, "message", str(exc)).splitlines()[0]
        if isinstance(exc, configparser.ParsingError) and exc.errors:
            line, bad = exc.errors[0]
            msg = f"cannot parse {bad.strip()}"
        where = f"{source}:{line}: " if line else f"{source}: "
        raise ConfigError(f"{where}parse error: {msg}") from None
    lines = _key_lines(text)
    if not parser.has_section("family"):
        raise ConfigError(f"{source}: missing [family] section")

    errors: list[str] = []
    for section in parser.sections():
        if section not in _KEYS:
            errors.append(f"{source}:{lines.get((section, None), '?')}: unknown section [{section}]")
            continue
        for key in parser[section]:
            base, *quals = key.split(".")
            ok = base in _KEYS[section] and (
                not quals
                or (base in _QUALIFIABLE and len(quals) == 1 and quals[0] in _ALGOS + _LOSSES)
                or (base in _QUALIFIABLE and len(quals) == 2 and quals[0] in _ALGOS and quals[1] in _LOSSES)
            )
            if not ok:
                errors.append(f"{source}:{lines.get((section, key), '?')}: unknown key '{key}' in [{section}]")
    if errors:
        raise ConfigError("\n".join(errors))

    def get(section, key, default=None):
        if parser.has_option(section, key):
            return parser.get(section, key)
        return default

    def where(section, key):
        return f"{source}:{lines.get((section, key), '?')}: {section}.{key}"

    fam = parser["family"]
    kind = fam.get("kind", "").strip().lower()
    if kind not in _FAMILY_KINDS:
        errors.append(f"{where('family', 'kind')}: expected one of {', '.join(_FAMILY_KINDS)}, got {kind!r}")
    seed = _parse_int(get("run", "seed", "0"), where("run", "seed"), errors)
    allow_equal = _parse_bool(get("family", "allow_equal", "false"), where("family", "allow_equal"), errors)

    family = None
    if kind == "gaussian_mean_1d":
        ts = _parse_float_list(get("family", "theta_star", "0"), where("family", "theta_star"), errors)
        tq = _parse_float_list(get("family", "theta_q", "0"), where("family", "theta_q"), errors)
        rv = _parse_float_list(get("family", "r_values", ""), where("family", "r_values"), errors)
        if len(ts) != 1 or len(tq) != 1:
            errors.append(f"{source}: theta_star and theta_q must be single numbers for gaussian_mean_1d")
            ts, tq = ts[:1] or (0.0,), tq[:1] or (0.0,)
        if any(r < 0 for r in rv):
            errors.append(f"{where('family', 'r_values')}: separations must be non-negative")
        if not rv:
            rv = (abs(ts[0] - tq[0]),)
        family = FamilyConfig(kind, ts[0], tq[0], rv, 1, allow_equal=allow_equal)
        if ts[0] == tq[0] and not allow_equal and parser.has_option("family", "theta_star"):
            errors.append(f"{source}: theta_star equals theta_q (set allow_equal = true to permit)")
    elif kind == "diag_gaussian":
        d = _parse_int(get("family", "dim", "1"), where("family", "dim"), errors)
        if d < 1:
            errors.append(f"{where('family', 'dim')}: must be at least 1")
            d = 1

        def vec(key, default):
            vals = _parse_float_list(get("family", key, default), where("family", key), errors)
            if len(vals) == 1:
                vals = vals * d
            if len(vals) != d:
                errors.append(f"{where('family', key)}: expected 1 or {d} values, got {len(vals)}")
                vals = (float(default),) * d
            return vals

        mean_star, mean_q, var_q = vec("mean_star", "0"), vec("mean_q", "0"), vec("var_q", "1")
        if parser.has_option("family", "var_star"):
            var_star = vec("var_star", "1")
        else:
            lo = _parse_float_list(get("family", "var_star_low", "1"), where("family", "var_star_low"), errors)
            hi = _parse_float_list(get("family", "var_star_high", "1"), where("family", "var_star_high"), errors)
            lo, hi = (lo or (1.0,))[0], (hi or (1.0,))[0]
            if not 0 < lo <= hi:
                errors.append(f"{source}: need 0 < var_star_low <= var_star_high")
                lo = hi = 1.0
            rng = np.random.Generator(np.random.Philox(seed))
            var_star = tuple(float(v) for v in rng.uniform(lo, hi, d))
        if any(v <= 0 for v in var_star + var_q):
            errors.append(f"{source}: variances must be positive")
        if mean_star == mean_q and var_star == var_q and not allow_equal:
            errors.append(f"{source}: data and noise distributions coincide (set allow_equal = true to permit)")
        family = FamilyConfig(kind, dim=d, mean_star=mean_star, mean_q=mean_q, var_q=var_q,
                              var_star=var_star, allow_equal=allow_equal)

    losses = tuple(v.strip().lower() for v in get("objective", "losses", "nce").split(",") if v.strip())
    for v in losses:
        if v not in _LOSSES:
            errors.append(f"{where('objective', 'losses')}: unknown loss {v!r}")
    algos = tuple(v.strip().lower() for v in get("optimizer", "algorithms", "ngd").split(",") if v.strip())
    for v in algos:
        if v not in _ALGOS:
            errors.append(f"{where('optimizer', 'algorithms')}: unknown algorithm {v!r}")
    if not losses:
        errors.append(f"{source}: at least one loss is required")
    if not algos:
        errors.append(f"{source}: at least one algorithm is required")
    backend = get("objective", "backend", "auto").strip().lower()
    if backend not in _BACKENDS:
        errors.append(f"{where('objective', 'backend')}: expected one of {', '.join(_BACKENDS)}")
    if backend == "quadrature" and kind == "diag_gaussian":
        errors.append(f"{where('objective', 'backend')}: quadrature is only available for gaussian_mean_1d")

    steps = _parse_int(get("optimizer", "steps", "100"), where("optimizer", "steps"), errors)
    if steps < 1:
        errors.append(f"{where('optimizer', 'steps')}: budget must be at least 1")
    runs = _parse_int(get("run", "runs", "1"), where("run", "runs"), errors)
    if runs < 1:
        errors.append(f"{where('run', 'runs')}: need at least one run")
    annulus = _parse_int(get("run", "annulus_points", "50"), where("run", "annulus_points"), errors)
    pair = _parse_bool(get("run", "pair_checks", "false"), where("run", "pair_checks"), errors)
    budget = _parse_bool(get("run", "ngd_budget", "false"), where("run", "ngd_budget"), errors)
    try:
        bound_scale = float(get("run", "bound_scale", "1"))
    except ValueError:
        errors.append(f"{where('run', 'bound_scale')}: expected a number")
        bound_scale = 1.0

    overrides = {}
    for section in ("objective", "optimizer"):
        if not parser.has_section(section):
            continue
        for key, raw in parser[section].items():
            base = key.split(".")[0]
            if base in ("eta", "delta"):
                overrides[key] = _parse_number_or_auto(raw, where(section, key), errors)
            elif base in ("log_ratio_cap", "grad_norm_cap"):
                overrides[key] = _parse_number_or_auto(raw, where(section, key), errors, allow_none=True)
            elif base == "batch_size":
                n = _parse_int(raw, where(section, key), errors)
                if n < 1:
                    errors.append(f"{where(section, key)}: must be at least 1")
                overrides[key] = n
    if errors:
        raise ConfigError("\n".join(errors))
    return ExperimentConfig(
        family=family,
        losses=losses,
        algorithms=algos,
        steps=steps,
        runs=runs,
        seed=seed,
        backend=backend,
        output_dir=get("output", "dir", "results").strip(),
        prefix=get("output", "prefix", "experiment").strip(),
        annulus_points=annulus,
        pair_checks=pair,
        ngd_budget=budget,
        bound_scale=bound_scale,
        overrides=overrides,
        source=source,
    )


def parse_config(path) -> ExperimentConfig:
    """Read a config file, or a shipped preset when ``path`` names one."""
    p = Path(path)
    if not p.exists() and (PRESET_DIR / f"{path}.ini").exists():
        p = PRESET_DIR / f"{path}.ini"
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror}") from None
    return parse_config_text(text, source=str(p))


def list_presets() -> list[tuple[str, str]]:
    """``(name, description)`` for every shipped preset; the description is the
    first comment line of the file."""
    out = []
    for p in sorted(PRESET_DIR.glob("*.ini")):
        desc = ""
        for line in p.read_text(encoding="utf-8").splitlines():
            if line.startswith(("#", ";")):
                desc = line.lstrip("#; ").strip()
                break
        out.append((p.stem, desc))
    return out
