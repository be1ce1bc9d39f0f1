"""JSON configuration documents: parameters, experiments and the registry location."""

import json
import math
import os
from pathlib import Path
from typing import Any, Dict, Optional

from .model import RATE_NAMES, KineticParams, ScalingConfig, scaling_for


HOME_ENV = "CRN_REGIMES_HOME"
DEFAULT_HOME = Path.home() / ".crn-regimes"

DEFAULT_TOLERANCES = {
    "slow_sup": 0.05,
    "fast_tv": 0.10,
    "production_rel": 0.05,
    "monotone_slack": 0.10,
}

DEFAULT_INITIAL = {
    "q0": None,
    "l0": None,
    "s0": None,
    "u0": None,
    "perturbation": 0.0,
    "r": 0,
    "l": 0,
    "q": 0,
    "u_small": 0,
}

_DEFAULT_EXPERIMENT = {
    "regulated": True,
    "replicas": 1,
    "grid_points": 200,
    "burn_in": 0.1,
    "fast_windows": 10,
    "base_seed": 0,
    "output_dir": "out",
    "workers": 1,
    "dt": None,
    "check_invariants": False,
}

REQUIRED_EXPERIMENT_KEYS = ("params", "C_M", "C_U", "N_list", "horizon")


class ConfigError(ValueError):
    """Invalid configuration, anchored to a line of the source document."""

    def __init__(self, message: str, path: str = "<config>", line: int = 1):
        self.path = path
        self.line = line
        self.message = message
        super().__init__(f"{path}:{line}: {message}")


class ConfigDocument:
    """A parsed JSON object that remembers its text for error locations."""

    def __init__(self, data: Dict[str, Any], text: str = "", path: str = "<config>"):
        if not isinstance(data, dict):
            raise ConfigError("top level must be a JSON object", path, 1)
        self.data = data
        self.text = text
        self.path = path

    def line_of(self, key: str) -> int:
        needle = f'"{key}"'
        for number, line in enumerate(self.text.splitlines(), start=1):
            if needle in line:
                return number
        return 1

    def error(self, key: str, message: str) -> ConfigError:
        return ConfigError(message, self.path, self.line_of(key))

    def require(self, key: str) -> Any:
        if key not in self.data:
            raise ConfigError(f"missing required key '{key}'", self.path, 1)
        return self.data[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.data.get(key, default)

    def number(self, key: str, default: Any = None, *, positive: bool = False, minimum: Optional[float] = None) -> float:
        value = self.data.get(key, default) if default is not None else self.require(key)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise self.error(key, f"'{key}' must be a finite number, got {value!r}")
        if positive and value <= 0:
            raise self.error(key, f"'{key}' must be > 0, got {value!r}")
        if minimum is not None and value < minimum:
            raise self.error(key, f"'{key}' must be >= {minimum}, got {value!r}")
        return float(value)

    def integer(self, key: str, default: Any = None, *, minimum: Optional[int] = None) -> int:
        value = self.data.get(key, default) if default is not None else self.require(key)
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.error(key, f"'{key}' must be an integer, got {value!r}")
        if minimum is not None and value < minimum:
            raise self.error(key, f"'{key}' must be >= {minimum}, got {value!r}")
        return value

    def boolean(self, key: str, default: bool) -> bool:
        value = self.data.get(key, default)
        if not isinstance(value, bool):
            raise self.error(key, f"'{key}' must be true or false, got {value!r}")
        return value

    def child(self, key: str) -> "ConfigDocument":
        value = self.data.get(key, {})
        if not isinstance(value, dict):
            raise self.error(key, f"'{key}' must be a JSON object")
        return ConfigDocument(value, self.text, self.path)


def load_document(path) -> ConfigDocument:
    path = str(path)
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", path, 1) from e
    return parse_document(text, path)


def parse_document(text: str, path: str = "<config>") -> ConfigDocument:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", path, e.lineno) from e
    return ConfigDocument(data, text, path)


def save_json(data: Any, path) -> None:
    """Write sorted, indented JSON with a trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def params_from(doc: ConfigDocument) -> KineticParams:
    values = {}
    for name in RATE_NAMES:
        values[name] = doc.number(name, positive=True)
    return KineticParams(**values)


def ratios_from(doc: ConfigDocument):
    C_M = doc.number("C_M")
    C_U = doc.number("C_U", positive=True)
    if not C_M > 1:
        raise doc.error("C_M", f"'C_M' must be > 1, got {C_M}")
    return C_M, C_U


def scaling_from(doc: ConfigDocument, N: Optional[int] = None) -> ScalingConfig:
    C_M, C_U = ratios_from(doc)
    if N is None:
        N = doc.integer("N", minimum=1)
    M0 = doc.get("M0")
    U0 = doc.get("U0")
    try:
        return scaling_for(N, C_M, C_U, M0=M0, U0=U0)
    except ValueError as e:
        raise doc.error("M0" if M0 is not None else "N", str(e)) from e


def load_network(path):
    """Document, rates, C_M, C_U and regulation flag of a parameter file.

    The rates may sit at the top level or under a "params" object.
    """
    doc = load_document(path)
    rates = doc.child("params") if "params" in doc.data else doc
    C_M, C_U = ratios_from(doc)
    return doc, params_from(rates), C_M, C_U, doc.boolean("regulated", True)


def experiment_defaults() -> Dict[str, Any]:
    defaults = dict(_DEFAULT_EXPERIMENT)
    defaults["initial"] = dict(DEFAULT_INITIAL)
    defaults["tolerances"] = dict(DEFAULT_TOLERANCES)
    return defaults


def registry_home(override=None) -> Path:
    """CLI flag, then CRN_REGIMES_HOME, then ~/.crn-regimes."""
    if override:
        return Path(override)
    env = os.environ.get(HOME_ENV)
    if env:
        return Path(env)
    return DEFAULT_HOME
