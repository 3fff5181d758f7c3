"""Experiment configuration files: INI-style, one section per run.

The section name is the experiment kind. All rates are in units of kappa.
The probe strength is given either as `epsilon` or as `epsilon_sq` =
(epsilon/kappa)^2, the customary square-of-drive shorthand; the two keys are
mutually exclusive. `g_scaling = inverse-sqrt-n` divides g by sqrt(n_atoms),
keeping the collective coupling fixed across atom numbers.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

from .model import SystemParams

__all__ = ["KINDS", "ConfigError", "RunConfig", "parse_config", "effective_g"]

KINDS = (
    "spectrum",
    "fwhm-map",
    "control-sweep",
    "min-fwhm",
    "statistics",
    "semiclassical-compare",
)

METHOD_NAMES = ("quantum-steady", "mcwf", "semiclassical")

_COMMON_KEYS = {
    "n_atoms", "n_atoms_list", "g", "g_scaling", "omega_c",
    "epsilon", "epsilon_sq", "kappa", "gamma31", "gamma32", "gamma1", "gamma2",
    "method", "fock_dim", "window", "n_points", "seed", "n_traj", "threads",
}

_KIND_KEYS: dict[str, set[str]] = {
    "spectrum": set(),
    "fwhm-map": {"g_list", "g_omega_pairs"},
    "control-sweep": {"omega_grid"},
    "min-fwhm": {"omega_min", "omega_max"},
    "statistics": {
        "g_list", "g_collective_list", "delta_p", "delta_p_rule",
        "omega_rule", "omega_min", "omega_max",
    },
    "semiclassical-compare": {
        "methods", "scan", "omega_grid", "quantum_n_atoms", "delta_p",
    },
}


class ConfigError(ValueError):
    """Schema violation; carries the offending field path."""

    def __init__(self, fieldpath: str, message: str):
        self.field = fieldpath
        super().__init__(f"{fieldpath}: {message}")


@dataclass(frozen=True)
class RunConfig:
    """Resolved experiment description.

    params holds the unscaled g; effective_g(config, n) applies the scaling
    rule. extras carries the kind-specific payload (grids, rules, pairs).
    """

    kind: str
    params: SystemParams
    n_atoms_list: tuple[int, ...]
    method: str
    g_scaling: str
    fock_dim: int | None
    window: tuple[float, float] | None
    n_points: int
    seed: int
    n_traj: int
    threads: int
    extras: dict = field(default_factory=dict)
    source: str = ""


def effective_g(config: RunConfig, n_atoms: int, g: float | None = None) -> float:
    base = config.params.g if g is None else g
    if config.g_scaling == "inverse-sqrt-n":
        return base / math.sqrt(n_atoms)
    return base


def _fail(kind: str, key: str, msg: str):
    raise ConfigError(f"{kind}.{key}", msg)


def _float(sec, kind, key, default=None, required=False):
    if key not in sec:
        if required:
            _fail(kind, key, "required key is missing")
        return default
    try:
        return float(sec[key])
    except ValueError:
        _fail(kind, key, f"not a number: {sec[key]!r}")


def _int(sec, kind, key, default=None, required=False):
    if key not in sec:
        if required:
            _fail(kind, key, "required key is missing")
        return default
    try:
        return int(sec[key])
    except ValueError:
        _fail(kind, key, f"not an integer: {sec[key]!r}")


def _float_list(sec, kind, key, required=False):
    if key not in sec:
        if required:
            _fail(kind, key, "required key is missing")
        return None
    try:
        vals = tuple(float(x) for x in sec[key].split(",") if x.strip())
    except ValueError:
        _fail(kind, key, f"not a comma-separated list of numbers: {sec[key]!r}")
    if not vals:
        _fail(kind, key, "list is empty")
    return vals


def _int_list(sec, kind, key, required=False):
    if key not in sec:
        if required:
            _fail(kind, key, "required key is missing")
        return None
    try:
        vals = tuple(int(x) for x in sec[key].split(",") if x.strip())
    except ValueError:
        _fail(kind, key, f"not a comma-separated list of integers: {sec[key]!r}")
    if not vals:
        _fail(kind, key, "list is empty")
    return vals


def parse_config(path: str | Path) -> RunConfig:
    """Read and validate one experiment config; ConfigError names the field."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(str(path), "config file not found")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(str(path), f"unparseable config: {exc}") from exc

    sections = cp.sections()
    if len(sections) != 1:
        raise ConfigError(
            str(path),
            f"config must contain exactly one experiment section, found {sections}",
        )
    kind = sections[0]
    if kind not in KINDS:
        raise ConfigError(kind, f"unknown experiment kind (expected one of {KINDS})")
    sec = cp[kind]

    allowed = _COMMON_KEYS | _KIND_KEYS[kind]
    for key in sec:
        if key not in allowed:
            _fail(kind, key, "unknown key")

    # atoms
    if "n_atoms" in sec and "n_atoms_list" in sec:
        _fail(kind, "n_atoms", "give either n_atoms or n_atoms_list, not both")
    if "n_atoms_list" in sec:
        atoms = _int_list(sec, kind, "n_atoms_list", required=True)
    else:
        atoms = (_int(sec, kind, "n_atoms", required=True),)
    for n in atoms:
        if n < 1:
            _fail(kind, "n_atoms", f"atom count must be >= 1, got {n}")

    # probe strength
    has_eps, has_eps_sq = "epsilon" in sec, "epsilon_sq" in sec
    if has_eps == has_eps_sq:
        _fail(
            kind, "epsilon",
            "exactly one of epsilon or epsilon_sq is required",
        )
    if has_eps:
        epsilon = _float(sec, kind, "epsilon", required=True)
    else:
        eps_sq = _float(sec, kind, "epsilon_sq", required=True)
        if eps_sq < 0:
            _fail(kind, "epsilon_sq", "must be non-negative")
        epsilon = math.sqrt(eps_sq)

    # fwhm-map pairs and statistics g lists carry their own couplings
    g = _float(sec, kind, "g", default=None)
    g_elsewhere = (kind == "fwhm-map" and "g_omega_pairs" in sec) or (
        kind == "statistics"
        and ("g_list" in sec or "g_collective_list" in sec)
    )
    if g is None and not g_elsewhere:
        _fail(kind, "g", "required key is missing")
    omega_c = _float(sec, kind, "omega_c", default=None)

    g_scaling = sec.get("g_scaling", "fixed")
    if g_scaling not in ("fixed", "inverse-sqrt-n"):
        _fail(kind, "g_scaling", f"must be fixed or inverse-sqrt-n, got {g_scaling!r}")

    method = sec.get("method", "quantum-steady")
    if method not in METHOD_NAMES:
        _fail(kind, "method", f"must be one of {METHOD_NAMES}, got {method!r}")

    window = None
    if "window" in sec:
        win = _float_list(sec, kind, "window", required=True)
        if len(win) != 2 or not win[0] < 0.0 < win[1]:
            _fail(kind, "window", "needs two values lo < 0 < hi")
        window = (win[0], win[1])

    n_points = _int(sec, kind, "n_points", default=41)
    seed = _int(sec, kind, "seed", default=0)
    n_traj = _int(sec, kind, "n_traj", default=256)
    threads = _int(sec, kind, "threads", default=1)
    fock_dim = _int(sec, kind, "fock_dim", default=None)
    if fock_dim is not None and fock_dim < 2:
        _fail(kind, "fock_dim", "must be >= 2")
    if n_traj < 2:
        _fail(kind, "n_traj", "must be >= 2")
    if threads < 1:
        _fail(kind, "threads", "must be >= 1")

    extras: dict = {}

    def need_omega_c():
        if omega_c is None:
            _fail(kind, "omega_c", "required key is missing")

    if kind == "spectrum":
        need_omega_c()
        if len(atoms) != 1:
            _fail(kind, "n_atoms", "spectrum runs take a single atom count")

    elif kind == "fwhm-map":
        has_glist, has_pairs = "g_list" in sec, "g_omega_pairs" in sec
        if has_glist == has_pairs:
            _fail(kind, "g_list", "give exactly one of g_list or g_omega_pairs")
        if has_glist:
            need_omega_c()
            extras["g_list"] = _float_list(sec, kind, "g_list", required=True)
        else:
            pairs = []
            for item in sec["g_omega_pairs"].split(","):
                item = item.strip()
                if not item:
                    continue
                parts = item.split(":")
                if len(parts) != 2:
                    _fail(kind, "g_omega_pairs", f"expected g:omega_c, got {item!r}")
                try:
                    pairs.append((float(parts[0]), float(parts[1])))
                except ValueError:
                    _fail(kind, "g_omega_pairs", f"not numeric: {item!r}")
            if not pairs:
                _fail(kind, "g_omega_pairs", "list is empty")
            extras["g_omega_pairs"] = tuple(pairs)

    elif kind == "control-sweep":
        extras["omega_grid"] = _float_list(sec, kind, "omega_grid", required=True)

    elif kind == "min-fwhm":
        lo = _float(sec, kind, "omega_min", required=True)
        hi = _float(sec, kind, "omega_max", required=True)
        if not hi > lo:
            _fail(kind, "omega_max", "omega_max must exceed omega_min")
        extras["omega_range"] = (lo, hi)

    elif kind == "statistics":
        g_fixed = _float_list(sec, kind, "g_list") or ()
        g_coll = _float_list(sec, kind, "g_collective_list") or ()
        if not g_fixed and not g_coll:
            _fail(kind, "g_list", "need g_list and/or g_collective_list")
        extras["g_list"] = g_fixed
        extras["g_collective_list"] = g_coll
        omega_rule = sec.get("omega_rule", "fixed")
        if omega_rule not in ("fixed", "min-fwhm"):
            _fail(kind, "omega_rule", f"must be fixed or min-fwhm, got {omega_rule!r}")
        if omega_rule == "fixed":
            need_omega_c()
        else:
            lo = _float(sec, kind, "omega_min", required=True)
            hi = _float(sec, kind, "omega_max", required=True)
            if not hi > lo:
                _fail(kind, "omega_max", "omega_max must exceed omega_min")
            extras["omega_range"] = (lo, hi)
        extras["omega_rule"] = omega_rule
        rule = sec.get("delta_p_rule", "fixed")
        if rule not in ("fixed", "half-fwhm"):
            _fail(kind, "delta_p_rule", f"must be fixed or half-fwhm, got {rule!r}")
        extras["delta_p_rule"] = rule
        extras["delta_p"] = _float(sec, kind, "delta_p", default=0.0)

    elif kind == "semiclassical-compare":
        methods = tuple(
            m.strip() for m in sec.get("methods", "quantum-steady,semiclassical").split(",")
        )
        if len(methods) < 2:
            _fail(kind, "methods", "need at least two methods to compare")
        for m in methods:
            if m not in METHOD_NAMES:
                _fail(kind, "methods", f"unknown method {m!r}")
        extras["methods"] = methods
        scan = sec.get("scan", "detuning")
        if scan not in ("detuning", "control"):
            _fail(kind, "scan", f"must be detuning or control, got {scan!r}")
        extras["scan"] = scan
        if scan == "control":
            extras["omega_grid"] = _float_list(sec, kind, "omega_grid", required=True)
        else:
            need_omega_c()
        extras["quantum_n_atoms"] = _int(
            sec, kind, "quantum_n_atoms", default=atoms[0]
        )
        extras["delta_p"] = _float(sec, kind, "delta_p", default=0.0)

    try:
        params = SystemParams(
            g=g if g is not None else 0.0,
            omega_c=omega_c if omega_c is not None else 0.0,
            epsilon=epsilon,
            kappa=_float(sec, kind, "kappa", default=1.0),
            gamma31=_float(sec, kind, "gamma31", default=0.5),
            gamma32=_float(sec, kind, "gamma32", default=0.5),
            gamma1=_float(sec, kind, "gamma1", default=0.0),
            gamma2=_float(sec, kind, "gamma2", default=0.0),
        )
    except ValueError as exc:
        raise ConfigError(kind, str(exc)) from exc

    return RunConfig(
        kind=kind,
        params=params,
        n_atoms_list=atoms,
        method=method,
        g_scaling=g_scaling,
        fock_dim=fock_dim,
        window=window,
        n_points=n_points,
        seed=seed,
        n_traj=n_traj,
        threads=threads,
        extras=extras,
        source=str(path),
    )
