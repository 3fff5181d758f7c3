"""Probe-detuning scans, FWHM extraction, and control-field sweeps.

FWHM extraction never trusts grid interpolation alone: the half-height
crossings are located by bisection with fresh solver evaluations down to
1e-3 kappa. The central peak is the local maximum nearest delta_p = 0 (ties
broken toward exactly zero, then toward negative detuning). When the central
peak is not separated from the sidebands at half height the result is
returned with a "merged-peaks" note instead of an invented splitting rule.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from joblib import Parallel, delayed

from .hilbert import DEFAULT_DIM_CAP, HilbertSpace, build_space
from .model import SystemParams, liouvillian
from .observables import (
    TRUNCATION_TAIL_TOL,
    ObservableSet,
    TruncationError,
    observable_set,
    truncation_ok,
)
from .steadystate import steady_state

__all__ = [
    "Spectrum",
    "FwhmResult",
    "WindowError",
    "QuantumPointSolver",
    "default_window",
    "resolve_fock_dim",
    "spectrum",
    "fwhm",
    "sweep_control",
    "min_fwhm",
]

METHODS = ("quantum-steady", "mcwf", "semiclassical")

MIN_SCAN_POINTS = 41

# Half-height crossings are bisected to this resolution (units of kappa).
FWHM_XTOL = 1e-3

# Minimum-FWHM search tolerance in omega_c (units of kappa).
OMEGA_XTOL = 1e-2

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class WindowError(RuntimeError):
    """Half height was not reached inside the scan window."""


@dataclass(frozen=True)
class Spectrum:
    """Observable bundle per probe detuning, tagged with the producing method.

    transmission_se is per-point 1-sigma statistical error of the
    (unit-normalized) transmission; zero for deterministic methods.
    """

    detunings: np.ndarray
    points: tuple[ObservableSet, ...]
    method: str
    transmission_se: np.ndarray | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        d = np.asarray(self.detunings, dtype=float)
        if d.ndim != 1 or len(d) != len(self.points):
            raise ValueError("detunings and points must align")
        if len(d) < MIN_SCAN_POINTS:
            raise ValueError(f"spectrum needs at least {MIN_SCAN_POINTS} points, got {len(d)}")
        if np.any(np.diff(d) <= 0):
            raise ValueError("detunings must be strictly increasing")

    @property
    def transmission(self) -> np.ndarray:
        return np.array([p.transmission for p in self.points])


@dataclass(frozen=True)
class FwhmResult:
    """Central-peak width; crossings bracket the refined peak location.

    refined is True when crossings came from solver-in-the-loop bisection
    (False means grid interpolation only, e.g. when no callback was given).
    uncertainty (units of kappa) is set when statistical noise clamped the
    bisection before reaching the geometric tolerance. notes carries
    diagnostics such as "merged-peaks" or "global-peak".
    """

    fwhm: float
    peak_location: float
    peak_height: float
    left_cross: float
    right_cross: float
    refined: bool
    uncertainty: float | None = None
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if not (self.left_cross < self.peak_location < self.right_cross):
            raise ValueError("crossings must bracket the peak")
        if self.fwhm <= 0:
            raise ValueError("fwhm must be positive")


def default_window(params: SystemParams) -> tuple[float, float]:
    """Scan window capturing both sidebands, floored for the empty cavity.

    Sidebands sit at +-sqrt(g^2 + omega_c^2); the 2*kappa floor keeps the
    bare Lorentzian (FWHM = kappa) resolvable when both couplings vanish.
    """
    half = max(2.0 * math.hypot(params.g, params.omega_c), 2.0 * params.kappa)
    return (-half, half)


def _auto_fock_start(params: SystemParams) -> int:
    return max(4, math.ceil(8.0 * (params.epsilon / params.kappa) ** 2 + 4.0))


class QuantumPointSolver:
    """Steady-state solve at a given detuning, with GMRES warm starting.

    Holds the space fixed; raises TruncationError (naming the detuning) when
    the photon-distribution tail violates the adequacy rule.
    """

    def __init__(
        self,
        params: SystemParams,
        space: HilbertSpace,
        method: str = "auto",
        enforce_tail: bool = True,
    ):
        self.params = params
        self.space = space
        self.method = method
        self.enforce_tail = enforce_tail
        self._last_x: np.ndarray | None = None

    def solve(self, delta_p: float):
        p = replace(self.params, delta_p=float(delta_p))
        lsup = liouvillian(self.space, p)
        rho = steady_state(lsup, method=self.method, x0=self._last_x)
        self._last_x = rho.vectorized()
        return rho, p

    def __call__(self, delta_p: float) -> tuple[ObservableSet, float]:
        rho, p = self.solve(delta_p)
        obs = observable_set(rho, p)
        if self.enforce_tail and not truncation_ok(obs.photon_dist):
            raise TruncationError(
                f"P_{self.space.fock_dim - 1} = {obs.photon_dist[-1]:.3e} >= "
                f"{TRUNCATION_TAIL_TOL:g} at delta_p = {delta_p:+.6f}; raise fock_dim"
            )
        return obs, 0.0


def resolve_fock_dim(
    params: SystemParams,
    n_atoms: int,
    probe_deltas: Sequence[float] | None = None,
    start: int | None = None,
    dim_cap: int = DEFAULT_DIM_CAP,
    solver_method: str = "auto",
) -> int:
    """Smallest Fock truncation passing the tail rule at the probe detunings.

    Probes default to the transmission maxima candidates: the EIT resonance
    and both sidebands. Starts at max(4, ceil(8 (eps/kappa)^2 + 4)) and grows
    by 2; propagates DimensionCapError when growth hits the cap.
    """
    if probe_deltas is None:
        side = math.hypot(params.g, params.omega_c)
        probe_deltas = (0.0, -side, side)
    fock = start if start is not None else _auto_fock_start(params)
    while True:
        space = build_space(n_atoms, fock, dim_cap=dim_cap)
        solver = QuantumPointSolver(params, space, method=solver_method, enforce_tail=False)
        worst = 0.0
        for delta in probe_deltas:
            obs, _ = solver(delta)
            worst = max(worst, float(obs.photon_dist[-1]))
        if worst < TRUNCATION_TAIL_TOL:
            return fock
        fock += 2


def _solve_grid(solver, deltas, n_jobs: int):
    """Sequential (warm-started) or chunked-parallel point solves."""
    if n_jobs <= 1 or len(deltas) < 4:
        return [solver(d) for d in deltas]
    chunks = np.array_split(np.asarray(deltas), n_jobs)

    def run_chunk(chunk):
        return [solver(d) for d in chunk]

    out = Parallel(n_jobs=n_jobs)(delayed(run_chunk)(c) for c in chunks if len(c))
    return [item for chunk in out for item in chunk]


def _central_peak_index(deltas: np.ndarray, values: np.ndarray) -> tuple[int, tuple[str, ...]]:
    n = len(values)
    candidates = [
        i for i in range(1, n - 1) if values[i] >= values[i - 1] and values[i] >= values[i + 1]
    ]
    if not candidates:
        return int(np.argmax(values)), ("global-peak",)
    # nearest |delta| first; exact zero wins ties, then the negative side
    return min(candidates, key=lambda i: (abs(deltas[i]), deltas[i])), ()


def spectrum(
    params: SystemParams,
    n_atoms: int,
    window: tuple[float, float] | None = None,
    n_points: int = MIN_SCAN_POINTS,
    method: str = "quantum-steady",
    fock_dim: int | None = None,
    refine_levels: int = 2,
    n_jobs: int = 1,
    point_solver: Callable[[float], tuple[ObservableSet, float]] | None = None,
    solver_method: str = "auto",
    dim_cap: int = DEFAULT_DIM_CAP,
) -> Spectrum:
    """Scan the probe detuning; grid refined adaptively near the central peak.

    fock_dim None means auto-resolution by the tail rule (quantum method).
    point_solver overrides the built-in quantum solver (the mcwf and
    semiclassical front ends pass theirs); it must return (ObservableSet, se).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if window is None:
        window = default_window(params)
    lo, hi = float(window[0]), float(window[1])
    if not lo < 0.0 < hi:
        raise ValueError("scan window must contain delta_p = 0")
    if n_points < MIN_SCAN_POINTS:
        raise ValueError(f"n_points must be >= {MIN_SCAN_POINTS}")

    if point_solver is None:
        if method != "quantum-steady":
            raise ValueError(f"method {method!r} requires an explicit point_solver")
        if fock_dim is None:
            fock_dim = resolve_fock_dim(
                params, n_atoms, dim_cap=dim_cap, solver_method=solver_method
            )
        space = build_space(n_atoms, fock_dim, dim_cap=dim_cap)
        point_solver = QuantumPointSolver(params, space, method=solver_method)

    deltas = list(np.linspace(lo, hi, n_points))
    results = {d: r for d, r in zip(deltas, _solve_grid(point_solver, deltas, n_jobs))}

    # refinement: bisect the intervals flanking the current central peak
    for _ in range(max(0, refine_levels)):
        ds = sorted(results)
        vals = np.array([results[d][0].transmission for d in ds])
        p, _notes = _central_peak_index(np.asarray(ds), vals)
        new_pts = []
        for a, b in ((max(0, p - 2), p), (p, min(len(ds) - 1, p + 2))):
            for i in range(a, b):
                mid = 0.5 * (ds[i] + ds[i + 1])
                if min(abs(mid - x) for x in results) > FWHM_XTOL / 2:
                    new_pts.append(mid)
        if not new_pts:
            break
        for d, r in zip(new_pts, _solve_grid(point_solver, new_pts, n_jobs)):
            results[d] = r

    ds = sorted(results)
    pts = tuple(results[d][0] for d in ds)
    ses = np.array([results[d][1] for d in ds])
    return Spectrum(
        detunings=np.asarray(ds),
        points=pts,
        method=method,
        transmission_se=ses if np.any(ses > 0) else None,
    )


def _golden_max(f, a: float, b: float, xtol: float) -> tuple[float, float]:
    """Golden-section maximize on [a, b]."""
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while (b - a) > xtol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
    return (x1, f1) if f1 >= f2 else (x2, f2)


def fwhm(
    spec: Spectrum,
    refine: Callable[[float], float] | None,
    xtol: float = FWHM_XTOL,
    noise_se: float = 0.0,
) -> FwhmResult:
    """Width of the central peak at half its (refined) height.

    refine(delta_p) must return the unit-normalized transmission from a fresh
    solve; None degrades to grid interpolation (refined=False). noise_se > 0
    (1-sigma transmission error, e.g. from a trajectory ensemble) clamps the
    bisection once values are within 3 sigma of half height, and the result
    then carries an uncertainty.
    """
    deltas = np.asarray(spec.detunings, dtype=float)
    values = spec.transmission.astype(float)
    notes: list[str] = []

    p_idx, peak_notes = _central_peak_index(deltas, values)
    notes.extend(peak_notes)

    cache: dict[float, float] = {}

    def eval_fresh(x: float) -> float:
        key = round(float(x), 12)
        if key not in cache:
            cache[key] = float(refine(key))
        return cache[key]

    if refine is not None and 0 < p_idx < len(deltas) - 1:
        peak_location, peak_height = _golden_max(
            eval_fresh, deltas[p_idx - 1], deltas[p_idx + 1], xtol
        )
        if peak_height < values[p_idx]:  # grid point was already the best seen
            peak_location, peak_height = float(deltas[p_idx]), float(values[p_idx])
        refined = True
    else:
        peak_location, peak_height = float(deltas[p_idx]), float(values[p_idx])
        refined = refine is not None
        if refine is None:
            notes.append("grid-interpolated")

    half = 0.5 * peak_height

    def walk(direction: int):
        """Find the bracketing grid pair on one side; returns (inner, outer)."""
        i = p_idx
        prev_val = values[p_idx]
        rising_seen = False
        while True:
            j = i + direction
            if j < 0 or j >= len(deltas):
                raise WindowError(
                    "half height not reached inside the scan window on the "
                    f"{'right' if direction > 0 else 'left'} side; widen the window"
                )
            v = values[j]
            if v > prev_val and v >= half:
                rising_seen = True
            if v < half:
                return i, j, rising_seen
            prev_val = v
            i = j

    def locate(direction: int) -> tuple[float, float]:
        i, j, rising = walk(direction)
        if rising and "merged-peaks" not in notes:
            notes.append("merged-peaks")
        lo_x, hi_x = deltas[i], deltas[j]  # value(lo_x) >= half > value(hi_x)
        lo_v, hi_v = values[i], values[j]
        if refine is None:
            frac = (lo_v - half) / max(lo_v - hi_v, 1e-300)
            return float(lo_x + frac * (hi_x - lo_x)), 0.0
        clamped = 0.0
        while abs(hi_x - lo_x) > xtol:
            mid = 0.5 * (lo_x + hi_x)
            v = eval_fresh(mid)
            if noise_se > 0 and abs(v - half) <= 3.0 * noise_se:
                clamped = abs(hi_x - lo_x)
                break
            if v >= half:
                lo_x = mid
            else:
                hi_x = mid
        return 0.5 * (lo_x + hi_x), clamped

    left, unc_l = locate(-1)
    right, unc_r = locate(+1)
    uncertainty = (unc_l + unc_r) or None
    return FwhmResult(
        fwhm=right - left,
        peak_location=peak_location,
        peak_height=peak_height,
        left_cross=left,
        right_cross=right,
        refined=refined,
        uncertainty=uncertainty,
        notes=tuple(notes),
    )


def _fwhm_at(
    params: SystemParams,
    n_atoms: int,
    method: str,
    window,
    n_points,
    fock_dim,
    n_jobs,
    xtol,
    point_solver_factory,
    solver_method,
    dim_cap,
) -> FwhmResult:
    """One spectrum + FWHM extraction, with a single widened-window retry."""
    win = window
    for attempt in (0, 1):
        solver = point_solver_factory(params) if point_solver_factory else None
        spec = spectrum(
            params,
            n_atoms,
            window=win,
            n_points=n_points,
            method=method,
            fock_dim=fock_dim,
            n_jobs=n_jobs,
            point_solver=solver,
            solver_method=solver_method,
            dim_cap=dim_cap,
        )
        if solver is None:
            # rebuild the quantum solver refine path against the same space
            solver = _quantum_refine_from_spectrum(params, n_atoms, spec, fock_dim, solver_method, dim_cap)
        noise = 0.0
        if spec.transmission_se is not None:
            noise = float(np.max(spec.transmission_se))
        refine_cb = _as_refine_callback(solver)
        try:
            return fwhm(spec, refine_cb, xtol=xtol, noise_se=noise)
        except WindowError:
            if attempt == 1:
                raise
            base = win if win is not None else default_window(params)
            win = (2.0 * base[0], 2.0 * base[1])
    raise AssertionError("unreachable")


def _as_refine_callback(solver) -> Callable[[float], float]:
    def cb(delta_p: float) -> float:
        obs, _se = solver(delta_p)
        return obs.transmission

    return cb


def _quantum_refine_from_spectrum(params, n_atoms, spec, fock_dim, solver_method, dim_cap):
    fock = fock_dim if fock_dim is not None else len(spec.points[0].photon_dist)
    space = build_space(n_atoms, fock, dim_cap=dim_cap)
    return QuantumPointSolver(params, space, method=solver_method)


def sweep_control(
    params: SystemParams,
    n_atoms: int,
    omega_grid: Sequence[float],
    method: str = "quantum-steady",
    g_rule: str = "fixed",
    g0: float | None = None,
    window: tuple[float, float] | None = None,
    n_points: int = MIN_SCAN_POINTS,
    fock_dim: int | None = None,
    xtol: float = FWHM_XTOL,
    n_jobs: int = 1,
    point_solver_factory=None,
    solver_method: str = "auto",
    dim_cap: int = DEFAULT_DIM_CAP,
) -> list[tuple[float, FwhmResult]]:
    """FWHM per control strength, with optional g = g0/sqrt(n_atoms) scaling."""
    if g_rule not in ("fixed", "inverse-sqrt-n"):
        raise ValueError(f"unknown g_rule {g_rule!r}")
    if len(omega_grid) == 0:
        raise ValueError("omega_grid is empty")
    base_g = (g0 if g0 is not None else params.g) / math.sqrt(n_atoms)
    out = []
    for omega in omega_grid:
        p = replace(
            params,
            omega_c=float(omega),
            g=base_g if g_rule == "inverse-sqrt-n" else params.g,
        )
        res = _fwhm_at(
            p, n_atoms, method, window, n_points, fock_dim, n_jobs, xtol,
            point_solver_factory, solver_method, dim_cap,
        )
        out.append((float(omega), res))
    return out


def min_fwhm(
    params: SystemParams,
    n_atoms: int,
    omega_range: tuple[float, float],
    method: str = "quantum-steady",
    omega_xtol: float = OMEGA_XTOL,
    seed_points: int = 5,
    g_rule: str = "fixed",
    g0: float | None = None,
    window: tuple[float, float] | None = None,
    n_points: int = MIN_SCAN_POINTS,
    fock_dim: int | None = None,
    n_jobs: int = 1,
    point_solver_factory=None,
    solver_method: str = "auto",
    dim_cap: int = DEFAULT_DIM_CAP,
) -> tuple[float, FwhmResult]:
    """Golden-section minimum of FWHM(omega_c) over omega_range.

    Falls back to a plain grid scan (with a warning) when the seed grid shows
    no interior bracket, e.g. a monotone or edge-minimal objective.
    """
    lo, hi = float(omega_range[0]), float(omega_range[1])
    if not hi > lo:
        raise ValueError("omega_range must be an increasing pair")

    cache: dict[float, FwhmResult] = {}

    def objective(omega: float) -> float:
        key = round(float(omega), 12)
        if key not in cache:
            sweep = sweep_control(
                params, n_atoms, [key], method,
                g_rule=g_rule, g0=g0, window=window, n_points=n_points,
                fock_dim=fock_dim, n_jobs=n_jobs,
                point_solver_factory=point_solver_factory,
                solver_method=solver_method, dim_cap=dim_cap,
            )
            cache[key] = sweep[0][1]
        return cache[key].fwhm

    seeds = list(np.linspace(lo, hi, max(3, seed_points)))
    vals = [objective(s) for s in seeds]
    m = int(np.argmin(vals))

    if m in (0, len(seeds) - 1):
        warnings.warn(
            "min_fwhm: no interior bracket on the seed grid; "
            "falling back to a denser grid scan",
            stacklevel=2,
        )
        fine = np.linspace(lo, hi, 2 * len(seeds) + 1)
        for s in fine:
            objective(float(s))
    else:
        a, b = seeds[m - 1], seeds[m + 1]
        x1 = b - _GOLDEN * (b - a)
        x2 = a + _GOLDEN * (b - a)
        f1, f2 = objective(x1), objective(x2)
        while (b - a) > omega_xtol:
            if f1 > f2:
                a, x1, f1 = x1, x2, f2
                x2 = a + _GOLDEN * (b - a)
                f2 = objective(x2)
            else:
                b, x2, f2 = x2, x1, f1
                x1 = b - _GOLDEN * (b - a)
                f1 = objective(x1)

    omega_star = min(cache, key=lambda k: cache[k].fwhm)
    return float(omega_star), cache[omega_star]
