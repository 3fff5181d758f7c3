"""Quantum-trajectory unraveling of the master equation.

Deterministic evolution under H_eff = H - (i/2) sum_m r_m C_m^dag C_m with
fixed-step RK4; a jump fires when the decaying norm^2 crosses a uniform
threshold, the crossing time is refined by bisection to dt/100, and the
channel is drawn with probability proportional to r_m ||C_m psi||^2.

Trajectory i of an ensemble uses default_rng(base_seed + i), so a single
run_trajectory call with that seed reproduces it bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np
from joblib import Parallel, delayed

from .hilbert import HilbertSpace, Operator, collective, fock_projector, number
from .model import SystemParams, hamiltonian, jump_operators
from .observables import ObservableSet, empty_cavity_photons

__all__ = [
    "TrajectoryResult",
    "EnsembleAverage",
    "run_trajectory",
    "run_ensemble",
    "ensemble_average",
    "trajectory_steady_average",
    "steady_window_average",
    "default_observables",
    "McwfPointSolver",
]

DEFAULT_DT_MAX = 0.01

# final fraction of the time axis considered relaxed
STEADY_WINDOW_FRAC = 0.2

_BISECT_ITERS = 7  # halves dt past the /100 refinement target


@dataclass(frozen=True)
class TrajectoryResult:
    """One stochastic trajectory: expectation records on the sample grid."""

    times: np.ndarray
    records: dict[str, np.ndarray]
    n_jumps: int
    jump_times: np.ndarray
    seed: int


@dataclass(frozen=True)
class EnsembleAverage:
    """Across-trajectory mean and standard error per observable and time."""

    times: np.ndarray
    means: dict[str, np.ndarray]
    sems: dict[str, np.ndarray]
    n_traj: int


def default_observables(space: HilbertSpace) -> dict[str, Operator]:
    """Operators needed to assemble an ObservableSet from trajectory data.

    n_nm1 is a^dag a^dag a a, the unnormalized photon-pair correlator.
    """
    n_op = number(space)
    obs: dict[str, Operator] = {
        "n": n_op,
        "n_nm1": n_op @ n_op - n_op,
        "s11": collective(space, 1, 1),
        "s22": collective(space, 2, 2),
        "s33": collective(space, 3, 3),
    }
    for k in range(space.fock_dim):
        obs[f"p{k}"] = fock_projector(space, k)
    return obs


def _rk4(heff, psi: np.ndarray, dt: float) -> np.ndarray:
    k1 = heff @ psi
    k2 = heff @ (psi + 0.5 * dt * k1)
    k3 = heff @ (psi + 0.5 * dt * k2)
    k4 = heff @ (psi + dt * k3)
    return psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def run_trajectory(
    space: HilbertSpace,
    params: SystemParams,
    observables: Mapping[str, Operator],
    seed: int,
    t_final: float,
    dt_max: float = DEFAULT_DT_MAX,
    psi0: np.ndarray | None = None,
    record_stride: int = 1,
) -> TrajectoryResult:
    """Integrate one trajectory from psi0 (default: all atoms in |1>, vacuum).

    record_stride thins the sample grid (the final time is always kept).
    Records are the raw complex expectations <psi|O|psi> on the normalized
    state.
    """
    if t_final <= 0:
        raise ValueError("t_final must be positive")
    if dt_max <= 0:
        raise ValueError("dt_max must be positive")
    if record_stride < 1:
        raise ValueError("record_stride must be >= 1")
    for name, op in observables.items():
        if op.space != space:
            raise ValueError(f"observable {name!r} lives in a different space")

    n_steps = math.ceil(t_final / dt_max)
    dt = t_final / n_steps

    h = hamiltonian(space, params).data
    channels = [(rate, c.data) for rate, c in jump_operators(space, params)]
    heff = h.astype(np.complex128).copy()
    for rate, c in channels:
        heff = heff - 0.5j * rate * (c.conj().T @ c)
    heff = (-1j) * heff.tocsr()  # dpsi/dt = heff @ psi

    if psi0 is None:
        psi = np.zeros(space.dim, dtype=np.complex128)
        psi[0] = 1.0
    else:
        psi = np.asarray(psi0, dtype=np.complex128).copy()
        if psi.shape != (space.dim,):
            raise ValueError("psi0 has the wrong dimension")
        psi /= np.linalg.norm(psi)

    rng = np.random.default_rng(seed)
    threshold = rng.random()

    ops = {name: op.data for name, op in observables.items()}
    rec_idx: list[int] = []
    rec_vals: dict[str, list[complex]] = {name: [] for name in ops}
    jump_times: list[float] = []

    def record(i: int, state: np.ndarray):
        norm2 = np.vdot(state, state).real
        rec_idx.append(i)
        for name, mat in ops.items():
            rec_vals[name].append(np.vdot(state, mat @ state) / norm2)

    def do_jump(state: np.ndarray, t: float) -> np.ndarray:
        weights = np.array(
            [rate * np.vdot(c @ state, c @ state).real for rate, c in channels]
        )
        total = weights.sum()
        if total <= 0.0:  # norm loss without open channels: numerical artifact
            return state / np.linalg.norm(state)
        pick = rng.random() * total
        m = int(np.searchsorted(np.cumsum(weights), pick))
        m = min(m, len(channels) - 1)
        jumped = channels[m][1] @ state
        jump_times.append(t)
        return jumped / np.linalg.norm(jumped)

    record(0, psi)
    for i in range(n_steps):
        t0 = i * dt
        remaining = dt
        while remaining > 1e-15 * dt:
            trial = _rk4(heff, psi, remaining)
            if np.vdot(trial, trial).real >= threshold:
                psi = trial
                remaining = 0.0
                break
            # bisect the crossing time inside [0, remaining]
            lo, hi = 0.0, remaining
            for _ in range(_BISECT_ITERS):
                mid = 0.5 * (lo + hi)
                probe = _rk4(heff, psi, mid)
                if np.vdot(probe, probe).real >= threshold:
                    lo = mid
                else:
                    hi = mid
            tau = 0.5 * (lo + hi)
            at_jump = _rk4(heff, psi, tau)
            psi = do_jump(at_jump, t0 + (dt - remaining) + tau)
            threshold = rng.random()
            remaining -= tau
        if (i + 1) % record_stride == 0 or i == n_steps - 1:
            record(i + 1, psi)

    times = np.array(rec_idx, dtype=float) * dt
    records = {name: np.array(vals) for name, vals in rec_vals.items()}
    return TrajectoryResult(
        times=times,
        records=records,
        n_jumps=len(jump_times),
        jump_times=np.array(jump_times),
        seed=seed,
    )


def run_ensemble(
    space: HilbertSpace,
    params: SystemParams,
    observables: Mapping[str, Operator],
    n_traj: int,
    base_seed: int,
    t_final: float,
    dt_max: float = DEFAULT_DT_MAX,
    psi0: np.ndarray | None = None,
    record_stride: int = 1,
    n_jobs: int = 1,
) -> list[TrajectoryResult]:
    """Trajectories with seeds base_seed .. base_seed + n_traj - 1."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    seeds = [base_seed + i for i in range(n_traj)]
    if n_jobs <= 1:
        return [
            run_trajectory(
                space, params, observables, s, t_final, dt_max, psi0, record_stride
            )
            for s in seeds
        ]
    return Parallel(n_jobs=n_jobs)(
        delayed(run_trajectory)(
            space, params, observables, s, t_final, dt_max, psi0, record_stride
        )
        for s in seeds
    )


def ensemble_average(results: list[TrajectoryResult]) -> EnsembleAverage:
    """Pointwise mean with standard error of the mean (ddof=1; zero for n=1)."""
    if not results:
        raise ValueError("no trajectories given")
    times = results[0].times
    names = list(results[0].records)
    for r in results[1:]:
        if r.times.shape != times.shape or not np.allclose(r.times, times):
            raise ValueError("trajectories sampled on different time grids")
    n = len(results)
    means: dict[str, np.ndarray] = {}
    sems: dict[str, np.ndarray] = {}
    for name in names:
        stack = np.stack([r.records[name] for r in results])
        means[name] = stack.mean(axis=0)
        if n > 1:
            sems[name] = np.abs(stack.std(axis=0, ddof=1)) / math.sqrt(n)
        else:
            sems[name] = np.zeros_like(times)
    return EnsembleAverage(times=times, means=means, sems=sems, n_traj=n)


def _window_slice(times: np.ndarray, window_frac: float) -> slice:
    if not 0.0 < window_frac <= 1.0:
        raise ValueError("window_frac must be in (0, 1]")
    t_cut = times[-1] * (1.0 - window_frac)
    start = int(np.searchsorted(times, t_cut))
    return slice(min(start, len(times) - 1), None)


def trajectory_steady_average(
    result: TrajectoryResult, window_frac: float = STEADY_WINDOW_FRAC
) -> dict[str, complex]:
    """Time average of each record over the trailing window."""
    sl = _window_slice(result.times, window_frac)
    return {name: complex(vals[sl].mean()) for name, vals in result.records.items()}


def steady_window_average(
    ens: EnsembleAverage, window_frac: float = STEADY_WINDOW_FRAC
) -> tuple[dict[str, complex], dict[str, float]]:
    """Trailing-window time average of the ensemble mean, with its error.

    The reported error is the window average of the pointwise SEM: time
    samples inside the window are correlated, so averaging SEMs (rather than
    dividing by the sample count) avoids claiming spurious precision.
    """
    sl = _window_slice(ens.times, window_frac)
    means = {name: complex(vals[sl].mean()) for name, vals in ens.means.items()}
    errs = {name: float(vals[sl].mean()) for name, vals in ens.sems.items()}
    return means, errs


class McwfPointSolver:
    """Trajectory-ensemble transmission point for spectrum scans.

    Statistics come from per-trajectory steady-window averages, which are
    independent samples, so the standard error across trajectories is
    unbiased. Trajectories are processed one at a time; full time series are
    not retained.
    """

    def __init__(
        self,
        params: SystemParams,
        space: HilbertSpace,
        n_traj: int,
        base_seed: int,
        t_final: float,
        dt_max: float = DEFAULT_DT_MAX,
        window_frac: float = STEADY_WINDOW_FRAC,
        record_stride: int = 5,
        n_jobs: int = 1,
    ):
        if n_traj < 2:
            raise ValueError("need at least 2 trajectories for an error bar")
        self.params = params
        self.space = space
        self.n_traj = n_traj
        self.base_seed = base_seed
        self.t_final = t_final
        self.dt_max = dt_max
        self.window_frac = window_frac
        self.record_stride = record_stride
        self.n_jobs = n_jobs
        self._calls = 0

    def __call__(self, delta_p: float) -> tuple[ObservableSet, float]:
        p = replace(self.params, delta_p=float(delta_p))
        obs = default_observables(self.space)
        # distinct seed block per evaluated detuning
        seed0 = self.base_seed + self._calls * self.n_traj
        self._calls += 1

        samples: dict[str, list[complex]] = {name: [] for name in obs}
        run = lambda s: trajectory_steady_average(
            run_trajectory(
                self.space, p, obs, s, self.t_final, self.dt_max,
                record_stride=self.record_stride,
            ),
            self.window_frac,
        )
        if self.n_jobs > 1:
            averaged = Parallel(n_jobs=self.n_jobs)(
                delayed(run)(seed0 + i) for i in range(self.n_traj)
            )
        else:
            averaged = [run(seed0 + i) for i in range(self.n_traj)]
        for avg in averaged:
            for name, val in avg.items():
                samples[name].append(val)

        mean = {name: np.mean(vals) for name, vals in samples.items()}
        n_mean = mean["n"].real
        n_sem = float(np.std(np.real(samples["n"]), ddof=1)) / math.sqrt(self.n_traj)

        empty = empty_cavity_photons(p, 0.0)
        n_at = self.space.n_atoms
        dist = np.abs(np.array([mean[f"p{k}"].real for k in range(self.space.fock_dim)]))
        dist = dist / dist.sum()
        pair = mean["n_nm1"].real
        g2 = pair / n_mean**2 if n_mean > 1e-12 else float("nan")
        p1, p2 = dist[1] if len(dist) > 1 else 0.0, dist[2] if len(dist) > 2 else 0.0
        p21 = p2 / p1 if len(dist) > 2 and p1 > 1e-300 else float("nan")
        kappa, eps = p.kappa, p.epsilon
        result = ObservableSet(
            transmission=n_mean / empty,
            transmission_paper=n_mean * kappa**2 / eps**2,
            mean_photons=n_mean,
            pop11=mean["s11"].real / n_at,
            pop22=mean["s22"].real / n_at,
            pop33=mean["s33"].real / n_at,
            g2=g2,
            photon_dist=dist,
            p21=p21,
        )
        return result, n_sem / empty
