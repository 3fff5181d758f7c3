"""Every reported physical quantity, computed from a density matrix.

Transmission is reported in two normalizations:

* ``transmission`` divides <adag a> by the resonant empty-cavity photon
  number 4 eps^2 / kappa^2 of this model, so an empty cavity at resonance
  reads exactly 1. FWHM extraction uses this one (FWHM is invariant under
  positive rescaling anyway).
* ``transmission_paper`` divides by |eps/kappa|^2, the squared drive
  amplitude in loss units; it reads 4 at the empty-cavity resonance.

g2 uses the standard normalized form <adag adag a a> / <adag a>^2 (the
coherent-state benchmark of 1 forces the squared denominator).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hilbert import (
    HilbertSpace,
    Operator,
    annihilation,
    atomic_transition,
    collective,
    number,
)
from .model import SystemParams
from .steadystate import DensityMatrix

__all__ = [
    "ObservableSet",
    "TruncationError",
    "VacuumStateError",
    "TRUNCATION_TAIL_TOL",
    "expectation",
    "transmission",
    "transmission_paper",
    "g2_zero",
    "photon_distribution",
    "populations_per_atom",
    "observable_set",
    "nonlinearity_figures",
    "empty_cavity_photons",
    "truncation_ok",
]

# A run is only accepted while the top-Fock-level population stays below this.
TRUNCATION_TAIL_TOL = 1e-6

_VACUUM_TOL = 1e-14


class TruncationError(RuntimeError):
    """Photon-distribution tail exceeded the adequacy threshold."""


class VacuumStateError(ValueError):
    """g2(0) is undefined on a (numerically) photon-free state."""


@dataclass(frozen=True)
class ObservableSet:
    """Per-point bundle of everything the result tables report.

    populations are per-atom averages <sigma_ii> (collective value / n_atoms);
    photon_dist holds P_0 .. P_{fock_dim-1}; p21 = P_2/P_1 (nan when P_1 is
    numerically zero or fock_dim < 3); g2 is nan only for states where it is
    undefined and the caller asked not to raise.
    """

    transmission: float
    transmission_paper: float
    mean_photons: float
    pop11: float
    pop22: float
    pop33: float
    g2: float
    photon_dist: np.ndarray
    p21: float


def expectation(rho: DensityMatrix, op: Operator) -> complex:
    """Tr(rho op). O(nnz of op)."""
    if rho.space != op.space:
        raise ValueError("density matrix and operator act on different spaces")
    # Tr(rho O) = sum_ij rho_ij O_ji
    return complex(op.data.T.multiply(rho.data).sum())


def empty_cavity_photons(params: SystemParams, delta_p: float | None = None) -> float:
    """Analytic <adag a> of the bare driven cavity: eps^2/(delta^2 + kappa^2/4)."""
    d = params.delta_p if delta_p is None else delta_p
    return params.epsilon**2 / (d**2 + params.kappa**2 / 4.0)


def transmission(rho: DensityMatrix, params: SystemParams) -> float:
    """<adag a> normalized so the resonant empty cavity reads exactly 1."""
    if params.epsilon <= 0:
        raise ValueError("transmission normalization requires epsilon > 0")
    n_ph = float(expectation(rho, number(rho.space)).real)
    return n_ph / empty_cavity_photons(params, 0.0)


def transmission_paper(rho: DensityMatrix, params: SystemParams) -> float:
    """<adag a> / |eps/kappa|^2 (reads 4 at the empty-cavity resonance)."""
    if params.epsilon <= 0:
        raise ValueError("transmission normalization requires epsilon > 0")
    n_ph = float(expectation(rho, number(rho.space)).real)
    return n_ph * params.kappa**2 / params.epsilon**2


def g2_zero(rho: DensityMatrix, space: HilbertSpace) -> float:
    """Equal-time second-order correlation <adag adag a a> / <adag a>^2."""
    if rho.space != space:
        raise ValueError("space mismatch")
    n_ph = float(expectation(rho, number(space)).real)
    if n_ph <= _VACUUM_TOL:
        raise VacuumStateError(f"g2(0) undefined: <adag a> = {n_ph:.3e}")
    a = annihilation(space)
    aa = a @ a
    numer = float(expectation(rho, aa.dag() @ aa).real)
    return numer / n_ph**2


def photon_distribution(rho: DensityMatrix, space: HilbertSpace) -> np.ndarray:
    """P_n = Tr(rho |n><n|) for n = 0..fock_dim-1, via the diagonal."""
    if rho.space != space:
        raise ValueError("space mismatch")
    diag = np.real(np.diagonal(rho.data))
    return diag.reshape(space.atom_dim, space.fock_dim).sum(axis=0)


def populations_per_atom(rho: DensityMatrix, level: int) -> np.ndarray:
    """<sigma_ll^(k)> for each atom k; permutation symmetry makes these equal."""
    space = rho.space
    return np.array(
        [
            float(expectation(rho, atomic_transition(space, k, level, level)).real)
            for k in range(1, space.n_atoms + 1)
        ]
    )


def truncation_ok(photon_dist: np.ndarray, tol: float = TRUNCATION_TAIL_TOL) -> bool:
    return float(photon_dist[-1]) < tol


def observable_set(rho: DensityMatrix, params: SystemParams) -> ObservableSet:
    """Assemble the full per-point bundle from a quantum state."""
    space = rho.space
    n_ph = float(expectation(rho, number(space)).real)
    dist = photon_distribution(rho, space)
    pops = [
        float(expectation(rho, collective(space, lv, lv)).real) / space.n_atoms
        for lv in (1, 2, 3)
    ]
    try:
        g2 = g2_zero(rho, space)
    except VacuumStateError:
        g2 = float("nan")
    if space.fock_dim >= 3 and dist[1] > 1e-300:
        p21 = float(dist[2] / dist[1])
    else:
        p21 = float("nan")
    return ObservableSet(
        transmission=transmission(rho, params),
        transmission_paper=transmission_paper(rho, params),
        mean_photons=n_ph,
        pop11=pops[0],
        pop22=pops[1],
        pop33=pops[2],
        g2=g2,
        photon_dist=dist,
        p21=p21,
    )


def nonlinearity_figures(params: SystemParams, n_atoms: int) -> tuple[float, float]:
    """Cooperativity C = N g^2/(2 kappa Gamma) and critical photon number
    n_c = Gamma^2/(2 g^2), with Gamma = gamma31 + gamma32."""
    gamma = params.gamma31 + params.gamma32
    if params.g <= 0 or gamma <= 0:
        raise ValueError("cooperativity needs g > 0 and Gamma > 0")
    coop = n_atoms * params.g**2 / (2.0 * params.kappa * gamma)
    n_c = gamma**2 / (2.0 * params.g**2)
    return coop, n_c


def poisson_distribution(mean: float, length: int) -> np.ndarray:
    """Truncated Poissonian, used for coherent-field photon statistics."""
    n = np.arange(length)
    if mean <= 0:
        out = np.zeros(length)
        out[0] = 1.0
        return out
    log_p = -mean + n * math.log(mean) - np.array([math.lgamma(k + 1) for k in n])
    return np.exp(log_p)
