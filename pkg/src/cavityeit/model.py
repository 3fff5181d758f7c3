"""Hamiltonian, jump operators, and Liouvillian of the driven cavity-EIT model.

Physics: N lambda atoms (|1>, |2> ground, |3> excited) inside a cavity mode
driven by a weak probe of amplitude epsilon; the |2>-|3> transition is driven
by a classical control field of Rabi parameter omega_c. In the rotating frame,

    H = delta_p S11 - delta_p adag a + eps (a + adag)
        + g (a S31 + adag S13) + omega_c (S32 + S23)

with all rates in units of the cavity intensity decay rate kappa. Dissipation:
cavity decay at rate kappa, spontaneous decay |3> -> |l> at Gamma_3l, and pure
dephasing of levels 1, 2 at gamma_j (projector jump operators).

Vectorization is column-major throughout: vec(rho) stacks columns, so
vec(A rho B) = (B^T kron A) vec(rho) and each dissipator enters the
Liouvillian as  rate/2 * (2 conj(C) kron C - I kron C^dag C - (C^dag C)^T kron I).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .hilbert import (
    HilbertSpace,
    Operator,
    annihilation,
    atomic_transition,
    collective,
    number,
)

__all__ = [
    "SystemParams",
    "Superoperator",
    "hamiltonian",
    "jump_operators",
    "liouvillian",
    "vec",
    "unvec",
    "with_params",
]


@dataclass(frozen=True)
class SystemParams:
    """Physical rates and drives, all in units of kappa.

    omega_c is the control Rabi parameter as it appears in the Hamiltonian;
    the full Rabi frequency of the control transition is 2*omega_c.
    epsilon, g, omega_c are taken real and non-negative (drive phases are
    unobservable in every reported quantity and absorbed by convention).
    """

    g: float
    omega_c: float
    epsilon: float
    delta_p: float = 0.0
    kappa: float = 1.0
    gamma31: float = 0.5
    gamma32: float = 0.5
    gamma1: float = 0.0
    gamma2: float = 0.0

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        for name in ("gamma31", "gamma32", "gamma1", "gamma2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("g", "omega_c", "epsilon"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative (phase convention)")


def with_params(params: SystemParams, **changes) -> SystemParams:
    """Functional update helper used by sweeps."""
    return replace(params, **changes)


@dataclass(frozen=True)
class Superoperator:
    """Sparse matrix acting on column-vectorized density matrices.

    hamiltonian/jumps carry the ingredients L was assembled from, when known;
    the matrix-form steady-state solver needs them (it preconditions with the
    non-Hermitian effective Hamiltonian instead of factorizing L, whose LU
    fill-in is catastrophic for multi-atom spaces).
    """

    space: HilbertSpace
    data: sp.csr_matrix
    hamiltonian: "Operator | None" = None
    jumps: "tuple[tuple[float, Operator], ...] | None" = None

    @property
    def dim(self) -> int:
        return self.space.dim


def vec(rho: np.ndarray) -> np.ndarray:
    """Column-major vectorization."""
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(v).reshape((dim, dim), order="F")


def hamiltonian(space: HilbertSpace, params: SystemParams) -> Operator:
    """Assemble the rotating-frame Hamiltonian; Hermiticity is verified."""
    s11 = collective(space, 1, 1)
    s31 = collective(space, 3, 1)
    s32 = collective(space, 3, 2)
    a = annihilation(space)
    h = (
        params.delta_p * s11
        - params.delta_p * number(space)
        + params.epsilon * (a + a.dag())
        + params.g * ((a @ s31) + (a @ s31).dag())
        + params.omega_c * (s32 + s32.dag())
    )
    herm_defect = abs(h.data - h.data.conj().T).max() if h.nnz else 0.0
    if herm_defect > 1e-14:
        raise AssertionError(f"Hamiltonian assembly lost Hermiticity: {herm_defect:.3e}")
    return h


def jump_operators(space: HilbertSpace, params: SystemParams) -> list[tuple[float, Operator]]:
    """Jump channels as (rate, operator) pairs; zero-rate channels omitted.

    Order is fixed (cavity first, then per atom: decay to |1>, decay to |2>,
    dephasing of |1>, dephasing of |2>) so that jump-log indices are stable.
    """
    channels: list[tuple[float, Operator]] = []
    if params.kappa > 0:
        channels.append((params.kappa, annihilation(space)))
    for k in range(1, space.n_atoms + 1):
        if params.gamma31 > 0:
            channels.append((params.gamma31, atomic_transition(space, k, 1, 3)))
        if params.gamma32 > 0:
            channels.append((params.gamma32, atomic_transition(space, k, 2, 3)))
        if params.gamma1 > 0:
            channels.append((params.gamma1, atomic_transition(space, k, 1, 1)))
        if params.gamma2 > 0:
            channels.append((params.gamma2, atomic_transition(space, k, 2, 2)))
    return channels


def liouvillian(space: HilbertSpace, params: SystemParams) -> Superoperator:
    """Full generator L with vec(drho/dt) = L vec(rho).

    Each dissipator contributes rate/2 * (2 C rho C^dag - C^dag C rho
    - rho C^dag C); the coherent part contributes -i[H, rho].
    """
    dim = space.dim
    eye = sp.identity(dim, dtype=np.complex128, format="csr")
    h_op = hamiltonian(space, params)
    h = h_op.data
    lop = -1j * (sp.kron(eye, h, format="csr") - sp.kron(h.T, eye, format="csr"))
    channels = jump_operators(space, params)
    for rate, c_op in channels:
        c = c_op.data
        cdc = (c.conj().T @ c).tocsr()
        lop = lop + (rate / 2.0) * (
            2.0 * sp.kron(c.conj(), c, format="csr")
            - sp.kron(eye, cdc, format="csr")
            - sp.kron(cdc.T, eye, format="csr")
        )
    lop = sp.csr_matrix(lop)
    lop.eliminate_zeros()
    lop.sort_indices()
    return Superoperator(space, lop, hamiltonian=h_op, jumps=tuple(channels))
