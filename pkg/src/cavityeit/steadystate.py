"""Steady state of the master equation, plus time evolution as a cross-check.

Two solver routes, both ending in the same residual test
||L vec(rho)||_inf <= 1e-10 ||L||_inf:

* "direct": bordered sparse LU (one row of L replaced by the trace
  constraint). Only sensible for small spaces: the Liouvillian's adjacency
  graph is a high-dimensional lattice, so LU fill-in grows towards dense and
  single-atom-ish dimensions are its practical ceiling.
* "iterative" (default for multi-atom spaces): restarted GMRES on the
  trace-bordered fixed-point system in matrix form, preconditioned by an
  exact Lyapunov solve against the non-Hermitian effective Hamiltonian
  K = H - (i/2) sum_m r_m C_m^dag C_m. Writing L(rho) = A rho + rho A^dag
  + J(rho) with A = -iK and J(rho) = sum_m r_m C_m rho C_m^dag, the solver
  iterates on rho + lyap_solve(J(rho)) using one Schur decomposition of A
  per parameter point and a triangular Sylvester solve (LAPACK trsyl) per
  Krylov step. Costs O(dim^3) per step instead of LU fill on dim^2 unknowns;
  twenty-to-seventy steps suffice across the reproduction configs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .hilbert import HilbertSpace, ground_vacuum_index
from .model import Superoperator, unvec, vec

__all__ = [
    "DensityMatrix",
    "SolverError",
    "NonUniqueSteadyStateError",
    "PositivityWarning",
    "steady_state",
    "evolve",
    "ground_state",
]

# rho_ss must satisfy ||L vec(rho)||_inf <= RESIDUAL_RTOL * ||L||_inf
RESIDUAL_RTOL = 1e-10

POSITIVITY_TOL = -1e-8


class SolverError(RuntimeError):
    """Linear or ODE solve failed to produce a usable state."""


class NonUniqueSteadyStateError(SolverError):
    """Kernel of L is more than one-dimensional (e.g. epsilon = omega_c = 0)."""


class PositivityWarning(UserWarning):
    """Steady state has an eigenvalue below the positivity tolerance.

    Usually a symptom of insufficient Fock truncation rather than a solver
    bug; carries the offending eigenvalue.
    """

    def __init__(self, message: str, min_eigenvalue: float):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian unit-trace state, stored dense (dim x dim)."""

    space: HilbertSpace
    data: np.ndarray

    @classmethod
    def from_vec(cls, space: HilbertSpace, v: np.ndarray, check_positivity: bool = True):
        """Build from a vectorized solution: hermitize, renormalize, validate."""
        rho = unvec(np.asarray(v, dtype=np.complex128), space.dim)
        rho = 0.5 * (rho + rho.conj().T)
        tr = float(rho.trace().real)
        if not np.isfinite(tr) or abs(tr) < 1e-250:
            raise SolverError(f"solution trace {tr!r} unusable")
        rho = rho / tr
        out = cls(space, rho)
        if check_positivity:
            out.min_eigenvalue(warn=True)
        return out

    def min_eigenvalue(self, warn: bool = False) -> float:
        lam = float(np.linalg.eigvalsh(self.data)[0])
        if warn and lam < POSITIVITY_TOL:
            warnings.warn(
                PositivityWarning(
                    f"steady-state minimum eigenvalue {lam:.3e} < {POSITIVITY_TOL:g}; "
                    "Fock truncation is likely insufficient",
                    lam,
                ),
                stacklevel=3,
            )
        return lam

    def vectorized(self) -> np.ndarray:
        return vec(self.data)


def ground_state(space: HilbertSpace) -> DensityMatrix:
    """All atoms in |1>, cavity vacuum. Default initial state everywhere."""
    rho = np.zeros((space.dim, space.dim), dtype=np.complex128)
    idx = ground_vacuum_index(space)
    rho[idx, idx] = 1.0
    return DensityMatrix(space, rho)


def _bordered_system(lop: sp.csr_matrix, dim: int):
    """Replace row 0 of L by w * (trace row); RHS = w * e0.

    w set to the mean magnitude of L's entries so the constraint row does not
    wreck the conditioning of the factorization.
    """
    w = float(np.mean(np.abs(lop.data))) if lop.nnz else 1.0
    a = lop.copy()
    a.data[a.indptr[0] : a.indptr[1]] = 0.0
    diag_cols = np.arange(dim, dtype=np.int64) * (dim + 1)
    trace_row = sp.csr_matrix(
        (np.full(dim, w, dtype=np.complex128), (np.zeros(dim, dtype=np.int64), diag_cols)),
        shape=a.shape,
    )
    a = a + trace_row
    b = np.zeros(dim * dim, dtype=np.complex128)
    b[0] = w
    return a.tocsc(), b


def _linf_norm(lop: sp.csr_matrix) -> float:
    """Max absolute row sum."""
    if lop.nnz == 0:
        return 0.0
    return float((abs(lop) @ np.ones(lop.shape[1])).max())


# Direct LU above roughly this dimension is slower than the matrix-form
# Krylov route by orders of magnitude (hypercube-lattice fill-in).
_DIRECT_DIM_LIMIT = 60


def _solve_direct(lsup: Superoperator) -> np.ndarray:
    a, b = _bordered_system(lsup.data, lsup.space.dim)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", spla.MatrixRankWarning)
        x = spla.spsolve(a, b)
    if not np.all(np.isfinite(x)):
        raise NonUniqueSteadyStateError(
            "bordered system is singular: steady state is not unique "
            "(degenerate kernel, e.g. epsilon = 0 with omega_c = 0)"
        )
    return x


def _solve_matrix_krylov(
    lsup: Superoperator, gmres_rtol: float, x0: np.ndarray | None
) -> np.ndarray:
    if lsup.hamiltonian is None or lsup.jumps is None:
        raise ValueError(
            "iterative steady-state solve needs a Superoperator built by "
            "liouvillian() (Hamiltonian and jump list attached)"
        )
    dim = lsup.space.dim
    jumps = [(rate, c.data) for rate, c in lsup.jumps]
    k_eff = lsup.hamiltonian.data.toarray()
    for rate, c in jumps:
        k_eff -= 0.5j * rate * (c.conj().T @ c).toarray()
    a_mat = -1j * k_eff
    t_schur, q_schur = sla.schur(a_mat, output="complex")
    q_h = q_schur.conj().T

    def lyap_solve(c_mat):
        # A X + X A^H = C with A = Q T Q^H; trsyl solves the triangular core
        y, scale, info = sla.lapack.ztrsyl(
            t_schur, t_schur, q_h @ c_mat @ q_schur, trana="N", tranb="C", isgn=1
        )
        if info < 0:
            raise SolverError(f"trsyl failed with info={info}")
        return (q_schur @ y @ q_h) / scale

    def jump_apply(rho):
        out = np.zeros_like(rho)
        for rate, c in jumps:
            out += rate * (c @ rho @ c.conj().T)
        return out

    border = np.eye(dim, dtype=np.complex128) / dim

    def matvec(v):
        rho = v.reshape(dim, dim)
        return (rho + lyap_solve(jump_apply(rho)) + border * np.trace(rho)).ravel()

    op = spla.LinearOperator((dim * dim, dim * dim), matvec=matvec, dtype=np.complex128)
    # the matvec works in C-order internally; convert at the boundaries since
    # callers exchange column-major (vec/unvec) layouts
    x0_internal = None if x0 is None else unvec(np.asarray(x0), dim).ravel()
    x, info = spla.gmres(
        op,
        border.ravel(),
        x0=x0_internal,
        rtol=gmres_rtol,
        atol=0.0,
        restart=120,
        maxiter=8,
    )
    if info != 0:
        raise SolverError(
            f"matrix-form GMRES did not converge (info={info}); "
            "the steady state may be non-unique or the gap extremely small"
        )
    return vec(x.reshape(dim, dim))


def steady_state(
    lsup: Superoperator,
    method: str = "auto",
    residual_rtol: float = RESIDUAL_RTOL,
    check_positivity: bool = True,
    x0: np.ndarray | None = None,
) -> DensityMatrix:
    """Unique steady state of L, residual-checked against L itself.

    method: "auto" picks "iterative" whenever L carries its ingredients and
    the space is beyond the direct-LU comfort zone; "direct" forces the
    bordered sparse LU; "iterative" forces the Lyapunov-preconditioned GMRES.
    x0 optionally warm-starts the iterative path (vectorized density matrix
    of a nearby parameter point); sweeps use it to cut iteration counts.
    Raises NonUniqueSteadyStateError / SolverError on degenerate or
    non-converged systems.
    """
    if method == "auto":
        has_parts = lsup.hamiltonian is not None and lsup.jumps is not None
        method = "iterative" if has_parts and lsup.space.dim > _DIRECT_DIM_LIMIT else "direct"
        if method == "direct" and lsup.space.dim > _DIRECT_DIM_LIMIT:
            warnings.warn(
                "large space without attached ingredients: falling back to "
                "direct LU, expect heavy fill-in",
                stacklevel=2,
            )

    if method == "direct":
        x = _solve_direct(lsup)
    elif method == "iterative":
        x = _solve_matrix_krylov(lsup, gmres_rtol=1e-11, x0=x0)
    else:
        raise ValueError(f"unknown steady-state method {method!r}")

    rho = DensityMatrix.from_vec(lsup.space, x, check_positivity=check_positivity)
    residual = float(np.max(np.abs(lsup.data @ rho.vectorized())))
    scale = _linf_norm(lsup.data)
    if residual > residual_rtol * max(scale, 1.0):
        raise SolverError(
            f"steady-state residual {residual:.3e} exceeds {residual_rtol:g} * ||L||_inf "
            f"= {residual_rtol * scale:.3e}; system may not have a unique steady state"
        )
    return rho


def evolve(
    lsup: Superoperator,
    rho0: DensityMatrix,
    t_final: float,
    rtol: float = 1e-8,
    atol: float | None = None,
) -> DensityMatrix:
    """Integrate dvec(rho)/dt = L vec(rho) to t_final (adaptive explicit RK).

    Trace and Hermiticity must survive to 10*rtol; violations raise, they are
    not silently renormalized away.
    """
    if t_final <= 0:
        raise ValueError("t_final must be positive")
    if rho0.space != lsup.space:
        raise ValueError("state and Liouvillian act on different spaces")
    if atol is None:
        atol = rtol * 1e-3
    lop = lsup.data
    sol = solve_ivp(
        lambda _t, y: lop @ y,
        (0.0, float(t_final)),
        rho0.vectorized(),
        method="DOP853",
        rtol=rtol,
        atol=atol,
        dense_output=False,
    )
    if not sol.success:
        raise SolverError(f"time integration aborted: {sol.message}")
    rho = unvec(sol.y[:, -1], lsup.space.dim)
    trace_defect = abs(float(rho.trace().real) - 1.0) + abs(float(rho.trace().imag))
    herm_defect = float(np.max(np.abs(rho - rho.conj().T)))
    budget = 10.0 * rtol
    if trace_defect > budget or herm_defect > budget:
        raise SolverError(
            f"integration drifted: trace defect {trace_defect:.3e}, "
            f"Hermiticity defect {herm_defect:.3e} exceed 10*rtol = {budget:.3e}"
        )
    return DensityMatrix.from_vec(lsup.space, vec(rho), check_positivity=False)
