"""Composite Hilbert space and elementary sparse operators.

The space is 3^n_atoms * fock_dim dimensional. Basis ordering, fixed here and
relied on by every other module: atom 1 is the slowest (outermost) tensor
factor, the cavity Fock index is the fastest (innermost). A basis index b
decomposes as

    b = (((a_1 * 3 + a_2) * 3 + ...) * 3 + a_n) * fock_dim + n_ph

with a_k in {0, 1, 2} labelling atomic levels |1>, |2>, |3> and n_ph the
photon number. Atomic levels are 1-based in the public API (i, j in {1,2,3}),
matching the lambda-scheme labels: |1>, |2> ground states, |3> excited.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sp

# Entries smaller than this are dropped from every stored operator so the
# exact sparsity of Kronecker products survives floating-point assembly.
PRUNE_TOL = 1e-14

DEFAULT_DIM_CAP = 20_000

N_LEVELS = 3


class DimensionCapError(ValueError):
    """Requested space exceeds the configured dimension cap."""


@dataclass(frozen=True)
class HilbertSpace:
    """Descriptor of the composite atoms + cavity space."""

    n_atoms: int
    fock_dim: int
    dim: int

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be >= 1")
        if self.fock_dim < 2:
            raise ValueError("fock_dim must be >= 2")
        if self.dim != N_LEVELS**self.n_atoms * self.fock_dim:
            raise ValueError("dim inconsistent with n_atoms and fock_dim")

    @property
    def atom_dim(self) -> int:
        return N_LEVELS**self.n_atoms


def build_space(n_atoms: int, fock_dim: int, dim_cap: int = DEFAULT_DIM_CAP) -> HilbertSpace:
    """Construct the space descriptor, enforcing the dimension cap.

    The cap guards against accidental exponential blowup (the density matrix
    has dim^2 entries and the superoperator dim^2 x dim^2).
    """
    if n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    if fock_dim < 2:
        raise ValueError("fock_dim must be >= 2")
    dim = N_LEVELS**n_atoms * fock_dim
    if dim > dim_cap:
        raise DimensionCapError(
            f"dim = 3^{n_atoms} * {fock_dim} = {dim} exceeds cap {dim_cap}"
        )
    return HilbertSpace(n_atoms=n_atoms, fock_dim=fock_dim, dim=dim)


def _pruned(m: sp.spmatrix) -> sp.csr_matrix:
    m = sp.csr_matrix(m, dtype=np.complex128)
    if m.nnz:
        m.data[np.abs(m.data) < PRUNE_TOL] = 0.0
        m.eliminate_zeros()
    m.sort_indices()
    return m


@dataclass(frozen=True)
class Operator:
    """Sparse operator bound to its space.

    Immutable after construction; safe to share across parallel workers.
    Arithmetic between operators requires identical spaces.
    """

    space: HilbertSpace
    data: sp.csr_matrix

    def _check(self, other: "Operator"):
        if self.space != other.space:
            raise ValueError("operators act on different spaces")

    def dag(self) -> "Operator":
        return Operator(self.space, _pruned(self.data.conj().T))

    def __add__(self, other: "Operator") -> "Operator":
        self._check(other)
        return Operator(self.space, _pruned(self.data + other.data))

    def __sub__(self, other: "Operator") -> "Operator":
        self._check(other)
        return Operator(self.space, _pruned(self.data - other.data))

    def __neg__(self) -> "Operator":
        return Operator(self.space, _pruned(-self.data))

    def __mul__(self, scalar) -> "Operator":
        return Operator(self.space, _pruned(self.data * scalar))

    __rmul__ = __mul__

    def __matmul__(self, other: "Operator") -> "Operator":
        self._check(other)
        return Operator(self.space, _pruned(self.data @ other.data))

    @property
    def nnz(self) -> int:
        return self.data.nnz

    def toarray(self) -> np.ndarray:
        return self.data.toarray()


def _make(space: HilbertSpace, m: sp.spmatrix) -> Operator:
    return Operator(space, _pruned(m))


def _kron_chain(factors) -> sp.csr_matrix:
    return reduce(lambda x, y: sp.kron(x, y, format="csr"), factors)


def identity(space: HilbertSpace) -> Operator:
    return _make(space, sp.identity(space.dim, dtype=np.complex128, format="csr"))


def annihilation(space: HilbertSpace) -> Operator:
    """Cavity annihilation operator a = I_atoms (x) a_fock, a|n> = sqrt(n)|n-1>."""
    n = space.fock_dim
    a_fock = sp.diags(np.sqrt(np.arange(1, n, dtype=np.float64)), 1, format="csr")
    full = sp.kron(
        sp.identity(space.atom_dim, dtype=np.complex128, format="csr"),
        a_fock.astype(np.complex128),
        format="csr",
    )
    return _make(space, full)


def number(space: HilbertSpace) -> Operator:
    """Photon number operator a^dag a (diagonal)."""
    n = space.fock_dim
    counts = np.tile(np.arange(n, dtype=np.float64), space.atom_dim)
    return _make(space, sp.diags(counts.astype(np.complex128), format="csr"))


def atomic_transition(space: HilbertSpace, k: int, i: int, j: int) -> Operator:
    """|i><j| on atom k (1-based), identity on every other factor.

    Parameters
    ----------
    k : atom index, 1 <= k <= n_atoms
    i, j : level labels in {1, 2, 3}
    """
    if not 1 <= k <= space.n_atoms:
        raise IndexError(f"atom index {k} out of range 1..{space.n_atoms}")
    if i not in (1, 2, 3) or j not in (1, 2, 3):
        raise IndexError("levels must be in {1, 2, 3}")
    local = sp.csr_matrix(
        (np.array([1.0 + 0j]), (np.array([i - 1]), np.array([j - 1]))),
        shape=(N_LEVELS, N_LEVELS),
    )
    factors = []
    if k > 1:
        factors.append(sp.identity(N_LEVELS ** (k - 1), dtype=np.complex128, format="csr"))
    factors.append(local)
    if k < space.n_atoms:
        factors.append(
            sp.identity(N_LEVELS ** (space.n_atoms - k), dtype=np.complex128, format="csr")
        )
    factors.append(sp.identity(space.fock_dim, dtype=np.complex128, format="csr"))
    return _make(space, _kron_chain(factors))


def collective(space: HilbertSpace, i: int, j: int) -> Operator:
    """Collective atomic operator S_ij = sum_k sigma_ij^(k)."""
    total = atomic_transition(space, 1, i, j)
    for k in range(2, space.n_atoms + 1):
        total = total + atomic_transition(space, k, i, j)
    return total


def fock_projector(space: HilbertSpace, n: int) -> Operator:
    """Projector I_atoms (x) |n><n| onto the n-photon subspace."""
    if not 0 <= n < space.fock_dim:
        raise IndexError(f"Fock index {n} out of range 0..{space.fock_dim - 1}")
    diag = np.zeros(space.fock_dim, dtype=np.complex128)
    diag[n] = 1.0
    proj = sp.diags(diag, format="csr")
    return _make(
        space,
        sp.kron(sp.identity(space.atom_dim, dtype=np.complex128, format="csr"), proj, format="csr"),
    )


def ground_vacuum_index(space: HilbertSpace) -> int:
    """Basis index of |1,...,1; 0 photons>. With the ordering above it is 0."""
    return 0
