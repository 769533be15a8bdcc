"""Spin-exchange collisions between alkali atoms in the electron x nuclear product basis.

Single-atom basis index is ``e*n_nuclear + k`` with electron e in (up, down)
and nuclear projection ``m_I = I - k``. The storage states only need the top
three nuclear levels, which is the default truncation; collisions act on the
electrons alone, so the truncation is closed under them.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg  # noqa: F401  (registers sps.linalg)

from .params import CesiumParams

UP, DOWN = 0, 1
N_NUCLEAR_DEFAULT = 3

# singlet amplitude over (e_i, e_j)
SINGLET = np.array([[0.0, 1.0], [-1.0, 0.0]]) / math.sqrt(2.0)


@dataclass
class SingleAtomSpinState:
    """Unit-norm amplitudes over electron x {m_I = I, I-1, ...}."""

    amplitudes: np.ndarray
    nuclear_spin: float = 3.5
    n_nuclear: int = N_NUCLEAR_DEFAULT

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(2 * self.n_nuclear)
        self.amplitudes = amps / np.linalg.norm(amps)

    @property
    def density(self) -> np.ndarray:
        return np.outer(self.amplitudes, self.amplitudes.conj())

    def amplitude(self, electron: int, m_i: float) -> complex:
        return self.amplitudes[basis_index(electron, m_i, self.nuclear_spin, self.n_nuclear)]

    def support(self, tol: float = 0.0) -> set[tuple[int, float]]:
        out = set()
        for idx, amp in enumerate(self.amplitudes):
            if abs(amp) > tol:
                e, k = divmod(idx, self.n_nuclear)
                out.add((e, self.nuclear_spin - k))
        return out


@dataclass
class PairSpinState:
    """Two-atom state, atom i as the slow index. Construction checks unit norm."""

    amplitudes: np.ndarray
    n_nuclear: int = N_NUCLEAR_DEFAULT

    def __post_init__(self):
        dim = (2 * self.n_nuclear) ** 2
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex).reshape(dim)
        if abs(np.linalg.norm(self.amplitudes) - 1.0) > 1e-9:
            raise ValueError("pair state must have unit norm")

    @classmethod
    def product(cls, psi_i: SingleAtomSpinState, psi_j: SingleAtomSpinState) -> "PairSpinState":
        if psi_i.n_nuclear != psi_j.n_nuclear:
            raise ValueError("atoms use different nuclear truncations")
        return cls(np.kron(psi_i.amplitudes, psi_j.amplitudes), psi_i.n_nuclear)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def schmidt_rank(self, tol: float = 1e-12) -> int:
        d = 2 * self.n_nuclear
        sv = np.linalg.svd(self.amplitudes.reshape(d, d), compute_uv=False)
        return int(np.sum(sv > tol * sv[0]))


@dataclass(frozen=True)
class CollisionEvent:
    """One binary collision: exchange phase ``chi`` between atoms i and j at ``time`` (s)."""

    chi: float
    i: int
    j: int
    time: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.chi < 2 * math.pi:
            raise ValueError(f"chi must lie in [0, 2pi), got {self.chi!r}")


def basis_index(electron: int, m_i: float, nuclear_spin: float = 3.5,
                n_nuclear: int = N_NUCLEAR_DEFAULT) -> int:
    k = nuclear_spin - m_i
    if k != int(k) or not 0 <= k < n_nuclear:
        raise ValueError(f"m_I={m_i} outside the truncated nuclear basis")
    return electron * n_nuclear + int(k)


def _ket(electron: int, m_i: float, nuclear_spin: float, n_nuclear: int) -> np.ndarray:
    v = np.zeros(2 * n_nuclear, dtype=complex)
    v[basis_index(electron, m_i, nuclear_spin, n_nuclear)] = 1.0
    return v


def hyperfine_ket(f: float, m: float, nuclear_spin: float = 3.5,
                  n_nuclear: int = N_NUCLEAR_DEFAULT) -> np.ndarray:
    """|F = I + 1/2, m> expanded on |up, m-1/2> and |down, m+1/2>.

    Only the upper hyperfine manifold is needed by the storage states.
    """
    I = nuclear_spin
    if f != I + 0.5:
        raise ValueError("only the upper manifold F = I + 1/2 is supported")
    if abs(m) > f:
        raise ValueError(f"|m| must not exceed F={f}")
    v = np.zeros(2 * n_nuclear, dtype=complex)
    w_up = (I + 0.5 + m) / (2 * I + 1)
    w_dn = (I + 0.5 - m) / (2 * I + 1)
    if w_up > 0:
        v += math.sqrt(w_up) * _ket(UP, m - 0.5, I, n_nuclear)
    if w_dn > 0:
        v += math.sqrt(w_dn) * _ket(DOWN, m + 0.5, I, n_nuclear)
    return v


def stored_state(eta_a: float, phi_a: float, params: CesiumParams | None = None,
                 n_nuclear: int = N_NUCLEAR_DEFAULT) -> SingleAtomSpinState:
    """Single-atom state after storing a weak signal on the m=4 -> m=3 orientation.

    Unnormalized form ``|up,I> + sqrt(2) eta e^{i phi}(q|up,I-1> + p|down,I>)``.
    """
    if eta_a < 0:
        raise ValueError("eta_a must be non-negative")
    params = params or CesiumParams()
    I = params.nuclear_spin
    amp = math.sqrt(2.0) * eta_a * np.exp(1j * phi_a)
    v = (_ket(UP, I, I, n_nuclear)
         + amp * params.q_coeff * _ket(UP, I - 1, I, n_nuclear)
         + amp * params.p_coeff * _ket(DOWN, I, I, n_nuclear))
    return SingleAtomSpinState(v, I, n_nuclear)


def delta_m2_state(eta: float, phi: float, nuclear_spin: float = 3.5,
                   n_nuclear: int = N_NUCLEAR_DEFAULT) -> SingleAtomSpinState:
    """Reference Zeeman Delta m = 2 state ``|F,F> + sqrt(2) eta e^{i phi}|F,F-2>``."""
    if eta < 0:
        raise ValueError("eta must be non-negative")
    f = nuclear_spin + 0.5
    v = (hyperfine_ket(f, f, nuclear_spin, n_nuclear)
         + math.sqrt(2.0) * eta * np.exp(1j * phi) * hyperfine_ket(f, f - 2, nuclear_spin, n_nuclear))
    return SingleAtomSpinState(v, nuclear_spin, n_nuclear)


def singlet_projector_pair(n_nuclear: int = N_NUCLEAR_DEFAULT) -> np.ndarray:
    """Electron-singlet projector on the pair space, identity on both nuclei."""
    # integer singlet vector times 1/2 keeps every entry a dyadic rational
    v = np.array([0.0, 1.0, -1.0, 0.0])
    ps_e = 0.5 * np.outer(v, v).reshape(2, 2, 2, 2)  # (e_i, e_j, e_i', e_j')
    eye = np.eye(n_nuclear)
    d = 2 * n_nuclear
    return np.einsum("abcd,nm,kl->anbkcmdl", ps_e, eye, eye).reshape(d * d, d * d)


def triplet_projector_pair(n_nuclear: int = N_NUCLEAR_DEFAULT) -> np.ndarray:
    ps = singlet_projector_pair(n_nuclear)
    return np.eye(ps.shape[0]) - ps


def collision_operator(chi: float, n_nuclear: int = N_NUCLEAR_DEFAULT) -> np.ndarray:
    """Unitary ``P_T + e^{i chi} P_S``."""
    ps = singlet_projector_pair(n_nuclear)
    return np.eye(ps.shape[0]) + (np.exp(1j * chi) - 1.0) * ps


def apply_collision(pair: PairSpinState, chi: float) -> PairSpinState:
    ps = singlet_projector_pair(pair.n_nuclear)
    amps = pair.amplitudes + (np.exp(1j * chi) - 1.0) * (ps @ pair.amplitudes)
    return PairSpinState(amps, pair.n_nuclear)


def singlet_fraction(psi_i: SingleAtomSpinState, psi_j: SingleAtomSpinState) -> float:
    """<psi_ij|P_S|psi_ij> for the product of two single-atom states."""
    pair = PairSpinState.product(psi_i, psi_j)
    ps = singlet_projector_pair(pair.n_nuclear)
    return float(np.real(np.vdot(pair.amplitudes, ps @ pair.amplitudes)))


def singlet_fraction_closed_form(eta_a: float, params: CesiumParams | None = None) -> float:
    """Singlet weight of two identical stored atoms, ``4 (pq)^2 eta^4 / (1 + 2 eta^2)^2``.

    The denominator is the squared norm of the unnormalized product state.
    """
    params = params or CesiumParams()
    pq = params.p_coeff * params.q_coeff
    return 4.0 * pq**2 * eta_a**4 / (1.0 + 2.0 * eta_a**2) ** 2


def misalignment_singlet_growth(eta_a: float, delta: float, phi_a: float = 0.0,
                                params: CesiumParams | None = None) -> float:
    """Extra singlet weight when the two colliding spins differ in azimuth by ``delta``.

    Subtracts the aligned-pair value, leaving the part that vanishes at delta = 0.
    """
    psi = stored_state(eta_a, phi_a, params)
    base = singlet_fraction(psi, psi)
    tilted = stored_state(eta_a, phi_a + delta, params)
    return singlet_fraction(psi, tilted) - base


# -- collective state in the full nuclear manifold ------------------------------------------

def _spin_matrices(j: float):
    n = int(round(2 * j + 1))
    m = j - np.arange(n)
    lower = np.zeros((n, n))
    for k in range(n - 1):
        # <m-1| J_- |m>
        lower[k + 1, k] = math.sqrt(j * (j + 1) - m[k] * (m[k] - 1))
    return np.diag(m), lower


def _embed(op: sps.spmatrix, site: int, n_atoms: int, dim: int) -> sps.csr_matrix:
    out = sps.identity(1, format="csr")
    for k in range(n_atoms):
        out = sps.kron(out, op if k == site else sps.identity(dim, format="csr"), format="csr")
    return out


def _pair_singlet(i: int, j: int, n_atoms: int, n_nuc: int) -> sps.csr_matrix:
    """Singlet projector on the electrons of atoms i and j within the N-atom space."""
    dim = 2 * n_nuc
    sz, s_lower = _spin_matrices(0.5)
    eye_n = np.eye(n_nuc)
    ops = []
    sx = 0.5 * (s_lower + s_lower.T)
    sy = 0.5j * (s_lower - s_lower.T)
    for s in (sx, sy, sz):
        ops.append((sps.csr_matrix(np.kron(s, eye_n))))
    sisj = sum(_embed(o, i, n_atoms, dim) @ _embed(o, j, n_atoms, dim) for o in ops)
    full = sps.identity(dim**n_atoms, format="csr", dtype=complex)
    return (0.25 * full - sisj).tocsr()


@dataclass
class TripletReport:
    """Per-pair commutator norms and singlet weights of the collective single-excitation state."""

    n_atoms: int
    qubit: tuple[complex, complex]
    commutator_norms: dict[tuple[int, int], float] = field(default_factory=dict)
    singlet_weights: dict[tuple[int, int], float] = field(default_factory=dict)
    tol: float = 1e-12

    @property
    def max_commutator(self) -> float:
        return max(self.commutator_norms.values())

    @property
    def max_singlet(self) -> float:
        return max(self.singlet_weights.values())

    @property
    def passed(self) -> bool:
        return self.max_commutator <= self.tol and self.max_singlet <= self.tol


def collective_triplet_check(n_atoms: int, qubit_alpha: complex, qubit_beta: complex,
                             nuclear_spin: float = 3.5, tol: float = 1e-12) -> TripletReport:
    """Check that ``(alpha + beta F_-)|G>`` is a triplet for every atom pair.

    Works in the full (2I+1)-level nuclear space. ``F_-`` is the collective
    lowering operator ``(1/N) sum_i (s_-^i + i_-^i)``. Commutator norms are
    Frobenius norms, which bound the operator norm from above.
    """
    if n_atoms < 2:
        raise ValueError("need at least two atoms")
    if abs(abs(qubit_alpha) ** 2 + abs(qubit_beta) ** 2 - 1.0) > 1e-12:
        raise ValueError("qubit amplitudes must be normalized")
    n_nuc = int(round(2 * nuclear_spin + 1))
    dim = 2 * n_nuc
    _, s_low = _spin_matrices(0.5)
    _, i_low = _spin_matrices(nuclear_spin)
    single_lower = sps.csr_matrix(np.kron(s_low, np.eye(n_nuc)) + np.kron(np.eye(2), i_low))
    f_minus = sum(_embed(single_lower, k, n_atoms, dim) for k in range(n_atoms)) / n_atoms

    ground = np.zeros(dim)
    ground[0] = 1.0  # |up, m_I = I>
    g_state = ground
    for _ in range(n_atoms - 1):
        g_state = np.kron(g_state, ground)
    r_state = qubit_alpha * g_state + qubit_beta * (f_minus @ g_state)
    r_state = r_state / np.linalg.norm(r_state)

    report = TripletReport(n_atoms, (qubit_alpha, qubit_beta), tol=tol)
    full = sps.identity(dim**n_atoms, format="csr", dtype=complex)
    for i, j in itertools.combinations(range(n_atoms), 2):
        ps = _pair_singlet(i, j, n_atoms, n_nuc)
        pt = full - ps
        comm = (pt @ f_minus - f_minus @ pt).tocsr()
        report.commutator_norms[(i, j)] = float(sps.linalg.norm(comm)) if comm.nnz else 0.0
        report.singlet_weights[(i, j)] = float(np.real(np.vdot(r_state, ps @ r_state)))
    return report
