"""Monte Carlo spin-exchange relaxation of stored Zeeman coherences.

Each atom is carried as a 16x16 density matrix over electron {up, down}
times the full nuclear manifold (m_I = I .. -I). Collisions are scheduled as
one global Poisson process; after every collision the pair is replaced by
the product of its reduced states (molecular chaos), and each reduced state
is dephased between the F = I +- 1/2 hyperfine manifolds, which is what the
fast hyperfine precession does between collisions.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .collisions import SINGLET, _spin_matrices
from .sequence import FitError, LifetimeFit, fit_lifetime

SCHEMES = ("dm1", "dm2")
CSV_HEADER = ("t_seconds", "abs_coherence", "scheme", "r_se", "seed")


@dataclass(frozen=True)
class _Basis:
    n_nuc: int
    p_upper: np.ndarray
    p_lower: np.ndarray
    ket44: np.ndarray
    ket43: np.ndarray
    ket42: np.ndarray

    @property
    def dim(self) -> int:
        return 2 * self.n_nuc


def _full_basis(nuclear_spin: float) -> _Basis:
    n = int(round(2 * nuclear_spin + 1))
    sz, sm = _spin_matrices(0.5)
    iz, im = _spin_matrices(nuclear_spin)
    e2, en = np.eye(2), np.eye(n)
    s_z, s_m = np.kron(sz, en), np.kron(sm, en)
    i_z, i_m = np.kron(e2, iz), np.kron(e2, im)
    i_dot_s = i_z @ s_z + 0.5 * (i_m.T @ s_m + i_m @ s_m.T)
    w, v = np.linalg.eigh(i_dot_s)
    upper, lower = v[:, w > 0], v[:, w < 0]

    f_minus = s_m + i_m
    kets = [np.zeros(2 * n)]
    kets[0][0] = 1.0  # |up, m_I = I> = |F=I+1/2, m=F>
    for _ in range(2):
        nxt = f_minus @ kets[-1]
        kets.append(nxt / np.linalg.norm(nxt))
    return _Basis(n, upper @ upper.T, lower @ lower.T, *kets)


def _collide_reduced(a: np.ndarray, b: np.ndarray, c: complex, n: int) -> np.ndarray:
    """Reduced state of atom ``a`` after ``1 + c P_S`` acts on ``a (x) b``."""
    b_el = np.einsum("ambm->ab", b.reshape(2, n, 2, n))
    k_el = SINGLET @ b_el.T @ SINGLET.T
    k = np.kron(k_el, np.eye(n))
    ka = k @ a
    out = a + c * ka + np.conj(c) * ka.conj().T
    m_el = SINGLET @ b_el @ SINGLET.T
    nuc = np.einsum("eg,enga->na", m_el, a.reshape(2, n, 2, n))
    out += abs(c) ** 2 * 0.5 * np.kron(np.eye(2), nuc)
    return out


def _settle(rho: np.ndarray, basis: _Basis) -> np.ndarray:
    rho = basis.p_upper @ rho @ basis.p_upper + basis.p_lower @ rho @ basis.p_lower
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


@dataclass
class DecayResult:
    """Ensemble-mean coherence trace and its exponential fit.

    ``fit`` is None when fitting failed; ``fit_error`` then holds the reason
    and ``trace`` is still the full raw data.
    """

    scheme: str
    r_se: float
    seed: int
    trace: np.ndarray
    fit: LifetimeFit | None = None
    fit_error: str | None = None
    n_collisions: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def decay_rate(self) -> float:
        if self.fit is None:
            return math.nan
        return self.fit.decay_rate

    def csv_rows(self):
        for t, c in self.trace:
            yield (t, c, self.scheme, self.r_se, self.seed)


def _single_trial(scheme, r_se, duration, n_atoms, eta, seed_seq, n_samples, nuclear_spin):
    basis = _full_basis(nuclear_spin)
    target = basis.ket43 if scheme == "dm1" else basis.ket42
    psi = basis.ket44 + math.sqrt(2.0) * eta * target
    psi = psi / np.linalg.norm(psi)
    rho = np.repeat(np.outer(psi, psi.conj())[None].astype(complex), n_atoms, axis=0)

    rng = np.random.Generator(np.random.Philox(seed_seq))
    t_grid = np.linspace(0.0, duration, n_samples)
    coherence = np.empty(n_samples)
    rate = n_atoms * r_se / 2.0
    probe = basis.ket44.conj()
    n = basis.n_nuc

    def sample():
        return abs(np.mean(rho @ target @ probe))

    t, k, events = 0.0, 0, 0
    while True:
        t += rng.exponential(1.0 / rate)
        while k < n_samples and t_grid[k] <= t:
            coherence[k] = sample()
            k += 1
        if k == n_samples:
            break
        i = int(rng.integers(n_atoms))
        j = int(rng.integers(n_atoms - 1))
        j += j >= i
        c = np.exp(1j * rng.uniform(0.0, 2 * math.pi)) - 1.0
        new_i = _collide_reduced(rho[i], rho[j], c, n)
        new_j = _collide_reduced(rho[j], rho[i], c, n)
        rho[i], rho[j] = _settle(new_i, basis), _settle(new_j, basis)
        events += 1
    return t_grid, coherence, events


def mc_coherence_decay(scheme: str, r_se: float, duration: float, n_atoms: int, eta: float,
                       seed: int, n_samples: int = 41, n_trials: int = 1, workers: int = 1,
                       nuclear_spin: float = 3.5) -> DecayResult:
    """Simulate spin-exchange decay of a stored Delta m = 1 or Delta m = 2 coherence.

    Parameters
    ----------
    scheme : {"dm1", "dm2"}
        ``dm1`` tracks <4,4|rho|4,3>; ``dm2`` tracks <4,4|rho|4,2>.
    r_se : float
        Per-atom collision rate (1/s).
    duration : float
        Simulated dark time (s), sampled on ``n_samples`` uniform points.
    n_atoms : int
        Ensemble size (>= 2).
    eta : float
        Stored tilt, at most 0.1.
    seed : int
        Master seed. Trial ``k`` uses the k-th child of ``SeedSequence(seed)``,
        so results do not depend on ``workers``.

    Returns
    -------
    DecayResult
        Trace of the trial-averaged |coherence| with an exponential fit.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    if n_atoms < 2:
        raise ValueError("need at least two atoms")
    if not r_se > 0 or not duration > 0:
        raise ValueError("r_se and duration must be positive")
    if not 0 <= eta <= 0.1:
        raise ValueError("eta must lie in [0, 0.1]")
    if n_samples < 3 or n_trials < 1:
        raise ValueError("need n_samples >= 3 and n_trials >= 1")

    children = np.random.SeedSequence(seed).spawn(n_trials)
    args = [(scheme, r_se, duration, n_atoms, eta, ch, n_samples, nuclear_spin) for ch in children]
    if workers > 1 and n_trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_single_trial, *zip(*args)))
    else:
        runs = [_single_trial(*a) for a in args]

    t_grid = runs[0][0]
    mean_coh = np.mean([r[1] for r in runs], axis=0)
    trace = np.column_stack([t_grid, mean_coh])
    result = DecayResult(scheme, float(r_se), int(seed), trace,
                         n_collisions=sum(r[2] for r in runs),
                         meta={"n_atoms": n_atoms, "eta": eta, "n_trials": n_trials,
                               "duration": duration})
    try:
        result.fit = fit_lifetime(trace)
    except FitError as exc:
        result.fit_error = str(exc)
    return result
