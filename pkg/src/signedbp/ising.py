"""Square-lattice Ising backend (free boundary).

Provides the sufficient statistic and its O(1) single-flip delta, a
brute-force enumeration oracle for small lattices, heat-bath Gibbs dynamics,
monotone coupling-from-the-past perfect sampling, an annealed-importance
estimator of the normalising function, the exchange-algorithm gold standard,
and the bias-corrected log-normal likelihood estimate.

Hot paths (annealing transitions, coupled sweeps) are numba kernels over
int8 spin arrays; everything consumes reproducible substream keys so draws
can be batched or parallelised without changing results.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import logsumexp

from .pmmh import DoublyIntractableModel
from .rng import stream

# ---------------------------------------------------------------------------
# lattice and sufficient statistic
# ---------------------------------------------------------------------------

def suff_stat(spins: np.ndarray) -> int:
    """Sum of horizontal and vertical neighbour products (free boundary)."""
    spins = np.asarray(spins)
    horiz = np.sum(spins[:, :-1] * spins[:, 1:])
    vert = np.sum(spins[:-1, :] * spins[1:, :])
    return int(horiz + vert)


def delta_S(spins: np.ndarray, i: int, j: int) -> int:
    """Change in the statistic if spin (i, j) flips; neighbours only."""
    L = spins.shape[0]
    nb = 0
    if i > 0:
        nb += spins[i - 1, j]
    if i < L - 1:
        nb += spins[i + 1, j]
    if j > 0:
        nb += spins[i, j - 1]
    if j < L - 1:
        nb += spins[i, j + 1]
    return int(-2 * spins[i, j] * nb)


class IsingLattice:
    """Spin configuration with a cached sufficient statistic."""

    def __init__(self, spins: np.ndarray):
        spins = np.asarray(spins, dtype=np.int8)
        if spins.ndim != 2 or spins.shape[0] != spins.shape[1]:
            raise ValueError("spins must be a square array")
        if not np.all(np.abs(spins) == 1):
            raise ValueError("spins must be +/-1")
        self.spins = spins
        self.L = spins.shape[0]
        self.cached_S = suff_stat(spins)

    @classmethod
    def random(cls, L: int, rng: np.random.Generator) -> "IsingLattice":
        return cls(2 * rng.integers(0, 2, size=(L, L)).astype(np.int8) - 1)

    def flip(self, i: int, j: int) -> None:
        self.cached_S += delta_S(self.spins, i, j)
        self.spins[i, j] = -self.spins[i, j]

    def set_spin(self, i: int, j: int, value: int) -> None:
        if value != self.spins[i, j]:
            self.flip(i, j)


def save_lattice(path, lattice: IsingLattice) -> None:
    """Plain-text format: first line L, then L rows of +/-1."""
    with open(path, "w") as fh:
        fh.write(f"{lattice.L}\n")
        for row in lattice.spins:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def load_lattice(path) -> IsingLattice:
    with open(path) as fh:
        L = int(fh.readline())
        rows = [[int(v) for v in fh.readline().split()] for _ in range(L)]
    spins = np.array(rows, dtype=np.int8)
    if spins.shape != (L, L):
        raise ValueError(f"expected {L}x{L} lattice in {path}")
    return IsingLattice(spins)


# ---------------------------------------------------------------------------
# enumeration oracle (small lattices)
# ---------------------------------------------------------------------------

_MAX_ENUM_L = 4


@functools.lru_cache(maxsize=None)
def enumerate_suff_stats(L: int) -> np.ndarray:
    """S(y) for every configuration of an L x L lattice, index = bit pattern."""
    if L > _MAX_ENUM_L:
        raise ValueError(f"enumeration limited to L <= {_MAX_ENUM_L}")
    n = L * L
    codes = np.arange(2 ** n, dtype=np.uint32)
    bits = (codes[:, None] >> np.arange(n)) & 1
    spins = (2 * bits - 1).astype(np.int8).reshape(-1, L, L)
    horiz = np.einsum("kij,kij->k", spins[:, :, :-1], spins[:, :, 1:])
    vert = np.einsum("kij,kij->k", spins[:, :-1, :], spins[:, 1:, :])
    return (horiz + vert).astype(np.int64)


def lattice_code(spins: np.ndarray) -> int:
    """Bit-pattern index of a configuration, matching the enumeration order."""
    bits = (np.asarray(spins).ravel() + 1) // 2
    return int(np.dot(bits, 1 << np.arange(bits.size)))


def exact_log_Z(theta: float, L: int) -> float:
    """log of the normalising function by full enumeration; L <= 4 only."""
    return float(logsumexp(theta * enumerate_suff_stats(L)))


def exact_posterior(S_obs: int, L: int, grid_size: int = 4001):
    """Exact posterior density of theta on [0, 1] under a uniform prior.

    Returns (grid, density); density normalised by the trapezoid rule.
    """
    S_all = enumerate_suff_stats(L)
    grid = np.linspace(0.0, 1.0, grid_size)
    # chunk the (grid x states) matrix; at L=4 the full one is ~2 GB
    log_Z = np.empty(grid_size)
    chunk = max(1, 2 ** 22 // len(S_all))
    for lo in range(0, grid_size, chunk):
        block = grid[lo:lo + chunk, None] * S_all[None, :]
        log_Z[lo:lo + len(block)] = logsumexp(block, axis=1)
    log_post = grid * S_obs - log_Z
    log_post -= log_post.max()
    dens = np.exp(log_post)
    dens /= np.trapezoid(dens, grid)
    return grid, dens


def exact_posterior_mean(S_obs: int, L: int, grid_size: int = 4001) -> float:
    grid, dens = exact_posterior(S_obs, L, grid_size)
    return float(np.trapezoid(grid * dens, grid))


# ---------------------------------------------------------------------------
# Gibbs dynamics
# ---------------------------------------------------------------------------

def heat_bath_prob(theta: float, beta_anneal: float, neighbour_sum: int) -> float:
    """p(spin = +1 | neighbours) for the annealed kernel f^beta."""
    return 1.0 / (1.0 + np.exp(-2.0 * beta_anneal * theta * neighbour_sum))


def gibbs_update(lattice: IsingLattice, theta: float, beta_anneal: float,
                 rng: np.random.Generator, mode: str = "site") -> IsingLattice:
    """One heat-bath move: a single random site, or a full raster sweep."""
    L = lattice.L
    if mode == "site":
        idx = int(rng.integers(L * L))
        coords = [(idx // L, idx % L)]
        us = [rng.random()]
    elif mode == "sweep":
        coords = [(i, j) for i in range(L) for j in range(L)]
        us = rng.random(L * L)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    for (i, j), u in zip(coords, us):
        nb = _neighbour_sum(lattice.spins, i, j)
        p1 = heat_bath_prob(theta, beta_anneal, nb)
        lattice.set_spin(i, j, 1 if u < p1 else -1)
    return lattice


def _neighbour_sum(spins: np.ndarray, i: int, j: int) -> int:
    L = spins.shape[0]
    nb = 0
    if i > 0:
        nb += spins[i - 1, j]
    if i < L - 1:
        nb += spins[i + 1, j]
    if j > 0:
        nb += spins[i, j - 1]
    if j < L - 1:
        nb += spins[i, j + 1]
    return int(nb)


# ---------------------------------------------------------------------------
# annealed importance sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AisConfig:
    """Annealing ladder: n_temps equally spaced rungs ending at 1."""

    n_temps: int = 4000
    n_particles: int = 100

    def __post_init__(self):
        if self.n_temps < 2:
            raise ValueError("n_temps must be >= 2")
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")

    @property
    def betas(self) -> np.ndarray:
        return np.linspace(1.0 / self.n_temps, 1.0, self.n_temps)


@njit(cache=True)
def _ais_kernel(spins, S, logw, theta, betas, sites, unifs):
    """Advance all chains through the full ladder, accumulating log-weights.

    spins: (C, L, L) int8, S: (C,) int64, logw: (C,) float64.
    sites/unifs: (T, C) random inputs, one single-site move per rung.
    """
    C, L, _ = spins.shape
    T = betas.shape[0]
    prev_beta = 0.0
    for t in range(T):
        bt = betas[t]
        db = bt - prev_beta
        for c in range(C):
            logw[c] += db * theta * S[c]
            idx = sites[t, c]
            i = idx // L
            j = idx - i * L
            nb = 0
            if i > 0:
                nb += spins[c, i - 1, j]
            if i < L - 1:
                nb += spins[c, i + 1, j]
            if j > 0:
                nb += spins[c, i, j - 1]
            if j < L - 1:
                nb += spins[c, i, j + 1]
            p1 = 1.0 / (1.0 + np.exp(-2.0 * bt * theta * nb))
            new = 1 if unifs[t, c] < p1 else -1
            old = spins[c, i, j]
            if new != old:
                spins[c, i, j] = new
                S[c] += 2 * new * nb
        prev_beta = bt
    return spins


def _ais_run_chains(theta: float, L: int, betas: np.ndarray,
                    chain_keys: list[tuple]) -> np.ndarray:
    """Log-weights of independent annealing chains, one substream each."""
    C = len(chain_keys)
    T = len(betas)
    spins = np.empty((C, L, L), dtype=np.int8)
    sites = np.empty((T, C), dtype=np.int64)
    unifs = np.empty((T, C), dtype=np.float64)
    for c, key in enumerate(chain_keys):
        rng = stream(*key)
        spins[c] = 2 * rng.integers(0, 2, size=(L, L)).astype(np.int8) - 1
        sites[:, c] = rng.integers(0, L * L, size=T)
        unifs[:, c] = rng.random(T)
    S = np.array([suff_stat(s) for s in spins], dtype=np.int64)
    logw = np.full(C, L * L * np.log(2.0))
    _ais_kernel(spins, S, logw, float(theta), betas, sites, unifs)
    return logw


def ais_z_hat(theta: float, L: int, config: AisConfig, key: tuple) -> float:
    """Unbiased normaliser estimate: mean annealing weight over particles."""
    keys = [key + (m,) for m in range(config.n_particles)]
    logw = _ais_run_chains(theta, L, config.betas, keys)
    return float(np.exp(logsumexp(logw) - np.log(config.n_particles)))


def ais_log_weights(theta: float, L: int, config: AisConfig,
                    key: tuple) -> np.ndarray:
    """Per-particle log-weights (each particle is itself unbiased for Z)."""
    keys = [key + (m,) for m in range(config.n_particles)]
    return _ais_run_chains(theta, L, config.betas, keys)


# ---------------------------------------------------------------------------
# perfect sampling (monotone coupling from the past)
# ---------------------------------------------------------------------------

class CoalescenceError(RuntimeError):
    """Bounding chains failed to meet within the sweep cap."""


@njit(cache=True)
def _coupled_sweeps(top, bot, theta, unifs):
    """Raster heat-bath sweeps applied to both bounding chains.

    unifs has shape (n_sweeps, L, L); the same uniform drives both chains,
    which preserves the sandwich top >= bot for theta >= 0.
    """
    n_sweeps, L, _ = unifs.shape
    for s in range(n_sweeps):
        for i in range(L):
            for j in range(L):
                u = unifs[s, i, j]
                for which in range(2):
                    grid = top if which == 0 else bot
                    nb = 0
                    if i > 0:
                        nb += grid[i - 1, j]
                    if i < L - 1:
                        nb += grid[i + 1, j]
                    if j > 0:
                        nb += grid[i, j - 1]
                    if j < L - 1:
                        nb += grid[i, j + 1]
                    p1 = 1.0 / (1.0 + np.exp(-2.0 * theta * nb))
                    grid[i, j] = 1 if u < p1 else -1


_CFTP_CHUNK = 4096


def perfect_sample(theta: float, L: int, key: tuple,
                   max_sweeps: int = 2 ** 20) -> IsingLattice:
    """Exact draw from the Ising distribution via coupling from the past.

    Requires theta >= 0 (monotone dynamics).  Past segments double in length;
    segment k reuses identical randomness across restarts, regenerated from
    its own substream.  Raises :class:`CoalescenceError` at the sweep cap
    rather than returning an approximate draw.
    """
    if theta < 0:
        raise ValueError("perfect sampling requires theta >= 0")
    attempt = 0
    while True:
        # segments K, K-1, ..., 0 run oldest first; segment k has
        # 2**k sweeps for k >= 1 and a single sweep for k = 0.
        K = attempt
        total = 2 ** (K + 1) - 1
        if total > max_sweeps:
            raise CoalescenceError(
                f"no coalescence within {max_sweeps} sweeps at theta={theta}")
        top = np.ones((L, L), dtype=np.int8)
        bot = -np.ones((L, L), dtype=np.int8)
        for k in range(K, -1, -1):
            rng = stream(*key, 7, k)
            n_sweeps = 2 ** k if k >= 1 else 1
            done = 0
            while done < n_sweeps:
                chunk = min(_CFTP_CHUNK, n_sweeps - done)
                unifs = rng.random((chunk, L, L))
                _coupled_sweeps(top, bot, float(theta), unifs)
                done += chunk
            if not np.all(top >= bot):
                raise AssertionError("monotone sandwich violated")
        if np.array_equal(top, bot):
            return IsingLattice(top)
        attempt += 1


# ---------------------------------------------------------------------------
# exchange algorithm (gold standard)
# ---------------------------------------------------------------------------

def exchange_step(theta: float, S_obs: int, L: int, step: float,
                  rng: np.random.Generator, sample_key: tuple,
                  max_sweeps: int = 2 ** 20, max_retries: int = 5) -> float:
    """One exchange update with a perfectly sampled auxiliary dataset."""
    theta2 = theta + step * rng.standard_normal()
    if not (0.0 <= theta2 <= 1.0):
        return theta
    for retry in range(max_retries):
        try:
            aux = perfect_sample(theta2, L, sample_key + (retry,),
                                 max_sweeps=max_sweeps)
            break
        except CoalescenceError:
            continue
    else:
        return theta
    log_ratio = (theta2 - theta) * S_obs + (theta - theta2) * aux.cached_S
    if np.log(rng.random()) < min(0.0, log_ratio):
        return float(theta2)
    return theta


def exchange_chain(S_obs: int, L: int, n_iter: int, seed: int,
                   theta0: float = 0.5, step: float = 0.07) -> np.ndarray:
    rng = stream(seed, 11)
    thetas = np.empty(n_iter)
    theta = theta0
    for i in range(n_iter):
        theta = exchange_step(theta, S_obs, L, step, rng, (seed, 12, i))
        thetas[i] = theta
    return thetas


# ---------------------------------------------------------------------------
# bias-corrected estimator
# ---------------------------------------------------------------------------

def bias_corrected_log_estimate(z_draws: np.ndarray, nu: float) -> float:
    """Log of the positive log-normal-debiased estimate of exp(-nu * Z).

    Exactly unbiased when the draws are Gaussian with the estimated
    variance; always finite.
    """
    z_draws = np.asarray(z_draws, dtype=float)
    M = len(z_draws)
    if M < 2:
        raise ValueError("need at least 2 draws")
    var = float(np.var(z_draws, ddof=1))
    return float(-nu * np.mean(z_draws) - nu ** 2 * var / (2.0 * M))


# ---------------------------------------------------------------------------
# model backend for the chain driver
# ---------------------------------------------------------------------------

class IsingModel(DoublyIntractableModel):
    """Single-parameter Ising likelihood with Uniform[0, 1] prior.

    The chain walks theta directly (no transform); the normalising function
    is estimated by annealed importance sampling.
    """

    dim = 1
    n_aux = 1

    def __init__(self, data: IsingLattice, ais: AisConfig):
        self.data = data
        self.ais = ais
        self.S_obs = data.cached_S
        self.L = data.L

    def log_f(self, theta: np.ndarray) -> float:
        return float(theta[0] * self.S_obs)

    def log_prior(self, theta: np.ndarray) -> float:
        return 0.0 if 0.0 <= theta[0] <= 1.0 else -np.inf

    def to_natural(self, theta: np.ndarray) -> np.ndarray:
        return np.asarray(theta, dtype=float)

    def z_hat(self, theta: np.ndarray, key: tuple) -> float:
        return ais_z_hat(float(theta[0]), self.L, self.ais, tuple(key))

    def z_hat_batch(self, theta: np.ndarray, keys) -> np.ndarray:
        """All requested estimates in one kernel call (draws x particles)."""
        keys = list(keys)
        M = self.ais.n_particles
        chain_keys = [tuple(k) + (m,) for k in keys for m in range(M)]
        logw = _ais_run_chains(float(theta[0]), self.L, self.ais.betas,
                               chain_keys)
        logw = logw.reshape(len(keys), M)
        return np.exp(logsumexp(logw, axis=1) - np.log(M))

    def z_single(self, theta: np.ndarray, key: tuple) -> float:
        return float(np.exp(self.z_single_batch(theta, [key])[0]))

    def z_single_batch(self, theta: np.ndarray, keys) -> np.ndarray:
        chain_keys = [tuple(k) + (0,) for k in keys]
        logw = _ais_run_chains(float(theta[0]), self.L, self.ais.betas,
                               chain_keys)
        return np.exp(logw)
