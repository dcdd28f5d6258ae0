"""Signed pseudo-marginal Metropolis-Hastings driver.

One iteration refreshes a single block of estimator random numbers, proposes
``theta`` by (optionally adaptive) Gaussian random walk, draws the auxiliary
variable from an exponential proposal calibrated by the average of the inner
``Z_hat`` draws, and accepts on the absolute value of the estimated target.
The recorded sign sequence feeds the importance-weighted posterior average
in :func:`sign_corrected_expectation`.

Two estimator back ends are supported: the signed block estimator from
:mod:`signedbp.bp_core` (exact, possibly negative) and the always-positive
bias-corrected log-normal estimate (approximate; see ``signedbp.ising``).
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import bp_core
from .bp_core import BlockRandomStore, BpConfig, SignedLogEstimate
from .rng import stream

_TAG_BC = 104  # substream tag of bias-corrected single-particle draws


class DoublyIntractableModel:
    """Interface a model backend must implement.

    ``theta`` is always the unconstrained coordinate vector; backends own the
    transform to natural coordinates.  ``n_aux`` is the number of exponential
    auxiliary variables (one per observation when the normalising function is
    observation-independent, else one); the driver carries their sum.
    """

    dim: int = 1
    n_aux: int = 1

    def log_f(self, theta: np.ndarray) -> float:
        """Log of the computable likelihood kernel, totalled over the data."""
        raise NotImplementedError

    def log_prior(self, theta: np.ndarray) -> float:
        """Log prior on unconstrained coordinates, Jacobian included."""
        raise NotImplementedError

    def z_hat(self, theta: np.ndarray, key: tuple) -> float:
        raise NotImplementedError

    def z_single(self, theta: np.ndarray, key: tuple) -> float:
        """One-particle unbiased draw, for the bias-corrected estimator."""
        raise NotImplementedError

    def to_natural(self, theta: np.ndarray) -> np.ndarray:
        return np.asarray(theta, dtype=float)


# ---------------------------------------------------------------------------
# proposal
# ---------------------------------------------------------------------------

@dataclass
class ProposalConfig:
    kind: str = "fixed_rw"            # "fixed_rw" | "adaptive_rw"
    step: float = 0.1
    target_accept: float | None = None  # default 0.44 scalar, 0.234 otherwise

    def __post_init__(self):
        if self.kind not in ("fixed_rw", "adaptive_rw"):
            raise ValueError(f"unknown proposal kind {self.kind!r}")
        if not self.step > 0:
            raise ValueError("step must be > 0")


class ProposalState:
    """Random-walk proposal with Robbins-Monro step scaling.

    The log step size is nudged toward the target acceptance rate with a
    decaying gain; the proposal covariance is the running sample covariance
    of the chain (identity until enough history has accumulated).
    """

    _COV_WARMUP = 200

    def __init__(self, config: ProposalConfig, dim: int):
        self.config = config
        self.dim = dim
        self.log_step = float(np.log(config.step))
        self.target = config.target_accept
        if self.target is None:
            self.target = 0.44 if dim == 1 else 0.234
        self.n_updates = 0
        # Welford accumulators over chain history
        self._mean = np.zeros(dim)
        self._m2 = np.zeros((dim, dim))
        self._n_hist = 0
        self._chol = np.eye(dim)

    @property
    def step(self) -> float:
        return float(np.exp(self.log_step))

    def propose(self, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return theta + self.step * (self._chol @ rng.standard_normal(self.dim))

    def observe(self, theta: np.ndarray) -> None:
        """Feed one chain iterate into the covariance estimate."""
        if self.config.kind != "adaptive_rw":
            return
        self._n_hist += 1
        delta = theta - self._mean
        self._mean += delta / self._n_hist
        self._m2 += np.outer(delta, theta - self._mean)
        if self._n_hist >= self._COV_WARMUP and self._n_hist % 100 == 0:
            cov = self._m2 / (self._n_hist - 1)
            cov = cov / max(np.mean(np.diag(cov)), 1e-12)  # scale lives in step
            try:
                self._chol = np.linalg.cholesky(
                    cov + 1e-8 * np.eye(self.dim))
            except np.linalg.LinAlgError:
                pass

    def update(self, accepted: bool) -> "ProposalState":
        """Robbins-Monro adjustment of the log step size; no-op when fixed."""
        if self.config.kind != "adaptive_rw":
            return self
        self.n_updates += 1
        gain = 1.0 / max(self.n_updates, 10) ** 0.7
        self.log_step += gain * ((1.0 if accepted else 0.0) - self.target)
        return self


def adaptive_rw_update(proposal: ProposalState, accepted: bool) -> ProposalState:
    """Advance the proposal adaptation by one iteration."""
    return proposal.update(accepted)


# ---------------------------------------------------------------------------
# bias-corrected estimator state (particles grouped for correlated refresh)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParticleStore:
    """Substream keys of the single-particle draws behind one Z_M estimate.

    Particles are assigned round-robin to ``n_groups`` groups; refreshing a
    group redraws only that group's particles, mirroring the block update of
    the signed estimator.
    """

    master_seed: int
    n_particles: int
    n_groups: int
    epochs: np.ndarray

    def keys(self) -> list[tuple]:
        return [
            (self.master_seed, _TAG_BC, p % self.n_groups,
             int(self.epochs[p % self.n_groups]), p)
            for p in range(self.n_particles)
        ]

    def refresh(self, group: int) -> "ParticleStore":
        if not (0 <= group < self.n_groups):
            raise IndexError(f"group {group} out of range")
        epochs = self.epochs.copy()
        epochs[group] += 1
        return replace(self, epochs=epochs)


def draw_particle_store(master_seed: int, n_particles: int,
                        n_groups: int) -> ParticleStore:
    return ParticleStore(master_seed=int(master_seed), n_particles=n_particles,
                         n_groups=n_groups,
                         epochs=np.zeros(n_groups, dtype=np.int64))


def _z_singles(model, theta, keys) -> np.ndarray:
    batch = getattr(model, "z_single_batch", None)
    if batch is not None:
        return np.asarray(batch(theta, keys), dtype=float)
    return np.array([model.z_single(theta, k) for k in keys], dtype=float)


# ---------------------------------------------------------------------------
# chain state and step
# ---------------------------------------------------------------------------

@dataclass
class PmmhState:
    theta: np.ndarray            # unconstrained coordinates
    nu: float                    # sum of the exponential auxiliaries
    store: BlockRandomStore | ParticleStore
    est: SignedLogEstimate
    log_f: float
    log_prior: float
    z_p_bar: float


@dataclass(frozen=True)
class ChainSample:
    theta: np.ndarray            # natural coordinates
    sign: int
    accepted: bool
    nu: float
    log_abs_like: float


def _bp_evaluate(model, bp_config: BpConfig, store: BlockRandomStore,
                 theta: np.ndarray, rng: np.random.Generator):
    """All estimator pieces at ``theta`` under ``store``; None if degenerate."""
    keys = store.draw_keys()
    z_ind = float(bp_core.z_hat_many(model, theta, [store.lb_key()])[0])
    z_values = bp_core.z_hat_many(model, theta, keys) if keys else np.empty(0)
    z_p = float(np.mean(z_values)) if z_values.size else z_ind
    nu = float(rng.gamma(model.n_aux, 1.0 / z_p))
    a = bp_core.soft_lower_bound(z_ind, nu, bp_config.poisson_mean,
                                 bp_config.n_blocks)
    est = bp_core.assemble(bp_config, store.chi, z_values, nu, a,
                           z_independent=z_ind)
    return est, nu, z_p


def _bc_evaluate(model, store: ParticleStore, theta: np.ndarray,
                 rng: np.random.Generator):
    from .ising import bias_corrected_log_estimate

    zs = _z_singles(model, theta, store.keys())
    z_p = float(np.mean(zs))
    nu = float(rng.gamma(model.n_aux, 1.0 / z_p))
    log_est = bias_corrected_log_estimate(zs, nu)
    est = SignedLogEstimate(sign=1, log_abs=log_est, z_p_bar=z_p,
                            n_negative_factors=0)
    return est, nu, z_p


def pmmh_step(state: PmmhState, model, bp_config: BpConfig,
              proposal: ProposalState, rng: np.random.Generator,
              block_index: int) -> tuple[PmmhState, ChainSample]:
    """One update: block refresh, theta proposal, auxiliary draw, accept test.

    The acceptance ratio is evaluated entirely in log domain; exp is applied
    only to ``min(0, log_ratio)``.  A degenerate (zero-factor) estimate or a
    non-finite log prior at the proposal is an automatic rejection.
    """
    if isinstance(state.store, ParticleStore):
        store2 = state.store.refresh(block_index % state.store.n_groups)
        evaluate = _bc_evaluate
        eval_args = (model, store2)
    else:
        store2 = bp_core.refresh_block(state.store, block_index,
                                       bp_config.poisson_mean)
        evaluate = _bp_evaluate
        eval_args = (model, bp_config, store2)

    theta2 = proposal.propose(state.theta, rng)
    log_prior2 = float(model.log_prior(theta2))
    accepted = False
    if np.isfinite(log_prior2):
        est2, nu2, z_p2 = evaluate(*eval_args, theta2, rng)
        if not est2.degenerate and np.isfinite(est2.log_abs):
            log_f2 = float(model.log_f(theta2))
            log_ratio = (
                (est2.log_abs + log_f2 + log_prior2)
                - (state.est.log_abs + state.log_f + state.log_prior)
                + model.n_aux * (np.log(state.z_p_bar) - np.log(z_p2))
                + (nu2 * z_p2 - state.nu * state.z_p_bar)
            )
            if np.log(rng.random()) < min(0.0, log_ratio):
                accepted = True
                state = PmmhState(theta=theta2, nu=nu2, store=store2, est=est2,
                                  log_f=log_f2, log_prior=log_prior2,
                                  z_p_bar=z_p2)
    sample = ChainSample(theta=model.to_natural(state.theta),
                         sign=state.est.sign, accepted=accepted,
                         nu=state.nu, log_abs_like=state.est.log_abs)
    return state, sample


def init_state(model, bp_config: BpConfig, master_seed: int,
               init_theta: np.ndarray, rng: np.random.Generator,
               estimator: str = "bp", n_bc_draws: int = 100) -> PmmhState:
    theta = np.atleast_1d(np.asarray(init_theta, dtype=float))
    log_prior = float(model.log_prior(theta))
    if not np.isfinite(log_prior):
        raise ValueError("initial theta has zero prior density")
    if estimator == "bp":
        store = bp_core.draw_store(bp_config, master_seed)
        est, nu, z_p = _bp_evaluate(model, bp_config, store, theta, rng)
    elif estimator == "bias_corrected":
        store = draw_particle_store(master_seed, n_bc_draws,
                                    bp_config.n_blocks)
        est, nu, z_p = _bc_evaluate(model, store, theta, rng)
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    if est.degenerate:
        raise RuntimeError("degenerate estimate at initialisation")
    return PmmhState(theta=theta, nu=nu, store=store, est=est,
                     log_f=float(model.log_f(theta)), log_prior=log_prior,
                     z_p_bar=z_p)


@dataclass
class Chain:
    """Recorded posterior iterates plus run metadata."""

    thetas: np.ndarray           # (n_iter, dim) natural coordinates
    signs: np.ndarray            # (n_iter,) in {-1, +1}
    accepted: np.ndarray         # (n_iter,) bool
    nus: np.ndarray
    log_abs_like: np.ndarray
    runtime_seconds: float = 0.0

    def __len__(self) -> int:
        return len(self.signs)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted))

    @property
    def negative_fraction(self) -> float:
        return float(np.mean(self.signs < 0))


def run_chain(model, bp_config: BpConfig, proposal: ProposalConfig,
              n_iter: int, seed: int, init_theta,
              estimator: str = "bp", n_bc_draws: int = 100,
              block_schedule: str = "cyclic",
              progress_every: int | None = None) -> Chain:
    """Run the chain for ``n_iter`` iterations; deterministic given ``seed``."""
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    rng = stream(seed, 0)
    n_groups = bp_config.n_blocks
    prop = ProposalState(proposal, model.dim)
    state = init_state(model, bp_config, seed, init_theta, rng,
                       estimator=estimator, n_bc_draws=n_bc_draws)

    dim = model.dim
    thetas = np.empty((n_iter, dim))
    signs = np.empty(n_iter, dtype=np.int8)
    accepted = np.empty(n_iter, dtype=bool)
    nus = np.empty(n_iter)
    log_abs = np.empty(n_iter)
    t0 = time.perf_counter()
    for i in range(n_iter):
        if block_schedule == "cyclic":
            block = i % n_groups
        else:
            block = int(rng.integers(n_groups))
        state, sample = pmmh_step(state, model, bp_config, prop, rng, block)
        prop.observe(state.theta)
        adaptive_rw_update(prop, sample.accepted)
        thetas[i] = sample.theta
        signs[i] = sample.sign
        accepted[i] = sample.accepted
        nus[i] = sample.nu
        log_abs[i] = sample.log_abs_like
        if progress_every and (i + 1) % progress_every == 0:
            print(f"iter {i + 1}/{n_iter} "
                  f"acc={np.mean(accepted[: i + 1]):.3f} "
                  f"neg={np.mean(signs[: i + 1] < 0):.3f}", flush=True)
    runtime = time.perf_counter() - t0
    return Chain(thetas=thetas, signs=signs, accepted=accepted, nus=nus,
                 log_abs_like=log_abs, runtime_seconds=runtime)


# ---------------------------------------------------------------------------
# sign correction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SignedExpectation:
    value: float
    negative_fraction: float
    reliable: bool


def sign_corrected_expectation(chain: Chain, psi, burn_in: int = 0,
                               ) -> SignedExpectation:
    """Importance-corrected posterior mean of ``psi(theta)``.

    Computes ``sum(psi * s) / sum(s)`` over post-burn-in iterates.  When the
    signs nearly cancel the ratio is unstable; a warning is raised and the
    result flagged unreliable once ``|sum(s)| < 0.02 * N``.
    """
    if burn_in >= len(chain):
        raise ValueError("burn_in leaves no samples")
    thetas = chain.thetas[burn_in:]
    s = chain.signs[burn_in:].astype(float)
    vals = np.array([psi(t) for t in thetas], dtype=float)
    sum_s = float(np.sum(s))
    n = len(s)
    reliable = abs(sum_s) >= 0.02 * n
    if not reliable:
        warnings.warn("sign-corrected estimate is unreliable: signs nearly "
                      f"cancel (sum {sum_s:.0f} of {n})")
    value = float(np.sum(vals * s) / sum_s) if sum_s != 0 else np.nan
    return SignedExpectation(value=value,
                             negative_fraction=float(np.mean(s < 0)),
                             reliable=reliable)
