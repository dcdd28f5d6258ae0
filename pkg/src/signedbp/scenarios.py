"""Replicated estimator-comparison scenarios for :func:`rmse_study`.

Importing this module registers the scenarios; each registered function maps
``(seed, **options)`` to ``{method: {param: (estimate, truth)}}``.
"""

from __future__ import annotations

import numpy as np

from . import ising, kent
from .bp_core import BpConfig
from .diagnostics import register_scenario
from .pmmh import ProposalConfig, run_chain, sign_corrected_expectation
from .rng import stream

__all__ = ["kent_estimators", "ising_estimators"]


@register_scenario("kent-estimators")
def kent_estimators(seed: int, n: int = 1000, kappa: float = 5.0,
                    ratio: float = 0.25, n_iter: int = 4000,
                    burn_in: int = 500, n_blocks: int = 20,
                    psi: float = 0.7, alpha: float = 1.1,
                    eta: float = 2.0) -> dict:
    """Moment vs MLE vs signed-chain posterior mean on one FB5 dataset."""
    truth = kent.KentParams(kappa=kappa, beta=ratio * kappa,
                            psi=psi, alpha=alpha, eta=eta)
    data = kent.sample(truth, n, stream(seed, 801))

    def pack(k_hat: float, b_hat: float) -> dict:
        return {"kappa": (k_hat, truth.kappa),
                "beta": (b_hat, truth.beta),
                "ratio": (b_hat / k_hat, ratio)}

    moment = kent.moment_estimate(data)
    mle = kent.mle_estimate(data)
    chain = kent.fit_pmmh(data, n_blocks=n_blocks, n_iter=n_iter, seed=seed)
    k_mean = sign_corrected_expectation(chain, lambda t: t[0], burn_in).value
    b_mean = sign_corrected_expectation(chain, lambda t: t[1], burn_in).value
    r_mean = sign_corrected_expectation(chain, lambda t: t[1] / t[0],
                                        burn_in).value
    return {
        "moment": pack(moment.kappa, moment.beta),
        "mle": pack(mle.kappa, mle.beta),
        "bayes": {"kappa": (k_mean, truth.kappa),
                  "beta": (b_mean, truth.beta),
                  "ratio": (r_mean, ratio)},
    }


@register_scenario("ising-estimators")
def ising_estimators(seed: int, L: int = 5, theta: float = 0.3,
                     n_iter: int = 3000, burn_in: int = 300,
                     n_blocks: int = 10, n_temps: int = 500,
                     n_particles: int = 20,
                     exchange_iters: int = 3000) -> dict:
    """Signed-chain vs exchange-algorithm posterior mean on one lattice."""
    lattice = ising.perfect_sample(theta, L, (seed, 802))
    model = ising.IsingModel(lattice, ising.AisConfig(n_temps=n_temps,
                                                      n_particles=n_particles))
    chain = run_chain(model, BpConfig(n_blocks=n_blocks),
                      ProposalConfig(kind="adaptive_rw", step=0.1),
                      n_iter=n_iter, seed=seed, init_theta=np.array([0.5]))
    bp_mean = sign_corrected_expectation(chain, lambda t: t[0], burn_in).value
    ex = ising.exchange_chain(lattice.cached_S, L, exchange_iters, seed)
    return {
        "bp": {"theta": (bp_mean, theta)},
        "exchange": {"theta": (float(np.mean(ex[burn_in:])), theta)},
    }
