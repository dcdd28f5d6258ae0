"""Block-structured unbiased estimator of exp(B) in sign / log-absolute form.

The estimator is a product over ``n_blocks`` blocks; block ``l`` contributes
``exp(a/n_blocks + m)`` times a product of ``chi_l ~ Poisson(m)`` shifted
factors ``(B_hat - a) / (m * n_blocks)``.  Each ``B_hat`` is ``-nu * Z_hat``
for an unbiased draw ``Z_hat`` supplied by a model backend.  The product is
accumulated as a running log of absolute values plus a negative-factor
parity, never as a raw product.

The per-block random numbers live in :class:`BlockRandomStore`; refreshing a
single block leaves every other block bit-identical, which is what makes
correlated pseudo-marginal updates possible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Protocol, Sequence

import numpy as np

from .rng import stream

# tags separating the substream families hanging off one master seed
_TAG_COUNT = 101  # Poisson block counts
_TAG_DRAW = 102   # inner Z_hat draws
_TAG_LB = 103     # independent draw for the soft lower bound


@dataclass(frozen=True)
class BpConfig:
    """Hyperparameters of the block estimator.

    ``target_rho`` is informational only: the induced correlation of the
    log-estimates under one-block refresh is ``1 - 1/n_blocks``.
    """

    n_blocks: int
    poisson_mean: float = 1.0
    target_rho: float = 0.0

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if not self.poisson_mean > 0:
            raise ValueError("poisson_mean must be > 0")
        if not (0.0 <= self.target_rho < 1.0):
            raise ValueError("target_rho must be in [0, 1)")


class ZHatProvider(Protocol):
    """Unbiased, positive estimator of the normalising function.

    Implementations must be pure: the same ``(theta, key)`` pair always
    yields the same value, so draws can be evaluated concurrently.
    """

    def z_hat(self, theta: np.ndarray, key: tuple) -> float:
        ...


def z_hat_many(provider, theta: np.ndarray, keys: Sequence[tuple]) -> np.ndarray:
    """Evaluate many draws, using the provider's batch path if it has one."""
    batch = getattr(provider, "z_hat_batch", None)
    if batch is not None:
        return np.asarray(batch(theta, keys), dtype=float)
    return np.array([provider.z_hat(theta, k) for k in keys], dtype=float)


@dataclass(frozen=True)
class BlockRandomStore:
    """The per-block random substreams of one estimator evaluation.

    Only counts, epochs and the master seed are materialised; the actual
    uniforms behind every inner draw are regenerated on demand from the
    draw keys, so the store is cheap to copy and trivially reproducible.
    """

    master_seed: int
    chi: np.ndarray       # (n_blocks,) Poisson counts
    epochs: np.ndarray    # (n_blocks,) per-block refresh counters
    lb_epoch: int         # refresh counter of the lower-bound substream

    @property
    def n_blocks(self) -> int:
        return len(self.chi)

    def draw_key(self, block: int, draw: int) -> tuple:
        return (self.master_seed, _TAG_DRAW, block, int(self.epochs[block]), draw)

    def draw_keys(self) -> list[tuple]:
        """Keys of all inner draws, block-major order."""
        return [
            self.draw_key(l, h)
            for l in range(self.n_blocks)
            for h in range(int(self.chi[l]))
        ]

    def lb_key(self) -> tuple:
        return (self.master_seed, _TAG_LB, self.lb_epoch)


def _draw_chi(master_seed: int, block: int, epoch: int, m: float) -> int:
    rng = stream(master_seed, _TAG_COUNT, block, epoch)
    return int(rng.poisson(m))


def draw_store(config: BpConfig, master_seed: int) -> BlockRandomStore:
    """Draw a fresh store: ``chi_l ~ Poisson(m)`` from per-block substreams."""
    epochs = np.zeros(config.n_blocks, dtype=np.int64)
    chi = np.array(
        [
            _draw_chi(master_seed, l, 0, config.poisson_mean)
            for l in range(config.n_blocks)
        ],
        dtype=np.int64,
    )
    return BlockRandomStore(master_seed=int(master_seed), chi=chi, epochs=epochs,
                            lb_epoch=0)


def refresh_block(store: BlockRandomStore, block_index: int,
                  poisson_mean: float) -> BlockRandomStore:
    """Redraw one block (new count and draw seeds); other blocks untouched.

    The lower-bound substream is refreshed together with the block so that
    the independent draw behind the soft lower bound participates in the
    correlated update scheme.
    """
    if not (0 <= block_index < store.n_blocks):
        raise IndexError(f"block index {block_index} out of range")
    epochs = store.epochs.copy()
    epochs[block_index] += 1
    chi = store.chi.copy()
    chi[block_index] = _draw_chi(store.master_seed, block_index,
                                 int(epochs[block_index]), poisson_mean)
    return replace(store, chi=chi, epochs=epochs, lb_epoch=store.lb_epoch + 1)


def soft_lower_bound(z_hat_independent: float, nu: float, m: float,
                     n_blocks: int) -> float:
    """Variance-minimising shift, estimated from an independent draw.

    Returns ``(-nu * z_hat_independent) - m * n_blocks``.  The draw must come
    from a substream disjoint from every inner estimator draw, which keeps
    the full estimator unbiased even though the shift is random.
    """
    return -nu * z_hat_independent - m * n_blocks


@dataclass(frozen=True)
class SignedLogEstimate:
    """Sign and log of the absolute value of one estimator evaluation."""

    sign: int
    log_abs: float
    z_p_bar: float               # average of the Z_hat draws consumed
    n_negative_factors: int
    degenerate: bool = False     # a factor was exactly zero

    def __post_init__(self):
        if not self.degenerate:
            assert self.sign == (-1) ** (self.n_negative_factors % 2)


def assemble(config: BpConfig, chi: np.ndarray, z_values: np.ndarray,
             nu: float, a: float,
             z_independent: float | None = None) -> SignedLogEstimate:
    """Form the signed log-estimate from precomputed ``Z_hat`` draws.

    ``z_values`` are the inner draws in block-major order (``sum(chi)`` of
    them).  ``z_independent`` is only used as the ``z_p_bar`` fallback when
    the store holds no draws at all.
    """
    n_blocks = len(chi)
    m = config.poisson_mean
    log_abs = a + m * n_blocks
    z_values = np.asarray(z_values, dtype=float)
    if z_values.size:
        factors = (-nu * z_values - a) / (m * n_blocks)
        if np.any(factors == 0.0):
            return SignedLogEstimate(sign=1, log_abs=-np.inf,
                                     z_p_bar=float(np.mean(z_values)),
                                     n_negative_factors=0, degenerate=True)
        n_neg = int(np.sum(factors < 0))
        log_abs += float(np.sum(np.log(np.abs(factors))))
        z_p_bar = float(np.mean(z_values))
    else:
        n_neg = 0
        if z_independent is None:
            raise ValueError("no inner draws and no independent draw for z_p_bar")
        z_p_bar = float(z_independent)
    sign = -1 if n_neg % 2 else 1
    return SignedLogEstimate(sign=sign, log_abs=float(log_abs), z_p_bar=z_p_bar,
                             n_negative_factors=n_neg)


def estimate(config: BpConfig, store: BlockRandomStore, theta: np.ndarray,
             nu: float, a: float, provider: ZHatProvider) -> SignedLogEstimate:
    """Evaluate the estimator at ``theta`` for auxiliary ``nu`` and shift ``a``."""
    keys = store.draw_keys()
    z_values = z_hat_many(provider, theta, keys) if keys else np.empty(0)
    z_independent = None
    if not keys:
        z_independent = float(provider.z_hat(theta, store.lb_key()))
    return assemble(config, store.chi, z_values, nu, a,
                    z_independent=z_independent)
