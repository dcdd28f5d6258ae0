"""Chain diagnostics, persistence, and replicated-study orchestration.

Integrated autocorrelation time with the initial-monotone-sequence rule,
shortest (highest-density) intervals with sign weighting, chain summaries
that round-trip through JSON, chain CSV persistence, reproducibility
manifests, and a seeded, restartable RMSE study harness.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import json
import time
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .pmmh import Chain, sign_corrected_expectation
from .rng import stream

# ---------------------------------------------------------------------------
# autocorrelation
# ---------------------------------------------------------------------------

def _autocovariances(x: np.ndarray) -> np.ndarray:
    n = len(x)
    x = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conjugate(f), nfft)[:n].real / n
    return acov


def iact(series: np.ndarray) -> float:
    """Integrated autocorrelation time, 1 + 2 sum of autocorrelations.

    Truncated by the initial monotone sequence rule: sums of adjacent
    autocorrelation pairs are kept while positive and non-increasing.
    Never below 1; a constant series has IACT exactly 1.
    """
    series = np.asarray(series, dtype=float)
    if len(series) < 100:
        raise ValueError("need at least 100 samples")
    acov = _autocovariances(series)
    if acov[0] <= 0:
        return 1.0
    rho = acov / acov[0]
    total = -1.0  # pair sums double-count lag zero
    prev = np.inf
    for k in range(0, len(rho) - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)  # enforce monotone decrease
        total += 2.0 * pair
        prev = pair
    return float(max(total, 1.0))


def sign_adjusted_iact(psi_values: np.ndarray, signs: np.ndarray) -> float:
    """IACT of the signed series inflated by the sign-imbalance factor.

    The inefficiency of a sign-corrected average scales like
    IACT(psi * s) / (2 tau - 1)^2 with tau the positive-sign fraction.
    Infinite when the signs balance exactly.
    """
    signs = np.asarray(signs, dtype=float)
    tau = float(np.mean(signs > 0))
    base = iact(np.asarray(psi_values, dtype=float) * signs)
    denom = (2.0 * tau - 1.0) ** 2
    if denom == 0.0:
        return float("inf")
    return base / denom


def ess(series: np.ndarray) -> float:
    return len(series) / iact(series)


# ---------------------------------------------------------------------------
# highest-density interval
# ---------------------------------------------------------------------------

def hpd(samples: np.ndarray, mass: float = 0.95,
        signs: np.ndarray | None = None) -> tuple[float, float]:
    """Shortest contiguous interval holding the target probability mass.

    With signs, mass is measured by the signed empirical distribution
    (negative draws subtract), matching the sign-corrected expectation.
    """
    samples = np.asarray(samples, dtype=float)
    if len(samples) < 100:
        raise ValueError("need at least 100 samples")
    if not 0 < mass < 1:
        raise ValueError("mass must be in (0, 1)")
    order = np.argsort(samples)
    x = samples[order]
    if signs is None:
        w = np.ones(len(x))
    else:
        w = np.asarray(signs, dtype=float)[order]
    total = float(w.sum())
    if total <= 0:
        raise ValueError("signed mass is not positive; interval undefined")
    cum = np.concatenate([[0.0], np.cumsum(w)])  # cum[i] = weight of x[:i]
    need = mass * total
    best = (x[0], x[-1])
    best_len = x[-1] - x[0]
    j = 0
    for i in range(len(x)):
        if j < i:
            j = i
        while j < len(x) and cum[j + 1] - cum[i] < need:
            j += 1
        if j == len(x):
            break
        length = x[j] - x[i]
        if length < best_len:
            best_len = length
            best = (float(x[i]), float(x[j]))
    return best


# ---------------------------------------------------------------------------
# chain summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamSummary:
    name: str
    mean: float
    hpd_lower: float
    hpd_upper: float
    iact: float
    iact_sign_adjusted: float
    ess: float
    ess_per_sec: float


@dataclass(frozen=True)
class ChainSummary:
    params: tuple[ParamSummary, ...]
    negative_fraction: float        # min(f, 1 - f), symmetric
    acceptance_rate: float
    runtime_seconds: float
    n_iterations: int
    burn_in: int
    reliable: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ChainSummary":
        raw = json.loads(text)
        params = tuple(ParamSummary(**p) for p in raw.pop("params"))
        return cls(params=params, **raw)


def summarize(chain: Chain, param_names, burn_in: int = 0,
              mass: float = 0.95) -> ChainSummary:
    """Per-parameter summary; means match sign_corrected_expectation exactly."""
    thetas = chain.thetas[burn_in:]
    signs = chain.signs[burn_in:]
    n_kept = len(thetas)
    f_neg = float(np.mean(signs < 0))
    params = []
    reliable = True
    for i, name in enumerate(param_names):
        exp = sign_corrected_expectation(chain, lambda th, i=i: th[i],
                                         burn_in=burn_in)
        reliable = reliable and exp.reliable
        lo, hi = hpd(thetas[:, i], mass=mass, signs=signs)
        raw = iact(thetas[:, i])
        adj = sign_adjusted_iact(thetas[:, i], signs)
        n_eff = n_kept / adj if np.isfinite(adj) else 0.0
        per_sec = (n_eff / chain.runtime_seconds
                   if chain.runtime_seconds > 0 else float("nan"))
        params.append(ParamSummary(name=name, mean=exp.value, hpd_lower=lo,
                                   hpd_upper=hi, iact=raw,
                                   iact_sign_adjusted=adj, ess=n_eff,
                                   ess_per_sec=per_sec))
    return ChainSummary(params=tuple(params),
                        negative_fraction=min(f_neg, 1.0 - f_neg),
                        acceptance_rate=chain.acceptance_rate,
                        runtime_seconds=chain.runtime_seconds,
                        n_iterations=len(chain.thetas), burn_in=burn_in,
                        reliable=reliable)


# ---------------------------------------------------------------------------
# chain persistence
# ---------------------------------------------------------------------------

def save_chain_csv(path, chain: Chain, param_names) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "sign", "accepted", "nu",
                         "log_abs_like"] + [f"theta_{n}" for n in param_names])
        for t in range(len(chain.thetas)):
            writer.writerow(
                [t, int(chain.signs[t]), int(chain.accepted[t]),
                 f"{chain.nus[t]:.17g}", f"{chain.log_abs_like[t]:.17g}"]
                + [f"{v:.17g}" for v in chain.thetas[t]])


def load_chain_csv(path) -> tuple[Chain, list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    prefix = ["iteration", "sign", "accepted", "nu", "log_abs_like"]
    if header[:5] != prefix:
        raise ValueError(f"not a chain CSV: {path}")
    names = [h.removeprefix("theta_") for h in header[5:]]
    data = np.array(rows, dtype=float)
    signs = data[:, 1].astype(int)
    accepted = data[:, 2].astype(bool)
    chain = Chain(thetas=data[:, 5:], signs=signs, accepted=accepted,
                  nus=data[:, 3], log_abs_like=data[:, 4],
                  runtime_seconds=0.0)
    return chain, names


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, command: str, config: dict, seeds: dict,
                   input_files=(), output_files=()) -> None:
    """Everything needed to re-run bit-identically: config, seeds, hashes."""
    manifest = {
        "command": command,
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): _sha256(p) for p in input_files},
        "outputs": [str(p) for p in output_files],
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# RMSE studies
# ---------------------------------------------------------------------------

SCENARIOS: dict = {}


def register_scenario(name: str, fn=None):
    """Register ``fn(seed, **options) -> {method: {param: (estimate, truth)}}``."""
    if fn is None:
        def deco(f):
            SCENARIOS[name] = f
            return f
        return deco
    SCENARIOS[name] = fn
    return fn


@dataclass(frozen=True)
class RmseRow:
    method: str
    param: str
    rmse: float
    rmse_se: float
    n_ok: int


@dataclass(frozen=True)
class RmseTable:
    rows: tuple[RmseRow, ...]
    failures: tuple[tuple[int, str], ...]

    def lookup(self, method: str, param: str) -> RmseRow:
        for row in self.rows:
            if row.method == method and row.param == param:
                return row
        raise KeyError((method, param))


def _run_replicate(args):
    name, rep, seed, options = args
    fn = SCENARIOS[name]
    rep_seed = int(stream(seed, 977, rep).integers(1 << 62))
    try:
        return rep, fn(rep_seed, **options), None
    except Exception as exc:  # individual failures are data, not fatal
        return rep, None, f"{type(exc).__name__}: {exc}"


def rmse_study(scenario: str, n_replicates: int, seed: int,
               options: dict | None = None, n_workers: int = 1,
               progress=None) -> RmseTable:
    """Replicated estimator comparison; per-method, per-parameter RMSE.

    Replicates own independent seed lineages, can run in worker processes,
    and are aggregated in replicate order, so the result does not depend on
    scheduling.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; "
                         f"registered: {sorted(SCENARIOS)}")
    options = options or {}
    jobs = [(scenario, rep, seed, options) for rep in range(n_replicates)]
    if n_workers > 1:
        with concurrent.futures.ProcessPoolExecutor(n_workers) as pool:
            raw = list(pool.map(_run_replicate, jobs))
    else:
        raw = []
        for job in jobs:
            raw.append(_run_replicate(job))
            if progress:
                progress(len(raw), n_replicates)
    raw.sort(key=lambda r: r[0])

    errors: dict[str, dict[str, list[float]]] = {}
    failures = []
    for rep, result, err in raw:
        if err is not None:
            failures.append((rep, err))
            warnings.warn(f"replicate {rep} failed: {err}")
            continue
        for method, params in result.items():
            for param, (estimate, truth) in params.items():
                errors.setdefault(method, {}).setdefault(param, []).append(
                    (float(estimate) - float(truth)) ** 2)
    rows = []
    for method in sorted(errors):
        for param in sorted(errors[method]):
            sq = np.array(errors[method][param])
            rmse = float(np.sqrt(sq.mean()))
            # delta method: se(sqrt(m)) = se(m) / (2 sqrt(m))
            se_m = sq.std(ddof=1) / np.sqrt(len(sq)) if len(sq) > 1 else np.nan
            rmse_se = float(se_m / (2 * rmse)) if rmse > 0 else 0.0
            rows.append(RmseRow(method=method, param=param, rmse=rmse,
                                rmse_se=rmse_se, n_ok=len(sq)))
    return RmseTable(rows=tuple(rows), failures=tuple(failures))


def save_rmse_csv(path, table: RmseTable) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "param", "rmse", "rmse_se", "n_ok"])
        for row in table.rows:
            writer.writerow([row.method, row.param, f"{row.rmse:.10g}",
                             f"{row.rmse_se:.10g}", row.n_ok])
