"""Command-line interface.

Every run that produces files also writes a manifest (config, seeds, input
hashes) sufficient to re-run bit-identically.  Exit codes: 0 success,
2 configuration error, 3 numerical failure, 4 unreliable sign balance.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, ising, kent, tuning
from .bp_core import BpConfig
from .pmmh import ProposalConfig, run_chain
from .rng import stream

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_UNRELIABLE = 4


class ConfigError(Exception):
    pass


def _args_config(args) -> dict:
    return {k: v for k, v in vars(args).items()
            if isinstance(v, (str, int, float, bool)) or v is None}


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _maybe_figures(args) -> bool:
    return not getattr(args, "no_figures", False)


def _write_summary(out: Path, summary) -> None:
    (out / "summary.json").write_text(summary.to_json() + "\n")


def _chain_outputs(args, chain, names, command, config, seeds,
                   inputs=(), oracle=None) -> int:
    out = _out_dir(args)
    diagnostics.save_chain_csv(out / "chain.csv", chain, names)
    summary = diagnostics.summarize(chain, names, burn_in=args.burn_in)
    _write_summary(out, summary)
    outputs = [out / "chain.csv", out / "summary.json"]
    if _maybe_figures(args):
        from . import report

        report.render_trace(chain, names, out / "trace.png",
                            burn_in=args.burn_in)
        report.render_posterior(chain, names, out / "posterior.png",
                                burn_in=args.burn_in, oracle=oracle)
        outputs += [out / "trace.png", out / "posterior.png"]
    diagnostics.write_manifest(out / "manifest.json", command, config, seeds,
                               input_files=inputs, output_files=outputs)
    print(summary.to_json())
    if not summary.reliable:
        print("warning: sign balance too poor for reliable estimates",
              file=sys.stderr)
        return EXIT_UNRELIABLE
    return EXIT_OK


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_tune(args) -> int:
    out = _out_dir(args)
    rec = tuning.recommend(args.gamma_max)
    sweep = tuning.ct_sweep(gamma=args.gamma_max if args.gamma_max > 0 else 1.0,
                            rho=args.rho if args.rho is not None else rec.rho,
                            M=args.M if args.M is not None else rec.M_opt,
                            lam_grid=np.arange(args.lam_min, args.lam_max + 1,
                                               args.lam_step))
    with open(out / "sweep.csv", "w") as fh:
        fh.write("lam,M,gamma,tau,sigma2,ct\n")
        for row in sweep:
            fh.write(f"{row['lam']},{row['M']},{row['gamma']:.10g},"
                     f"{row['tau']:.10g},{row['sigma2']:.10g},"
                     f"{row['ct']:.10g}\n")
    rec_dict = {"lambda": rec.lam, "m": rec.m, "rho": rec.rho,
                "M_opt": rec.M_opt, "gamma_max": rec.gamma_max,
                "low_variance_lambda": rec.low_variance_lambda}
    (out / "recommendation.json").write_text(
        json.dumps(rec_dict, indent=2) + "\n")
    outputs = [out / "sweep.csv", out / "recommendation.json"]
    if _maybe_figures(args):
        from . import report

        report.render_ct_sweep(sweep, out / "ct_sweep.png")
        outputs.append(out / "ct_sweep.png")
    diagnostics.write_manifest(out / "manifest.json", "tune",
                               _args_config(args), {}, output_files=outputs)
    print(json.dumps(rec_dict, indent=2))
    return EXIT_OK


def cmd_ising_simulate(args) -> int:
    lattice = ising.perfect_sample(args.theta, args.L, (args.seed, 601))
    out = _out_dir(args)
    path = out / "lattice.txt"
    ising.save_lattice(path, lattice)
    diagnostics.write_manifest(
        out / "manifest.json", "ising-simulate",
        {"L": args.L, "theta": args.theta}, {"seed": args.seed},
        output_files=[path])
    print(f"wrote {path} (S = {lattice.cached_S})")
    return EXIT_OK


def cmd_ising_fit(args) -> int:
    lattice = ising.load_lattice(args.data)
    config = {"data": str(args.data), "method": args.method,
              "n_blocks": args.n_blocks, "poisson_mean": args.poisson_mean,
              "n_iter": args.n_iter, "burn_in": args.burn_in,
              "ais_temps": args.ais_temps,
              "ais_particles": args.ais_particles, "step": args.step}
    if args.method == "exchange":
        thetas = ising.exchange_chain(lattice.cached_S, lattice.L,
                                      args.n_iter, seed=args.seed,
                                      step=args.step)
        from .pmmh import Chain

        n = len(thetas)
        chain = Chain(thetas=thetas[:, None], signs=np.ones(n, dtype=int),
                      accepted=np.ones(n, dtype=bool), nus=np.zeros(n),
                      log_abs_like=np.zeros(n), runtime_seconds=0.0)
        return _chain_outputs(args, chain, ["theta"], "ising-fit", config,
                              {"seed": args.seed}, inputs=[args.data])
    model = ising.IsingModel(lattice, ising.AisConfig(
        n_temps=args.ais_temps, n_particles=args.ais_particles))
    bp = BpConfig(n_blocks=args.n_blocks, poisson_mean=args.poisson_mean)
    prop = ProposalConfig(kind="adaptive_rw", step=args.step,
                          target_accept=0.44)
    estimator = "bp" if args.method == "bp" else "bias_corrected"
    chain = run_chain(model, bp, prop, n_iter=args.n_iter, seed=args.seed,
                      init_theta=np.array([args.init_theta]),
                      estimator=estimator, n_bc_draws=args.bc_draws)
    oracle = (ising.exact_posterior(lattice.cached_S, lattice.L)
              if lattice.L <= 4 else None)
    return _chain_outputs(args, chain, ["theta"], "ising-fit", config,
                          {"seed": args.seed}, inputs=[args.data],
                          oracle=oracle)


def cmd_ising_oracle(args) -> int:
    lattice = ising.load_lattice(args.data)
    if lattice.L > 4:
        raise ConfigError("exact enumeration requires L <= 4")
    grid, dens = ising.exact_posterior(lattice.cached_S, lattice.L)
    mean = float(np.trapezoid(grid * dens, grid))
    out = _out_dir(args)
    with open(out / "posterior.csv", "w") as fh:
        fh.write("theta,density\n")
        for g, d in zip(grid, dens):
            fh.write(f"{g:.10g},{d:.10g}\n")
    result = {"posterior_mean": mean, "S_obs": lattice.cached_S,
              "L": lattice.L}
    (out / "oracle.json").write_text(json.dumps(result, indent=2) + "\n")
    diagnostics.write_manifest(out / "manifest.json", "ising-oracle",
                               {"data": str(args.data)}, {},
                               input_files=[args.data],
                               output_files=[out / "posterior.csv",
                                             out / "oracle.json"])
    print(json.dumps(result, indent=2))
    return EXIT_OK


def cmd_kent_simulate(args) -> int:
    params = kent.KentParams(kappa=args.kappa, beta=args.beta, psi=args.psi,
                             alpha=args.alpha, eta=args.eta)
    data = kent.sample(params, args.n, stream(args.seed, 701))
    out = _out_dir(args)
    path = out / "data.csv"
    kent.save_spherical_csv(path, data)
    outputs = [path]
    if _maybe_figures(args):
        from . import report

        report.render_sphere(data, out / "data.png")
        outputs.append(out / "data.png")
    diagnostics.write_manifest(out / "manifest.json", "kent-simulate",
                               {"n": args.n,
                                "params": list(params.as_vector())},
                               {"seed": args.seed}, output_files=outputs)
    print(f"wrote {path}")
    return EXIT_OK


_KENT_NAMES = ["kappa", "beta", "psi", "alpha", "eta"]


def cmd_kent_fit(args) -> int:
    data = kent.load_spherical_csv(args.data)
    config = {"data": str(args.data), "method": args.method,
              "n_iter": args.n_iter, "n_blocks": args.n_blocks,
              "burn_in": args.burn_in}
    if args.method in ("moment", "mle"):
        fn = kent.moment_estimate if args.method == "moment" else kent.mle_estimate
        params = fn(data)
        out = _out_dir(args)
        result = dict(zip(_KENT_NAMES, params.as_vector()))
        (out / "estimate.json").write_text(json.dumps(result, indent=2) + "\n")
        diagnostics.write_manifest(out / "manifest.json", "kent-fit", config,
                                   {}, input_files=[args.data],
                                   output_files=[out / "estimate.json"])
        print(json.dumps(result, indent=2))
        return EXIT_OK
    chain = kent.fit_pmmh(data, n_blocks=args.n_blocks, n_iter=args.n_iter,
                          seed=args.seed, step=args.step)
    return _chain_outputs(args, chain, _KENT_NAMES, "kent-fit", config,
                          {"seed": args.seed}, inputs=[args.data])


def cmd_kent_bootstrap(args) -> int:
    data = kent.load_spherical_csv(args.data)
    fn = kent.moment_estimate if args.method == "moment" else kent.mle_estimate
    rng = stream(args.seed, 711)
    estimates = np.empty((args.reps, 5))
    for b in range(args.reps):
        idx = rng.integers(0, len(data), size=len(data))
        estimates[b] = fn(data.subset(idx)).as_vector()
    point = fn(data).as_vector()
    lo = np.percentile(estimates, 2.5, axis=0)
    hi = np.percentile(estimates, 97.5, axis=0)
    result = {name: {"estimate": float(point[i]), "ci_lower": float(lo[i]),
                     "ci_upper": float(hi[i])}
              for i, name in enumerate(_KENT_NAMES)}
    out = _out_dir(args)
    (out / "bootstrap.json").write_text(json.dumps(result, indent=2) + "\n")
    diagnostics.write_manifest(out / "manifest.json", "kent-bootstrap",
                               {"data": str(args.data), "method": args.method,
                                "reps": args.reps}, {"seed": args.seed},
                               input_files=[args.data],
                               output_files=[out / "bootstrap.json"])
    print(json.dumps(result, indent=2))
    return EXIT_OK


def cmd_kent_classify(args) -> int:
    data = kent.load_spherical_csv(args.data)
    if data.groups is None:
        raise ConfigError("classification needs a 'group' column")
    rng = stream(args.seed, 721)
    fold_of = np.empty(len(data), dtype=int)
    for g in (1, 2):
        idx = np.flatnonzero(data.groups == g)
        perm = rng.permutation(idx)
        for i, j in enumerate(perm):
            fold_of[j] = i % args.folds
    accs = []
    for fold in range(args.folds):
        test_mask = fold_of == fold
        fits = {}
        for g in (1, 2):
            train = data.subset((data.groups == g) & ~test_mask)
            chain = kent.fit_pmmh(train, n_iter=args.n_iter,
                                  seed=args.seed * 1000 + fold * 10 + g)
            keep = slice(args.burn_in, None)
            fits[g] = (chain.thetas[keep], chain.signs[keep])
        correct = 0
        test_idx = np.flatnonzero(test_mask)
        for j in test_idx:
            pred = kent.classify(data.points[j], fits[1], fits[2],
                                 (args.seed, fold, int(j)))
            correct += int(pred == data.groups[j])
        accs.append(correct / max(len(test_idx), 1))
        print(f"fold {fold}: accuracy {accs[-1]:.3f}")
    result = {"fold_accuracy": accs, "mean_accuracy": float(np.mean(accs)),
              "accuracy_se": float(np.std(accs, ddof=1) / np.sqrt(len(accs)))
              if len(accs) > 1 else None}
    out = _out_dir(args)
    (out / "classification.json").write_text(
        json.dumps(result, indent=2) + "\n")
    diagnostics.write_manifest(out / "manifest.json", "kent-classify",
                               {"data": str(args.data), "folds": args.folds,
                                "n_iter": args.n_iter, "burn_in": args.burn_in},
                               {"seed": args.seed}, input_files=[args.data],
                               output_files=[out / "classification.json"])
    print(json.dumps(result, indent=2))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    chain, names = diagnostics.load_chain_csv(args.chain)
    summary = diagnostics.summarize(chain, names, burn_in=args.burn_in)
    print(summary.to_json())
    if args.out is not None:
        Path(args.out).write_text(summary.to_json() + "\n")
    return EXIT_OK if summary.reliable else EXIT_UNRELIABLE


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common_fit(p):
    p.add_argument("--n-iter", type=int, default=20000)
    p.add_argument("--burn-in", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--no-figures", action="store_true",
                   help="skip PNG rendering, keep CSV/JSON only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="signedbp",
        description="Signed block pseudo-marginal MCMC for doubly "
                    "intractable models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tune", help="hyperparameter sweep + recommendation")
    p.add_argument("--gamma-max", type=float, required=True)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--M", type=int, default=None)
    p.add_argument("--lam-min", type=int, default=10)
    p.add_argument("--lam-max", type=int, default=500)
    p.add_argument("--lam-step", type=int, default=5)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("ising-simulate", help="perfect-sample a lattice")
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(fn=cmd_ising_simulate)

    p = sub.add_parser("ising-fit", help="fit theta to a lattice")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["bp", "bias-corrected", "exchange"],
                   default="bp")
    p.add_argument("--n-blocks", type=int, default=10)
    p.add_argument("--poisson-mean", type=float, default=1.0)
    p.add_argument("--ais-temps", type=int, default=1000)
    p.add_argument("--ais-particles", type=int, default=100)
    p.add_argument("--bc-draws", type=int, default=100)
    p.add_argument("--step", type=float, default=0.07)
    p.add_argument("--init-theta", type=float, default=0.5)
    _add_common_fit(p)
    p.set_defaults(fn=cmd_ising_fit)

    p = sub.add_parser("ising-oracle", help="exact posterior for L <= 4")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(fn=cmd_ising_oracle)

    p = sub.add_parser("kent-simulate", help="draw spherical data")
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--psi", type=float, default=np.pi / 2)
    p.add_argument("--alpha", type=float, default=np.pi / 2)
    p.add_argument("--eta", type=float, default=np.pi / 2)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_kent_simulate)

    p = sub.add_parser("kent-fit", help="fit the spherical model")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["bayes", "moment", "mle"],
                   default="bayes")
    p.add_argument("--n-blocks", type=int, default=20)
    p.add_argument("--step", type=float, default=0.12)
    _add_common_fit(p)
    p.set_defaults(fn=cmd_kent_fit)

    p = sub.add_parser("kent-bootstrap", help="bootstrap CIs for a baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["moment", "mle"], default="moment")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(fn=cmd_kent_bootstrap)

    p = sub.add_parser("kent-classify", help="k-fold CV classification")
    p.add_argument("--data", required=True)
    p.add_argument("--folds", type=int, default=5)
    _add_common_fit(p)
    p.set_defaults(fn=cmd_kent_classify)

    p = sub.add_parser("diagnose", help="summarise a saved chain")
    p.add_argument("chain")
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_diagnose)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ising.CoalescenceError, FloatingPointError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
