"""Command-line front end: train, forecast, export, synth.

Run configuration comes from flags plus an optional key=value config file
('#' comments); flags override file values and the fully resolved
configuration is echoed into the output directory.  Metric records are
line-delimited JSON and contain only deterministic fields; wall-clock
timings go to a separate timing log so metric logs stay bit-reproducible.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
degeneracy.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    Checkpoint,
    CheckpointVersionError,
    DataFormatError,
    generate_bouncing_balls,
    load_checkpoint,
    load_count_matrix,
    save_checkpoint,
    save_count_matrix,
)
from .distributions import ParameterDomainError
from .evaluate import forecast_next, forecast_next_monte_carlo, make_holdout, \
    mean_precision_recall, top_m_precision_recall
from .gibbs import NumericDegeneracyError, gibbs_sweep, init_chain
from .model import CountMatrix, HyperParams, generate, project_topic
from .model import matmul as matmul_det
from .rng import RngStream
from .sgmcmc import SgmcmcState, init_sgmcmc_state, sgmcmc_step


class ConfigError(ValueError):
    pass


def read_config_file(path) -> dict[str, str]:
    values = {}
    with open(path) as fh:
        for i, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{i}: expected key=value, got {raw.rstrip()!r}")
            key, val = line.split("=", 1)
            values[key.strip()] = val.strip()
    return values


def _apply_config_file(args: argparse.Namespace) -> None:
    """File values fill in only flags the user left at their defaults."""
    if not getattr(args, "config", None):
        return
    file_values = read_config_file(args.config)
    actions = {a.dest: a for a in args._subparser._actions}
    for key, val in file_values.items():
        dest = key.replace("-", "_")
        if dest not in actions or dest.startswith("_"):
            raise ConfigError(f"unknown config key {key!r}")
        action = actions[dest]
        if getattr(args, dest) == action.default:
            if isinstance(action.default, bool):
                setattr(args, dest, val.lower() in ("1", "true", "yes"))
            elif action.type is not None:
                setattr(args, dest, action.type(val))
            else:
                setattr(args, dest, val)


def echo_config(args: argparse.Namespace, outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "config.txt", "w") as fh:
        fh.write(f"version={__version__}\n")
        for key in sorted(vars(args)):
            if key.startswith("_") or key == "func":
                continue
            fh.write(f"{key}={getattr(args, key)}\n")


def default_outdir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("DPGDS_OUT", "dpgds_out"))


class MetricLog:
    def __init__(self, outdir: Path):
        self.metrics = open(outdir / "metrics.log", "w")
        self.timing = open(outdir / "timing.log", "w")
        self._t0 = time.monotonic()

    def record(self, iteration: int, metric: str, value) -> None:
        self.metrics.write(json.dumps(
            {"iteration": iteration, "metric": metric, "value": value}) + "\n")
        self.timing.write(json.dumps(
            {"iteration": iteration, "metric": metric,
             "seconds": time.monotonic() - self._t0}) + "\n")

    def close(self):
        self.metrics.close()
        self.timing.close()


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    outdir = default_outdir(args)
    kind = "binary" if args.binary else "count"
    X_full = load_count_matrix(args.data, format=args.data_format, kind=kind)
    K = [int(k) for k in str(args.layers).split(",")]
    hyper = HyperParams(L=len(K), K=K, V=X_full.V, tau0=args.tau0,
                        gamma0=args.gamma0, eta=args.eta0, eps0=args.eps0,
                        tie_delta=not args.per_t_delta,
                        observation_link="bernoulli-poisson" if args.binary
                        else "poisson-count")
    if args.iters is not None:
        burnin = args.iters * 2 // 5
        collect = args.iters - burnin
    else:
        burnin, collect = args.burnin, args.collect

    rng = RngStream(args.seed, stream_id=0)
    split = None
    X = X_full
    if args.holdout_fraction is not None:
        split = make_holdout(X_full, args.holdout_fraction, args.holdout_final,
                             RngStream(args.seed, stream_id=1))
        X = split.train

    top_m = min(args.top_m, X.V)
    echo_config(args, outdir)
    log = MetricLog(outdir)

    if args.resume:
        ckpt = load_checkpoint(args.resume)
        hyper, g = ckpt.hyper, ckpt.globals_
        lat = ckpt.latents
        rng.state = ckpt.rng_cursor["train"]
        start_iter = ckpt.iteration
        state = None
        if args.engine == "sgmcmc":
            if ckpt.engine_state is None:
                raise ConfigError("checkpoint lacks sgmcmc engine state")
            state = SgmcmcState.from_dict(ckpt.engine_state)
    else:
        g, lat = init_chain(X, hyper, rng)
        start_iter = 0
        state = init_sgmcmc_state(hyper, rng) if args.engine == "sgmcmc" else None
    total = burnin + collect
    rate_sum = np.zeros((X.V, X.T))
    n_collected = 0

    for it in range(start_iter + 1, total + 1):
        if args.engine == "gibbs":
            gibbs_sweep(X, hyper, g, lat, rng)
        else:
            sgmcmc_step(X, hyper, g, lat, state, rng, sub_T=args.sub_t)
        if it > burnin:
            rates = matmul_det(g.Phi[0], lat.Theta[0])
            rates = rates * (float(g.delta) if g.delta.ndim == 0 else g.delta[None, :])
            rate_sum += rates
            n_collected += 1
        if split is not None and n_collected and it % args.eval_every == 0:
            mp, mr = mean_precision_recall(rate_sum / n_collected, split, M=top_m)
            log.record(it, "mp", mp)
            log.record(it, "mr", mr)
        if args.checkpoint_every and it % args.checkpoint_every == 0 and it < total:
            _write_checkpoint(outdir / f"checkpoint_{it}.json",
                              hyper, g, lat, rng, it, state)

    _write_checkpoint(outdir / "checkpoint.json", hyper, g, lat, rng, total, state)
    if n_collected:
        np.save(outdir / "posterior_mean_rates.npy", rate_sum / n_collected)
        if split is not None:
            mp, mr = mean_precision_recall(rate_sum / n_collected, split, M=top_m)
            log.record(total, "final_mp", mp)
            log.record(total, "final_mr", mr)
    log.close()
    return 0


def _write_checkpoint(path, hyper, g, lat, rng, iteration, state=None):
    save_checkpoint(Checkpoint(hyper=hyper, globals_=g, latents=lat,
                               rng_cursor={"train": rng.state},
                               iteration=iteration,
                               engine_state=None if state is None
                               else state.to_dict()), path)


# ---------------------------------------------------------------------------
# forecast


def cmd_forecast(args) -> int:
    outdir = default_outdir(args)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.latents is None:
        raise ConfigError("checkpoint carries no latent state to forecast from")
    echo_config(args, outdir)
    if args.mode == "expectation":
        rates = forecast_next(ckpt.globals_, ckpt.latents, args.horizon)
    else:
        rates = forecast_next_monte_carlo(
            ckpt.globals_, ckpt.latents, args.horizon, args.mc_draws,
            RngStream(args.seed, stream_id=2), tau0=ckpt.hyper.tau0)
    with open(outdir / "forecast.csv", "w") as fh:
        fh.write(",".join(f"h{h + 1}" for h in range(args.horizon)) + "\n")
        for row in rates:
            fh.write(",".join(repr(float(c)) for c in row) + "\n")
    if args.truth:
        truth = load_count_matrix(args.truth, format=args.data_format)
        pp, _ = top_m_precision_recall(rates[:, 0], truth.entries[:, 0], args.top_m)
        with open(outdir / "pp.txt", "w") as fh:
            fh.write(f"{pp}\n")
        print(f"PP={pp}")
    return 0


# ---------------------------------------------------------------------------
# export


def cmd_export(args) -> int:
    outdir = default_outdir(args)
    ckpt = load_checkpoint(args.checkpoint)
    g, hyper = ckpt.globals_, ckpt.hyper
    echo_config(args, outdir)

    # per-topic projected term lists, thresholded at 1% of the top element
    with open(outdir / "topics.txt", "w") as fh:
        for l in range(1, hyper.L + 1):
            for k in range(1, hyper.K[l - 1] + 1):
                vec = project_topic(g, l, k)
                cut = 0.01 * vec.max()
                terms = [(v, vec[v]) for v in np.argsort(-vec) if vec[v] > cut]
                body = " ".join(f"{v}:{w:.6g}" for v, w in terms)
                fh.write(f"layer={l} topic={k} {body}\n")

    if ckpt.latents is not None:
        with open(outdir / "trajectories.txt", "w") as fh:
            for l in range(1, hyper.L + 1):
                for k in range(hyper.K[l - 1]):
                    vals = " ".join(repr(float(x))
                                    for x in ckpt.latents.Theta[l - 1][k])
                    fh.write(f"layer={l} topic={k + 1} {vals}\n")

    with open(outdir / "transitions.txt", "w") as fh:
        for l in range(1, hyper.L + 1):
            weights = g.nu[l - 1]
            top = np.argsort(-weights)[:args.top_topics]
            fh.write(f"layer={l} topics={','.join(str(k + 1) for k in top)}\n")
            sub = g.Pi[l - 1][np.ix_(top, top)]
            for row in sub:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")
    return 0


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    outdir = default_outdir(args)
    echo_config(args, outdir)
    rng = RngStream(args.seed, stream_id=3)
    if args.kind == "balls":
        seqs = generate_bouncing_balls(args.n, args.size, args.t, args.seqs, rng,
                                       collisions=not args.no_collisions)
        for i, X in enumerate(seqs):
            save_count_matrix(X, outdir / f"balls_{i}.csv", format=args.format)
    else:
        K = [int(k) for k in str(args.layers).split(",")]
        hyper = HyperParams(L=len(K), K=K, V=args.v, tau0=args.tau0,
                            gamma0=args.gamma0, eta=args.eta0, eps0=args.eps0)
        _, _, X = generate(hyper, args.t, rng)
        save_count_matrix(X, outdir / "synthetic.csv", format=args.format)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpgds")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--out", help="output directory (env DPGDS_OUT default)")
        p.add_argument("--seed", type=int, default=0)

    p_train = sub.add_parser("train")
    common(p_train)
    p_train.add_argument("--engine", choices=["gibbs", "sgmcmc"], default="gibbs")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--data-format", choices=["dense-csv", "sparse-triplet"],
                         default="dense-csv")
    p_train.add_argument("--layers", default="5", help="comma-separated widths")
    p_train.add_argument("--tau0", type=float, default=1.0)
    p_train.add_argument("--gamma0", type=float, default=100.0)
    p_train.add_argument("--eta0", type=float, default=0.1)
    p_train.add_argument("--eps0", type=float, default=0.1)
    p_train.add_argument("--binary", action="store_true")
    p_train.add_argument("--per-t-delta", action="store_true")
    p_train.add_argument("--burnin", type=int, default=2000)
    p_train.add_argument("--collect", type=int, default=3000)
    p_train.add_argument("--iters", type=int, default=None,
                         help="total sweeps; overrides --burnin/--collect (2:3 split)")
    p_train.add_argument("--sub-t", type=int, default=None,
                         help="sgmcmc minibatch window length")
    p_train.add_argument("--holdout-fraction", type=float, default=None)
    p_train.add_argument("--holdout-final", action="store_true")
    p_train.add_argument("--top-m", type=int, default=50)
    p_train.add_argument("--eval-every", type=int, default=100)
    p_train.add_argument("--checkpoint-every", type=int, default=0)
    p_train.add_argument("--resume", default=None)
    p_train.set_defaults(func=cmd_train, _subparser=p_train)

    p_fc = sub.add_parser("forecast")
    common(p_fc)
    p_fc.add_argument("--checkpoint", required=True)
    p_fc.add_argument("--horizon", type=int, default=1)
    p_fc.add_argument("--mode", choices=["expectation", "mc"], default="expectation")
    p_fc.add_argument("--mc-draws", type=int, default=1000)
    p_fc.add_argument("--truth", default=None)
    p_fc.add_argument("--data-format", choices=["dense-csv", "sparse-triplet"],
                      default="dense-csv")
    p_fc.add_argument("--top-m", type=int, default=50)
    p_fc.set_defaults(func=cmd_forecast, _subparser=p_fc)

    p_ex = sub.add_parser("export")
    common(p_ex)
    p_ex.add_argument("--checkpoint", required=True)
    p_ex.add_argument("--top-topics", type=int, default=10)
    p_ex.set_defaults(func=cmd_export, _subparser=p_ex)

    p_sy = sub.add_parser("synth")
    common(p_sy)
    p_sy.add_argument("kind", choices=["balls", "model"])
    p_sy.add_argument("--n", type=int, default=3)
    p_sy.add_argument("--size", type=int, default=30)
    p_sy.add_argument("--t", type=int, default=100)
    p_sy.add_argument("--seqs", type=int, default=1)
    p_sy.add_argument("--no-collisions", action="store_true")
    p_sy.add_argument("--layers", default="5")
    p_sy.add_argument("--v", type=int, default=30)
    p_sy.add_argument("--tau0", type=float, default=1.0)
    p_sy.add_argument("--gamma0", type=float, default=100.0)
    p_sy.add_argument("--eta0", type=float, default=0.1)
    p_sy.add_argument("--eps0", type=float, default=0.1)
    p_sy.add_argument("--format", choices=["dense-csv", "sparse-triplet"],
                      default="dense-csv")
    p_sy.set_defaults(func=cmd_synth, _subparser=p_sy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config_file(args)
        return args.func(args)
    except (ConfigError, ParameterDomainError, CheckpointVersionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericDegeneracyError as exc:
        print(f"numeric degeneracy: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
