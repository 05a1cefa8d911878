"""
Command-line entry point.

    projmon datagen --kind regression63 --seed 1 --out d.csv
    projmon monitor --input d.csv --m 500 --v 1,0,0,0,0 --out run/
    projmon critval --gamma 0 --delta 0.001 --alpha 0.05
    projmon experiment63 --seed 3 --out exp/
    projmon covest --input d.csv --threshold lasso
    projmon portfolio --kind minvar --input returns.csv --threshold lasso

Every subcommand accepts ``--config FILE`` with ``key = value`` lines; keys
are flag names without the leading dashes and explicit flags win. Exit
codes: 0 success (a signal is a result, not a failure), 1 I/O error,
2 invalid input or failed computation.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import covest, critval, datagen, deepmon, projection
from .core import OPEN_END, BoundaryConfig, MonitorError, ProjectionVector, read_csv, write_csv
from .detector import PROJECTION, RESIDUAL, MonitorConfig, run_stream
from .lrv import LrvConfig

EXIT_OK, EXIT_IO, EXIT_INVALID = 0, 1, 2


class CliError(MonitorError):
    pass


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------


def _horizon(text: str):
    if text.strip().lower() in ("open", "inf", "none"):
        return OPEN_END
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("horizon must be 'open' or a positive number")
    return value


def _floats(text: str) -> list[float]:
    try:
        return [float(s) for s in text.replace(";", ",").split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def read_config(path: str) -> dict[str, str]:
    """Plain ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(parser: argparse.ArgumentParser, cfg: dict[str, str]) -> None:
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config", "command")}
    unknown = sorted(set(cfg) - set(actions))
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(unknown)}")
    defaults = {}
    for key, raw in cfg.items():
        action = actions[key]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            value = _bool(raw)
        else:
            try:
                value = action.type(raw) if action.type else raw
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise CliError(f"config key {key}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise CliError(f"config key {key}: {value!r} not in {sorted(action.choices)}")
        defaults[key] = value
        action.required = False  # the config file supplies it
    parser.set_defaults(**defaults)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="root seed for every random draw")
    p.add_argument("--out", default=None, help="output file or directory")
    p.add_argument("--format", choices=("csv", "jsonl"), default="jsonl", help="trajectory file format")
    p.add_argument("--config", default=None, help="key = value file merged under explicit flags")


def _boundary_flags(p: argparse.ArgumentParser, horizon: bool = True) -> None:
    p.add_argument("--gamma", type=float, default=0.25)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=0.05)
    if horizon:
        p.add_argument("--horizon", "--T", dest="horizon", type=_horizon, default=OPEN_END, help="'open' or T")
    p.add_argument("--weighting", choices=("paper", "flat"), default="paper")
    p.add_argument("--c", type=float, default=None, help="critical value override")


def _threshold_flags(p: argparse.ArgumentParser, default: Optional[str] = "lasso") -> None:
    p.add_argument("--threshold", choices=("none", "hard", "lasso", "scad"), default=default or "none")
    p.add_argument("--t", type=float, default=None, help="fixed threshold (default: rate rule)")
    p.add_argument("--c-th", "--Cth", dest="c_th", type=float, default=None, help="rate-rule constant; omit to select by sample splitting")
    p.add_argument("--q", type=float, default=8.0)
    p.add_argument("--eps0", type=float, default=1e-3, help="eigenvalue floor for the precision estimate")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="projmon", description="Sequential monitoring of projected second moments")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["monitor"] = sub.add_parser("monitor", help="monitor a CSV stream")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--m", type=int, required=True, help="training length")
    _boundary_flags(p)
    p.add_argument("--lrv-rho", "--rho", dest="lrv_rho", type=float, default=0.4, help="block-length exponent for the long-run variance")
    p.add_argument("--lrv-b", type=int, default=None, help="fixed block length for the long-run variance")
    p.add_argument("--v", type=_floats, default=None, help="inline projection vector")
    p.add_argument("--v-file", default=None, help="JSON projection vector")
    p.add_argument("--v-estimator", choices=("minvar", "target"), default=None, help="estimate v from the training block")
    p.add_argument("--mu0", type=float, default=None)
    p.add_argument("--support", type=_ints, default=None, help="0-based support restriction for an estimated v")
    p.add_argument("--residual", action="store_true", help="monitor squared residuals z - v'y")
    _threshold_flags(p)

    p = subs["experiment63"] = sub.add_parser("experiment63", help="regression scenario with rollover retraining")
    _common(p)
    p.add_argument("--m", type=int, default=1000)
    p.add_argument("--n", type=int, default=50_000)
    _boundary_flags(p, horizon=False)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--val-split", type=float, default=0.2)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--no-retrain", action="store_true")
    p.add_argument("--seeds", type=int, default=1, help="sweep seeds seed, seed+1, ...")
    p.add_argument("--noise-sd", action="store_true", help="read the noise parameters as standard deviations")
    p.add_argument("--plot-len", type=int, default=10_000, help="rows of the figure CSV")

    p = subs["critval"] = sub.add_parser("critval", help="simulate critical values")
    p.add_argument("action", nargs="?", choices=("simulate", "table"), default="simulate")
    _common(p)
    p.add_argument("--gamma", type=float, default=0.25)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--horizon", "--T", dest="horizon", type=_horizon, default=OPEN_END)
    p.add_argument("--weighting", choices=("paper", "flat"), default="paper")
    p.add_argument("--reps", type=int, default=critval.DEFAULT_REPS)
    p.add_argument("--grid", type=int, default=critval.DEFAULT_GRID)
    p.add_argument("--no-cache", action="store_true", help="ignore the shipped table")

    p = subs["covest"] = sub.add_parser("covest", help="thresholded covariance and precision of a CSV block")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--m", type=int, default=None, help="rows to use (default all)")
    _threshold_flags(p)

    p = subs["datagen"] = sub.add_parser("datagen", help="write a synthetic stream as CSV")
    _common(p)
    p.add_argument("--kind", choices=("vectorma", "locallystationary", "covbreak", "regression63"), required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--beta", type=float, default=3.0)
    p.add_argument("--lmax", type=int, default=20)
    p.add_argument("--innovation", choices=("normal", "student_t"), default="normal")
    p.add_argument("--df", type=float, default=10.0)
    p.add_argument("--curve-m", type=int, default=500, help="time scale of the locally stationary curves")
    p.add_argument("--break-at", type=int, default=None)
    p.add_argument("--scale", type=float, default=4.0, help="post-break covariance multiplier")
    p.add_argument("--noise-sd", action="store_true")

    p = subs["portfolio"] = sub.add_parser("portfolio", help="min-variance / target-return weights from a CSV block")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--kind", choices=tuple(sorted(projection.PLUGINS)), default="minvar")
    p.add_argument("--mu0", type=float, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--support", type=_ints, default=None)
    p.add_argument("--exposure-cap", type=float, default=None)
    _threshold_flags(p)
    return parser, subs


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------


def _seed(args, default: int = 0) -> int:
    return default if args.seed is None else args.seed


def _out_dir(args) -> Optional[Path]:
    if args.out is None:
        return None
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _emit(obj) -> None:
    print(json.dumps(obj, indent=1))


def _precision(Y: np.ndarray, args) -> tuple[covest.MomentEstimates, np.ndarray, covest.PrecisionEstimate, dict]:
    """Moments, (thresholded) covariance and precision of a block, plus provenance."""
    if args.threshold == "none":
        mom = covest.estimate_moments(Y)
        return mom, mom.Sigma_hat, covest.precision_estimate(mom.Sigma_hat, args.eps0), {"threshold": "none"}
    c_th = args.c_th
    if args.t is None and c_th is None:
        c_th = covest.select_c_th(Y, args.threshold, args.q, seed=_seed(args))
    rule = covest.ThresholdRule(args.threshold, t=args.t, C_th=1.0 if c_th is None else c_th, q=args.q)
    mom, S, prec = covest.thresholded_precision(Y, rule, args.eps0)
    info = {"threshold": args.threshold, "t": rule.value(Y.shape[1], mom.m), "C_th": c_th}
    return mom, S, prec, info


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_monitor(args) -> dict:
    stream = read_csv(args.input, args.m)
    if len(stream) < args.m:
        raise MonitorError(f"insufficient training data: {len(stream)} rows, m = {args.m}")
    given = [x is not None for x in (args.v, args.v_file, args.v_estimator)]
    if sum(given) != 1:
        raise CliError("give exactly one of --v, --v-file, --v-estimator")
    extra = {}
    if args.v is not None:
        v, source = ProjectionVector(np.array(args.v)), "inline"
    elif args.v_file is not None:
        v, source = ProjectionVector.from_dict(json.loads(Path(args.v_file).read_text(encoding="utf-8"))), "file"
    else:
        mom, _, prec, extra = _precision(stream.training, args)
        v = projection.build_portfolio(projection.PortfolioSpec(args.v_estimator, args.mu0), prec.precision, mom.mu_hat)
        if args.support is not None:
            v = projection.restrict_support(v, args.support)
        source = f"estimator:{args.v_estimator}"
    if v.dim != stream.dim:
        raise MonitorError(f"projection has dimension {v.dim}, stream has {stream.dim} columns")
    if args.residual and stream.response is None:
        raise MonitorError(f"{args.input}: missing column z (needed for --residual)")
    cfg = MonitorConfig(
        v,
        BoundaryConfig(args.gamma, args.delta, args.horizon, args.weighting),
        alpha=args.alpha,
        c=args.c,
        lrv=LrvConfig(args.lrv_rho, args.lrv_b),
        kind=RESIDUAL if args.residual else PROJECTION,
    )
    report = run_stream(stream, cfg)
    st = report.state
    summary = {"c": st.c, "sigma0_hat": st.sigma0_hat, "v_source": source, "m": st.m, "kind": st.kind, "last_k": st.k}
    if report.event is not None:
        summary["signal_time"] = report.event.time
        summary["signal_k"] = report.event.k
    if report.truncated:
        summary["truncated"] = True
    if extra:
        summary["covariance"] = extra
    out = _out_dir(args)
    if out is not None:
        if args.format == "jsonl":
            report.write_jsonl(out / "trajectory.jsonl")
        else:
            _write_rows(out / "trajectory.csv", ["k", "stat", "bound"], zip(report.k.tolist(), report.stat.tolist(), report.bound.tolist()))
        (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
        (out / "v.json").write_text(json.dumps(v.to_dict()) + "\n", encoding="utf-8")
    return summary


def _figure_rows(stream, log: deepmon.EpisodeLog, m: int, limit: int):
    """One row per time t: data, scaled detectors and the scaled boundary of the active episode."""
    n = min(len(stream), limit)
    D_p = np.full(n, np.nan)
    D_r = np.full(n, np.nan)
    B = np.full(n, np.nan)
    episode = np.full(n, -1)
    for ep, reports in log.reports:
        origin = ep.train_end  # time of k = 0
        for key, arr in ((PROJECTION, D_p), (RESIDUAL, D_r)):
            rep = reports[key]
            t = origin + rep.k
            keep = t <= n
            arr[t[keep] - 1] = rep.stat[keep] / math.sqrt(m)
            if key == PROJECTION:
                B[t[keep] - 1] = rep.bound[keep] / math.sqrt(m)
        lo, hi = ep.train_start, ep.signal_time or len(stream)
        episode[lo - 1 : min(hi, n)] = ep.index
    for i in range(n):
        yield [i + 1, episode[i], stream.data[i, 0], stream.response[i], D_p[i], D_r[i], B[i]]


def cmd_experiment63(args) -> dict:
    root = _seed(args)
    out = _out_dir(args)
    rows = []
    for s in range(root, root + max(args.seeds, 1)):
        stream = datagen.generate_regression63(seed=s, n=args.n, noise_is_variance=not args.noise_sd, train_len=args.m)
        cfg = deepmon.RolloverConfig(
            m=args.m,
            boundary=BoundaryConfig(args.gamma, args.delta, OPEN_END, args.weighting),
            alpha=args.alpha,
            c=args.c,
            train=deepmon.TrainConfig(args.epochs, args.batch, args.val_split, deepmon.AdamConfig(lr=args.lr)),
            retrain=not args.no_retrain,
            seed=s,
        )
        log = deepmon.rollover_monitor(stream.data, stream.response, cfg)
        sig = log.signals
        rows.append(
            {
                "seed": s,
                "n_trainings": log.n_trainings,
                "signals": sig,
                "delay_1": None if not sig else sig[0] - datagen.CHANGE_1,
                "delay_2": None if len(sig) < 2 else sig[1] - datagen.CHANGE_2,
                "episodes": [e.to_dict() for e in log.episodes],
            }
        )
        if out is not None:
            tag = "" if args.seeds <= 1 else f"_seed{s}"
            log.write_jsonl(out / f"episodes{tag}.jsonl")
            _write_rows(out / f"figure{tag}.csv", ["t", "episode", "x1", "z", "D_proj", "D_res", "B"], _figure_rows(stream, log, args.m, args.plot_len))
    if out is not None and args.seeds > 1:
        _write_rows(
            out / "delays.csv",
            ["seed", "n_trainings", "first_signal", "second_signal", "delay_1", "delay_2"],
            ([r["seed"], r["n_trainings"], *(r["signals"] + [None, None])[:2], r["delay_1"], r["delay_2"]] for r in rows),
        )
    return rows[0] if len(rows) == 1 else {"runs": rows}


def cmd_critval(args) -> dict:
    seed = _seed(args, critval.DEFAULT_SEED)
    if args.action == "table":
        if args.out is None:
            raise CliError("critval table needs --out")
        table = critval.build_table(R=args.reps, N=args.grid, seed=seed)
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        table.save(args.out)
        return {"entries": len(table.entries), "path": args.out}
    use_shipped = not args.no_cache and args.reps == critval.DEFAULT_REPS and args.grid == critval.DEFAULT_GRID and seed == critval.DEFAULT_SEED
    table = critval.default_table() if use_shipped else critval.CriticalValueTable(reps=args.reps, grid=args.grid, seed=seed)
    cached = table.get(args.gamma, args.delta, args.horizon, args.alpha, args.weighting) is not None
    c = table.lookup(args.gamma, args.delta, args.horizon, args.alpha, args.weighting)
    rec = {"gamma": args.gamma, "delta": args.delta, "horizon": args.horizon, "alpha": args.alpha, "weighting": args.weighting}
    rec.update(c=c, R=table.reps, N=table.grid, seed=table.seed, cached=cached)
    if args.out is not None:
        Path(args.out).write_text(json.dumps(rec) + "\n", encoding="utf-8")
    return rec


def cmd_covest(args) -> dict:
    stream = read_csv(args.input, 0, response=None)
    Y = stream.data if args.m is None else stream.data[: args.m]
    mom, S, prec, info = _precision(Y, args)
    result = {
        **info,
        "m": mom.m,
        "d": int(S.shape[0]),
        "jitter": prec.jitter,
        "lambda_min": prec.lambda_min,
        "nonzero_offdiag": int(np.count_nonzero(S) - np.count_nonzero(np.diag(S))),
    }
    out = _out_dir(args)
    if out is not None:
        (out / "covariance.json").write_text(covest.matrix_to_json(S) + "\n", encoding="utf-8")
        (out / "precision.json").write_text(covest.matrix_to_json(prec.precision) + "\n", encoding="utf-8")
        (out / "mean.json").write_text(json.dumps(mom.mu_hat.tolist()) + "\n", encoding="utf-8")
    else:
        result["covariance"] = json.loads(covest.matrix_to_json(S))
    return result


def cmd_datagen(args) -> dict:
    if args.out is None:
        raise CliError("datagen needs --out")
    seed = _seed(args)
    if args.kind == "regression63":
        n = 50_000 if args.n is None else args.n
        st = datagen.generate_regression63(seed=seed, n=n, noise_is_variance=not args.noise_sd)
    else:
        n = 10_000 if args.n is None else args.n
        core = datagen.VectorMA(args.d, args.beta, args.lmax, args.innovation, args.df, seed=seed)
        if args.kind == "vectorma":
            spec = core
        elif args.kind == "locallystationary":
            spec = datagen.LocallyStationary(core, args.curve_m)
        else:
            k = n // 2 if args.break_at is None else args.break_at
            spec = datagen.CovarianceBreak(np.eye(args.d), args.scale * np.eye(args.d), k, seed)
        st = datagen.generate(spec, n)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_csv(args.out, st.data, st.response)
    return {"kind": args.kind, "n": len(st), "d": st.dim, "seed": seed, "path": args.out}


def cmd_portfolio(args) -> dict:
    stream = read_csv(args.input, 0, response=None)
    Y = stream.data if args.m is None else stream.data[: args.m]
    mom, _, prec, info = _precision(Y, args)
    spec = projection.PortfolioSpec(args.kind, args.mu0, args.exposure_cap)
    w = projection.build_portfolio(spec, prec.precision, mom.mu_hat)
    if args.support is not None:
        w = projection.restrict_support(w, args.support)
    report = projection.portfolio_report(w, spec, mom.mu_hat)
    report["covariance"] = info
    if args.out is not None:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(report) + "\n", encoding="utf-8")
    return report


COMMANDS = {
    "monitor": cmd_monitor,
    "experiment63": cmd_experiment63,
    "critval": cmd_critval,
    "covest": cmd_covest,
    "datagen": cmd_datagen,
    "portfolio": cmd_portfolio,
}


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser, subs = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # find --config before the full parse so it can satisfy required flags
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--config", default=None)
    config = pre.parse_known_args(argv[1:])[0].config
    if config is not None and argv and argv[0] in subs:
        _apply_config(subs[argv[0]], read_config(config))
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
        result = COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_INVALID if exc.code else EXIT_OK
    except OSError as exc:
        print(f"projmon: {exc}", file=sys.stderr)
        return EXIT_IO
    except (MonitorError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"projmon: {exc}", file=sys.stderr)
        return EXIT_INVALID
    _emit(result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
