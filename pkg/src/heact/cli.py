"""Command-line front end.

Exit codes: 0 success, 1 usage, 2 validation or parse failure, 3 precision
or depth failure, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from heact import __version__
from heact.errors import HeactError, UsageError

FORMATS = ("json", "csv")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _globals() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    g.add_argument("--output", type=Path, help="write the result here instead of stdout")
    g.add_argument("--format", choices=FORMATS, default="json", help="output format (default json)")
    return p


def _threads() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads over samples (default: all cores)")
    return p


def _preset_names() -> list[str]:
    from heact.ckks.params import PRESETS

    return sorted(PRESETS)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="heact", description="Polynomial activations and hybrid CKKS inference.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = [_globals()]

    p = sub.add_parser("fit", parents=common, help="fit a weighted minimax polynomial")
    p.add_argument("--activation", default="softplus", choices=("softplus", "relu", "swish"))
    p.add_argument("--degree", type=int, default=4)
    p.add_argument("--domain", type=float, nargs=2, metavar=("LO", "HI"), default=(-7.0, 7.0))
    p.add_argument("--weights", default="paper", help="'paper', 'uniform', or lo:hi:w,...,default")
    p.add_argument("--grid", type=int, default=1401, help="fitting grid points (default 1401)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("verify", parents=common, help="LP check of a fitted polynomial")
    p.add_argument("--fit", required=True, type=Path, help="JSON written by 'fit'")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("fold", parents=common, help="fold batch norm into FC1")
    p.add_argument("--model", required=True, type=Path, help="unfolded model JSON")
    p.add_argument("--out", required=True, type=Path, help="where to write the folded bundle")
    p.add_argument("--check", type=int, default=0, metavar="N",
                   help="compare both paths on N random inputs")
    p.set_defaults(func=cmd_fold)

    presets = _preset_names()
    p = sub.add_parser("infer", parents=common + [_threads()], help="run encrypted inference")
    p.add_argument("--model", required=True, type=Path, help="folded bundle JSON")
    p.add_argument("--features", required=True, type=Path, help="feature CSV")
    p.add_argument("--preset", default="ci-small", choices=presets)
    p.add_argument("--plaintext-oracle", action="store_true", help="skip encryption entirely")
    p.add_argument("--limit", type=int, metavar="T", help="use only the first T samples")
    p.add_argument("--strict", action=argparse.BooleanOptionalAction, default=True,
                   help="abort on a precision failure (default) or flag the sample and continue")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", parents=common + [_threads()], help="per-stage latency table")
    p.add_argument("--preset", default="ci-small", choices=presets)
    p.add_argument("--samples", type=int, default=10)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("params", parents=common, help="show a parameter preset")
    p.add_argument("--preset", required=True, choices=presets)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("synth", parents=common, help="write a synthetic model and feature set")
    p.add_argument("--d", type=int, default=512, help="feature dimension")
    p.add_argument("--h", type=int, default=512, help="hidden units")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--model-out", required=True, type=Path, help="unfolded model JSON")
    p.add_argument("--features-out", required=True, type=Path, help="feature CSV")
    p.add_argument("--folded", action="store_true", help="write the folded bundle instead")
    p.set_defaults(func=cmd_synth)
    return parser


# ---------------------------------------------------------------- output


def _resolved(args) -> dict:
    skip = {"func"}
    out = {}
    for k, v in vars(args).items():
        if k in skip:
            continue
        out[k] = str(v) if isinstance(v, Path) else (list(v) if isinstance(v, tuple) else v)
    return out


def _csv(rows: list[list]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _emit(args, payload: dict, csv_text: str | None = None) -> None:
    if args.format == "csv":
        text = csv_text if csv_text is not None else _csv([[k, json.dumps(v)] for k, v in payload.items()])
    else:
        text = json.dumps(payload, indent=2) + "\n"
    if args.output:
        args.output.write_text(text)
    else:
        sys.stdout.write(text)


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------- commands


def cmd_fit(args) -> int:
    from heact.poly_approx import ActivationKind, WeightScheme, fit_activation

    kind = ActivationKind.parse(args.activation)
    scheme = WeightScheme.parse(args.weights)
    if args.grid < args.degree + 2:
        raise UsageError(f"--grid must be at least degree + 2 = {args.degree + 2}")
    lo, hi = args.domain
    if not lo < hi:
        raise UsageError(f"--domain needs LO < HI, got {lo} {hi}")
    t0 = time.perf_counter()
    approx = fit_activation(kind, args.degree, (lo, hi), scheme, args.grid)
    elapsed = time.perf_counter() - t0
    payload = approx.to_dict()
    payload["config"] = _resolved(args)
    payload["elapsed_s"] = elapsed
    _note(f"{kind.value.capitalize()} & {approx.degree} & [{lo:g}, {hi:g}] & {approx.e_max_unweighted:.3f}")
    _emit(args, payload, approx.error_curve_csv(kind))
    return 0


def cmd_verify(args) -> int:
    from heact.poly_approx import ActivationKind, PolyApprox, build_grid, lp_minimax_verify

    try:
        approx = PolyApprox.load(args.fit)
    except OSError as e:
        raise UsageError(f"cannot read {args.fit}: {e.strerror}") from None
    kind = ActivationKind.parse(approx.activation)
    grid = build_grid(approx.domain, approx.weights, approx.grid_points)
    t0 = time.perf_counter()
    res = lp_minimax_verify(grid, kind, approx.degree)
    elapsed = time.perf_counter() - t0
    needed = approx.degree + 2
    ok = res.e_max_weighted <= 1e-12 or res.alternation_count >= needed
    payload = {
        "activation": kind.value,
        "degree": approx.degree,
        "domain": list(approx.domain),
        "e_max_weighted_lp": res.e_max_weighted,
        "e_max_weighted_fit": approx.e_max_weighted,
        "optimality_gap": approx.e_max_weighted - res.e_max_weighted,
        "alternation_count": res.alternation_count,
        "alternations_required": needed,
        "pass": bool(ok),
        "lp_coeffs_ascending": [float(c) for c in res.coeffs],
        "lp_grid_points": res.grid_points,
        "refined_points": res.refined_points,
        "elapsed_s": elapsed,
        "config": _resolved(args),
    }
    _note(f"weighted E_max {res.e_max_weighted:.4f}, {res.alternation_count} alternations: {'pass' if ok else 'FAIL'}")
    row = ["activation", "degree", "e_max_weighted_lp", "alternation_count", "pass"]
    _emit(args, payload, _csv([row, [payload[k] for k in row]]))
    return 0


def cmd_fold(args) -> int:
    from heact.model import load_raw_model, save_model

    raw = load_raw_model(args.model)
    bundle = raw.fold()
    save_model(bundle, args.out)
    payload = {
        "out": str(args.out),
        "model_sha256": bundle.digest(),
        "feature_dim": bundle.feature_dim,
        "hidden_dim": bundle.hidden_dim,
        "classes": bundle.classes,
        "config": _resolved(args),
    }
    if args.check:
        if args.check < 0:
            raise UsageError("--check needs a non-negative count")
        rng = np.random.default_rng(args.seed)
        x = rng.normal(0.0, 1.0, size=(args.check, raw.fc1.in_dim))
        direct = raw.bn(raw.fc1(x))
        folded = bundle.fc1(x)
        gap = float(np.max(np.abs(direct - folded)))
        payload["check"] = {"samples": args.check, "max_discrepancy": gap, "pass": gap < 1e-9}
        _note(f"fold check on {args.check} inputs: max discrepancy {gap:.3e}")
    _emit(args, payload)
    return 0


def cmd_infer(args) -> int:
    from heact.inference import run_batch, run_plaintext
    from heact.model import load_features, load_model

    bundle = load_model(args.model)
    feats = load_features(args.features, bundle.classes)
    if args.limit is not None:
        if args.limit < 1:
            raise UsageError("--limit must be positive")
        feats = feats.head(args.limit)
    if feats.dim != bundle.feature_dim:
        from heact.errors import ShapeError

        raise ShapeError(f"feature dimension {feats.dim} does not match the model's {bundle.feature_dim}")
    if args.plaintext_oracle:
        report = run_plaintext(feats, bundle, args.seed)
    else:
        report = run_batch(feats, bundle, args.preset, args.seed, strict=args.strict, threads=args.threads)
    report.config["cli"] = _resolved(args)
    _note(
        f"accuracy {report.accuracy:.4f} (oracle {report.oracle_accuracy:.4f}, agreement {report.agreement:.4f}) "
        f"over {len(report.per_sample)} samples, mean {report.latency['total_s']['mean']:.3f} s/sample"
    )
    _emit(args, report.to_dict(), report.to_csv())
    return 0


def cmd_bench(args) -> int:
    from heact.inference import bench_table, run_batch
    from heact.model import fixture_bundle

    if args.samples < 1:
        raise UsageError("--samples must be positive")
    from heact.ckks.params import preset

    params = preset(args.preset)
    dim = min(512, params.slots)
    bundle, feats = fixture_bundle(args.seed, d=dim, h=dim, classes=10, t=max(args.samples, 100))
    feats = feats.head(args.samples)
    report = run_batch(feats, bundle, params, args.seed, threads=args.threads)
    rows = bench_table(report)
    payload = {
        "preset": args.preset,
        "samples": args.samples,
        "dims": {"d": dim, "h": dim, "classes": 10},
        "stages": rows,
        "stage_share_sum_pct": sum(r["share_pct"] for r in rows if r["stage"] != "total"),
        "accuracy": report.accuracy,
        "agreement": report.agreement,
        "config": {**report.config, "cli": _resolved(args)},
    }
    table = [["stage", "mean_s", "median_s", "p95_s", "share_pct"]]
    table += [[r["stage"], f"{r['mean_s']:.6f}", f"{r['median_s']:.6f}", f"{r['p95_s']:.6f}", f"{r['share_pct']:.2f}"] for r in rows]
    _emit(args, payload, _csv(table))
    return 0


def cmd_params(args) -> int:
    from heact.ckks.params import preset

    params = preset(args.preset)
    payload = {**params.describe(), "config": _resolved(args)}
    _emit(args, payload)
    return 0


def cmd_synth(args) -> int:
    from heact.model import save_model, synthesize_fixture

    for name in ("d", "h", "classes", "samples"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name} must be positive")
    raw, feats = synthesize_fixture(args.seed, args.d, args.h, args.classes, args.samples)
    save_model(raw.fold() if args.folded else raw, args.model_out)
    feats.save(args.features_out)
    payload = {
        "model": str(args.model_out),
        "features": str(args.features_out),
        "folded": args.folded,
        "config": _resolved(args),
    }
    _emit(args, payload)
    return 0


# ---------------------------------------------------------------- entry


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except HeactError as e:
        _note(f"error: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        return 130
    except Exception as e:  # anything unexpected is an internal error
        _note(f"internal error: {type(e).__name__}: {e}")
        return 4


if __name__ == "__main__":
    sys.exit(main())
