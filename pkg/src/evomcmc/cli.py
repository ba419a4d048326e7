"""Command-line front end: ``run``, ``predict``, ``oracle`` and ``compare``.

Exit codes: 0 success, 1 configuration error, 2 comparison failure,
3 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np
import yaml

from . import oracle
from .errors import BudgetExceeded, ConfigError, InvalidArgument
from .experiment import (ExperimentConfig, FrequencyHistogram, chain_parameters,
                         compare_to_prediction, dump_json, run_suite)
from .limits import LimitPrediction, limit_density_lambda1, predict_limit
from .genotype import AlleleSpace, SimplexPoint

EXIT_OK, EXIT_CONFIG, EXIT_COMPARE, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("evomcmc")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="YAML configuration file")
    for f in dataclasses.fields(ExperimentConfig):
        name = "lambda" if f.name == "lam" else f.name
        flags = [f"--{name}"] + (["--alpha"] if f.name == "base_alpha" else [])
        p.add_argument(*flags, dest=f"cfg_{f.name}", metavar="VALUE", default=None,
                       help=f"override '{name}' (YAML syntax)")


def _load_config(args) -> ExperimentConfig:
    overrides = {}
    for f in dataclasses.fields(ExperimentConfig):
        raw = getattr(args, f"cfg_{f.name}")
        if raw is None:
            continue
        try:
            val = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse --{f.name} value {raw!r}: {exc}") from exc
        overrides["lambda" if f.name == "lam" else f.name] = val
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig.from_mapping(overrides)


def cmd_run(args) -> int:
    cfg = _load_config(args)
    summary = run_suite(cfg)
    if not cfg.out_dir:
        print(dump_json(summary))
    for run in summary["per_run"]:
        log.info("n=%d mean=%.6f sd=%.6f distance=%.6f pass=%s", run["n"], run["mean"],
                 run["sd"], run["distance"], run["pass"])
    return EXIT_OK if all(r["pass"] for r in summary["per_run"]) else EXIT_COMPARE


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    pred = predict_limit(cfg, rng=np.random.default_rng(cfg.seed))
    text = dump_json(pred.to_json())
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        dump_json(pred.to_json(), os.path.join(cfg.out_dir, "prediction.json"))
    else:
        print(text)
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _load_config(args)
    space = cfg.space
    out = []
    for n in cfg.n:
        alpha, w = chain_parameters(cfg, n)
        alpha_arg = alpha[0] if space.L == 1 else alpha
        niche = None if cfg.niche_weights is None else np.asarray(cfg.niche_weights, dtype=float)
        entry = {"n": n}
        if niche is None:
            dist = oracle.stationary_counts(n, alpha_arg, w, space=space)
            f, p = dist.frequency_law(cfg.allele - 1, cfg.locus - 1)
            entry["mean_frequency"] = float(f @ p)
            entry["stationary"] = [{"counts": s.tolist(), "probability": float(q)}
                                   for s, q in zip(dist.support, dist.probs)]
            if cfg.out_dir:
                os.makedirs(cfg.out_dir, exist_ok=True)
                oracle.dump_distribution_csv(dist, os.path.join(cfg.out_dir, f"stationary_n{n}.csv"))
        try:
            T = oracle.full_transition_matrix(cfg.kernel_config, n, alpha_arg, w, space=space,
                                              niche_weights=niche)
        except BudgetExceeded as exc:
            entry["full_matrix"] = {"skipped": str(exc)}
        else:
            _, pi = oracle.stationary_ordered(n, alpha_arg, w, space=space, niche_weights=niche)
            viol, pair = oracle.check_detailed_balance(pi, T)
            entry["full_matrix"] = {
                "states": int(len(T.states)),
                "detailed_balance_violation": viol,
                "worst_pair": [[int(v) + 1 for v in T.states[i]] for i in pair],
                "stationarity_residual": float(np.max(np.abs(pi @ T.rows - pi))),
            }
            if cfg.out_dir:
                oracle.dump_matrix_csv(T, os.path.join(cfg.out_dir, f"matrix_n{n}.csv"))
        out.append(entry)
    text = dump_json({"config_echo": cfg.to_dict(), "oracle": out})
    if cfg.out_dir:
        with open(os.path.join(cfg.out_dir, "oracle.json"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def prediction_from_json(doc: dict, seed: int = 0) -> LimitPrediction:
    """Rebuild a prediction written by ``predict``."""
    try:
        space = AlleleSpace(int(doc["K"]), int(doc["L"]))
        kw = {}
        for key in ("q_star", "r_star"):
            if key in doc:
                kw[key] = SimplexPoint(doc[key])
        if "theta" in doc:
            kw["theta"] = float(doc["theta"])
        if "density" in doc:
            d = doc["density"]
            alpha = d["alpha"][0] if space.L == 1 else d["alpha"]
            kw["density"] = limit_density_lambda1(alpha, d["phi"], space=space,
                                                  rng=np.random.default_rng(seed))
        if "mixture" in doc:
            kw["mixture"] = [(float(m["weight"]), SimplexPoint(m["atom"])) for m in doc["mixture"]]
        return LimitPrediction(doc["regime"], doc.get("prior_scaling", "scaled"), space,
                               conjectural=bool(doc.get("conjectural", False)), **kw)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed prediction document: {exc}") from exc


def cmd_compare(args) -> int:
    import json

    try:
        with open(args.prediction, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read prediction {args.prediction}: {exc}") from exc
    if "prediction" in doc and "regime" not in doc:
        doc = doc["prediction"]
    pred = prediction_from_json(doc)
    hist = FrequencyHistogram.from_csv(args.histogram, allele=args.allele - 1, locus=args.locus - 1)
    rep = compare_to_prediction(hist, pred, args.threshold)
    print(dump_json(rep.to_dict()))
    return EXIT_OK if rep.passed else EXIT_COMPARE


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log per-run results")
    p = argparse.ArgumentParser(prog="evomcmc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, help_ in [("run", cmd_run, "run chains and compare with the limit"),
                            ("predict", cmd_predict, "print the limit prediction as JSON"),
                            ("oracle", cmd_oracle, "exact small-instance stationary law and balance report")]:
        sp = sub.add_parser(name, help=help_, parents=[common])
        _add_config_flags(sp)
        sp.set_defaults(func=fn)
    sp = sub.add_parser("compare", help="compare a histogram CSV with a prediction JSON",
                        parents=[common])
    sp.add_argument("histogram")
    sp.add_argument("prediction")
    sp.add_argument("--allele", type=int, default=1)
    sp.add_argument("--locus", type=int, default=1)
    sp.add_argument("--threshold", type=float, default=None)
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidArgument) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
