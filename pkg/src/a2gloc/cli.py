"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import features as F
from . import harness as H
from . import localizer as L
from .flight import TrajectoryError
from .propagation import FitError, Model, enhanced_two_ray_rss, fit_beta, link_geometry, two_ray_rss
from .scenario import (
    ConfigError,
    DatasetFormatError,
    RecordError,
    generate_dataset,
    load_dataset,
    load_scenario,
    save_dataset,
)

log = logging.getLogger("a2gloc")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _feature_cfg(args) -> F.FeatureConfig:
    return F.FeatureConfig(
        F.PreprocessConfig(args.group_size, args.sigma),
        F.ClusterConfig(args.n_clusters, args.top_n, args.max_iters, args.cluster_seed),
    )


def _add_feature_flags(p):
    p.add_argument("--group-size", type=int, default=2)
    p.add_argument("--sigma", type=float, default=20)
    p.add_argument("--n-clusters", type=int, default=20)
    p.add_argument("--top-n", type=int, default=40)
    p.add_argument("--max-iters", type=int, default=300)
    p.add_argument("--cluster-seed", type=int, default=0)


def _xy(text: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected X,Y") from None
    return x, y


def _out(args, payload) -> None:
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_simulate(args):
    sc = load_scenario(args.scenario)
    records = generate_dataset(sc, args.n, args.seed, workers=args.workers)
    save_dataset(records, args.out, sc)
    log.info("wrote %d records to %s", len(records), args.out)


def cmd_features(args):
    records = load_dataset(args.dataset)
    cfg = _feature_cfg(args)
    feats = F.extract_features_batch(records, cfg, workers=args.workers)
    F.save_feature_dump(args.out, [r.source_xy for r in records], feats)


def cmd_train(args):
    records = load_dataset(args.dataset)
    sc = load_scenario(args.scenario)
    fcfg = _feature_cfg(args)
    if args.variant == "clustering":
        mcfg = L.ModelConfig.clustering(fcfg.cluster.n_clusters)
    else:
        mcfg = L.ModelConfig.normalized(F.group_average(records[0].rss, fcfg.preprocess.group_size).size)
    x = H.model_inputs(mcfg.variant, records, fcfg)
    y = np.array([r.source_xy for r in records])
    tcfg = L.TrainConfig(args.lr, args.batch_size, args.epochs, args.seed, args.train_fraction)
    res = L.train(L.build_model(mcfg, args.seed), x, y, tcfg, target_center=sc.source_region.centroid,
                  log=lambda e, t, v: log.info("epoch %d train %.3f val %.3f", e, t, v))
    L.save_model(res.model, args.out, meta={"features": H.feature_config_to_dict(fcfg)})
    if args.loss_curve:
        L.save_loss_curve(res.history, args.loss_curve)


def _load_with_features(path):
    model = L.load_model(path)
    return model, H.feature_config_from_dict(L.model_meta(model).get("features", {}))


def cmd_predict(args):
    model, fcfg = _load_with_features(args.model)
    tr = H.load_trace(args.trace)
    v = H.model_input(model.cfg.variant, tr.rss, tr.positions[:, 0], tr.positions[:, 1], fcfg)
    x, y = L.forward(model, v)
    _out(args, {"x": float(x), "y": float(y)})


def cmd_eval(args):
    model, fcfg = _load_with_features(args.model)
    report = H.evaluate_localizer(model, load_dataset(args.dataset), fcfg)
    _out(args, report.to_dict())


def cmd_compare(args):
    sc = load_scenario(args.scenario)
    tr = H.load_trace(args.trace)
    out = {}
    for m in Model:
        xs, fs = H.rss_abs_error_cdf(tr, sc, args.source, m)
        out[m.value] = {"abs_error_db": xs.tolist(), "fraction": fs.tolist(),
                        "median_db": float(np.median(xs))}
    _out(args, out)


def cmd_fit_beta(args):
    sc = load_scenario(args.scenario)
    tr = H.load_trace(args.trace)
    tx = np.array([args.source[0], args.source[1], sc.source_height])
    att = tr.attitudes if tr.attitudes is not None else np.zeros((len(tr), 3))
    base = two_ray_rss(sc.propagation, tx, tr.positions, att)
    _, mask = enhanced_two_ray_rss(sc.propagation, tx, tr.positions, att, return_mask=True)
    d = link_geometry(tx, tr.positions, sc.propagation.f_c).d_los
    beta = fit_beta(tr.rss, base, mask, d, sc.propagation.shadow.d_0)
    _out(args, {"beta": beta, "shadowed_samples": int(np.sum(mask))})


def cmd_complexity(args):
    cfg = (L.ModelConfig.clustering(args.n_clusters) if args.variant == "clustering"
           else L.ModelConfig.normalized(args.input_len))
    rep = L.count_complexity(cfg)
    _out(args, {"variant": cfg.variant.value, "parameter_count": rep.parameter_count,
                "flop_count": rep.flop_count})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="a2gloc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--out")
        if scenario:
            p.add_argument("--scenario", help="YAML scenario file (defaults when omitted)")
        return p

    p = common(sub.add_parser("simulate", help="scenario -> dataset"))
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate, need_out=True)

    p = common(sub.add_parser("features", help="dataset -> feature CSV"), scenario=False)
    p.add_argument("--dataset", required=True)
    p.add_argument("--workers", type=int, default=1)
    _add_feature_flags(p)
    p.set_defaults(func=cmd_features, need_out=True)

    p = common(sub.add_parser("train", help="dataset -> model file"))
    p.add_argument("--dataset", required=True)
    p.add_argument("--variant", choices=["clustering", "normalized"], default="clustering")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--train-fraction", type=float, default=0.9)
    p.add_argument("--loss-curve")
    _add_feature_flags(p)
    p.set_defaults(func=cmd_train, need_out=True)

    p = common(sub.add_parser("predict", help="trace CSV -> (x, y)"), scenario=False)
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_predict)

    p = common(sub.add_parser("eval", help="model + dataset -> error report"), scenario=False)
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("compare-models", help="per-model RSS error CDFs for a trace"))
    p.add_argument("--trace", required=True)
    p.add_argument("--source", type=_xy, required=True, help="X,Y of the transmitter")
    p.set_defaults(func=cmd_compare)

    p = common(sub.add_parser("fit-beta", help="shadowing exponent from a measured trace"))
    p.add_argument("--trace", required=True)
    p.add_argument("--source", type=_xy, required=True)
    p.set_defaults(func=cmd_fit_beta)

    p = common(sub.add_parser("complexity", help="parameter / FLOP counts"), scenario=False)
    p.add_argument("--variant", choices=["clustering", "normalized"], default="clustering")
    p.add_argument("--n-clusters", type=int, default=20)
    p.add_argument("--input-len", type=int, default=10_000)
    p.set_defaults(func=cmd_complexity)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "need_out", False) and not args.out:
        parser.error(f"{args.command} requires --out")
    try:
        args.func(args)
    except (ConfigError, L.ModelConfigError, L.ConfigMismatchError, TrajectoryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetFormatError, L.ModelFormatError, H.TraceFormatError, F.ClusterError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, L.TrainingError, RecordError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
