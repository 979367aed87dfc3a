"""Command line entry point: ``jointshaping <command> --config cfg.yaml --out results/``."""

import argparse
import csv
from dataclasses import replace
import json
import logging
import math
from pathlib import Path
import sys

from . import config as config_mod
from . import io
from ._validation import ValidationError
from .constellation import DegenerateConstellationError, make_qam
from .experiments import (
    dbm_to_w,
    evaluate_mss,
    evaluate_nlin,
    is_linear_link,
    iter_sweep,
    nlin_mi_functional,
    optimize_mb,
    propagate_streams,
    run_calibration,
    train_js,
)
from .nlin import ase_variance
from .ssfm import save_waveform

logger = logging.getLogger("jointshaping")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVALID = 2


def _load_config(args):
    cfg = config_mod.load(args.config) if args.config else config_mod.ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _coeffs(args, out):
    path = Path(args.coeffs) if args.coeffs else out / "nlin_coeffs.json"
    if not path.exists():
        raise ValidationError(f"no NLIN coefficients at {path}; run 'calibrate' first or pass --coeffs")
    return io.load_coeffs(path)


def _power(args, cfg):
    if args.power_dbm is not None:
        return args.power_dbm, dbm_to_w(args.power_dbm)
    return 10.0 * math.log10(cfg.train.power / 1e-3), cfg.train.power


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True))


def cmd_calibrate(args, cfg, out):
    coeffs, table = run_calibration(cfg, cfg.seed)
    io.save_coeffs(coeffs, out / "nlin_coeffs.json")
    with open(out / "calibration_probes.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(table[0]))
        w.writeheader()
        w.writerows(table)
    logger.info("chi = %s, R^2 = %.4f", coeffs.chi, coeffs.r2)
    if is_linear_link(table, ase_variance(cfg.link)):
        logger.info("no measurable nonlinear noise; R^2 check skipped for a linear link")
        return EXIT_OK
    if coeffs.r2 < cfg.calibration.min_r2:
        for row in table:
            logger.error(
                "%-12s %5.1f dBm measured %.4g W fitted %.4g W",
                row["probe"], row["power_dbm"], row["measured_w"], row["fitted_w"],
            )
        logger.error("calibration R^2 %.4f below %.2f", coeffs.r2, cfg.calibration.min_r2)
        return EXIT_FAILED
    return EXIT_OK


def cmd_train(args, cfg, out):
    coeffs = _coeffs(args, out)
    dbm, power = _power(args, cfg)
    c, history = train_js(coeffs, power, cfg.train, cfg.seed)
    io.save_constellation(c, out / "js_constellation.json")
    io.write_history(history, out / "history.csv")
    mu4, mu6 = c.moments
    _write_json(
        out / "train_summary.json",
        {
            "power_dbm": dbm,
            "seed": cfg.seed,
            "mi_bits_2d_nlin": nlin_mi_functional(coeffs, power)(c),
            "entropy_bits": c.entropy,
            "mu4": mu4,
            "mu6": mu6,
            "iterations_run": len(history),
            "aborted": history.aborted,
        },
    )
    return EXIT_FAILED if history.aborted else EXIT_OK


def cmd_mb_baseline(args, cfg, out):
    coeffs = _coeffs(args, out)
    dbm, power = _power(args, cfg)
    lam, c = optimize_mb(coeffs, power, cfg.mb)
    io.save_constellation(c, out / "mb_constellation.json")
    uniform = make_qam(cfg.mb.order)
    mi = nlin_mi_functional(coeffs, power)
    mu4, mu6 = c.moments
    _write_json(
        out / "mb_baseline.json",
        {
            "power_dbm": dbm,
            "lambda": lam,
            "mi_bits_2d_nlin": mi(c),
            "uniform_mi_bits_2d_nlin": mi(uniform),
            "entropy_bits": c.entropy,
            "mu4": mu4,
            "mu6": mu6,
        },
    )
    return EXIT_OK


def cmd_evaluate(args, cfg, out):
    if not args.constellation:
        raise ValidationError("evaluate needs --constellation <file>")
    c = io.load_constellation(args.constellation)
    dbm, power = _power(args, cfg)
    metrics = evaluate_mss(c, cfg, power, cfg.seed)
    result = {"power_dbm": dbm, "seed": cfg.seed, "estimator": "mss", **metrics}
    if args.coeffs or (out / "nlin_coeffs.json").exists():
        result["nlin"] = evaluate_nlin(c, _coeffs(args, out), power, cfg.evaluation.nlin_symbols, cfg.seed)
    _write_json(out / "metrics.json", result)
    if args.dump_waveform:
        # Same seed, so the same streams and noise as the evaluation above.
        _, _, field = propagate_streams(c, cfg.link, cfg.ssfm, power, cfg.seed)
        save_waveform(field, out / "waveform.bin")
    return EXIT_OK


def cmd_sweep(args, cfg, out):
    coeffs = _coeffs(args, out)
    (out / "constellations").mkdir(exist_ok=True)
    (out / "histories").mkdir(exist_ok=True)
    comments = [
        f"master_seed={cfg.seed}",
        "per-row seed column = evaluation seed shared by all schemes at that power",
        "training seeds per power are listed in summary.json",
    ]
    summary = []
    status = EXIT_OK
    with io.SweepWriter(out / "sweep.csv", comments) as writer:
        try:
            for point in iter_sweep(cfg, coeffs, cfg.seed):
                for row in point["rows"]:
                    writer.write(row)
                tag = f"{point['power_dbm']:+05.1f}dBm"
                for scheme, c in point["constellations"].items():
                    io.save_constellation(c, out / "constellations" / f"{scheme}_{tag}.json")
                io.write_history(point["history"], out / "histories" / f"js_{tag}.csv")
                summary.append(
                    {"power_dbm": point["power_dbm"], "train_seed": point["train_seed"], "mb_lambda": point["mb_lambda"]}
                )
        except Exception:
            logger.exception("sweep stage failed; partial results kept in %s", out / "sweep.csv")
            status = EXIT_FAILED
    _write_json(out / "summary.json", {"master_seed": cfg.seed, "points": summary})
    return status


COMMANDS = {
    "calibrate": cmd_calibrate,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "evaluate": cmd_evaluate,
    "mb-baseline": cmd_mb_baseline,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="jointshaping", description="Constellation shaping experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment configuration")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--log-level", default="INFO")
        if name != "calibrate":
            p.add_argument("--coeffs", help="NLIN coefficient JSON (default: <out>/nlin_coeffs.json)")
        if name in ("train", "evaluate", "mb-baseline"):
            p.add_argument("--power-dbm", type=float, help="launch power; defaults to train.power")
        if name == "evaluate":
            p.add_argument("--constellation", help="constellation JSON to evaluate")
            p.add_argument("--dump-waveform", action="store_true", help="also write the received waveform")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        config_mod.save(cfg, out / "config.yaml")
        return COMMANDS[args.command](args, cfg, out)
    except (ValidationError, DegenerateConstellationError) as exc:
        logger.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
