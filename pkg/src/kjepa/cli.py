"""Command-line front end: ``kjepa [--config F] [--seed S] [--out DIR] <command>``.

Commands
    gen         write train/val/test KJD1 files into DIR and print their hashes
    train       train a JEPA (``--mode jepa``) or autoencoder (``--mode ae``)
    analyze     run the diagnostic suite and write ``report.txt``/``report.json``
    report      print a report against the thresholds; exit 1 if any fails
    gradcheck   finite-difference check of every op and of the full JEPA loss

The resolved configuration is echoed to stderr before each command runs.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .analysis import (
    PAPER_REFERENCE,
    THRESHOLDS,
    AnalysisReport,
    analyze_checkpoints,
    embed_split,
    evaluate_thresholds,
    export_embeddings,
)
from .config import ExperimentConfig
from .errors import KjepaError
from .models import composite_grad_check, read_checkpoint
from .numerics import grad_check, layer_cases
from .synthgen import SPLITS, build_dataset, file_hash, read_dataset, read_manifest
from .training import train

log = logging.getLogger("kjepa")


def _resolve(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig().validate()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = cfg.with_out_dir(args.out)
    return cfg.validate()


def _data_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.data) if getattr(args, "data", None) else Path(cfg.data.out_dir)


def cmd_gen(args, cfg: ExperimentConfig) -> int:
    files = build_dataset(cfg.dataset_config())
    for split in SPLITS:
        manifest = read_manifest(files[split])
        print(f"{split} {files[split]} pairs={manifest['num_pairs']} content_hash={manifest['content_hash']} "
              f"file_hash={file_hash(files[split])}")
    return 0


def cmd_train(args, cfg: ExperimentConfig) -> int:
    if args.mode == "ae":
        log.warning("mode=ae ignores the [model] predictor settings (predictor=%s, predictor_init=%s)",
                    cfg.model.predictor, cfg.model.predictor_init)
    data = _data_dir(args, cfg)
    out = Path(cfg.data.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = args.name or args.mode
    result = train(
        cfg.model_config(args.mode),
        cfg.train_config(),
        read_dataset(data / "train.kjd"),
        read_dataset(data / "val.kjd"),
        checkpoint=out / f"{name}.kjc",
        log_path=out / f"{name}.log",
    )
    final = result.history.records[-1].val_loss if result.history.records else result.initial_val_loss
    print(f"checkpoint={result.checkpoint} log={out / (name + '.log')} final_val_loss={final:.9g}")
    return 0


def cmd_analyze(args, cfg: ExperimentConfig) -> int:
    data = _data_dir(args, cfg)
    test = read_dataset(data / "test.kjd")
    val_path = data / "val.kjd"
    val = read_dataset(val_path) if val_path.exists() else None
    report = analyze_checkpoints(
        args.jepa,
        test,
        ae_ckpt=args.ae,
        control_ckpt=args.control,
        val=val,
        restarts=cfg.analyze.kmeans_restarts,
        seed=cfg.analyze.kmeans_seed,
        untrained_seed=cfg.train.seed,
    )
    out = Path(cfg.data.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "report")
    params, _ = read_checkpoint(args.jepa)
    export_embeddings(embed_split(params, test, source=str(args.jepa)), out / "embeddings.csv")
    print(f"report={out / 'report.txt'} json={out / 'report.json'} embeddings={out / 'embeddings.csv'}")
    return 0


def format_report(report: AnalysisReport) -> tuple[str, bool]:
    verdicts = evaluate_thresholds(report)
    t = THRESHOLDS
    lo, hi = t["eigen_band"]
    in_band = sum(1 for v in report.eigen_mags if lo <= v <= hi)

    def pct(v):
        return "absent" if v is None else f"{100 * v:.2f}%"

    def mark(key):
        v = verdicts.get(key)
        return "n/a" if v is None else ("PASS" if v else "FAIL")

    gap = None if report.purity_ae is None else report.purity_jepa - report.purity_ae
    rows = [
        ("purity_jepa", pct(report.purity_jepa), pct(PAPER_REFERENCE["purity_jepa"]), f">= {pct(t['purity_jepa_min'])}", mark("purity_jepa")),
        ("purity_ae", pct(report.purity_ae), pct(PAPER_REFERENCE["purity_ae"]), "", ""),
        ("purity gap", pct(gap), pct(PAPER_REFERENCE["purity_jepa"] - PAPER_REFERENCE["purity_ae"]),
         f">= {pct(t['purity_gap_min'])}", mark("purity_gap")),
        ("frob_rel", pct(report.frob_rel), pct(PAPER_REFERENCE["frob_rel"]), f"<= {pct(t['frob_rel_max'])}", mark("frob_rel")),
        ("skew_rel", pct(report.skew_rel), pct(PAPER_REFERENCE["skew_rel"]), f"<= {pct(t['skew_rel_max'])}", mark("skew_rel")),
        ("centroid mean", pct(report.centroid_mean), pct(PAPER_REFERENCE["centroid_mean"]),
         f"<= {pct(t['centroid_mean_max'])}", mark("centroid_mean")),
        ("eigen |lambda| in band", f"{in_band}/{len(report.eigen_mags)}", "near 1.0",
         f">= {t['eigen_count_min']} in [{lo}, {hi}]", mark("eigen_count")),
        ("invariance_err", f"{report.invariance_err:.4f} (untrained {report.invariance_err_untrained:.4f})", "-",
         f"<= {t['invariance_max']}, untrained >= {t['invariance_untrained_factor']:g}x", mark("invariance")),
        ("decomposition_gap", f"{report.decomposition_gap:.3g}", "0", f"<= {t['decomposition_gap_max']:g}", mark("decomposition_gap")),
        ("control (random M)", "absent" if report.control_val_loss_ratio is None else
         f"loss ratio {report.control_val_loss_ratio:.3f}, frob {pct(report.control_frob_rel)}, purity {pct(report.control_purity)}",
         "dense, non-identity", f"ratio within {t['control_loss_tolerance']:g}, frob >= {t['control_frob_min']}", mark("control")),
    ]
    header = ("metric", "this run", "paper (full scale)", "desk threshold", "result")
    widths = [max(len(str(r[i])) for r in rows + [header]) for i in range(5)]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header] + rows]
    ok = all(v is not False for v in verdicts.values())
    lines.append(f"overall: {'PASS' if ok else 'FAIL'}")
    return "\n".join(lines) + "\n", ok


def cmd_report(args, cfg: ExperimentConfig) -> int:
    text, ok = format_report(AnalysisReport.read(args.report))
    sys.stdout.write(text)
    return 0 if ok else 1


def cmd_gradcheck(args, cfg: ExperimentConfig) -> int:
    worst_layer = 0.0
    for name, params, f in layer_cases(cfg.train.seed):
        err = grad_check(f, params, h=1e-5)
        worst_layer = max(worst_layer, err)
        print(f"layer {name} max_rel_err={err:.3e}")
    err = composite_grad_check(cfg.model_config("jepa"), seed=cfg.train.seed, max_coords=args.coords)
    print(f"composite jepa max_rel_err={err:.3e}")
    ok = worst_layer <= 1e-6 and err <= 1e-4
    print("gradcheck: " + ("PASS" if ok else "FAIL"))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="experiment config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override data and training seeds")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (overrides [data] out_dir)")

    parser = argparse.ArgumentParser(prog="kjepa", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen", parents=[common], help="generate the synthetic dataset")

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--mode", choices=("jepa", "ae"), default="jepa")
    p.add_argument("--data", help="directory with train.kjd/val.kjd (default: out dir)")
    p.add_argument("--name", help="checkpoint stem (default: the mode)")

    p = sub.add_parser("analyze", parents=[common], help="compute the diagnostic report")
    p.add_argument("--jepa", required=True, help="JEPA checkpoint (linear predictor)")
    p.add_argument("--ae", help="autoencoder checkpoint for the purity comparison")
    p.add_argument("--control", help="random-init predictor checkpoint")
    p.add_argument("--data", help="directory with test.kjd (default: out dir)")

    p = sub.add_parser("report", parents=[common], help="summarize a report file")
    p.add_argument("report", help="report.txt or report.json")

    p = sub.add_parser("gradcheck", parents=[common], help="verify gradients numerically")
    p.add_argument("--coords", type=int, default=6, help="coordinates sampled per parameter tensor")
    return parser


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "analyze": cmd_analyze,
    "report": cmd_report,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    for key in ("config", "seed", "out"):
        if not hasattr(args, key):
            setattr(args, key, None)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _resolve(args)
        sys.stderr.write("# resolved config\n" + cfg.to_text())
        return COMMANDS[args.command](args, cfg)
    except KjepaError as exc:
        sys.stderr.write(f"kjepa {args.command}: error: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"kjepa {args.command}: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
