"""``dkseg`` command line: gen-data, train, eval, predict, gradcheck, selftest.

Every failure prints a single ``error: ...`` line to stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, data, gradcheck, inference, metrics, plotting, pnm, selftest
from .config import TrainConfig, load_config
from .model import config_from_params

log = logging.getLogger("dkseg")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(2)


def cmd_gen_data(args) -> int:
    if args.size < 8:
        raise ValueError("--size must be at least 8")
    spec = data.SyntheticSpec(count=args.count, image_size=args.size, seed=args.seed)
    stats = data.generate_synthetic(spec, args.out)
    print(f"wrote {stats['count']} samples to {args.out} "
          f"(mean foreground fraction {stats['mean_foreground_fraction']:.4f})")
    return 0


def cmd_train(args) -> int:
    from .train import train

    cfg = load_config(args.config) if args.config else TrainConfig()
    samples = data.load_dataset(args.data, cfg.image_size)
    out = Path(args.out)
    result = train(cfg, samples, out)
    plotting.training_curves(result.history, out / "training_curves.png")
    print(f"best validation Dice {result.best_val_dice:.4f}; checkpoint {out / 'checkpoint.dksg'}")
    return 0


def write_eval_csv(path: str | Path, per_image, summary: metrics.MetricReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("id",) + metrics.HEADERS)
        for sid, rep in per_image:
            w.writerow([sid] + [f"{v:.6f}" for v in rep.as_tuple()])
        w.writerow(["MEAN"] + [f"{v:.6f}" for v in summary.as_tuple()])


def cmd_eval(args) -> int:
    params = checkpoint.load(args.checkpoint)
    cfg = config_from_params(params)
    samples = data.load_dataset(args.data)
    per_image, summary = inference.evaluate(params, cfg, samples, pooled=args.pooled)
    write_eval_csv(args.out, per_image, summary)
    mode = "pooled" if args.pooled else "per-image mean"
    plotting.metric_bars(summary, Path(args.out).with_suffix(".png"), title=f"{len(samples)} images, {mode}")
    print("  ".join(f"{h} {100 * v:.2f}" for h, v in zip(metrics.HEADERS, summary.as_tuple())))
    return 0


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_predict(args) -> int:
    params = checkpoint.load(args.checkpoint)
    cfg = config_from_params(params)
    image = pnm.load_pnm(args.image).data
    if image.shape[0] != 3:
        raise ValueError(f"{args.image} is not an RGB (P6) image")
    logits = inference.predict_logits(params, cfg, image[None])[0, 0]
    mask = metrics.binarize(logits)
    out = Path(args.out)
    pnm.write_pnm_raw((mask * 255).astype(np.uint8), out)
    plotting.prediction_overlay(image, mask, out.with_suffix(".png"))
    if args.dump_attn or args.dump_kernel:
        h, w = image.shape[1:]
        x = image[None]
        if (inference.model_size(h), inference.model_size(w)) != (h, w):
            x = data.resize_image(image, inference.model_size(h), inference.model_size(w))[None]
        traced = inference.run_model(x, params, cfg, trace=True)
        if args.dump_attn:
            if not cfg.use_ea:
                raise ValueError("checkpoint has no encoder attention to dump")
            _write_rows(out.with_suffix(".attn.csv"), ("sample", "query_stage", "key_stage", "weight"),
                        inference.attention_rows(traced))
        if args.dump_kernel:
            _write_rows(out.with_suffix(".kernel.csv"), ("stage", "mean_gate", "l2_kernel"),
                        inference.kernel_rows(traced.trace))
    print(f"wrote {mask.shape[0]}x{mask.shape[1]} mask to {out} ({int(mask.sum())} foreground pixels)")
    return 0


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for name, err, secs in gradcheck.run(args.seed):
        flag = "ok" if err < gradcheck.TOLERANCE else "FAIL"
        print(f"{name:28s} max_rel_err={err:.3e}  {secs:6.2f}s  {flag}")
        worst = max(worst, err)
    print(f"worst {worst:.3e} (tolerance {gradcheck.TOLERANCE:g})")
    return 0 if worst < gradcheck.TOLERANCE else 1


def cmd_selftest(args) -> int:
    return 0 if selftest.run() == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dkseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic polyp-like dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train from scratch")
    p.add_argument("--config", help="key = value run config (defaults if omitted)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics CSV for a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pooled", action="store_true", help="summary from summed counts instead of per-image mean")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="segment one P6 image into a P5 mask")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-attn", action="store_true")
    p.add_argument("--dump-kernel", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selftest", help="run the built-in example and invariant checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001
        msg = " ".join(str(exc).split()) or type(exc).__name__
        sys.stderr.write(f"error: {msg}\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
