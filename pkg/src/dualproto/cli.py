"""Command line interface.

Subcommands: gen, train, eval, retrieve, gradcheck. Structured failures
exit nonzero after printing one machine-parseable line to stderr:

    error=<kind> detail=<message>
"""

import argparse
import sys
from pathlib import Path

from . import checkpoint as ckpt
from .config import TrainConfig
from .data import generate_synthetic, load_dataset, write_dataset
from .errors import DualprotoError
from .objective import MODES
from .train import evaluate, gradient_check, retrieve, train

GRADCHECK_THRESHOLD = 1e-4


def build_parser():
    parser = argparse.ArgumentParser(prog="dualproto")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--states", type=int, default=8)
    gen.add_argument("--objects", type=int, default=10)
    gen.add_argument("--dim", type=int, default=32)
    gen.add_argument("--sigma", type=float, default=0.05)
    gen.add_argument("--seen-fraction", type=float, default=0.7)
    gen.add_argument("--train-per-pair", type=int, default=50)
    gen.add_argument("--test-per-pair", type=int, default=None)
    gen.add_argument("--val-per-pair", type=int, default=None)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--stem", default="dataset")

    tr = sub.add_parser("train", help="train and write the best checkpoint")
    tr.add_argument("--manifest")
    tr.add_argument("--config")
    tr.add_argument("--out", default="checkpoint.dupc")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--lambda", dest="node_mix", type=float)
    tr.add_argument("--gamma", dest="fusion_init", type=float)
    tr.add_argument("--tau", dest="temperature", type=float)
    tr.add_argument("--prefix-len", type=int)
    tr.add_argument("--token-dim", type=int)
    tr.add_argument("--hidden-dim", type=int)
    tr.add_argument("--decay-factor", type=float)
    tr.add_argument("--decay-period", type=int)
    tr.add_argument("--branches", type=_parse_branches)

    ev = sub.add_parser("eval", help="bias-sweep metrics for a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--world", choices=("closed", "open"), default=None)
    ev.add_argument("--mode", choices=MODES, default="full")
    ev.add_argument("--split", choices=("train", "val", "test"), default="test")
    ev.add_argument("--gamma", dest="fusion_override", type=float, default=None)
    ev.add_argument("--out", default=None)

    rt = sub.add_parser("retrieve", help="rank prototypes for an image or images for a prototype")
    rt.add_argument("--checkpoint", required=True)
    rt.add_argument("--manifest", required=True)
    rt.add_argument("--direction", choices=("image", "composition"), required=True)
    rt.add_argument("--query", required=True)
    rt.add_argument("--k", type=int, default=5)
    rt.add_argument("--world", choices=("closed", "open"), default=None)

    gc = sub.add_parser("gradcheck", help="finite-difference audit of the training gradients")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--eps", type=float, default=1e-5)
    return parser


def _parse_branches(text):
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _cmd_gen(args):
    dataset, space = generate_synthetic(
        args.states,
        args.objects,
        args.dim,
        args.sigma,
        args.seen_fraction,
        args.train_per_pair,
        args.seed,
        test_per_pair=args.test_per_pair,
        val_per_pair=args.val_per_pair,
    )
    manifest = write_dataset(dataset, space, args.out, stem=args.stem)
    print(f"manifest={manifest}")
    return 0


def _cmd_train(args):
    config = TrainConfig()
    if args.config:
        config = TrainConfig.from_file(args.config, base=config)
    config = config.override(
        manifest=args.manifest,
        seed=args.seed,
        lr=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        node_mix=args.node_mix,
        fusion_init=args.fusion_init,
        temperature=args.temperature,
        prefix_len=args.prefix_len,
        token_dim=args.token_dim,
        hidden_dim=args.hidden_dim,
        decay_factor=args.decay_factor,
        decay_period=args.decay_period,
        branches=args.branches,
    )
    blob, _ = train(config, log_fn=print)
    ckpt.write_checkpoint(args.out, blob)
    print(f"checkpoint={args.out}")
    return 0


def _cmd_eval(args):
    checkpoint = ckpt.read_checkpoint(args.checkpoint)
    dataset, space = load_dataset(args.manifest)
    model, _ = ckpt.restore(checkpoint, space)
    report = evaluate(
        model,
        dataset,
        space,
        world=args.world,
        mode=args.mode,
        split=args.split,
        fusion_override=args.fusion_override,
    )
    sys.stdout.write(report.to_text())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
        (out / "curve.csv").write_text(report.curve_csv(), encoding="utf-8")
        print(f"report={out / 'report.txt'}")
    return 0


def _cmd_retrieve(args):
    checkpoint = ckpt.read_checkpoint(args.checkpoint)
    dataset, space = load_dataset(args.manifest)
    model, _ = ckpt.restore(checkpoint, space)
    results = retrieve(
        model, dataset, space, args.direction, args.query, args.k, world=args.world
    )
    for rank, (identifier, score) in enumerate(results, start=1):
        print(f"rank={rank} id={identifier} score={score!r}")
    return 0


def _cmd_gradcheck(args):
    report = gradient_check(seed=args.seed, eps=args.eps)
    worst = float(report.pop("max"))
    for name in sorted(report):
        print(f"param={name} rel_err={float(report[name])!r}")
    print(f"max_rel_err={worst!r}")
    return 0 if worst < GRADCHECK_THRESHOLD else 1


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "retrieve": _cmd_retrieve,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DualprotoError as err:
        print(f"error={err.kind} detail={err.detail}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
