"""Command-line entry point.

Every subcommand takes ``--seed`` and ``--out``. Options may also come from a
``--config`` file of ``key = value`` lines (``#`` starts a comment); command
line flags override the file. ``SF_SEED`` sets the default seed.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import attribution, data_io, nn, render, sanity, serialize, theory

DEFAULT_ARCH = "flatten,dense:128,relu,dense:10"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _default_seed():
    raw = os.environ.get("SF_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"SF_SEED must be an integer, got {raw!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _method_list(text):
    names = [v.strip() for v in text.split(",") if v.strip()]
    for n in names:
        if n not in {m.value for m in attribution.Method}:
            raise argparse.ArgumentTypeError(f"unknown method {n!r}")
    return names


def _add_data_args(p):
    p.add_argument("--images", help="IDX image file (magic 0x803)")
    p.add_argument("--labels", help="IDX label file (magic 0x801)")
    p.add_argument("--synthetic", type=int, metavar="N",
                   help="use N synthetic 16x16 digits instead of IDX files")
    p.add_argument("--data-seed", type=int, default=0, help="seed for --synthetic")


def _add_train_args(p):
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--no-bias", action="store_true", help="build zero-bias layers")


def build_parser(seed_default):
    parser = _Parser(prog="compsal", description="Competitive saliency maps and sanity checks.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--out", required=True, help="output directory (file for 'render')")
        p.add_argument("--config", help="key = value options file")
        return p

    p = command("synth", "write a synthetic digit set as an IDX pair")
    p.add_argument("--n", type=int, default=1000)

    p = command("train", "train a network and save it as .sfn")
    p.add_argument("--arch", default=DEFAULT_ARCH)
    _add_data_args(p)
    _add_train_args(p)

    p = command("attribute", "saliency maps for one image")
    p.add_argument("--net", required=True)
    p.add_argument("--image", required=True, help="IDX image file")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--method", type=_method_list, default=["cgi"],
                   help="comma list of gradinput,cgi,lrp,clrp")
    p.add_argument("--node", type=int, help="output node to explain (default: predicted)")
    p.add_argument("--epsilon", type=float, default=attribution.DEFAULT_EPSILON)
    p.add_argument("--style", choices=[s.value for s in render.Style], default="diverging")

    p = command("sanity-params", "model parameter randomization test")
    p.add_argument("--net", required=True)
    _add_data_args(p)
    p.add_argument("--mode", choices=[m.value for m in sanity.Mode], default="layerwise")
    p.add_argument("--targets", type=_int_list, help="layer indices or cascade depths (default: all)")
    p.add_argument("--methods", type=_method_list, default=["gradinput", "cgi"])
    p.add_argument("--n-images", type=int, default=sanity.DEFAULT_EVAL_IMAGES)
    p.add_argument("--target", choices=["label", "predicted"], default="label")
    p.add_argument("--heatmaps", action="store_true")

    p = command("sanity-data", "data randomization (permuted labels) test")
    p.add_argument("--arch", default="flatten,dense:512,relu,dense:10")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--n-train", type=int, default=1024)
    p.add_argument("--n-images", type=int, default=sanity.DEFAULT_EVAL_IMAGES)
    p.add_argument("--methods", type=_method_list, default=["gradinput", "cgi"])
    p.add_argument("--heatmaps", action="store_true")

    p = command("theory", "Monte-Carlo competition model (c1, c2 versus delta)")
    p.add_argument("--delta", type=float, action="append", help="single delta (repeatable)")
    p.add_argument("--grid", type=_float_list, help="comma list of deltas")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--svg", action="store_true", help="also write theory.svg")

    p = command("render", "render a .sfm map file as PPM/PGM")
    p.add_argument("--map", required=True)
    p.add_argument("--style", choices=[s.value for s in render.Style], default="diverging")
    return parser, sub


def read_config(path):
    """``key = value`` pairs, in file order."""
    pairs = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        pairs.append((key.strip(), value.strip()))
    return pairs


def _config_argv(subparser, pairs):
    argv = []
    for key, value in pairs:
        opt = "--" + key.replace("_", "-")
        action = subparser._option_string_actions.get(opt)
        if action is None or opt in ("--config", "--help"):
            raise UsageError(f"unknown config key {key!r} for '{subparser.prog}'")
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                argv.append(opt)
            elif value.lower() not in ("0", "false", "no", "off"):
                raise UsageError(f"config key {key!r} expects a boolean, got {value!r}")
        else:
            argv += [opt, value]
    return argv


def parse_args(argv):
    parser, sub = build_parser(_default_seed())
    if not argv:
        parser.print_usage(sys.stderr)
        raise UsageError("compsal: error: a subcommand is required")
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise UsageError("compsal: error: a subcommand is required")
    if args.config:
        subparser = sub.choices[args.command]
        extra = _config_argv(subparser, read_config(args.config))
        args = parser.parse_args([argv[0]] + extra + list(argv[1:]))
    return args


# --- commands ----------------------------------------------------------------------

def _load_data(args, input_shape=None):
    if args.synthetic is not None:
        if args.images or args.labels:
            raise UsageError("use either --synthetic or --images/--labels, not both")
        ds = data_io.synthetic_digits(args.synthetic, args.data_seed)
    elif args.images and args.labels:
        ds = data_io.load_idx(args.images, args.labels)
    else:
        raise UsageError("data required: --images and --labels, or --synthetic N")
    if input_shape is not None:
        ds = ds.reshape(input_shape)
    return ds


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args):
    out = _out_dir(args)
    ds = data_io.synthetic_digits(args.n, args.seed)
    data_io.save_idx(ds, out / "images.idx", out / "labels.idx")
    data_io.export_labels_csv(out / "labels.csv", ds)


def cmd_train(args):
    out = _out_dir(args)
    ds = _load_data(args)
    net = nn.build_network(args.arch, ds.images.shape[1:], seed=args.seed, bias=not args.no_bias)
    cfg = nn.TrainConfig(args.epochs, args.batch_size, args.lr, args.seed)
    report = nn.train(net, ds.images, ds.labels, cfg)
    serialize.save_network(net, out / "model.sfn")
    lines = ["epoch,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(report.epoch_losses)]
    (out / "train_log.csv").write_text("\n".join(lines) + "\n")
    if report.train_accuracy is not None:
        print(f"train accuracy {report.train_accuracy:.4f}")


def cmd_attribute(args):
    out = _out_dir(args)
    net = serialize.load_network(args.net)
    images = data_io.load_idx_images(args.image)
    if not 0 <= args.index < len(images):
        raise UsageError(f"--index {args.index} outside [0, {len(images)})")
    x = images[args.index].reshape(net.input_shape)
    stack = attribution.grad_input_stack(net, x, args.node)
    node = stack.chosen
    for name in args.method:
        m = attribution.attribute(net, x, name, node, args.epsilon)
        stem = out / f"{name}_node{node}"
        attribution.save_map(m, stem.with_suffix(".sfm"))
        suffix = ".ppm" if args.style == "diverging" else ".pgm"
        render.render_heatmap(m, args.style, stem.with_suffix(suffix))
    attribution.completeness_report(net, x, stack).to_csv(out / "completeness.csv")


def cmd_sanity_params(args):
    out = _out_dir(args)
    net = serialize.load_network(args.net)
    ds = _load_data(args, net.input_shape)
    if args.targets:
        plan = sanity.RandomizationPlan(args.mode, args.targets, args.seed)
    else:
        plan = sanity.RandomizationPlan.full(net, args.mode, args.seed)
    report = sanity.run_parameter_randomization(
        net, ds, plan, args.methods, n_images=args.n_images, target=args.target,
        heatmap_dir=out / "heatmaps" if args.heatmaps else None)
    report.to_csv(out / "report.csv")
    (out / "summary.txt").write_text(report.summary())
    print(report.summary(), end="")


def cmd_sanity_data(args):
    out = _out_dir(args)
    ds = _load_data(args)
    if len(ds) <= args.n_train:
        raise UsageError(f"need more than --n-train={args.n_train} samples to hold some out")
    train_set = ds.subset(slice(0, args.n_train))
    held_out = ds.subset(slice(args.n_train, None))
    cfg = nn.TrainConfig(args.epochs, args.batch_size, args.lr, args.seed)
    report = sanity.run_data_randomization(
        args.arch, train_set, cfg, args.methods, eval_images=held_out, n_images=args.n_images,
        init_seed=args.seed, permute_seed=args.seed + 1, bias=not args.no_bias,
        heatmap_dir=out / "heatmaps" if args.heatmaps else None)
    report.to_csv(out / "report.csv")
    (out / "summary.txt").write_text(report.summary())
    print(report.summary(), end="")


def cmd_theory(args):
    out = _out_dir(args)
    deltas = list(args.delta or []) + list(args.grid or [])
    if not deltas:
        deltas = list(theory.DEFAULT_DELTAS)
    try:
        results = theory.theory_grid(deltas, n=args.n, trials=args.trials,
                                     overlap=args.overlap, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = theory.results_to_csv(results, out / "theory.csv")
    if args.svg:
        (out / "theory.svg").write_text(render.theory_svg(results))
    print(text, end="")


def cmd_render(args):
    m = attribution.load_map(args.map)
    render.render_heatmap(m, args.style, args.out)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "attribute": cmd_attribute,
    "sanity-params": cmd_sanity_params,
    "sanity-data": cmd_sanity_data,
    "theory": cmd_theory,
    "render": cmd_render,
}


def cli_main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (OSError, ValueError, RuntimeError, IndexError) as exc:
        print(f"compsal: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
