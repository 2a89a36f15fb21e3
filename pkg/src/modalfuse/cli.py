"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 format/configuration/shape error,
3 failed check (gradient mismatch, training divergence, internal error).
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .asff import asff_forward
from .config import ModuleConfig
from .cost import compare_fusion_baselines, count_flops
from .errors import FuseError, InternalError, TrainingError
from .fatm import fatm_forward
from .gradcheck import DEFAULT_TOL, MODULE_NAMES, module_check, primitive_checks
from .serialize import read_archive, read_tensor, write_archive, write_tensor
from .toy import ToyTask, train_toy
from .weights import asff_params, fatm_params, init_weights

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_CHECK = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_help(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _build_parser() -> _Parser:
    parser = _Parser(prog="modalfuse", description="RGB/IR feature fusion toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fuse", help="run the fusion unit on two feature tensors")
    p.add_argument("--rgb", required=True)
    p.add_argument("--ir", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--groups", type=_positive, default=ModuleConfig(2).groups)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fatm", help="run the feature attention transformation")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("init-weights", help="write a deterministically initialised archive")
    p.add_argument("--module", choices=("asff", "fatm"), required=True)
    p.add_argument("--channels", type=_positive, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--groups", type=_positive, default=ModuleConfig(2).groups)
    p.add_argument("--ratio", type=_positive, default=ModuleConfig(2).ratio)
    p.add_argument("--kernel", type=_positive, default=ModuleConfig(2).cam_kernel)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="compare reverse-mode gradients with finite differences")
    p.add_argument("--module", choices=("primitives", *MODULE_NAMES), required=True)
    p.add_argument("--channels", type=_positive, default=8)
    p.add_argument("--size", type=_positive, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--groups", type=_positive, default=2)
    p.add_argument("--ratio", type=_positive, default=4)
    p.add_argument("--samples", type=_positive, default=6, help="probed coordinates per tensor")

    p = sub.add_parser("count", help="analytic parameter and MAC counts")
    p.add_argument("--module", choices=("asff", "fatm"), required=True)
    p.add_argument("--channels", type=_positive, required=True)
    p.add_argument("--height", type=_positive, required=True)
    p.add_argument("--width", type=_positive, required=True)
    p.add_argument("--batch", type=_positive, default=1)
    p.add_argument("--groups", type=_positive, default=ModuleConfig(2).groups)
    p.add_argument("--ratio", type=_positive, default=ModuleConfig(2).ratio)
    p.add_argument("--kernel", type=_positive, default=ModuleConfig(2).cam_kernel)
    p.add_argument("--compare-multi", type=_positive, metavar="N")
    p.add_argument("--json", action="store_true", help="emit a JSON document instead of a table")

    p = sub.add_parser("train-toy", help="fit the fusion unit to the elementwise-max toy task")
    p.add_argument("--channels", type=_positive, default=8)
    p.add_argument("--size", type=_positive, default=8)
    p.add_argument("--samples", type=_positive, default=64)
    p.add_argument("--epochs", type=_positive, default=200)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--groups", type=_positive, default=ModuleConfig(2).groups)
    p.add_argument("--out", required=True)
    return parser


def _fuse(args) -> int:
    rgb, ir = read_tensor(args.rgb), read_tensor(args.ir)
    params = asff_params(read_archive(args.weights), args.groups)
    write_tensor(args.out, asff_forward(rgb, ir, params))
    return EXIT_OK


def _fatm(args) -> int:
    x = read_tensor(args.inp)
    write_tensor(args.out, fatm_forward(x, fatm_params(read_archive(args.weights))))
    return EXIT_OK


def _init_weights(args) -> int:
    cfg = ModuleConfig(args.channels, groups=args.groups, ratio=args.ratio, cam_kernel=args.kernel)
    archive = init_weights(cfg, args.module, args.seed)
    write_archive(args.out, archive)
    print(f"wrote {len(archive)} tensors to {args.out}")
    return EXIT_OK


def _gradcheck(args) -> int:
    if args.module == "primitives":
        results = primitive_checks(args.seed, c=args.channels, hw=args.size)
    else:
        results = [
            module_check(
                args.module, channels=args.channels, size=args.size, seed=args.seed,
                groups=args.groups, ratio=args.ratio, samples=args.samples, tol=args.tol,
            )
        ]
    ok = True
    for r in results:
        r.tol = args.tol
        print(r.summary())
        ok &= r.passed
    return EXIT_OK if ok else EXIT_CHECK


def _count(args) -> int:
    cfg = ModuleConfig(
        args.channels, height=args.height, width=args.width, batch=args.batch,
        groups=args.groups, ratio=args.ratio, cam_kernel=args.kernel,
    )
    if args.compare_multi is None:
        report = count_flops(cfg, args.module)
        print(report.to_json() if args.json else report.to_text())
        return EXIT_OK
    if args.module != "asff":
        raise _UsageError("--compare-multi applies to the fusion unit only (--module asff)")
    single, multi = compare_fusion_baselines(cfg, args.compare_multi)
    if args.json:
        import json

        print(json.dumps({"single": single.to_dict(), "multi": multi.to_dict()}, indent=2))
    else:
        print(f"single unit: params {single.params}  macs {single.macs}  gflops {single.gflops:.6f}")
        print(f"{args.compare_multi} units:     params {multi.params}  macs {multi.macs}  gflops {multi.gflops:.6f}")
    return EXIT_OK


def _train_toy(args) -> int:
    task = ToyTask(args.seed, samples=args.samples, channels=args.channels, height=args.size, width=args.size)
    cfg = ModuleConfig(args.channels, height=args.size, width=args.size, groups=args.groups)
    result = train_toy(task, cfg, epochs=args.epochs, learning_rate=args.lr, seed=args.seed)
    for epoch, loss in enumerate(result.losses):
        print(f"epoch {epoch:4d}  loss {loss:.8f}")
    write_archive(args.out, result.weights)
    return EXIT_OK


_COMMANDS = {
    "fuse": _fuse,
    "fatm": _fatm,
    "init-weights": _init_weights,
    "gradcheck": _gradcheck,
    "count": _count,
    "train-toy": _train_toy,
}


def cli_dispatch(argv: Sequence[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"error: {exc} (epoch {exc.epoch})", file=sys.stderr)
        return EXIT_CHECK
    except InternalError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (FuseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


def main() -> None:
    sys.exit(cli_dispatch())
