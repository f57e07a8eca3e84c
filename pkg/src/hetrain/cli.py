"""Command line: ``hetrain train | opcount | compare``.

Exit codes: 0 ok, 2 configuration error, 3 data/IO error, 4 depth budget
exhausted.
"""
from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path


from . import he_nn, opcount, persist, reference
from .data import DataError, load_iris
from .packed_linalg import Layout, UnsupportedShapeError
from .slot_engine import DepthBudgetError, EngineContext

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DEPTH = 0, 2, 3, 4
DEFAULT_LEVELS = {Layout.ROW: 12, Layout.DIAGONAL: 9, Layout.STEPPED: 9}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    packing: Layout = Layout.DIAGONAL
    epochs: int = 400
    batch_size: int = 20
    lr: float = 0.1
    noise_std: float = 0.0
    init_std: float = 0.1
    levels: int | None = None
    seed: int = 0
    threads: int = 1
    hidden: int = 10
    data: str | None = None
    metrics_out: str | None = None
    checkpoint_out: str | None = None
    resume: str | None = None
    experimental_ragged: bool = False

    def __post_init__(self):
        self.packing = Layout(self.packing)
        if self.levels is None:
            self.levels = DEFAULT_LEVELS[self.packing]
        for name in ("epochs", "batch_size", "levels", "threads", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"--{name.replace('_', '-')} must be positive")
        if self.lr < 0 or self.noise_std < 0 or self.init_std < 0:
            raise ConfigError("--lr, --noise-std and --init-std must be non-negative")

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        return cls(**{k: getattr(args, k) for k in cls.__dataclass_fields__ if hasattr(args, k)})


def _dims_arg(text: str) -> tuple:
    try:
        dims = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if len(dims) < 2 or min(dims) < 1:
        raise argparse.ArgumentTypeError("need at least two positive dimensions")
    return dims


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--packing", choices=[l.value for l in Layout], default="diag")
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--batch-size", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--levels", type=int, default=None,
                   help="level budget (default 9 for diagonal packings, 12 for row)")
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--init-std", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--hidden", type=int, default=10)
    p.add_argument("--data", default=None, help="iris CSV (default: bundled copy)")
    p.add_argument("--metrics-out", default=None)
    p.add_argument("--checkpoint-out", default=None)
    p.add_argument("--experimental-ragged", action="store_true",
                   help="skip padding and use the printed e_i bounds for N mod M != 0")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetrain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="encrypted-simulation training on iris")
    _add_run_flags(p)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")

    p = sub.add_parser("compare", help="encrypted-simulation vs plaintext training")
    _add_run_flags(p)
    p.add_argument("--plain-metrics-out", default=None)

    p = sub.add_parser("opcount", help="per-phase operation counts of one training step")
    p.add_argument("--net", type=_dims_arg, default=(6, 3, 1))
    p.add_argument("--packing", choices=[l.value for l in Layout], default="diag")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--levels", type=int, default=64)
    p.add_argument("--no-input-grad", action="store_true",
                   help="skip the first layer's transpose and input gradient")
    p.add_argument("--experimental-ragged", action="store_true")
    return parser


def _setup(cfg: RunConfig):
    dataset = load_iris(cfg.data, seed=cfg.seed)
    dims = (dataset.n_features, cfg.hidden, dataset.n_classes)
    ctx = EngineContext(level_budget=cfg.levels, noise_std=cfg.noise_std, seed=cfg.seed)
    params = reference.init_params(dims, cfg.init_std, cfg.seed)
    hyper = he_nn.Hyper(cfg.lr, cfg.batch_size, cfg.epochs)
    return dataset, dims, ctx, params, hyper


def run_encrypted(cfg: RunConfig):
    dataset, dims, ctx, params, hyper = _setup(cfg)
    start = 0
    if cfg.resume:
        # the checkpoint fixes layout and dims; the client re-encrypts at this run's budget
        net, doc = persist.load_checkpoint(cfg.resume)
        net = he_nn.repack(replace(net, hyper=hyper), ctx)
        start = doc["epoch"]
    else:
        net = he_nn.build_network(params, cfg.packing, ctx, hyper, cfg.experimental_ragged)
    tc = he_nn.TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, threads=cfg.threads,
                           seed=cfg.seed, start_epoch=start)
    t0 = time.perf_counter()
    net, metrics = he_nn.train(net, dataset, ctx, tc)
    elapsed = time.perf_counter() - t0
    if cfg.metrics_out:
        persist.write_metrics(cfg.metrics_out, metrics.epochs)
    if cfg.checkpoint_out:
        persist.save_checkpoint(cfg.checkpoint_out, net, seed=cfg.seed, epoch=start + cfg.epochs)
    return net, metrics, ctx, elapsed


def cmd_train(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    net, metrics, ctx, elapsed = run_encrypted(cfg)
    f = metrics.final
    snap = ctx.counters.snapshot()
    print(f"packing={net.layout.value} levels={cfg.levels} epochs={f.epoch}", file=out)
    print(f"final train_acc={f.train_acc:.4f} test_acc={f.test_acc:.4f} "
          f"train_loss={f.train_loss:.6f} test_loss={f.test_loss:.6f}", file=out)
    print(f"mults={snap.mults} (ct {snap.ct_mults}, pt {snap.pt_mults}) rotations={snap.rotations} "
          f"min_level={ctx.counters.min_level} wall_time={elapsed:.1f}s", file=out)
    return EXIT_OK


def cmd_compare(cfg: RunConfig, plain_metrics_out=None, out=None) -> int:
    out = out or sys.stdout
    _, he_metrics, _, elapsed = run_encrypted(cfg)
    dataset, _, _, params, _ = _setup(cfg)
    _, plain_metrics = reference.train_plain(params, dataset, epochs=cfg.epochs,
                                             batch_size=cfg.batch_size, lr=cfg.lr, seed=cfg.seed)
    if plain_metrics_out is None and cfg.metrics_out:
        p = Path(cfg.metrics_out)
        plain_metrics_out = p.with_name(p.stem + ".plain" + p.suffix)
    if plain_metrics_out:
        persist.write_metrics(plain_metrics_out, plain_metrics.epochs)
    div = max(max(abs(a.train_loss - b.train_loss), abs(a.test_loss - b.test_loss))
              for a, b in zip(he_metrics.epochs, plain_metrics.epochs))
    h, p = he_metrics.final, plain_metrics.final
    print(f"max per-epoch loss divergence: {div:.3e}", file=out)
    print(f"{'':<12}{'encrypted':>12}{'plaintext':>12}", file=out)
    for name in ("train_acc", "test_acc", "train_loss", "test_loss"):
        print(f"{name:<12}{getattr(h, name):>12.4f}{getattr(p, name):>12.4f}", file=out)
    print(f"encrypted wall_time={elapsed:.1f}s", file=out)
    return EXIT_OK


def cmd_opcount(args, out=None) -> int:
    out = out or sys.stdout
    layout = Layout(args.packing)
    kw = dict(seed=args.seed, levels=args.levels, experimental_ragged=args.experimental_ragged,
              input_grad=not args.no_input_grad)
    rep = opcount.run_opcount(args.net, layout, **kw)
    base = None if layout is Layout.ROW else opcount.run_opcount(args.net, Layout.ROW, **kw)
    print(opcount.format_report(rep, base), file=out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "opcount":
            return cmd_opcount(args)
        cfg = RunConfig.from_args(args)
        if args.command == "train":
            return cmd_train(cfg)
        return cmd_compare(cfg, args.plain_metrics_out)
    except (ConfigError, UnsupportedShapeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DepthBudgetError as err:
        print(f"depth budget exhausted: {err}\n"
              "hint: raise --levels or switch packing (row packing needs a deeper chain)",
              file=sys.stderr)
        return EXIT_DEPTH
    except (DataError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
