"""Command-line entry point.

Exit codes: 0 success, 1 validation error (bad flags, config, files or a
failed check), 2 numerical abort during training.
"""
import argparse
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--config", metavar="PATH", help="JSON run configuration")
    p.add_argument("--seed", type=int, metavar="N", help="override the configured seed")
    p.add_argument("--out", metavar="DIR", help="override the output directory")
    p.add_argument("--evade", choices=("on", "off"), help="noisy reward banks on or off")


def build_parser():
    parser = _Parser(prog="evade", description="Noisy-reward-model posterior sampling on a gridworld.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("train", help="run the full training loop")
    _common(p)
    p.add_argument("--resume", metavar="CHECKPOINT", help="continue from an iteration checkpoint")

    p = sub.add_parser("eval", help="greedy episodes with a checkpointed policy")
    _common(p)
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--episodes", type=int, default=5)

    p = sub.add_parser("identity-check", help="identity-configuration suite")
    _common(p)
    p = sub.add_parser("grad-check", help="finite-difference gradient suite")
    _common(p)

    p = sub.add_parser("dump-activations", help="write feature maps around the noisy banks")
    _common(p)
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--layers", help="comma-separated bank names (default: all)")
    p.add_argument("--actions", default="", help="comma-separated action ids played from reset")
    p.add_argument("--action", type=int, default=0, help="action fed to the model")

    p = sub.add_parser("reproduce-paper-metrics", help="recompute published score aggregates")
    _common(p)
    p.add_argument("--tables", metavar="DIR", help="directory with the score CSVs")
    return parser


def _resolve(args):
    from .config import RunConfig, parse_evade

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ValueError("--seed must be non-negative")
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.evade is not None:
        cfg.evade = parse_evade(args.evade)
    return cfg


def _train(args, cfg):
    from .agent import run_evade_simple
    from .rng import Rng

    if args.resume and not Path(args.resume).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.resume}")
    cfg.echo()

    def progress(it, state):
        row = state["report"].rows[-1]
        print(f"iteration {it}: real_return {row['real_return_mean']:.3f} "
              f"frame_acc {row['frame_acc']:.4f} reward_acc {row['reward_acc']:.4f}", flush=True)

    report = run_evade_simple(cfg.loop, Rng(cfg.seed), env_spec=cfg.env, model_config=cfg.model,
                              evade=cfg.evade, out_dir=cfg.out, resume=args.resume, on_iteration=progress)
    (Path(cfg.out) / "final_return.txt").write_text(f"{report.final_return!r}\n")
    print(f"final greedy return {report.final_return}")
    return EXIT_OK


def _load_blocks(path):
    from . import checkpoint as ckpt

    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return ckpt.load(path)[0]


def _eval(args, cfg):
    from .agent import PolicyNet, greedy_return
    from .rng import Rng

    if args.episodes < 1:
        raise ValueError("--episodes must be positive")
    blocks = _load_blocks(args.checkpoint)
    spec = cfg.env
    policy = PolicyNet(spec.frames * spec.channels, spec.height, spec.width, spec.n_actions, Rng(0))
    try:
        policy.load_named_tensors(blocks)
    except (KeyError, ValueError) as exc:
        raise ValueError(f"checkpoint does not match the configured policy: {exc}") from None
    print(f"greedy return {greedy_return(policy, spec, args.episodes)}")
    return EXIT_OK


def _report(results):
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVALID


def _dump(args, cfg):
    from . import env as E
    from .activations import dump_activations

    _load_blocks(args.checkpoint)
    spec = cfg.env
    state, obs = E.reset(spec, cfg.seed)
    for tok in filter(None, args.actions.split(",")):
        state, _, _, done = E.step(state, int(tok), spec)
        obs = E.obs_stack(state)
        if done:
            break
    if not 0 <= args.action < spec.n_actions:
        raise ValueError(f"--action must be in [0, {spec.n_actions})")
    if args.layers:
        names = [s.strip() for s in args.layers.split(",") if s.strip()]
    else:
        from .rng import Rng
        from .world_model import build_world_model
        names = list(build_world_model(spec, cfg.model, Rng(0)).banks)
    files = dump_activations(args.checkpoint, obs, names, cfg.out, action=args.action,
                             env_spec=spec, model_config=cfg.model)
    print(f"wrote {len(files)} files under {cfg.out}")
    return EXIT_OK


def _metrics(args, cfg):
    from .metrics import format_report, reproduce_paper_metrics

    checks, extra = reproduce_paper_metrics(args.tables)
    print(format_report(checks, extra))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_INVALID


def main(argv=None):
    from . import tensor as T
    from .world_model import NumericalError

    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_INVALID
    handlers = {"train": _train, "eval": _eval, "dump-activations": _dump,
                "reproduce-paper-metrics": _metrics}
    try:
        cfg = _resolve(args)
        T.set_precision(cfg.precision)
        if args.command == "identity-check":
            from .checks import identity_suite
            return _report(identity_suite(cfg.seed))
        if args.command == "grad-check":
            from .checks import grad_suite
            return _report(grad_suite(cfg.seed))
        return handlers[args.command](args, cfg)
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    finally:
        T.set_precision("single")


if __name__ == "__main__":
    sys.exit(main())
