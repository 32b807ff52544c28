"""Command-line surface.

Exit codes: 0 success, 1 validation failure, 2 I/O or format error,
3 budget infeasibility.  Identical invocations (same flags and seed)
produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys

import numpy as np

from . import builders
from .cost import Budget, network_cost
from .dot import to_dot
from .errors import ArchSpaceError, FormatError, InfeasibleShape
from .graph import validate
from .interpreter import EvalContext, forward_network, init_network_params
from .mutation import CostState
from .network import assemble_network, make_network, validate_network
from .ops import Shape
from .protocol import TASKS, emit_protocol
from .proxy import DEFAULT_BATCH, ProxyId, score_network
from .rng import Rng
from .search import EvoConfig, SearchLog, WalkConfig, random_walk, replay_edits
from .search import evolve as run_evolve
from .serialize import parse_document, serialize


def _parse_budget(text: str) -> Budget:
    parts = text.split(",")
    if len(parts) != 4:
        raise FormatError("budget must be params_min,params_max,flops_min,flops_max")
    pmin, pmax, fmin, fmax = (int(p) for p in parts)
    return Budget(pmin, pmax, fmin, fmax)


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(","))


def _parse_resolution(text: str) -> tuple[int, int]:
    if "x" in text:
        h, w = text.split("x")
        return int(h), int(w)
    n = int(text)
    return n, n


def _read_spec(path: str):
    try:
        with open(path, "rb") as fh:
            return parse_document(fh.read())
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def _write_out(data: str | bytes, out: str | None) -> None:
    if isinstance(data, str):
        data = data.encode()
    if out:
        with open(out, "wb") as fh:
            fh.write(data)
    else:
        sys.stdout.buffer.write(data)


def _emit_json(obj: dict, out: str | None) -> None:
    _write_out(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n", out)


def _cmd_build(args) -> int:
    variants = args.variant.split(",")
    if len(variants) == 1:
        variants = variants * len(args.stages)
    if len(variants) != len(args.stages):
        raise FormatError("need one variant, or one per stage")
    spec = make_network(args.stem, args.resolution, args.stages, args.dims,
                        args.classes, in_channels=args.in_channels)
    blocks, pos = [], 0
    for si, st in enumerate(spec.stages):
        shape = Shape(st.channels, *st.spatial)
        for _ in range(st.n_blocks):
            blocks.append(builders.build(variants[si], shape))
            pos += 1
    spec = make_network(args.stem, args.resolution, args.stages, args.dims,
                        args.classes, blocks=blocks, in_channels=args.in_channels)
    _write_out(serialize(spec), args.out)
    return 0


def _cmd_validate(args) -> int:
    spec = _read_spec(args.spec)
    bad = validate_network(spec)
    _emit_json({"ok": not bad, "violations": bad}, args.out)
    return 0 if not bad else 1


def _cmd_cost(args) -> int:
    spec = _read_spec(args.spec)
    _emit_json(network_cost(spec).to_json(), args.out)
    return 0


def _cmd_walk(args) -> int:
    spec = _read_spec(args.spec)
    budget = _parse_budget(args.budget)
    if not budget.contains(CostState.from_spec(spec).total):
        print("seed network is outside the budget", file=sys.stderr)
        return 3
    cfg = WalkConfig(steps=args.steps, budget=budget, seed=args.seed,
                     p_eliminate=args.p_eliminate, n_try=args.n_try,
                     record_every=args.record_every)
    final, log = random_walk(spec, cfg)
    _write_out(log.to_jsonl(), args.out)
    if args.final_net:
        _write_out(serialize(final), args.final_net)
    return 0


def _cmd_search(args) -> int:
    spec = _read_spec(args.spec)
    budget = _parse_budget(args.budget)
    if not budget.contains(CostState.from_spec(spec).total):
        print("seed network is outside the budget", file=sys.stderr)
        return 3
    cfg = EvoConfig(total_steps=args.steps, population_size=args.population,
                    steps_per_candidate=args.steps_per_candidate,
                    proxy_id=ProxyId(args.proxy), budget=budget, seed=args.seed,
                    p_eliminate=args.p_eliminate, n_try=args.n_try,
                    batch_size=args.batch_size, threads=args.threads)
    best, log = run_evolve(spec, cfg)
    _write_out(serialize(best), args.out)
    if args.log:
        _write_out(log.to_jsonl(), args.log)
    return 0


def _cmd_score(args) -> int:
    spec = _read_spec(args.spec)
    bad = validate_network(spec)
    if bad:
        _emit_json({"ok": False, "violations": bad}, None)
        return 1
    score = score_network(spec, ProxyId(args.proxy), Rng(args.seed),
                          batch_size=args.batch_size, fd_ceiling=args.fd_ceiling,
                          threads=args.threads)
    out = score.to_json()
    out["seed"] = args.seed
    out["batch_size"] = args.batch_size
    _emit_json(out, args.out)
    return 0


def _cmd_eval(args) -> int:
    spec = _read_spec(args.spec)
    plan = assemble_network(spec)
    rng = Rng(args.seed)
    params = init_network_params(plan, rng.child(0))
    x = rng.child(1).normal((args.batch, spec.in_channels, *spec.input_resolution))
    logits = forward_network(plan, params, x, EvalContext())
    _emit_json({
        "shape": list(logits.shape),
        "sha256": hashlib.sha256(logits.tobytes()).hexdigest(),
        "mean": float(logits.mean()),
        "seed": args.seed,
    }, args.out)
    return 0


def _cmd_dot(args) -> int:
    spec = _read_spec(args.spec)
    obj = spec if args.block is None else spec.blocks[args.block]
    _write_out(to_dot(obj), args.out)
    return 0


def _cmd_protocol(args) -> int:
    if args.task is None:
        raise FormatError(f"--task is required; choose from {TASKS}")
    _emit_json(emit_protocol(args.task, args.gpus), args.out)
    return 0


def _cmd_replay(args) -> int:
    spec = _read_spec(args.spec)
    try:
        with open(args.log) as fh:
            log = SearchLog.from_jsonl(fh.read())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read log {args.log}: {exc}") from exc
    final = replay_edits(spec, log.edits())
    _write_out(serialize(final), args.out)
    return 0


def _add_common(p, *, seed=True, out=True, budget=False):
    p.add_argument("--config", help="JSON file with default values for this command's flags")
    if seed:
        p.add_argument("--seed", type=int, default=0)
    if out:
        p.add_argument("--out", help="output file (default stdout)")
    if budget:
        p.add_argument("--budget", default="0,27000000,0,20000000000",
                       help="params_min,params_max,flops_min,flops_max")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="archspace",
                                 description="Graph-based architecture space toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="emit a network of builder blocks")
    p.add_argument("--variant", default="identity",
                   help=f"one of {builders.VARIANTS}, or a per-stage comma list")
    p.add_argument("--stem", type=int, default=16)
    p.add_argument("--resolution", type=_parse_resolution, default=(32, 32))
    p.add_argument("--stages", type=_parse_ints, default=(2, 2), help="blocks per stage")
    p.add_argument("--dims", type=_parse_ints, default=(24, 48), help="channels per stage")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--in-channels", type=int, default=3)
    _add_common(p, seed=False)
    p.set_defaults(fn=_cmd_build)

    p = sub.add_parser("validate", help="validate a network document")
    p.add_argument("spec")
    _add_common(p, seed=False)
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("cost", help="params/FLOPs report")
    p.add_argument("spec")
    _add_common(p, seed=False)
    p.set_defaults(fn=_cmd_cost)

    p = sub.add_parser("walk", help="budget-constrained random walk")
    p.add_argument("spec")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--record-every", type=int, default=1)
    p.add_argument("--p-eliminate", type=float, default=0.3)
    p.add_argument("--n-try", type=int, default=10)
    p.add_argument("--final-net", help="also write the final network document here")
    _add_common(p, budget=True)
    p.set_defaults(fn=_cmd_walk)

    p = sub.add_parser("search", help="population search guided by a proxy")
    p.add_argument("spec")
    p.add_argument("--steps", type=int, default=1024)
    p.add_argument("--population", type=int, default=64)
    p.add_argument("--steps-per-candidate", type=int, default=5)
    p.add_argument("--proxy", choices=[p.value for p in ProxyId], default="vkdnw")
    p.add_argument("--p-eliminate", type=float, default=0.3)
    p.add_argument("--n-try", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=DEFAULT_BATCH)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--log", help="write the search log here (JSONL)")
    _add_common(p, budget=True)
    p.set_defaults(fn=_cmd_search)

    p = sub.add_parser("score", help="proxy score of a network document")
    p.add_argument("spec")
    p.add_argument("--proxy", choices=[p.value for p in ProxyId], default="vkdnw")
    p.add_argument("--batch-size", type=int, default=DEFAULT_BATCH)
    p.add_argument("--fd-ceiling", type=int, default=2000)
    p.add_argument("--threads", type=int, default=1)
    _add_common(p)
    p.set_defaults(fn=_cmd_score)

    p = sub.add_parser("eval", help="forward on seeded random input, print checksum")
    p.add_argument("spec")
    p.add_argument("--batch", type=int, default=2)
    _add_common(p)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("dot", help="Graphviz rendering")
    p.add_argument("spec")
    p.add_argument("--block", type=int, help="render a single block by position")
    _add_common(p, seed=False)
    p.set_defaults(fn=_cmd_dot)

    p = sub.add_parser("protocol", help="emit the training/evaluation protocol")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--gpus", type=int, help="GPU count N; omit for symbolic LRs")
    _add_common(p, seed=False)
    p.set_defaults(fn=_cmd_protocol)

    p = sub.add_parser("replay", help="apply a recorded edit log to a seed network")
    p.add_argument("spec")
    p.add_argument("--log", required=True)
    _add_common(p, seed=False)
    p.set_defaults(fn=_cmd_replay)
    return ap


def _apply_config(ap: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv[1:] if argv and argv[0] in _SUBCOMMANDS else argv)
    if known.config:
        try:
            with open(known.config) as fh:
                defaults = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot read config {known.config}: {exc}") from exc
        for sub_action in ap._actions:
            if isinstance(sub_action, argparse._SubParsersAction):
                for sp in sub_action.choices.values():
                    sp.set_defaults(**{k.replace("-", "_"): v for k, v in defaults.items()})
    return ap.parse_args(argv)


_SUBCOMMANDS = ("build", "validate", "cost", "walk", "search", "score",
                "eval", "dot", "protocol", "replay")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = _apply_config(ap, argv)
        return args.fn(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleShape as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except ArchSpaceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
