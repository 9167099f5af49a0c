"""Command-line front end.

Subcommands, in pipeline order::

    train-solo     TD3 expert on SoloNav            -> expert checkpoint + metrics CSV
    collect-demos  noise-free expert rollouts       -> demo file
    train-bc       behavior cloning of the solo net -> solo checkpoint
    train-marl     MATD3 / SoCo on Spread-N         -> per-seed metrics CSV + checkpoint
    eval           40-episode evaluation of any checkpoint
    demo-stats     summary of a demo file

Exit codes: 0 ok, 1 runtime failure, 2 invalid config, 3 missing input.
Errors go to stderr as one JSON line: ``{"error": kind, "message": ...}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ck
from .config import RunConfig, load_config, parse_config
from .decomp import ObservationLayout
from .demos import DemoFormatError, SoloPolicy, collect_demos, demo_stats, read_demo_file, train_bc, write_demo_file
from .envs import SoloNavEnv, make_env
from .fusion import FusedPolicy
from .marl import ConfigError, FrozenHashMismatch, Trainer, TrainerConfig, VanillaActor, evaluate
from .metrics import MetricsWriter, format_value, metric_columns

log = logging.getLogger("soco")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3


class MissingInput(FileNotFoundError):
    pass


def _require(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise MissingInput(f"{what} not found: {p}")
    return p


def _load_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(_require(args.config, "config file"))
    return parse_config({})


def _override(rc: RunConfig, args) -> RunConfig:
    """Apply command-line overrides on top of the config file, then re-validate."""
    if getattr(args, "steps", None) is not None:
        rc.trainer["total_steps"] = args.steps
    if getattr(args, "warmup", None) is not None:
        rc.trainer["warmup_steps"] = args.warmup
    if getattr(args, "n_agents", None) is not None:
        rc.n_agents = args.n_agents
    fz = dict(rc.fusion)
    if getattr(args, "algo", None):
        fz["algo"] = args.algo
    if getattr(args, "L", None) is not None:
        fz["strength"] = args.L
    if getattr(args, "gating", None):
        fz["gating"] = args.gating
    if getattr(args, "clip", None):
        fz["clip"] = args.clip
    rc.fusion = fz
    if getattr(args, "seeds", None):
        rc.seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    elif getattr(args, "seed", None) is not None:
        rc.seeds = [args.seed]
    return rc.validate()


# -- checkpoint assembly ------------------------------------------------------


def trainer_tensors(tr: Trainer) -> tuple[dict, dict]:
    tensors: dict[str, np.ndarray] = {}
    nets: dict[str, str] = {}

    def add(prefix, net):
        tensors.update(ck.mlp_tensors(prefix, net))
        nets[prefix] = net.output

    for i, (a, t) in enumerate(zip(tr.actors, tr.target_actors)):
        if isinstance(a, VanillaActor):
            add(f"actor{i}.net", a.net)
            add(f"target{i}.net", t.net)
        else:
            add(f"actor{i}.gate", a.gate.net)
            add(f"actor{i}.editor", a.editor.net)
            add(f"target{i}.gate", t.gate.net)
            add(f"target{i}.editor", t.editor.net)
    for name in ("q1", "q2", "t1", "t2"):
        add(f"critic.{name}", getattr(tr.critics, name))
    if tr.solo is not None:
        add("solo", tr.solo.net)
    return tensors, nets


def actors_from_checkpoint(tensors: dict, trailer: dict):
    """Rebuild ``(actors, env, solo, layout)`` from a marl or expert checkpoint."""
    cfg = TrainerConfig.from_dict(trailer["config"])
    env = make_env(cfg.env, cfg.n_agents)
    if cfg.algo == "vanilla":
        actors = []
        for i in range(env.n_agents):
            a = VanillaActor.__new__(VanillaActor)
            a.net = ck.mlp_from_tensors(f"actor{i}.net", tensors, "tanh")
            actors.append(a)
        return actors, env, None, None
    solo = ck.solo_from_tensors(tensors, trailer)
    layout = ObservationLayout.from_dict(trailer["layout"])
    actors = []
    for i in range(env.n_agents):
        fp = FusedPolicy(solo, layout, i, cfg.hidden, cfg.strength, cfg.gating, cfg.clip, cfg.gumbel_temperature)
        fp.gate.net = ck.mlp_from_tensors(f"actor{i}.gate", tensors, "identity")
        fp.editor.net = ck.mlp_from_tensors(f"actor{i}.editor", tensors, "identity")
        actors.append(fp)
    return actors, env, solo, layout


def load_solo(path: str | Path) -> tuple[SoloPolicy, dict]:
    tensors, trailer = ck.load_checkpoint(_require(path, "solo checkpoint"))
    if trailer.get("kind") not in ("solo", "marl"):
        raise ConfigError(f"{path} is not a solo checkpoint")
    return ck.solo_from_tensors(tensors, trailer), trailer


# -- subcommands --------------------------------------------------------------


def cmd_train_solo(args) -> int:
    rc = _load_run_config(args)
    rc.env_id, rc.n_agents = "solonav", 1
    rc.fusion = {**rc.fusion, "algo": "vanilla"}
    rc = _override(rc, args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cfg = rc.trainer_config(rc.seeds[0])
    tr = Trainer(cfg)
    metrics = Path(args.metrics) if args.metrics else out.with_suffix(".csv")
    with MetricsWriter(metrics, metric_columns()) as mw:
        res = tr.run(mw.write)
    tensors, nets = trainer_tensors(tr)
    ck.save_checkpoint(out, tensors, {"kind": "expert", "config": cfg.to_dict(), "step": cfg.total_steps,
                                      "nets": nets, "final_return": res.rows[-1]["mean_return"]})
    print(json.dumps({"checkpoint": str(out), "metrics": str(metrics), "final_return": res.rows[-1]["mean_return"]}))
    return EXIT_OK


def cmd_collect_demos(args) -> int:
    tensors, trailer = ck.load_checkpoint(_require(args.expert, "expert checkpoint"))
    actors, env, _, _ = actors_from_checkpoint(tensors, trailer)
    if env.n_agents != 1:
        raise ConfigError("demonstrations need a single-agent expert")
    solo_env = SoloNavEnv()
    if actors[0].net.in_size != solo_env.obs_width:
        raise ConfigError("expert observation width does not match SoloNav")
    expert = actors[0]
    if args.check_episodes:
        from .demos import rollout_returns

        seeds = [args.seed * 7919 + 500_000 + e for e in range(args.check_episodes)]
        pre = float(np.mean(rollout_returns(expert, solo_env, seeds)))
    ds = collect_demos(expert, solo_env, args.m, args.seed, expert_hash=ck.params_hash(expert.net.flat))
    if args.check_episodes:
        ds.metadata["expert_eval_return"] = pre
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_demo_file(args.out, ds)
    print(json.dumps({"demos": args.out, **demo_stats(ds)}))
    return EXIT_OK


def cmd_train_bc(args) -> int:
    ds = read_demo_file(_require(args.demos, "demo file"))
    solo, hist = train_bc(ds, args.steps, args.batch_size, args.lr, args.hidden, args.seed)
    solo.freeze()
    tensors = ck.mlp_tensors("solo", solo.net)
    trailer = {"kind": "solo", "solo_hash": solo.param_hash(), "step": args.steps,
               "bc": {"steps": args.steps, "batch_size": args.batch_size, "lr": args.lr,
                      "hidden": args.hidden, "seed": args.seed},
               "initial_loss": hist[0] if hist else None, "final_loss": hist[-1] if hist else None,
               "demos": ds.metadata}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ck.save_checkpoint(args.out, tensors, trailer)
    print(json.dumps({"checkpoint": args.out, "solo_hash": trailer["solo_hash"], "final_loss": trailer["final_loss"]}))
    return EXIT_OK


def cmd_train_marl(args) -> int:
    rc = _override(_load_run_config(args), args)
    out_dir = Path(args.out_dir or rc.paths.out_dir)
    solo = layout = None
    solo_hash = None
    if rc.fusion.get("algo", "soco") == "soco":
        solo, trailer = load_solo(args.solo or rc.paths.solo)
        solo_hash = trailer.get("solo_hash")
        layout = rc.observation_layout()
    out_dir.mkdir(parents=True, exist_ok=True)
    finals = {}
    all_rows = {}
    for seed in rc.seeds:
        cfg = rc.trainer_config(seed)
        if solo is not None and solo.param_hash() != solo_hash:
            raise FrozenHashMismatch("solo policy changed between runs")
        tr = Trainer(cfg, solo, layout)
        cols = metric_columns(layout.n_views if layout else 0)
        with MetricsWriter(out_dir / f"metrics_seed{seed}.csv", cols) as mw:
            res = tr.run(mw.write)
        tensors, nets = trainer_tensors(tr)
        trailer = {"kind": "marl", "config": cfg.to_dict(), "run_config": rc.to_dict(), "step": cfg.total_steps,
                   "nets": nets, "solo_hash": res.solo_hash, "layout": layout.to_dict() if layout else None,
                   "counters": res.counters}
        ck.save_checkpoint(out_dir / f"marl_seed{seed}.ckpt", tensors, trailer)
        finals[seed] = res.rows[-1]["mean_return"]
        all_rows[seed] = res.rows
    if len(rc.seeds) > 1:
        write_aggregate(out_dir / "metrics_aggregate.csv", all_rows)
    print(json.dumps({"out_dir": str(out_dir), "final_return": finals}))
    return EXIT_OK


def write_aggregate(path: Path, per_seed: dict[int, list[dict]]) -> None:
    steps = sorted(set.intersection(*(set(r["step"] for r in rows) for rows in per_seed.values())))
    cols = ["step", "mean_return_mean", "mean_return_std", "n_seeds"]
    with MetricsWriter(path, cols) as mw:
        for s in steps:
            vals = [next(r["mean_return"] for r in rows if r["step"] == s) for rows in per_seed.values()]
            mw.write({"step": s, "mean_return_mean": float(np.mean(vals)), "mean_return_std": float(np.std(vals)),
                      "n_seeds": len(vals)})


def cmd_eval(args) -> int:
    tensors, trailer = ck.load_checkpoint(_require(args.checkpoint, "checkpoint"))
    kind = trailer.get("kind")
    if kind == "solo":
        solo = ck.solo_from_tensors(tensors, trailer)
        env = SoloNavEnv()
        actors = [VanillaActor.__new__(VanillaActor)]
        actors[0].net = solo.net
        mean, std = evaluate(actors, env, args.episodes, args.seed)
    elif kind in ("expert", "marl"):
        actors, env, solo, layout = actors_from_checkpoint(tensors, trailer)
        mean, std = evaluate(actors, env, args.episodes, args.seed, solo, layout)
    else:
        raise ck.CheckpointError(f"unknown checkpoint kind {kind!r}")
    print(json.dumps({"checkpoint": args.checkpoint, "env": env.env_id, "episodes": args.episodes,
                      "mean_return": float(format_value(mean)), "std_return": float(format_value(std))}))
    return EXIT_OK


def cmd_demo_stats(args) -> int:
    ds = read_demo_file(_require(args.demos, "demo file"))
    print(json.dumps(demo_stats(ds)))
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="soco", description="Solo-to-collaborative MARL laboratory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common_train(sp):
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--steps", type=int, help="learning steps after warm-up")
        sp.add_argument("--warmup", type=int)

    sp = sub.add_parser("train-solo", help="train the TD3 expert on SoloNav")
    common_train(sp)
    sp.add_argument("--out", default="expert.ckpt")
    sp.add_argument("--metrics")
    sp.set_defaults(func=cmd_train_solo)

    sp = sub.add_parser("collect-demos", help="roll out the expert and write a demo file")
    sp.add_argument("--expert", required=True)
    sp.add_argument("--out", default="demos.bin")
    sp.add_argument("--m", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--check-episodes", type=int, default=40,
                    help="evaluate the expert on this many episodes before collecting (0 to skip)")
    sp.set_defaults(func=cmd_collect_demos)

    sp = sub.add_parser("train-bc", help="behavior-clone the solo policy")
    sp.add_argument("--demos", required=True)
    sp.add_argument("--out", default="solo.ckpt")
    sp.add_argument("--steps", type=int, default=5000)
    sp.add_argument("--batch-size", type=int, default=256)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--hidden", type=int, default=128)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_train_bc)

    sp = sub.add_parser("train-marl", help="cooperative training (SoCo or vanilla MATD3)")
    common_train(sp)
    sp.add_argument("--seeds", help="comma-separated seeds, run sequentially")
    algo = sp.add_mutually_exclusive_group()
    algo.add_argument("--soco", dest="algo", action="store_const", const="soco")
    algo.add_argument("--vanilla", dest="algo", action="store_const", const="vanilla")
    sp.add_argument("--L", type=float)
    sp.add_argument("--gating", choices=["learned", "rg", "erg", "fg"])
    sp.add_argument("--clip", choices=["tanh", "norm", "hard"])
    sp.add_argument("--n-agents", type=int)
    sp.add_argument("--solo")
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_train_marl)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--episodes", type=int, default=40)
    sp.add_argument("--seed", type=int, default=10_000)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("demo-stats", help="summarize a demo file")
    sp.add_argument("--demos", required=True)
    sp.set_defaults(func=cmd_demo_stats)
    return p


def _fail(code: int, kind: str, exc: BaseException) -> int:
    msg = str(exc).replace("\n", " ")
    print(json.dumps({"error": kind, "code": code, "message": msg}), file=sys.stderr)
    return code


def run_command(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except MissingInput as e:
        return _fail(EXIT_MISSING, "missing_input", e)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "invalid_config", e)
    except (ck.SoloHashMismatch, FrozenHashMismatch) as e:
        return _fail(EXIT_RUNTIME, "solo_hash_mismatch", e)
    except (ck.CheckpointError, DemoFormatError) as e:
        return _fail(EXIT_RUNTIME, "corrupt_input", e)
    except Exception as e:  # noqa: BLE001 - top-level boundary
        log.debug("runtime failure", exc_info=True)
        return _fail(EXIT_RUNTIME, "runtime", e)


def main() -> None:
    sys.exit(run_command())
