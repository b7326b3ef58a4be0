"""Command-line entry point: ``qfuzz {fuzz,train,bench,replay}``.

Outputs go under ``--out`` (default ``$QFUZZ_OUT`` or ``./runs``), one
directory per run named ``<config_hash>-<seed>``.
"""

import argparse
import json
import logging
import os
import sys

from .config import ConfigError, EnvConfig
from .engine import ActionLog, Engine
from .mutators import write_dictionary
from .targets import get_target, target_names

logger = logging.getLogger("qfuzz")

_DEFAULTS = EnvConfig()


def _out_root(args):
    return args.out or os.environ.get("QFUZZ_OUT", "runs")


def _add_env_flags(p):
    p.add_argument("--config", help="EnvConfig file (key = value); flags override it")
    p.add_argument("--target", help=f"target name ({', '.join(target_names())}); "
                   f"default {_DEFAULTS.target}")
    p.add_argument("--budget-execs", type=int,
                   help=f"executions per run (default {_DEFAULTS.budget_execs})")
    p.add_argument("--budget-secs", type=float, help="wall-clock seconds per run")
    p.add_argument("--ring-k", type=int, help=f"action ring capacity (default {_DEFAULTS.ring_k})")
    p.add_argument("--snapshot-s", type=int,
                   help=f"executions between snapshots (default {_DEFAULTS.snapshot_s})")
    p.add_argument("--max-len", type=int, help=f"maximum input size (default {_DEFAULTS.max_len})")
    p.add_argument("--seed", type=int, help=f"run seed (default {_DEFAULTS.seed})")
    p.add_argument("--out", help="output root (default $QFUZZ_OUT or ./runs)")


def _env_config(args):
    cfg = EnvConfig.load(args.config) if args.config else EnvConfig()
    changes = {}
    for flag, key in (("target", "target"), ("budget_execs", "budget_execs"),
                      ("ring_k", "ring_k"), ("snapshot_s", "snapshot_s"),
                      ("max_len", "max_len"), ("seed", "seed")):
        val = getattr(args, flag, None)
        if val is not None:
            changes[key] = val
    if getattr(args, "budget_secs", None) is not None:
        changes["budget_secs"] = args.budget_secs
        if args.budget_execs is None:
            changes["budget_execs"] = None
    return cfg.replace(**changes).validate()


def _agent_config(args):
    from .agent import AgentConfig
    return AgentConfig(gamma=args.gamma, batch_size=args.batch_size, tau=args.tau,
                       lr=args.lr, reward_clip=args.reward_clip, seed=args.agent_seed)


def cmd_fuzz(args):
    from .bench import parse_policy
    cfg = _env_config(args)
    target = get_target(cfg.target)
    kind, arg = parse_policy(args.policy)
    run_dir = os.path.join(_out_root(args), f"{cfg.config_hash()}-{cfg.seed}")
    os.makedirs(run_dir, exist_ok=True)
    crash_dir = os.path.join(run_dir, "crashes")
    if kind == "random":
        eng = Engine(target, cfg, cfg.seed, action_source="random", crash_dir=crash_dir)
        report = eng.run()
    else:
        from .env import FuzzEnv
        env = FuzzEnv(cfg, target=target, engine_kwargs={"crash_dir": crash_dir})
        obs = env.reset(cfg.seed)
        done = False
        if kind == "scripted":
            i = 0
            while not done:
                obs, _, done = env.step(arg[i % len(arg)])
                i += 1
        else:
            import numpy as np
            from .agent import load_checkpoint, select_action
            if not os.path.exists(arg):
                raise FileNotFoundError(f"checkpoint not found: {arg}")
            net = load_checkpoint(arg)
            state = net.initial_state(1)
            rng = np.random.default_rng(cfg.seed)
            while not done:
                a, state = select_action(net, obs, state, args.epsilon, rng)
                obs, _, done = env.step(a)
        eng = env.engine
        report = env.report()
    cfg.save(os.path.join(run_dir, "config.txt"))
    eng.action_log.write(os.path.join(run_dir, "actions.bin"))
    report.write_csv(os.path.join(run_dir, "series.csv"))
    report.write_json(os.path.join(run_dir, "summary.json"))
    if args.write_corpus:
        eng.corpus.write_dir(os.path.join(run_dir, "corpus"))
    if args.dict_out:
        write_dictionary(os.path.join(run_dir, "dictionary.txt"), eng.dicts.persist_dict)
    print(json.dumps(report.summary(), sort_keys=True))
    logger.info("run directory: %s", run_dir)
    return 0


def cmd_train(args):
    from .agent import DoubleQLearner, agent_loop
    from .env import FuzzEnv
    cfg = _env_config(args)
    env = FuzzEnv(cfg, mode=args.mode)
    learner = DoubleQLearner(env.observation_bits, _agent_config(args))
    out = os.path.join(_out_root(args), f"train-{cfg.config_hash()}-{cfg.seed}")
    os.makedirs(out, exist_ok=True)
    cfg.save(os.path.join(out, "config.txt"))
    try:
        ckpts = agent_loop(env, learner, args.episodes, checkpoint_dir=out,
                           log_path=os.path.join(out, "train_log.csv"))
    finally:
        env.close()
    print(json.dumps({"checkpoints": ckpts, "final": ckpts[-1] if ckpts else None}))
    return 0


def cmd_bench(args):
    from .bench import ExperimentPlan, proportion_test, run_experiment
    cfg = _env_config(args)
    plan = ExperimentPlan(
        target=cfg.target, policies=tuple(p.strip() for p in args.policies.split(",")),
        repeats=args.repeats, budget_execs=cfg.budget_execs or _DEFAULTS.budget_execs,
        base_seed=cfg.seed, ring_k=cfg.ring_k, snapshot_s=cfg.snapshot_s,
        max_len=cfg.max_len, thresholds=tuple(args.threshold or ()), workers=args.workers)
    out = os.path.join(_out_root(args), f"bench-{cfg.config_hash()}-{cfg.seed}")
    report = run_experiment(plan, out)
    summary = {"out": out}
    for p in plan.policies:
        summary[p] = {"best": report.best(p), "mean": report.mean(p),
                      "runs": len(report.finals(p))}
    if len(plan.policies) == 2 and args.threshold:
        a, b = plan.policies
        t = args.threshold[0]
        summary["p_value"] = proportion_test(report.breakthroughs(b, t), plan.repeats,
                                             report.breakthroughs(a, t), plan.repeats)
    print(json.dumps(summary, sort_keys=True))
    return 0


def replay_run(run_dir):
    """Re-execute a recorded run; returns ``(ok, message)``."""
    cfg = EnvConfig.load(os.path.join(run_dir, "config.txt"))
    with open(os.path.join(run_dir, "summary.json")) as fh:
        recorded = json.load(fh)
    if recorded["config_hash"] != cfg.config_hash():
        return False, "config hash in summary does not match config.txt"
    log = ActionLog.read(os.path.join(run_dir, "actions.bin"))
    n = recorded["executions"]
    script = log.expand(n)
    eng = Engine(get_target(cfg.target), cfg.replace(budget_execs=n, budget_secs=None),
                 recorded["seed"], action_source="script", script=script)
    report = eng.run()
    if report.final_cov != recorded["final_cov"]:
        return False, f"final coverage {report.final_cov} != recorded {recorded['final_cov']}"
    if report.corpus_digest != recorded["corpus_digest"]:
        return False, "corpus contents differ from recording"
    return True, f"replayed {n} executions, final coverage {report.final_cov}"


def cmd_replay(args):
    ok, msg = replay_run(args.run_dir)
    print(msg, file=sys.stdout if ok else sys.stderr)
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="qfuzz", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuzz", help="one fuzzing run with a chosen policy")
    _add_env_flags(p)
    p.add_argument("--policy", default="random",
                   help="random | trained:CKPT | scripted:A,B,... (default random)")
    p.add_argument("--epsilon", type=float, default=0.0,
                   help="exploration rate for trained policies (default 0)")
    p.add_argument("--write-corpus", action="store_true", help="write corpus/ directory")
    p.add_argument("--dict-out", action="store_true",
                   help="write the persistent dictionary as hex lines")
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("train", help="train a Double-Q agent, one checkpoint per episode")
    _add_env_flags(p)
    p.add_argument("--episodes", type=int, default=3, help="training episodes (default 3)")
    p.add_argument("--mode", choices=("sync", "async"), default="sync",
                   help="deterministic interleave or free-running engine (default sync)")
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--tau", type=int, default=1000, help="target sync period (train steps)")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--reward-clip", type=float, default=None)
    p.add_argument("--agent-seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="repeated runs comparing policies")
    _add_env_flags(p)
    p.add_argument("--policies", default="random", help="comma-separated policy specs")
    p.add_argument("--repeats", type=int, default=25, help="runs per policy (default 25)")
    p.add_argument("--threshold", type=int, action="append",
                   help="coverage threshold for breakthrough counts (repeatable)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("replay", help="re-execute a recorded run and verify it")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, KeyError, FileNotFoundError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"qfuzz: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
