"""Command-line entry point: simulate / train / sweep / analyze / report.

Exit codes: 0 success, 1 validation error (bad flags, bad config, bad
inputs), 2 runtime failure (diverged training, crashed run, interrupt).
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .configs import ConfigError, load_config, resolve_workers
from .env import ReorientEnv
from .experiments import (
    EXPERIMENT_IDS,
    SamplerError,
    experiment_preset,
    fingertip_mask,
)
from .hand import HandSpecError, build_hand
from .kvfile import KVError
from .learner import TrainingDiverged, load_checkpoint, train
from .nets import policy_forward
from .regions import N_REGIONS, REGIONS, mask_of
from .report import analyze_sweep, emit_report
from .sim import SimulationDiverged
from .sweep import SnapshotMismatch, run_sweep

VALIDATION_ERRORS = (
    ConfigError,
    KVError,
    HandSpecError,
    SamplerError,
    SnapshotMismatch,
    FileNotFoundError,
    ValueError,
)


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors, per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="tpl",
        description="Tactile sensor placement study: simulate, train, sweep, analyze, report.",
    )
    parser.add_argument("--version", action="version", version=f"tpl {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    def common(p, seed=True, out=True):
        p.add_argument("--config", metavar="PATH", help="key-value config file")
        if seed:
            p.add_argument("--seed", type=int, default=0, metavar="N")
        if out:
            p.add_argument("--out", metavar="DIR", required=False)

    p_sim = sub.add_parser("simulate", help="scripted rollout or episode-log replay -> state trace CSV")
    common(p_sim)
    p_sim.add_argument("--steps", type=int, default=200)
    p_sim.add_argument("--script", choices=("hold", "curl", "random"), default="curl")
    p_sim.add_argument("--checkpoint", metavar="PATH", help="drive the hand with a trained policy")
    p_sim.add_argument("--sensors", default="all",
                       help="B1, B2, all, or a comma-separated region list")
    p_sim.add_argument("--replay", metavar="EPISODES_JSONL",
                       help="take seed + sensor mask from an episode log")
    p_sim.add_argument("--index", type=int, default=0, help="record index within --replay")

    p_train = sub.add_parser("train", help="single training run from a config")
    common(p_train)
    p_train.add_argument("--sensors", default="B1",
                         help="B1, B2, all, or a comma-separated region list")

    p_sweep = sub.add_parser("sweep", help="run a preset experiment's configuration x seed grid")
    common(p_sweep, seed=False)
    p_sweep.add_argument("--experiment", required=True, metavar="ID",
                         help=f"one of {', '.join(EXPERIMENT_IDS)}")
    p_sweep.add_argument("--workers", type=int, default=None, metavar="N")
    p_sweep.add_argument("--resume", action="store_true",
                         help="skip runs already completed under --out")

    p_an = sub.add_parser("analyze", help="sweep dir -> metrics, importance map, heat map")
    p_an.add_argument("sweep_dir", metavar="SWEEP_DIR")
    p_an.add_argument("--out", metavar="DIR")
    p_an.add_argument("--baseline", metavar="CURVE_CSV",
                      help="anchor convergence speed to this baseline curve")

    p_rep = sub.add_parser("report", help="analysis dirs -> Markdown report + CSV tables")
    p_rep.add_argument("analysis_dirs", nargs="+", metavar="ANALYSIS_DIR")
    p_rep.add_argument("--out", required=True, metavar="DIR")
    return parser


def _parse_sensors(text: str) -> int:
    text = text.strip()
    if text.upper() == "B1":
        return 0
    if text.upper() == "B2":
        return fingertip_mask()
    if text.lower() == "all":
        return (1 << N_REGIONS) - 1
    return mask_of([t for t in text.split(",") if t.strip()])


def _make_env_factory(config, model, sensor_mask):
    def make_env(seed):
        return ReorientEnv(
            model,
            config.object,
            sensor_mask=sensor_mask,
            reward=config.env.reward,
            physics=config.physics,
            randomization=config.env.randomization,
            noise=config.env.noise,
            action_delta=config.env.action_delta,
            seed=seed,
        )

    return make_env


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(args) -> int:
    config = load_config(args.config)
    mask = _parse_sensors(args.sensors)
    seed = args.seed
    if args.replay:
        with open(args.replay, "r", encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        if not records:
            raise ValueError(f"{args.replay}: no episode records")
        if not 0 <= args.index < len(records):
            raise ValueError(f"--index {args.index} out of range (log has {len(records)} episodes)")
        rec = records[args.index]
        seed = int(rec["seed"])
        mask = int(rec["config_bitmask"])
        print(f"replaying episode {args.index}: seed={seed} mask=0x{mask:05x}")

    model = build_hand(config.env.hand_file)
    env = _make_env_factory(config, model, mask)(0)
    obs = env.reset(seed=seed)

    policy = None
    if args.checkpoint:
        params, _, _, obs_rms = load_checkpoint(args.checkpoint)
        h = np.zeros(params.hidden_rec, dtype=params.dtype)
        policy = [params, h, obs_rms]
    rng = np.random.default_rng(seed)
    delta = config.env.action_delta
    n_act = model.actuated_count

    out_path = args.out or "trace.csv"
    if os.path.isdir(out_path):
        out_path = os.path.join(out_path, "trace.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step", "time", "d", "r", "reward", "terminated",
             "obj_x", "obj_y", "obj_z", "quat_w", "quat_x", "quat_y", "quat_z"]
            + [f"f_{r.name}" for r in REGIONS]
        )
        for step in range(args.steps):
            if policy is not None:
                net_in = policy[2].normalize(obs) if policy[2] is not None else obs
                dist, _, policy[1] = policy_forward(
                    policy[0], net_in.astype(policy[0].dtype), policy[1]
                )
                action = dist.mean_action()
            elif args.script == "hold":
                action = np.zeros(n_act)
            elif args.script == "random":
                action = rng.uniform(-delta, delta, n_act)
            else:  # curl: close the flexion joints gently
                action = np.full(n_act, 0.25 * delta)
            res = env.step(action)
            obs = res.observation
            st = env.state
            forces = np.linalg.norm(env.last_tactile[:, :3], axis=1)
            writer.writerow(
                [step + 1, f"{st.time:.4f}", f"{res.info['d']:.6f}", f"{res.info['r']:.6f}",
                 f"{res.reward:.6f}", res.terminated]
                + [f"{v:.6f}" for v in st.object_pos]
                + [f"{v:.6f}" for v in st.object_quat]
                + [f"{v:.6f}" for v in forces]
            )
            if res.episode_over:
                break
    print(f"trace written to {out_path} ({step + 1} steps, end={res.terminated})")
    return 0


def _cmd_train(args) -> int:
    config = load_config(args.config)
    mask = _parse_sensors(args.sensors)
    model = build_hand(config.env.hand_file)
    out_dir = args.out
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.snapshot.cfg"), "w", encoding="utf-8") as fh:
            fh.write(config.snapshot_text())

    def progress(epoch, curve, stats):
        if epoch % 10 == 0 or epoch == config.learner.epochs:
            print(
                f"epoch {epoch}/{config.learner.epochs} "
                f"return={curve.mean_return[-1]:.2f} "
                f"streak={curve.consecutive_successes[-1]:.2f} "
                f"kl={stats['approx_kl']:.4f}"
            )

    result = train(
        _make_env_factory(config, model, mask),
        config.learner,
        master_seed=args.seed,
        out_dir=out_dir,
        config_hash=config.hash(),
        progress=progress,
    )
    print(
        f"trained {len(result.curve)} epochs; final return "
        f"{result.summary['final_return']}, streak {result.summary['final_consecutive_successes']}"
    )
    if out_dir:
        print(f"outputs under {out_dir}")
    return 0


def _cmd_sweep(args) -> int:
    config = load_config(args.config)
    spec = experiment_preset(
        args.experiment,
        seeds_per_config=config.sweep.seeds_per_config,
        sweep_count=config.sweep.count,
        sweep_seed=config.sweep.sweep_seed,
    )
    out_dir = args.out or f"sweep_{spec.id}"
    workers = resolve_workers(args.workers, config)

    def progress(run_id, status, outcome):
        msg = f"[{spec.id}] {run_id}: {status}"
        if status == "failed":
            msg += f" ({outcome.get('error')})"
        print(msg)

    counts = run_sweep(spec, config, out_dir, workers=workers,
                       resume=args.resume, progress=progress)
    print(
        f"sweep {spec.id}: {counts['done']} done, {counts['skipped']} skipped, "
        f"{counts['failed']} failed -> {out_dir}"
    )
    return 0 if counts["failed"] == 0 else 2


def _cmd_analyze(args) -> int:
    analysis = analyze_sweep(args.sweep_dir, args.out, args.baseline)
    out = args.out or os.path.join(args.sweep_dir, "analysis")
    n_cfg = len(analysis["configs"])
    imp = "with" if analysis["importance"] else "without"
    print(f"analyzed {n_cfg} configurations ({imp} importance map) -> {out}")
    return 0


def _cmd_report(args) -> int:
    for d in args.analysis_dirs:
        if not os.path.isdir(d):
            raise ValueError(f"{d}: not a directory")
    dirs = []
    for d in args.analysis_dirs:
        if os.path.exists(os.path.join(d, "analysis.json")):
            dirs.append(d)
        elif os.path.exists(os.path.join(d, "analysis", "analysis.json")):
            dirs.append(os.path.join(d, "analysis"))
    if not dirs:
        raise ValueError(
            "no analysis.json found under the given directories; run `tpl analyze` first"
        )
    path = emit_report(dirs, args.out)
    print(f"report written to {path}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "sweep": _cmd_sweep,
    "analyze": _cmd_analyze,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        sys.stderr.write("tpl: error: a command is required\n")
        return 1
    try:
        return _COMMANDS[args.command](args)
    except VALIDATION_ERRORS as e:
        sys.stderr.write(f"tpl {args.command}: {e}\n")
        return 1
    except KeyboardInterrupt:
        sys.stderr.write(f"tpl {args.command}: interrupted (manifest flushed)\n")
        return 2
    except (TrainingDiverged, SimulationDiverged, RuntimeError, OSError) as e:
        sys.stderr.write(f"tpl {args.command}: runtime failure: {e}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
