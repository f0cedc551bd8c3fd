"""Command-line entry point: ``fortattack <command> ...``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 I/O or file
format problems, 4 numerical failure (non-finite values), 5 replay mismatch.
Log verbosity comes from the FORTATTACK_LOG_LEVEL environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config, to_dict
from .curriculum import OpponentLibrary, SnapshotTracker, StrategySnapshot, ensemble_train, evaluate_matchup
from .env import Team
from .errors import ConfigError, NonFiniteError, ReplayMismatchError, TrajectoryFormatError
from .nn.serialize import CheckpointFormatError
from .policy import PolicyParams
from .ppo import CURVE_HEADER, RandomController, train_iter
from .replay import TrajectoryRecord, plot_curves, record_episode, render_frames

log = logging.getLogger("fortattack")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_REPLAY = 0, 2, 3, 4, 5


# config resolution

def resolve_config(args) -> RunConfig:
    """File values, then command-line overrides, validated."""
    path = getattr(args, "config", None)
    if path is not None and not Path(path).is_file():
        raise ConfigError(f"{path} not found", "--config")
    cfg = load_config(path) if path is not None else RunConfig()
    train = cfg.train
    if getattr(args, "seed", None) is not None:
        train = dataclasses.replace(train, seed=args.seed)
    if getattr(args, "iterations", None) is not None:
        train = dataclasses.replace(train, iterations=args.iterations)
    if getattr(args, "workers", None) is not None:
        train = dataclasses.replace(train, workers=args.workers)
    cfg = dataclasses.replace(cfg, train=train)
    cfg.validate()
    return cfg


def _run_id(cfg: RunConfig, command: str, extra: dict | None = None) -> str:
    blob = json.dumps({"command": command, "config": cfg.to_dict(), "extra": extra or {}}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _prepare_out(path) -> Path:
    out = Path(path)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise ConfigError(f"{out} exists and is not an empty directory", "--out")
    return out


def load_checkpoint(path, team: Team, cfg: RunConfig) -> PolicyParams:
    """Load a policy for ``team`` and check it was trained for this team and these team sizes."""
    params, meta = PolicyParams.load(path)
    where = f"checkpoint {path}"
    if "team" in meta and Team.parse(meta["team"]) != team:
        raise ConfigError(f"{where} holds a {meta['team']} policy but is used for the {team.name.lower()} team", "checkpoint")
    sizes = (meta.get("n_guards"), meta.get("n_attackers"))
    if None not in sizes and sizes != (cfg.env.n_guards, cfg.env.n_attackers):
        raise ConfigError(f"{where} was trained for {sizes[0]}v{sizes[1]} but the config is "
                          f"{cfg.env.n_guards}v{cfg.env.n_attackers}", "env.n_guards")
    return params


def policy_ref(source: str | None) -> str:
    """Location-independent name for a policy: file name plus content digest."""
    if source in (None, "random"):
        return "random"
    digest = hashlib.sha256(Path(source).read_bytes()).hexdigest()[:16]
    return f"{Path(source).name}@sha256:{digest}"


def _side(source: str | None, team: Team, cfg: RunConfig):
    return None if source in (None, "random") else load_checkpoint(source, team, cfg)


def load_library(path, train_team: Team) -> OpponentLibrary:
    """A library manifest, or a training run manifest whose opponent-team checkpoints form the library."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON ({exc})", "library") from exc
    if isinstance(data, dict) and "checkpoints" in data and "snapshots" not in data:
        opp = Team(1 - train_team).name.lower()
        snaps = [StrategySnapshot(Team.parse(e["team"]), str(path.parent / e["path"]), int(e["iteration"]),
                                  math.nan if e.get("mean_reward") is None else float(e["mean_reward"]),
                                  f"{e['reason']}@{e['iteration']}")
                 for e in data["checkpoints"] if e.get("team") == opp]
        return OpponentLibrary(snaps)
    return OpponentLibrary.from_manifest(path)


# training (shared by train and ensemble)

def _train_loop(results, cfg: RunConfig, out: Path, run_id: str, command: str, extra: dict) -> None:
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    index: dict[tuple[str, int, bool], dict] = {}
    trackers: dict[Team, SnapshotTracker] = {}
    curves: dict[Team, list[float]] = {Team.GUARD: [], Team.ATTACKER: []}
    t = cfg.train

    def save(team: Team, params: PolicyParams, iteration: int, reason: str, reward: float) -> None:
        key = (team.name.lower(), iteration, reason == "final")
        if key in index:  # same iteration picked by more than one rule
            index[key]["reason"] += f"+{reason}"
            return
        name = f"{key[0]}_{iteration:05d}.fapk" if reason != "final" else f"{key[0]}_final.fapk"
        meta = {"team": team.name.lower(), "iteration": iteration, "reason": reason, "run_id": run_id,
                "n_guards": cfg.env.n_guards, "n_attackers": cfg.env.n_attackers,
                "mean_reward": None if reward != reward else reward}
        params.save(ckpt_dir / name, meta)
        index[key] = {"team": key[0], "iteration": iteration, "reason": reason,
                      "path": f"checkpoints/{name}", "mean_reward": meta["mean_reward"]}

    last = None
    with open(out / "curves.tsv", "w") as curve_fh, open(out / "stats.jsonl", "w") as stats_fh:
        curve_fh.write(CURVE_HEADER + "\n")
        for res in results:
            last = res
            for p in res.curve:
                curve_fh.write(p.row() + "\n")
                curves[p.team].append(p.mean_episode_reward)
            for team, st in sorted(res.stats.items()):
                stats_fh.write(json.dumps({"iteration": res.iteration, "team": team.name.lower(),
                                           **st.as_dict()}, sort_keys=True) + "\n")
            for team, params in sorted(res.params.items()):
                tracker = trackers.setdefault(team, SnapshotTracker(t.snapshot_sigma, t.snapshot_window,
                                                                     t.snapshot_every))
                reward = res.curve[int(team)].mean_episode_reward
                for i, reason, snap in tracker.feed(reward, (params.copy(), reward)):
                    save(team, snap[0], i + 1, reason, snap[1])
            log.info("iteration %d done", res.iteration)
    if last is not None:
        for team, tracker in sorted(trackers.items()):
            for i, reason, snap in tracker.finish():
                save(team, snap[0], i + 1, reason, snap[1])
            save(team, last.params[team], last.iteration, "final", last.curve[int(team)].mean_episode_reward)
    entries = [index[k] for k in sorted(index)]
    plot_curves({f"{team.name.lower()}": v for team, v in curves.items() if v}, out / "curves.png",
                sigma=t.snapshot_sigma)
    manifest = {"run_id": run_id, "command": command, "version": __version__, "seed": t.seed,
                "config": cfg.to_dict(), **extra,
                "layout": {"config": "config.json", "curves": "curves.tsv", "curve_plot": "curves.png",
                           "stats": "stats.jsonl", "checkpoints": "checkpoints/"},
                "checkpoints": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = _prepare_out(args.out)
    t = cfg.train
    sides = {}
    for team, mode, init in ((Team.GUARD, t.guard, t.init_guard), (Team.ATTACKER, t.attacker, t.init_attacker)):
        sides[team] = RandomController() if mode == "random" else (init and load_checkpoint(init, team, cfg))
    results = train_iter(cfg.env, cfg.ppo, cfg.graph, t.iterations, t.seed,
                         guard=sides[Team.GUARD], attacker=sides[Team.ATTACKER], workers=t.workers)
    run_id = _run_id(cfg, "train")
    _train_loop(results, cfg, out, run_id, "train", {})
    print(f"run {run_id}: {t.iterations} iterations written to {out}")
    return EXIT_OK


def cmd_ensemble(args) -> int:
    cfg = resolve_config(args)
    if not Path(args.library).is_file():
        raise FileNotFoundError(f"library manifest {args.library} not found")
    team = Team.parse(args.team)
    library = load_library(args.library, team)
    for snap in library.snapshots:
        load_checkpoint(snap.checkpoint, snap.team, cfg)
    init_path = cfg.train.init_guard if team == Team.GUARD else cfg.train.init_attacker
    init = load_checkpoint(init_path, team, cfg) if init_path else None
    out = _prepare_out(args.out)
    results = ensemble_train(team, library, cfg.env, cfg.ppo, cfg.graph, cfg.train.iterations, cfg.train.seed,
                             init=init, workers=cfg.train.workers)
    lib_info = {"library": [{"checkpoint": s.checkpoint, "team": s.team.name.lower(), "label": s.label,
                             "weight": float(w)} for s, w in zip(library.snapshots, library.weights)],
                "train_team": team.name.lower()}
    run_id = _run_id(cfg, "ensemble", lib_info)
    _train_loop(results, cfg, out, run_id, "ensemble", lib_info)
    print(f"run {run_id}: ensemble training of {team.name.lower()} against {len(library)} snapshots, written to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    guard = _side(args.guard, Team.GUARD, cfg)
    attacker = _side(args.attacker, Team.ATTACKER, cfg)
    seed = cfg.train.seed
    report = evaluate_matchup(guard, attacker, cfg.env, args.episodes, seed, workers=cfg.train.workers)
    body = {"guard": args.guard, "attacker": args.attacker, "seed": seed, **report.as_dict()}
    text = json.dumps(body, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(f"guard win-rate {report.win_rate:.3f} over {args.episodes} episodes "
          f"(guard reward {report.guard_mean_reward:.3f}, attacker reward {report.attacker_mean_reward:.3f})")
    return EXIT_OK


def cmd_record(args) -> int:
    cfg = resolve_config(args)
    if not 0 <= args.focus_agent < cfg.env.n_agents:
        raise ConfigError(f"must be in 0..{cfg.env.n_agents - 1}", "--focus-agent")
    guard = _side(args.guard, Team.GUARD, cfg)
    attacker = _side(args.attacker, Team.ATTACKER, cfg)
    rec = record_episode(cfg.env, guard, attacker, cfg.train.seed, args.focus_agent,
                         guard_ref=policy_ref(args.guard), attacker_ref=policy_ref(args.attacker))
    rec.save(args.out)
    print(f"recorded {len(rec)} steps to {args.out}")
    return EXIT_OK


def cmd_render(args) -> int:
    cfg = resolve_config(args)
    record = TrajectoryRecord.load(args.trajectory)
    paths = render_frames(record, cfg.style, args.out, workers=cfg.train.workers)
    print(f"rendered {len(paths)} frames to {args.out}")
    return EXIT_OK


def cmd_check_config(args) -> int:
    cfg = resolve_config(args)
    print(json.dumps(to_dict(cfg), indent=2, sort_keys=True))
    return EXIT_OK


# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fortattack", description="FortAttack multi-agent training toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help: str, out_required: bool = True):
        p.add_argument("--config", help="JSON run config (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="overrides train.seed")
        p.add_argument("--workers", type=int, help="worker processes; results are merged in a fixed order")
        p.add_argument("--out", required=out_required, help=out_help)

    p = sub.add_parser("train", help="self-play PPO training")
    common(p, "run directory to create")
    p.add_argument("--iterations", type=int, help="overrides train.iterations")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ensemble", help="train one team against a library of frozen opponents")
    common(p, "run directory to create")
    p.add_argument("--iterations", type=int, help="overrides train.iterations")
    p.add_argument("--library", required=True, help="opponent library manifest (JSON)")
    p.add_argument("--team", default="guard", choices=["guard", "attacker"], help="team to train")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("eval", help="win-rate of a guard policy against an attacker policy")
    common(p, "report file (JSON)", out_required=False)
    p.add_argument("guard", help="guard checkpoint, or 'random'")
    p.add_argument("attacker", help="attacker checkpoint, or 'random'")
    p.add_argument("--episodes", type=int, default=200)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("record", help="record one episode as a trajectory file")
    common(p, "trajectory file to write")
    p.add_argument("--guard", default="random", help="guard checkpoint, or 'random'")
    p.add_argument("--attacker", default="random", help="attacker checkpoint, or 'random'")
    p.add_argument("--focus-agent", type=int, default=0, help="agent whose attention is logged")
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("render", help="render a trajectory to PNG frames")
    common(p, "frame directory")
    p.add_argument("trajectory")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("check-config", help="validate a config and print it fully resolved")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_check_config)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FORTATTACK_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, TrajectoryFormatError, CheckpointFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ReplayMismatchError as exc:
        print(f"replay mismatch: {exc}", file=sys.stderr)
        return EXIT_REPLAY


if __name__ == "__main__":
    sys.exit(main())
