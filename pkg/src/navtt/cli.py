"""Pipeline entry point: one subcommand per stage of the lab.

    gen-map          write the navigation map
    train-agent      PPO training, checkpoints + episode log
    rollout          sample agent trajectories from a checkpoint
    gen-human        sample scripted human-like trajectories
    encode           materialize SYM/VIS/TD/BC encodings for a corpus
    train-classifier cross-validate, then train repeats of one model kind
    evaluate         score trained models into a Table 3-shaped report
    serve            launch the HNTT judging service
    report           render a saved metrics file

Every invocation writes its merged config, arguments, and artifacts under
runs/<timestamp>/<subcommand>/ so a run can be reproduced from the
directory alone. Config files are JSON with map/ppo/classifier/study
sections; command-line flags override file values.
"""

import argparse
import glob
import json
import os
import sys
import time

import numpy as np

from . import corpus as corpuslib
from .classifiers import (
    MODEL_KINDS,
    ClassifierModel,
    build_dataset,
    kfold_cv,
    predict_dataset,
    split_by_generator,
    train_classifier,
)
from .encoders import (
    encode_barcode,
    encode_symbolic,
    encode_topdown,
    render_frames,
)
from .evalkit import (
    MetricError,
    MetricsReport,
    aggregate_judgments,
    identity_accuracy,
    pairwise_accuracy,
    rank_correlation_vs_judges,
)
from .images import write_png
from .navsim import NavEnv, default_map, load_map, save_map
from .policies import (
    SYNTHETIC_PLAYERS,
    PolicyNetSpec,
    PPOConfig,
    evaluate_policy,
    ppo_train,
    rollout,
    save_trajectories,
    scripted_human_policy,
)

DEFAULT_CONFIG = {
    "map": {},
    "ppo": {"hidden": [128, 128], "entropy_coef": 0.001,
            "total_steps": 2_000_000},
    "classifier": {"frame_stride": 4, "folds": 5, "repeats": 5,
                   "val_fraction": 0.25},
    "study": {"study": 1, "seed": 0},
}


class CLIError(RuntimeError):
    pass


def load_config(path=None) -> dict:
    config = json.loads(json.dumps(DEFAULT_CONFIG))
    if path:
        try:
            with open(path) as fp:
                loaded = json.load(fp)
        except (OSError, json.JSONDecodeError) as exc:
            raise CLIError(f"cannot read config {path!r}: {exc}") from exc
        for section, values in loaded.items():
            if section not in config:
                raise CLIError(f"unknown config section {section!r}")
            config[section].update(values)
    return config


def new_run_dir(base: str, subcommand: str) -> str:
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    for attempt in range(1000):
        tag = stamp if attempt == 0 else f"{stamp}-{attempt}"
        path = os.path.join(base, tag, subcommand)
        if not os.path.exists(path):
            os.makedirs(path)
            return path
    raise CLIError(f"cannot allocate a run directory under {base!r}")


def snapshot_config(run_dir: str, args, config: dict):
    blob = {"argv": sys.argv[1:], "subcommand": args.command,
            "config": config,
            "flags": {k: v for k, v in vars(args).items()
                      if k not in ("command", "func") and v is not None}}
    with open(os.path.join(run_dir, "config.json"), "w") as fp:
        json.dump(blob, fp, indent=2, sort_keys=True, default=str)
        fp.write("\n")


def load_spec(args):
    return load_map(args.map) if getattr(args, "map", None) else default_map()


def require_file(path: str, hint: str) -> str:
    if not os.path.exists(path):
        raise CLIError(f"missing artifact: {path!r}; {hint}")
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_map(args, config, run_dir):
    spec = default_map(**config["map"])
    path = os.path.join(run_dir, "map.txt")
    save_map(spec, path)
    print(f"map: {spec.width}x{spec.height} cells, "
          f"{len(spec.goal_locations)} goals, "
          f"{len(spec.spawn_points)} spawns -> {path}")
    return 0


def cmd_train_agent(args, config, run_dir):
    spec = load_spec(args)
    section = dict(config["ppo"])
    hidden = tuple(section.pop("hidden", (128, 128)))
    for key in ("total_steps", "entropy_coef", "learning_rate"):
        value = getattr(args, key, None)
        if value is not None:
            section[key] = value
    if args.seed is not None:
        section["seed"] = args.seed
    ppo_config = PPOConfig(**section)
    net_spec = PolicyNetSpec.for_map(spec, args.kind, hidden=hidden)
    result = ppo_train(lambda: NavEnv(spec, spawn_mode="train"), net_spec,
                       ppo_config,
                       checkpoint_dir=os.path.join(run_dir, "checkpoints"))
    model_path = os.path.join(run_dir, "model.npz")
    result.model.save(model_path, meta={"tag": "final",
                                        "env_steps": result.total_steps})
    with open(os.path.join(run_dir, "episodes.jsonl"), "w") as fp:
        for episode in result.episodes:
            fp.write(json.dumps(episode) + "\n")
    stats = evaluate_policy(result.model, spec, n_episodes=100,
                            seed=section.get("seed", 0) + 7000)
    summary = {"kind": args.kind, "total_steps": result.total_steps,
               "episodes": len(result.episodes),
               "eval_success_rate": stats["success_rate"],
               "eval_mean_time_to_goal": stats["mean_time_to_goal"],
               "eval_outcomes": stats["outcomes"]}
    with open(os.path.join(run_dir, "summary.json"), "w") as fp:
        json.dump(summary, fp, indent=2)
        fp.write("\n")
    print(f"{args.kind}: {result.total_steps:,} steps, "
          f"eval success {stats['success_rate']:.2f} -> {model_path}")
    return 0


def cmd_rollout(args, config, run_dir):
    spec = load_spec(args)
    require_file(args.checkpoint,
                 "train one with `navtt train-agent` first")
    trajs = rollout(args.checkpoint, spec, n_episodes=args.episodes,
                    seed=args.seed or 0, goal_sweep=args.goal_sweep,
                    generator_id=args.generator_id)
    path = os.path.join(run_dir, "trajectories.jsonl")
    save_trajectories(trajs, path)
    outcomes = {o: sum(1 for t in trajs if t.outcome == o)
                for o in ("goal", "death", "timeout")}
    print(f"{len(trajs)} trajectories ({outcomes}) -> {path}")
    return 0


def cmd_gen_human(args, config, run_dir):
    spec = load_spec(args)
    players = list(SYNTHETIC_PLAYERS)[:args.players]
    n_goals = len(spec.goal_locations)
    trajs = []
    for player_id in players:
        traits = SYNTHETIC_PLAYERS[player_id]
        for episode in range(args.episodes):
            goal = episode % n_goals
            trajs.append(scripted_human_policy(
                spec, goal, traits=traits,
                seed=(args.seed or 0) * 10_000 + episode,
                player_id=player_id,
                traj_id=f"{player_id}-e{episode:03d}"))
    path = os.path.join(run_dir, "trajectories.jsonl")
    save_trajectories(trajs, path)
    rate = sum(t.outcome == "goal" for t in trajs) / len(trajs)
    print(f"{len(trajs)} scripted-human trajectories "
          f"(goal rate {rate:.2f}) -> {path}")
    return 0


def cmd_encode(args, config, run_dir):
    spec = load_spec(args)
    manifest, trajs = corpuslib.read_corpus(args.corpus)
    stride = args.stride or config["classifier"]["frame_stride"]
    entries = manifest.entries if args.split == "all" \
        else manifest.by_split(args.split)
    bounds = spec.bounds
    for name in ("symbolic", "topdown", "barcode", "visual"):
        os.makedirs(os.path.join(run_dir, name), exist_ok=True)
    for entry in entries:
        traj = trajs[entry.trajectory_id]
        tid = entry.trajectory_id
        np.savez_compressed(
            os.path.join(run_dir, "symbolic", f"{tid}.npz"),
            positions=encode_symbolic(traj))
        write_png(encode_topdown(traj, bounds),
                  os.path.join(run_dir, "topdown", f"{tid}.png"))
        frames = render_frames(traj, spec)
        write_png(encode_barcode(frames),
                  os.path.join(run_dir, "barcode", f"{tid}.png"))
        frame_dir = os.path.join(run_dir, "visual", tid)
        os.makedirs(frame_dir, exist_ok=True)
        for i, frame in enumerate(frames[::stride]):
            write_png(frame, os.path.join(frame_dir, f"f{i:04d}.png"))
    print(f"encoded {len(entries)} trajectories (visual stride {stride}) "
          f"-> {run_dir}")
    return 0


def _dataset_for(kind, manifest, trajs, spec, splits, stride):
    entries = [e for e in manifest.entries if e.split in splits]
    return build_dataset(kind, [trajs[e.trajectory_id] for e in entries],
                         spec, frame_stride=stride)


def cmd_train_classifier(args, config, run_dir):
    spec = load_spec(args)
    section = config["classifier"]
    manifest, trajs = corpuslib.read_corpus(args.corpus)
    stride = args.stride or section["frame_stride"]
    devset = _dataset_for(args.kind, manifest, trajs, spec,
                          ("train", "val"), stride)
    testset = _dataset_for(args.kind, manifest, trajs, spec,
                           ("test",), stride)
    cv = kfold_cv(args.kind, devset, k=args.folds or section["folds"],
                  seed=args.seed or 0)
    with open(os.path.join(run_dir, "cv.json"), "w") as fp:
        json.dump({"best": cv.best_hyperparams.to_json(),
                   "accuracies": cv.accuracies,
                   "folds": cv.fold_assignments}, fp, indent=2)
        fp.write("\n")
    true_sources = {e.trajectory_id: e.source for e in manifest.entries}
    accuracies = []
    repeats = args.repeats or section["repeats"]
    for repeat in range(repeats):
        train, val = split_by_generator(
            devset, val_fraction=section["val_fraction"], seed=repeat)
        run = train_classifier(args.kind, train, val,
                               hyperparams=cv.best_hyperparams, seed=repeat)
        labels = {v.trajectory_id: v.majority_label
                  for v in predict_dataset(run.model, testset)}
        accuracies.append(identity_accuracy(labels, true_sources))
        run.model.save(os.path.join(run_dir, f"{args.kind}-r{repeat}.npz"))
        with open(os.path.join(run_dir, f"train-r{repeat}.jsonl"), "w") as fp:
            fp.write(run.run_log())
    metrics = {"kind": args.kind, "identity": accuracies,
               "hyperparams": cv.best_hyperparams.to_json()}
    with open(os.path.join(run_dir, "metrics.json"), "w") as fp:
        json.dump(metrics, fp, indent=2)
        fp.write("\n")
    mean = float(np.mean(accuracies))
    std = float(np.std(accuracies))
    print(f"{args.kind}: held-out identity accuracy "
          f"{mean:.3f} ({std:.3f}) over {repeats} repeats -> {run_dir}")
    return 0


def _load_study_records(data_dir):
    """Trial truth rows + judgment rows + video->trajectory map from a
    service record store."""
    trials, videos, judgments = [], {}, []
    studies_path = os.path.join(data_dir, "studies.jsonl")
    require_file(studies_path, "run a study through `navtt serve` first")
    with open(studies_path) as fp:
        for line in fp:
            study = json.loads(line)
            videos.update(study["videos"])
            for t in study["trials"]:
                trials.append({k: t[k] for k in
                               ("trial_id", "video_a", "video_b",
                                "source_a", "source_b", "condition")})
    judgments_path = os.path.join(data_dir, "judgments.jsonl")
    if os.path.exists(judgments_path):
        with open(judgments_path) as fp:
            judgments = [json.loads(line) for line in fp if line.strip()]
    return trials, judgments, videos


def cmd_evaluate(args, config, run_dir):
    spec = load_spec(args)
    manifest, trajs = corpuslib.read_corpus(args.corpus)
    stride = args.stride or config["classifier"]["frame_stride"]
    true_sources = {e.trajectory_id: e.source for e in manifest.entries}
    judge_data = None
    if args.study_data:
        trials, judgments, videos = _load_study_records(args.study_data)
        if judgments:
            judge_data = (aggregate_judgments(trials, judgments), videos)
    report = MetricsReport()
    metrics_rows = []
    for kind in args.kinds.split(","):
        kind = kind.strip()
        if kind not in MODEL_KINDS:
            raise CLIError(f"unknown model kind {kind!r}; "
                           f"choose from {', '.join(MODEL_KINDS)}")
        paths = sorted(glob.glob(os.path.join(args.models, f"{kind}*.npz")))
        if not paths:
            raise CLIError(f"missing artifact: no {kind} model under "
                           f"{args.models!r}; run `navtt train-classifier` "
                           f"first")
        testset = _dataset_for(kind, manifest, trajs, spec, ("test",), stride)
        identity, ha_acc, ha_rho, hs_acc, hs_rho = [], [], [], [], []
        for path in paths:
            model = ClassifierModel.load(path)
            verdicts = {v.trajectory_id: v
                        for v in predict_dataset(model, testset)}
            identity.append(identity_accuracy(
                {tid: v.majority_label for tid, v in verdicts.items()},
                true_sources))
            if judge_data is not None:
                truth, videos = judge_data
                logits = {}
                for vid, tid in videos.items():
                    if tid in verdicts:
                        logits[vid] = verdicts[tid].trajectory_logit
                for condition, accs, rhos in (
                        ("human-agent", ha_acc, ha_rho),
                        ("hybrid-symbolic", hs_acc, hs_rho)):
                    try:
                        acc, _, _ = pairwise_accuracy(logits, truth,
                                                      condition)
                        rho = rank_correlation_vs_judges(logits, truth,
                                                         condition)
                    except MetricError:    # study lacks this condition
                        acc = rho = None
                    accs.append(acc)
                    rhos.append(rho)
        report.add(kind, identity, ha_acc or [None], ha_rho or [None],
                   hs_acc or [None], hs_rho or [None])
        metrics_rows.append({"kind": kind, "identity": identity,
                             "human_agent_acc": ha_acc,
                             "human_agent_rho": ha_rho,
                             "hybrid_symbolic_acc": hs_acc,
                             "hybrid_symbolic_rho": hs_rho})
    rendered = report.render()
    with open(os.path.join(run_dir, "metrics.json"), "w") as fp:
        json.dump(metrics_rows, fp, indent=2)
        fp.write("\n")
    with open(os.path.join(run_dir, "report.txt"), "w") as fp:
        fp.write(rendered + "\n")
    print(rendered)
    return 0


def cmd_serve(args, config, run_dir):
    import uvicorn

    from .service import build_app

    app = build_app(args.corpus, args.data)
    print(f"serving corpus {args.corpus!r} on {args.host}:{args.port} "
          f"(records in {args.data!r})")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_report(args, config, run_dir):
    require_file(args.metrics, "produce one with `navtt evaluate`")
    with open(args.metrics) as fp:
        rows = json.load(fp)
    if isinstance(rows, dict):
        rows = [rows]
    report = MetricsReport()
    for row in rows:
        report.add(row.get("kind", row.get("name", "?")),
                   row.get("identity", []),
                   row.get("human_agent_acc", []) or [None],
                   row.get("human_agent_rho", []) or [None],
                   row.get("hybrid_symbolic_acc", []) or [None],
                   row.get("hybrid_symbolic_rho", []) or [None])
    print(report.render())
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="navtt",
        description="Navigation Turing Test laboratory pipeline")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--out", default="runs",
                        help="base directory for run outputs")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int)
        p.add_argument("--map", help="navmap file (default: built-in map)")
        return p

    add("gen-map", cmd_gen_map, "write the navigation map")

    p = add("train-agent", cmd_train_agent, "train a PPO agent")
    p.add_argument("--kind", required=True, choices=("symbolic", "hybrid"))
    p.add_argument("--total-steps", dest="total_steps", type=int)
    p.add_argument("--entropy-coef", dest="entropy_coef", type=float)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)

    p = add("rollout", cmd_rollout, "sample trajectories from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=16)
    p.add_argument("--goal-sweep", action="store_true")
    p.add_argument("--generator-id")

    p = add("gen-human", cmd_gen_human, "sample scripted human trajectories")
    p.add_argument("--episodes", type=int, default=4,
                   help="episodes per synthetic player")
    p.add_argument("--players", type=int, default=len(SYNTHETIC_PLAYERS))

    p = add("encode", cmd_encode, "materialize the four encodings")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test",
                   choices=("train", "val", "test", "all"))
    p.add_argument("--stride", type=int)

    p = add("train-classifier", cmd_train_classifier,
            "cross-validate and train one model kind")
    p.add_argument("--kind", required=True, choices=MODEL_KINDS)
    p.add_argument("--corpus", required=True)
    p.add_argument("--folds", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--stride", type=int)

    p = add("evaluate", cmd_evaluate, "score models into a Table 3 report")
    p.add_argument("--corpus", required=True)
    p.add_argument("--models", required=True,
                   help="directory of saved classifier checkpoints")
    p.add_argument("--kinds", default=",".join(MODEL_KINDS))
    p.add_argument("--study-data", dest="study_data",
                   help="service record store for judge-ground-truth metrics")
    p.add_argument("--stride", type=int)

    p = add("serve", cmd_serve, "launch the HNTT judging service")
    p.add_argument("--corpus", required=True)
    p.add_argument("--data", required=True,
                   help="directory for the append-only record store")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    p = add("report", cmd_report, "render a metrics.json as Table 3")
    p.add_argument("--metrics", required=True)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        run_dir = new_run_dir(args.out, args.command)
        snapshot_config(run_dir, args, config)
        return args.func(args, config, run_dir)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
