"""Staged pipeline CLI.

Stages: enumerate -> train-rl -> farm-bc -> train-diffusion -> evaluate ->
report. Each stage reads its prerequisites from the artifact directory and
writes versioned artifacts plus a config-hash sidecar; rerunning a completed
stage with an unchanged config is a no-op, a stale hash triggers a rebuild
with a warning. Exit codes: 0 success, 1 config error, 2 missing
prerequisite, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import bc, diffusion, evaluate, gridworld, io_bin, ppo, store
from .config import ConfigError, PipelineConfig, denoiser_config, validate_config
from .errors import NumericError

STAGES = ("enumerate", "train-rl", "farm-bc", "train-diffusion", "evaluate", "report")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PREREQ = 2
EXIT_NUMERIC = 3


class MissingPrerequisite(Exception):
    pass


def _artifact(cfg: PipelineConfig, *parts) -> str:
    return os.path.join(cfg.artifacts, *parts)


def _sidecar(path: str) -> str:
    return path + ".hash"


def _is_fresh(cfg: PipelineConfig, path: str, force: bool) -> bool:
    """True when the artifact exists and matches the current config hash."""
    if force or not os.path.exists(path):
        return False
    sidecar = _sidecar(path)
    if not os.path.exists(sidecar):
        return False
    with open(sidecar, encoding="utf-8") as fh:
        recorded = fh.read().strip()
    if recorded != cfg.config_hash():
        print(
            f"warning: {path} was built with config hash {recorded}, "
            f"current is {cfg.config_hash()}; rebuilding",
            file=sys.stderr,
        )
        return False
    return True


def _mark(cfg: PipelineConfig, path: str) -> None:
    with open(_sidecar(path), "w", encoding="utf-8") as fh:
        fh.write(cfg.config_hash())


def _require(path: str, what: str) -> None:
    if not os.path.exists(path):
        raise MissingPrerequisite(f"missing {what}: {path} (run the earlier stage)")


def _tasks(cfg: PipelineConfig) -> list:
    return gridworld.enumerate_tasks(
        families=cfg.tasks.families, types=cfg.tasks.types, colors=cfg.tasks.colors
    )


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------


def stage_enumerate(cfg: PipelineConfig, workers: int, force: bool) -> None:
    path = _artifact(cfg, "tasks.csv")
    if _is_fresh(cfg, path, force):
        print(f"enumerate: {path} up to date")
        return
    tasks = _tasks(cfg)
    gridworld.export_tasks(tasks, path)
    _mark(cfg, path)
    print(f"enumerate: wrote {len(tasks)} tasks to {path}")


def _train_one_expert(args):
    task_id, cfg = args
    task = gridworld.task_from_id(task_id)
    agent = ppo.train_task(task, cfg.ppo, seed=cfg.seed)
    return task_id, agent.converged, agent.training_curve, agent.weight_arrays()


def _expert_path(cfg: PipelineConfig, task_id: str) -> str:
    return _artifact(cfg, "experts", f"{task_id}.bin")


def stage_train_rl(cfg: PipelineConfig, workers: int, force: bool) -> None:
    _require(_artifact(cfg, "tasks.csv"), "task list")
    os.makedirs(_artifact(cfg, "experts"), exist_ok=True)
    os.makedirs(_artifact(cfg, "curves"), exist_ok=True)
    todo = []
    for task in _tasks(cfg):
        path = _expert_path(cfg, task.task_id)
        if _is_fresh(cfg, path, force):
            print(f"train-rl: {task.task_id} up to date")
            continue
        todo.append((task.task_id, cfg))
    results = []
    if workers > 1 and len(todo) > 1:
        import multiprocessing as mp

        with mp.Pool(workers) as pool:
            results = pool.map(_train_one_expert, todo)
    else:
        results = [_train_one_expert(job) for job in todo]
    converged_count = 0
    for task_id, converged, curve, weights in results:
        path = _expert_path(cfg, task_id)
        meta = {"task_id": task_id, "converged": converged, "curve": curve}
        io_bin.write_blob(path, meta, weights)
        _mark(cfg, path)
        curve_path = _artifact(cfg, "curves", f"{task_id}.csv")
        with open(curve_path, "w", encoding="utf-8") as fh:
            fh.write("steps,mean_reward\n")
            for steps, score in curve:
                fh.write(f"{steps},{score:.6f}\n")
        converged_count += int(converged)
        print(f"train-rl: {task_id} converged={converged}")
    if todo:
        print(f"train-rl: {converged_count}/{len(todo)} newly trained tasks converged")


def _load_experts(cfg: PipelineConfig) -> dict[str, ppo.ExpertAgent]:
    experts = {}
    for task in _tasks(cfg):
        path = _expert_path(cfg, task.task_id)
        _require(path, f"expert checkpoint for {task.task_id}")
        meta, arrays = io_bin.read_blob(path)
        agent = ppo.make_agent(cfg.ppo, seed=0, task=task)
        agent.load_weight_arrays(arrays)
        agent.converged = bool(meta["converged"])
        agent.training_curve = [tuple(row) for row in meta["curve"]]
        experts[task.task_id] = agent
    return experts


def stage_farm_bc(cfg: PipelineConfig, workers: int, force: bool) -> None:
    dataset_path = _artifact(cfg, "dataset.bin")
    if _is_fresh(cfg, dataset_path, force):
        print(f"farm-bc: {dataset_path} up to date")
        return
    experts = _load_experts(cfg)
    tasks = _tasks(cfg)
    dataset, manifest = bc.build_policy_farm(
        tasks,
        experts,
        per_task=cfg.bc.per_task,
        threshold=cfg.bc.threshold,
        demo_episodes=cfg.bc.demo_episodes,
        epochs=cfg.bc.epochs,
        seed=cfg.seed,
        workers=workers,
    )
    if cfg.embeddings_file:
        dataset = store.ingest_external_embeddings(cfg.embeddings_file, dataset)
    store.save_dataset(dataset, dataset_path)
    _mark(cfg, dataset_path)
    bc.export_manifest(manifest, _artifact(cfg, "farm_manifest.csv"))
    kept = sum(1 for row in manifest.per_task if row.kept)
    print(
        f"farm-bc: stored {len(dataset.records)} policies over {kept} kept tasks "
        f"-> {dataset_path}"
    )


def stage_train_diffusion(cfg: PipelineConfig, workers: int, force: bool) -> None:
    model_path = _artifact(cfg, "model.bin")
    if _is_fresh(cfg, model_path, force):
        print(f"train-diffusion: {model_path} up to date")
        return
    dataset_path = _artifact(cfg, "dataset.bin")
    _require(dataset_path, "policy farm dataset")
    dataset = store.load_dataset(dataset_path)
    if len(dataset) == 0:
        raise MissingPrerequisite(f"dataset at {dataset_path} holds no policies")
    from .schedule import cosine_schedule

    model = diffusion.train_diffusion(
        dataset,
        config=denoiser_config(cfg, dataset.embedding_length),
        epochs=cfg.diffusion.epochs,
        seed=cfg.seed,
        batch_size=cfg.diffusion.batch_size,
        learning_rate=cfg.diffusion.learning_rate,
        schedule=cosine_schedule(cfg.diffusion.T),
        vlb_lambda=cfg.diffusion.vlb_lambda,
    )
    diffusion.save_checkpoint(model, model_path)
    _mark(cfg, model_path)
    diffusion.export_loss_curve(model, _artifact(cfg, "diffusion_loss.csv"))
    final = model.loss_curve[-1]
    print(f"train-diffusion: final loss {final[3]:.6f} -> {model_path}")


def stage_evaluate(cfg: PipelineConfig, workers: int, force: bool) -> None:
    summary_path = _artifact(cfg, "report_summary.csv")
    per_task_path = _artifact(cfg, "report_per_task.csv")
    if _is_fresh(cfg, summary_path, force) and _is_fresh(cfg, per_task_path, force):
        print(f"evaluate: {summary_path} up to date")
        return
    model_path = _artifact(cfg, "model.bin")
    _require(model_path, "diffusion model checkpoint")
    dataset_path = _artifact(cfg, "dataset.bin")
    _require(dataset_path, "policy farm dataset")
    model = diffusion.load_checkpoint(model_path)
    dataset = store.load_dataset(dataset_path)
    kept_ids = sorted({r.task_id for r in dataset.records})
    tasks = [gridworld.task_from_id(t) for t in kept_ids]
    report = evaluate.build_report(model, dataset, tasks, cfg.eval)
    evaluate.export_report(report, summary_path, per_task_path)
    _mark(cfg, summary_path)
    _mark(cfg, per_task_path)
    print(f"evaluate: wrote {summary_path} over {len(tasks)} tasks")


def stage_report(cfg: PipelineConfig, workers: int, force: bool) -> None:
    summary_path = _artifact(cfg, "report_summary.csv")
    _require(summary_path, "evaluation summary")
    with open(summary_path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    print(f"{'condition':<12} {'mean':>10} {'std':>10}")
    for line in lines[1:]:
        condition, mean, std = line.split(",")
        print(f"{condition:<12} {float(mean):>10.4f} {float(std):>10.4f}")


_STAGE_FN = {
    "enumerate": stage_enumerate,
    "train-rl": stage_train_rl,
    "farm-bc": stage_farm_bc,
    "train-diffusion": stage_train_diffusion,
    "evaluate": stage_evaluate,
    "report": stage_report,
}


def run_stage(stage: str, cfg: PipelineConfig, workers: int = 1, force: bool = False) -> None:
    os.makedirs(cfg.artifacts, exist_ok=True)
    _STAGE_FN[stage](cfg, workers, force)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="policydiff",
        description="Diffusion-for-policy-parameters pipeline (desk scale).",
    )
    parser.add_argument("--config", required=True, help="INI pipeline config")
    parser.add_argument(
        "--stage",
        choices=(*STAGES, "all"),
        default="all",
        help="stage to run (default: all stages in order)",
    )
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--artifacts", default=None, help="override artifact dir")
    parser.add_argument(
        "--force", action="store_true", help="rebuild even when artifacts are fresh"
    )
    args = parser.parse_args(argv)

    try:
        cfg = validate_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.artifacts:
        cfg.artifacts = args.artifacts
    if args.workers < 1:
        print("config error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    stages = STAGES if args.stage == "all" else (args.stage,)
    try:
        for stage in stages:
            run_stage(stage, cfg, workers=args.workers, force=args.force)
    except MissingPrerequisite as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
