"""
The experiment commands and ``main``.

Every command reads a resolved config and writes into a run directory:

    gen-data      data/train.jsonl, data/heldout.jsonl
    train         metrics.csv, summary.json, checkpoints/{policy,reward}-final.ckpt
    eval          eval.json
    tts           tts.csv
    ablate        ablation.csv, ablation_summary.csv, ablate/cell-*.csv
    oracle-check  oracle.csv
"""
import csv
import dataclasses
import json
import logging
import sys
from collections import OrderedDict
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from apps.baselines.runner import run_baseline
from apps.core.errors import (
    ConfigurationError,
    InvariantViolationError,
    RepirlError,
    RunExistsError,
)
from apps.evaluation.metrics import HiddenRewardScorer, select_unsolved
from apps.evaluation.models import ScorerKind
from apps.evaluation.scaling import evaluate, tts_curve, write_tts_csv
from apps.evaluation.serializers import EvalReportSerializer
from apps.experiments.config import grid_cells, parse_config
from apps.experiments.models import (
    ExperimentCommand,
    ExperimentSettings,
    ExperimentSpec,
    ResolvedConfig,
    TrainingMode,
)
from apps.experiments.runs import RunDirectory, default_output_dir
from apps.mdp.datasets import read_dataset, write_dataset
from apps.mdp.environment import build_mdp, generate_expert_pool, split_prompts
from apps.mdp.models import TaskConfig, TokenMdp, Trajectory
from apps.oracle.checks import run_oracle_suite
from apps.policies.checkpoints import load_checkpoint, save_checkpoint
from apps.policies.models import PolicyParams, RewardParams
from apps.trainer.loop import run_repirl
from apps.trainer.models import TrainConfig
from apps.trainer.reporting import write_metrics_csv, write_run_summary

logger = logging.getLogger(__name__)

POLICY_CHECKPOINT = "checkpoints/policy-final.ckpt"
REWARD_CHECKPOINT = "checkpoints/reward-final.ckpt"
SHARE_CHECKS = ("importance_sampling",)


@dataclass
class TaskData:
    mdp: TokenMdp
    train_mdp: TokenMdp
    heldout_mdp: TokenMdp

    @property
    def eval_mdp(self) -> TokenMdp:
        return self.heldout_mdp if self.heldout_mdp.prompts else self.train_mdp


def prepare_task(task: TaskConfig) -> TaskData:
    mdp = build_mdp(task)
    train_mdp, heldout_mdp = split_prompts(mdp, task.heldout_fraction, task.seed)
    return TaskData(mdp, train_mdp, heldout_mdp)


def load_experts(run: RunDirectory, task: TaskConfig, data: TaskData) -> List[Trajectory]:
    """The generated training set when present, otherwise the same set built in memory."""
    path = run.file("data", "train.jsonl")
    if path.exists():
        return read_dataset(path, data.train_mdp)
    logger.info(f"No dataset at {path}; generating experts from the task config")
    return generate_expert_pool(data.train_mdp, task.experts_per_prompt, task.seed)


def load_table(path, kind: str):
    if not path.exists():
        raise ConfigurationError(f"no {kind} checkpoint at {path}")
    table = load_checkpoint(path)
    if table.kind != kind:
        raise ConfigurationError(f"{path} holds a {table.kind} table, expected {kind}")
    return table


def fit(
    settings: ExperimentSettings,
    mdp: TokenMdp,
    experts: Sequence[Trajectory],
    cfg: TrainConfig,
    eval_mdp: Optional[TokenMdp] = None,
    output_dir=None,
    policy: Optional[PolicyParams] = None,
    reward: Optional[RewardParams] = None,
):
    if settings.is_baseline:
        return run_baseline(
            settings.method,
            mdp,
            experts,
            cfg,
            settings.baseline_config(),
            eval_mdp=eval_mdp,
            output_dir=output_dir,
            policy=policy,
            reward=reward,
        )
    return run_repirl(
        mdp, experts, cfg, eval_mdp=eval_mdp, output_dir=output_dir, reward=reward, policy=policy
    )


def gen_data(resolved: ResolvedConfig, run: RunDirectory, stdout):
    task = resolved.task
    data = prepare_task(task)
    train = generate_expert_pool(data.train_mdp, task.experts_per_prompt, task.seed)
    heldout = generate_expert_pool(data.heldout_mdp, task.experts_per_prompt, task.seed)
    write_dataset(run.file("data", "train.jsonl"), train)
    write_dataset(run.file("data", "heldout.jsonl"), heldout)
    stdout.write(
        f"{len(train)} training and {len(heldout)} held-out expert trajectories "
        f"over {len(data.mdp.prompts)} prompts\n"
    )


def train(resolved: ResolvedConfig, run: RunDirectory, stdout):
    settings = resolved.experiment
    cfg = resolved.train
    data = prepare_task(resolved.task)
    experts = load_experts(run, resolved.task, data)
    mdp = data.train_mdp
    policy = reward = None
    if settings.policy_checkpoint:
        policy = load_table(run.resolve(settings.policy_checkpoint, POLICY_CHECKPOINT), "policy")

    if settings.mode == TrainingMode.TTT:
        reward = load_table(run.resolve(settings.prm_checkpoint, REWARD_CHECKPOINT), "reward")
        cfg = dataclasses.replace(cfg, outcome_weight=0.0, freeze_reward=True)
    elif settings.mode == TrainingMode.HARD:
        initial = policy or PolicyParams(
            mdp.vocab_size, cfg.context_order, cfg.policy_repr, cfg.table_size
        )
        mdp = select_unsolved(initial, mdp)
        if not mdp.prompts:
            raise ConfigurationError("the initial policy already solves every training prompt")
        kept = {prompt.id for prompt in mdp.prompts}
        experts = [traj for traj in experts if traj.prompt_id in kept]

    eval_mdp = data.heldout_mdp if data.heldout_mdp.prompts else mdp
    policy, reward, metrics = fit(
        settings, mdp, experts, cfg, eval_mdp, run.path, policy=policy, reward=reward
    )
    write_metrics_csv(metrics, run.file("metrics.csv"))
    write_run_summary(settings.method, cfg, metrics, run.file("summary.json"))
    save_checkpoint(policy, run.file(*POLICY_CHECKPOINT.split("/")))
    if reward is not None:
        save_checkpoint(reward, run.file(*REWARD_CHECKPOINT.split("/")))
    stdout.write(
        f"{settings.method} ({settings.mode}): {len(metrics)} iterations, "
        f"final pass@1 {metrics.final_pass_at_1():.3f}\n"
    )


def _trained(resolved: ResolvedConfig, run: RunDirectory):
    settings = resolved.experiment
    policy = load_table(run.resolve(settings.policy_checkpoint, POLICY_CHECKPOINT), "policy")
    reward_path = run.resolve(settings.prm_checkpoint, REWARD_CHECKPOINT)
    reward = load_table(reward_path, "reward") if reward_path.exists() else None
    return policy, reward


def evaluate_run(resolved: ResolvedConfig, run: RunDirectory, stdout):
    task = resolved.task
    data = prepare_task(task)
    policy, reward = _trained(resolved, run)
    mdp = data.eval_mdp
    positives = None
    if mdp.task.has_verifier:
        positives = generate_expert_pool(mdp, task.experts_per_prompt, task.seed)
    report = evaluate(policy, reward, mdp, resolved.eval, positives=positives)
    payload = EvalReportSerializer(report).data
    run.file("eval.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    auc = "n/a" if report.prm_auc is None else f"{report.prm_auc:.3f}"
    stdout.write(f"pass@1 {report.pass_at_1:.3f} over {len(mdp.prompts)} prompts, AUC {auc}\n")


def scaling_curve(resolved: ResolvedConfig, run: RunDirectory, stdout):
    cfg = resolved.eval
    data = prepare_task(resolved.task)
    policy, reward = _trained(resolved, run)
    mdp = data.eval_mdp
    if cfg.scorer == ScorerKind.HIDDEN:
        scorer = HiddenRewardScorer(mdp)
    elif reward is None:
        raise ConfigurationError("test-time scaling with the learned scorer needs a PRM checkpoint")
    else:
        scorer = reward
    points = tts_curve(
        scorer, policy, mdp, None, cfg.n_grid, cfg.tts_seeds, cfg.seed, cfg.temperature
    )
    write_tts_csv(points, run.file("tts.csv"))
    for point in points:
        stdout.write(
            f"n={point.n:<4} {point.selector:<10} {point.mean:.3f} ± {point.stderr:.3f}\n"
        )


def ablate(resolved: ResolvedConfig, run: RunDirectory, stdout):
    settings = resolved.experiment
    data = prepare_task(resolved.task)
    experts = load_experts(run, resolved.task, data)
    keys = list(resolved.ablate)
    run.clear("ablate")
    rows, summary = [], []
    for index, (assignment, cfg) in enumerate(grid_cells(resolved)):
        finals = []
        for offset in range(settings.ablate_seeds):
            seeded = dataclasses.replace(cfg, seed=cfg.seed + offset)
            _, _, metrics = fit(settings, data.train_mdp, experts, seeded, data.eval_mdp)
            cell_path = run.file("ablate", f"cell-{index:02d}-seed-{seeded.seed}.csv")
            write_metrics_csv(metrics, cell_path)
            last = metrics.last()
            final = metrics.final_pass_at_1()
            finals.append(final)
            outcome = last.outcome_mean if last is not None else float("nan")
            rows.append(
                [index, *assignment.values(), seeded.seed, repr(final), repr(outcome)]
            )
        values = np.array(finals)
        stderr = float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
        mean = float(values.mean())
        summary.append([index, *assignment.values(), len(values), repr(mean), repr(stderr)])
        label = ", ".join(f"{key}={value}" for key, value in assignment.items()) or "base"
        stdout.write(f"cell {index} ({label}): pass@1 {mean:.3f} ± {stderr:.3f}\n")

    _write_rows(
        run.file("ablation.csv"),
        ["cell", *keys, "seed", "final_pass_at_1", "final_outcome_mean"],
        rows,
    )
    _write_rows(
        run.file("ablation_summary.csv"),
        ["cell", *keys, "seeds", "mean_pass_at_1", "stderr"],
        summary,
    )


def _write_rows(path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def oracle_check(resolved: ResolvedConfig, run: RunDirectory, stdout):
    settings = resolved.experiment
    results = run_oracle_suite(
        seed=resolved.train.seed,
        instances=settings.oracle_instances,
        sampling_instances=settings.oracle_sampling_instances,
    )
    _write_rows(
        run.file("oracle.csv"),
        ["check", "instance", "passed", "max_error", "tolerance", "detail"],
        [
            [r.name, r.instance, int(r.passed), repr(r.max_error), repr(r.tolerance), r.detail]
            for r in results
        ],
    )
    by_check = OrderedDict()
    for result in results:
        by_check.setdefault(result.name, []).append(result)
    for name, group in by_check.items():
        passed = sum(1 for r in group if r.passed)
        errors = [r.max_error for r in group]
        worst = min(errors) if name in SHARE_CHECKS else max(errors)
        status = "PASS" if passed == len(group) else "FAIL"
        stdout.write(
            f"{status} {name:<20} {passed}/{len(group)} "
            f"worst={worst:.3e} tolerance={group[0].tolerance:.1e}\n"
        )
    failed = sum(1 for r in results if not r.passed)
    if failed:
        raise InvariantViolationError(f"{failed} of {len(results)} oracle checks failed")


COMMANDS = {
    ExperimentCommand.GEN_DATA: gen_data,
    ExperimentCommand.TRAIN: train,
    ExperimentCommand.EVAL: evaluate_run,
    ExperimentCommand.TTS: scaling_curve,
    ExperimentCommand.ABLATE: ablate,
    ExperimentCommand.ORACLE_CHECK: oracle_check,
}


def main(spec: ExperimentSpec, stdout=None, stderr=None) -> int:
    """Run one experiment command; returns the process exit status."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    command = str(spec.command)
    run = RunDirectory(spec.output_dir or default_output_dir(spec))
    try:
        run.prepare(command, spec.force)
    except RunExistsError as exc:
        stderr.write(f"error [{exc.category}]: {exc}\n")
        return exc.exit_code

    try:
        resolved = parse_config(spec.config_path, spec.overrides, spec.seed)
        run.write_resolved_config(resolved)
        run.write_manifest(command, resolved)
        logger.info(f"Running {command} in {run.path} (config {resolved.digest[:12]})")
        COMMANDS[spec.command](resolved, run, stdout)
    except RepirlError as exc:
        run.mark_failed(command, exc)
        stderr.write(f"error [{exc.category}]: {exc}\n")
        return exc.exit_code
    except Exception as exc:
        logger.exception(f"{command} failed")
        run.mark_failed(command, exc, "unexpected")
        stderr.write(f"error [unexpected]: {exc}\n")
        return 1
    run.mark_completed(command)
    return 0
