"""
Test-time scaling curves and the evaluation report.
"""
import csv
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from apps.core.random import derive_seed
from apps.evaluation.metrics import (
    HiddenRewardScorer,
    best_of_n_select,
    majority_vote,
    per_prompt_pass,
    prm_ranking_auc,
    uniform_negatives,
)
from apps.evaluation.models import EvalConfig, EvalReport, ScorerKind, Selector, TtsPoint
from apps.mdp.environment import extract_answer, label
from apps.mdp.models import Prompt, TokenMdp, Trajectory
from apps.policies.sampling import sample_rollouts

logger = logging.getLogger(__name__)

TTS_TEMPERATURE = 0.8


def _select(selector: str, reward, mdp: TokenMdp, rollouts: List[Trajectory]) -> float:
    if selector == Selector.BEST_OF_N:
        return rollouts[best_of_n_select(reward, rollouts)].outcome
    answer = majority_vote(rollouts, lambda traj: extract_answer(mdp, traj))
    return next(t.outcome for t in rollouts if extract_answer(mdp, t) == answer)


def tts_accuracies(
    reward,
    policy,
    mdp: TokenMdp,
    prompts: Sequence[Prompt],
    n_grid: Sequence[int],
    seed: int,
    temperature: float = TTS_TEMPERATURE,
) -> Dict[str, Dict[int, float]]:
    """
    Accuracy of each selector for each n, for one seed. The samples for n are
    the first n of the largest budget, so sets are nested across the grid.
    """
    budget = max(n_grid)
    totals = {selector: {n: 0.0 for n in n_grid} for selector in Selector.values}
    for prompt in prompts:
        rollouts = [
            label(mdp, traj)
            for traj in sample_rollouts(policy, mdp, prompt, budget, seed, temperature)
        ]
        for n in n_grid:
            for selector in Selector.values:
                totals[selector][n] += _select(selector, reward, mdp, rollouts[:n])
    count = max(len(prompts), 1)
    return {
        selector: {n: value / count for n, value in by_n.items()}
        for selector, by_n in totals.items()
    }


def tts_curve(
    reward,
    policy,
    mdp: TokenMdp,
    prompts: Optional[Sequence[Prompt]] = None,
    n_grid: Sequence[int] = (1, 4, 16),
    seeds: int = 20,
    base_seed: int = 0,
    temperature: float = TTS_TEMPERATURE,
) -> List[TtsPoint]:
    """Mean accuracy and standard error over ``seeds`` for each (n, selector)."""
    prompts = mdp.prompts if prompts is None else prompts
    runs = []
    for index in range(seeds):
        seed = derive_seed(base_seed, 2, index)
        runs.append(tts_accuracies(reward, policy, mdp, prompts, n_grid, seed, temperature))
    points = []
    for n in sorted(n_grid):
        for selector in Selector.values:
            values = np.array([run[selector][n] for run in runs])
            stderr = float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
            points.append(TtsPoint(n, selector, float(values.mean()), stderr))
    return points


def write_tts_csv(points: Sequence[TtsPoint], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["n", "selector", "mean", "stderr"])
        for point in points:
            writer.writerow([point.n, point.selector, repr(point.mean), repr(point.stderr)])
    return path


def evaluate(
    policy,
    reward,
    mdp: TokenMdp,
    cfg: EvalConfig,
    positives: Optional[Sequence[Trajectory]] = None,
    with_tts: bool = False,
) -> EvalReport:
    """pass@1 per prompt, PRM AUC against uniform negatives and optionally a TTS curve."""
    report = EvalReport()
    report.per_prompt_pass = per_prompt_pass(policy, mdp, greedy=cfg.greedy, seed=cfg.seed)
    if report.per_prompt_pass:
        report.pass_at_1 = float(np.mean(list(report.per_prompt_pass.values())))
    scorer = HiddenRewardScorer(mdp) if cfg.scorer == ScorerKind.HIDDEN else reward
    if positives and scorer is not None:
        negatives = uniform_negatives(mdp, cfg.auc_negatives, derive_seed(cfg.seed, 3))
        report.prm_auc = prm_ranking_auc(scorer, positives, negatives)
    if with_tts and scorer is not None:
        report.tts = tts_curve(
            scorer, policy, mdp, None, cfg.n_grid, cfg.tts_seeds, cfg.seed, cfg.temperature
        )
    logger.info(f"Evaluated {len(mdp.prompts)} prompts: pass@1={report.pass_at_1:.3f}")
    return report
