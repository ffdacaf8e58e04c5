"""
Tests for soft value iteration, partition functions, messages and the exact
IRL gradient.
"""
import math
import tempfile
from collections import defaultdict
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from apps.core.errors import EmptyDatasetError
from apps.mdp.enumeration import enumerate_trajectories, iter_states
from apps.mdp.environment import build_mdp
from apps.mdp.models import Prompt, State, TaskConfig, TokenMdp, Trajectory
from apps.oracle.exact import (
    dump_solution,
    enumerate_distribution,
    exact_irl_gradient,
    exact_partition,
    forward_backward,
    irl_objective,
    mcts_value_label,
    soft_value_iteration,
)
from apps.policies.models import PolicyParams, RewardParams


def random_reward(mdp, seed, scale=1.0):
    """A full-prefix reward table with seeded normal entries."""
    reward = RewardParams(mdp.vocab_size, context_order=mdp.horizon + 4, value_clip=None)
    rng = np.random.default_rng(seed)
    for prompt in mdp.prompts:
        for state in iter_states(mdp, prompt):
            for action in range(mdp.vocab_size):
                reward.set(state, action, rng.normal(scale=scale))
    return reward


def small_mdp(vocab_size, horizon, eos=None, prompts=((),)):
    return TokenMdp(
        vocab_size=vocab_size,
        horizon=horizon,
        eos=eos,
        prompts=tuple(Prompt(i, tokens) for i, tokens in enumerate(prompts)),
    )


class TestSoftValueIteration(SimpleTestCase):
    """Test soft values, Q-values and the soft-optimal policy."""

    def test_one_step_zero_reward(self):
        """Test that r = 0 over two actions gives a uniform policy and V = log 2."""
        mdp = small_mdp(2, 1)
        solution = soft_value_iteration(mdp, RewardParams(2), beta=1.0)
        root = State(0, ())
        np.testing.assert_allclose(solution.probabilities(root), [0.5, 0.5])
        self.assertAlmostEqual(solution.v_values[root], math.log(2), places=12)

    def test_one_step_closed_form(self):
        """Test r = (1, 0) against the closed form."""
        mdp = small_mdp(2, 1)
        reward = RewardParams(2, context_order=0)
        reward.set(State(0, ()), 0, 1.0)
        solution = soft_value_iteration(mdp, reward, beta=1.0)
        root = State(0, ())
        np.testing.assert_allclose(solution.probabilities(root), [0.731059, 0.268941], atol=1e-6)
        self.assertAlmostEqual(solution.v_values[root], 1.313262, places=6)

    def test_distribution_matches_enumeration(self):
        """Test V=3, T=4: pi* products equal exp(r(tau)) / z over all 81 sequences."""
        mdp = small_mdp(3, 4)
        reward = random_reward(mdp, seed=11)
        solution = soft_value_iteration(mdp, reward, beta=1.0)
        distribution = enumerate_distribution(mdp, reward, mdp.prompts[0])
        self.assertEqual(len(distribution), 81)
        for traj, log_p in distribution:
            self.assertAlmostEqual(math.exp(solution.log_prob(traj)), math.exp(log_p), delta=1e-8)

    def test_soft_bellman_identity_with_temperature(self):
        """Test Q - beta log pi = V and normalization at every state."""
        mdp = small_mdp(3, 3, eos=0)
        reward = random_reward(mdp, seed=2)
        solution = soft_value_iteration(mdp, reward, beta=0.7)
        for state, q in solution.q_values.items():
            policy = solution.policy[state]
            self.assertAlmostEqual(policy.sum(), 1.0, delta=1e-10)
            np.testing.assert_allclose(
                q - 0.7 * np.log(policy), solution.v_values[state], rtol=0, atol=1e-10
            )


class TestExactPartition(SimpleTestCase):
    """Test log z."""

    def test_zero_reward_counts_sequences(self):
        """Test that r = 0, V=2, T=3 gives log 8."""
        mdp = small_mdp(2, 3)
        self.assertAlmostEqual(exact_partition(mdp, RewardParams(2)).log_z, math.log(8), places=12)

    def test_single_trajectory(self):
        """Test that V=1 gives the return of the only sequence."""
        mdp = small_mdp(1, 4)
        reward = random_reward(mdp, seed=3)
        (traj,) = enumerate_trajectories(mdp, mdp.prompts[0])
        ret = sum(reward.score(s, a) for s, a in traj.steps())
        self.assertAlmostEqual(exact_partition(mdp, reward).log_z, ret, places=12)

    def test_four_sequences(self):
        """Test V=2, T=2 against an explicit four-term sum."""
        mdp = small_mdp(2, 2)
        reward = random_reward(mdp, seed=4)
        r = reward.score
        terms = [
            r(State(0, ()), a) + r(State(0, (a,)), b) for a in range(2) for b in range(2)
        ]
        expected = math.log(sum(math.exp(term) for term in terms))
        self.assertAlmostEqual(exact_partition(mdp, reward).log_z, expected, places=12)

    def test_per_prompt_values(self):
        """Test that the total partition combines the per-prompt values."""
        mdp = small_mdp(2, 2, prompts=((1,), (0, 1)))
        reward = random_reward(mdp, seed=5)
        partition = exact_partition(mdp, reward)
        self.assertEqual(set(partition.per_prompt), {0, 1})
        self.assertAlmostEqual(
            partition.log_z, float(np.logaddexp(*partition.per_prompt.values())), places=12
        )


class TestForwardBackward(SimpleTestCase):
    """Test occupancy messages."""

    def test_zero_reward_uniform_marginals(self):
        """Test that r = 0 without eos gives uniform per-step marginals."""
        mdp = small_mdp(3, 3)
        messages = forward_backward(mdp, RewardParams(3))
        per_step = defaultdict(list)
        for state, row in messages.marginals.items():
            per_step[state.t].extend(row.tolist())
        for t, values in per_step.items():
            np.testing.assert_allclose(values, 1.0 / len(values), atol=1e-12)
            self.assertAlmostEqual(sum(values), 1.0, delta=1e-10)

    def test_single_trajectory_marginals(self):
        """Test that V=1 puts all mass on the only pair of each step."""
        mdp = small_mdp(1, 3)
        messages = forward_backward(mdp, random_reward(mdp, seed=6))
        for row in messages.marginals.values():
            np.testing.assert_allclose(row, [1.0])

    def test_marginals_match_enumeration(self):
        """Test V=2, T=3 marginals against aggregation of exp(r(tau)) / z."""
        mdp = small_mdp(2, 3)
        reward = random_reward(mdp, seed=7)
        messages = forward_backward(mdp, reward)
        aggregated = defaultdict(lambda: np.zeros(2))
        for traj, log_p in enumerate_distribution(mdp, reward, mdp.prompts[0]):
            for state, action in traj.steps():
                aggregated[state][action] += math.exp(log_p)
        self.assertEqual(set(aggregated), set(messages.marginals))
        for state, row in aggregated.items():
            np.testing.assert_allclose(messages.marginals[state], row, rtol=0, atol=1e-10)

    def test_eos_occupancy_is_visit_probability(self):
        """Test that occupancy with eos counts visits and marginals renormalize."""
        mdp = small_mdp(3, 2, eos=0)
        messages = forward_backward(mdp, RewardParams(3))
        root = State(0, ())
        np.testing.assert_allclose(messages.occupancy[root], [1 / 7, 3 / 7, 3 / 7])
        step_one = [s for s in messages.marginals if s.t == 1]
        total = sum(messages.marginals[s].sum() for s in step_one)
        self.assertAlmostEqual(total, 1.0, delta=1e-10)


class TestExactIrlGradient(SimpleTestCase):
    """Test the exact reward-likelihood gradient."""

    def test_soft_optimal_expert_is_fixed_point(self):
        """Test that experts weighted by the model distribution give zero gradient."""
        mdp = small_mdp(2, 3, eos=0)
        reward = random_reward(mdp, seed=8)
        distribution = enumerate_distribution(mdp, reward, mdp.prompts[0])
        expert = [traj for traj, _ in distribution]
        weights = [math.exp(log_p) for _, log_p in distribution]
        gradient = exact_irl_gradient(mdp, reward, expert, weights)
        self.assertLess(gradient.norm(), 1e-10)

    def test_single_step_uniform(self):
        """Test that r = 0, V=2, T=1 gives +0.5 on the expert cell and -0.5 elsewhere."""
        mdp = small_mdp(2, 1)
        reward = RewardParams(2, context_order=1)
        gradient = exact_irl_gradient(mdp, reward, [Trajectory(0, (1,))])
        np.testing.assert_allclose(gradient.get(()), [-0.5, 0.5])

    def test_finite_differences(self):
        """Test against central differences of J = mean expert reward - log z."""
        mdp = small_mdp(3, 3, eos=0, prompts=((1,), (2,)))
        reward = random_reward(mdp, seed=9, scale=0.5)
        expert = [
            Trajectory(0, (1, 2, 0), prompt=(1,)),
            Trajectory(0, (2, 0), prompt=(1,)),
            Trajectory(1, (1, 1, 1), prompt=(2,)),
        ]
        gradient = exact_irl_gradient(mdp, reward, expert)
        step = 1e-5
        for key in list(reward.rows)[:12]:
            for action in range(3):
                original = reward.rows[key][action]
                reward.rows[key][action] = original + step
                upper = irl_objective(mdp, reward, expert)
                reward.rows[key][action] = original - step
                lower = irl_objective(mdp, reward, expert)
                reward.rows[key][action] = original
                numeric = (upper - lower) / (2 * step)
                self.assertAlmostEqual(gradient.get(key, action), numeric, delta=1e-6)

    def test_empty_expert(self):
        """Test that an empty expert set is an error."""
        with self.assertRaises(EmptyDatasetError):
            exact_irl_gradient(small_mdp(2, 1), RewardParams(2), [])


class TestMctsValueLabel(SimpleTestCase):
    """Test completion-value labels."""

    def setUp(self):
        self.mdp = build_mdp(TaskConfig(task_kind="parity_chain", vocab_size=6,
                                        horizon=4, prompt_length=2))

    def test_certain_success(self):
        """Test that a policy that always completes correctly labels 1.0."""
        prompt = self.mdp.prompts[0]
        task = self.mdp.task
        policy = PolicyParams(6, context_order=8)
        answer = task.value_token(task.final_value(prompt.tokens))
        values = [task.value_token(v) for v in task.running_values(prompt.tokens)]
        state = self.mdp.root(prompt)
        for action in values + [task.answer_marker, answer]:
            policy.set(state, action, 50.0)
            state = state.child(action)
        label = mcts_value_label(self.mdp, policy, self.mdp.root(prompt), 8, seed=0)
        self.assertEqual(label, 1.0)

    def test_terminal_state_returns_outcome(self):
        """Test that a terminal state is labelled by its own outcome."""
        prompt = self.mdp.prompts[0]
        label = mcts_value_label(self.mdp, PolicyParams(6), State(prompt.id, (0,)), 4, seed=0)
        self.assertEqual(label, 0.0)

    def test_exact_matches_monte_carlo(self):
        """Test exact completion probability against 10^5 Monte Carlo completions."""
        prompt = self.mdp.prompts[1]
        task = self.mdp.task
        values = [task.value_token(v) for v in task.running_values(prompt.tokens)]
        state = State(prompt.id, (values[0], values[1]), prompt.tokens)
        policy = PolicyParams(6)
        exact = mcts_value_label(self.mdp, policy, state, 1, seed=0, exact=True)
        self.assertAlmostEqual(exact, 1 / 36, places=12)
        sampled = mcts_value_label(self.mdp, policy, state, 100_000, seed=1)
        self.assertAlmostEqual(sampled, exact, delta=0.01)


class TestDumpSolution(SimpleTestCase):
    def test_bandit_table(self):
        """Test the exported values of a one-step instance."""
        mdp = small_mdp(2, 1)
        reward = RewardParams(2, context_order=4, value_clip=None)
        reward.set(mdp.root(mdp.prompts[0]), 0, 1.0)
        solution = soft_value_iteration(mdp, reward)
        messages = forward_backward(mdp, reward)
        with tempfile.TemporaryDirectory() as tmp:
            path = dump_solution(solution, Path(tmp) / "solution.csv", messages)
            lines = path.read_text().splitlines()
        self.assertEqual(lines[2], "param_kind,key,value")
        rows = {tuple(line.split(",")[:2]): float(line.split(",")[2]) for line in lines[3:]}
        self.assertAlmostEqual(rows[("v", "0:.")], math.log(1 + math.e), places=12)
        self.assertAlmostEqual(rows[("pi", "0:.|0")], 0.7310585786300049, places=12)
        self.assertAlmostEqual(rows[("mu", "0:.|1")], 0.2689414213699951, places=12)
