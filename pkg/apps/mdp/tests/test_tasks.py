"""
Tests for task hidden rewards and token layout.
"""
from django.test import SimpleTestCase

from apps.core.errors import ConfigValidationError
from apps.mdp.environment import build_mdp, generate_expert, is_well_formed
from apps.mdp.models import State, Trajectory
from apps.mdp.tasks import ChainTask, CopySortTask, task_for
from apps.mdp.tests.factories import TaskConfigFactory


def hidden_return(mdp, traj):
    return sum(mdp.hidden_reward(state, action) for state, action in traj.steps())


class TestChainTask(SimpleTestCase):
    """Test the running-sum chain tasks."""

    def test_arithmetic_layout(self):
        """Test that base B uses 2B + 2 tokens."""
        task = task_for("arithmetic_chain", 10)
        self.assertEqual(task.base, 4)
        self.assertEqual(task.answer_marker, 9)
        self.assertEqual(task.running_values(task.encode_prompt([3, 2, 1])), (3, 1, 2))

    def test_vocab_too_small(self):
        """Test that chain tasks reject vocabularies below six tokens."""
        with self.assertRaises(ConfigValidationError):
            ChainTask(5)

    def test_expert_has_highest_hidden_return(self):
        """Test that the expert earns L + 2 and a wrong answer earns less."""
        mdp = build_mdp(TaskConfigFactory(prompt_length=3, horizon=6))
        task = mdp.task
        for prompt in mdp.prompts:
            expert = mdp.attach(generate_expert(mdp, prompt, 1, 0)[0])
            self.assertEqual(hidden_return(mdp, expert), 3 + 2)
            wrong_answer = task.value_token(1 - task.final_value(prompt.tokens))
            values = tuple(task.value_token(v) for v in task.running_values(prompt.tokens))
            broken = Trajectory(
                prompt.id, values + (task.answer_marker, wrong_answer, 0), prompt=prompt.tokens
            )
            self.assertLess(hidden_return(mdp, broken), 5)

    def test_redundant_value_is_neutral(self):
        """Test that repeating the final value before the marker earns zero."""
        task = task_for("parity_chain", 6)
        prompt = task.encode_prompt([1, 0])
        state = State(0, (task.value_token(1), task.value_token(1)), prompt)
        self.assertEqual(task.hidden_reward(state, task.value_token(1)), 0.0)
        self.assertEqual(task.hidden_reward(state, task.answer_marker), 0.0)
        self.assertEqual(task.hidden_reward(state, 0), -1.0)

    def test_missing_answer_is_malformed(self):
        """Test that a trajectory without an answer is not well formed."""
        mdp = build_mdp(TaskConfigFactory(prompt_length=2, horizon=4))
        self.assertFalse(is_well_formed(mdp, Trajectory(0, (0,))))


class TestCopySortTask(SimpleTestCase):
    """Test the copy_sort hidden reward."""

    def test_hidden_reward(self):
        """Test per-step rewards and the completion bonus."""
        task = CopySortTask(4)
        prompt = (3, 1)
        self.assertEqual(task.hidden_reward(State(0, (), prompt), 1), 1.0)
        self.assertEqual(task.hidden_reward(State(0, (), prompt), 3), -1.0)
        self.assertEqual(task.hidden_reward(State(0, (1,), prompt), 3), 3.0)
        self.assertEqual(task.hidden_reward(State(0, (1, 3), prompt), 0), 0.0)
        self.assertEqual(task.hidden_reward(State(0, (1, 3), prompt), 2), -1.0)

    def test_synthetic_has_no_hidden_reward(self):
        """Test that synthetic MDPs carry no hidden reward."""
        mdp = build_mdp(TaskConfigFactory(task_kind="synthetic", vocab_size=3,
                                          prompt_length=1, horizon=2))
        self.assertIsNone(mdp.hidden_reward)
        self.assertEqual(len(mdp.prompts), 3)
