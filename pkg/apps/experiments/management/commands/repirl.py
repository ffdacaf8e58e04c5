"""
Management command that runs the experiment commands.

    python manage.py repirl train --config config/experiments/parity.cfg --out runs/parity
"""
import sys

from django.core.management.base import BaseCommand

from apps.experiments.models import ExperimentCommand, ExperimentSpec
from apps.experiments.pipeline import main


class Command(BaseCommand):
    help = "Generate data, train, evaluate, ablate or run the oracle suite"

    def add_arguments(self, parser):
        parser.add_argument(
            "experiment_command",
            choices=ExperimentCommand.values,
            help="Experiment command to run",
        )
        parser.add_argument("--config", help="Experiment config file")
        parser.add_argument(
            "--out", help="Run directory (default: REPIRL_OUTPUT_ROOT/<config name>)"
        )
        parser.add_argument("--seed", type=int, help="Seed for the task, train and eval sections")
        parser.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="Override a config value (section.key or a unique key); repeatable",
        )
        parser.add_argument(
            "--force", action="store_true", help="Redo a command that already completed here"
        )

    def handle(self, *args, **options):
        spec = ExperimentSpec(
            command=options["experiment_command"],
            config_path=options["config"],
            output_dir=options["out"],
            seed=options["seed"],
            overrides=options["overrides"],
            force=options["force"],
        )
        status = main(spec, stdout=self.stdout, stderr=self.stderr)
        if status:
            sys.exit(status)
