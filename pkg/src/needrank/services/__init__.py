# Services module for needrank

from .environment_service import Environment, build_environment
from .trainer_service import (
    run_ablation,
    run_eval,
    run_gen_synthetic,
    run_make_needs,
    run_train,
    run_train_critic,
)

__all__ = [
    'Environment', 'build_environment',
    'run_ablation', 'run_eval', 'run_gen_synthetic', 'run_make_needs', 'run_train', 'run_train_critic',
]
