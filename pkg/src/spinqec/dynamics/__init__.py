"""Time evolution: trajectories, the PI master equation and batched ensembles."""

from .master import IntegrationError, evolve_master
from .noise import Branch, NoiseModel
from .trajectory import (
    TrajectoryRecord,
    apply_jump,
    evolve_trajectory,
    jump_weights,
    no_jump_step,
    write_jsonl,
)

__all__ = [
    "Branch",
    "IntegrationError",
    "NoiseModel",
    "TrajectoryRecord",
    "apply_jump",
    "evolve_master",
    "evolve_trajectory",
    "jump_weights",
    "no_jump_step",
    "write_jsonl",
]
