"""Task catalog: sampling, instructions, scripted experts, and scoring."""

from __future__ import annotations

from ..simulator import SimulatorError
from .base import (GoalState, Task, TaskSpec, PLACE_ROTATIONS, POSITION_TOL_PX,
                   load_task_config)
from .bowls import PutBlocksInBowls
from .hanoi import TowersOfHanoi
from .packing import PackingBoxPairs
from .pyramid import StackBlockPyramid

_TASK_CLASSES = {
    cls.name: cls
    for cls in (PutBlocksInBowls, PackingBoxPairs, StackBlockPyramid, TowersOfHanoi)
}

TASK_NAMES = tuple(sorted(_TASK_CLASSES))
_INSTANCES: dict[str, Task] = {}


def get_task(name: str) -> Task:
    if name not in _TASK_CLASSES:
        raise SimulatorError(
            f"unknown task {name!r}; available: {', '.join(TASK_NAMES)}")
    if name not in _INSTANCES:
        _INSTANCES[name] = _TASK_CLASSES[name]()
    return _INSTANCES[name]


__all__ = [
    "GoalState", "Task", "TaskSpec", "TASK_NAMES", "get_task",
    "PLACE_ROTATIONS", "POSITION_TOL_PX", "load_task_config",
]
