"""Episodic task sampling over the seen classes of a dataset.

Two regimes exist. In ``zsml`` mode the train-split and val-split classes
of every episode are disjoint, so each episode rehearses transfer to
classes never adapted on. In ``maml`` mode both splits share the same
classes (the traditional few-shot setup), with val shots drawn from
samples not used as train shots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Rng
from .data import DatasetBundle
from .errors import ClassBudgetError, ParameterError, ShotBudgetError

MODES = ("zsml", "maml")


@dataclass(frozen=True)
class EpisodeSpec:
    n_way_train: int = 10
    k_shot_train: int = 5
    n_way_val: int = 10
    k_shot_val: int = 3
    mode: str = "zsml"
    tasks_per_batch: int = 10

    def __post_init__(self):
        counts = (
            self.n_way_train,
            self.k_shot_train,
            self.n_way_val,
            self.k_shot_val,
            self.tasks_per_batch,
        )
        if any(int(c) < 1 for c in counts):
            raise ParameterError(f"all episode counts must be >= 1, got {counts}")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class TaskEpisode:
    """One sampled task: per-class shot indices for a train and a val split."""

    train_classes: tuple[int, ...]
    val_classes: tuple[int, ...]
    train_items: tuple[tuple[int, ...], ...]  # aligned with train_classes
    val_items: tuple[tuple[int, ...], ...]  # aligned with val_classes
    mode: str

    def all_indices(self) -> list[int]:
        out: list[int] = []
        for items in self.train_items + self.val_items:
            out.extend(items)
        return out


def _shots(pool: np.ndarray, k: int, cls: int, rng: Rng, need_extra: int = 0) -> np.ndarray:
    need = k + need_extra
    if pool.size < need:
        raise ShotBudgetError(
            f"class {cls} has {pool.size} train samples, episode needs {need}"
        )
    if pool.size == need:
        return pool.copy()
    return rng.choice(pool, need)


def sample_episode(dataset: DatasetBundle, spec: EpisodeSpec, rng: Rng) -> TaskEpisode:
    """Draw one episode: classes uniformly without replacement from the seen
    classes, then shots uniformly without replacement within each class."""
    seen = np.sort(dataset.seen_classes)
    by_class = dataset.train_indices_by_class
    if spec.mode == "zsml":
        need = spec.n_way_train + spec.n_way_val
        if seen.size < need:
            raise ClassBudgetError(
                f"zsml episode needs {need} seen classes "
                f"({spec.n_way_train} train + {spec.n_way_val} val), "
                f"dataset has {seen.size}"
            )
        picked = rng.choice(seen, need)
        train_classes = [int(c) for c in picked[: spec.n_way_train]]
        val_classes = [int(c) for c in picked[spec.n_way_train :]]
        train_items = [
            tuple(int(i) for i in _shots(by_class[c], spec.k_shot_train, c, rng))
            for c in train_classes
        ]
        val_items = [
            tuple(int(i) for i in _shots(by_class[c], spec.k_shot_val, c, rng))
            for c in val_classes
        ]
    else:
        if seen.size < spec.n_way_train:
            raise ClassBudgetError(
                f"maml episode needs {spec.n_way_train} seen classes, "
                f"dataset has {seen.size}"
            )
        picked = rng.choice(seen, spec.n_way_train)
        train_classes = [int(c) for c in picked]
        val_classes = list(train_classes)
        train_items, val_items = [], []
        for c in train_classes:
            # One draw per class keeps val shots disjoint from train shots.
            both = _shots(by_class[c], spec.k_shot_train, c, rng, need_extra=spec.k_shot_val)
            train_items.append(tuple(int(i) for i in both[: spec.k_shot_train]))
            val_items.append(tuple(int(i) for i in both[spec.k_shot_train :]))
    return TaskEpisode(
        train_classes=tuple(train_classes),
        val_classes=tuple(val_classes),
        train_items=tuple(train_items),
        val_items=tuple(val_items),
        mode=spec.mode,
    )


def sample_task_batch(
    dataset: DatasetBundle, spec: EpisodeSpec, rng: Rng
) -> list[TaskEpisode]:
    """tasks_per_batch independent episodes; overlap across episodes is fine."""
    return [sample_episode(dataset, spec, rng) for _ in range(spec.tasks_per_batch)]
