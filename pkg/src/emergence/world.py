"""Synthetic attribute-valued objects, dataset splits, episodes and rewards."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

MAX_OBJECTS = 1_000_000


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class AttributeSpace:
    n_attributes: int
    n_values: int

    def __post_init__(self):
        if self.n_attributes < 1:
            raise ConfigurationError(f"need at least one attribute, got K={self.n_attributes}")
        if self.n_values < 2:
            raise ConfigurationError(f"need at least two values per attribute, got {self.n_values}")

    @property
    def n_objects(self) -> int:
        return self.n_values**self.n_attributes

    @property
    def input_dim(self) -> int:
        return self.n_attributes * self.n_values


ObjectInstance = tuple  # tuple of K value indices


@dataclass(frozen=True)
class Dataset:
    space: AttributeSpace
    objects: np.ndarray  # [n, K] int

    def __len__(self) -> int:
        return len(self.objects)

    def __iter__(self):
        for row in self.objects:
            yield tuple(int(v) for v in row)

    def onehots(self) -> np.ndarray:
        return encode_onehot_batch(self.objects, self.space)


def enumerate_objects(space: AttributeSpace, limit: int = MAX_OBJECTS) -> Dataset:
    """Every object of the space once, in lexicographic order."""
    if space.n_objects > limit:
        raise ConfigurationError(f"{space.n_objects} objects exceeds the limit of {limit}")
    objs = np.array(list(itertools.product(range(space.n_values), repeat=space.n_attributes)), dtype=np.int64)
    return Dataset(space, objs.reshape(-1, space.n_attributes))


def encode_onehot(obj, space: AttributeSpace) -> np.ndarray:
    return encode_onehot_batch(np.asarray(obj, dtype=np.int64)[None, :], space)[0]


def encode_onehot_batch(objects: np.ndarray, space: AttributeSpace) -> np.ndarray:
    objects = np.asarray(objects, dtype=np.int64)
    if objects.ndim != 2 or objects.shape[1] != space.n_attributes:
        raise ConfigurationError(f"objects must be [n, {space.n_attributes}], got {objects.shape}")
    if objects.size and (objects.min() < 0 or objects.max() >= space.n_values):
        raise IndexError(f"attribute value out of range [0, {space.n_values})")
    n, k = objects.shape
    out = np.zeros((n, k * space.n_values))
    cols = objects + np.arange(k) * space.n_values
    out[np.arange(n)[:, None], cols] = 1.0
    return out


def split_sizes(n: int, fractions) -> tuple[int, int, int]:
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ConfigurationError(f"split needs three non-negative fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions must sum to 1, got {sum(fractions)}")
    n_val = int(round(n * fractions[1]))
    n_test = int(round(n * fractions[2]))
    n_train = n - n_val - n_test
    for name, f, size in zip(("train", "val", "test"), fractions, (n_train, n_val, n_test)):
        if f > 0 and size <= 0:
            raise ConfigurationError(f"split {name!r} is empty: {n} objects too few for fraction {f}")
    return n_train, n_val, n_test


def split_dataset(ds: Dataset, fractions, rng) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle followed by a contiguous train/val/test cut.

    ``rng`` is a numpy Generator or an integer seed.
    """
    n_train, n_val, _ = split_sizes(len(ds), fractions)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    order = rng.permutation(len(ds))
    parts = np.split(order, [n_train, n_train + n_val])
    return tuple(Dataset(ds.space, ds.objects[np.sort(idx)]) for idx in parts)


@dataclass(frozen=True)
class DiscriminationEpisode:
    target: tuple
    candidates: tuple
    target_index: int


@dataclass
class DiscriminationBatch:
    """A batch of episodes stored as index arrays into ``split``."""

    split: Dataset
    targets: np.ndarray  # [B] row index into split
    candidates: np.ndarray  # [B, N] row indices into split
    target_index: np.ndarray  # [B]

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def n_candidates(self) -> int:
        return self.candidates.shape[1]

    def __getitem__(self, i: int) -> DiscriminationEpisode:
        objs = self.split.objects
        return DiscriminationEpisode(
            target=tuple(int(v) for v in objs[self.targets[i]]),
            candidates=tuple(tuple(int(v) for v in objs[c]) for c in self.candidates[i]),
            target_index=int(self.target_index[i]),
        )

    def sender_inputs(self) -> np.ndarray:
        return encode_onehot_batch(self.split.objects[self.targets], self.split.space)

    def receiver_inputs(self) -> np.ndarray:
        """[B, N, K*V] one-hot candidates."""
        b, n = self.candidates.shape
        flat = encode_onehot_batch(self.split.objects[self.candidates.reshape(-1)], self.split.space)
        return flat.reshape(b, n, -1)


def build_discrimination_batch(split: Dataset, n_candidates: int, batch_size: int,
                               rng: np.random.Generator) -> DiscriminationBatch:
    n = len(split)
    if n_candidates < 2:
        raise ConfigurationError(f"need at least 2 candidates, got N={n_candidates}")
    if n_candidates > n:
        raise ConfigurationError(f"N={n_candidates} candidates but the split holds only {n} objects")
    targets = rng.integers(n, size=batch_size)
    # distractors: the N-1 smallest random keys, with the target's key pushed out of reach
    keys = rng.random((batch_size, n))
    rows = np.arange(batch_size)
    keys[rows, targets] = np.inf
    distractors = np.argsort(keys, axis=1, kind="stable")[:, : n_candidates - 1]
    positions = rng.integers(n_candidates, size=batch_size)
    cols = np.arange(n_candidates)[None, :]
    src = np.clip(cols - (cols > positions[:, None]), 0, n_candidates - 2)
    cands = np.where(cols == positions[:, None], targets[:, None], distractors[rows[:, None], src])
    return DiscriminationBatch(split, targets, cands, positions)


def compute_reward(game: str, episode, action) -> float:
    """Shared reward in {0, 1}.

    discrimination: ``episode`` is a DiscriminationEpisode, action a candidate index.
    reconstruction: ``episode`` is the target attribute tuple, action the predicted tuple.
    """
    if game == "discrimination":
        n = len(episode.candidates)
        if not 0 <= int(action) < n:
            raise IndexError(f"action {action} is not a candidate index in [0, {n})")
        return 1.0 if int(action) == episode.target_index else 0.0
    if game == "reconstruction":
        return 1.0 if attribute_accuracy(episode, action) == 1.0 else 0.0
    raise ValueError(f"unknown game {game!r}")


def attribute_accuracy(target, predicted) -> float:
    target, predicted = tuple(target), tuple(predicted)
    if len(target) != len(predicted):
        raise IndexError(f"predicted {len(predicted)} attributes for a {len(target)}-attribute object")
    return sum(int(a == b) for a, b in zip(target, predicted)) / len(target)


def batch_rewards(batch: DiscriminationBatch, actions: np.ndarray) -> np.ndarray:
    actions = np.asarray(actions)
    if actions.shape != (len(batch),) or actions.min() < 0 or actions.max() >= batch.n_candidates:
        raise IndexError("actions must be one candidate index per episode")
    return (actions == batch.target_index).astype(np.float64)
