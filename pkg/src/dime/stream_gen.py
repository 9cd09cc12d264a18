"""Dual-imbalance task streams over a synthetic Gaussian-prototype dataset."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TEST_PER_CLASS = 30


@dataclass(frozen=True)
class StepSpec:
    step_index: int  # 1-based
    class_ids: tuple[int, ...]
    train_counts: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.class_ids)


@dataclass(frozen=True)
class StreamProtocol:
    total_classes: int
    num_steps: int
    rho: float
    steps: tuple[StepSpec, ...]
    permutation_seed: int

    def __post_init__(self):
        seen = [c for s in self.steps for c in s.class_ids]
        if len(seen) != len(set(seen)):
            raise ValueError("step class sets overlap")
        if sorted(seen) != list(range(self.total_classes)):
            raise ValueError("steps do not cover exactly the class range")
        if any(s.size < 1 for s in self.steps):
            raise ValueError("empty step")

    @property
    def step_sizes(self) -> list[int]:
        return [s.size for s in self.steps]

    def dump(self) -> str:
        """One line per step: ``step_index class_count class_ids...``."""
        return "".join(
            f"{s.step_index} {s.size} {' '.join(map(str, s.class_ids))}\n" for s in self.steps
        )


@dataclass
class SyntheticDataset:
    input_dim: int
    prototypes: np.ndarray  # (C, input_dim)
    noise_scale: float
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    seed: int

    def train_subset(self, class_ids) -> tuple[np.ndarray, np.ndarray]:
        mask = np.isin(self.train_y, list(class_ids))
        return self.train_x[mask], self.train_y[mask]

    def test_subset(self, class_ids) -> tuple[np.ndarray, np.ndarray]:
        mask = np.isin(self.test_y, list(class_ids))
        return self.test_x[mask], self.test_y[mask]


@dataclass(frozen=True)
class StreamSeeds:
    permutation: int = 0
    assignment: int = 1
    data: int = 2

    @classmethod
    def from_seed(cls, seed: int) -> "StreamSeeds":
        a, b, c = np.random.SeedSequence(seed).generate_state(3, dtype=np.uint64)
        return cls(int(a), int(b), int(c))


def step_proportions(rho: float, t_steps: int) -> np.ndarray:
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    if t_steps < 1:
        raise ValueError("need at least one step")
    if t_steps == 1:
        return np.ones(1)
    t = np.arange(t_steps)
    return rho ** (t / (t_steps - 1))


def allocate_classes(proportions, total_classes: int) -> np.ndarray:
    """Largest-remainder apportionment with a floor of one class per step."""
    props = np.asarray(proportions, dtype=np.float64)
    n = props.shape[0]
    if n < 1 or np.any(props <= 0):
        raise ValueError("proportions must be positive")
    if total_classes < n:
        raise ValueError(f"cannot give each of {n} steps a class with only {total_classes} classes")
    quotas = total_classes * props / props.sum()
    counts = np.maximum(1, np.floor(quotas)).astype(np.int64)
    remainders = quotas - counts
    short = total_classes - int(counts.sum())
    if short > 0:
        # largest remainder first, ties to the earlier step
        order = sorted(range(n), key=lambda i: (-remainders[i], i))
        for i in order[:short]:
            counts[i] += 1
    while short < 0:
        # the >=1 floor overshot: take from the smallest remainders, later steps first
        order = sorted((i for i in range(n) if counts[i] > 1), key=lambda i: (remainders[i], -i))
        counts[order[0]] -= 1
        remainders[order[0]] += 1
        short += 1
    return counts


def permute_steps(counts, seed: int) -> np.ndarray:
    counts = np.asarray(counts)
    if counts.size == 0:
        raise ValueError("nothing to permute")
    out = counts.copy()
    np.random.default_rng(seed).shuffle(out)
    return out


def longtail_counts(num_classes: int, n_max: int, class_rho: float) -> np.ndarray:
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    if not 0.0 < class_rho <= 1.0:
        raise ValueError(f"class_rho must lie in (0, 1], got {class_rho}")
    if num_classes == 1:
        return np.array([n_max])
    r = np.arange(num_classes)
    raw = n_max * class_rho ** (r / (num_classes - 1))
    # half-up rounding; np.round would round half to even
    return np.maximum(1, np.floor(raw + 0.5)).astype(np.int64)


def build_stream(total_classes: int = 40, num_steps: int = 10, rho: float = 0.01,
                 class_rho: float = 0.01, n_max: int = 100, seeds: StreamSeeds | int = 0,
                 input_dim: int = 24, noise_scale: float = 1.0, separation: float = 3.0,
                 test_per_class: int = TEST_PER_CLASS) -> tuple[StreamProtocol, SyntheticDataset]:
    """Build the step protocol and the dataset it indexes.

    Class ``c`` has global frequency rank ``c`` (class 0 is the most frequent);
    class ids are shuffled across steps after the step sizes are permuted.
    """
    if isinstance(seeds, (int, np.integer)):
        seeds = StreamSeeds.from_seed(int(seeds))
    sizes = permute_steps(
        allocate_classes(step_proportions(rho, num_steps), total_classes), seeds.permutation)
    class_order = np.random.default_rng(seeds.assignment).permutation(total_classes)
    counts = longtail_counts(total_classes, n_max, class_rho)

    steps = []
    start = 0
    for t, size in enumerate(sizes, start=1):
        ids = tuple(int(c) for c in class_order[start:start + size])
        steps.append(StepSpec(t, ids, tuple(int(counts[c]) for c in ids)))
        start += size
    protocol = StreamProtocol(total_classes, num_steps, rho, tuple(steps), seeds.permutation)

    rng = np.random.default_rng(seeds.data)
    # expected distance between two prototypes is about 2 * separation
    prototypes = rng.standard_normal((total_classes, input_dim)) * (separation * math.sqrt(2.0 / input_dim))
    train_y = np.repeat(np.arange(total_classes), counts)
    train_x = prototypes[train_y] + noise_scale * rng.standard_normal((train_y.size, input_dim))
    test_y = np.repeat(np.arange(total_classes), test_per_class)
    test_x = prototypes[test_y] + noise_scale * rng.standard_normal((test_y.size, input_dim))
    data = SyntheticDataset(input_dim, prototypes, noise_scale, train_x, train_y, test_x, test_y,
                            seeds.data)
    return protocol, data
