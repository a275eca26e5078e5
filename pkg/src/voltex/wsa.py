"""Water-strider search over threshold vectors, driven by the Otsu objective.

Population members carry continuous positions; fitness is always computed on
the rounded-and-repaired integer vector.  One generation = deal the
fitness-sorted population round-robin into territories, mark each territory's
best member female, then let every male try in order: a mating move toward
its female, a foraging move toward the best known strider if mating did not
improve on its pre-move fitness, and finally replacement by a random larva
inside the territory's bounding box if foraging did not improve either.

Randomness is partitioned deterministically: each iteration draws one seeded
block of uniforms and every strider consumes its own row, so results do not
depend on evaluation order or thread count.  Positions are tiny (m <= a few
cuts), so the move arithmetic deliberately stays in plain Python floats.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import imagio, otsu
from .errors import ConfigError

DEFAULT_POPULATION = 20
DEFAULT_TERRITORIES = 5
DEFAULT_ITERATIONS = 100
DEFAULT_MATING_PROBABILITY = 0.5


@dataclass
class WsaConfig:
    """Run parameters for the threshold search."""

    m: int                                        # thresholds per vector
    population_size: int = DEFAULT_POPULATION
    territories: int = DEFAULT_TERRITORIES
    max_iterations: int = DEFAULT_ITERATIONS
    mating_probability: float = DEFAULT_MATING_PROBABILITY
    seed: int = 0
    best_scope: str = "global"                    # "global" or "territory"
    per_coordinate_rand: bool = False

    def validate(self):
        if self.m < 1:
            raise ConfigError(f"threshold count must be >= 1, got {self.m}")
        if self.territories < 1 or self.population_size < 2 * self.territories:
            raise ConfigError(
                f"need population_size >= 2*territories >= 2, got "
                f"{self.population_size} / {self.territories}"
            )
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not 0.0 <= self.mating_probability <= 1.0:
            raise ConfigError("mating probability must be in [0, 1]")
        if self.best_scope not in ("global", "territory"):
            raise ConfigError(f"unknown best_scope {self.best_scope!r}")


@dataclass
class WaterStrider:
    """One candidate solution: continuous position plus its evaluated state."""

    index: int
    position: np.ndarray             # continuous coordinates, sorted, in [1, L-1]
    cuts: np.ndarray | None = None   # rounded + repaired integer vector
    fitness: float = float("nan")
    territory_id: int = -1
    sex: str = "male"


@dataclass
class WsaTrace:
    """Per-iteration convergence record (cumulative evaluation counts)."""

    best_fitness: list = field(default_factory=list)
    evaluations: list = field(default_factory=list)
    elapsed_ms: list = field(default_factory=list)
    initial_evaluations: int = 0

    def rows(self):
        """(iteration, best_fitness, evaluations, elapsed_ms) tuples, 1-based."""
        return [
            (i + 1, self.best_fitness[i], self.evaluations[i], self.elapsed_ms[i])
            for i in range(len(self.best_fitness))
        ]

    @property
    def total_evaluations(self):
        return self.evaluations[-1] if self.evaluations else self.initial_evaluations


class FitnessEvaluator:
    """Counting prefix-sum evaluator of the between-class variance.

    Mathematically identical to otsu.evaluate (cross-checked in tests) but
    cheap enough for the move loop.
    """

    def __init__(self, hist):
        p = otsu.normalize(hist)
        self.levels = hist.levels
        self._cp = np.concatenate(([0.0], np.cumsum(p))).tolist()
        self._cs = np.concatenate(
            ([0.0], np.cumsum(np.arange(hist.levels) * p))
        ).tolist()
        self.global_mean = self._cs[-1]
        self.count = 0

    def __call__(self, cuts):
        self.count += 1
        cp, cs = self._cp, self._cs
        mu_t = self.global_mean
        fitness = 0.0
        lo = 0
        for hi in cuts:
            hi = int(hi)
            w = cp[hi] - cp[lo]
            if w > 0.0:
                mu = (cs[hi] - cs[lo]) / w
                fitness += w * (mu - mu_t) ** 2
            lo = hi
        w = cp[self.levels] - cp[lo]
        if w > 0.0:
            mu = (cs[self.levels] - cs[lo]) / w
            fitness += w * (mu - mu_t) ** 2
        return fitness


def _repair_list(position, levels):
    """Sorted continuous coordinates clamped into [1, L-1]."""
    hi = float(levels - 1)
    return sorted(
        1.0 if v < 1.0 else (hi if v > hi else float(v)) for v in position
    )


def repair_position(position, levels):
    """Sort and clamp a continuous position into [1, L-1]; idempotent."""
    return np.array(_repair_list(position, levels))


def _cuts_list(position, levels):
    m = len(position)
    top = levels - 1
    cuts = sorted(math.floor(float(v) + 0.5) for v in position)
    cuts = [1 if v < 1 else (top if v > top else v) for v in cuts]
    for i in range(1, m):
        if cuts[i] <= cuts[i - 1]:
            cuts[i] = cuts[i - 1] + 1
    for i in range(m - 1, -1, -1):
        cap = top - (m - 1 - i)
        if cuts[i] > cap:
            cuts[i] = cap
    return cuts


def round_to_cuts(position, levels):
    """Round a continuous position to a valid strictly increasing cut vector.

    Rounds half-up, clamps, sorts, bumps duplicates upward, then caps from
    the right so every cut stays inside [1, L-1].  Idempotent on valid
    vectors; requires m <= L-1.
    """
    return np.array(_cuts_list(position, levels), dtype=np.int64)


class _RowRng:
    """Sequential reader over one strider's pre-drawn uniform row.

    Exposes the ``random()`` subset of the Generator API that the move
    operators use, so tests may substitute a real Generator or a stub.
    """

    __slots__ = ("row", "cursor")

    def __init__(self, row):
        self.row = row
        self.cursor = 0

    def random(self, size=None):
        if size is None:
            value = self.row[self.cursor]
            self.cursor += 1
            return value
        values = self.row[self.cursor : self.cursor + size]
        self.cursor += size
        return values


def _iteration_block(seed, iteration, population_size, width):
    """One iteration's uniforms: row i belongs to strider index i."""
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(iteration,))
    )
    return rng.random((population_size, width))


def _evaluated(index, position, levels, evaluator):
    pos = _repair_list(position, levels)
    cuts = _cuts_list(pos, levels)
    fitness = evaluator(cuts) if evaluator is not None else float("nan")
    return WaterStrider(
        index=index,
        position=np.array(pos),
        cuts=np.array(cuts, dtype=np.int64),
        fitness=fitness,
    )


def initialize(config, hist, evaluator=None):
    """Draw the starting population uniformly over [1, L-1]^m and score it."""
    config.validate()
    levels = hist.levels
    if config.m > levels - 1:
        raise ConfigError(f"cannot place {config.m} cuts in [1, {levels - 1}]")
    if evaluator is None:
        evaluator = FitnessEvaluator(hist)
    block = _iteration_block(config.seed, 0, config.population_size, config.m)
    span = float(levels - 2)
    population = []
    for i in range(config.population_size):
        pos = [1.0 + span * u for u in block[i]]
        population.append(_evaluated(i, pos, levels, evaluator))
    return population


def allocate_territories(population, n_territories):
    """Deal the fitness-sorted population round-robin into territories.

    The population must already be sorted by fitness descending (stable).
    The first member dealt to each territory is its best and is marked
    female; everyone else is male.  Returns a list of member lists.
    """
    territories = [[] for _ in range(n_territories)]
    for rank, strider in enumerate(population):
        tid = rank % n_territories
        strider.territory_id = tid
        strider.sex = "female" if rank < n_territories else "male"
        territories[tid].append(strider)
    return territories


def _scales(rng, m, per_coordinate):
    if per_coordinate:
        return [float(v) for v in rng.random(m)]
    return [float(rng.random())] * m


def mating_step(male, female, mating_probability, rng, levels, evaluator=None,
                per_coordinate=False):
    """Move toward (or past) the female along the displacement vector.

    With probability P the move is X + R*rand, otherwise X + R*(1 + rand),
    where R = X_female - X_male.
    """
    mates = rng.random() < mating_probability
    rs = _scales(rng, len(male.position), per_coordinate)
    if not mates:
        rs = [1.0 + r for r in rs]
    pos = [
        float(x) + r * (float(f) - float(x))
        for x, f, r in zip(male.position, female.position, rs)
    ]
    return _evaluated(male.index, pos, levels, evaluator)


def forage_step(strider, best_position, rng, levels, evaluator=None,
                per_coordinate=False):
    """Move X + 2*rand*(X_best - X); used when mating did not improve."""
    rs = _scales(rng, len(strider.position), per_coordinate)
    pos = [
        float(x) + 2.0 * r * (float(b) - float(x))
        for x, b, r in zip(strider.position, best_position, rs)
    ]
    return _evaluated(strider.index, pos, levels, evaluator)


def succession_step(strider, territory_positions, rng, levels, evaluator=None):
    """Replace a still-unimproved strider by a larva inside the territory box.

    The box is the per-coordinate min/max of the territory's current member
    positions, widened by +-1 level where degenerate.
    """
    m = len(strider.position)
    us = rng.random(m)
    pos = []
    for j in range(m):
        lo = min(float(p[j]) for p in territory_positions)
        hi = max(float(p[j]) for p in territory_positions)
        if hi <= lo:
            lo -= 1.0
            hi += 1.0
        pos.append(lo + (hi - lo) * float(us[j]))
    return _evaluated(strider.index, pos, levels, evaluator)


def optimize(hist, config):
    """Run the full search; returns (best cuts, best fitness, trace)."""
    config.validate()
    evaluator = FitnessEvaluator(hist)
    levels = hist.levels
    population = initialize(config, hist, evaluator)
    trace = WsaTrace(initial_evaluations=evaluator.count)

    best = max(population, key=lambda s: s.fitness)
    best_cuts, best_fitness = best.cuts.copy(), best.fitness

    m = config.m
    row_width = 1 + 2 * (m if config.per_coordinate_rand else 1) + m
    for iteration in range(1, config.max_iterations + 1):
        t0 = time.perf_counter()
        block = _iteration_block(config.seed, iteration,
                                 config.population_size, row_width)
        population.sort(key=lambda s: (-s.fitness, s.index))
        territories = allocate_territories(population, config.territories)
        for territory in territories:
            female = territory[0]
            for slot in range(1, len(territory)):
                male = territory[slot]
                rng = _RowRng(block[male.index])
                pre_fitness = male.fitness

                moved = mating_step(
                    male, female, config.mating_probability, rng, levels,
                    evaluator, config.per_coordinate_rand,
                )
                if moved.fitness <= pre_fitness:
                    target = (
                        best_cuts
                        if config.best_scope == "global"
                        else female.position
                    )
                    moved = forage_step(
                        moved, target, rng, levels, evaluator,
                        config.per_coordinate_rand,
                    )
                if moved.fitness <= pre_fitness:
                    box = [s.position for s in territory]
                    moved = succession_step(moved, box, rng, levels, evaluator)

                territory[slot] = moved
                if moved.fitness > best_fitness:
                    best_fitness = moved.fitness
                    best_cuts = moved.cuts.copy()
        population = [s for territory in territories for s in territory]
        trace.best_fitness.append(best_fitness)
        trace.evaluations.append(evaluator.count)
        trace.elapsed_ms.append((time.perf_counter() - t0) * 1000.0)

    return best_cuts, best_fitness, trace


def apply_thresholds(values, cuts):
    """Label every element with its class index under the cut vector."""
    return np.searchsorted(np.asarray(cuts), values, side="right").astype(np.uint8)


def segment(obj, config):
    """Threshold an image or volume; returns (labels, cuts, fitness, trace)."""
    hist = imagio.histogram(obj)
    cuts, fitness, trace = optimize(hist, config)
    data = obj.voxels if isinstance(obj, imagio.Volume) else obj.pixels
    labels = apply_thresholds(data, cuts)
    return labels, cuts, fitness, trace
