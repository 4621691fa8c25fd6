"""Feature-weight search with a binary genetic algorithm.

A candidate weight vector is encoded as one block of bits per feature.
Each block reads as an unsigned integer scaled into [0, 1]; the resulting
fractions are floored at a small epsilon and normalized onto the simplex,
so every bit string decodes to a valid weight vector.

Candidates are scored against a frozen record of prediction rounds: for
each recorded slot the candidate weights rebuild the graph from the stored
feature rows, the propagation system is solved, and the fitness is the
inverse of the mean objective value across slots.  The rounds are recorded
once; only the weight-dependent similarity, graph, and solve are recomputed
per candidate.

Selection is roulette-wheel with the best individual always retained, which
makes the best fitness seen so far non-decreasing.  The search stops when
no strictly better individual has appeared for a configured number of
generations, or at a hard generation cap.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateGraphError, DegenerateSimilarityError, NumericalError
from .features import FeatureWeights, WeatherRecord
from .graph import SimilarityParams, assemble_weights
from .model import Reading
from .pipeline import PipelineState, step_traced
from .propagate import PropagationParams, loss, solve_closed_form

#: decoded raw fractions are floored here so no weight can reach zero
DECODE_FLOOR = 1e-6
#: fitness assigned to candidates whose graph cannot be built or solved
DEGENERATE_FITNESS = 1e-12
#: mean objectives below this count as zero to solver precision, capping
#: fitness at its inverse so population sums stay finite
LOSS_FLOOR = 1e-12

TERMINATION_STAGNATION = "stagnation"
TERMINATION_CAP = "generation-cap"


@dataclass(frozen=True)
class Genotype:
    """Bit string encoding one candidate weight vector."""

    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.bits) == 0:
            raise ValueError("genotype must hold at least one bit")
        if any(bit not in (0, 1) for bit in self.bits):
            raise ValueError("genotype bits must be 0 or 1")

    def __len__(self) -> int:
        return len(self.bits)


@dataclass(frozen=True)
class GaConfig:
    """Search hyperparameters."""

    population_size: int = 40
    crossover_prob: float = 0.6
    mutation_prob: float = 0.05
    stagnation_limit: int = 500
    bits_per_weight: int = 20
    decode_floor: float = DECODE_FLOOR
    seed: int = 0
    max_generations: int = 10_000

    def __post_init__(self) -> None:
        if self.population_size < 2 or self.population_size % 2 != 0:
            raise ValueError(
                f"population size must be an even number >= 2, got {self.population_size}")
        if not 0.0 <= self.crossover_prob <= 1.0:
            raise ValueError(f"crossover probability must lie in [0, 1], got {self.crossover_prob}")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError(f"mutation probability must lie in [0, 1], got {self.mutation_prob}")
        if self.stagnation_limit < 1:
            raise ValueError(f"stagnation limit must be >= 1, got {self.stagnation_limit}")
        if self.bits_per_weight < 1:
            raise ValueError(f"bits per weight must be >= 1, got {self.bits_per_weight}")
        if not 0.0 < self.decode_floor < 1.0:
            raise ValueError(f"decode floor must lie in (0, 1), got {self.decode_floor}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.max_generations < 1:
            raise ValueError(f"generation cap must be >= 1, got {self.max_generations}")


@dataclass(frozen=True)
class TuningSlot:
    """Recorded inputs of one prediction round.

    `features` holds the z-scored, weight-free row per node; `y` the
    pre-estimates that round solved against.  The label arrays record which
    nodes carried measurements, for reporting.
    """

    anchor: int
    features: np.ndarray = field(compare=False)
    y: np.ndarray = field(compare=False)
    label_mask: np.ndarray = field(compare=False)
    label_values: np.ndarray = field(compare=False)

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=float)
        y = np.asarray(self.y, dtype=float)
        mask = np.asarray(self.label_mask, dtype=bool)
        values = np.asarray(self.label_values, dtype=float)
        if features.ndim != 2 or features.shape[1] < 1:
            raise ValueError("features must be a 2-d array with at least one column")
        n = features.shape[0]
        if y.shape != (n,) or mask.shape != (n,) or values.shape != (n,):
            raise ValueError("per-node arrays must match the feature row count")
        if not (np.all(np.isfinite(features)) and np.all(np.isfinite(y))
                and np.all(np.isfinite(values))):
            raise ValueError("tuning slot contains non-finite values")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "label_mask", mask)
        object.__setattr__(self, "label_values", values)


@dataclass(frozen=True)
class TuningSet:
    """Frozen collection of rounds the fitness function scores against."""

    slots: tuple[TuningSlot, ...]

    def __post_init__(self) -> None:
        if len(self.slots) == 0:
            raise ValueError("tuning set must hold at least one slot")
        widths = {slot.features.shape[1] for slot in self.slots}
        if len(widths) != 1:
            raise ValueError(f"slots disagree on feature width: {sorted(widths)}")

    @property
    def feature_length(self) -> int:
        return self.slots[0].features.shape[1]


@dataclass(frozen=True)
class FitnessParams:
    """Graph and solver settings used when scoring candidates."""

    similarity: SimilarityParams = SimilarityParams()
    propagation: PropagationParams = PropagationParams()


@dataclass(frozen=True)
class _SlotGraph:
    """Just enough graph structure for the propagation solver."""

    weights: np.ndarray
    degrees: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.weights.shape[0])


def decode(genotype: Genotype, k: int, r: int,
           floor: float = DECODE_FLOOR) -> FeatureWeights:
    """Map k blocks of r bits to simplex weights.

    Each block reads as an unsigned integer scaled into [0, 1] by 2^r - 1;
    fractions are floored at `floor` (an all-zero block cannot kill its
    weight) and normalized to sum to one.
    """
    if k < 1 or r < 1:
        raise ValueError(f"k and r must be >= 1, got k={k}, r={r}")
    if len(genotype.bits) != k * r:
        raise ValueError(f"genotype holds {len(genotype.bits)} bits, expected {k * r}")
    blocks = np.asarray(genotype.bits, dtype=float).reshape(k, r)
    scale = np.power(2.0, np.arange(r - 1, -1, -1))
    raws = (blocks @ scale) / (2.0 ** r - 1.0)
    floored = np.maximum(raws, floor)
    beta = floored / floored.sum()
    return FeatureWeights(tuple(float(b) for b in beta))


def random_genotype(length: int, rng: np.random.Generator) -> Genotype:
    """Uniform random bit string of the given length."""
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    return Genotype(tuple(int(b) for b in rng.integers(0, 2, size=length)))


def crossover(a: Genotype, b: Genotype, rng: np.random.Generator,
              p_c: float = 1.0) -> tuple[Genotype, Genotype]:
    """Single-point tail swap, applied with probability `p_c`.

    The gate is drawn before the position so the generator advances the
    same way whether or not the swap happens.  The cut leaves at least one
    leading bit with each parent.
    """
    if len(a.bits) != len(b.bits):
        raise ValueError("parents must have equal genotype lengths")
    gate = rng.random()
    if gate >= p_c or len(a.bits) < 2:
        return a, b
    cut = int(rng.integers(1, len(a.bits)))
    return (Genotype(a.bits[:cut] + b.bits[cut:]),
            Genotype(b.bits[:cut] + a.bits[cut:]))


def mutate(genotype: Genotype, p_m: float, rng: np.random.Generator) -> Genotype:
    """Flip each bit independently with probability `p_m`."""
    if not 0.0 <= p_m <= 1.0:
        raise ValueError(f"mutation probability must lie in [0, 1], got {p_m}")
    flips = rng.random(len(genotype.bits)) < p_m
    return Genotype(tuple(int(bit ^ flip) for bit, flip in zip(genotype.bits, flips)))


def fitness(genotype: Genotype, data: TuningSet,
            params: FitnessParams = FitnessParams(),
            floor: float = DECODE_FLOOR) -> float:
    """Inverse mean objective of the decoded weights across recorded rounds.

    A candidate whose graph degenerates or whose solve fails on any slot
    scores `DEGENERATE_FITNESS` instead of raising, keeping the population
    search alive.
    """
    k = data.feature_length
    r, leftover = divmod(len(genotype.bits), k)
    if leftover != 0 or r < 1:
        raise ValueError(
            f"genotype of {len(genotype.bits)} bits does not split into {k} equal blocks")
    weights = decode(genotype, k, r, floor)
    total = 0.0
    for slot in data.slots:
        try:
            w, degrees = assemble_weights(slot.features, weights, params.similarity)
            graph = _SlotGraph(w, degrees)
            f = solve_closed_form(graph, slot.y, params.propagation)
            # cancellation in the objective can dip microscopically negative
            total += max(loss(graph, f, slot.y, params.propagation.lam), 0.0)
        except (DegenerateGraphError, DegenerateSimilarityError, NumericalError):
            return DEGENERATE_FITNESS
    return 1.0 / max(total / len(data.slots), LOSS_FLOOR)


def roulette_indices(fitnesses: Sequence[float], size: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Sample indices with replacement, proportionally to fitness."""
    fits = np.asarray(fitnesses, dtype=float)
    if fits.ndim != 1 or fits.size == 0:
        raise ValueError("fitnesses must be a non-empty vector")
    if not np.all(np.isfinite(fits)) or np.any(fits <= 0.0):
        raise ValueError("fitness values must be positive and finite")
    return rng.choice(fits.size, size=size, replace=True, p=fits / fits.sum())


def select(population: Sequence[Genotype], fitnesses: Sequence[float],
           rng: np.random.Generator) -> list[Genotype]:
    """Next generation: the current best individual plus roulette draws.

    Keeping the best individual unconditionally makes the best fitness
    monotone across generations, which the stagnation stop relies on.
    """
    population = list(population)
    fits = np.asarray(fitnesses, dtype=float)
    if len(population) != fits.size:
        raise ValueError("population and fitnesses must have equal lengths")
    draws = roulette_indices(fits, len(population) - 1, rng)
    best = int(np.argmax(fits))
    return [population[best]] + [population[int(i)] for i in draws]


@dataclass(frozen=True)
class GenerationStats:
    """Fitness summary of one evaluated generation."""

    generation: int
    best: float
    best_ever: float
    mean: float


@dataclass(frozen=True)
class GaResult:
    """Outcome of one search run."""

    weights: FeatureWeights
    best_fitness: float
    history: tuple[GenerationStats, ...]
    termination: str

    @property
    def generations(self) -> int:
        return len(self.history)


def _stream_rng(seed: int, generation: int, index: int) -> np.random.Generator:
    """Independent generator for one (generation, index) work item."""
    return np.random.default_rng(np.random.SeedSequence((seed, generation, index)))


def run_ga(data: TuningSet, cfg: GaConfig = GaConfig(),
           params: FitnessParams = FitnessParams()) -> GaResult:
    """Evolve weight candidates until stagnation or the generation cap.

    Fitness is a pure function of the genotype, so repeated genotypes are
    looked up in a cache.  Every random draw comes from a generator derived
    from (seed, generation, index): the initial population at the
    individual index, parent pairs at the pair index, selection at the
    population size.  The run is a pure function of the configuration, and
    pair work items could be evaluated in parallel without changing it.
    """
    k = data.feature_length
    length = k * cfg.bits_per_weight
    cache: dict[tuple[int, ...], float] = {}

    def score(genotype: Genotype) -> float:
        value = cache.get(genotype.bits)
        if value is None:
            value = fitness(genotype, data, params, cfg.decode_floor)
            cache[genotype.bits] = value
        return value

    population = [random_genotype(length, _stream_rng(cfg.seed, 0, i))
                  for i in range(cfg.population_size)]
    fits = [score(g) for g in population]
    best_index = int(np.argmax(fits))
    best_genotype, best_fitness = population[best_index], fits[best_index]
    last_improvement = 0
    history = [GenerationStats(0, float(np.max(fits)), best_fitness, float(np.mean(fits)))]

    termination = TERMINATION_CAP
    for generation in range(1, cfg.max_generations + 1):
        offspring: list[Genotype] = []
        for pair in range(cfg.population_size // 2):
            rng = _stream_rng(cfg.seed, generation, pair)
            first, second = crossover(population[2 * pair], population[2 * pair + 1],
                                      rng, cfg.crossover_prob)
            offspring.append(mutate(first, cfg.mutation_prob, rng))
            offspring.append(mutate(second, cfg.mutation_prob, rng))
        # the best individual found so far survives every generation
        offspring[0] = best_genotype
        fits = [score(g) for g in offspring]
        generation_best = float(np.max(fits))
        if generation_best > best_fitness:
            best_index = int(np.argmax(fits))
            best_genotype, best_fitness = offspring[best_index], fits[best_index]
            last_improvement = generation
        history.append(GenerationStats(generation, generation_best, best_fitness,
                                       float(np.mean(fits))))
        if generation - last_improvement >= cfg.stagnation_limit:
            termination = TERMINATION_STAGNATION
            break
        population = select(offspring, fits,
                            _stream_rng(cfg.seed, generation, cfg.population_size))

    weights = decode(best_genotype, k, cfg.bits_per_weight, cfg.decode_floor)
    return GaResult(weights=weights, best_fitness=best_fitness,
                    history=tuple(history), termination=termination)


def collect_tuning_set(state: PipelineState,
                       rounds: Iterable[tuple[list[Reading], WeatherRecord]],
                       ) -> tuple[TuningSet, PipelineState]:
    """Advance the pipeline one round per entry, recording fitness inputs.

    The recorded pre-estimates come from the state's frozen weights, so the
    set reflects the stream the caller would actually have predicted on.
    """
    slots = []
    for readings, weather in rounds:
        _, state, trace = step_traced(state, readings, weather)
        slots.append(TuningSlot(anchor=trace.anchor, features=trace.features,
                                y=trace.y, label_mask=trace.label_mask,
                                label_values=trace.label_values))
    return TuningSet(tuple(slots)), state
