"""Genetic search over reservoir architectures.

Generation 0 is sampled uniformly; every later generation keeps the best
genome seen so far and fills the rest with tournament -> crossover -> mutation
offspring. Fitness is the validation RMSE (scaled units) of an elastic-net
readout trained on the most recent slice of the training windows.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import reservoir
from .readout import DEFAULT_ALPHA_GRID, rmse, select_alpha

logger = logging.getLogger(__name__)

QUBIT_CHOICES = (5, 6, 7)
LAYER_CHOICES = (3, 4, 5)
ENCODING_CHOICES = ("cheb_stride1", "cheb_stride3")
COUPLING_RANGE = (0.1, 1.5)
L1_RANGE = (0.0, 1.0)
DISCRETE_GENES = {"n_qubits": QUBIT_CHOICES, "n_layers": LAYER_CHOICES,
                  "encoding_strategy": ENCODING_CHOICES}
CONTINUOUS_GENES = {"coupling_strength": COUPLING_RANGE, "l1_ratio": L1_RANGE}
GENE_ORDER = ("n_qubits", "n_layers", "encoding_strategy", "coupling_strength", "l1_ratio")


class FitnessError(RuntimeError):
    """Fitness evaluation failed; ``genome`` names the candidate."""

    def __init__(self, genome, cause):
        super().__init__(f"{genome}: {type(cause).__name__}: {cause}")
        self.genome = genome


@dataclass(frozen=True)
class Genome:
    n_qubits: int
    n_layers: int
    encoding_strategy: str
    coupling_strength: float
    l1_ratio: float

    def __post_init__(self):
        for name, choices in DISCRETE_GENES.items():
            if getattr(self, name) not in choices:
                raise ValueError(f"{name}={getattr(self, name)!r} not in {choices}")
        for name, (lo, hi) in CONTINUOUS_GENES.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v!r} outside [{lo}, {hi}]")

    def key(self):
        return tuple(getattr(self, g) for g in GENE_ORDER)

    def to_config(self, seed=0, kernel_decays=reservoir.DEFAULT_DECAYS):
        return reservoir.ReservoirConfig(
            n_qubits=self.n_qubits, n_layers=self.n_layers,
            encoding_strategy=self.encoding_strategy,
            coupling_strength=self.coupling_strength, l1_ratio=self.l1_ratio,
            kernel_decays=kernel_decays, seed=seed)


@dataclass(frozen=True)
class EvaluatedGenome:
    genome: Genome
    fitness: float
    eval_seed: int


def random_genome(rng):
    return Genome(
        n_qubits=int(rng.choice(QUBIT_CHOICES)),
        n_layers=int(rng.choice(LAYER_CHOICES)),
        encoding_strategy=str(rng.choice(ENCODING_CHOICES)),
        coupling_strength=float(rng.uniform(*COUPLING_RANGE)),
        l1_ratio=float(rng.uniform(*L1_RANGE)),
    )


def init_population(size=6, seed=0):
    rng = np.random.default_rng(seed)
    return [random_genome(rng) for _ in range(size)]


def tournament_select(population, rng, tsize=2):
    """Best of ``tsize`` uniform draws with replacement; ties go to the lower index."""
    if not population:
        raise ValueError("empty population")
    picks = rng.integers(0, len(population), size=tsize)
    winner = min(picks, key=lambda i: (population[i].fitness, i))
    return population[winner].genome


def crossover(a, b, rng):
    """Uniform crossover: each gene from ``a`` or ``b`` with probability 1/2."""
    take_a = rng.random(len(GENE_ORDER)) < 0.5
    return Genome(**{g: getattr(a if t else b, g) for g, t in zip(GENE_ORDER, take_a)})


def mutate(genome, rng, rate=0.2, sigma_frac=0.1):
    """Resample each gene with probability ``rate``.

    Discrete genes move to a different allowed value; continuous genes get a
    Gaussian step of ``sigma_frac`` times their range, clamped to the domain.
    """
    genes = asdict(genome)
    hits = rng.random(len(GENE_ORDER)) < rate
    for name, hit in zip(GENE_ORDER, hits):
        if not hit:
            continue
        if name in DISCRETE_GENES:
            others = [c for c in DISCRETE_GENES[name] if c != genes[name]]
            genes[name] = others[int(rng.integers(len(others)))]
        else:
            lo, hi = CONTINUOUS_GENES[name]
            step = rng.normal(0.0, sigma_frac * (hi - lo))
            genes[name] = float(min(hi, max(lo, genes[name] + step)))
    return Genome(**genes)


def search_subset(windows, fraction=0.2):
    """Chronologically last ``fraction`` of a window set (at least two windows)."""
    n = len(windows)
    m = max(2, int(math.floor(fraction * n + 1e-9)))
    return windows.subset(n - m, n)


class FitnessEvaluator:
    """Memoized fitness: exact-mode features, alpha grid on validation.

    ``calls`` counts every request (memo hits included); ``computed`` counts
    genomes whose features were actually extracted.
    """

    def __init__(self, train, val, seed=0, alphas=DEFAULT_ALPHA_GRID,
                 kernel_decays=reservoir.DEFAULT_DECAYS, subset_fraction=0.2,
                 cache_dir=None):
        self.train = search_subset(train, subset_fraction)
        self.val = val
        self.seed = seed
        self.alphas = tuple(alphas)
        self.kernel_decays = tuple(kernel_decays)
        self.cache_dir = cache_dir
        self.memo = {}
        self.calls = 0
        self.computed = 0

    def score(self, genome):
        config = genome.to_config(self.seed, self.kernel_decays)
        params = reservoir.generate_params(config)
        R_tr = reservoir.extract_dataset(self.train.inputs, params, config,
                                         cache_dir=self.cache_dir)
        R_va = reservoir.extract_dataset(self.val.inputs, params, config,
                                         cache_dir=self.cache_dir)
        model = select_alpha(R_tr, self.train.target_scaled, R_va, self.val.target_scaled,
                             genome.l1_ratio, self.alphas)
        return rmse(model.predict(R_va), self.val.target_scaled)

    def __call__(self, genome):
        self.calls += 1
        key = genome.key()
        if key in self.memo:
            return self.memo[key], True
        self.computed += 1
        try:
            value = self.score(genome)
        except Exception as exc:  # noqa: BLE001
            raise FitnessError(genome, exc) from exc
        self.memo[key] = value
        return value, False


@dataclass
class SearchResult:
    best: EvaluatedGenome
    records: list
    best_per_generation: list
    n_evaluations: int
    history: list = field(default_factory=list)


def run_search(evaluate, generations=3, population=6, elitism=1, seed=0,
               tournament_size=2, mutation_rate=0.2, sigma_frac=0.1, report=None):
    """Evolve ``population`` genomes for ``generations`` generations.

    ``evaluate(genome) -> (fitness, from_memo)``. A candidate that raises gets
    fitness ``inf`` and the search continues. ``report``, if given, is a
    writable text stream receiving one JSON line per evaluation.
    """
    if elitism < 0 or elitism >= population:
        raise ValueError("elitism must be in [0, population)")
    rng = np.random.default_rng(seed)
    records = []
    best = None
    best_per_gen = []
    history = []
    genomes = init_population(population, int(rng.integers(2**32)))
    for gen in range(generations):
        evaluated = []
        for genome in genomes:
            t0 = time.perf_counter()
            error = None
            try:
                fit, memo = evaluate(genome)
                fit = float(fit)
                if not math.isfinite(fit) or fit < 0:
                    raise ValueError(f"invalid fitness {fit!r}")
            except Exception as exc:  # noqa: BLE001 - any candidate failure is logged
                logger.warning("candidate %s failed: %s", genome, exc)
                fit, memo, error = math.inf, False, f"{type(exc).__name__}: {exc}"
            ev = EvaluatedGenome(genome, fit, seed)
            evaluated.append(ev)
            rec = {"generation": gen, "genome": asdict(genome),
                   "fitness": fit if math.isfinite(fit) else None,
                   "cached": memo, "wall_time": time.perf_counter() - t0}
            if error:
                rec["error"] = error
            records.append(rec)
            if report is not None:
                report.write(json.dumps(rec, sort_keys=True) + "\n")
            if best is None or fit < best.fitness:
                best = ev
        history.append(evaluated)
        best_per_gen.append(best.fitness)
        if gen == generations - 1:
            break
        ranked = sorted(range(len(evaluated)), key=lambda i: (evaluated[i].fitness, i))
        elites = [best.genome] + [evaluated[i].genome for i in ranked
                                  if evaluated[i].genome != best.genome][:elitism - 1]
        children = []
        while len(children) < population - len(elites[:elitism]):
            a = tournament_select(evaluated, rng, tournament_size)
            b = tournament_select(evaluated, rng, tournament_size)
            children.append(mutate(crossover(a, b, rng), rng, mutation_rate, sigma_frac))
        genomes = elites[:elitism] + children
    return SearchResult(best, records, best_per_gen, len(records), history)


def genome_from_dict(d):
    return Genome(int(d["n_qubits"]), int(d["n_layers"]), str(d["encoding_strategy"]),
                  float(d["coupling_strength"]), float(d["l1_ratio"]))
