import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qrcload import gasearch as ga
from qrcload import ingest, reservoir
from qrcload.gasearch import EvaluatedGenome, Genome


def genome(**kw):
    base = dict(n_qubits=5, n_layers=3, encoding_strategy="cheb_stride1",
                coupling_strength=0.5, l1_ratio=0.5)
    base.update(kw)
    return Genome(**base)


def in_domain(g):
    return (g.n_qubits in ga.QUBIT_CHOICES and g.n_layers in ga.LAYER_CHOICES
            and g.encoding_strategy in ga.ENCODING_CHOICES
            and 0.1 <= g.coupling_strength <= 1.5 and 0.0 <= g.l1_ratio <= 1.0)


def test_genome_validation():
    with pytest.raises(ValueError):
        genome(n_qubits=8)
    with pytest.raises(ValueError):
        genome(coupling_strength=2.0)
    with pytest.raises(ValueError):
        genome(encoding_strategy="fourier")


def test_init_population_deterministic():
    a, b = ga.init_population(6, 11), ga.init_population(6, 11)
    assert a == b and len(a) == 6
    assert all(in_domain(g) for g in a)
    assert a != ga.init_population(6, 12)


@given(st.integers(0, 2**32 - 1))
def test_operators_stay_in_domain(seed):
    rng = np.random.default_rng(seed)
    a, b = ga.random_genome(rng), ga.random_genome(rng)
    child = ga.mutate(ga.crossover(a, b, rng), rng, rate=0.9, sigma_frac=2.0)
    assert in_domain(child)
    assert ga.crossover(a, a, rng) == a


def test_crossover_genes_come_from_parents():
    rng = np.random.default_rng(0)
    a = genome(n_qubits=5, n_layers=3, coupling_strength=0.2, l1_ratio=0.1)
    b = genome(n_qubits=7, n_layers=5, encoding_strategy="cheb_stride3",
               coupling_strength=1.4, l1_ratio=0.9)
    for _ in range(100):
        c = ga.crossover(a, b, rng)
        for gene in ga.GENE_ORDER:
            assert getattr(c, gene) in (getattr(a, gene), getattr(b, gene))


class NoMutate:
    def random(self, n):
        return np.ones(n)


def test_forced_no_mutation_is_identity():
    g = genome()
    assert ga.mutate(g, NoMutate(), rate=0.2) == g


def test_mutation_discrete_moves_and_clamps():
    class AlwaysMutate:
        def random(self, n):
            return np.zeros(n)

        def integers(self, n):
            return 0

        def normal(self, loc, scale):
            return 100.0

    m = ga.mutate(genome(), AlwaysMutate())
    assert m.n_qubits != 5 and m.n_layers != 3 and m.encoding_strategy == "cheb_stride3"
    assert m.coupling_strength == 1.5 and m.l1_ratio == 1.0


def ev(fitnesses):
    return [EvaluatedGenome(genome(l1_ratio=i / 10), f, 0) for i, f in enumerate(fitnesses)]


def test_tournament_single():
    pop = ev([3.0])
    rng = np.random.default_rng(0)
    assert all(ga.tournament_select(pop, rng) == pop[0].genome for _ in range(20))


def test_tournament_win_rate():
    pop = ev([1.0, 2.0])
    rng = np.random.default_rng(5)
    wins = sum(ga.tournament_select(pop, rng) == pop[0].genome for _ in range(10_000))
    # P(best wins) = 1 - (1/2)^2 = 3/4
    assert abs(wins / 10_000 - 0.75) < 4 * math.sqrt(0.75 * 0.25 / 10_000)


def test_tournament_ties_lower_index():
    class Both:
        def integers(self, lo, hi, size):
            return np.array([1, 0])

    pop = ev([2.0, 2.0])
    assert ga.tournament_select(pop, Both()) == pop[0].genome


def test_tournament_full_cover_picks_best():
    class Cover:
        def integers(self, lo, hi, size):
            return np.arange(hi)

    pop = ev([4.0, 1.5, 3.0, 2.0])
    assert ga.tournament_select(pop, Cover(), tsize=4) == pop[1].genome


def fake_fitness(g):
    return (abs(g.coupling_strength - 0.8) + abs(g.l1_ratio - 0.3)
            + 0.1 * (g.n_qubits != 7) + 0.05 * (g.n_layers != 4))


class Counting:
    def __init__(self, fail_on=None):
        self.memo, self.calls, self.fail_on = {}, 0, fail_on

    def __call__(self, g):
        self.calls += 1
        if self.fail_on is not None and self.fail_on(g):
            raise RuntimeError("boom")
        hit = g.key() in self.memo
        self.memo[g.key()] = fake_fitness(g)
        return self.memo[g.key()], hit


@pytest.mark.parametrize("seed", [0, 1, 2, 7])
def test_run_search_budget_and_elitism(seed):
    counter = Counting()
    res = ga.run_search(counter, seed=seed)
    assert res.n_evaluations == 18 and counter.calls == 18 and len(res.records) == 18
    assert len(res.best_per_generation) == 3
    assert all(b >= a for a, b in zip(res.best_per_generation[1:], res.best_per_generation))
    assert res.best.fitness == min(r["fitness"] for r in res.records)
    assert len(counter.memo) <= 18
    for gen in (1, 2):
        assert res.history[gen][0].genome == min(
            (e for h in res.history[:gen] for e in h), key=lambda e: e.fitness).genome
    assert all(in_domain(e.genome) for h in res.history for e in h)


def test_run_search_reproducible():
    a = ga.run_search(Counting(), seed=4)
    b = ga.run_search(Counting(), seed=4)
    strip = lambda recs: [{k: v for k, v in r.items() if k != "wall_time"} for r in recs]
    assert strip(a.records) == strip(b.records)
    assert a.best == b.best


def test_failed_candidate_gets_inf_and_search_continues():
    counter = Counting(fail_on=lambda g: g.n_qubits == 6)
    report = io.StringIO()
    res = ga.run_search(counter, seed=3, report=report)
    lines = [json.loads(x) for x in report.getvalue().splitlines()]
    assert len(lines) == 18
    failed = [r for r in lines if r["genome"]["n_qubits"] == 6]
    assert failed and all(r["fitness"] is None and "boom" in r["error"] for r in failed)
    assert math.isfinite(res.best.fitness)
    assert {"generation", "genome", "fitness", "wall_time"} <= set(lines[0])


@pytest.fixture(scope="module")
def short_data(synthetic_short_csv):
    return ingest.prepare(synthetic_short_csv)


def test_search_subset_is_most_recent(short_data):
    sub = ga.search_subset(short_data.train, 0.2)
    n = len(short_data.train)
    assert len(sub) == int(0.2 * n)
    assert np.array_equal(sub.target_timestamps, short_data.train.target_timestamps[n - len(sub):])


def test_evaluator_memo_skips_circuits(short_data):
    evaluator = ga.FitnessEvaluator(short_data.train, short_data.val)
    g = genome()
    f1, hit1 = evaluator(g)
    before = reservoir.CIRCUIT_COUNTER["rows"]
    f2, hit2 = evaluator(g)
    assert (hit1, hit2) == (False, True) and f1 == f2
    assert reservoir.CIRCUIT_COUNTER["rows"] == before
    assert evaluator.calls == 2 and evaluator.computed == 1
    again = ga.FitnessEvaluator(short_data.train, short_data.val)(g)[0]
    assert again == f1 and np.isfinite(f1) and f1 >= 0


def test_evaluator_mean_predictor_oracle(short_data):
    evaluator = ga.FitnessEvaluator(short_data.train, short_data.val, alphas=(1e6,))
    fit, _ = evaluator(genome())
    mu = evaluator.train.target_scaled.mean()
    oracle = np.sqrt(np.mean((short_data.val.target_scaled - mu) ** 2))
    assert fit == pytest.approx(oracle, rel=1e-12)


def test_evaluator_error_names_genome(short_data):
    evaluator = ga.FitnessEvaluator(short_data.train, short_data.val, alphas=())
    with pytest.raises(ga.FitnessError) as err:
        evaluator(genome())
    assert err.value.genome == genome()


def test_genome_dict_round_trip():
    from dataclasses import asdict

    g = genome(coupling_strength=0.123456789)
    assert ga.genome_from_dict(json.loads(json.dumps(asdict(g)))) == g
