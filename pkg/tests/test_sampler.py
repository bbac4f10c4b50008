import numpy as np
import pytest

from hybridvrp.qubo import QuboModel, VarLabel, add_squared_equality_penalty, energies
from hybridvrp.sampler import (
    ExhaustiveSampler,
    SamplerConfig,
    SamplerSizeError,
    SimulatedAnnealingSampler,
    anneal,
    default_beta_range,
    exact_minimum,
    exhaustive,
    exhaustive_minimum,
)


def model_with(n: int) -> QuboModel:
    m = QuboModel()
    for i in range(n):
        m.add_variable(VarLabel("var", i, 0, 0))
    return m


def random_model(rng, n: int, integer: bool = False) -> QuboModel:
    m = model_with(n)
    draw = (lambda: float(rng.integers(-5, 6))) if integer else (lambda: float(rng.normal()))
    for i in range(n):
        m.add_linear(i, draw())
        for j in range(i + 1, n):
            m.add_quadratic(i, j, draw())
    return m.freeze()


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(num_reads=0)
    with pytest.raises(ValueError):
        SamplerConfig(beta_schedule=(2.0, 1.0))
    with pytest.raises(ValueError):
        SamplerConfig(workers=0)


def test_single_variable():
    m = model_with(1)
    m.add_linear(0, -1)
    ss = anneal(m.freeze(), SamplerConfig(num_reads=20, sweeps_per_read=50))
    assert len(ss) == 1 and ss.counts[0] == 20
    assert ss.best[0].tolist() == [1] and ss.best[1] == -1


def test_frustrated_pair():
    m = model_with(2)
    m.add_linear(0, -1)
    m.add_linear(1, -1)
    m.add_quadratic(0, 1, 3)
    bits, e = anneal(m.freeze(), SamplerConfig(num_reads=10, sweeps_per_read=100)).best
    assert e == -1 and bits.sum() == 1


def test_twelve_variable_models_match_exhaustive():
    rng = np.random.default_rng(4)
    hits = 0
    for t in range(20):
        m = random_model(rng, 12)
        _, e_min = exhaustive_minimum(m)
        hits += np.isclose(anneal(m, SamplerConfig(num_reads=50, sweeps_per_read=500, seed=t)).best[1], e_min)
    assert hits >= 19


def test_energies_match_reevaluation():
    rng = np.random.default_rng(5)
    m = random_model(rng, 15, integer=True)
    ss = anneal(m, SamplerConfig(num_reads=30, sweeps_per_read=100, seed=1))
    assert np.array_equal(ss.energies, energies(m, ss.states))
    assert np.all(np.diff(ss.energies) >= 0)
    assert ss.counts.sum() == 30


def test_determinism_and_threading():
    rng = np.random.default_rng(6)
    m = random_model(rng, 20)
    cfg = SamplerConfig(num_reads=16, sweeps_per_read=200, seed=42, workers=1)
    a, b = anneal(m, cfg), anneal(m, SamplerConfig(num_reads=16, sweeps_per_read=200, seed=42, workers=4))
    assert np.array_equal(a.states, b.states) and np.array_equal(a.counts, b.counts)
    # a two-sweep run barely moves from its random start, so seeds show through
    short = [anneal(m, SamplerConfig(num_reads=4, sweeps_per_read=2, seed=s)).states for s in (1, 2)]
    assert not np.array_equal(*short)


def test_initial_states_are_used():
    # two degenerate minima; an ice-cold run stays in whichever it starts from
    m = model_with(2)
    m.add_linear(0, -1)
    m.add_linear(1, -1)
    m.add_quadratic(0, 1, 3)
    m.freeze()
    cold = SamplerConfig(num_reads=2, sweeps_per_read=5, beta_schedule=(1e3, 1e4))
    for start in ([1, 0], [0, 1]):
        ss = anneal(m, cold, initial_states=[start])
        assert len(ss) == 1 and ss.best[0].tolist() == start
    with pytest.raises(ValueError):
        anneal(m, SamplerConfig(num_reads=1, sweeps_per_read=1), initial_states=[[1, 1, 0]])


def test_more_sweeps_do_not_hurt():
    rng = np.random.default_rng(8)
    m = random_model(rng, 40)
    med = []
    for sweeps in (20, 40):
        med.append(np.median([anneal(m, SamplerConfig(num_reads=4, sweeps_per_read=sweeps, seed=s)).best[1] for s in range(30)]))
    assert med[1] <= med[0] + 1e-9


def test_default_beta_range():
    m = model_with(2)
    m.add_linear(0, 2.0)
    m.add_quadratic(0, 1, -4.0)
    lo, hi = default_beta_range(m.freeze())
    assert lo == pytest.approx(1 / 6) and hi == pytest.approx(1 / 2)


def test_exhaustive_empty_and_small():
    m = model_with(0)
    m.add_offset(2.5)
    ss = exhaustive(m.freeze())
    assert len(ss) == 1 and ss.best[1] == 2.5 and ss.states.shape == (1, 0)
    m3 = random_model(np.random.default_rng(1), 3)
    ss3 = exhaustive(m3)
    assert len(ss3) == 8 and np.all(np.diff(ss3.energies) >= 0)
    assert len({tuple(s) for s in ss3.states}) == 8


def test_exhaustive_cap():
    with pytest.raises(SamplerSizeError):
        exhaustive(model_with(27).freeze())


def test_exhaustive_chunking_and_gray_code_agree():
    m = random_model(np.random.default_rng(2), 10)
    full = exhaustive(m, chunk_bits=4)
    state, e = exhaustive_minimum(m)
    assert full.best[1] == pytest.approx(e)
    assert ExhaustiveSampler().sample(m).best[1] == pytest.approx(e)


def test_anneal_and_exhaustive_agree_on_small_models():
    rng = np.random.default_rng(12)
    sampler = SimulatedAnnealingSampler(SamplerConfig(num_reads=30, sweeps_per_read=300))
    for _ in range(10):
        m = random_model(rng, 8, integer=True)
        assert sampler.sample(m).best[1] == exhaustive(m).best[1]


@pytest.mark.parametrize("seed", range(8))
def test_exact_minimum_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = 14
    m = model_with(n)
    for _ in range(4):
        vars_ = rng.choice(n, 5, replace=False)
        add_squared_equality_penalty(m, [(int(v), float(rng.integers(-2, 3))) for v in vars_], float(rng.integers(-2, 3)), 3.0)
    for v in range(n):
        if rng.random() < 0.5:
            m.add_objective(v, float(rng.integers(-4, 5)))
    m.freeze()
    res = exact_minimum(m)
    _, e = exhaustive_minimum(m)
    assert res.proven and res.energy == pytest.approx(e)
    assert energies(m, res.state[None, :])[0] == pytest.approx(res.energy)


def test_exact_minimum_unstructured_falls_back():
    m = random_model(np.random.default_rng(3), 6)
    assert exact_minimum(m).energy == pytest.approx(exhaustive_minimum(m)[1])
