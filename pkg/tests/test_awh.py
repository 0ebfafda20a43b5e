import math

import numpy as np
import pytest

from vscreen.fep import AlchemicalModel, NonFiniteEnergy, awh_estimate, awh_run
from vscreen.fep.awh import BURN_IN, FLATNESS, GAMMA_FINAL

STEPS = 20000
SEEDS = range(20)


def seed_stats(model, seeds=SEEDS, steps=STEPS):
    values = np.array([awh_run(model, steps, s).delta_f for s in seeds])
    return values.mean(), values.std(ddof=1) / math.sqrt(len(values))


def test_exact_free_energies():
    assert AlchemicalModel.harmonic((1.0, 1.0)).exact_delta_f == 0.0
    assert AlchemicalModel.shifted_wells((0.0, 2.0)).exact_delta_f == 2.0
    assert AlchemicalModel.harmonic((1.0, 2.0)).exact_delta_f == pytest.approx(0.5 * math.log(2))
    assert 0.5 * math.log(2) == pytest.approx(0.3466, abs=1e-4)


def test_exact_value_matches_numerical_partition_functions():
    model = AlchemicalModel((1.0, 3.0), (0.0, 1.5), (0.0, 0.7))
    x = np.linspace(-30, 30, 600001)
    z = [np.trapezoid(np.exp(-np.array([model.energy(s, v) for v in (x,)])[0]), x) for s in (0, 1)]
    assert -math.log(z[1] / z[0]) == pytest.approx(model.exact_delta_f, abs=1e-9)


@pytest.mark.parametrize(
    "model",
    [
        AlchemicalModel.harmonic((1.0, 1.0)),
        AlchemicalModel.shifted_wells((0.0, 2.0)),
        AlchemicalModel.harmonic((1.0, 2.0)),
    ],
    ids=["symmetric", "offset", "harmonic"],
)
def test_families_within_three_standard_errors(model):
    mean, sem = seed_stats(model)
    assert abs(mean - model.exact_delta_f) <= 3 * sem
    assert sem < 0.1


def test_three_state_ladder():
    model = AlchemicalModel((1.0, 1.5, 2.0), (0.0, 0.5, 1.0), (0.0, 0.5, 1.0))
    mean, sem = seed_stats(model, range(10), 30000)
    assert abs(mean - model.exact_delta_f) <= 3 * sem


def test_reversal_negates_estimate():
    model = AlchemicalModel((1.0, 2.0), (0.0, 0.3), (0.0, 1.0))
    fwd, s1 = seed_stats(model, range(12))
    rev, s2 = seed_stats(model.reversed(), range(12))
    assert abs(fwd + rev) <= 3 * math.hypot(s1, s2)
    assert model.reversed().exact_delta_f == -model.exact_delta_f


def test_stage_flatness_and_history():
    res = awh_run(AlchemicalModel.shifted_wells((0.0, 2.0)), STEPS, 5)
    assert res.flatness_history and all(f >= FLATNESS for f in res.flatness_history)
    assert len(res.bias_history) == len(res.flatness_history) + 1
    assert np.array_equal(res.bias_history[-1], res.bias)
    assert res.converged or res.steps_used == BURN_IN + STEPS
    delta, history = awh_estimate(AlchemicalModel.shifted_wells((0.0, 2.0)), STEPS, 5)
    assert delta == res.delta_f
    assert len(history) == len(res.bias_history)


def test_long_run_refines_to_final_gamma():
    res = awh_run(AlchemicalModel.harmonic((1.0, 2.0)), 400000, 1)
    assert res.converged
    assert res.delta_f == pytest.approx(0.5 * math.log(2), abs=0.1)
    assert GAMMA_FINAL == 1e-4


def test_deterministic_per_seed():
    model = AlchemicalModel.harmonic((1.0, 2.0))
    a, b = awh_run(model, STEPS, 3), awh_run(model, STEPS, 3)
    assert a.delta_f == b.delta_f
    assert all(np.array_equal(x, y) for x, y in zip(a.bias_history, b.bias_history))
    assert awh_run(model, STEPS, 4).delta_f != a.delta_f


def test_invalid_models():
    with pytest.raises(NonFiniteEnergy):
        awh_run(AlchemicalModel.harmonic((1.0, 0.0)), STEPS)
    with pytest.raises(NonFiniteEnergy):
        awh_run(AlchemicalModel.shifted_wells((0.0, math.inf)), STEPS)
    with pytest.raises(ValueError):
        awh_run(AlchemicalModel.harmonic((1.0, 2.0)), 999)
    with pytest.raises(ValueError):
        AlchemicalModel.harmonic((1.0,))
