import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vscreen import tune
from vscreen.tune import (
    InvalidConfig,
    KernelSurrogate,
    Knob,
    KnobSpace,
    Observation,
    SyntheticSurface,
    autotune,
    best_quality,
    default_space,
    evaluate,
    pareto_front,
    random_search,
    suggest_next,
)

SMALL = KnobSpace((Knob("a", (1, 2, 3, 4)), Knob("b", ("x", "y", "z")), Knob("c", (0.1, 0.2))))


def obs(q, c, **config):
    return Observation(config or {"a": 1}, q, c)


def brute_pareto(history):
    out = []
    for o in history:
        if not any(p.quality <= o.quality and p.cost <= o.cost and (p.quality, p.cost) != (o.quality, o.cost) for p in history):
            if (o.quality, o.cost) not in {(x.quality, x.cost) for x in out}:
                out.append(o)
    return sorted(out, key=lambda o: o.cost)


def test_default_space_shape():
    space = default_space()
    assert len(space.knobs) == 11
    assert space.size > 60_000_000
    config = space.config([0] * 11)
    assert space.contains(config)


def test_space_round_trip(tmp_path):
    SMALL.save(tmp_path / "s.json")
    assert KnobSpace.load(tmp_path / "s.json") == SMALL
    with pytest.raises(ValueError):
        Knob("k", ())
    with pytest.raises(ValueError):
        KnobSpace((Knob("a", (1,)), Knob("a", (2,))))


def test_invalid_config():
    surface = SyntheticSurface.random(SMALL, seed=0)
    with pytest.raises(InvalidConfig):
        evaluate({"a": 5, "b": "x", "c": 0.1}, surface, SMALL)
    with pytest.raises(InvalidConfig):
        evaluate({"a": 1, "b": "x"}, surface, SMALL)
    with pytest.raises(ValueError):
        Observation({"a": 1}, 1.0, -1.0)


def test_surface_optimum():
    space = default_space()
    exact = SyntheticSurface.random(space, seed=4)
    at_opt = evaluate(exact.optimum_config(), exact, space)
    assert at_opt.quality == exact.minimum
    assert evaluate(exact.optimum_config(), exact, space) == at_opt
    noisy = SyntheticSurface.random(space, seed=4, noise=0.01)
    q = evaluate(noisy.optimum_config(), noisy, space).quality
    assert abs(q - noisy.minimum) <= 3 * 0.01
    assert evaluate(noisy.optimum_config(), noisy, space).quality == q
    g = np.random.default_rng(0)
    for _ in range(200):
        config = space.config(g.integers(0, space.dims))
        assert exact(config)[0] >= exact.minimum


def test_empty_history_suggestion_is_valid():
    assert SMALL.contains(suggest_next([], SMALL, seed=1))
    assert default_space().contains(suggest_next([], seed=1))


def test_one_knob_quadratic():
    space = KnobSpace((Knob("x", tuple(range(400))),))
    surface = SyntheticSurface(space, (271,), (1.0,), (1.0,), (0, 0), rho=0.0)
    history = autotune(surface, 30, space, seed=3)
    assert best_quality(history) <= surface.minimum * 1.01
    assert best_quality(history) <= best_quality(random_search(surface, 30, space, seed=3))


def test_budget_violations_fall_back_to_cheapest_prediction():
    surface = SyntheticSurface.random(SMALL, seed=2)
    history = [evaluate(SMALL.config(i), surface, SMALL) for i in [(0, 0, 0), (3, 2, 1), (1, 1, 0), (2, 0, 1), (3, 1, 0), (0, 2, 1), (1, 0, 1), (2, 2, 0), (3, 0, 1)]]
    budget = min(o.cost for o in history) / 10
    pick = suggest_next(history, SMALL, budget=budget, seed=0)
    seen = {SMALL.indices(o.config) for o in history}
    unseen = [idx for idx in np.ndindex(*SMALL.dims) if idx not in seen]
    x = SMALL.coords([SMALL.indices(o.config) for o in history])
    cost_model = KernelSurrogate(x, [o.cost for o in history])
    predicted, _ = cost_model.predict(SMALL.coords(unseen))
    assert SMALL.indices(pick) == unseen[int(np.argmin(predicted))]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 30))
def test_suggestions_are_new_until_exhausted(seed, evals):
    surface = SyntheticSurface.random(SMALL, seed=seed, noise=0.05)
    history = autotune(surface, evals, SMALL, seed=seed)
    keys = [SMALL.indices(o.config) for o in history]
    assert all(SMALL.contains(o.config) for o in history)
    distinct = len(set(keys[: SMALL.size]))
    assert distinct == min(evals, SMALL.size)


def test_suggest_is_pure():
    space = default_space()
    surface = SyntheticSurface.random(space, seed=1)
    history = autotune(surface, 12, space, seed=1)
    assert suggest_next(history, space, seed=5) == suggest_next(history, space, seed=5)
    assert autotune(surface, 12, space, seed=1) == history


def test_pareto_examples():
    single = [obs(1, 1)]
    assert pareto_front(single) == single
    assert [(o.quality, o.cost) for o in pareto_front([obs(1, 1), obs(2, 2)])] == [(1, 1)]
    assert [(o.quality, o.cost) for o in pareto_front([obs(1, 2), obs(2, 1)])] == [(2, 1), (1, 2)]
    assert len(pareto_front([obs(1, 1), obs(1, 1, b=2)])) == 1


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)), min_size=1, max_size=40))
def test_pareto_front_properties(points):
    history = [obs(float(q), float(c)) for q, c in points]
    front = pareto_front(history)
    for a in front:
        assert not any(tune._dominates(b, a) for b in history)
    assert [(o.quality, o.cost) for o in front] == [(o.quality, o.cost) for o in brute_pareto(history)]
    costs = [o.cost for o in front]
    assert costs == sorted(costs)
    assert min(o.cost for o in history) == front[0].cost
    assert min(o.quality for o in history) == min(o.quality for o in front)


def test_history_and_csv(tmp_path):
    surface = SyntheticSurface.random(SMALL, seed=6)
    history = autotune(surface, 10, SMALL, seed=6)
    tune.write_history(tmp_path / "h.jsonl", history)
    assert tune.read_history(tmp_path / "h.jsonl") == history
    lines = (tmp_path / "h.jsonl").read_text().splitlines()
    assert all(set(json.loads(line)) == {"config", "quality", "cost"} for line in lines)
    tune.write_tradeoff_csv(tmp_path / "t.csv", history)
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert list(rows[0]) == ["cost", "quality", "dominated"]
    front = {(o.cost, o.quality) for o in pareto_front(history)}
    for row in rows:
        key = (float(row["cost"]), float(row["quality"]))
        assert (row["dominated"] == "0") == (key in front)


def test_kernel_surrogate_interpolates_its_data():
    x = np.array([[0.0], [0.5], [1.0]])
    model = KernelSurrogate(x, [3.0, 1.0, 2.0])
    assert model.bandwidth == pytest.approx(0.5)
    mean, sigma = model.predict(x)
    assert np.argmin(mean) == 1
    assert np.all(sigma >= 0)
    _, far = model.predict(np.array([[5.0]]))
    assert far[0] == pytest.approx(math.sqrt(np.var([3.0, 1.0, 2.0])), rel=0.05)


def test_expected_improvement():
    ei = tune.expected_improvement(np.array([0.0, 1.0, 2.0]), np.array([0.0, 0.0, 1.0]), 1.0)
    assert ei[0] == 1.0 and ei[1] == 0.0
    assert 0 < ei[2] < 0.1


def test_pipeline_objective():
    from vscreen.chem import embed_3d, parse_smiles
    from vscreen.dock import Pocket
    from vscreen.pipeline import _shipped

    pocket = Pocket.load(_shipped("pocket.json"))
    confs = [embed_3d(parse_smiles(s), ligand_id=s) for s in ("CCO", "CC(=O)N")]
    space = default_space()
    objective = tune.PipelineObjective(confs, pocket, space, seed=1)
    config = space.config([0] * 11)
    quality, cost = objective(config)
    assert quality >= 0 and cost >= 0
    assert objective(config)[0] == quality
