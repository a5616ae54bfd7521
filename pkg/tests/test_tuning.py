import io
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kge.errors import ConfigError, NoResultError
from kge.training import GOLDEN_KEYS
from kge.tuning import (Categorical, IntGrid, LogUniform, Trial, Uniform, default_space,
                        format_golden, in_space, load_trials, suggest, suggestion_rng, tune)
from oracles import lr_search


def finished(space, rng, n, objective):
    out = []
    for i in range(n):
        a = suggest(space, out, rng)
        out.append(Trial(i, a, objective(a)))
    return out


class TestSuggest:
    def test_single_point_space(self, rng):
        space = {"opt": Categorical(("sgd",)), "epochs": IntGrid((5,))}
        history = []
        for i in range(15):
            point = suggest(space, history, rng)
            assert point == {"opt": "sgd", "epochs": 5}
            history.append(Trial(i, point, float(i)))

    def test_empty_history_is_uniform_within_bounds(self):
        space = {"x": Uniform(2.0, 3.0)}
        xs = [suggest(space, [], np.random.default_rng(s))["x"] for s in range(400)]
        assert min(xs) >= 2.0 and max(xs) <= 3.0
        # a uniform draw fills both halves
        assert 150 < sum(x < 2.5 for x in xs) < 250

    def test_reproducible_given_history(self):
        space = default_space()
        a = finished(space, np.random.default_rng(3), 15, lambda p: p["margin"])
        b = finished(space, np.random.default_rng(3), 15, lambda p: p["margin"])
        assert [t.assignment for t in a] == [t.assignment for t in b]

    def test_failed_trials_are_ignored(self, rng):
        space = {"x": Uniform(0.0, 1.0)}
        history = [Trial(i, {"x": 0.5}, None, "failed") for i in range(20)]
        assert 0.0 <= suggest(space, history, rng)["x"] <= 1.0

    def test_model_phase_concentrates_near_optimum(self):
        space = {"x": Uniform(0.0, 1.0)}
        history = finished(space, np.random.default_rng(0), 40, lambda p: (p["x"] - 0.2) ** 2)
        late = [t.assignment["x"] for t in history[20:]]
        assert np.median(np.abs(np.array(late) - 0.2)) < 0.1

    domains = st.one_of(
        st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=1, max_size=4, unique=True)
        .map(lambda v: Categorical(tuple(v))),
        st.lists(st.integers(-50, 50), min_size=1, max_size=5, unique=True)
        .map(lambda v: IntGrid(tuple(sorted(v)))),
        st.tuples(st.floats(-100, 100), st.floats(0.01, 50)).map(lambda p: Uniform(p[0], p[0] + p[1])),
        st.tuples(st.floats(1e-6, 1.0), st.floats(1.5, 1e4)).map(lambda p: LogUniform(p[0], p[0] * p[1])),
    )

    @given(st.dictionaries(st.sampled_from("pqrstu"), domains, min_size=1, max_size=4),
           st.integers(0, 10**6))
    @settings(max_examples=40, deadline=None)
    def test_suggestions_stay_in_domain(self, space, seed):
        rng = np.random.default_rng(seed)
        objective = lambda p: float(rng.normal())  # noqa: E731
        history = finished(space, rng, 14, objective)
        assert all(in_space(space, t.assignment) for t in history)


class TestTune:
    def test_budget_one(self):
        best, history = tune(space={"x": Uniform(0, 1)}, budget=1, objective=lambda p: p["x"],
                             stream=None)
        assert len(history) == 1 and best is history[0]

    def test_grid_matches_exhaustive_search(self):
        space = {"a": IntGrid((1, 2, 3)), "b": Categorical(("x", "y", "z"))}
        table = {(a, b): (a - 2) ** 2 + {"x": 1.0, "y": 0.0, "z": 2.0}[b] + 0.01 * a
                 for a, b in itertools.product((1, 2, 3), "xyz")}
        objective = lambda p: table[(p["a"], p["b"])]  # noqa: E731
        want = min(table, key=table.get)
        for seed in range(5):
            for budget in (9, 20):
                best, history = tune(space=space, budget=budget, objective=objective, seed=seed,
                                     stream=None)
                assert (best.assignment["a"], best.assignment["b"]) == want
            visited = {(t.assignment["a"], t.assignment["b"]) for t in history[:9]}
            assert len(visited) == 9

    def test_golden_printout(self):
        out = io.StringIO()
        space = {k: Categorical((v,)) if not isinstance(v, float) else Uniform(v, v + 1)
                 for k, v in [("L1_flag", False), ("batch_size", 256), ("epochs", 5),
                              ("hidden_size", 32), ("learning_rate", 0.001), ("margin", 0.4),
                              ("opt", "sgd"), ("samp", "bern")]}
        best, _ = tune(space=space, budget=2, objective=lambda p: p["margin"], stream=out)
        lines = out.getvalue().splitlines()
        assert lines[0] == "Found Golden Setting:"
        assert set(eval(lines[1])) == set(GOLDEN_KEYS)  # noqa: S307
        assert lines[1] == repr(dict(sorted(best.assignment.items())))

    def test_default_space_covers_golden_keys(self):
        assert set(default_space()) == set(GOLDEN_KEYS)

    def test_format_golden(self):
        assert format_golden({"b": 1, "a": 2}) == "Found Golden Setting:\n{'a': 2, 'b': 1}"

    def test_resume_from_trials_log(self, tmp_path):
        path = tmp_path / "trials.jsonl"
        space = {"x": Uniform(0.0, 1.0)}
        calls = []

        def objective(p):
            calls.append(p)
            return p["x"]

        tune(space=space, budget=4, objective=objective, trials_path=path, stream=None)
        best, history = tune(space=space, budget=7, objective=objective, trials_path=path,
                             stream=None)
        assert len(calls) == 7 and len(history) == 7
        assert [t.number for t in load_trials(path)] == list(range(7))
        full, _ = tune(space=space, budget=7, objective=lambda p: p["x"], stream=None)
        assert best.assignment == full.assignment

    def test_trials_log_is_json_lines(self, tmp_path):
        path = tmp_path / "t.jsonl"
        tune(space={"x": Uniform(0.0, 1.0)}, budget=3, objective=lambda p: p["x"],
             trials_path=path, stream=None)
        rows = [json.loads(line) for line in path.read_text().splitlines()]
        assert [r["status"] for r in rows] == ["done"] * 3

    def test_non_finite_objective_marks_failure(self):
        values = iter([float("nan"), 1.0, float("inf")])
        best, history = tune(space={"x": Uniform(0.0, 1.0)}, budget=3,
                             objective=lambda p: next(values), stream=None)
        assert [t.status for t in history] == ["failed", "done", "failed"]
        assert best.objective == 1.0

    def test_all_failed(self):
        with pytest.raises(NoResultError):
            tune(space={"x": Uniform(0.0, 1.0)}, budget=2, objective=lambda p: float("nan"),
                 stream=None)

    def test_bad_budget(self):
        with pytest.raises(ConfigError):
            tune(space={"x": Uniform(0.0, 1.0)}, budget=0, objective=lambda p: 0.0)

    def test_bad_domains(self):
        with pytest.raises(ConfigError):
            Uniform(1.0, 1.0)
        with pytest.raises(ConfigError):
            LogUniform(0.0, 1.0)
        with pytest.raises(ConfigError):
            Categorical(())

    def test_suggestion_rng_depends_on_trial_count(self):
        assert suggestion_rng(0, 1).random() != suggestion_rng(0, 2).random()


class TestEfficacy:
    def test_learning_rate_window(self):
        hits = sum(0.004 <= lr_search(seed).assignment["learning_rate"] <= 0.025
                   for seed in range(20))
        assert hits >= 18
