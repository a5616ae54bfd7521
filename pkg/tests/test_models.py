import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kge import models
from kge.errors import ConfigError, UnknownModelError
from kge.models import LossContext, get_model, init_params, loss_and_grad, registered
from oracles import fd_relative_error, randomize, reference_score

KINDS = registered()
TRANSLATIONAL = ["transe", "transh", "transr", "transd"]


def random_params(kind, rng, n_ent=7, n_rel=3, dim=4, l1=False):
    return randomize(init_params(kind, n_ent, n_rel, dim, seed=1, L1_flag=l1), rng)


def random_batch(rng, n_ent=7, n_rel=3, size=5):
    pos = np.column_stack([rng.integers(n_ent, size=size), rng.integers(n_rel, size=size),
                           rng.integers(n_ent, size=size)])
    neg = pos.copy()
    neg[:, 2] = rng.integers(n_ent, size=size)
    return pos, neg


class TestRegistry:
    def test_all_eight_kinds(self):
        assert sorted(KINDS) == sorted(["transe", "transh", "transr", "transd", "rescal",
                                        "distmult", "complex", "kg2e"])

    def test_unknown_kind_lists_registered(self):
        with pytest.raises(UnknownModelError, match="transe"):
            get_model("transz")

    def test_bad_dimension(self):
        with pytest.raises(ConfigError):
            init_params("transe", 5, 2, 0)


class TestInit:
    def test_transe_shapes_and_unit_rows(self):
        P = init_params("transe", 5, 2, 8)
        assert P["ent"].shape == (5, 8) and P["rel"].shape == (2, 8)
        assert np.allclose(np.linalg.norm(P["ent"], axis=1), 1.0)

    @pytest.mark.parametrize("kind", KINDS)
    def test_same_seed_bitwise_identical(self, kind):
        assert init_params(kind, 6, 3, 5, seed=4).equals(init_params(kind, 6, 3, 5, seed=4))
        assert not init_params(kind, 6, 3, 5, seed=4).equals(init_params(kind, 6, 3, 5, seed=5))

    def test_kg2e_variances_in_clamp(self):
        P = init_params("kg2e", 6, 3, 5)
        for name in ("ent_var", "rel_var"):
            assert P[name].min() >= 0.05 and P[name].max() <= 5.0

    @pytest.mark.parametrize("kind", KINDS)
    def test_shapes_match_declaration(self, kind):
        m = get_model(kind)
        P = m.init_params(6, 3, 4)
        assert {k: v.shape for k, v in P.tensors.items()} == m.shapes(6, 3, 4)


class TestScoreExamples:
    def test_transe_zero_vectors(self):
        P = init_params("transe", 1, 1, 3, L1_flag=True)
        P["ent"][:] = 0
        P["rel"][:] = 0
        assert models.score(P, [[0, 0, 0]])[0] == 0.0

    def test_distmult_arithmetic(self):
        P = init_params("distmult", 2, 1, 2)
        P["ent"][:] = [[1, 2], [2, 1]]
        P["rel"][:] = [[1, 1]]
        assert models.score(P, [[0, 0, 1]])[0] == 4.0

    def test_complex_with_zero_imaginary_is_distmult(self, rng):
        C = random_params("complex", rng)
        for name in ("ent_im", "rel_im"):
            C[name][:] = 0
        D = init_params("distmult", 7, 3, 4)
        D["ent"][:] = C["ent_re"]
        D["rel"][:] = C["rel_re"]
        tr, _ = random_batch(rng, size=20)
        assert np.allclose(models.score(C, tr), models.score(D, tr), rtol=0, atol=1e-12)

    def test_kg2e_identical_gaussians(self):
        P = init_params("kg2e", 2, 1, 3)
        P["ent_mu"][:] = [[1.0, 2.0, 0.5], [0.5, 1.0, 1.0]]
        P["ent_var"][:] = [[0.5, 1.0, 2.0], [0.5, 0.5, 1.0]]
        P["rel_mu"][0] = P["ent_mu"][0] - P["ent_mu"][1]
        P["rel_var"][0] = P["ent_var"][0] + P["ent_var"][1]
        assert models.score(P, [[0, 0, 1]])[0] == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("l1", [False, True])
    def test_matches_reference(self, kind, l1, rng):
        P = random_params(kind, rng, l1=l1)
        tr, _ = random_batch(rng, size=15)
        got = models.score(P, tr)
        want = [reference_score(P, *row) for row in tr]
        assert np.allclose(got, want, rtol=1e-10, atol=1e-10)


class TestScoreProperties:
    def test_distmult_exactly_symmetric(self, rng):
        P = random_params("distmult", rng)
        tr, _ = random_batch(rng, size=30)
        assert np.array_equal(models.score(P, tr), models.score(P, tr[:, [2, 1, 0]]))

    def test_complex_asymmetric(self, rng):
        P = random_params("complex", rng)
        tr, _ = random_batch(rng, size=30)
        assert np.any(models.score(P, tr) != models.score(P, tr[:, [2, 1, 0]]))

    @pytest.mark.parametrize("l1", [False, True])
    def test_transr_identity_is_transe(self, rng, l1):
        R = random_params("transr", rng, l1=l1)
        R["proj"][:] = np.eye(4)
        E = init_params("transe", 7, 3, 4, L1_flag=l1)
        E["ent"][:] = R["ent"]
        E["rel"][:] = R["rel"]
        tr, _ = random_batch(rng, size=30)
        assert np.array_equal(models.score(R, tr), models.score(E, tr))

    @pytest.mark.parametrize("l1", [False, True])
    def test_transd_zero_projection_is_transe(self, rng, l1):
        D = random_params("transd", rng, l1=l1)
        D["ent_proj"][:] = 0
        D["rel_proj"][:] = 0
        E = init_params("transe", 7, 3, 4, L1_flag=l1)
        E["ent"][:] = D["ent"]
        E["rel"][:] = D["rel"]
        tr, _ = random_batch(rng, size=30)
        assert np.array_equal(models.score(D, tr), models.score(E, tr))

    @pytest.mark.parametrize("kind", KINDS)
    def test_broadcast_against_all_candidates(self, kind, rng):
        P = random_params(kind, rng)
        m = get_model(kind, **P.settings)
        cands = np.arange(7)
        row = m.score(P, 2, 1, cands)
        assert row.shape == (7,)
        full = models.score(P, np.column_stack([np.full(7, 2), np.full(7, 1), cands]))
        assert np.allclose(row, full, rtol=0, atol=1e-12)


class TestGradients:
    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("l1", [False, True])
    def test_finite_differences(self, kind, l1, rng):
        for draw in range(10):
            P = random_params(kind, rng, l1=l1)
            pos, neg = random_batch(rng)
            for ctx in (LossContext("margin", 1e3), LossContext("softplus", 1.0, 0.01)):
                assert fd_relative_error(P, pos, neg, ctx) < 1e-4, (kind, draw, ctx)

    def test_kg2e_clamp_boundary(self, rng):
        for _ in range(10):
            P = randomize(init_params("kg2e", 7, 3, 4), rng, boundary=True)
            pos, neg = random_batch(rng)
            assert fd_relative_error(P, pos, neg, LossContext("margin", 1e3)) < 1e-3

    @pytest.mark.parametrize("kind", KINDS)
    def test_inactive_hinge_is_empty(self, kind, rng):
        P = random_params(kind, rng)
        pos, _ = random_batch(rng)
        value, grads = loss_and_grad(P, pos, pos, LossContext("margin", 0.0))
        assert value == 0.0 and grads == {}

    @pytest.mark.parametrize("kind", KINDS)
    def test_grad_rows_have_declared_shapes(self, kind, rng):
        P = random_params(kind, rng)
        pos, neg = random_batch(rng)
        grads = models.grad(P, pos, neg, LossContext("margin", 1e3))
        for name, (ids, rows) in grads.items():
            assert rows.shape == (len(ids),) + P[name].shape[1:]
            assert np.array_equal(ids, np.unique(ids))

    @pytest.mark.parametrize("kind", KINDS)
    def test_untouched_rows_absent(self, kind, rng):
        P = random_params(kind, rng, n_ent=12)
        pos, neg = random_batch(rng, n_ent=6)
        grads = models.grad(P, pos, neg, LossContext("margin", 1e3))
        for name, (ids, _) in grads.items():
            if get_model(kind).tensors[name] == "entity":
                assert ids.max() < 6

    def test_distmult_closed_form(self, rng):
        P = random_params("distmult", rng)
        model = get_model("distmult")
        parts = model.score_grad(P, np.array([1]), np.array([2]), np.array([3]), np.array([1.0]))
        ids, rows = parts["ent"][0]
        assert np.allclose(rows[0], P["rel"][2] * P["ent"][3])

    @given(st.sampled_from(KINDS), st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_fd_property(self, kind, seed):
        rng = np.random.default_rng(seed)
        P = random_params(kind, rng, n_ent=4, n_rel=2, dim=3)
        pos, neg = random_batch(rng, n_ent=4, n_rel=2, size=3)
        assert fd_relative_error(P, pos, neg, LossContext("softplus", 1.0, 0.0)) < 1e-4


class TestConstraints:
    @pytest.mark.parametrize("kind, names", [("transe", ["ent"]), ("transh", ["ent", "norm"])])
    def test_unit_rows_after_projection(self, kind, names, rng):
        P = random_params(kind, rng)
        get_model(kind).project(P)
        for name in names:
            assert np.allclose(np.linalg.norm(P[name], axis=1), 1.0)

    def test_touched_projection_leaves_other_rows(self, rng):
        P = random_params("transe", rng)
        before = P["ent"].copy()
        get_model("transe").project(P, {"ent": np.array([2])})
        assert np.array_equal(np.delete(P["ent"], 2, axis=0), np.delete(before, 2, axis=0))
        assert np.linalg.norm(P["ent"][2]) == pytest.approx(1.0)

    def test_kg2e_clamp(self, rng):
        P = random_params("kg2e", rng)
        P["ent_var"][0] = 100.0
        P["rel_var"][0] = 1e-6
        get_model("kg2e").project(P)
        assert P["ent_var"].max() == 5.0 and P["rel_var"].min() == 0.05
