import numpy as np
import pytest

from autopoly.data import SbmParams, random_split, sbm_generate
from autopoly.errors import GuardError, InputError
from autopoly.filters import spectral_response
from autopoly.model import eval_gradients, forward
from autopoly.train import (
    AdamState,
    MetaConfig,
    ModelConfig,
    adam_step,
    evaluate,
    grid_search,
    meta_gradient,
    train_auto,
    train_joint,
    train_mlp,
)
from oracles import fd_meta_gradient, meta_instance, rel_error


@pytest.fixture(scope="module")
def small_sbm():
    b = sbm_generate(SbmParams(120, 2, 0.15, 0.02, num_features=8, seed=3))
    return b, random_split(b.n, 0.2, 0.2, 0.6, seed=3, labels=b.labels)


class TestAdam:
    def test_zero_gradient(self):
        p = {"w": np.array([1.0, -2.0])}
        out = adam_step(AdamState(), p, {"w": np.zeros(2)}, lr=0.1)
        assert out["w"].tolist() == [1.0, -2.0]

    def test_first_step(self):
        out = adam_step(AdamState(), {"w": np.array(0.0)}, {"w": np.array(1.0)}, lr=0.1)
        assert float(out["w"]) == pytest.approx(-0.1, abs=1e-8)

    def test_deterministic(self):
        p = {"w": np.array([0.3, 0.1])}
        g = {"w": np.array([0.5, -1.5])}
        a = adam_step(AdamState(), p, g, 0.01, 1e-3)
        b = adam_step(AdamState(), p, g, 0.01, 1e-3)
        assert a["w"].tobytes() == b["w"].tobytes()

    def test_weight_decay_enters_gradient(self):
        # with gradient zero, decay alone drives the first step to -lr * sign(param)
        out = adam_step(AdamState(), {"w": np.array([2.0, -3.0])}, {"w": np.zeros(2)}, 0.1, 0.5)
        np.testing.assert_allclose(out["w"], [1.9, -2.9], atol=1e-8)

    def test_non_finite(self):
        from autopoly.errors import NumericError

        with pytest.raises(NumericError):
            adam_step(AdamState(), {"w": np.zeros(1)}, {"w": np.array([np.inf])}, 0.1)


class TestMetaGradient:
    def test_first_order_mode_is_validation_gradient(self):
        bundle, split, state = meta_instance(0, dropout=0.5)
        mg = meta_gradient(state, bundle, split, MetaConfig(xi=0.0))
        _, gt = eval_gradients(state, bundle.graph, bundle.features, bundle.labels, split.val_mask)
        assert mg.tobytes() == gt.tobytes()

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("dropout", [0.0, 0.5])
    def test_matches_unrolled_finite_differences(self, seed, dropout):
        bundle, split, state = meta_instance(seed, dropout=dropout)
        meta = MetaConfig(xi=0.05)
        mg = meta_gradient(state, bundle, split, meta, dropout_seed=(seed, 1))
        oracle = fd_meta_gradient(state, bundle.graph, bundle.features, bundle.labels,
                                  split.train_mask, split.val_mask, 0.05, (seed, 1))
        assert rel_error(mg, oracle) <= 5e-3

    def test_vanishing_inner_step(self):
        bundle, split, state = meta_instance(1)
        a = meta_gradient(state, bundle, split, MetaConfig(xi=1e-8))
        b = meta_gradient(state, bundle, split, MetaConfig(xi=0.0))
        assert np.linalg.norm(a - b) <= 1e-5

    def test_zero_output_layer(self):
        # logits are identically zero for every theta, so the plain validation gradient vanishes
        bundle, split, state = meta_instance(2)
        state = state.with_weights({**state.weights(), "W2": np.zeros((4, 2)), "b2": np.zeros(2)})
        assert np.all(meta_gradient(state, bundle, split, MetaConfig(xi=0.0)) == 0.0)
        # the unrolled step moves W2 off zero, so with xi > 0 theta matters again
        mg = meta_gradient(state, bundle, split, MetaConfig(xi=0.05))
        oracle = fd_meta_gradient(state, bundle.graph, bundle.features, bundle.labels,
                                  split.train_mask, split.val_mask, 0.05, 0)
        assert rel_error(mg, oracle) <= 5e-3


class TestSchedules:
    def test_epochs_zero(self, small_sbm):
        b, s = small_sbm
        rep = train_joint(b, s, ModelConfig(hidden=8), epochs=0)
        assert rep.epochs_run == 0 and rep.best_epoch == 0
        assert rep.best == rep.initial

    @pytest.mark.parametrize("freq", [1, 3, 4])
    def test_theta_update_count(self, small_sbm, freq):
        b, s = small_sbm
        rep = train_auto(b, s, ModelConfig(hidden=8, order=3), MetaConfig(freq=freq), epochs=22, patience=5)
        assert rep.theta_updates == rep.epochs_run // freq
        assert len(rep.theta_trajectory) == rep.theta_updates + 1

    def test_freq_beyond_cap(self, small_sbm):
        b, s = small_sbm
        rep = train_auto(b, s, ModelConfig(hidden=8, order=3), MetaConfig(freq=50), epochs=20)
        assert len(rep.theta_trajectory) == 1
        assert np.array_equal(rep.final_theta, rep.theta_trajectory[0])

    def test_curve_lengths(self, small_sbm):
        b, s = small_sbm
        rep = train_joint(b, s, ModelConfig(hidden=8), epochs=15, patience=100)
        assert all(len(v) == 15 for v in rep.curves.values())

    def test_best_state_is_restored(self, small_sbm):
        b, s = small_sbm
        rep = train_joint(b, s, ModelConfig(hidden=8), epochs=60, patience=10)
        assert evaluate(rep.state, b, s) == rep.best
        assert rep.curves["test_acc"][rep.best_epoch - 1] == rep.test_acc if rep.best_epoch else True
        assert rep.val_acc == max([rep.initial["val_acc"]] + rep.curves["val_acc"])

    def test_deterministic(self, small_sbm):
        b, s = small_sbm
        a = train_auto(b, s, ModelConfig(hidden=8, order=3), MetaConfig(), epochs=10, seed=4)
        c = train_auto(b, s, ModelConfig(hidden=8, order=3), MetaConfig(), epochs=10, seed=4)
        assert a.curves == c.curves
        assert a.theta_trajectory == c.theta_trajectory

    def test_adam_on_theta(self, small_sbm):
        b, s = small_sbm
        rep = train_auto(b, s, ModelConfig(hidden=8, order=3), MetaConfig(theta_optimizer="adam"), epochs=5)
        assert rep.theta_updates == 5

    @pytest.mark.parametrize("kwargs", [dict(freq=0), dict(eta0=0.0), dict(xi=-1.0), dict(theta_optimizer="lbfgs")])
    def test_invalid_meta(self, kwargs):
        with pytest.raises(InputError):
            MetaConfig(**kwargs)


class TestGridSearch:
    def test_exhaustive(self, small_sbm):
        b, s = small_sbm
        res = grid_search(b, s, ModelConfig(hidden=8), grid_values=[0.0, 1.0], order=1, epochs=10, patience=5)
        assert len(res.table) == 4
        assert [r["theta"] for r in res.table] == [[0, 0], [0, 1], [1, 0], [1, 1]]
        assert res.best_val_acc == max(r["val_acc"] for r in res.table)
        first = next(r for r in res.table if r["val_acc"] == res.best_val_acc)
        assert res.best_index == first["index"]
        assert list(res.best_theta) == first["theta"]

    def test_single_candidate(self, small_sbm):
        b, s = small_sbm
        res = grid_search(b, s, ModelConfig(hidden=8), grid_values=[1.0], order=0, epochs=20, patience=10)
        direct = train_joint(b, s, ModelConfig(hidden=8, order=0), epochs=20, patience=10, theta=[1.0],
                             freeze_theta=True)
        assert len(res.table) == 1
        assert res.best_val_acc == direct.val_acc
        assert res.table[0]["test_acc"] == direct.test_acc

    def test_threads_do_not_change_result(self, small_sbm):
        b, s = small_sbm
        kw = dict(grid_values=[-0.5, 0.5], order=1, epochs=8, patience=4)
        a = grid_search(b, s, ModelConfig(hidden=8), workers=1, **kw)
        c = grid_search(b, s, ModelConfig(hidden=8), workers=3, **kw)
        assert a.table == c.table

    def test_guard(self, small_sbm):
        b, s = small_sbm
        with pytest.raises(GuardError, match="coarser"):
            grid_search(b, s, ModelConfig(), grid_values=range(11), order=6)


def test_filter_beats_mlp_on_homophilic_sbm():
    accs = {"joint": [], "mlp": []}
    for seed in range(10):
        b = sbm_generate(SbmParams(300, 2, 0.1, 0.01, num_features=16, feature_noise=1.0, seed=seed))
        s = random_split(b.n, 0.1, 0.1, 0.8, seed, labels=b.labels)
        cfg = ModelConfig(hidden=16)
        accs["joint"].append(train_joint(b, s, cfg, epochs=200, patience=50, seed=seed).test_acc)
        accs["mlp"].append(train_mlp(b, s, cfg, epochs=200, patience=50, seed=seed).test_acc)
    assert np.mean(accs["joint"]) >= np.mean(accs["mlp"]) + 0.05


def test_response_of_frozen_filter_unchanged(small_sbm):
    b, s = small_sbm
    rep = train_joint(b, s, ModelConfig(hidden=8, order=2), epochs=5, theta=[0.5, 0.25, 0.25], freeze_theta=True)
    assert rep.final_theta.tolist() == [0.5, 0.25, 0.25]
    assert spectral_response(rep.state.filter, [0.0]).values[0] == 1.0


def test_forward_unchanged_by_training_copy(small_sbm):
    b, s = small_sbm
    rep = train_joint(b, s, ModelConfig(hidden=8), epochs=3)
    before = forward(rep.state, b.graph, b.features)[0].copy()
    train_joint(b, s, ModelConfig(hidden=8), epochs=3)
    assert np.array_equal(forward(rep.state, b.graph, b.features)[0], before)
