import numpy as np
import pytest

from echokws import classifier as C
from echokws.classifier import NetConfig, TrainConfig

# stem/input layout that reproduces the published parameter counts
TABLE = NetConfig(stem_kernel=7, in_channels=14)
TABLE_ROWS = [
    (1, False, 11.22e6), (2, False, 2.820e6), (4, False, 712.6e3), (8, False, 182.0e3),
    (1, True, 1.484e6), (2, True, 394.0e3), (4, True, 109.9e3), (8, True, 33.22e3),
]
TINY = NetConfig(8, False, in_channels=1, in_shape=(8, 8), stage_blocks=(1,), n_classes=3)


def cfg(div, ds, base=TABLE):
    return NetConfig(div, ds, base.in_channels, base.in_shape, base.n_classes, base.stem_kernel)


@pytest.mark.parametrize("div,ds,published", TABLE_ROWS)
def test_param_counts_within_tolerance(div, ds, published):
    assert abs(C.count_params(cfg(div, ds)) / published - 1) <= 0.05


def test_param_ratio_over_100():
    assert C.count_params(cfg(1, False)) / C.count_params(cfg(4, True)) > 100


@pytest.mark.parametrize("div,ds", [(d, s) for d, s, _ in TABLE_ROWS])
def test_count_matches_built_model(div, ds):
    w = C.build_model(cfg(div, ds, NetConfig()), seed=0)
    assert C.count_params(cfg(div, ds, NetConfig())) == w.n_params


def test_monotone_in_width_and_ds():
    for ds in (False, True):
        p = [C.count_params(cfg(d, ds)) for d in (1, 2, 4, 8)]
        m = [C.count_madd(cfg(d, ds)) for d in (1, 2, 4, 8)]
        assert p == sorted(p, reverse=True) and len(set(p)) == 4
        assert m == sorted(m, reverse=True) and len(set(m)) == 4
    for d in (1, 2, 4, 8):
        assert C.count_params(cfg(d, True)) < C.count_params(cfg(d, False))
        assert C.count_madd(cfg(d, True)) < C.count_madd(cfg(d, False))


def test_madd_ratios():
    base = NetConfig()
    r = C.count_madd(cfg(2, False, base)) / C.count_madd(cfg(4, False, base))
    assert 3.5 <= r <= 4.5 and r == pytest.approx(3.967, abs=1e-3)
    ds = C.count_madd(cfg(1, True, base)) / C.count_madd(cfg(1, False, base))
    assert ds < 0.35 and ds == pytest.approx(0.1323, abs=1e-4)
    wide = NetConfig(in_shape=(120, 164))
    assert C.count_madd(wide) / C.count_madd(base) == pytest.approx(2.0, rel=0.05)


def test_layer_madd_formula():
    layer = C.Layer("x", "conv", 8, 16, 3, 1, 1, (5, 7))
    assert layer.madd == 2 * 9 * 8 * 16 * 35
    assert C.Layer("fc", "linear", 64, 12).madd == 2 * 64 * 12


def test_reference_architecture_table():
    rows = C.layer_table(NetConfig(in_channels=4))
    names = [r.name for r in rows]
    assert names[:2] == ["stem.conv", "stem.bn"] and names[-1] == "fc"
    convs = [r for r in rows if r.kind == "conv" and "shortcut" not in r.name]
    assert len(convs) == 17
    assert [r.c_out for r in convs][1:] == [64] * 4 + [128] * 4 + [256] * 4 + [512] * 4
    strided = [r.name for r in rows if r.stride == 2]
    assert strided == ["stage2.block1.conv1", "stage2.block1.shortcut.conv",
                       "stage3.block1.conv1", "stage3.block1.shortcut.conv",
                       "stage4.block1.conv1", "stage4.block1.shortcut.conv"]
    assert rows[-1].c_in == 512 and rows[-1].c_out == 12


def test_depthwise_groups():
    for r in C.layer_table(NetConfig(8, True)):
        if r.name.endswith(".dw"):
            assert r.groups == r.c_in == r.c_out
    model = C.build_model(NetConfig(8, True), 0).module()
    dws = [m for n, m in model.named_modules() if n.endswith("dw")]
    assert dws and all(m.groups == m.in_channels for m in dws)


def test_build_deterministic():
    a, b = C.build_model(TINY, 5), C.build_model(TINY, 5)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    c = C.build_model(TINY, 6)
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)


def test_invalid_config():
    for bad in (NetConfig(width_divisor=3), NetConfig(stem_kernel=4), NetConfig(in_shape=(0, 5))):
        with pytest.raises(ValueError):
            bad.validate()


def test_outputs_sum_to_one_and_repeat():
    w = C.build_model(NetConfig(8, True, 2, (16, 12)), 1)
    x = np.random.default_rng(0).standard_normal((5, 2, 16, 12)).astype(np.float32)
    p = C.predict_proba(w, x)
    assert np.allclose(p.sum(axis=1), 1, atol=1e-6)
    assert np.array_equal(p, C.predict_proba(w, x.copy() * 1.0))
    v = C.forward(w, x[0])
    assert len(v) == 12 and v.argmax == int(np.argmax(p[0]))
    with pytest.raises(ValueError):
        C.predict_proba(w, x[:, :1])


def test_zeroed_head_is_uniform():
    w = C.build_model(NetConfig(8, True, 2, (16, 12)), 1)
    w.params["fc.weight"][:] = 0
    w.params["fc.bias"][:] = 0
    w2 = C.ModelWeights(w.config, w.params, w.buffers)
    p = C.predict_proba(w2, np.ones((2, 2, 16, 12), np.float32))
    assert np.allclose(p, 1 / 12)


def test_prediction_vector_validation():
    with pytest.raises(ValueError):
        C.PredictionVector(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        C.PredictionVector(np.array([-0.1, 1.1]))


def test_learning_rate_schedule():
    t = TrainConfig()
    assert C.learning_rate(0, t) == 0
    assert C.learning_rate(50, t) == pytest.approx(0.1)
    assert C.learning_rate(25, t) == pytest.approx(0.05)
    assert C.learning_rate(999, t) < 1e-4 * t.peak_lr
    lrs = [C.learning_rate(e, t) for e in range(50, 1000)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def toy_set():
    r = np.random.default_rng(0)
    y = np.repeat([0, 1], 10)
    x = r.standard_normal((20, 1, 6, 6)).astype(np.float32) * 0.3
    x[y == 1, :, :3] += 1.0
    return x, y


TOY_NET = NetConfig(8, False, 1, (6, 6), 2, stage_blocks=(1,))


def test_toy_convergence():
    x, y = toy_set()
    res = C.train(TOY_NET, TrainConfig(warmup_epochs=10, total_epochs=200, peak_lr=0.05,
                                       batch_size=8, background_overlay=False), x, y)
    assert res.train_accuracy == 1.0
    assert res.losses[-1] < res.losses[0]


def test_training_bitwise_reproducible():
    x, y = toy_set()
    t = TrainConfig(warmup_epochs=2, total_epochs=6, batch_size=4, seed=3)
    a, b = C.train(TOY_NET, t, x, y), C.train(TOY_NET, t, x, y)
    assert a.losses == b.losses
    assert all(np.array_equal(a.weights.params[k], b.weights.params[k]) for k in a.weights.params)


def test_divergence_detected():
    x, y = toy_set()
    x[0, 0, 0, 0] = np.inf
    with pytest.raises(C.TrainingDivergedError):
        C.train(TOY_NET, TrainConfig(warmup_epochs=1, total_epochs=3, random_noise=False,
                                     random_padding=False), x, y)


def test_gradient_check_tiny():
    w = C.build_model(TINY, 0)
    x = np.random.default_rng(1).standard_normal((1, 8, 8))
    assert w.n_params == 1299
    assert C.gradient_check(w, x, 2, fraction=0.2) < 1e-4


def test_degenerate_gradient_finite():
    w = C.build_model(TINY, 0)
    zeroed = C.ModelWeights(w.config, {k: np.zeros_like(v) for k, v in w.params.items()}, w.buffers)
    loss, grads = C.loss_and_gradient(zeroed, np.zeros((1, 8, 8)), 0)
    assert np.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads.values())
    assert loss == pytest.approx(np.log(3))


def test_descent_direction():
    w = C.build_model(TINY, 0)
    x = np.random.default_rng(2).standard_normal((1, 8, 8))
    loss, grads = C.loss_and_gradient(w, x, 1)
    eps = 1e-3
    stepped = {k: v - eps * grads[k] if k in grads else v for k, v in w.params.items()}
    loss2, _ = C.loss_and_gradient(C.ModelWeights(w.config, stepped, w.buffers), x, 1)
    assert loss2 < loss


def test_weights_roundtrip(tmp_path):
    w = C.build_model(NetConfig(8, True, 2, (16, 12)), 4)
    w.save(tmp_path / "m.ekwb")
    back = C.ModelWeights.load(tmp_path / "m.ekwb")
    assert back.config == w.config
    x = np.random.default_rng(0).standard_normal((3, 2, 16, 12)).astype(np.float32)
    assert np.array_equal(C.predict_proba(back, x), C.predict_proba(w, x))
