import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from textadapt.core import GrayImage
from textadapt.toymodel import (
    Adam,
    AtaConfig,
    NumericError,
    Optimizers,
    Sample,
    ToyModel,
    compute_gradients,
    diagnostics_csv_line,
    extract_features,
    forward,
    grl_backward,
    grl_forward,
    init_model,
    pooled_embedding,
    predict_scoremap,
    pretrain,
    train_loop,
    train_step,
    zero_model,
)

# features


def test_constant_image_features():
    f = extract_features(GrayImage(np.full((9, 11), 0.3)))
    assert f.shape == (9, 11, 5)
    assert np.all(f[..., 2:] == 0)
    assert np.allclose(f[..., 0], -0.4) and np.allclose(f[..., 1], -0.4)


@settings(max_examples=30)
@given(arrays(np.float64, (12, 10), elements=st.floats(0, 1)))
def test_features_bounded(img):
    f = extract_features(GrayImage(img))
    assert np.all(np.isfinite(f)) and f.min() >= -1 and f.max() <= 1


def test_features_shift_with_image(rng):
    img = rng.random((30, 30))
    dy, dx = 3, 5
    shifted = np.roll(img, (dy, dx), axis=(0, 1))
    a = extract_features(GrayImage(img))
    b = extract_features(GrayImage(shifted))
    # compare away from both the border and the wrap seam
    assert np.allclose(a[2:-8, 2:-8], b[2 + dy : -8 + dy, 2 + dx : -8 + dx], atol=1e-12)


# forward / GRL


def test_zero_model_outputs_half(rng):
    y, h, p = forward(zero_model(), extract_features(GrayImage(rng.random((7, 6)))))
    assert np.all(y == 0.5) and p == 0.5 and np.all(h == 0)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_forward_in_open_interval(seed):
    rng = np.random.default_rng(seed)
    m = init_model(seed)
    feats = rng.uniform(-1, 1, size=(6, 5, 5))
    y, _, p = forward(m, feats)
    assert np.all((y > 0) & (y < 1)) and 0 < p < 1
    y2, _, p2 = forward(m, feats)
    assert np.array_equal(y, y2) and p == p2


def test_forward_shape_error():
    with pytest.raises(ValueError):
        forward(init_model(0), np.zeros((4, 4, 3)))


def test_grl():
    x = np.array([1.0, -2.0, 3.5])
    assert grl_forward(x) is x
    assert np.allclose(grl_backward([1.0, -2.0], 0.2), [-0.2, 0.4])
    assert np.all(grl_backward(x, 0.0) == 0)
    u = np.random.default_rng(3).normal(size=10)
    assert np.linalg.norm(grl_backward(u, 0.7)) == pytest.approx(0.7 * np.linalg.norm(u))
    with pytest.raises(ValueError):
        grl_backward(x, -0.1)


def test_predict_scoremap_matches_forward(rng):
    img = GrayImage(rng.random((8, 8)))
    m = init_model(1)
    assert np.array_equal(predict_scoremap(m, img).data, forward(m, extract_features(img))[0])


# gradients


def _micro_batch(rng, size=8):
    def img():
        return rng.random((size, size))

    gt = np.zeros((size, size))
    gt[2:5, 1:6] = 1
    src = Sample("s", extract_features(GrayImage(img())), gt)
    tgt = Sample("t", extract_features(GrayImage(img())))
    return [src], [tgt]


def _fields(model):
    return ["w_f", "b_f", "w_h", "b_h", "w_d1", "b_d1", "w_d2", "b_d2"]


def _perturb(model, name, idx, delta):
    arrs = {n: getattr(model, n).copy() for n in _fields(model)}
    arrs[name][idx] += delta
    return ToyModel(**arrs)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("lam", [0.2, 1.0])
def test_routed_gradients_match_fd(seed, lam):
    rng = np.random.default_rng(seed)
    src, tgt = _micro_batch(rng)
    model = init_model(seed).astype(np.float64)
    # larger head and classifier weights so every path carries signal
    model = ToyModel(**{n: getattr(model, n) * 2 for n in _fields(model)})
    g = compute_gradients(model, src, tgt, lam)
    gates = g.gates
    analytic = dict(zip(_fields(model), [*g.theta_f, *g.theta_h, *g.theta_d]))

    def objective(name, m):
        r = compute_gradients(m, src, tgt, lam, gates=gates)
        if name in ("w_h", "b_h"):
            return r.loss_task
        if name.startswith(("w_d", "b_d")):
            return r.loss_domain
        return r.loss_task - lam * r.loss_domain

    h = 1e-5
    for name in _fields(model):
        arr = getattr(model, name)
        num = np.zeros(arr.shape)
        for idx in np.ndindex(arr.shape):
            num[idx] = (objective(name, _perturb(model, name, idx, h))
                        - objective(name, _perturb(model, name, idx, -h))) / (2 * h)
        err = np.max(np.abs(analytic[name] - num)) / max(np.max(np.abs(num)), 1e-12)
        assert err < 1e-4, (name, err)


def test_lambda_zero_matches_no_domain_branch(rng):
    S = [Sample(f"s{i}", rng.uniform(-1, 1, (10, 10, 5)), (rng.random((10, 10)) < 0.3) * 1.0)
         for i in range(4)]
    U = [Sample(f"t{i}", rng.uniform(-1, 1, (10, 10, 5))) for i in range(4)]
    base = dict(lam=0.0, iters=15, batch_source=2, batch_target=2, seed=5)
    a = train_loop(init_model(5), S, U, AtaConfig(**base)).model
    b = train_loop(init_model(5), S, U, AtaConfig(**base, domain_branch=False)).model
    assert np.array_equal(a.w_f, b.w_f) and np.array_equal(a.b_f, b.b_f)
    assert np.array_equal(a.w_h, b.w_h) and np.array_equal(a.b_h, b.b_h)


def test_seeded_runs_identical(rng):
    S = [Sample(f"s{i}", rng.uniform(-1, 1, (10, 10, 5)), (rng.random((10, 10)) < 0.3) * 1.0)
         for i in range(4)]
    U = [Sample(f"t{i}", rng.uniform(-1, 1, (10, 10, 5))) for i in range(4)]
    cfg = AtaConfig(iters=10, batch_source=2, batch_target=2, seed=9)
    r1 = pretrain(S, U, cfg)
    r2 = pretrain(S, U, cfg)
    assert r1.model.equals(r2.model)
    assert r1.csv() == r2.csv()
    assert all(math.isfinite(d["L_task_src"]) and math.isfinite(d["L_d"]) for d in r1.history)


def test_adam_matches_scalar_reference():
    opt = Adam(lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
    p = np.array([0.3, -1.2, 2.0])
    g = np.array([0.5, -0.25, 1e-3])
    opt.m = [np.array([0.1, -0.2, 0.05])]
    opt.v = [np.array([0.01, 0.04, 1e-6])]
    opt.t = 6
    got = opt.step([p], [g])[0]
    for i in range(3):
        m = 0.9 * opt.m[0][i] * 0 + (0.9 * [0.1, -0.2, 0.05][i] + 0.1 * g[i])
        v = 0.999 * [0.01, 0.04, 1e-6][i] + 0.001 * g[i] ** 2
        mh = m / (1 - 0.9**7)
        vh = v / (1 - 0.999**7)
        want = p[i] - 0.01 * mh / (math.sqrt(vh) + 1e-8)
        assert abs(got[i] - want) < 1e-12


def test_adam_first_step_moves_by_lr():
    opt = Adam(lr=0.05)
    out = opt.step([np.array([1.0, 1.0])], [np.array([3.0, -0.2])])[0]
    assert np.allclose(out, [0.95, 1.05], atol=1e-9)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_aborts_with_step():
    S = [Sample("s", np.full((4, 4, 5), np.nan), np.ones((4, 4)))]
    U = [Sample("t", np.zeros((4, 4, 5)))]
    with pytest.raises(NumericError) as e:
        train_step(init_model(0), Optimizers.from_config(AtaConfig()), S, U, AtaConfig(), step=17)
    assert e.value.step == 17


def test_config_validation():
    for bad in [dict(lam=-1), dict(batch_source=0), dict(batch_target=0), dict(lr=0), dict(iters=-1)]:
        with pytest.raises(ValueError):
            AtaConfig(**bad)


def test_diagnostics_line():
    d = {"iter": 3, "L_task_src": 0.5, "L_task_tgt": None, "L_d": 0.25, "domain_acc": 1.0}
    assert diagnostics_csv_line(d) == "3,0.5,,0.25,1.0"


def test_classifier_separates_without_reversal():
    # intensity-shifted domains are linearly separable in feature space
    rng = np.random.default_rng(0)

    def make(n, shift, prefix):
        out = []
        for i in range(n):
            f = rng.uniform(-0.3, 0.3, (12, 12, 5))
            f[..., 0] += shift
            f[..., 1] += shift
            gt = (f[..., 2] > 0.1) * 1.0
            out.append(Sample(f"{prefix}{i}", f, gt))
        return out

    S, T = make(12, 0.5, "s"), make(12, -0.5, "t")
    U = [Sample(s.image_id, s.features) for s in T]
    cfg = AtaConfig(lam=0.0, iters=150, batch_source=4, batch_target=4, seed=1)
    m = pretrain(S, U, cfg).model
    held_s, held_t = make(20, 0.5, "hs"), make(20, -0.5, "ht")
    correct = [forward(m, s.features)[2] < 0.5 for s in held_s]
    correct += [forward(m, s.features)[2] > 0.5 for s in held_t]
    assert np.mean(correct) >= 0.95


def test_pooled_embedding_gate(rng):
    m = zero_model()
    f = rng.uniform(-1, 1, (5, 5, 5))
    # zero model scores exactly 0.5 so the gate falls back to every pixel
    assert np.array_equal(pooled_embedding(m, f), np.zeros(8))
