import numpy as np
import pytest

from kinothrow import autodiff as ad
from kinothrow.learncore import AdamState, Jet3, Mlp, adam_step, cosine_lr, jet_eval, mlp_forward
from kinothrow.robot import default_arm
from kinothrow.task import TaskConfig, constraint_values, penalty


def test_mlp_validation():
    with pytest.raises(ValueError):
        Mlp((3,))
    with pytest.raises(ValueError):
        Mlp((3, 0, 2))
    with pytest.raises(ValueError):
        Mlp((3, 4), activation="relu")


def test_mlp_zero_params_zero_output():
    net = Mlp((3, 8, 2))
    x = np.random.default_rng(0).normal(size=(5, 3))
    out = mlp_forward(net, np.zeros(net.n_params), x)
    np.testing.assert_array_equal(out, np.zeros((5, 2)))


def test_mlp_single_linear_identity():
    net = Mlp((3, 3))
    p = np.zeros(net.n_params)
    ws, bs, (fi, fo) = net.layout()[0]
    p[ws] = np.eye(3).ravel()
    x = np.random.default_rng(1).normal(size=(4, 3))
    np.testing.assert_allclose(mlp_forward(net, p, x), x, atol=1e-15)


def test_mlp_matches_manual_composition():
    net = Mlp((2, 5, 3))
    rng = np.random.default_rng(2)
    p = net.init_params(rng)
    (w1s, b1s, (f1, o1)), (w2s, b2s, (f2, o2)) = net.layout()
    W1, b1 = p[w1s].reshape(f1, o1), p[b1s]
    W2, b2 = p[w2s].reshape(f2, o2), p[b2s]
    x = rng.normal(size=(7, 2))
    h = x @ W1 + b1
    h = ad.gelu(h)
    ref = h @ W2 + b2
    np.testing.assert_allclose(mlp_forward(net, p, x), ref, atol=1e-12)


def test_mlp_dimension_mismatch():
    net = Mlp((3, 4))
    with pytest.raises(ValueError):
        mlp_forward(net, np.zeros(net.n_params), np.zeros(5))


def test_mlp_final_scale_near_zero():
    net = Mlp((2, 16, 4))
    rng = np.random.default_rng(3)
    p = net.init_params(rng, final_scale=1e-4)
    out = mlp_forward(net, p, rng.normal(size=(10, 2)))
    assert np.max(np.abs(out)) < 1e-2


def test_gradient_quadratic():
    p = np.random.default_rng(4).normal(size=6)
    _, (g,) = ad.grad(lambda vs: ad.asum(vs[0] ** 2), [p])
    np.testing.assert_allclose(g, 2 * p, atol=1e-14)


def test_gradient_zero_on_feasible_penalty():
    arm = default_arm()
    cfg = TaskConfig()
    q = np.array([1.2, -0.9, 0.6])
    W = cfg.weights_for(3)

    def loss(vs):
        C = constraint_values(arm, vs[0], vs[1], 0.0 * vs[0], 0.0 * vs[0], cfg)
        return penalty(C, W)

    lv, gs = ad.grad(loss, [q, np.zeros(3)])
    assert lv == 0.0
    for g in gs:
        np.testing.assert_array_equal(g, np.zeros(3))


def test_mlp_gradient_finite_difference():
    net = Mlp((2, 6, 3))
    rng = np.random.default_rng(5)
    p = net.init_params(rng)
    x = rng.normal(size=(4, 2))
    y = rng.normal(size=(4, 3))

    def loss(vs):
        return ad.amean((mlp_forward(net, vs[0], x) - y) ** 2)

    lv, (g,) = ad.grad(loss, [p])
    eps = 1e-5
    idx = rng.choice(p.size, 20, replace=False)
    for j in idx:
        pp, pm = p.copy(), p.copy()
        pp[j] += eps
        pm[j] -= eps
        lp, _ = ad.grad(loss, [pp])
        lm, _ = ad.grad(loss, [pm])
        num = (lp - lm) / (2 * eps)
        assert g[j] == pytest.approx(num, rel=1e-4, abs=1e-8)


def test_jet_linear_net():
    net = Mlp((1, 1))
    p = np.array([2.5, -0.7])  # weight a, bias b
    j = jet_eval(net, p, np.array([0.3, 1.1]))
    np.testing.assert_allclose(j.d0[:, 0], 2.5 * np.array([0.3, 1.1]) - 0.7, atol=1e-15)
    np.testing.assert_allclose(j.d1[:, 0], 2.5, atol=1e-15)
    np.testing.assert_array_equal(j.d2, 0.0)
    np.testing.assert_array_equal(j.d3, 0.0)


def test_jet_requires_scalar_input():
    net = Mlp((2, 3))
    with pytest.raises(ValueError):
        jet_eval(net, np.zeros(net.n_params), 0.5)


def test_jet_linearity():
    net = Mlp((1, 8, 2))
    rng = np.random.default_rng(6)
    p1 = net.init_params(rng)
    p2 = net.init_params(rng)
    t = rng.uniform(-1, 1, 5)
    j1, j2 = jet_eval(net, p1, t), jet_eval(net, p2, t)
    # sum of two nets realized as a block-diagonal wider net would be overkill;
    # linearity of the jet ring itself is the contract
    s = j1 + j2
    for k in range(4):
        np.testing.assert_allclose(s.order(k), j1.order(k) + j2.order(k), atol=1e-15)


def test_jet_derivatives_match_stencils():
    net = Mlp((1, 32, 32, 3))
    rng = np.random.default_rng(7)
    p = net.init_params(rng)
    t = rng.uniform(-0.8, 0.8, 6)
    j = jet_eval(net, p, t)
    h = 1e-3

    def f(tv):
        return mlp_forward(net, p, np.asarray(tv)[..., None])

    d1 = (-f(t + 2 * h) + 8 * f(t + h) - 8 * f(t - h) + f(t - 2 * h)) / (12 * h)
    d2 = (-f(t + 2 * h) + 16 * f(t + h) - 30 * f(t) + 16 * f(t - h) - f(t - 2 * h)) / (12 * h * h)
    d3 = (f(t + 2 * h) - 2 * f(t + h) + 2 * f(t - h) - f(t - 2 * h)) / (2 * h**3)
    np.testing.assert_allclose(j.d0, f(t), atol=1e-12)
    np.testing.assert_allclose(j.d1, d1, rtol=1e-4, atol=1e-7)
    np.testing.assert_allclose(j.d2, d2, rtol=1e-4, atol=1e-5)
    np.testing.assert_allclose(j.d3, d3, rtol=1e-3, atol=1e-3)


def test_jet_product_rule():
    rng = np.random.default_rng(8)
    # two cubic polynomials as exact jets; product jet must equal product poly jet
    a = rng.normal(size=4)
    b = rng.normal(size=4)
    t = 0.37

    def poly_jet(c):
        v = c[0] + c[1] * t + c[2] * t**2 + c[3] * t**3
        d1 = c[1] + 2 * c[2] * t + 3 * c[3] * t**2
        d2 = 2 * c[2] + 6 * c[3] * t
        d3 = 6 * c[3]
        return Jet3(v, d1, d2, d3)

    prod = np.convolve(a, b)[:4]  # truncation consistent with Jet3
    ja, jb = poly_jet(a), poly_jet(b)
    jp = ja * jb
    ref = poly_jet(prod)
    # orders 0..3 of the truncated product agree except where degree>3 terms enter
    full = np.convolve(a, b)
    v = sum(c * t**i for i, c in enumerate(full))
    d1 = sum(i * c * t ** (i - 1) for i, c in enumerate(full) if i >= 1)
    d2 = sum(i * (i - 1) * c * t ** (i - 2) for i, c in enumerate(full) if i >= 2)
    d3 = sum(i * (i - 1) * (i - 2) * c * t ** (i - 3) for i, c in enumerate(full) if i >= 3)
    np.testing.assert_allclose([jp.d0, jp.d1, jp.d2, jp.d3], [v, d1, d2, d3], atol=1e-12)


def test_jet_gradients_flow_through_coefficients():
    # training losses read jet orders; gradients w.r.t. params must be exact
    net = Mlp((1, 6, 2))
    rng = np.random.default_rng(9)
    p = net.init_params(rng)
    t = np.array([0.2, 0.5, 0.9])

    def loss(vs):
        j = jet_eval(net, vs[0], t)
        return ad.amean(j.d1**2) + ad.amean(j.d2**2) + 0.1 * ad.amean(j.d3**2)

    lv, (g,) = ad.grad(loss, [p])
    eps = 1e-5
    for jdx in rng.choice(p.size, 12, replace=False):
        pp, pm = p.copy(), p.copy()
        pp[jdx] += eps
        pm[jdx] -= eps
        lp, _ = ad.grad(loss, [pp])
        lm, _ = ad.grad(loss, [pm])
        assert g[jdx] == pytest.approx((lp - lm) / (2 * eps), rel=2e-4, abs=1e-8)


def test_adam_zero_grad_no_move():
    p = np.ones(4)
    st = AdamState.init(4)
    st2, p2 = adam_step(st, p, np.zeros(4))
    np.testing.assert_array_equal(p2, p)
    assert st2.step == 1


def test_adam_first_step_hand_computed():
    g = np.array([0.3, -2.0])
    p = np.zeros(2)
    st = AdamState.init(2, lr=0.01)
    st2, p2 = adam_step(st, p, g)
    # bias correction makes mhat=g, vhat=g^2 at step 1
    ref = -0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p2, ref, atol=1e-15)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState.init(3), np.zeros(3), np.zeros(4))


def test_adam_converges_on_quadratic_bowl():
    rng = np.random.default_rng(10)
    target = rng.normal(size=5)
    p = np.zeros(5)
    st = AdamState.init(5, lr=0.1)
    for _ in range(500):
        st, p = adam_step(st, p, 2 * (p - target))
    assert np.linalg.norm(p - target) < 1e-3


def test_adam_deterministic():
    g = np.array([1.0, -0.5, 0.25])
    p1, p2 = np.ones(3), np.ones(3)
    s1, s2 = AdamState.init(3), AdamState.init(3)
    for _ in range(10):
        s1, p1 = adam_step(s1, p1, g * p1)
        s2, p2 = adam_step(s2, p2, g * p2)
    np.testing.assert_array_equal(p1, p2)


def test_cosine_lr_schedule():
    assert cosine_lr(0, 100, 3e-2) == pytest.approx(3e-2)
    assert cosine_lr(100, 100, 3e-2) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(50, 100, 3e-2) == pytest.approx(1.5e-2)
    assert cosine_lr(200, 100, 3e-2) == 0.0
