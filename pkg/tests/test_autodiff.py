import numpy as np
import pytest

from morphopt.autodiff import (
    AdamState,
    MlpSpec,
    NonFiniteGradientError,
    ParamVector,
    Tape,
    TapeConsumedError,
    adam_step,
    init_mlp_params,
    layout_from_shapes,
    mlp_eval,
    mlp_forward,
)


def random_mlp(rng, max_hidden=3, max_width=16):
    n_hidden = int(rng.integers(0, max_hidden + 1))
    widths = [int(rng.integers(1, max_width + 1)) for _ in range(n_hidden + 2)]
    spec = MlpSpec(tuple(widths))
    params = init_mlp_params(spec, rng)
    x = rng.standard_normal(spec.in_dim)
    return spec, params, x


def scalar_loss(params, spec, x, weights):
    """weights . mlp(x) as a taped scalar; returns (value, grad)."""
    out, tape = mlp_forward(params, spec, x)
    w = tape.constant(weights)
    loss = tape.sum(tape.mul(out, w))
    g = tape.backward(loss)
    return float(loss.value), g


def fd_gradient(f, values, step=1e-5):
    g = np.zeros_like(values)
    for i in range(values.size):
        up, dn = values.copy(), values.copy()
        up[i] += step
        dn[i] -= step
        g[i] = (f(up) - f(dn)) / (2.0 * step)
    return g


# ---------------------------------------------------------------------------
# ParamVector layout
# ---------------------------------------------------------------------------

def test_layout_partition_enforced():
    layout = layout_from_shapes([("a", (2, 2)), ("b", (3,))])
    pv = ParamVector(np.arange(7.0), layout)
    assert pv.get("a").shape == (2, 2)
    assert np.array_equal(pv.get("b"), [4.0, 5.0, 6.0])
    with pytest.raises(ValueError):
        ParamVector(np.arange(6.0), layout)


# ---------------------------------------------------------------------------
# mlp_forward
# ---------------------------------------------------------------------------

def test_zero_params_give_zero_output():
    spec = MlpSpec((3, 8, 2))
    params = ParamVector(np.zeros(spec.n_params), layout_from_shapes(spec.param_shapes()))
    out, _ = mlp_forward(params, spec, np.array([1.0, -2.0, 0.3]))
    assert np.array_equal(out.value, np.zeros(2))


def test_identity_single_layer():
    spec = MlpSpec((1, 1))
    params = ParamVector(np.array([1.0, 0.0]), layout_from_shapes(spec.param_shapes()))
    out, _ = mlp_forward(params, spec, np.array([0.5]))
    assert out.value[0] == pytest.approx(0.5, abs=0)


def test_forward_matches_naive_evaluation():
    # independent hand-rolled matmul+tanh pass
    rng = np.random.default_rng(7)
    for _ in range(20):
        spec, params, x = random_mlp(rng)
        out, _ = mlp_forward(params, spec, x)
        h = x
        n_layers = len(spec.layer_widths) - 1
        for i in range(n_layers):
            z = np.zeros(spec.layer_widths[i + 1])
            w = params.get(f"w{i}")
            b = params.get(f"b{i}")
            for r in range(w.shape[0]):
                s = b[r]
                for c in range(w.shape[1]):
                    s += w[r, c] * h[c]
                z[r] = s
            h = np.tanh(z) if i < n_layers - 1 else z
        np.testing.assert_allclose(out.value, h, rtol=1e-12, atol=1e-12)


def test_forward_dimension_mismatch():
    spec = MlpSpec((3, 4, 2))
    params = init_mlp_params(spec, np.random.default_rng(0))
    with pytest.raises(ValueError):
        mlp_forward(params, spec, np.zeros(5))


def test_batched_forward_matches_per_sample():
    rng = np.random.default_rng(3)
    spec = MlpSpec((4, 6, 3))
    params = init_mlp_params(spec, rng)
    batch = rng.standard_normal((4, 9))
    out, _ = mlp_forward(params, spec, batch)
    for j in range(9):
        single, _ = mlp_forward(params, spec, batch[:, j])
        np.testing.assert_allclose(out.value[:, j], single.value, rtol=0, atol=1e-14)


def test_mlp_eval_bit_identical_to_taped_forward():
    rng = np.random.default_rng(11)
    spec, params, x = random_mlp(rng)
    out, _ = mlp_forward(params, spec, x)
    assert np.array_equal(mlp_eval(params, spec, x), out.value)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def test_constant_loss_zero_gradient():
    spec = MlpSpec((2, 2))
    params = init_mlp_params(spec, np.random.default_rng(0))
    tape = Tape(params)
    loss = tape.constant(3.0)
    g = tape.backward(loss)
    assert np.array_equal(g.values, np.zeros(len(params)))


def test_linear_weight_gradient():
    # loss = w * x with x = 2 -> d/dw = 2
    layout = layout_from_shapes([("w", ())])
    params = ParamVector(np.array([1.5]), layout)
    tape = Tape(params)
    loss = tape.mul(tape.param("w"), 2.0)
    g = tape.backward(loss)
    assert g.values[0] == pytest.approx(2.0, abs=0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        spec, params, x = random_mlp(rng)
        weights = rng.standard_normal(spec.out_dim)
        _, g = scalar_loss(params, spec, x, weights)

        def f(vals):
            out = mlp_eval(params.with_values(vals), spec, x)
            return float(weights @ out)

        fd = fd_gradient(f, params.values.copy())
        scale = max(np.max(np.abs(fd)), 1e-8)
        worst = max(worst, np.max(np.abs(g.values - fd)) / scale)
    assert worst < 1e-4


def test_backward_linearity():
    rng = np.random.default_rng(5)
    spec, params, x = random_mlp(rng)
    w1 = rng.standard_normal(spec.out_dim)
    w2 = rng.standard_normal(spec.out_dim)
    alpha = 1.7

    _, g1 = scalar_loss(params, spec, x, w1)
    _, g2 = scalar_loss(params, spec, x, w2)
    _, g12 = scalar_loss(params, spec, x, alpha * w1 + w2)
    np.testing.assert_allclose(g12.values, alpha * g1.values + g2.values, atol=1e-10)


def test_tape_single_use():
    spec = MlpSpec((2, 2))
    params = init_mlp_params(spec, np.random.default_rng(1))
    out, tape = mlp_forward(params, spec, np.ones(2))
    loss = tape.sum(out)
    tape.backward(loss)
    with pytest.raises(TapeConsumedError):
        tape.backward(loss)


def test_gradient_of_sum_of_losses_is_sum_of_gradients():
    rng = np.random.default_rng(9)
    spec, params, x = random_mlp(rng)
    w1 = rng.standard_normal(spec.out_dim)
    w2 = rng.standard_normal(spec.out_dim)

    out, tape = mlp_forward(params, spec, x)
    total = tape.add(tape.sum(tape.mul(out, tape.constant(w1))),
                     tape.sum(tape.mul(out, tape.constant(w2))))
    g_total = tape.backward(total)

    _, g1 = scalar_loss(params, spec, x, w1)
    _, g2 = scalar_loss(params, spec, x, w2)
    np.testing.assert_allclose(g_total.values, g1.values + g2.values, atol=1e-12)


def test_nonlinear_ops_against_finite_differences():
    # exercise exp/log/sqrt/abs/clip/min/max/mean/concat paths
    rng = np.random.default_rng(21)
    layout = layout_from_shapes([("p", (4,))])
    values = rng.uniform(0.5, 1.5, size=4)

    def build(vals):
        params = ParamVector(np.asarray(vals), layout)
        tape = Tape(params)
        p = tape.param("p")
        a = tape.exp(p)
        b = tape.log(a)
        c = tape.sqrt(tape.square(p))
        d = tape.absolute(tape.sub(p, 1.0))
        e = tape.clip(p, 0.6, 1.4)
        f = tape.minimum(p, tape.constant(np.full(4, 1.0)))
        g = tape.maximum(p, tape.constant(np.full(4, 0.8)))
        parts = tape.concat([a, b, c, d, e, f, g])
        loss = tape.mean(tape.square(parts))
        return loss, tape

    loss, tape = build(values)
    g = tape.backward(loss)

    def f(vals):
        l, _ = build(vals)
        return float(l.value)

    fd = fd_gradient(f, values.copy(), step=1e-6)
    np.testing.assert_allclose(g.values, fd, rtol=1e-5, atol=1e-7)


def test_determinism():
    rng = np.random.default_rng(33)
    spec, params, x = random_mlp(rng)
    w = rng.standard_normal(spec.out_dim)
    v1, g1 = scalar_loss(params, spec, x, w)
    v2, g2 = scalar_loss(params, spec, x, w)
    assert v1 == v2
    assert np.array_equal(g1.values, g2.values)


# ---------------------------------------------------------------------------
# adam_step
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    layout = layout_from_shapes([("p", (3,))])
    params = ParamVector(np.array([1.0, -2.0, 0.5]), layout)
    state = AdamState.zeros(3)
    new = adam_step(params, params.zeros_like(), state, lr=0.1)
    np.testing.assert_array_equal(new.values, params.values)
    assert state.t == 1


def test_adam_moves_against_constant_gradient():
    layout = layout_from_shapes([("p", (2,))])
    params = ParamVector(np.zeros(2), layout)
    state = AdamState.zeros(2)
    g = ParamVector(np.array([1.0, -3.0]), layout)
    for _ in range(50):
        params = adam_step(params, g, state, lr=0.01)
    assert params.values[0] < 0
    assert params.values[1] > 0


def test_adam_single_step_matches_hand_formula():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    layout = layout_from_shapes([("p", (1,))])
    params = ParamVector(np.array([2.0]), layout)
    state = AdamState(m=np.array([0.3]), v=np.array([0.02]), t=4)
    g = 0.7

    m = b1 * 0.3 + (1 - b1) * g
    v = b2 * 0.02 + (1 - b2) * g * g
    m_hat = m / (1 - b1 ** 5)
    v_hat = v / (1 - b2 ** 5)
    expected = 2.0 - lr * m_hat / (np.sqrt(v_hat) + eps)

    new = adam_step(params, ParamVector(np.array([g]), layout), state, lr=lr,
                    beta1=b1, beta2=b2, eps=eps)
    assert new.values[0] == pytest.approx(expected, rel=0, abs=1e-15)


def test_adam_rejects_non_finite_gradient():
    layout = layout_from_shapes([("p", (2,))])
    params = ParamVector(np.zeros(2), layout)
    state = AdamState.zeros(2)
    g = ParamVector(np.array([np.nan, 1.0]), layout)
    with pytest.raises(NonFiniteGradientError):
        adam_step(params, g, state)
    assert state.t == 0
