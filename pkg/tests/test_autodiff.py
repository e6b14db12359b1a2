"""Tests for the reverse-mode engine: values, gradients, tape rules, Adam, checkpoints."""

import numpy as np
import pytest

from spotrl import autodiff as ad
from spotrl.autodiff import Adam, Graph, GraphError, Mlp, ShapeError, Tensor

from oracles import finite_difference_grad, relative_error


def _grad_of(build, arrays, wrt):
    """Run build(tensors) under a fresh graph and return d(loss)/d(arrays[wrt])."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with Graph() as g:
        loss = build(tensors)
    g.backward(loss)
    return tensors[wrt].grad


def _check_against_fd(build_t, build_np, arrays, tol=1e-6):
    for i in range(len(arrays)):
        analytic = _grad_of(build_t, arrays, i)
        numeric = finite_difference_grad(lambda arrs: build_np(arrs), arrays, i)
        err = relative_error(analytic, numeric)
        assert err < tol, f"arg {i}: relative error {err}"


def test_matmul_add_relu_chain_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 3))
    w = rng.standard_normal((3, 5))
    b = rng.standard_normal(5)

    def build_t(ts):
        return ad.mean(ad.square(ad.relu(ad.add(ad.matmul(ts[0], ts[1]), ts[2]))))

    def build_np(arrs):
        h = np.maximum(arrs[0] @ arrs[1] + arrs[2], 0.0)
        return float((h * h).mean())

    _check_against_fd(build_t, build_np, [x, w, b])


def test_tanh_exp_log_square_chain_matches_finite_differences():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 4)) * 0.5

    def build_t(ts):
        return ad.sum_(ad.log(ad.add(ad.exp(ad.tanh(ts[0])), 1.0)))

    def build_np(arrs):
        return float(np.log(np.exp(np.tanh(arrs[0])) + 1.0).sum())

    _check_against_fd(build_t, build_np, [x])


def test_minimum_clip_mul_grads_match_finite_differences():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((4, 4))
    b = rng.standard_normal((4, 4))

    def build_t(ts):
        return ad.mean(ad.mul(ad.minimum(ts[0], ts[1]), ad.clip(ts[0], -0.5, 0.5)))

    def build_np(arrs):
        return float((np.minimum(arrs[0], arrs[1]) * np.clip(arrs[0], -0.5, 0.5)).mean())

    _check_against_fd(build_t, build_np, [a, b])


def test_gaussian_log_density_grads_match_finite_differences():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((5, 2))
    mu = rng.standard_normal((5, 2))
    lv = rng.standard_normal((5, 2)) * 0.3

    def build_t(ts):
        return ad.mean(ad.gaussian_log_density(ts[0], ts[1], ts[2]))

    def build_np(arrs):
        var = np.exp(arrs[2])
        out = -0.5 * (np.log(2 * np.pi) + arrs[2] + (arrs[0] - arrs[1]) ** 2 / var)
        return float(out.mean())

    _check_against_fd(build_t, build_np, [x, mu, lv])


def test_reparameterized_sample_grads_match_finite_differences():
    rng = np.random.default_rng(5)
    mu = rng.standard_normal((6, 3))
    lv = rng.standard_normal((6, 3)) * 0.2
    noise = rng.standard_normal((6, 3))

    def build_t(ts):
        return ad.mean(ad.square(ad.gaussian_sample(ts[0], ts[1], noise)))

    def build_np(arrs):
        z = arrs[0] + np.exp(0.5 * arrs[1]) * noise
        return float((z * z).mean())

    _check_against_fd(build_t, build_np, [mu, lv])


def test_sum_axis_and_concat_grads_match_finite_differences():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((3, 2))
    b = rng.standard_normal((3, 4))

    def build_t(ts):
        joined = ad.concat(ts[0], ts[1])
        return ad.mean(ad.square(ad.sum_(joined, axis=1)))

    def build_np(arrs):
        joined = np.concatenate(arrs, axis=1)
        return float((joined.sum(axis=1) ** 2).mean())

    _check_against_fd(build_t, build_np, [a, b])


def test_logmeanexp_matches_finite_differences_and_direct_value():
    rng = np.random.default_rng(7)
    vs = [rng.standard_normal(5) for _ in range(4)]

    def build_t(ts):
        return ad.mean(ad.logmeanexp(list(ts)))

    def build_np(arrs):
        stacked = np.stack(arrs)
        m = stacked.max(axis=0)
        return float((np.log(np.exp(stacked - m).mean(axis=0)) + m).mean())

    _check_against_fd(build_t, build_np, vs)
    out = ad.logmeanexp([Tensor(v) for v in vs])
    stacked = np.stack(vs)
    ref = np.log(np.exp(stacked).mean(axis=0))
    assert np.allclose(out.data, ref, atol=1e-12)


def test_logmeanexp_single_element_is_the_element():
    t = Tensor(np.array([1.0, -2.0, 3.0]))
    assert ad.logmeanexp([t]) is t


def test_fanout_gradients_accumulate():
    x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    with Graph() as g:
        y = ad.sum_(ad.add(ad.square(x), x))
    g.backward(y)
    assert np.allclose(x.grad, 2.0 * x.data + 1.0)


def test_unreachable_leaf_gets_zero_grad():
    x = Tensor(np.array([1.0]), requires_grad=True)
    orphan = Tensor(np.array([5.0]), requires_grad=True)
    with Graph() as g:
        _ = ad.square(orphan)  # recorded, but not part of the loss
        loss = ad.sum_(ad.square(x))
    g.backward(loss)
    assert np.allclose(x.grad, 2.0)
    assert orphan.grad is not None and np.all(orphan.grad == 0.0)


def test_repeated_backward_raises():
    x = Tensor(np.array([1.0]), requires_grad=True)
    with Graph() as g:
        loss = ad.sum_(x)
    g.backward(loss)
    with pytest.raises(GraphError):
        g.backward(loss)


def test_nested_graph_raises():
    with Graph():
        with pytest.raises(GraphError):
            with Graph():
                pass


def test_backward_needs_scalar_loss():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with Graph() as g:
        y = ad.square(x)
    with pytest.raises(GraphError):
        g.backward(y)


def test_shape_mismatch_messages_name_both_shapes():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((4, 5)))
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ad.matmul(a, b)
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ad.add(a, b)


def test_log_and_exp_domain_errors_name_the_op():
    with pytest.raises(FloatingPointError, match="log"):
        ad.log(Tensor(np.array([0.0])))
    with pytest.raises(FloatingPointError, match="exp"):
        ad.exp(Tensor(np.array([1e6])))


def test_ops_outside_graph_compute_but_do_not_record():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = ad.square(x)
    assert np.allclose(y.data, [1.0, 4.0])
    with pytest.raises(GraphError):
        y.backward()


def test_minimum_tie_routes_gradient_to_first_argument():
    a = Tensor(np.array([1.0, 1.0]), requires_grad=True)
    b = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Graph() as g:
        loss = ad.sum_(ad.minimum(a, b))
    g.backward(loss)
    assert np.allclose(a.grad, [1.0, 1.0])
    assert np.allclose(b.grad, [0.0, 0.0])


def test_adam_first_step_matches_hand_formula():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.array([1.0])
    opt.step()
    # m_hat = v_hat = 1 after bias correction, so the move is lr / (1 + eps).
    assert p.data[0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=0.0, rel=1e-15)


def test_adam_converges_on_quadratic():
    p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    opt = Adam([p], lr=0.05)
    target = np.array([1.0, 2.0])
    for _ in range(2000):
        with Graph() as g:
            loss = ad.sum_(ad.square(ad.sub(p, Tensor(target))))
        g.backward(loss)
        opt.step()
    assert np.allclose(p.data, target, atol=1e-4)


def test_adam_without_grad_raises():
    p = Tensor(np.array([1.0]), requires_grad=True)
    with pytest.raises(ValueError, match="no gradient"):
        Adam([p], lr=0.1).step()


def test_mlp_forward_shapes_and_determinism():
    rng = np.random.default_rng(0)
    net = Mlp([3, 16, 16, 2], rng=rng, output_activation="tanh")
    x = np.linspace(-1, 1, 12).reshape(4, 3)
    out1 = net(x)
    out2 = net(x)
    assert out1.data.shape == (4, 2)
    assert np.all(np.abs(out1.data) <= 1.0)
    assert np.array_equal(out1.data, out2.data)

    same = Mlp([3, 16, 16, 2], rng=np.random.default_rng(0), output_activation="tanh")
    assert np.array_equal(same(x).data, out1.data)


def test_mlp_dropout_only_applies_with_rng():
    rng = np.random.default_rng(1)
    net = Mlp([2, 32, 1], rng=rng, dropout=0.5)
    x = np.ones((1, 2))
    eval_out = net(x)
    assert np.array_equal(eval_out.data, net(x).data)
    dropped = net(x, dropout_rng=np.random.default_rng(7))
    again = net(x, dropout_rng=np.random.default_rng(7))
    assert np.array_equal(dropped.data, again.data)
    assert not np.array_equal(dropped.data, eval_out.data)


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    net = Mlp([2, 8, 1], rng=rng)
    x = rng.standard_normal((6, 2))
    params = net.params()
    arrays = [p.data.copy() for p in params]

    def set_and_eval(arrs):
        for p, a in zip(params, arrs):
            p.data[...] = a
        return float(ad.mean(ad.square(net(x))).data)

    with Graph() as g:
        loss = ad.mean(ad.square(net(x)))
    g.backward(loss)
    for i, p in enumerate(params):
        numeric = finite_difference_grad(set_and_eval, arrays, i)
        assert relative_error(p.grad, numeric) < 1e-6
    set_and_eval(arrays)


def test_polyak_update_is_exact():
    rng = np.random.default_rng(9)
    src = Mlp([2, 4, 1], rng=rng)
    tgt = src.copy()
    old = [p.data.copy() for p in tgt.params()]
    for p in src.params():
        p.data += 1.0
    ad.polyak_update(tgt, src, tau=0.005)
    for p, o, s in zip(tgt.params(), old, src.params()):
        assert np.array_equal(p.data, 0.005 * s.data + 0.995 * o)


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(10)
    named = {
        "actor.w0": rng.standard_normal((7, 3)),
        "actor.b0": rng.standard_normal(3),
        "scalar": np.array(0.1 + 0.2),
    }
    path = tmp_path / "params.bin"
    ad.save_params(path, named)
    loaded = ad.load_params(path)
    assert set(loaded) == set(named)
    for k in named:
        assert loaded[k].shape == np.asarray(named[k]).shape
        assert np.array_equal(loaded[k], named[k])
        assert loaded[k].tobytes() == np.ascontiguousarray(named[k]).tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTDATA" + b"\x00" * 20)
    with pytest.raises(ad.CheckpointError, match="magic"):
        ad.load_params(bad)

    good = tmp_path / "good.bin"
    ad.save_params(good, {"w": np.ones((2, 2))})
    blob = good.read_bytes()
    truncated = tmp_path / "trunc.bin"
    truncated.write_bytes(blob[:-9])
    with pytest.raises(ad.CheckpointError, match="trunc"):
        ad.load_params(truncated)

    wrong_version = tmp_path / "ver.bin"
    wrong_version.write_bytes(blob[:8] + b"\x07" + blob[9:])
    with pytest.raises(ad.CheckpointError, match="version"):
        ad.load_params(wrong_version)


def test_checkpoint_mlp_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    net = Mlp([3, 5, 2], rng=rng, name="critic1")
    path = tmp_path / "net.bin"
    ad.save_params(path, ad.mlp_state(net))
    other = Mlp([3, 5, 2], rng=np.random.default_rng(99), name="critic1")
    ad.load_into_mlp(other, ad.load_params(path))
    x = rng.standard_normal((4, 3))
    assert np.array_equal(net(x).data, other(x).data)
