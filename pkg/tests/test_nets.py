import numpy as np
import pytest

from gradcheck import check_params, numeric_input_grad, rel_err
from quadtrack.nets import (
    Adam,
    CheckpointError,
    Mlp,
    critic_action_grad,
    forward_with_cache,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    mlp_init,
    save_checkpoint,
)


def test_init_deterministic_and_bounded():
    a = mlp_init([17, 256, 256, 4], "tanh", seed=3)
    b = mlp_init([17, 256, 256, 4], "tanh", seed=3)
    for x, y in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)
    assert all(np.all(bias == 0) for bias in a.biases)
    for w in a.weights:
        assert np.max(np.abs(w)) <= np.sqrt(6 / w.shape[1])
    assert a.dims == [17, 256, 256, 4]


def test_forward_examples():
    net = mlp_init([5, 8, 8, 4], "tanh", seed=0)
    for arr in net.arrays():
        arr[...] = 0
    assert np.all(mlp_forward(net, np.ones(5)) == 0)
    one = Mlp([np.ones((1, 1))] * 3, [np.zeros(1)] * 3, "relu", "linear")
    assert mlp_forward(one, np.array([1.0]))[0] == 1.0
    assert mlp_forward(one, np.array([-1.0]))[0] == 0.0


def test_forward_batch_matches_rows(rng):
    net = mlp_init([6, 16, 16, 2], "tanh", seed=1)
    x = rng.normal(size=(10, 6))
    batch = mlp_forward(net, x)
    for i in range(10):
        np.testing.assert_allclose(batch[i], mlp_forward(net, x[i]), rtol=1e-13, atol=1e-15)


def test_forward_deterministic(rng):
    net = mlp_init([17, 256, 256, 4], "tanh", seed=2)
    x = rng.normal(size=(32, 17))
    assert mlp_forward(net, x).tobytes() == mlp_forward(net, x).tobytes()


def test_actor_bounded(rng):
    net = mlp_init([17, 64, 64, 4], "tanh", seed=5)
    for w in net.weights:
        w *= 20
    y = mlp_forward(net, rng.normal(size=(10_000, 17)) * 10)
    assert np.all(np.abs(y) <= 1.0)


def test_dimension_mismatch():
    net = mlp_init([3, 4, 1], seed=0)
    with pytest.raises(ValueError):
        mlp_forward(net, np.ones(4))
    with pytest.raises(ValueError):
        Mlp([np.ones((4, 3)), np.ones((1, 5))], [np.zeros(4), np.zeros(1)])


def test_backward_zero_upstream(rng):
    net = mlp_init([5, 7, 7, 2], "tanh", seed=0)
    _, cache = forward_with_cache(net, rng.normal(size=(4, 5)))
    grads, gx = mlp_backward(net, cache, np.zeros((4, 2)))
    assert all(np.all(g == 0) for g in grads) and np.all(gx == 0)


def test_backward_linear_in_upstream(rng):
    net = mlp_init([5, 7, 7, 2], "tanh", seed=0)
    _, cache = forward_with_cache(net, rng.normal(size=(4, 5)))
    g = rng.normal(size=(4, 2))
    g1, x1 = mlp_backward(net, cache, g)
    g2, x2 = mlp_backward(net, cache, 2.5 * g)
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(b, 2.5 * a, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(x2, 2.5 * x1, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("dims, out", [([6, 9, 9, 3], "tanh"), ([6, 9, 9, 1], "linear")])
def test_backward_matches_finite_differences_small(dims, out, rng):
    for seed in range(20):
        net = mlp_init(dims, out, seed=seed)
        for b in net.biases:
            b += rng.normal(size=b.shape) * 0.1
        x = rng.normal(size=(3, dims[0]))
        up = rng.normal(size=(3, dims[-1]))
        assert check_params(net, x, up, rng, per_array=1000) < 1e-4


def test_input_gradient(rng):
    net = mlp_init([6, 9, 9, 2], "tanh", seed=4)
    x = rng.normal(size=(2, 6))
    up = rng.normal(size=(2, 2))
    _, cache = forward_with_cache(net, x)
    _, gx = mlp_backward(net, cache, up)
    fd = numeric_input_grad(lambda z: np.sum(mlp_forward(net, z) * up), x.copy())
    np.testing.assert_allclose(gx, fd, rtol=1e-4, atol=1e-9)


def test_critic_action_grad(rng):
    critic = mlp_init([17 + 4, 32, 32, 1], seed=8)
    s, a = rng.normal(size=17), rng.uniform(-1, 1, 4)
    g = critic_action_grad(critic, s, a)
    assert g.shape == (4,)
    fd = numeric_input_grad(lambda z: mlp_forward(critic, np.concatenate((s, z)))[0], a.copy())
    assert max(rel_err(x, y) for x, y in zip(g, fd)) < 1e-4
    for arr in critic.arrays():
        arr[...] = 0
    assert np.all(critic_action_grad(critic, s, a) == 0)


def test_adam_zero_gradient_no_change():
    net = mlp_init([3, 4, 1], seed=0)
    before = [a.copy() for a in net.arrays()]
    opt = Adam.for_params(net)
    for _ in range(5):
        opt.step(net, [np.zeros_like(a) for a in net.arrays()])
    for a, b in zip(before, net.arrays()):
        assert np.array_equal(a, b)


@pytest.mark.parametrize("scale", [1e-6, 1.0, 1e6])
def test_adam_first_step_magnitude(scale, rng):
    net = mlp_init([3, 4, 1], seed=0)
    before = [a.copy() for a in net.arrays()]
    opt = Adam.for_params(net, lr=1e-3)
    grads = [rng.normal(size=a.shape) * scale for a in net.arrays()]
    opt.step(net, grads)
    for a, b, g in zip(before, net.arrays(), grads):
        # first bias-corrected step is lr * g / (|g| + eps)
        np.testing.assert_allclose(a - b, 1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-9)


def test_adam_episode_decay():
    opt = Adam(lr=3e-4, decay=0.9995)
    for _ in range(7):
        opt.end_episode()
    assert opt.effective_lr == pytest.approx(3e-4 * 0.9995**7, rel=1e-14)
    opt.end_episode(3)
    assert opt.effective_lr == pytest.approx(3e-4 * 0.9995**10, rel=1e-14)


def test_adam_descent_sanity(rng):
    net = mlp_init([21, 256, 256, 1], seed=0)
    x = rng.normal(size=(256, 21))
    y = rng.normal(size=(256, 1))
    opt = Adam.for_params(net, lr=1e-3)

    def mse():
        return float(np.mean((mlp_forward(net, x) - y) ** 2))

    start = mse()
    for _ in range(200):
        pred, cache = forward_with_cache(net, x)
        grads, _ = mlp_backward(net, cache, 2 * (pred - y) / len(x))
        opt.step(net, grads)
    assert mse() <= 0.1 * start


def _nets():
    actor = mlp_init([17, 8, 8, 4], "tanh", seed=1)
    critic = mlp_init([21, 8, 8, 1], seed=2)
    return {"actor": actor, "critic1": critic, "actor_target": actor.copy()}


def test_checkpoint_roundtrip(tmp_path, rng):
    nets = _nets()
    opt = Adam.for_params(nets["actor"], lr=1e-3, decay=0.9995)
    opt.step(nets["actor"], [rng.normal(size=a.shape) for a in nets["actor"].arrays()])
    opt.end_episode(4)
    path = tmp_path / "ck.qtck"
    save_checkpoint(path, nets, {"actor_opt": opt}, step=1234, meta={"sigma": 0.5},
                    optimizer_targets={"actor_opt": "actor"})
    ck = load_checkpoint(path)
    assert ck.step == 1234 and ck.meta == {"sigma": 0.5}
    for name, net in nets.items():
        got = ck.networks[name]
        assert got.dims == net.dims and got.output_activation == net.output_activation
        for a, b in zip(net.arrays(), got.arrays()):
            assert a.tobytes() == b.tobytes()
    o = ck.optimizers["actor_opt"]
    assert (o.t, o.scale, o.lr, o.decay) == (opt.t, opt.scale, opt.lr, opt.decay)
    for a, b in zip(opt.m + opt.v, o.m + o.v):
        assert a.tobytes() == b.tobytes()
    path2 = tmp_path / "ck2.qtck"
    save_checkpoint(path2, ck.networks, ck.optimizers, ck.step, ck.meta, ck.optimizer_targets)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "ck.qtck"
    save_checkpoint(path, _nets())
    blob = bytearray(path.read_bytes())
    blob[-20] ^= 0xFF
    bad = tmp_path / "bad.qtck"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="format version"):
        load_checkpoint(bad)
    bad.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError, match="format version"):
        load_checkpoint(bad)
    blob = bytearray(path.read_bytes())
    blob[8] = 9
    bad.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version 9"):
        load_checkpoint(bad)
