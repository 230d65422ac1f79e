import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymseg.diffcore import (
    NetConfig,
    ParamStore,
    backward,
    constant,
    forward,
    grad,
    init_params,
    leaf,
    load_checkpoint,
    poly_lr,
    save_checkpoint,
    sgd_step,
)
from asymseg.diffcore import ops
from asymseg.errors import ConfigError, FormatError, GraphNotRecorded, ShapeMismatch


def closed_form_count(depth, base):
    """Parameter count by hand: two 3x3 convs per encoder/decoder stage plus the 1x1 head."""
    total, cin = 0, 1
    for lvl in range(depth + 1):
        c = base * 2 ** lvl
        total += (9 * cin * c + c) + (9 * c * c + c)
        cin = c
    for lvl in range(depth - 1, -1, -1):
        c = base * 2 ** lvl
        total += (9 * (cin + c) * c + c) + (9 * c * c + c)
        cin = c
    return total + 2 * cin + 2


DEFAULT_COUNT = 29_626  # depth 2, base 8: 664 + 3488 + 13888 (enc) + 9248 + 2320 (dec) + 18 (head)


def test_parameter_count_regression():
    assert closed_form_count(2, 8) == DEFAULT_COUNT
    assert init_params(NetConfig(), 0).num_params() == DEFAULT_COUNT
    for depth, base in [(0, 3), (1, 4), (3, 2)]:
        assert init_params(NetConfig(depth, base), 0).num_params() == closed_form_count(depth, base)


def test_gradcheck_config_is_small():
    assert init_params(NetConfig(depth=1, base_channels=4), 0).num_params() <= 5000


def test_init_determinism():
    a, b = init_params(NetConfig(), 3), init_params(NetConfig(), 3)
    assert all(a.values[k].tobytes() == b.values[k].tobytes() for k in a.names)
    c = init_params(NetConfig(), 4)
    assert any(not np.array_equal(a.values[k], c.values[k]) for k in a.names if k.endswith(".w"))
    assert all(not m.any() for m in a.momentum.values())


def test_init_he_uniform_bounds():
    p = init_params(NetConfig(), 0)
    for name, shape in NetConfig().layers():
        bound = np.sqrt(6.0 / np.prod(shape[1:]))
        w = p.values[f"{name}.w"]
        assert np.abs(w).max() <= bound
        assert not p.values[f"{name}.b"].any()


def test_bad_config():
    with pytest.raises(ConfigError):
        NetConfig(depth=-1)
    with pytest.raises(ConfigError):
        NetConfig(in_channels=3)


def test_forward_shapes_and_simplex():
    p = init_params(NetConfig(), 0)
    x = np.random.default_rng(0).standard_normal((1, 1, 64, 64)).astype(np.float32)
    y = forward(p, x).data
    assert y.shape == (1, 2, 64, 64)
    assert np.allclose(y.sum(axis=1), 1, atol=1e-6)
    assert (y > 0).all() and (y < 1).all()


def test_zero_head_gives_half():
    p = init_params(NetConfig(), 0)
    p.values["head.w"][:] = 0
    y = forward(p, np.zeros((2, 1, 16, 16), np.float32)).data
    assert np.all(y == 0.5)


def test_identical_items_identical_outputs():
    p = init_params(NetConfig(), 1)
    x = np.random.default_rng(0).standard_normal((1, 1, 32, 32)).astype(np.float32)
    y = forward(p, np.concatenate([x, x])).data
    assert np.array_equal(y[0], y[1])


def test_forward_shape_errors():
    p = init_params(NetConfig(), 0)
    with pytest.raises(ShapeMismatch):
        forward(p, np.zeros((1, 1, 30, 32)))
    with pytest.raises(ShapeMismatch):
        forward(p, np.zeros((1, 2, 32, 32)))


def _scalar_loss(p, x):
    y = forward(p, x)
    # fused sum of fg probabilities weighted by a fixed field
    wts = np.linspace(-1, 1, y.data[:, 1].size).reshape(y.data[:, 1].shape)
    from asymseg.diffcore.tensor import make

    def gfn(g):
        d = np.zeros_like(y.data)
        d[:, 1] = wts * g
        return (d,)

    return make(np.asarray((y.data[:, 1] * wts).sum()), (y,), gfn)


def test_backward_matches_central_differences_float64():
    cfg = NetConfig(depth=1, base_channels=2)
    p = init_params(cfg, 0, dtype=np.float64)
    rng = np.random.default_rng(1)
    # zero biases put some pre-activations exactly on a ReLU kink, where differences are one-sided
    for k in p.names:
        if k.endswith(".b"):
            p.values[k] += rng.uniform(-0.1, 0.1, size=p.values[k].shape)
    x = np.random.default_rng(0).standard_normal((2, 1, 8, 8))
    g = backward(_scalar_loss(p, x), p)
    eps = 1e-6
    for name in p.names:
        flat = p.values[name].reshape(-1)
        for j in rng.choice(flat.size, size=min(5, flat.size), replace=False):
            o = flat[j]
            flat[j] = o + eps
            up = float(_scalar_loss(p, x).data)
            flat[j] = o - eps
            dn = float(_scalar_loss(p, x).data)
            flat[j] = o
            num = (up - dn) / (2 * eps)
            assert g[name].reshape(-1)[j] == pytest.approx(num, rel=1e-4, abs=1e-8)


def test_backward_scale_and_unused_params():
    p = init_params(NetConfig(depth=1, base_channels=2), 0, dtype=np.float64)
    x = np.random.default_rng(0).standard_normal((1, 1, 8, 8))
    g1 = backward(_scalar_loss(p, x), p)
    g2 = backward(_scalar_loss(p, x), p, scale=2.0)
    for k in p.names:
        assert np.array_equal(2.0 * g1[k], g2[k])
    a = leaf(np.ones(3))
    b = leaf(np.ones(3))
    loss = ops.scale(a, 2.0)
    from asymseg.diffcore.tensor import make

    s = make(np.asarray(loss.data.sum()), (loss,), lambda g: (np.full(3, g),))
    ga, gb = grad(s, [a, b])
    assert np.array_equal(ga, [2, 2, 2]) and np.array_equal(gb, np.zeros(3))


def test_graph_not_recorded():
    with pytest.raises(GraphNotRecorded):
        grad(constant(1.0), [leaf(np.ones(2))])


def test_maxpool_tie_goes_to_first():
    x = leaf(np.ones((1, 1, 2, 2)))
    y = ops.maxpool2(x)
    (gx,) = y.grad_fn(np.ones((1, 1, 1, 1)))
    assert gx.tolist() == [[[[1.0, 0.0], [0.0, 0.0]]]]


def test_sgd_examples():
    st = ParamStore(NetConfig(), {"w": np.array([1.0])})
    sgd_step(st, {"w": np.array([1.0])}, lr=0.1, momentum=0.9, weight_decay=0.0)
    assert st.momentum["w"][0] == pytest.approx(1.0) and st.values["w"][0] == pytest.approx(0.9)
    sgd_step(st, {"w": np.array([1.0])}, lr=0.1, momentum=0.9, weight_decay=0.0)
    assert st.momentum["w"][0] == pytest.approx(1.9) and st.values["w"][0] == pytest.approx(0.71)
    st = ParamStore(NetConfig(), {"w": np.array([1.0])})
    sgd_step(st, {"w": np.array([0.0])}, lr=0.01, momentum=0.9, weight_decay=1e-4)
    assert st.values["w"][0] == pytest.approx(0.999999, abs=1e-15)
    with pytest.raises(ShapeMismatch):
        sgd_step(st, {"w": np.zeros(2)}, lr=0.1)


def test_poly_lr_examples():
    assert poly_lr(0, 100) == 0.01
    assert poly_lr(100, 100) == 0.0
    assert poly_lr(50, 100, power=1.0) == pytest.approx(0.005)
    with pytest.raises(ValueError):
        poly_lr(101, 100)


@given(st.integers(1, 5000), st.floats(0.1, 3.0))
def test_poly_lr_strictly_decreasing(total, power):
    lrs = [poly_lr(i, total, power=power) for i in range(0, total + 1, max(1, total // 50))]
    assert all(a > b for a, b in zip(lrs, lrs[1:]))


def test_checkpoint_round_trip(tmp_path):
    cfg = NetConfig(depth=1, base_channels=4)
    a = init_params(cfg, 0, tag="con")
    b = init_params(cfg, 0, tag="rad")
    for v in a.momentum.values():
        v += 0.25
    save_checkpoint(tmp_path / "x.ckpt", {"con": a, "rad": b}, {"alpha": 3}, 17)
    stores, config, it = load_checkpoint(tmp_path / "x.ckpt")
    assert config == {"alpha": 3} and it == 17
    assert stores["con"].cfg == cfg
    for k in a.names:
        assert np.array_equal(stores["con"].values[k], a.values[k])
        assert np.array_equal(stores["con"].momentum[k], a.momentum[k])
        assert np.array_equal(stores["rad"].values[k], b.values[k])


def test_checkpoint_layout(tmp_path):
    import json

    p = init_params(NetConfig(depth=0, base_channels=1), 0)
    save_checkpoint(tmp_path / "x.ckpt", {"net": p}, {}, 0)
    raw = (tmp_path / "x.ckpt").read_bytes()
    head, blob = raw.split(b"\n", 1)
    header = json.loads(head)
    assert set(header) >= {"entries", "config", "iter"}
    e = next(e for e in header["entries"] if e["name"] == "net/head.w")
    arr = np.frombuffer(blob[e["offset"]:e["offset"] + e["len"]], dtype="<f4").reshape(e["shape"])
    assert np.array_equal(arr, p.values["head.w"])


def test_checkpoint_truncated(tmp_path):
    p = init_params(NetConfig(depth=0, base_channels=2), 0)
    save_checkpoint(tmp_path / "x.ckpt", {"net": p})
    raw = (tmp_path / "x.ckpt").read_bytes()
    (tmp_path / "x.ckpt").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "x.ckpt")
    (tmp_path / "x.ckpt").write_bytes(b"garbage\n" + raw)
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "x.ckpt")


def test_forward_backward_bit_reproducible():
    def run():
        p = init_params(NetConfig(), 5)
        x = np.random.default_rng(2).standard_normal((2, 1, 32, 32)).astype(np.float32)
        g = backward(_scalar_loss(p, x), p)
        return np.concatenate([v.ravel() for v in g.values()])

    assert run().tobytes() == run().tobytes()
