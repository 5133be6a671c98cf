import math

import numpy as np
import pytest
import torch

from discop.grid import Grid, GridFunction, fourier_truncate
from discop.operator_nets import (
    DeepONetModel, FNOModel, FourierLayer, GridTooCoarse, SensorMismatch,
    ShiftDeepONetModel, deeponet_forward, encode_sensors, fno_forward,
    model_from_bytes, model_to_bytes, random_sensors, sensor_indices,
    shift_deeponet_forward,
)
from discop.relu.mlp import MLP, Layer, affine, gelu
from discop.relu import account_size


def dense_net(rng, sizes):
    layers = [Layer(rng.standard_normal((b, a)) / math.sqrt(a), rng.standard_normal(b) * 0.1,
                    i < len(sizes) - 2)
              for i, (a, b) in enumerate(zip(sizes, sizes[1:]))]
    return MLP(layers)


def loop_eval(net, x):
    """Scalar loops over dense weights: independent of the vectorized path."""
    v = list(map(float, x))
    for layer in net.layers:
        W, b = layer.dense()
        out = []
        for r in range(len(b)):
            s = b[r]
            for c in range(len(v)):
                s += W[r, c] * v[c]
            out.append(max(s, 0.0) if layer.activated else s)
        v = out
    return np.array(v)


def const_net(values, m):
    values = np.atleast_1d(values).astype(float)
    return affine(np.zeros((len(values), m)), values)


GRID = Grid(32)


def test_deeponet_trivial_cases():
    sensors = GRID.points[::8]
    u = GridFunction(GRID, np.sin(GRID.points))
    y = np.linspace(0, 6, 7)
    model = DeepONetModel(const_net(1.0, 4), affine([[1.0]]), sensors)
    assert np.array_equal(deeponet_forward(model, u, y), y)
    zero = DeepONetModel(const_net(0.0, 4), affine([[1.0]]), sensors)
    assert np.all(deeponet_forward(zero, u, y) == 0)
    assert deeponet_forward(model, u, 2.5) == 2.5


def test_deeponet_matches_loop_oracle():
    rng = np.random.default_rng(0)
    for trial in range(1000):
        m, p = rng.integers(1, 6), rng.integers(1, 4)
        sensors = GRID.points[rng.choice(GRID.n, m, replace=False)]
        model = DeepONetModel(dense_net(rng, [m, 5, p]), dense_net(rng, [1, 4, p]), sensors)
        vals = rng.standard_normal(GRID.n)
        y = rng.uniform(0, 2 * math.pi)
        beta = loop_eval(model.branch, vals[sensor_indices(GRID, sensors)])
        tau = loop_eval(model.trunk, [y])
        ref = sum(beta[k] * tau[k] for k in range(p))
        assert deeponet_forward(model, vals, y, GRID) == pytest.approx(ref, rel=1e-12, abs=1e-13)


def test_shift_deeponet_reduces_to_deeponet():
    rng = np.random.default_rng(1)
    m, p = 6, 3
    sensors = GRID.points[::5][:m]
    branch, trunk = dense_net(rng, [m, 7, p]), dense_net(rng, [1, 5, p])
    don = DeepONetModel(branch, trunk, sensors)
    sdon = ShiftDeepONetModel(branch, trunk, const_net(np.ones(p), m), const_net(np.zeros(p), m),
                              sensors)
    U = rng.standard_normal((10, GRID.n))
    y = GRID.points
    assert np.array_equal(shift_deeponet_forward(sdon, U, y, GRID),
                          deeponet_forward(don, U, y, GRID))


def test_shift_deeponet_constant_shift():
    c = 0.75
    model = ShiftDeepONetModel(const_net(1.0, 2), affine([[1.0]]), const_net(1.0, 2),
                               const_net(c, 2), GRID.points[:2])
    y = np.linspace(-1, 5, 13)
    assert np.allclose(shift_deeponet_forward(model, np.zeros(GRID.n), y, GRID), y + c,
                       atol=1e-15)


def test_shift_deeponet_matches_composition_oracle():
    rng = np.random.default_rng(2)
    m, p, d = 4, 3, 2
    grid = Grid(16)
    sensors = grid.points[[0, 3, 7, 12]]
    model = ShiftDeepONetModel(dense_net(rng, [m, 6, p]), dense_net(rng, [d, 5, p]),
                               dense_net(rng, [m, 4, p * d * d]), dense_net(rng, [m, 4, p * d]),
                               sensors)
    for _ in range(50):
        vals = rng.standard_normal(grid.n)
        y = rng.standard_normal(d)
        e = vals[[0, 3, 7, 12]]
        beta = loop_eval(model.branch, e)
        A = loop_eval(model.scale_net, e).reshape(p, d, d)
        g = loop_eval(model.shift_net, e).reshape(p, d)
        ref = sum(beta[k] * loop_eval(model.trunk, A[k] @ y + g[k])[k] for k in range(p))
        got = shift_deeponet_forward(model, vals, y, grid)
        assert got == pytest.approx(ref, rel=1e-11, abs=1e-12)


def test_deeponet_sensor_mismatch():
    with pytest.raises(SensorMismatch):
        DeepONetModel(const_net(1.0, 3), affine([[1.0]]), GRID.points[:4])
    model = DeepONetModel(const_net(1.0, 2), affine([[1.0]]), [0.0, 7.0])
    with pytest.raises(SensorMismatch):
        deeponet_forward(model, np.zeros(GRID.n), 0.0, GRID)


def test_encode_sensors():
    u = GridFunction(GRID, np.cos(GRID.points))
    assert np.array_equal(encode_sensors(u, GRID.points), u.values)
    box = GridFunction(GRID, np.where(np.abs(GRID.points - math.pi) > 2.5, 0.6, 0.0))
    assert encode_sensors(box, [0.0])[0] == 0.6
    # snapping to the nearest node
    assert encode_sensors(u, [GRID.dx * 2.4])[0] == u.values[2]
    a, b = random_sensors(GRID, 7, seed=5), random_sensors(GRID, 7, seed=5)
    assert np.array_equal(a, b) and len(np.unique(a)) == 7 and np.all(np.diff(a) > 0)


def identity_fno(d_v=1, layers=()):
    lift = affine(np.hstack([np.eye(d_v)[:, :1], np.zeros((d_v, 1))]))
    return FNOModel(lift, list(layers), np.eye(d_v)[:1], k_max=1)


def test_fno_lift_then_project_is_identity():
    u = np.random.default_rng(3).standard_normal((4, GRID.n))
    assert np.array_equal(fno_forward(identity_fno(), u, GRID), u[:, None, :])


def test_fno_pure_projection_layer():
    k_max = 3
    P = np.ones((2 * k_max + 1, 1, 1), complex)
    lift = affine([[1.0, 0.0]])
    model = FNOModel(lift, [FourierLayer(np.zeros((1, 1)), P)], [[1.0]], k_max,
                     activation="identity")
    u = np.random.default_rng(4).standard_normal(GRID.n)
    out = fno_forward(model, u, GRID)
    assert np.allclose(out, fourier_truncate(u, k_max), atol=1e-13)


@pytest.mark.parametrize("c", [0.3, 1.0, 2.7])
def test_fno_shift_theorem(c):
    P = np.zeros((3, 1, 1), complex)
    P[2, 0, 0], P[0, 0, 0] = np.exp(-1j * c), np.exp(1j * c)
    model = FNOModel(affine([[1.0, 0.0]]), [FourierLayer(np.zeros((1, 1)), P)], [[1.0]], 1,
                     activation="identity")
    u = GridFunction(GRID, np.cos(GRID.points))
    out, imag = fno_forward(model, u, return_imag=True)
    assert np.max(np.abs(out - np.cos(GRID.points - c))) < 1e-10
    assert imag < 1e-10


def random_fno(rng, d_v=3, k_max=2, n_layers=2, d_u=1, hermitian=True, x_weight=True,
               activation="relu"):
    K = 2 * k_max + 1
    lift = dense_net(rng, [d_u + 1, d_v])
    if not x_weight:
        W, b = lift.layers[0].dense()
        W[:, -1] = 0
        lift = affine(W, b)
    layers = []
    for _ in range(n_layers):
        P = rng.standard_normal((K, d_v, d_v)) + 1j * rng.standard_normal((K, d_v, d_v))
        bh = rng.standard_normal((K, d_v)) + 1j * rng.standard_normal((K, d_v))
        if hermitian:
            P = 0.5 * (P + P[::-1].conj())
            bh = 0.5 * (bh + bh[::-1].conj())
        layers.append(FourierLayer(rng.standard_normal((d_v, d_v)), P / d_v, bh))
    return FNOModel(lift, layers, rng.standard_normal((1, d_v)), k_max, rng.standard_normal(1),
                    activation=activation)


def test_fno_hermitian_multipliers_give_real_output():
    rng = np.random.default_rng(5)
    model = random_fno(rng)
    assert model.is_hermitian(1e-14)
    _, imag = fno_forward(model, rng.standard_normal((3, GRID.n)), GRID, return_imag=True)
    assert imag < 1e-10
    bad = random_fno(rng, hermitian=False)
    assert not bad.is_hermitian()
    _, imag = fno_forward(bad, rng.standard_normal((3, GRID.n)), GRID, return_imag=True)
    assert imag > 1e-3


def test_fno_resolution_invariance():
    rng = np.random.default_rng(6)
    model = random_fno(rng, n_layers=1, x_weight=False, k_max=2)
    coarse, fine = Grid(32), Grid(64)
    f = lambda x: 0.3 + np.sin(x) - 0.5 * np.cos(2 * x + 0.4)  # noqa: E731
    a = fno_forward(model, f(coarse.points), coarse)
    b = fno_forward(model, f(fine.points), fine)
    assert np.max(np.abs(a - b[::2])) < 1e-8


def test_fno_multichannel_and_batch_shapes():
    rng = np.random.default_rng(7)
    model = random_fno(rng, d_u=3)
    out = fno_forward(model, rng.standard_normal((5, 3, GRID.n)), GRID)
    assert out.shape == (5, 1, GRID.n)
    single = fno_forward(model, rng.standard_normal((1, 3, GRID.n)), GRID)
    assert single.shape == (1, 1, GRID.n)


def test_fno_grid_too_coarse():
    model = random_fno(np.random.default_rng(8), k_max=3)
    with pytest.raises(GridTooCoarse):
        fno_forward(model, np.zeros(6), Grid(6))
    fno_forward(model, np.zeros(7), Grid(7))


def test_gelu_matches_torch():
    z = np.linspace(-6, 6, 101)
    ref = torch.nn.functional.gelu(torch.tensor(z)).numpy()
    assert np.allclose(gelu(z), ref, atol=1e-15, rtol=1e-14)


def test_deeponet_size_accounting():
    rng = np.random.default_rng(9)
    branch = dense_net(rng, [4, 5, 5, 5, 2])   # width 5, depth 3
    trunk = dense_net(rng, [1, 3, 3, 2])       # width 3, depth 2
    acc = account_size(DeepONetModel(branch, trunk, GRID.points[:4]))
    assert acc["width"] == 8 and acc["depth"] == 3 and acc["size"] == 240


def test_shift_deeponet_and_fno_accounting():
    rng = np.random.default_rng(10)
    m, p = 4, 2
    s = ShiftDeepONetModel(dense_net(rng, [m, 3, p]), dense_net(rng, [1, 2, p]),
                           dense_net(rng, [m, 2, 2, p]), dense_net(rng, [m, 1, p]),
                           GRID.points[:m])
    acc = account_size(s)
    assert acc["width"] == 8 and acc["depth"] == 2 and acc["size"] == 6 * 8 + 64 * 2
    f = random_fno(rng, d_v=3, k_max=2, n_layers=2)
    acc = account_size(f)
    # lifting 3*(2+1), per layer 9 + 2*5*9 + 2*5*3, projection 1*(3+1)
    assert acc["size"] == 9 + 2 * (9 + 90 + 30) + 4
    assert acc["k_max"] == 2 and acc["d_v"] == 3 and acc["depth"] == 2


def test_checkpoint_roundtrip_exact():
    rng = np.random.default_rng(11)
    sens = GRID.points[:3]
    models = [
        DeepONetModel(dense_net(rng, [3, 4, 2]), dense_net(rng, [1, 4, 2]), sens),
        ShiftDeepONetModel(dense_net(rng, [3, 4, 2]), dense_net(rng, [1, 4, 2]),
                           dense_net(rng, [3, 2]), dense_net(rng, [3, 2]), sens,
                           meta={"tag": "x"}),
        random_fno(rng, activation="gelu"),
    ]
    models[2].layers[1] = FourierLayer(models[2].layers[1].W, None, None, False)
    U = rng.standard_normal((4, GRID.n))
    for model in models:
        back = model_from_bytes(model_to_bytes(model))
        assert type(back) is type(model) and back.meta == model.meta
        assert back.activation == model.activation
        if isinstance(model, FNOModel):
            assert np.array_equal(fno_forward(back, U, GRID), fno_forward(model, U, GRID))
        else:
            fwd = shift_deeponet_forward if isinstance(model, ShiftDeepONetModel) else deeponet_forward
            assert np.array_equal(fwd(back, U, GRID.points, GRID), fwd(model, U, GRID.points, GRID))
