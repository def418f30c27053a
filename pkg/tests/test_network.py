import numpy as np
import pytest

from taperpinn.errors import ContractViolation, NumericFailure
from taperpinn.network import (
    NetworkParams,
    forward,
    init_params,
    jet_forward,
    load_checkpoint,
    save_checkpoint,
)
from taperpinn.numcore import SeededRng

from conftest import random_points


def scaled_params(seed, sizes=(2, 6, 6, 2), scale=0.6):
    """Random parameters whose pre-activations stay well inside (-3, 3)."""
    g = np.random.default_rng(seed)
    weights = [scale * g.normal(size=(o, i)) for i, o in zip(sizes[:-1], sizes[1:])]
    biases = [0.3 * g.normal(size=o) for o in sizes[1:]]
    alphas = g.uniform(0.5, 1.5, len(sizes) - 2)
    return NetworkParams(sizes, weights, biases, alphas)


def test_default_architecture():
    p = init_params(SeededRng(11))
    assert p.layer_sizes == (2,) + (45,) * 10 + (2,)
    assert p.n_hidden == 10
    assert np.all(p.alphas == 2.0)
    assert all(np.all(b == 0) for b in p.biases)


def test_init_deterministic():
    a = init_params(SeededRng(11), (2, 5, 2))
    b = init_params(SeededRng(11), (2, 5, 2))
    assert a.flatten().tobytes() == b.flatten().tobytes()


@pytest.mark.parametrize("sizes", [(3, 5, 2), (2, 5, 1), (2, 2)])
def test_malformed_layer_sizes(sizes):
    with pytest.raises(ContractViolation):
        init_params(SeededRng(0), sizes)


def test_flatten_roundtrip(tiny_params):
    vec = tiny_params.flatten()
    again = NetworkParams.unflatten(tiny_params.layer_sizes, vec)
    assert again.flatten().tobytes() == vec.tobytes()
    assert vec.size == tiny_params.size
    with pytest.raises(ContractViolation):
        NetworkParams.unflatten(tiny_params.layer_sizes, vec[:-1])


def test_zero_network():
    p = init_params(SeededRng(0), (2, 4, 2))
    p = NetworkParams.unflatten(p.layer_sizes, np.zeros(p.size))
    assert forward(p, 0.3, 0.7) == (0.0, 0.0)


def test_single_hidden_neuron_by_hand():
    w1 = np.array([[0.7, -0.4]])
    b1 = np.array([0.1])
    w2 = np.array([[1.5], [-2.0]])
    b2 = np.array([0.25, 0.5])
    p = NetworkParams((2, 1, 2), [w1, w2], [b1, b2], [1.3])
    x, z = 0.4, -0.2
    h = np.tanh(1.3 * (0.7 * x - 0.4 * z + 0.1))
    re, im = forward(p, x, z)
    assert abs(re - (1.5 * h + 0.25)) < 1e-12
    assert abs(im - (-2.0 * h + 0.5)) < 1e-12


def test_forward_matches_jet_value():
    for seed in range(5):
        p = scaled_params(seed)
        x, z = random_points(seed, 40)
        re, im = forward(p, x, z)
        jet = jet_forward(p, x, z)
        assert np.max(np.abs(jet.re.v - re)) < 1e-12
        assert np.max(np.abs(jet.im.v - im)) < 1e-12


def test_affine_network_has_no_curvature():
    p = scaled_params(1)
    p.weights[1][:] = 0.0  # second hidden layer sees only its bias
    jet = jet_forward(p, np.array([0.1, -0.5]), np.array([0.3, 0.9]))
    for part in (jet.re, jet.im):
        np.testing.assert_array_equal(part.dxx, 0.0)
        np.testing.assert_array_equal(part.dzz, 0.0)


def _fd_jet(p, x, z, h=1e-4):
    def f(xx, zz):
        re, im = forward(p, xx, zz)
        return np.array([re, im])
    f0 = f(x, z)
    fxp, fxm = f(x + h, z), f(x - h, z)
    fzp, fzm = f(x, z + h), f(x, z - h)
    return ((fxp - fxm) / (2 * h), (fzp - fzm) / (2 * h),
            (fxp - 2 * f0 + fxm) / h**2, (fzp - 2 * f0 + fzm) / h**2)


def test_jet_matches_finite_differences():
    worst = 0.0
    for seed in range(100):
        p = scaled_params(seed)
        g = np.random.default_rng(1000 + seed)
        x, z = g.uniform(-1, 1), g.uniform(0, 1)
        jet = jet_forward(p, x, z)
        fd = _fd_jet(p, x, z)
        for ch, ref in zip(("dx", "dz", "dxx", "dzz"), fd):
            got = np.array([getattr(jet.re, ch), getattr(jet.im, ch)])
            # relative to the derivative scale of the sample
            err = np.abs(got - ref) / np.maximum(np.abs(ref), 1e-2)
            worst = max(worst, err.max())
    assert worst < 1e-5


def test_swapping_inputs_swaps_derivatives():
    p = scaled_params(7)
    q = p.copy()
    q.weights[0] = p.weights[0][:, ::-1].copy()
    x, z = 0.3, 0.8
    a = jet_forward(p, x, z)
    b = jet_forward(q, z, x)
    for pa, pb in ((a.re, b.re), (a.im, b.im)):
        assert abs(pa.v - pb.v) < 1e-12
        assert abs(pa.dx - pb.dz) < 1e-12
        assert abs(pa.dz - pb.dx) < 1e-12
        assert abs(pa.dxx - pb.dzz) < 1e-12


def test_slope_weight_rescaling():
    p = scaled_params(4)
    for b in p.biases:
        b[:] = 0.0
    q = p.copy()
    q.alphas[1] *= 2.0
    q.weights[1] *= 0.5
    x, z = random_points(4, 30)
    np.testing.assert_allclose(forward(q, x, z), forward(p, x, z), rtol=0, atol=1e-12)


def test_nonfinite_raises():
    p = scaled_params(0)
    p.weights[0][0, 0] = np.nan
    with pytest.raises(NumericFailure):
        forward(p, 0.5, 0.5)
    with pytest.raises(NumericFailure):
        jet_forward(p, 0.5, 0.5)


def test_checkpoint_roundtrip(tmp_path, tiny_params):
    path = tmp_path / "params.npz"
    save_checkpoint(tiny_params, path)
    again = load_checkpoint(path)
    assert again.layer_sizes == tiny_params.layer_sizes
    assert again.flatten().tobytes() == tiny_params.flatten().tobytes()
    x, z = random_points(0, 10)
    assert (np.array(forward(again, x, z)).tobytes()
            == np.array(forward(tiny_params, x, z)).tobytes())
