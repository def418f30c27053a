"""Fully connected network with layer-wise adaptive tanh activations.

The network maps a point ``(x, z)`` to ``(Re u, Im u)``. Hidden layer ``i``
computes ``tanh(alpha_i * (W_i h + b_i))``; the output layer is affine.

Spatial derivatives are obtained by pushing a second-order jet through the
layers. A jet is stored as an array of shape ``(5, n_features, n_points)``
whose leading axis holds the channels ``v, dx, dz, dxx, dzz``. Mixed
derivatives are never needed and are not propagated.
"""

from dataclasses import dataclass

import numpy as np

from taperpinn.errors import ContractViolation, NumericFailure
from taperpinn.numcore import DTYPE, glorot_normal

V, DX, DZ, DXX, DZZ = range(5)
N_CHANNELS = 5

CHECKPOINT_VERSION = 1

DEFAULT_LAYER_SIZES = (2,) + (45,) * 10 + (2,)


@dataclass
class NetworkParams:
    layer_sizes: tuple
    weights: list
    biases: list
    alphas: np.ndarray

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        _check_layer_sizes(self.layer_sizes)
        n_layers = len(self.layer_sizes) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ContractViolation("weights/biases do not match layer_sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if w.shape != shape or b.shape != (shape[0],):
                raise ContractViolation(
                    f"layer {i + 1}: got W{w.shape}, b{b.shape}, expected W{shape}"
                )
        self.alphas = np.asarray(self.alphas, dtype=DTYPE)
        if self.alphas.shape != (self.n_hidden,):
            raise ContractViolation(
                f"need {self.n_hidden} activation slopes, got {self.alphas.shape}"
            )

    @property
    def n_hidden(self):
        return len(self.layer_sizes) - 2

    @property
    def size(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases)) + (
            self.alphas.size
        )

    def arrays(self):
        """All parameter arrays in flattening order: W1, b1, ..., alphas."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        out.append(self.alphas)
        return out

    def flatten(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def unflatten(cls, layer_sizes, vec):
        layer_sizes = tuple(int(n) for n in layer_sizes)
        vec = np.asarray(vec, dtype=DTYPE)
        weights, biases = [], []
        pos = 0
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(vec[pos:pos + n_in * n_out].reshape(n_out, n_in).copy())
            pos += n_in * n_out
            biases.append(vec[pos:pos + n_out].copy())
            pos += n_out
        n_hidden = len(layer_sizes) - 2
        alphas = vec[pos:pos + n_hidden].copy()
        pos += n_hidden
        if pos != vec.size:
            raise ContractViolation(
                f"vector of length {vec.size} does not fit layers {layer_sizes}"
            )
        return cls(layer_sizes, weights, biases, alphas)

    def copy(self):
        return NetworkParams.unflatten(self.layer_sizes, self.flatten())


@dataclass
class RealJet:
    v: np.ndarray
    dx: np.ndarray
    dz: np.ndarray
    dxx: np.ndarray
    dzz: np.ndarray

    @classmethod
    def from_channels(cls, channels):
        return cls(*channels)

    def channels(self):
        return np.stack([self.v, self.dx, self.dz, self.dxx, self.dzz])

    @property
    def laplacian(self):
        return self.dxx + self.dzz


@dataclass
class ComplexJet:
    re: RealJet
    im: RealJet

    @property
    def value(self):
        return self.re.v + 1j * self.im.v

    def __add__(self, other):
        return ComplexJet(
            RealJet.from_channels(self.re.channels() + other.re.channels()),
            RealJet.from_channels(self.im.channels() + other.im.channels()),
        )

    def __sub__(self, other):
        return ComplexJet(
            RealJet.from_channels(self.re.channels() - other.re.channels()),
            RealJet.from_channels(self.im.channels() - other.im.channels()),
        )


def _check_layer_sizes(layer_sizes):
    if len(layer_sizes) < 3 or layer_sizes[0] != 2 or layer_sizes[-1] != 2:
        raise ContractViolation(
            "layer_sizes must start and end with 2 and have a hidden layer, "
            f"got {layer_sizes}"
        )
    if any(n < 1 for n in layer_sizes):
        raise ContractViolation(f"layer widths must be positive: {layer_sizes}")


def init_params(rng, layer_sizes=DEFAULT_LAYER_SIZES, alpha0=2.0):
    """Glorot-normal weights, zero biases, every slope set to ``alpha0``."""
    layer_sizes = tuple(int(n) for n in layer_sizes)
    _check_layer_sizes(layer_sizes)
    weights = [glorot_normal(rng, n_in, n_out)
               for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:])]
    biases = [np.zeros(n, dtype=DTYPE) for n in layer_sizes[1:]]
    alphas = np.full(len(layer_sizes) - 2, float(alpha0), dtype=DTYPE)
    return NetworkParams(layer_sizes, weights, biases, alphas)


# -- jet kernels, shared with the taped version in gradengine ---------------

def input_jet(x, z):
    """Jet of the identity map (x, z) -> (x, z) at the given points."""
    p = x.shape[0]
    h = np.zeros((N_CHANNELS, 2, p), dtype=DTYPE)
    h[V, 0] = x
    h[V, 1] = z
    h[DX, 0] = 1.0
    h[DZ, 1] = 1.0
    return h


def jet_affine(w, b, h, alpha=None):
    """``alpha * (W h + b)`` applied channel-wise; the bias only shifts ``v``."""
    a = np.matmul(w, h)
    a[V] += b[:, None]
    if alpha is not None:
        a *= alpha
    return a


def jet_tanh(a):
    """Push a jet through elementwise tanh.

    With t = tanh(a), s = 1 - t^2:  v = t, d = s a', dd = s a'' - 2 t s a'^2.
    """
    t = np.tanh(a[V])
    s = 1.0 - t * t
    out = a * s
    out[V] = t
    two_ts = 2.0 * t * s
    out[DXX] -= two_ts * a[DX] * a[DX]
    out[DZZ] -= two_ts * a[DZ] * a[DZ]
    return out


def _as_points(x, z):
    x = np.asarray(x, dtype=DTYPE)
    z = np.asarray(z, dtype=DTYPE)
    shape = np.broadcast_shapes(x.shape, z.shape)
    return (np.broadcast_to(x, shape).ravel(), np.broadcast_to(z, shape).ravel(),
            shape)


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericFailure(f"non-finite value in {what}")


def jet_forward_channels(params, x, z):
    """Raw jet propagation on 1-D point arrays; returns shape (5, 2, P)."""
    h = input_jet(x, z)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if i < last:
            h = jet_tanh(jet_affine(w, b, h, params.alphas[i]))
        else:
            h = jet_affine(w, b, h)
    _check_finite(h, "jet propagation")
    return h


def jet_forward(params, x, z):
    """Value and first/second spatial derivatives of both outputs.

    ``x`` and ``z`` may be scalars or arrays of a common broadcast shape; the
    fields of the returned jet have that shape.
    """
    xs, zs, shape = _as_points(x, z)
    h = jet_forward_channels(params, xs, zs)
    re = RealJet.from_channels([c.reshape(shape) for c in h[:, 0]])
    im = RealJet.from_channels([c.reshape(shape) for c in h[:, 1]])
    return ComplexJet(re, im)


def forward_batch(params, x, z):
    """Network outputs at 1-D point arrays as an array of shape (2, P)."""
    h = np.stack([x, z])
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = w @ h + b[:, None]
        if i < last:
            h = np.tanh(params.alphas[i] * h)
    _check_finite(h, "forward pass")
    return h


def forward(params, x, z):
    """Network value ``(Re u, Im u)`` at (x, z); scalars in, scalars out."""
    xs, zs, shape = _as_points(x, z)
    out = forward_batch(params, xs, zs)
    re, im = out[0].reshape(shape), out[1].reshape(shape)
    if shape == ():
        return float(re), float(im)
    return re, im


def save_checkpoint(params, path):
    """Write an ``.npz`` checkpoint; reloading reproduces evaluations bitwise.

    Keys: ``format_version``, ``layer_sizes``, ``W{i}``, ``b{i}`` for
    i = 1..M+1, and ``alphas``.
    """
    arrays = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "layer_sizes": np.array(params.layer_sizes, dtype=np.int64),
        "alphas": params.alphas,
    }
    for i, (w, b) in enumerate(zip(params.weights, params.biases), start=1):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ContractViolation(f"unsupported checkpoint version {version}")
        layer_sizes = tuple(int(n) for n in data["layer_sizes"])
        n_layers = len(layer_sizes) - 1
        weights = [data[f"W{i}"].astype(DTYPE) for i in range(1, n_layers + 1)]
        biases = [data[f"b{i}"].astype(DTYPE) for i in range(1, n_layers + 1)]
        alphas = data["alphas"].astype(DTYPE)
    return NetworkParams(layer_sizes, weights, biases, alphas)
