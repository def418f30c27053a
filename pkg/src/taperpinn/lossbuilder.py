"""Collocation sets and the self-adaptive (SA-PINN) training loss.

Each collocation point carries a trainable weight ``lam``; its squared
complex residual ``Re^2 + Im^2`` enters the loss multiplied by ``mask(lam)``
and averaged over its point set::

    L = mean_r mask(lam_r)|R_r|^2 + sum_j mean_bj mask(lam_bj)|B_j|^2
"""

from dataclasses import dataclass

import numpy as np

from taperpinn.errors import ContractViolation
from taperpinn.gradengine import Tape, TapedParams, ParamGradient, taped_jet_forward
from taperpinn.network import jet_forward_channels
from taperpinn.numcore import DTYPE, sample_uniform
from taperpinn.physics import (
    BOUNDARIES,
    DtNContext,
    boundary_points,
    boundary_residual_parts,
    pde_residual_parts,
)

# initial weight ranges U(0, hi) for interior, bottom, top, minus, plus
DEFAULT_SA_RANGES = {"interior": 0.5, "bottom": 30.0, "top": 30.0,
                     "minus": 10.0, "plus": 10.0}


def square_mask(lam):
    return lam * lam


def square_mask_derivative(lam):
    return 2.0 * lam


@dataclass
class TrainingSet:
    interior_x: np.ndarray
    interior_z: np.ndarray
    boundary: dict  # which -> (x, z)

    @property
    def n_interior(self):
        return self.interior_x.size

    @property
    def n_boundary(self):
        return {w: xz[0].size for w, xz in self.boundary.items()}

    def stacked(self):
        """All points in one pass order, plus the slice of each point set."""
        xs, zs, slices = [self.interior_x], [self.interior_z], {}
        slices["interior"] = slice(0, self.n_interior)
        pos = self.n_interior
        for which in BOUNDARIES:
            x, z = self.boundary[which]
            xs.append(x)
            zs.append(z)
            slices[which] = slice(pos, pos + x.size)
            pos += x.size
        return np.concatenate(xs), np.concatenate(zs), slices

    def interface_z(self):
        return self.boundary["minus"][1]


def cell_centers(lo, hi, n):
    h = (hi - lo) / n
    return lo + h * (np.arange(n) + 0.5)


def build_training_set(spec, grid_x=120, grid_z=10, n_b=80):
    """Cell-centred interior grid plus ``n_b`` uniform nodes per boundary piece."""
    if min(grid_x, grid_z, n_b) < 2:
        raise ContractViolation("grid sizes and n_b must be >= 2")
    x, z = evaluation_grid(spec, grid_x, grid_z)
    boundary = {which: boundary_points(spec, which, n_b) for which in BOUNDARIES}
    return TrainingSet(x, z, boundary)


def evaluation_grid(spec, grid_x, grid_z):
    """Flattened cell-centred grid, x varying slowest."""
    gx = cell_centers(-spec.b, spec.b, int(grid_x))
    gz = cell_centers(0.0, 1.0, int(grid_z))
    xx, zz = np.meshgrid(gx, gz, indexing="ij")
    return xx.ravel(), zz.ravel()


@dataclass
class SelfAdaptiveWeights:
    interior: np.ndarray
    boundary: dict  # which -> weights

    def arrays(self):
        return [self.interior] + [self.boundary[w] for w in BOUNDARIES]

    def flatten(self):
        return np.concatenate(self.arrays())

    def unflatten(self, vec):
        """New weights with this instance's layout filled from ``vec``."""
        vec = np.asarray(vec, dtype=DTYPE)
        sizes = [a.size for a in self.arrays()]
        if vec.size != sum(sizes):
            raise ContractViolation("weight vector length mismatch")
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        return SelfAdaptiveWeights(
            parts[0].copy(), {w: p.copy() for w, p in zip(BOUNDARIES, parts[1:])}
        )

    def scaled(self, factor):
        return self.unflatten(factor * self.flatten())


def init_sa_weights(rng, ts, ranges=None):
    """Uniform initial weights; draws in the order interior, bottom, top, minus, plus."""
    ranges = {**DEFAULT_SA_RANGES, **(ranges or {})}
    interior = sample_uniform(rng, 0.0, ranges["interior"], ts.n_interior)
    boundary = {}
    for which in BOUNDARIES:
        boundary[which] = sample_uniform(rng, 0.0, ranges[which],
                                         ts.boundary[which][0].size)
    return SelfAdaptiveWeights(interior, boundary)


@dataclass
class LossReport:
    total: float
    residual_term: float
    boundary_terms: tuple

    def as_dict(self):
        out = {"loss": self.total, "loss_r": self.residual_term}
        for which, v in zip(BOUNDARIES, self.boundary_terms):
            out[f"loss_{which}"] = v
        return out


def _check_shapes(sa, ts):
    if sa.interior.shape != (ts.n_interior,):
        raise ContractViolation("interior weights do not match the training set")
    for which in BOUNDARIES:
        if sa.boundary[which].shape != ts.boundary[which][0].shape:
            raise ContractViolation(f"{which} weights do not match the training set")


def _check_ctx(ctx, ts):
    if ctx.n_nodes != ts.interface_z().size or not np.array_equal(ctx.z, ts.interface_z()):
        raise ContractViolation("DtN context nodes differ from the interface points")


def make_context(spec, ts):
    return DtNContext(spec, ts.interface_z())


def _pointwise_residuals(spec, ctx, h, slices, x, z):
    """Per-set residual pairs from a (5, 2, P) jet (array or node)."""
    out = {}
    sl = slices["interior"]
    block = h[:, :, sl]
    out["interior"] = pde_residual_parts(
        spec, [block[c, 0] for c in range(5)], [block[c, 1] for c in range(5)],
        x[sl], z[sl],
    )
    for which in BOUNDARIES:
        sl = slices[which]
        # walls only need the value channel, interfaces the value and dx
        block = h[:2, :, sl]
        out[which] = boundary_residual_parts(
            spec, ctx, which, [block[c, 0] for c in range(2)],
            [block[c, 1] for c in range(2)], x[sl], z[sl],
        )
    return out


def _terms(sq_res, sa, mask):
    lam = {"interior": sa.interior, **sa.boundary}
    return {key: np.sum(mask(lam[key]) * sq) / sq.size for key, sq in sq_res.items()}


def _report(terms):
    residual_term = float(terms["interior"])
    boundary_terms = tuple(float(terms[w]) for w in BOUNDARIES)
    return LossReport(residual_term + sum(boundary_terms), residual_term, boundary_terms)


def total_loss(params, sa, ts, spec, ctx, mask=square_mask):
    """Evaluate the self-adaptive loss without gradients."""
    _check_shapes(sa, ts)
    _check_ctx(ctx, ts)
    x, z, slices = ts.stacked()
    h = jet_forward_channels(params, x, z)
    res = _pointwise_residuals(spec, ctx, h, slices, x, z)
    sq = {key: r[0] ** 2 + r[1] ** 2 for key, r in res.items()}
    return _report(_terms(sq, sa, mask))


def pointwise_squared_residuals(params, ts, spec, ctx):
    """``|residual|^2`` at every collocation point, keyed by point set."""
    x, z, slices = ts.stacked()
    h = jet_forward_channels(params, x, z)
    res = _pointwise_residuals(spec, ctx, h, slices, x, z)
    return {key: r[0] ** 2 + r[1] ** 2 for key, r in res.items()}


def taped_loss(tp, sa, ts, spec, ctx, mask=square_mask, record=None):
    """Scalar loss node on ``tp``'s tape.

    If ``record`` is a dict it receives the squared residual arrays per set,
    which is all the weight gradient needs.
    """
    x, z, slices = ts.stacked()
    h = taped_jet_forward(tp, x, z)
    res = _pointwise_residuals(spec, ctx, h, slices, x, z)
    lam = {"interior": sa.interior, **sa.boundary}
    total = None
    for key in ("interior",) + BOUNDARIES:
        r_re, r_im = res[key]
        sq = r_re * r_re + r_im * r_im
        if record is not None:
            record[key] = sq.value
        term = tp.tape.apply("sum", sq * (mask(lam[key]) / lam[key].size))
        total = term if total is None else total + term
    return total


def loss_and_grads(params, sa, ts, spec, ctx, mask=square_mask,
                   mask_derivative=square_mask_derivative):
    """Loss report, parameter gradient and weight gradient in one pass."""
    _check_shapes(sa, ts)
    _check_ctx(ctx, ts)
    tape = Tape()
    tp = TapedParams(tape, params)
    sq = {}
    out = taped_loss(tp, sa, ts, spec, ctx, mask=mask, record=sq)
    adj = tape.backward(out)
    arrays = []
    for leaf in tp.leaves():
        g = adj[leaf.index]
        arrays.append(np.zeros_like(leaf.value) if g is None else np.asarray(g))
    grad = ParamGradient(params.layer_sizes, arrays[0:-1:2], arrays[1:-1:2], arrays[-1])
    lam = {"interior": sa.interior, **sa.boundary}
    dl = {key: mask_derivative(lam[key]) * s / s.size for key, s in sq.items()}
    sa_grad = SelfAdaptiveWeights(dl["interior"], {w: dl[w] for w in BOUNDARIES})
    return _report(_terms(sq, sa, mask)), grad, sa_grad


def relative_error(field, ref):
    """Relative Euclidean errors of the real and the imaginary part."""
    field = np.asarray(field, dtype=complex).ravel()
    ref = np.asarray(ref, dtype=complex).ravel()
    if field.shape != ref.shape:
        raise ContractViolation(f"length mismatch: {field.shape} vs {ref.shape}")
    norm_re = np.linalg.norm(ref.real)
    norm_im = np.linalg.norm(ref.imag)
    if norm_re == 0 or norm_im == 0:
        raise ContractViolation("reference has a zero real or imaginary part")
    return (float(np.linalg.norm(field.real - ref.real) / norm_re),
            float(np.linalg.norm(field.imag - ref.imag) / norm_im))
