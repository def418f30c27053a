import numpy as np
import pytest

from taperpinn.errors import ContractViolation
from taperpinn.lossbuilder import (
    DEFAULT_SA_RANGES,
    build_training_set,
    init_sa_weights,
    loss_and_grads,
    make_context,
    pointwise_squared_residuals,
    relative_error,
    total_loss,
)
from taperpinn.network import init_params
from taperpinn.numcore import SeededRng
from taperpinn.physics import BOUNDARIES, ProblemSpec, incoming_wave, tapered_incoming
from taperpinn.physics import boundary_residual, pde_residual

SPEC = ProblemSpec(8.0)


@pytest.fixture
def setup():
    spec = ProblemSpec(8.0, formulation="taper")
    ts = build_training_set(spec, 6, 3, 5)
    ctx = make_context(spec, ts)
    rng = SeededRng(11)
    params = init_params(rng, (2, 6, 6, 2))
    sa = init_sa_weights(rng, ts)
    return spec, ts, ctx, params, sa


def test_default_grid():
    ts = build_training_set(SPEC, 120, 10, 80)
    assert ts.n_interior == 1200
    assert np.all((ts.interior_x > -2) & (ts.interior_x < 2))
    assert np.all((ts.interior_z > 0) & (ts.interior_z < 1))
    assert all(n == 80 for n in ts.n_boundary.values())
    x, z = ts.boundary["minus"]
    assert np.all(x == -2.0) and z.min() > 0 and z.max() < 1


def test_smallest_grid_is_cell_centres():
    ts = build_training_set(SPEC, 2, 2, 2)
    pts = sorted(zip(ts.interior_x, ts.interior_z))
    assert pts == [(-1.0, 0.25), (-1.0, 0.75), (1.0, 0.25), (1.0, 0.75)]


def test_grid_too_small():
    with pytest.raises(ContractViolation):
        build_training_set(SPEC, 1, 10, 80)


def test_sa_weight_ranges_and_determinism():
    ts = build_training_set(SPEC, 120, 10, 80)
    a = init_sa_weights(SeededRng(11), ts)
    b = init_sa_weights(SeededRng(11), ts)
    assert a.flatten().tobytes() == b.flatten().tobytes()
    assert a.interior.min() >= 0 and a.interior.max() < 0.5
    for which in BOUNDARIES:
        w = a.boundary[which]
        assert w.min() >= 0 and w.max() < DEFAULT_SA_RANGES[which]
    assert a.boundary["bottom"].max() > 10  # drawn from (0, 30), not (0, 10)


def test_zero_weights_zero_loss(setup):
    spec, ts, ctx, params, sa = setup
    rep = total_loss(params, sa.scaled(0.0), ts, spec, ctx)
    assert rep.total == 0.0


def test_report_sums(setup):
    spec, ts, ctx, params, sa = setup
    rep = total_loss(params, sa, ts, spec, ctx)
    assert abs(rep.total - rep.residual_term - sum(rep.boundary_terms)) <= 1e-12 * rep.total
    assert rep.total > 0


def test_doubling_weights_quadruples_terms(setup):
    spec, ts, ctx, params, sa = setup
    a = total_loss(params, sa, ts, spec, ctx)
    b = total_loss(params, sa.scaled(2.0), ts, spec, ctx)
    np.testing.assert_allclose([b.residual_term, *b.boundary_terms],
                               [4 * a.residual_term, *(4 * t for t in a.boundary_terms)],
                               rtol=1e-14)


def test_mask_monotone(setup):
    spec, ts, ctx, params, sa = setup
    base = total_loss(params, sa, ts, spec, ctx)
    bumped = sa.unflatten(sa.flatten())
    bumped.boundary["top"][2] += 0.5
    assert total_loss(params, bumped, ts, spec, ctx).boundary_terms[1] >= base.boundary_terms[1]


def test_shape_mismatch(setup):
    spec, ts, ctx, params, sa = setup
    other = build_training_set(spec, 4, 3, 5)
    with pytest.raises(ContractViolation):
        total_loss(params, sa, other, spec, ctx)


def test_loss_of_exact_fields_vanishes():
    # assembled loss with the exact fields substituted for the network
    for formulation in ("classical", "taper"):
        spec = ProblemSpec(13.0, formulation=formulation)
        ts = build_training_set(spec, 30, 10, 20)
        ctx = make_context(spec, ts)
        sa = init_sa_weights(SeededRng(0), ts)

        def field(x, z):
            jet = incoming_wave(spec, x, z)
            return jet - tapered_incoming(spec, x, z) if formulation == "taper" else jet

        total = np.sum(sa.interior**2 * np.abs(pde_residual(
            spec, field(ts.interior_x, ts.interior_z), ts.interior_x, ts.interior_z)) ** 2
        ) / ts.n_interior
        for which in BOUNDARIES:
            x, z = ts.boundary[which]
            r = boundary_residual(spec, ctx, which, field(x, z), x, z)
            total += np.sum(sa.boundary[which] ** 2 * np.abs(r) ** 2) / x.size
        assert total < 1e-16


def test_weight_gradient_matches_fd(setup):
    spec, ts, ctx, params, sa = setup
    _, _, g = loss_and_grads(params, sa, ts, spec, ctx)
    vec = sa.flatten()
    gvec = g.flatten()
    h = 1e-6
    for i in (0, 5, ts.n_interior + 1, vec.size - 1):
        plus, minus = vec.copy(), vec.copy()
        plus[i] += h
        minus[i] -= h
        fd = (total_loss(params, sa.unflatten(plus), ts, spec, ctx).total
              - total_loss(params, sa.unflatten(minus), ts, spec, ctx).total) / (2 * h)
        assert abs(fd - gvec[i]) <= 1e-6 * abs(gvec[i])


def test_loss_and_grads_report_matches_total_loss(setup):
    spec, ts, ctx, params, sa = setup
    rep, _, _ = loss_and_grads(params, sa, ts, spec, ctx)
    ref = total_loss(params, sa, ts, spec, ctx)
    assert abs(rep.total - ref.total) <= 1e-12 * ref.total


def test_pointwise_residuals_nonnegative(setup):
    spec, ts, ctx, params, _ = setup
    sq = pointwise_squared_residuals(params, ts, spec, ctx)
    assert set(sq) == {"interior", *BOUNDARIES}
    assert all(np.all(v >= 0) for v in sq.values())


def test_relative_error_cases():
    g = np.random.default_rng(0)
    ref = g.normal(size=50) + 1j * g.normal(size=50)
    assert relative_error(ref, ref) == (0.0, 0.0)
    assert relative_error(np.zeros(50), ref) == (1.0, 1.0)
    er, ei = relative_error(1.1 * ref, ref)
    assert abs(er - 0.1) < 1e-12 and abs(ei - 0.1) < 1e-12


def test_relative_error_contracts():
    with pytest.raises(ContractViolation):
        relative_error(np.ones(3), np.ones(3))  # zero imaginary reference
    with pytest.raises(ContractViolation):
        relative_error(np.ones(3), np.ones(4) * (1 + 1j))
