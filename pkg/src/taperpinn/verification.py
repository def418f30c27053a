"""Oracle checks run by ``taperpinn verify``."""

from dataclasses import dataclass

import numpy as np

from taperpinn.errors import ContractViolation
from taperpinn.gradengine import fd_check
from taperpinn.lossbuilder import build_training_set, init_sa_weights, make_context, taped_loss
from taperpinn.network import init_params
from taperpinn.numcore import SeededRng
from taperpinn.physics import (
    BOUNDARIES,
    CLASSICAL,
    TAPER,
    DtNContext,
    ProblemSpec,
    boundary_points,
    boundary_residual,
    dtn_apply,
    incoming_wave,
    mode_shape,
    pde_residual,
    taper,
    tapered_incoming,
)

EQUIVALENCE_KS = (8.0, 13.0, 16.0)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float = float("nan")
    tolerance: float = float("nan")
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        text = f"[{status}] {self.name}: {self.value:.3e} (tol {self.tolerance:.1e})"
        return text + (f" -- {self.detail}" if self.detail else "")


def gradient_check(k=8.0, formulation=TAPER, n_probes=20, step=1e-6, tol=1e-4):
    """FD check of the full loss on a 2x8 network, 16 interior + 4x4 boundary points."""
    spec = ProblemSpec(k, formulation=formulation)
    ts = build_training_set(spec, 4, 4, 4)
    ctx = make_context(spec, ts)
    rng = SeededRng(11)
    params = init_params(rng, (2, 8, 8, 2))
    sa = init_sa_weights(rng, ts)
    err = fd_check(params, lambda tp: taped_loss(tp, sa, ts, spec, ctx), n_probes, step)
    return CheckResult(f"gradient fd_check ({formulation}, k={k:g})", err < tol, err, tol)


def _exact_scattered(spec, x, z):
    return incoming_wave(spec, x, z) - tapered_incoming(spec, x, z)


def equivalence_check(k, n_points=200, tol=1e-9, seed=0, n_b=80):
    """Classical residuals of u_inc and taper residuals of u_inc - chi u_inc.

    Half of the points are interior, the rest spread over the four boundary
    pieces; interface points use the DtN nodes so the operator sees full traces.
    """
    g = np.random.default_rng(seed)
    worst = 0.0
    for formulation in (CLASSICAL, TAPER):
        spec = ProblemSpec(k, formulation=formulation)
        field = incoming_wave if formulation == CLASSICAL else _exact_scattered
        n_int = n_points // 2
        x = g.uniform(-spec.b, spec.b, n_int)
        z = g.uniform(0.0, 1.0, n_int)
        worst = max(worst, np.max(np.abs(pde_residual(spec, field(spec, x, z), x, z))))
        per_side = (n_points - n_int) // 4
        xz = boundary_points(spec, "minus", n_b)
        ctx = DtNContext(spec, xz[1])
        for which in BOUNDARIES:
            bx, bz = boundary_points(spec, which, n_b)
            r = np.abs(boundary_residual(spec, ctx, which, field(spec, bx, bz), bx, bz))
            pick = g.choice(bx.size, size=min(per_side, bx.size), replace=False)
            worst = max(worst, np.max(r[pick]))
    return CheckResult(f"formulation equivalence (k={k:g})", worst < tol, worst, tol)


def dtn_check(k=8.0, n_b=80):
    spec = ProblemSpec(k)
    z = np.linspace(0.0, 1.0, n_b + 2)[1:-1]
    ctx = DtNContext(spec, z)
    tol = 10.0 / n_b**2
    phi1 = mode_shape(1, z)
    eig = np.max(np.abs(dtn_apply(ctx, phi1) - 1j * ctx.lambdas[0] * phi1))
    orth = np.max(np.abs(dtn_apply(ctx, mode_shape(2, z))))
    return [
        CheckResult(f"DtN eigenfunction phi_1 (k={k:g})", eig < tol, eig, tol),
        CheckResult(f"DtN orthogonality phi_2 (k={k:g})", orth < tol, orth, tol),
    ]


def taper_check(b=2.0, tol=1e-12):
    chi, d1, d2 = taper(b, np.array([-b, 0.0]))
    err = max(abs(chi[0] - 1.0), abs(chi[1]), *np.abs(d1), *np.abs(d2))
    return CheckResult(f"taper endpoint identities (b={b:g})", err < tol, err, tol)


def run_all(k=None, formulation=None, b=2.0):
    """Every check; ``k`` restricts the k-dependent checks to one wave number."""
    ks = EQUIVALENCE_KS if k is None else (float(k),)
    results = []
    try:
        for kk in ks:
            ProblemSpec(kk, b=b)
    except ContractViolation as exc:
        return [CheckResult("DtN precondition", False, detail=str(exc))]
    forms = (CLASSICAL, TAPER) if formulation is None else (formulation,)
    for form in forms:
        results.append(gradient_check(ks[0], form))
    for kk in ks:
        results.append(equivalence_check(kk))
    results.extend(dtn_check(ks[0]))
    results.append(taper_check(b))
    return results
