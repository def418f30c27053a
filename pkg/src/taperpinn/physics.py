"""Junction geometry, incoming wave, taper, DtN operator and residuals.

The junction is the rectangle ``(-b, b) x (0, 1)``. Its four boundary pieces
are named, in loss order::

    "bottom"  z = 0, normal (0, -1)     Dirichlet wall
    "top"     z = 1, normal (0, +1)     Dirichlet wall
    "minus"   x = -b, normal (-1, 0)    inflow interface, DtN condition
    "plus"    x = +b, normal (+1, 0)    outflow interface, DtN condition

Complex quantities are carried as separate real and imaginary parts. The
residual helpers only use ``+``, ``-``, ``*`` and ``@`` with constant arrays,
so they accept plain arrays as well as taped nodes.
"""

from dataclasses import dataclass, field

import numpy as np

from taperpinn.errors import ContractViolation
from taperpinn.network import ComplexJet, RealJet
from taperpinn.numcore import DTYPE

CLASSICAL = "classical"
TAPER = "taper"
FORMULATIONS = (CLASSICAL, TAPER)

BOUNDARIES = ("bottom", "top", "minus", "plus")
NORMALS = {
    "bottom": (0.0, -1.0),
    "top": (0.0, 1.0),
    "minus": (-1.0, 0.0),
    "plus": (1.0, 0.0),
}

# chi(x) = sum c_p (x/b)^p for x < 0, keyed by power p
TAPER_COEFFS = {5: -6.0, 4: -15.0, 3: -10.0}

_RESONANCE_RTOL = 1e-9


@dataclass(frozen=True)
class ProblemSpec:
    k: float
    b: float = 2.0
    formulation: str = TAPER
    n_modes: int = 1

    def __post_init__(self):
        if not self.k > 0:
            raise ContractViolation(f"wave number must be positive, got {self.k}")
        if not self.b > 0:
            raise ContractViolation(f"half-length must be positive, got {self.b}")
        if self.formulation not in FORMULATIONS:
            raise ContractViolation(
                f"formulation must be one of {FORMULATIONS}, got {self.formulation!r}"
            )
        if self.n_modes < 1:
            raise ContractViolation(f"n_modes must be >= 1, got {self.n_modes}")
        # the DtN operator is undefined when k hits any cutoff n*pi
        n = round(self.k / np.pi)
        if n >= 1 and abs(self.k**2 - (n * np.pi) ** 2) <= _RESONANCE_RTOL * self.k**2:
            raise ContractViolation(
                f"k = {self.k} is a waveguide cutoff (k^2 = ({n} pi)^2); "
                "the DtN operator is undefined"
            )

    def mu2(self, n):
        return (n * np.pi) ** 2

    def longitudinal_frequency(self, n):
        """lambda_n: real if mode n propagates, positive imaginary otherwise."""
        d = self.k**2 - self.mu2(n)
        return complex(np.sqrt(d)) if d > 0 else 1j * np.sqrt(-d)

    def propagates(self, n):
        return self.k**2 > self.mu2(n)


def mode_shape(n, z):
    return np.sqrt(2.0) * np.sin(n * np.pi * np.asarray(z, dtype=DTYPE))


# -- taper --------------------------------------------------------------------

def taper(spec, x):
    """Taper value and its first two derivatives at ``x``.

    Equals 1 at x = -b and 0 for x >= 0, with matching first and second
    derivatives at both ends of the ramp.
    """
    b = spec.b if isinstance(spec, ProblemSpec) else float(spec)
    x = np.asarray(x, dtype=DTYPE)
    s = x / b
    chi = np.zeros_like(s)
    dchi = np.zeros_like(s)
    d2chi = np.zeros_like(s)
    for p, c in TAPER_COEFFS.items():
        chi = chi + c * s**p
        dchi = dchi + c * p * s ** (p - 1) / b
        d2chi = d2chi + c * p * (p - 1) * s ** (p - 2) / b**2
    left = x < 0
    zero = np.zeros_like(s)
    return (np.where(left, chi, zero), np.where(left, dchi, zero),
            np.where(left, d2chi, zero))


# -- incoming wave and reference ---------------------------------------------

def incoming_wave(spec, x, z):
    """Jet of u_inc = exp(i lambda_1 (x + b)) sin(pi z) (unit-amplitude mode 1)."""
    if not spec.propagates(1):
        raise ContractViolation(
            f"mode 1 is evanescent for k = {spec.k}; no incoming wave exists"
        )
    lam = spec.longitudinal_frequency(1).real
    x = np.asarray(x, dtype=DTYPE)
    z = np.asarray(z, dtype=DTYPE)
    phase = lam * (x + spec.b)
    c, s = np.cos(phase), np.sin(phase)
    # phi_1 / sqrt(2) = sin(pi z)
    sz = np.sin(np.pi * z)
    dsz = np.pi * np.cos(np.pi * z)
    re = RealJet(c * sz, -lam * s * sz, c * dsz, -lam**2 * c * sz, -np.pi**2 * c * sz)
    im = RealJet(s * sz, lam * c * sz, s * dsz, -lam**2 * s * sz, -np.pi**2 * s * sz)
    return ComplexJet(re, im)


def reference_solution(spec, x, z):
    """Exact total field: transmission is total, so it is the incoming wave."""
    return incoming_wave(spec, x, z).value


def tapered_incoming(spec, x, z):
    """Jet of chi(x) * u_inc(x, z)."""
    inc = incoming_wave(spec, x, z)
    chi, dchi, d2chi = taper(spec, x)

    def product(u):
        return RealJet(
            chi * u.v,
            dchi * u.v + chi * u.dx,
            chi * u.dz,
            d2chi * u.v + 2.0 * dchi * u.dx + chi * u.dxx,
            chi * u.dzz,
        )

    return ComplexJet(product(inc.re), product(inc.im))


def taper_source(spec, x, z):
    """Right-hand side of the scattered-field equation, (re, im)."""
    inc = incoming_wave(spec, x, z)
    _, dchi, d2chi = taper(spec, x)
    f_re = -2.0 * inc.re.dx * dchi - inc.re.v * d2chi
    f_im = -2.0 * inc.im.dx * dchi - inc.im.v * d2chi
    return f_re, f_im


# -- DtN operator -------------------------------------------------------------

@dataclass
class DtNContext:
    """Truncated DtN operator sampled on one set of interface nodes.

    The inner product over z in (0, 1) is the composite trapezoid rule on the
    nodes extended by the walls z = 0 and z = 1. Every mode shape vanishes on
    the walls, so the wall samples contribute nothing and need not be known.
    """

    spec: ProblemSpec
    z: np.ndarray
    lambdas: np.ndarray = field(init=False)
    modes: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)
    real_part: np.ndarray = field(init=False)
    imag_part: np.ndarray = field(init=False)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=DTYPE)
        if z.ndim != 1 or z.size < 1:
            raise ContractViolation("DtN nodes must be a non-empty 1-D array")
        if np.any(np.diff(z) <= 0) or z[0] < 0 or z[-1] > 1:
            raise ContractViolation("DtN nodes must be increasing within [0, 1]")
        self.z = z
        ext = np.concatenate([[0.0] if z[0] > 0 else [], z, [1.0] if z[-1] < 1 else []])
        h = np.diff(ext)
        w_ext = np.zeros_like(ext)
        w_ext[:-1] += h / 2
        w_ext[1:] += h / 2
        lo = 1 if z[0] > 0 else 0
        self.weights = w_ext[lo:lo + z.size]
        ns = np.arange(1, self.spec.n_modes + 1)
        self.lambdas = np.array([self.spec.longitudinal_frequency(n) for n in ns])
        self.modes = np.stack([mode_shape(n, z) for n in ns])
        multipliers = 1j * self.lambdas
        # (Lambda w)_i = sum_n c_n phi_n(z_i) sum_j q_j phi_n(z_j) w_j
        proj = self.modes[:, :, None] * (self.modes * self.weights)[:, None, :]
        self.real_part = np.tensordot(multipliers.real, proj, axes=1)
        self.imag_part = np.tensordot(multipliers.imag, proj, axes=1)

    @property
    def n_nodes(self):
        return self.z.size

    @property
    def multipliers(self):
        """i * lambda_n for each retained mode."""
        return 1j * self.lambdas

    @property
    def tolerance(self):
        return 10.0 / self.n_nodes**2

    def inner(self, n, w):
        """Trapezoid approximation of (phi_n, w) over (0, 1)."""
        return np.sum(self.weights * self.modes[n - 1] * w)

    def apply_parts(self, w_re, w_im):
        a, b = self.real_part, self.imag_part
        return a @ w_re - b @ w_im, a @ w_im + b @ w_re


def dtn_apply(ctx, trace):
    trace = np.asarray(trace, dtype=complex)
    if trace.shape != (ctx.n_nodes,):
        raise ContractViolation(
            f"trace has shape {trace.shape}, DtN context has {ctx.n_nodes} nodes"
        )
    re, im = ctx.apply_parts(trace.real, trace.imag)
    return re + 1j * im


# -- boundary samples ---------------------------------------------------------

def boundary_points(spec, which, n_b):
    """Uniform nodes on one boundary piece.

    The walls own the corners: wall nodes include x = +-b, interface nodes
    are strictly inside (0, 1) in z.
    """
    if which in ("bottom", "top"):
        x = np.linspace(-spec.b, spec.b, n_b)
        z = np.full(n_b, 0.0 if which == "bottom" else 1.0)
    elif which in ("minus", "plus"):
        z = np.linspace(0.0, 1.0, n_b + 2)[1:-1]
        x = np.full(n_b, -spec.b if which == "minus" else spec.b)
    else:
        raise ContractViolation(f"unknown boundary {which!r}")
    return x, z


# -- residuals ----------------------------------------------------------------

def pde_residual_parts(spec, re, im, x, z):
    """Interior residual from per-channel sequences ``re``/``im``.

    ``re[i]`` is channel i (v, dx, dz, dxx, dzz) of the real part.
    """
    k2 = spec.k**2
    r_re = re[3] + re[4] + k2 * re[0]
    r_im = im[3] + im[4] + k2 * im[0]
    if spec.formulation == TAPER:
        f_re, f_im = taper_source(spec, x, z)
        r_re = r_re - f_re
        r_im = r_im - f_im
    return r_re, r_im


def boundary_residual_parts(spec, ctx, which, re, im, x, z):
    """Residual of the boundary condition on ``which``; see module docstring."""
    if which in ("bottom", "top"):
        if spec.formulation == TAPER:
            chi, _, _ = taper(spec, x)
            inc = incoming_wave(spec, x, z)
            return re[0] + chi * inc.re.v, im[0] + chi * inc.im.v
        return re[0], im[0]
    if which not in ("minus", "plus"):
        raise ContractViolation(f"unknown boundary {which!r}")
    if ctx is None:
        raise ContractViolation(f"boundary {which!r} needs a DtN context")
    sign = -1.0 if which == "minus" else 1.0
    lam_re, lam_im = ctx.apply_parts(re[0], im[0])
    r_re = sign * re[1] - lam_re
    r_im = sign * im[1] - lam_im
    if which == "minus" and spec.formulation == CLASSICAL:
        inc = incoming_wave(spec, x, z)
        g_re, g_im = ctx.apply_parts(inc.re.v, inc.im.v)
        r_re = r_re + 2.0 * g_re
        r_im = r_im + 2.0 * g_im
    return r_re, r_im


def _channels(jet):
    return [jet.v, jet.dx, jet.dz, jet.dxx, jet.dzz]


def pde_residual(spec, jet, x, z):
    """Complex interior residual of a field jet at (x, z)."""
    r_re, r_im = pde_residual_parts(spec, _channels(jet.re), _channels(jet.im), x, z)
    return r_re + 1j * r_im


def boundary_residual(spec, ctx, which, jet, x, z):
    """Complex residual of the boundary condition on ``which``.

    For the interfaces the jet must be sampled at ``ctx``'s nodes, since the
    DtN operator acts on the whole trace.
    """
    r_re, r_im = boundary_residual_parts(
        spec, ctx, which, _channels(jet.re), _channels(jet.im), x, z
    )
    return r_re + 1j * r_im
