"""Saddle-point training: Adam descent on the network, Adam ascent on the weights."""

from dataclasses import asdict, dataclass, field
import logging

import numpy as np

from taperpinn.errors import ContractViolation, NumericFailure
from taperpinn.lossbuilder import (
    DEFAULT_SA_RANGES,
    build_training_set,
    evaluation_grid,
    init_sa_weights,
    loss_and_grads,
    make_context,
    relative_error,
    total_loss,
)
from taperpinn.network import NetworkParams, forward_batch, init_params
from taperpinn.numcore import DTYPE, SeededRng
from taperpinn.physics import TAPER, ProblemSpec, reference_solution, taper, incoming_wave

log = logging.getLogger(__name__)

TRACE_COLUMNS = (
    "step", "lr", "loss", "loss_r", "loss_bottom", "loss_top", "loss_minus",
    "loss_plus", "eps_R", "eps_I", "eps_R_train", "eps_I_train",
)


@dataclass
class TrainConfig:
    k: float = 8.0
    formulation: str = TAPER
    b: float = 2.0
    n_modes: int = 1
    hidden_layers: int = 10
    neurons: int = 45
    alpha0: float = 2.0
    grid_x: int = 120
    grid_z: int = 10
    n_b: int = 80
    eval_grid_x: int = 240
    eval_grid_z: int = 20
    total_steps: int = 50000
    lr0: float = 5e-3
    decay_rate: float = 0.95
    decay_steps: int = 1000
    staircase: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    eval_every: int = 100
    seed: int = 11
    sa_ranges: dict = field(default_factory=lambda: dict(DEFAULT_SA_RANGES))

    def __post_init__(self):
        if self.total_steps < 0:
            raise ContractViolation("total_steps must be >= 0")
        if self.eval_every < 1:
            raise ContractViolation("eval_every must be >= 1")
        if self.hidden_layers < 1 or self.neurons < 1:
            raise ContractViolation("network needs at least one hidden neuron")
        if not 0 < self.decay_rate <= 1 or self.decay_steps < 1:
            raise ContractViolation("decay_rate must be in (0, 1], decay_steps >= 1")
        self.sa_ranges = {**DEFAULT_SA_RANGES, **dict(self.sa_ranges)}

    @property
    def layer_sizes(self):
        return (2,) + (self.neurons,) * self.hidden_layers + (2,)

    def problem(self):
        return ProblemSpec(self.k, self.b, self.formulation, self.n_modes)

    def learning_rate(self, step):
        exponent = step / self.decay_steps
        if self.staircase:
            exponent = np.floor(exponent)
        return self.lr0 * self.decay_rate**exponent

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(np.zeros(n, dtype=DTYPE), np.zeros(n, dtype=DTYPE), 0,
                   beta1, beta2, eps)


def adam_step(state, params_vec, grad_vec, lr):
    """One bias-corrected Adam update; mutates ``state`` and returns new params."""
    grad_vec = np.asarray(grad_vec, dtype=DTYPE)
    if grad_vec.shape != state.m.shape or np.shape(params_vec) != state.m.shape:
        raise ContractViolation("Adam state, parameters and gradient differ in shape")
    if not np.all(np.isfinite(grad_vec)):
        raise NumericFailure("non-finite gradient", step=state.t)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad_vec
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad_vec**2
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return params_vec - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def evaluate_field(params, spec, x, z):
    """Reconstructed total field at 1-D point arrays.

    The taper formulation adds the tapered incoming wave back to the network
    output; the classical one returns the network output itself.
    """
    x = np.asarray(x, dtype=DTYPE).ravel()
    z = np.asarray(z, dtype=DTYPE).ravel()
    out = forward_batch(params, x, z)
    field = out[0] + 1j * out[1]
    if spec.formulation == TAPER:
        chi, _, _ = taper(spec, x)
        field = field + chi * incoming_wave(spec, x, z).value
    return field


class TrainTrace:
    """Evaluation records in step order; optionally mirrored to a CSV sink."""

    columns = TRACE_COLUMNS

    def __init__(self, sink=None):
        self.records = []
        self.sink = sink
        if sink is not None:
            sink.write(",".join(self.columns) + "\n")
            sink.flush()

    def append(self, record):
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise ContractViolation("trace steps must increase")
        self.records.append(record)
        if self.sink is not None:
            self.sink.write(format_row(record, self.columns) + "\n")
            self.sink.flush()

    def column(self, name):
        return np.array([r[name] for r in self.records])

    @property
    def last(self):
        return self.records[-1] if self.records else None

    def __len__(self):
        return len(self.records)


def format_row(record, columns):
    # repr gives the shortest string that round-trips the float exactly
    return ",".join(repr(record[c]) if isinstance(record[c], float) else str(record[c])
                    for c in columns)


class TrainingAborted(NumericFailure):
    def __init__(self, cause, step, params, sa, trace):
        super().__init__(str(cause), step=step)
        self.params = params
        self.sa = sa
        self.trace = trace


def train(cfg, sink=None, progress=None):
    """Run the saddle-point optimisation described by ``cfg``.

    Returns ``(params, sa_weights, trace)``. ``sink`` is an optional text
    stream receiving one CSV line per evaluation record. On a non-finite
    value a :class:`TrainingAborted` carrying the partial state is raised.
    """
    spec = cfg.problem()
    rng = SeededRng(cfg.seed)
    params = init_params(rng, cfg.layer_sizes, cfg.alpha0)
    ts = build_training_set(spec, cfg.grid_x, cfg.grid_z, cfg.n_b)
    sa = init_sa_weights(rng, ts, cfg.sa_ranges)
    ctx = make_context(spec, ts)

    ex, ez = evaluation_grid(spec, cfg.eval_grid_x, cfg.eval_grid_z)
    ref_eval = reference_solution(spec, ex, ez)
    ref_train = reference_solution(spec, ts.interior_x, ts.interior_z)

    theta = params.flatten()
    lam = sa.flatten()
    opt_theta = AdamState.zeros(theta.size, cfg.beta1, cfg.beta2, cfg.eps_adam)
    opt_lam = AdamState.zeros(lam.size, cfg.beta1, cfg.beta2, cfg.eps_adam)
    trace = TrainTrace(sink)

    def record(step, report):
        eps_r, eps_i = relative_error(evaluate_field(params, spec, ex, ez), ref_eval)
        tr_r, tr_i = relative_error(
            evaluate_field(params, spec, ts.interior_x, ts.interior_z), ref_train)
        rec = {"step": step, "lr": float(cfg.learning_rate(step))}
        rec.update({key: float(v) for key, v in report.as_dict().items()})
        rec.update(eps_R=eps_r, eps_I=eps_i, eps_R_train=tr_r, eps_I_train=tr_i)
        trace.append(rec)
        if progress is not None:
            progress(rec)

    step = 0
    try:
        for step in range(cfg.total_steps):
            report, g_theta, g_lam = loss_and_grads(params, sa, ts, spec, ctx)
            if step % cfg.eval_every == 0:
                record(step, report)
            lr = cfg.learning_rate(step)
            theta = adam_step(opt_theta, theta, g_theta.flatten(), lr)
            # ascent on the weights is descent on the negated gradient
            lam = adam_step(opt_lam, lam, -g_lam.flatten(), lr)
            params = NetworkParams.unflatten(cfg.layer_sizes, theta)
            sa = sa.unflatten(lam)
        step = cfg.total_steps
        if step % cfg.eval_every == 0:
            record(step, total_loss(params, sa, ts, spec, ctx))
    except NumericFailure as exc:
        log.error("training aborted at step %d: %s", step, exc)
        raise TrainingAborted(exc, step, params, sa, trace) from exc
    return params, sa, trace
