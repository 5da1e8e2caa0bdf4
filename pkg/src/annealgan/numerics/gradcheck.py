"""Central-difference verification of network gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import NetParams, backward, forward, predict
from .tape import Tape


@dataclass
class GradCheckReport:
    n_checked: int = 0
    max_rel_error: float = 0.0
    max_param_error: float = 0.0
    max_input_error: float = 0.0
    failures: list = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return not self.failures


def rel_error(a, b, floor: float = 1e-3) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(net: NetParams, x, tolerance: float = 1e-4, step: float = 1e-5, floor: float = 1e-3) -> GradCheckReport:
    """Compare analytic parameter and input gradients of ``sum(net(x))``
    against central differences.

    Relative errors use ``max(|analytic|, |numeric|, floor)`` as the scale, so
    gradients far below ``floor`` are judged on absolute error.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    x = np.asarray(x, dtype=np.float64)
    report = GradCheckReport(tolerance=tolerance)
    if x.size == 0:
        return report

    tape = Tape()
    y = forward(net, x, tape)
    g = backward(tape, np.ones_like(y.value))
    analytic_params = g.flat(net)
    analytic_input = g.input

    def f_params(flat):
        return predict(net.with_flat(flat), x).sum()

    numeric_params = np.empty_like(net.flat)
    for i in range(net.flat.size):
        up, down = net.flat.copy(), net.flat.copy()
        up[i] += step
        down[i] -= step
        numeric_params[i] = (f_params(up) - f_params(down)) / (2 * step)

    numeric_input = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += step
        down[idx] -= step
        numeric_input[idx] = (predict(net, up).sum() - predict(net, down).sum()) / (2 * step)

    pe = rel_error(analytic_params, numeric_params, floor)
    ie = rel_error(analytic_input, numeric_input, floor)
    report.n_checked = pe.size + ie.size
    report.max_param_error = float(pe.max(initial=0.0))
    report.max_input_error = float(ie.max(initial=0.0))
    report.max_rel_error = max(report.max_param_error, report.max_input_error)
    for i in np.flatnonzero(pe > tolerance):
        report.failures.append(("param", int(i), net.layer_of(int(i)), float(pe[i])))
    for idx in zip(*np.nonzero(ie > tolerance)):
        report.failures.append(("input", tuple(int(k) for k in idx), 0, float(ie[idx])))
    return report
