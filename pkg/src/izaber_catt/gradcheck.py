"""Central finite-difference verification of the autodiff tape."""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from izaber.log import log

from .errors import ContractError
from .tensor import Graph, Parameter, Tensor, backward, zero_grad

Program = Callable[[Graph], Tensor]
GradHook = Callable[[Parameter, np.ndarray], np.ndarray]

REL_FLOOR = 1e-8


@dataclass
class GradcheckEntry:
    parameter: str
    index: Tuple[int, ...]
    autodiff: float
    numeric: float
    rel_error: float


@dataclass
class GradcheckReport:
    tol: float
    checked: int = 0
    max_rel_error: float = 0.0
    max_abs_error: float = 0.0
    failures: List[GradcheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        return "{} entries checked, max relative error {:.3e}, {} above tol {:g}: {}".format(
            self.checked, self.max_rel_error, len(self.failures), self.tol,
            "PASS" if self.passed else "FAIL")


def _evaluate(f: Program) -> float:
    loss = f(Graph())
    if loss.data.size != 1:
        raise ContractError("gradcheck program must return a scalar")
    return float(loss.data.reshape(()))


def finite_diff_gradcheck(f: Program, params: Sequence[Parameter], h: float = 1e-5, tol: float = 1e-5,
                          atol: float = 0.0, corrupt: Optional[GradHook] = None) -> GradcheckReport:
    """Compare autodiff gradients of ``f`` with ``(f(t+h) - f(t-h)) / 2h``.

    Relative error is ``|ad - fd| / max(|ad|, |fd|, 1e-8)`` and an entry is
    flagged when it exceeds ``tol``. A positive ``atol`` additionally exempts
    entries whose absolute error is at most ``atol``, for programs with
    gradients that vanish up to roundoff.

    ``corrupt`` rewrites the autodiff gradient before comparison. It exists
    for negative-control tests.
    """
    if h <= 0:
        raise ContractError("gradcheck step must be positive")
    params = list({id(p): p for p in params}.values())

    zero_grad(params)
    backward(f(Graph()))
    analytic = [p.grad.copy() for p in params]
    if corrupt is not None:
        analytic = [corrupt(p, g) for p, g in zip(params, analytic)]

    report = GradcheckReport(tol=tol)
    for p, grad in zip(params, analytic):
        for index in np.ndindex(*p.shape):
            original = p.value[index]
            p.value[index] = original + h
            up = _evaluate(f)
            p.value[index] = original - h
            down = _evaluate(f)
            p.value[index] = original
            numeric = (up - down) / (2.0 * h)
            ad = float(grad[index])
            abs_error = abs(ad - numeric)
            rel_error = abs_error / max(abs(ad), abs(numeric), REL_FLOOR)
            report.checked += 1
            report.max_rel_error = max(report.max_rel_error, rel_error)
            report.max_abs_error = max(report.max_abs_error, abs_error)
            if rel_error > tol and abs_error > atol:
                report.failures.append(GradcheckEntry(p.name, tuple(int(i) for i in index), ad, numeric, rel_error))
    zero_grad(params)

    log.debug("gradcheck: {}".format(report.summary()))
    return report
