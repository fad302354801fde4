"""
Central finite-difference verification of analytic gradients.
"""
import logging
import math
from typing import Callable, List, Optional, Sequence

import numpy as np

from shared.config import settings
from shared.errors import ContractError, DeterminismError
from shared.models import GradientCheckEntry, GradientCheckReport
from .autograd import backward
from .tensor import ComputationTape, Tensor

logger = logging.getLogger(__name__)

LossBuilder = Callable[[], Tensor]


def _evaluate(builder: LossBuilder) -> float:
    return builder().item()


def finite_difference_check(
    builder: LossBuilder,
    params: Sequence[Tensor],
    step: Optional[float] = None,
    tolerance: Optional[float] = None
) -> GradientCheckReport:
    """
    Compare analytic gradients against central finite differences.

    Parameters are promoted to float64 for the duration of the check and
    restored to their original dtype afterwards.

    Args:
        builder: Deterministic function that builds a scalar loss from the params
        params: Tensors to check (frozen tensors are reported as not trainable)
        step: Finite-difference step (defaults to settings.gradcheck_step)
        tolerance: Maximum accepted relative deviation

    Returns:
        Report with the max |analytic - numeric| / max(|numeric|, 1e-8) per tensor

    Raises:
        ContractError: non-positive step or a non-finite loss
        DeterminismError: the builder is not reproducible
    """
    step = settings.gradcheck_step if step is None else step
    tolerance = settings.gradcheck_tolerance if tolerance is None else tolerance
    if step <= 0:
        raise ContractError(f"finite-difference step must be positive, got {step}")

    original_dtypes = [p.data.dtype for p in params]
    for p in params:
        p.data = p.data.astype(np.float64)
        p.grad = None

    try:
        first, second = _evaluate(builder), _evaluate(builder)
        if not (math.isfinite(first) and math.isfinite(second)):
            raise ContractError(f"builder returned a non-finite loss ({first!r}, {second!r})")
        if first != second:
            raise DeterminismError(f"builder returned {first!r} then {second!r} for identical parameters")

        tape = ComputationTape()
        with tape.recording():
            loss = builder()
        for p in params:
            p.zero_grad()
        backward(tape, loss)

        entries: List[GradientCheckEntry] = []
        for index, p in enumerate(params):
            name = p.name or f"param[{index}]"
            if not p.requires_grad:
                entries.append(GradientCheckEntry(name=name, max_relative_deviation=0.0, status="not_trainable"))
                continue

            analytic = p.grad.reshape(-1)
            flat = p.data.reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + step
                plus = _evaluate(builder)
                flat[i] = saved - step
                minus = _evaluate(builder)
                flat[i] = saved
                numeric = (plus - minus) / (2.0 * step)
                deviation = abs(analytic[i] - numeric) / max(abs(numeric), 1e-8)
                worst = max(worst, float(deviation))

            status = "flagged" if worst > tolerance else "ok"
            if status == "flagged":
                logger.warning(f"Gradient mismatch on {name}: max relative deviation {worst:.3e}")
            entries.append(GradientCheckEntry(name=name, max_relative_deviation=worst, status=status))
    finally:
        for p, dtype in zip(params, original_dtypes):
            p.data = p.data.astype(dtype)
            p.grad = None

    report = GradientCheckReport(step=step, tolerance=tolerance, entries=entries)
    logger.info(f"Gradient check over {len(params)} tensors: max deviation {report.max_deviation:.3e}")
    return report
