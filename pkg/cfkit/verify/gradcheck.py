"""Central-difference check of the hand-written backward passes."""

import logging
from fnmatch import fnmatchcase
from typing import Dict, List, Optional, Tuple

import numpy as np

from cfkit.blocks.base import ParamStore, Tape
from cfkit.blocks.model import ContextFormer, ForwardResult
from cfkit.exceptions import NumericError
from cfkit.types import CoordResult, GradCheckCase, GradCheckReport

logger = logging.getLogger(__name__)

# each kink retry shrinks the step by this factor
STEP_SHRINK = 8


def select_parameters(names: List[str], include: List[str], exclude: List[str]) -> Tuple[List[str], List[str]]:
    """Split ``names`` into (sampled, excluded) with shell-style patterns."""
    chosen, dropped = [], []
    for name in names:
        wanted = any(fnmatchcase(name, p) for p in include)
        if wanted and not any(fnmatchcase(name, p) for p in exclude):
            chosen.append(name)
        else:
            dropped.append(name)
    return chosen, dropped


def resume_point(model: ContextFormer, name: str) -> Optional[str]:
    """First part of the forward pass that ``name`` affects; None means the whole pass."""
    head, _, rest = name.partition(".")
    if head == "stem" or model.tpem is None:
        return None
    if head == "tpem":
        return "tpem." + rest.split(".")[0]
    return head


class _Replay:
    """Forward passes that restart from the cached activations of an unperturbed pass."""

    def __init__(self, model: ContextFormer, params: ParamStore, x: np.ndarray, base: ForwardResult, regions):
        self.model = model
        self.params = params
        self.x = x
        self.base = base
        self._regions: Dict[Optional[str], np.ndarray] = {None: regions}

    def output(self, start: Optional[str]) -> Tuple[np.ndarray, np.ndarray]:
        """Model output and the ReLU6 region codes of the recomputed part."""
        tape = Tape()
        if start is None:
            result = self.model.run(self.x, self.params, tape)
        else:
            result = self.model.resume(self.base, start, self.params, tape)
        return result.output, tape.clamp_regions()

    def regions(self, start: Optional[str]) -> np.ndarray:
        if start not in self._regions:
            self._regions[start] = self.output(start)[1]
        return self._regions[start]


def _coordinates(size: int, rng: np.random.Generator) -> np.ndarray:
    """Index 0 first, then the rest in seeded random order."""
    if size <= 1:
        return np.arange(size)
    return np.concatenate([[0], 1 + rng.permutation(size - 1)])


def gradcheck(
    case: GradCheckCase,
    model: Optional[ContextFormer] = None,
    params: Optional[ParamStore] = None,
    x: Optional[np.ndarray] = None,
) -> GradCheckReport:
    """
    Compare analytic parameter gradients against (L(θ+h) - L(θ-h)) / 2h.

    The loss is the sum of the model output in float64. Each selected tensor
    gets ``min(case.max_coords, numel)`` checked coordinates. A coordinate
    whose perturbation moves any ReLU6 input across 0 or 6 is retried with a
    step ``STEP_SHRINK`` times smaller, up to ``case.kink_retries`` times, and
    otherwise counted in ``skipped_kinks`` and replaced by the next candidate.
    A tensor left short of its target is listed in ``undersampled`` and fails
    the check.

    A coordinate passes when its relative error is below ``case.tolerance``
    or its absolute error is within the roundoff floor ``case.atol``. The
    second rule covers gradients that are structurally zero, such as a key
    bias under softmax.

    Args:
        case: What to check and how
        model: Prebuilt model; built from ``case.config`` when omitted
        params: Parameters; Kaiming-initialized from ``case.seed`` when omitted
        x: NCHW input; standard normal from ``case.seed`` when omitted

    Returns:
        Report with the worst coordinate and per-tensor coverage
    """
    if model is None:
        model = ContextFormer(case.config)
    params = model.init_params(case.seed, np.float64) if params is None else params.astype(np.float64)
    if x is None:
        c = model.config
        x = np.random.default_rng(case.seed).standard_normal((1, c.input_channels, c.input_h, c.input_w))
    x = x.astype(np.float64)

    chosen, dropped = select_parameters(params.names(), case.param_filter, case.exclude)
    report = GradCheckReport(passed=False, seed=case.seed, excluded=dropped)

    try:
        tape = Tape()
        base = model.run(x, params, tape)
        if not np.all(np.isfinite(base.output)):
            raise NumericError("loss", int(np.count_nonzero(~np.isfinite(base.output))))
        grads: Dict[str, np.ndarray] = model.backward(np.ones_like(base.output), params, tape)
    except NumericError as e:
        report.numeric_error = e.message
        logger.warning("gradcheck aborted: %s", e.message)
        return report
    replay = _Replay(model, params, x, base, tape.clamp_regions())

    worst: Optional[CoordResult] = None
    failures = 0
    for i, name in enumerate(chosen):
        value = params[name]
        analytic_all = grads[name]
        start = resume_point(model, name)
        target = min(case.max_coords, value.size)
        rng = np.random.default_rng([case.seed, i])
        checked = 0
        for idx in _coordinates(value.size, rng):
            if checked >= target:
                break
            idx = int(idx)
            original = value.flat[idx]
            step = case.h
            numeric: Optional[float] = None
            for _ in range(case.kink_retries + 1):
                try:
                    value.flat[idx] = original + step
                    plus, regions_plus = replay.output(start)
                    value.flat[idx] = original - step
                    minus, regions_minus = replay.output(start)
                except NumericError as e:
                    report.numeric_error = f"{name}[{idx}]: {e.message}"
                    return report
                finally:
                    value.flat[idx] = original
                if not (np.all(np.isfinite(plus)) and np.all(np.isfinite(minus))):
                    report.numeric_error = f"{name}[{idx}]: non-finite loss"
                    return report
                base_regions = replay.regions(start)
                if np.array_equal(regions_plus, base_regions) and np.array_equal(regions_minus, base_regions):
                    # difference first, then sum: less cancellation than L(+) - L(-)
                    numeric = float(np.sum(plus - minus, dtype=np.float64)) / (2 * step)
                    break
                step /= STEP_SHRINK
            if numeric is None:
                report.skipped_kinks += 1
                continue

            analytic = float(analytic_all.flat[idx])
            abs_error = abs(analytic - numeric)
            rel = abs_error / max(abs(analytic), abs(numeric), case.denominator_floor)
            ok = rel < case.tolerance or abs_error <= case.atol * (case.h / step)
            failures += not ok
            checked += 1
            coord = CoordResult(
                name=name,
                index=[int(v) for v in np.unravel_index(idx, value.shape)],
                analytic=analytic,
                numeric=numeric,
                rel_error=rel,
                abs_error=abs_error,
                step=step,
                passed=ok,
            )
            # failing coordinates outrank passing ones
            if worst is None or (not ok, rel) > (not worst.passed, worst.rel_error):
                worst = coord
        report.coverage[name] = checked
        report.checked += checked
        if checked < target:
            report.undersampled[name] = checked
            logger.warning("gradcheck: %s got %d of %d usable coordinates", name, checked, target)

    report.worst = worst
    report.passed = worst is not None and failures == 0 and not report.undersampled
    logger.info(
        "gradcheck %s: %d coordinates over %d tensors, %d kinks skipped, worst rel error %.3g",
        case.config.name,
        report.checked,
        len(chosen),
        report.skipped_kinks,
        worst.rel_error if worst else float("nan"),
    )
    return report
