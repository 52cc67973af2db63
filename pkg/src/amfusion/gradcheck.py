"""
Finite-difference gradient suite.

Every case builds float64 inputs from a seeded generator and a scalar
objective (op output contracted with fixed random weights, or a loss
directly). Analytic gradients from the tape are compared with central
differences on a random subset of input elements; the error measure is
|a - n| / max(|a|, |n|, 1e-6).

The default step is 1e-6 rather than the customary 1e-3. In float64 the
truncation error of a central difference stays far below the 1e-3
tolerance at either step, while the smaller step keeps perturbed elements from
straddling ReLU, PReLU and max-pool kinks in the block cases. Pass
``step=1e-3`` (``gradcheck --step 1e-3``) for the coarser check.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.amfusion import losses, ops
from src.amfusion.errors import NumericError
from src.amfusion.nn import blocks
from src.amfusion.nn.params import ArchConfig, init_params
from src.amfusion.tensor import Tape, Tensor
from src.utils.math_utils import relative_error

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-6
DEFAULT_TOLERANCE = 1e-3
DEFAULT_PROBES = 12

Objective = Callable[..., Tensor]
CaseBuilder = Callable[[np.random.Generator], Tuple[Objective, List[Tensor]]]


@dataclass
class GradResult:
    name: str
    worst: float
    seeds: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance


def _t(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True, dtype=np.float64)


def _contract(rng, fn: Objective) -> Objective:
    """Turn a tensor-valued op into a scalar objective sum(op(...) * R)."""
    cache = {}

    def objective(*inputs):
        out = fn(*inputs)
        if "r" not in cache:
            cache["r"] = Tensor(rng.normal(size=out.shape), dtype=np.float64)
        return ops.sum(ops.mul(out, cache["r"]))

    return objective


def _op_case(fn: Objective, *shapes, positive: Sequence[int] = ()) -> CaseBuilder:
    def build(rng):
        inputs = [_t(rng, *shape) for shape in shapes]
        for i in positive:
            inputs[i].data = np.abs(inputs[i].data) + 0.5
        return _contract(rng, fn), inputs

    return build


def _bn_case(mode: str) -> CaseBuilder:
    def build(rng):
        state = ops.BatchNormState(rng.normal(size=3), np.abs(rng.normal(size=3)) + 0.5)

        def fn(x, gamma, beta):
            fresh = ops.BatchNormState(state.running_mean.copy(), state.running_var.copy())
            return ops.batch_norm(x, gamma, beta, fresh, mode=mode)

        return _contract(rng, fn), [_t(rng, 2, 3, 4, 4), _t(rng, 3), _t(rng, 3)]

    return build


def _model_case(forward: Callable, probe: str, in_channels: Callable[[ArchConfig], int], side: int = 8) -> CaseBuilder:
    def build(rng):
        config = ArchConfig(base_channels=2, ca_reduction=4, image_side=side)
        params = init_params(config, int(rng.integers(2 ** 32))).cast(np.float64)
        x = _t(rng, 2, in_channels(config), side, side)

        def fn(inp, _probe):
            return forward(inp, params)

        return _contract(rng, fn), [x, params[probe]]

    return build


def _loss_case(fn: Callable[[Tensor, Tensor], Tensor], side: int) -> CaseBuilder:
    def build(rng):
        O = Tensor(np.tanh(rng.normal(size=(2, 1, side, side))), requires_grad=True, dtype=np.float64)
        I = Tensor(np.tanh(rng.normal(size=(2, 1, side, side))), requires_grad=True, dtype=np.float64)
        return fn, [O, I]

    return build


_SSIM1 = losses.SsimConfig(scales=1)
_SSIM2 = losses.SsimConfig(scales=2)
_WEIGHTS = losses.LossWeights()


def default_cases() -> Dict[str, CaseBuilder]:
    """Every differentiable layer op, network block and loss."""
    return {
        "conv2d_3x3": _op_case(lambda x, w, b: ops.conv2d(x, w, b, padding=1), (2, 2, 5, 5), (3, 2, 3, 3), (3,)),
        "conv2d_7x7": _op_case(lambda x, w, b: ops.conv2d(x, w, b, padding=3), (1, 2, 6, 6), (2, 2, 7, 7), (2,)),
        "conv2d_stride2": _op_case(lambda x, w: ops.conv2d(x, w, stride=2), (1, 2, 7, 7), (2, 2, 3, 3)),
        "filter2d": _op_case(lambda x: ops.filter2d(x, losses.SOBEL_X), (1, 2, 5, 5)),
        "relu": _op_case(ops.relu, (2, 3, 4, 4)),
        "prelu": _op_case(ops.prelu, (2, 3, 4, 4), (1,)),
        "sigmoid": _op_case(ops.sigmoid, (2, 3, 4, 4)),
        "tanh": _op_case(ops.tanh, (2, 3, 4, 4)),
        "sqrt": _op_case(ops.sqrt, (2, 3), positive=(0,)),
        "div": _op_case(ops.div, (2, 3), (2, 3), positive=(1,)),
        "batch_norm_train": _bn_case("train"),
        "batch_norm_eval": _bn_case("eval"),
        "max_pool_spatial": _op_case(ops.max_pool_spatial, (2, 4, 3, 3)),
        "avg_pool_spatial": _op_case(ops.avg_pool_spatial, (2, 4, 3, 3)),
        "global_max_pool": _op_case(ops.global_max_pool, (2, 3, 4, 4)),
        "global_avg_pool": _op_case(ops.global_avg_pool, (2, 3, 4, 4)),
        "avg_pool_2x2": _op_case(ops.avg_pool_2x2, (1, 2, 4, 6)),
        "concat_channels": _op_case(lambda a, b: ops.concat_channels([a, b]), (1, 1, 3, 3), (1, 2, 3, 3)),
        "mkblock": _model_case(lambda x, p: blocks.mkblock_forward(x, p, 2), "mk2.conv5.w", lambda c: c.mkblock_in(2)),
        "spatial_attention": _model_case(blocks.spatial_attention, "psc.sa.w", lambda c: c.encoder_channels),
        "channel_attention": _model_case(blocks.channel_attention, "psc.ca.fc1.w", lambda c: c.encoder_channels),
        "pscnet": _model_case(blocks.pscnet_forward, "psc.ca.fc2.w", lambda c: c.encoder_channels),
        "decoder": _model_case(lambda x, p: blocks.decoder_forward(x, p, mode="train"), "dec2.bn.gamma",
                               lambda c: c.feature_channels),
        "loss_pixel": _loss_case(losses.loss_pixel, 6),
        "loss_ssim": _loss_case(lambda o, i: losses.loss_ssim(o, i, _SSIM1), 13),
        "loss_msssim": _loss_case(lambda o, i: losses.loss_msssim(o, i, _SSIM2), 22),
        "loss_l1": _loss_case(losses.loss_l1, 6),
        "combine_msssim_l1": _loss_case(lambda o, i: losses.combine_msssim_l1(o, i, 0.3, _SSIM2), 22),
        "loss_grad": _loss_case(losses.loss_grad, 6),
        "loss_total": _loss_case(lambda o, i: losses.loss_total(o, i, _WEIGHTS, _SSIM2), 22),
    }


def check_case(objective: Objective, inputs: List[Tensor], rng: np.random.Generator,
               step: float = DEFAULT_STEP, probes: int = DEFAULT_PROBES) -> float:
    """Worst relative error between analytic and central-difference gradients."""
    for t in inputs:
        t.grad = None
    with Tape() as tape:
        loss = objective(*inputs)
    tape.backward(loss)
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(probes, flat.size), replace=False)
        for k in picks:
            original = flat[k]
            flat[k] = original + step
            up = objective(*inputs).item()
            flat[k] = original - step
            down = objective(*inputs).item()
            flat[k] = original
            numeric = (up - down) / (2.0 * step)
            err = float(relative_error(analytic.reshape(-1)[k], numeric))
            worst = max(worst, err)
    return worst


def run_suite(seeds: Iterable[int] = range(5), step: float = DEFAULT_STEP, tolerance: float = DEFAULT_TOLERANCE,
              names: Optional[Sequence[str]] = None, probes: int = DEFAULT_PROBES) -> List[GradResult]:
    """
    Run the gradient cases over several seeds and keep the worst error per case.

    Raises:
        NumericError: If ``names`` requests an unknown case
    """
    cases = default_cases()
    selected = list(names) if names is not None else list(cases)
    unknown = [n for n in selected if n not in cases]
    if unknown:
        raise NumericError(f"unknown gradient cases: {unknown}")
    seeds = list(seeds)
    results = []
    for name in selected:
        worst = 0.0
        for seed in seeds:
            rng = np.random.Generator(np.random.PCG64(seed))
            objective, inputs = cases[name](rng)
            worst = max(worst, check_case(objective, inputs, rng, step=step, probes=probes))
        result = GradResult(name, worst, len(seeds), tolerance)
        log = logger.info if result.passed else logger.warning
        log("gradcheck case=%s worst_rel_err=%.3e seeds=%d passed=%s", name, worst, len(seeds), result.passed)
        results.append(result)
    return results
