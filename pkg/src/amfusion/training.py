"""
Adam training of the autoencoder on reconstruction.

Both modalities of every pair are independent training samples of one
shared autoencoder. Runs are deterministic: the batch sampler and the
parameter initialization draw from PCG64 generators seeded by
``TrainConfig.seed``.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from src.amfusion.errors import ConfigError, DataIOError, NumericError, UsageError
from src.amfusion.losses import LossConfig, loss_terms
from src.amfusion.nn.blocks import autoencode
from src.amfusion.nn.params import ArchConfig, ModelParams, init_params
from src.amfusion.nn.weights import save_weights
from src.amfusion.tensor import Tape, Tensor

logger = logging.getLogger(__name__)

TRACE_HEADER = ("iter", "L_pixel", "L_ssim", "L_msl1", "L_grad", "L_total")


@dataclass(frozen=True)
class TrainConfig:
    arch: ArchConfig = field(default_factory=ArchConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    batch_size: int = 4
    iterations: int = 200
    epoch_mode: bool = False
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.checkpoint_interval < 0:
            raise ConfigError(f"checkpoint_interval must be >= 0, got {self.checkpoint_interval}")


@dataclass
class OptimizerState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass
class TraceRow:
    iteration: int
    pixel: float
    ssim: float
    msl1: float
    grad: float
    total: float

    def as_tuple(self):
        return (self.iteration, self.pixel, self.ssim, self.msl1, self.grad, self.total)


@dataclass
class TrainResult:
    params: ModelParams
    trace: List[TraceRow]
    state: OptimizerState


def adam_step(params: ModelParams, grads: Mapping[str, Optional[np.ndarray]], state: OptimizerState,
              cfg: TrainConfig) -> OptimizerState:
    """
    One bias-corrected Adam update of every trainable parameter, in place.

    Args:
        params: Parameters to update
        grads: Gradient per trainable parameter name
        state: Moment estimates and step counter (updated in place)
        cfg: Learning rate and Adam constants

    Returns:
        The updated state

    Raises:
        UsageError: If a trainable parameter has no gradient
    """
    names = params.trainable_names()
    missing = [n for n in names if grads.get(n) is None]
    if missing:
        raise UsageError(f"adam_step: missing gradients for {missing[:5]}{'...' if len(missing) > 5 else ''}")
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    step_size = cfg.learning_rate / bc1
    for name in names:
        p = params[name]
        g = np.asarray(grads[name], dtype=np.float64)
        if name not in state.m:
            state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = step_size * m / (np.sqrt(v / bc2) + cfg.adam_eps)
        p.data[...] = (p.data - update).astype(p.dtype)
    return state


def _collect_grads(params: ModelParams) -> Dict[str, np.ndarray]:
    grads = {}
    for name in params.trainable_names():
        g = params[name].grad
        # parameters outside the forward graph (attention disabled) get zero updates
        grads[name] = np.zeros(params[name].shape) if g is None else g
    return grads


def _batches(n_images: int, cfg: TrainConfig, rng: np.random.Generator):
    """Yield index batches: one per step, or a shuffled pass per epoch in epoch mode."""
    if cfg.epoch_mode:
        for _ in range(cfg.iterations):
            order = rng.permutation(n_images)
            for start in range(0, n_images, cfg.batch_size):
                yield order[start:start + cfg.batch_size]
    else:
        replace = n_images < cfg.batch_size
        for _ in range(cfg.iterations):
            yield rng.choice(n_images, size=cfg.batch_size, replace=replace)


def training_images(pairs: Sequence) -> List[Tensor]:
    images = []
    for pair in pairs:
        images.extend([pair.ir, pair.vis])
    return images


def train(pairs: Sequence, cfg: TrainConfig, params: Optional[ModelParams] = None,
          checkpoint_dir: Optional[Union[str, Path]] = None, images: Optional[Sequence[Tensor]] = None) -> TrainResult:
    """
    Optimize the autoencoder under the total loss.

    Args:
        pairs: ImagePairs; both IR and VIS frames become samples
        cfg: Training configuration
        params: Starting parameters (default: ``init_params(cfg.arch, cfg.seed)``)
        checkpoint_dir: Where periodic AMFW checkpoints go when
            ``cfg.checkpoint_interval`` > 0
        images: Explicit 1 x 1 x S x S samples instead of ``pairs``

    Returns:
        TrainResult with the final parameters and the per-step loss trace

    Raises:
        ConfigError: If there are no samples or they violate the MS-SSIM size guard
        NumericError: If a loss or activation becomes non-finite
    """
    samples = list(images) if images is not None else training_images(pairs)
    if not samples:
        raise ConfigError("training needs at least one image")
    side = min(samples[0].shape[2:])
    if side < cfg.loss.ssim.min_side:
        raise ConfigError(
            f"image side {side} is below {cfg.loss.ssim.min_side}, the minimum for {cfg.loss.ssim.scales} MS-SSIM scales"
        )
    stacked = np.concatenate([s.data for s in samples], axis=0)
    params = params if params is not None else init_params(cfg.arch, cfg.seed)
    rng = np.random.Generator(np.random.PCG64((cfg.seed + 1) & 0xFFFFFFFFFFFFFFFF))
    state = OptimizerState()
    trace: List[TraceRow] = []
    weights, ssim_cfg = cfg.loss.weights, cfg.loss.ssim
    logger.info("train start samples=%d batch=%d iterations=%d epoch_mode=%s lr=%g",
                len(samples), cfg.batch_size, cfg.iterations, cfg.epoch_mode, cfg.learning_rate)

    for step, idx in enumerate(_batches(len(samples), cfg, rng), start=1):
        batch = Tensor(stacked[np.sort(idx)])
        params.zero_grad()
        try:
            with Tape() as tape:
                recon = autoencode(batch, params, mode="train")
                terms = loss_terms(recon, batch, weights, ssim_cfg, pixel_squared=cfg.loss.pixel_squared)
        except NumericError as exc:
            raise NumericError(f"iteration {step}: {exc}", {"iteration": step, **exc.details}) from exc
        row = TraceRow(step, *terms.as_row())
        if not all(math.isfinite(v) for v in row.as_tuple()):
            raise NumericError(
                f"iteration {step}: non-finite loss (pixel={row.pixel}, ssim={row.ssim}, "
                f"msl1={row.msl1}, grad={row.grad}, total={row.total})",
                {"iteration": step, "terms": row.as_tuple()[1:]},
            )
        tape.backward(terms.total)
        adam_step(params, _collect_grads(params), state, cfg)
        trace.append(row)
        logger.info("step=%d L_pixel=%.6f L_ssim=%.6f L_msl1=%.6f L_grad=%.6f L_total=%.6f", *row.as_tuple())
        if checkpoint_dir is not None and cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
            save_weights(params, Path(checkpoint_dir) / f"ckpt_{step:06d}.amfw")

    logger.info("train done steps=%d first=%.6f last=%.6f", len(trace), trace[0].total, trace[-1].total)
    return TrainResult(params, trace, state)


def write_trace_csv(trace: Sequence[TraceRow], path: Union[str, Path]):
    """CSV with header ``iter,L_pixel,L_ssim,L_msl1,L_grad,L_total``."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_HEADER)
            for row in trace:
                writer.writerow([row.iteration] + [repr(float(v)) for v in row.as_tuple()[1:]])
    except OSError as exc:
        raise DataIOError(f"cannot write loss trace {path}: {exc}") from exc
