"""Optimization loop: Adam with a step learning-rate schedule, random
crops with dihedral augmentation, batch size one, checkpointing, and the
contrast fine-tuning pass."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .contrast import DehazeParams, enhance_contrast
from .errors import InvalidArgumentError, TapeStateError
from .images import RgbImage
from .losses import FeatureExtractor, LossConfig, LossTerms, loss_terms
from .net import Checkpoint, NetParams, NetSpec, build, forward, save_checkpoint
from .raw import RawFrame, preprocess
from .tensor import GradientTape, Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Training recipe. ``lr_switch_epoch=None`` means half of ``epochs``."""

    epochs: int = 4000
    lr_initial: float = 1e-4
    lr_after: float = 1e-5
    lr_switch_epoch: int | None = None
    crop_size: int = 512
    batch_size: int = 1
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    finetune_epochs: int = 100
    augment: bool = True
    checkpoint_every: int = 0
    feature_seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size != 1:
            raise InvalidArgumentError("batch_size is fixed to 1")
        if self.epochs < 0 or self.finetune_epochs < 0:
            raise InvalidArgumentError("epoch counts must be non-negative")
        if self.lr_initial <= 0 or self.lr_after <= 0:
            raise InvalidArgumentError("learning rates must be positive")
        if self.crop_size < 1:
            raise InvalidArgumentError(f"crop_size must be positive, got {self.crop_size}")

    @property
    def switch_epoch(self) -> int:
        return self.epochs // 2 if self.lr_switch_epoch is None else self.lr_switch_epoch


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr_initial if epoch < cfg.switch_epoch else cfg.lr_after


# Adam -----------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: Sequence[Tensor], beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params], 0, beta1, beta2, eps)


def _param_list(params) -> list[Tensor]:
    return params.parameters() if isinstance(params, NetParams) else list(params)


def adam_step(params, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    plist = _param_list(params)
    for i, p in enumerate(plist):
        if p.grad is None:
            raise TapeStateError(f"parameter {p.name or i} has no gradient; run backward() first")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, m, v in zip(plist, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# augmentation ---------------------------------------------------------

N_TRANSFORMS = 8


def apply_transform(a: np.ndarray, k: int) -> np.ndarray:
    """Dihedral transform ``k`` of the spatial axes of an NCHW array:
    rotate by ``90 * (k % 4)`` degrees, then mirror left-right if ``k >= 4``."""
    out = np.rot90(a, k % 4, axes=(2, 3))
    if k >= 4:
        out = out[:, :, :, ::-1]
    return np.ascontiguousarray(out)


def augment(input_crop: np.ndarray, target_crop: np.ndarray, seed) -> tuple[np.ndarray, np.ndarray, int]:
    """Apply one random dihedral transform to both crops.

    ``seed`` is an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = int(rng.integers(N_TRANSFORMS))
    return apply_transform(input_crop, k), apply_transform(target_crop, k), k


# data -----------------------------------------------------------------


@dataclass
class TrainingPair:
    raw: RawFrame
    target: RgbImage
    amplification: float

    def packed(self) -> np.ndarray:
        return preprocess(self.raw, self.amplification).data


def _validate_dataset(dataset: Sequence[TrainingPair], spec: NetSpec) -> str:
    if not dataset:
        raise InvalidArgumentError("dataset is empty")
    kinds = {p.raw.cfa.kind for p in dataset}
    if len(kinds) > 1:
        raise InvalidArgumentError(f"dataset mixes CFA types {sorted(kinds)}")
    kind = kinds.pop()
    expected = NetSpec.for_cfa(kind, spec.depth, spec.base_width)
    if (spec.in_channels, spec.upsample_factor) != (expected.in_channels, expected.upsample_factor):
        raise InvalidArgumentError(
            f"{kind} data needs in_channels={expected.in_channels}, r={expected.upsample_factor}; "
            f"net has {spec.in_channels}, {spec.upsample_factor}"
        )
    for i, p in enumerate(dataset):
        if (p.target.height, p.target.width) != (p.raw.height, p.raw.width):
            raise InvalidArgumentError(f"pair {i}: target {p.target.height}x{p.target.width} != raw {p.raw.height}x{p.raw.width}")
    return kind


def packed_crop_size(cfg: TrainConfig, spec: NetSpec, h: int, w: int) -> int:
    """Crop side at packed resolution: the configured crop, shrunk to fit,
    rounded down to a multiple of the network divisor."""
    r, d = spec.upsample_factor, spec.divisor
    if cfg.crop_size % (r * d):
        raise InvalidArgumentError(f"crop_size {cfg.crop_size} must be a multiple of r * 2**(depth-1) = {r * d}")
    side = min(cfg.crop_size // r, h, w)
    side -= side % d
    if side < d:
        raise InvalidArgumentError(f"packed image {h}x{w} too small for a {d}-divisible crop")
    return side


def sample_crop(packed: np.ndarray, target: np.ndarray, side: int, r: int, rng: np.random.Generator):
    """Uniform crop at packed resolution, mapped to target pixels by ``r``."""
    h, w = packed.shape[2:]
    top = int(rng.integers(h - side + 1))
    left = int(rng.integers(w - side + 1))
    pc = packed[:, :, top : top + side, left : left + side]
    tc = target[:, :, r * top : r * (top + side), r * left : r * (left + side)]
    return pc, tc


# loop -----------------------------------------------------------------


class HistoryRow(NamedTuple):
    epoch: int
    iter: int
    l1: float
    msssim_loss: float
    feature_loss: float
    total: float


HISTORY_COLUMNS = HistoryRow._fields


def write_history_csv(rows: Sequence[HistoryRow], path, append: bool = False) -> None:
    path = Path(path)
    new = not append or not path.exists()
    with path.open("a" if append else "w", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(HISTORY_COLUMNS)
        for row in rows:
            writer.writerow([row.epoch, row.iter] + [repr(float(v)) for v in row[2:]])


def read_history_csv(path) -> list[HistoryRow]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            HistoryRow(int(r["epoch"]), int(r["iter"]), *(float(r[c]) for c in HISTORY_COLUMNS[2:]))
            for r in reader
        ]


@dataclass
class TrainResult:
    params: NetParams
    history: list[HistoryRow]
    adam: AdamState
    epoch: int

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            self.params, self.epoch, self.adam.t, [m.copy() for m in self.adam.m], [v.copy() for v in self.adam.v]
        )


Objective = Callable[[Tensor, Tensor], "Tensor | LossTerms"]


def train(
    dataset: Sequence[TrainingPair],
    cfg: TrainConfig,
    spec: NetSpec,
    *,
    init: NetParams | None = None,
    resume: Checkpoint | None = None,
    fx: FeatureExtractor | None = None,
    objective: Objective | None = None,
    checkpoint_dir=None,
    on_step: Callable[[HistoryRow, Tensor, Tensor], None] | None = None,
) -> TrainResult:
    """Train (or continue training) the restoration network.

    Epoch ``e`` draws its pair order, crops and transforms from a generator
    seeded with ``(cfg.seed, e)``, so resuming at any epoch boundary repeats
    the uninterrupted run exactly.

    Parameters
    ----------
    init : NetParams, optional
        Starting weights (copied); defaults to ``build(spec, cfg.seed)``.
    resume : Checkpoint, optional
        Restores parameters, epoch counter and Adam moments.
    objective : callable, optional
        Replaces the configured loss; returns a scalar Tensor or LossTerms.
    """
    _validate_dataset(dataset, spec)
    if resume is not None:
        if resume.params.spec != spec:
            raise InvalidArgumentError(f"checkpoint spec {resume.params.spec} != {spec}")
        params = resume.params.copy()
        plist = params.parameters()
        adam = AdamState.zeros(plist, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        if resume.adam_m is not None:
            adam.m = [m.copy() for m in resume.adam_m]
            adam.v = [v.copy() for v in resume.adam_v]
        adam.t = resume.adam_step
        start = resume.epoch
    else:
        params = init.copy() if init is not None else build(spec, cfg.seed)
        adam = AdamState.zeros(params.parameters(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        start = 0
    if fx is None and objective is None:
        fx = FeatureExtractor(seed=cfg.feature_seed)

    r = spec.upsample_factor
    inputs = [p.packed() for p in dataset]
    targets = [p.target.data for p in dataset]
    history: list[HistoryRow] = []
    step = adam.t
    for epoch in range(start, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        lr = lr_at(epoch, cfg)
        for i in rng.permutation(len(dataset)):
            packed, target = inputs[i], targets[i]
            side = packed_crop_size(cfg, spec, *packed.shape[2:])
            pc, tc = sample_crop(packed, target, side, r, rng)
            if cfg.augment:
                pc, tc, _ = augment(pc, tc, rng)
            x, y = Tensor(pc), Tensor(np.ascontiguousarray(tc))
            with GradientTape() as tape:
                pred = forward(params, x)
                out = objective(pred, y) if objective is not None else loss_terms(pred, y, cfg.loss, fx)
                total = out.total if isinstance(out, LossTerms) else out
            tape.backward(total)
            adam_step(params, adam, lr)
            row = _history_row(epoch, step, out)
            step += 1
            history.append(row)
            if on_step is not None:
                on_step(row, pred, y)
        done = epoch + 1
        if checkpoint_dir is not None and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            result = TrainResult(params, history, adam, done)
            save_checkpoint(result.checkpoint(), Path(checkpoint_dir) / f"epoch{done:06d}.llck")
        if history and (done % 100 == 0 or done == cfg.epochs):
            log.info("epoch %d/%d total=%.5f lr=%g", done, cfg.epochs, history[-1].total, lr)
    return TrainResult(params, history, adam, max(start, cfg.epochs))


def _history_row(epoch: int, step: int, out) -> HistoryRow:
    if isinstance(out, LossTerms):
        return HistoryRow(epoch, step, out.l1.item(), out.msssim.item(), out.feature.item(), out.total.item())
    return HistoryRow(epoch, step, math.nan, math.nan, math.nan, out.item())


def predict(params: NetParams, packed: Tensor) -> Tensor:
    """Inference without a tape (no recording)."""
    return forward(params, packed)


def finetune_contrast(
    params: NetParams,
    dataset: Sequence[TrainingPair],
    cfg: TrainConfig,
    dehaze_params: DehazeParams = DehazeParams(),
    fx: FeatureExtractor | None = None,
) -> TrainResult:
    """Continue training on contrast-enhanced targets for ``cfg.finetune_epochs``
    epochs at the constant rate ``cfg.lr_after`` with fresh Adam moments."""
    enhanced = [TrainingPair(p.raw, enhance_contrast(p.target, dehaze_params), p.amplification) for p in dataset]
    ft_cfg = replace(cfg, epochs=cfg.finetune_epochs, lr_initial=cfg.lr_after, lr_switch_epoch=0)
    if cfg.finetune_epochs == 0:
        return TrainResult(params.copy(), [], AdamState.zeros(params.parameters()), 0)
    return train(enhanced, ft_cfg, params.spec, init=params, fx=fx)
