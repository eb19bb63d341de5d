"""Loss-term ablation: train the same network under seven loss mixes and
compare reconstruction PSNR."""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import NamedTuple, Sequence

import numpy as np

from .losses import FeatureExtractor, LossConfig, psnr
from .net import NetParams, forward
from .tensor import Tensor, no_grad
from .train import TrainConfig, TrainingPair, train

log = logging.getLogger(__name__)


class Variant(NamedTuple):
    name: str
    alpha: float
    beta: float


# total = alpha * (beta * l1 + (1 - beta) * msssim) + (1 - alpha) * feature
VARIANTS = (
    Variant("l1", 1.0, 1.0),
    Variant("msssim", 1.0, 0.0),
    Variant("pixel", 1.0, 0.99),
    Variant("feature", 0.0, 0.99),
    Variant("feature+l1", 0.9, 1.0),
    Variant("feature+msssim", 0.9, 0.0),
    Variant("final", 0.9, 0.99),
)


class AblationRow(NamedTuple):
    name: str
    alpha: float
    beta: float
    psnr: float


def mean_psnr(params: NetParams, dataset: Sequence[TrainingPair]) -> float:
    """Mean PSNR of clamped full-frame predictions against the targets."""
    scores = []
    with no_grad():
        for pair in dataset:
            pred = forward(params, Tensor(pair.packed()))
            scores.append(psnr(np.clip(pred.data, 0.0, 1.0), pair.target.data))
    return float(np.mean(scores))


def run_ablation(
    dataset: Sequence[TrainingPair],
    cfg: TrainConfig,
    spec,
    eval_dataset: Sequence[TrainingPair] | None = None,
    variants: Sequence[Variant] = VARIANTS,
    fx: FeatureExtractor | None = None,
) -> list[AblationRow]:
    """Train one network per variant from the same seed, sequentially."""
    fx = fx or FeatureExtractor(seed=cfg.feature_seed)
    eval_dataset = dataset if eval_dataset is None else eval_dataset
    rows = []
    for v in variants:
        loss: LossConfig = replace(cfg.loss, alpha=v.alpha, beta=v.beta)
        result = train(dataset, replace(cfg, loss=loss), spec, fx=fx)
        score = mean_psnr(result.params, eval_dataset)
        log.info("ablation %s: psnr %.3f", v.name, score)
        rows.append(AblationRow(v.name, v.alpha, v.beta, score))
    return rows
