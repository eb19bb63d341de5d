"""Learned low-light RAW-to-sRGB restoration on a small numpy autodiff core."""

from .contrast import DehazeParams, dehaze, enhance_contrast
from .losses import FeatureExtractor, LossConfig, ms_ssim, psnr, ssim, total_loss
from .net import NetSpec, build, forward, load_checkpoint, save_checkpoint
from .raw import CFA, RawFrame, preprocess, read_llrw, synthesize_pair, write_llrw
from .tensor import GradientTape, Tensor, backward, no_grad
from .train import TrainConfig, finetune_contrast, train

__version__ = "0.1.0"
