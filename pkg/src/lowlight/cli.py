"""``lowlight`` command line: synth, train, infer, enhance, eval, ablate.

Exit status is 0 on success, 1 for usage or validation problems (bad
flags, unreadable config, mismatched inputs, skipped files) and 2 when a
command fails while running.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import ablation
from .config import RunConfig, dump_config, load_config
from .contrast import DehazeParams, enhance_contrast
from .dataset import (
    IndexEntry,
    RunManifest,
    dataset_fingerprint,
    load_dataset,
    write_index,
)
from .errors import FormatError, InvalidArgumentError, InvalidShapeError, UnsupportedCFAError
from .images import IMAGE_SUFFIXES, RgbImage, lightness_histogram, mean_lightness, read_image, write_image
from .losses import LossConfig, max_msssim_scales, ms_ssim, psnr, ssim
from .net import forward, load_checkpoint, save_checkpoint
from .raw import CFA, NoiseParams, exposure_ratio, preprocess, read_llrw, synthesize_pair, write_llrw
from .synth import smooth_scene
from .tensor import Tensor, no_grad
from .train import finetune_contrast, train, write_history_csv

log = logging.getLogger("lowlight")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
USAGE_ERRORS = (InvalidArgumentError, InvalidShapeError, UnsupportedCFAError, FormatError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; this maps it to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


# synth ----------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.ratio < 1:
        raise UsageError(f"--ratio must be >= 1 (a short exposure), got {args.ratio}")
    cfa = CFA.bayer() if args.cfa == "bayer" else CFA.xtrans()
    noise = NoiseParams(args.noise_photon if args.noise_photon > 0 else None, args.noise_read)
    seed = 0 if args.seed is None else args.seed
    out = Path(args.out_dir)

    scenes: list[tuple[str, RgbImage]] = []
    failures = 0
    if args.input_dir:
        files = sorted(p for p in Path(args.input_dir).iterdir() if p.suffix.lower() in (".png", ".ppm"))
        if not files:
            raise UsageError(f"no PNG/PPM images in {args.input_dir}")
        for p in files:
            try:
                scenes.append((p.stem, read_image(p)))
            except (OSError, ValueError) as exc:
                failures += 1
                print(f"skipping {p.name}: {exc}", file=sys.stderr)
    else:
        if args.size % cfa.period:
            raise UsageError(f"--size must be a multiple of {cfa.period} for {cfa.kind}")
        for i in range(args.scenes):
            img = smooth_scene(args.size, args.size, seed=seed * 100003 + i)
            scenes.append((f"scene{i:04d}", img))
    if not scenes:
        raise UsageError("no readable images")

    (out / "raw").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (name, img) in enumerate(scenes):
        # quantize first so the stored PNG is exactly the scene the RAW was made from
        img = RgbImage(Tensor(np.round(img.clamped().data * 255.0) / 255.0))
        h = img.height - img.height % cfa.period
        w = img.width - img.width % cfa.period
        if (h, w) != (img.height, img.width):
            log.info("%s: cropping %dx%d to %dx%d", name, img.height, img.width, h, w)
            img = RgbImage(Tensor(img.data[:, :, :h, :w]))
        raw, target = synthesize_pair(img, cfa, args.ratio, noise, seed=seed * 100003 + i)
        write_llrw(raw, out / "raw" / f"{name}.llrw")
        write_image(target, out / "gt" / f"{name}.png")
        amp = exposure_ratio(10.0, raw.exposure_s)
        entries.append(IndexEntry(name, f"raw/{name}.llrw", f"gt/{name}.png", amp))
    write_index(entries, out)
    print(f"wrote {len(entries)} pairs to {out}")
    return EXIT_USAGE if failures else EXIT_OK


# train ----------------------------------------------------------------


def _load_data(path):
    pairs = load_dataset(path)
    kind = pairs[0].raw.cfa.kind
    return pairs, kind


def cmd_train(args) -> int:
    cfg = _run_config(args)
    pairs, kind = _load_data(args.data)
    spec = cfg.net.spec_for(kind)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        if resume.params.spec != spec:
            raise UsageError(f"checkpoint network {resume.params.spec} does not match config/data {spec}")
    tcfg = replace(cfg.train, checkpoint_every=args.checkpoint_every)
    manifest = RunManifest("train", cfg.sections(), tcfg.seed, dataset_fingerprint(args.data))
    (out / "config.ini").write_text(dump_config(cfg))

    result = train(pairs, tcfg, spec, resume=resume, checkpoint_dir=out)
    history = out / "history.csv"
    write_history_csv(result.history, history, append=resume is not None)
    final = out / "final.llck"
    save_checkpoint(result.checkpoint(), final)
    artifacts = [history, final, *sorted(out.glob("epoch*.llck"))]

    if args.finetune:
        ft = finetune_contrast(result.params, pairs, tcfg, cfg.dehaze)
        write_history_csv(ft.history, out / "finetune_history.csv")
        save_checkpoint(ft.checkpoint(), out / "finetuned.llck")
        artifacts += [out / "finetune_history.csv", out / "finetuned.llck"]
    for path in artifacts:
        manifest.add_artifact(path)
    manifest.finished = time.time()
    manifest.write(out / "manifest.json")
    if result.history:
        print(f"epoch {result.epoch}: total loss {result.history[-1].total:.6f}")
    print(f"manifest {manifest.hash}")
    return EXIT_OK


# infer ----------------------------------------------------------------


def cmd_infer(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    raw = read_llrw(args.raw)
    spec = ck.params.spec
    if raw.cfa.packed_channels != spec.in_channels:
        raise UsageError(
            f"raw frame is {raw.cfa.kind} ({raw.cfa.packed_channels} packed channels) "
            f"but the checkpoint expects {spec.in_channels} channels"
        )
    packed = preprocess(raw, args.amplify)
    d = spec.divisor
    h, w = packed.shape[2:]
    ph, pw = -h % d, -w % d
    if ph or pw:
        packed = Tensor(np.pad(packed.data, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect"))
    with no_grad():
        pred = forward(ck.params, packed)
    r = spec.upsample_factor
    img = RgbImage(Tensor(np.clip(pred.data[:, :, : r * h, : r * w], 0.0, 1.0)))
    write_image(img, args.out)
    print(f"wrote {args.out} ({img.width}x{img.height}), mean lightness {mean_lightness(img):.4f}")
    if args.reference:
        ref = read_image(args.reference)
        print(f"psnr {psnr(img.data, ref.data):.4f}")
    return EXIT_OK


# enhance --------------------------------------------------------------


def _dehaze_params(args, base: DehazeParams) -> DehazeParams:
    changes = {
        k: getattr(args, k)
        for k in ("patch_size", "omega", "t0", "airlight_fraction", "guided_radius", "guided_eps")
        if getattr(args, k) is not None
    }
    return replace(base, **changes)


def write_histograms(before: RgbImage, after: RgbImage, path, bins: int = 32) -> None:
    hb, edges = lightness_histogram(before, bins)
    ha, _ = lightness_histogram(after, bins)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_low", "bin_high", "before", "after"])
        for i in range(bins):
            w.writerow([f"{edges[i]:.6g}", f"{edges[i + 1]:.6g}", int(hb[i]), int(ha[i])])


def cmd_enhance(args) -> int:
    cfg = _run_config(args)
    params = _dehaze_params(args, cfg.dehaze)
    img = read_image(args.input)
    out = enhance_contrast(img, params)
    write_image(out, args.out)
    if args.emit_histograms:
        write_histograms(img, out, args.emit_histograms)
    print(f"mean lightness {mean_lightness(img):.4f} -> {mean_lightness(out):.4f}")
    return EXIT_OK


# eval -----------------------------------------------------------------

EVAL_COLUMNS = ("name", "psnr", "ssim", "msssim")


def pair_metrics(pred: RgbImage, ref: RgbImage, scales: int = 3) -> tuple[float, float, float]:
    if pred.data.shape != ref.data.shape:
        raise InvalidShapeError(f"shape {pred.data.shape} vs {ref.data.shape}")
    m = min(scales, max_msssim_scales(pred.height, pred.width))
    cfg = LossConfig(msssim_scales=max(m, 1))
    with no_grad():
        s = ssim(pred.tensor, ref.tensor, cfg).mean.item()
        ms = ms_ssim(pred.tensor, ref.tensor, cfg).item()
    return psnr(pred.data, ref.data), s, ms


def cmd_eval(args) -> int:
    pred_dir, ref_dir = Path(args.pred_dir), Path(args.ref_dir)
    listing = lambda d: {p.stem: p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES}
    preds, refs = listing(pred_dir), listing(ref_dir)
    names = sorted(preds.keys() & refs.keys())
    unpaired = sorted(preds.keys() ^ refs.keys())
    for name in unpaired:
        print(f"unpaired, skipped: {name}", file=sys.stderr)
    if not names:
        raise UsageError("no paired images")

    def score(name):
        return pair_metrics(read_image(preds[name]), read_image(refs[name]))

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        rows = list(pool.map(score, names))
    out = Path(args.out)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVAL_COLUMNS)
        for name, row in zip(names, rows):
            w.writerow([name, *(f"{v:.6f}" for v in row)])
        w.writerow(["mean", *(f"{v:.6f}" for v in np.mean(rows, axis=0))])
    digest = hashlib.sha256()
    for name in names:
        digest.update(preds[name].read_bytes())
        digest.update(refs[name].read_bytes())
    manifest = RunManifest("eval", {"pred_dir": str(pred_dir), "ref_dir": str(ref_dir)}, 0, digest.hexdigest())
    manifest.add_artifact(out)
    manifest.finished = time.time()
    manifest.write(out.with_name(out.stem + ".manifest.json"))
    print(f"mean psnr {np.mean([r[0] for r in rows]):.4f} over {len(rows)} pairs")
    return EXIT_USAGE if unpaired else EXIT_OK


# ablate ---------------------------------------------------------------


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    pairs, kind = _load_data(args.data)
    eval_pairs = load_dataset(args.eval_data) if args.eval_data else None
    spec = cfg.net.spec_for(kind)
    rows = ablation.run_ablation(pairs, cfg.train, spec, eval_pairs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "alpha", "beta", "psnr"])
        for r in rows:
            w.writerow([r.name, r.alpha, r.beta, f"{r.psnr:.6f}"])
    manifest = RunManifest("ablate", cfg.sections(), cfg.train.seed, dataset_fingerprint(args.data))
    manifest.add_artifact(out)
    manifest.finished = time.time()
    manifest.write(out.with_name(out.stem + ".manifest.json"))
    for r in rows:
        print(f"{r.name:16s} {r.psnr:8.3f}")
    return EXIT_OK


# parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="overrides [train] seed")
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI file with [train]/[loss]/[net]/[dehaze]")
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="lowlight", description=__doc__.split("\n\n")[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic RAW dataset")
    p.add_argument("--input-dir", help="PNG/PPM ground truths; procedural scenes if omitted")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--cfa", choices=("bayer", "xtrans"), default="bayer")
    p.add_argument("--ratio", type=float, default=100.0, help="long/short exposure ratio (>= 1)")
    p.add_argument("--noise-photon", type=float, default=NoiseParams().photon_scale, help="0 disables shot noise")
    p.add_argument("--noise-read", type=float, default=NoiseParams().read_sigma)
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a restoration network")
    p.add_argument("--data", required=True, help="dataset directory or index.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="LLCK checkpoint to continue from")
    p.add_argument("--checkpoint-every", type=int, default=0, metavar="K")
    p.add_argument("--finetune", action="store_true", help="then fine-tune on contrast-enhanced targets")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="restore one RAW frame")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--raw", required=True)
    p.add_argument("--amplify", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reference", help="ground truth image; prints PSNR")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("enhance", parents=[common], help="invert-dehaze-invert contrast enhancement")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-histograms", metavar="CSV")
    p.add_argument("--patch-size", type=int)
    p.add_argument("--omega", type=float)
    p.add_argument("--t0", type=float)
    p.add_argument("--airlight-fraction", type=float)
    p.add_argument("--guided-radius", type=int)
    p.add_argument("--guided-eps", type=float)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", parents=[common], help="PSNR/SSIM/MS-SSIM over paired directories")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--ref-dir", required=True)
    p.add_argument("--out", default="metrics.csv")
    p.add_argument("--jobs", type=int, default=4)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="compare the seven loss mixes")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", help="held-out dataset for scoring (default: the training data)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("seed", "config", "verbose"):
        if not hasattr(args, name):
            setattr(args, name, None if name != "verbose" else False)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, *USAGE_ERRORS) as exc:
        print(f"lowlight {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ArithmeticError, RuntimeError) as exc:
        print(f"lowlight {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
