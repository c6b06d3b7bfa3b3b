"""Command-line entry points: train, inpaint, eval, ablate, describe."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import checkpoint as ckpt
from .blocks import build_residual_block, receptive_field, block_rf_layers
from .config import ConfigError, RunConfig, load_config
from .data import load_dataset, read_image, write_image
from .masks import corrupt
from .metrics import (COLUMNS, constant_fill_inpainter, dataset_mean, evaluate_dataset, generator_inpainter,
                      mean_fill_inpainter, table_row)
from .networks import ContractError, build_discriminator, build_generator, summary
from .training import NonFiniteLossError, TrainState, fit, sample_batch

log = logging.getLogger("pggan")

LOSS_COLUMNS = ("step", "l_rec", "l_g_adv", "l_p_adv", "l_joint")
DISC_KINDS = ("global", "patch", "pggan")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--variant", choices=("res", "dres"))
    p.add_argument("--disc", choices=DISC_KINDS + ("none",))
    p.add_argument("--shared-depth", dest="shared_depth", type=int)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--lambda3", type=float)
    p.add_argument("--mask", help="kind[:lo[-hi]][:fill], e.g. central_square:0.25")
    p.add_argument("--data", help="image folder or procedural spec kind[:count]")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float, help="learning rate for both networks")
    p.add_argument("--base-channels", dest="base_channels", type=int)
    p.add_argument("--upsample", choices=("iconv", "tconv"))
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pggan", description="Inpainting GAN with a patch + global discriminator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a generator/discriminator pair")
    _common(p)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--sample-every", dest="sample_every", type=int)
    p.add_argument("--log-every", dest="log_every", type=int)

    p = sub.add_parser("inpaint", help="fill masked regions of images with a trained generator")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mask-image", dest="mask_image", required=True, help="grayscale image; bright pixels are holes")
    p.add_argument("--image-size", dest="image_size", type=int, help="centre-crop and resize inputs to this size")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("images", nargs="+", help="image files or directories")

    p = sub.add_parser("eval", help="four-metric report on held-out images")
    _common(p)
    p.add_argument("--checkpoint", help="generator checkpoint; omit to score a baseline")
    p.add_argument("--baseline", choices=("constant-fill", "mean-fill"), default="constant-fill")

    p = sub.add_parser("ablate", help="train one generator under global, patch and pggan discriminators")
    _common(p)

    p = sub.add_parser("describe", help="print network summaries and receptive fields")
    _common(p)
    return parser


def _overrides(args) -> dict:
    keys = ("seed", "steps", "image_size", "variant", "disc", "shared_depth", "lambda1", "lambda2", "lambda3",
            "mask", "data", "batch_size", "base_channels", "upsample", "out", "checkpoint_every", "sample_every",
            "log_every")
    out = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "lr", None) is not None:
        out["lr_g"] = out["lr_d"] = args.lr
    return out


# ----------------------------------------------------------------------------
# train

def _datasets(cfg: RunConfig):
    data = load_dataset(cfg.data, cfg.image_size, cfg.seed)
    if data.skipped:
        log.warning("%d image(s) skipped while loading %s", data.skipped, cfg.data)
    if cfg.holdout and len(data) > cfg.holdout:
        return data.split(cfg.holdout)
    return data, data


def _grid(columns, pad: int = 2) -> np.ndarray:
    """Tile equally sized [N, C, H, W] arrays: one row per image, one column per array."""
    n, c, h, w = columns[0].shape
    grid = -np.ones((c, n * (h + pad) + pad, len(columns) * (w + pad) + pad), dtype=np.float32)
    for j, col in enumerate(columns):
        for i in range(n):
            y0, x0 = pad + i * (h + pad), pad + j * (w + pad)
            grid[:, y0:y0 + h, x0:x0 + w] = col[i]
    return grid


def write_sample_grid(path, state: TrainState, batch, rows: int = 4) -> None:
    """Columns: input, mask, output, composited, ground truth."""
    b = replace(batch, x=batch.x[:rows], mask=batch.mask[:rows], x_corrupted=batch.x_corrupted[:rows])
    b.y = state.generator(b.x_corrupted, track_grads=False).data
    mask = np.broadcast_to(b.mask * 2 - 1, b.x.shape)
    write_image(path, _grid([b.x_corrupted, mask, b.y, b.composite(), b.x]))


def _loss_csv(path: Path, resume_step: int):
    """Open the loss log for appending, dropping rows past ``resume_step`` left by an interrupted run."""
    if path.exists() and resume_step:
        with open(path, newline="") as f:
            rows = [r for r in csv.reader(f)][1:]
        kept = [r for r in rows if int(r[0]) <= resume_step]
        if len(kept) != len(rows):
            with open(path, "w", newline="") as f:
                csv.writer(f, lineterminator="\n").writerows([LOSS_COLUMNS, *kept])
        return open(path, "a", newline="")
    f = open(path, "w", newline="")
    f.write(",".join(LOSS_COLUMNS) + "\n")
    return f


def run_training(cfg: RunConfig, resume: str = None) -> TrainState:
    """Train per ``cfg`` into ``cfg.out``; raises :class:`NonFiniteLossError` on divergence."""
    out = Path(cfg.out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "samples").mkdir(exist_ok=True)
    cfg.save(out / "config.txt")
    train, _ = _datasets(cfg)
    if resume:
        state = ckpt.checkpoint_load(resume, expect_net_config=cfg.net_config())
        log.info("resumed from %s at step %d", resume, state.step)
    else:
        state = TrainState.create(cfg.net_config(), cfg.train_config(), cfg.seed)
    remaining = cfg.steps - state.step
    if remaining < 0:
        raise ConfigError(f"checkpoint is at step {state.step}, beyond the step budget {cfg.steps}")

    with _loss_csv(out / "losses.csv", state.step) as log_file:
        writer = csv.writer(log_file, lineterminator="\n")

        def on_step(st, report, batch):
            writer.writerow([st.step] + [repr(v) for v in (report.l_rec, report.l_g_adv, report.l_p_adv,
                                                           report.l_joint)])
            if st.step % cfg.log_every == 0:
                log.info("step %d  l_rec %.4f  l_g_adv %.4f  l_p_adv %.4f  l_joint %.4f", st.step,
                         report.l_rec, report.l_g_adv, report.l_p_adv, report.l_joint)
            if st.step % cfg.sample_every == 0 or st.step == cfg.steps:
                write_sample_grid(out / "samples" / f"step_{st.step:06d}.png", st, batch)
            if st.step % cfg.checkpoint_every == 0 or st.step == cfg.steps:
                log_file.flush()
                ckpt.checkpoint_save(st, out / "checkpoints" / f"step_{st.step:06d}.ckpt")
                ckpt.checkpoint_save(st, out / "checkpoints" / "last.ckpt")

        fit(state, train, remaining, on_step)
    if cfg.steps == 0:
        ckpt.checkpoint_save(state, out / "checkpoints" / "last.ckpt")
    return state


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    try:
        state = run_training(cfg, args.resume)
    except NonFiniteLossError as exc:
        print(f"error: training diverged: {exc}; last good checkpoint kept in {Path(cfg.out) / 'checkpoints'}",
              file=sys.stderr)
        return 3
    print(f"trained {state.step} steps; outputs in {cfg.out}")
    return 0


# ----------------------------------------------------------------------------
# inpaint

def _image_files(paths) -> list:
    files = []
    for p in map(Path, paths):
        files.extend(sorted(q for q in p.iterdir() if q.is_file()) if p.is_dir() else [p])
    return files


def read_mask(path, h: int, w: int) -> np.ndarray:
    """Binary [1, 1, h, w] mask from a grayscale image (value >= 128 marks a hole)."""
    with Image.open(path) as im:
        im = im.convert("L")
        if im.size != (w, h):
            im = im.resize((w, h), Image.NEAREST)
        return (np.asarray(im) >= 128).astype(np.float32)[None, None]


def cmd_inpaint(args) -> int:
    gen = ckpt.load_generator(args.checkpoint)
    out = Path(args.out)
    for f in _image_files(args.images):
        x = read_image(f, args.image_size, gen.spec.in_channels)[None]
        batch = corrupt(x, read_mask(args.mask_image, *x.shape[2:]))
        batch.y = gen(batch.x_corrupted, track_grads=False).data
        write_image(out / (f.stem + ".png"), batch.composite()[0])
        log.info("wrote %s", out / (f.stem + ".png"))
    print(f"inpainted outputs in {out}")
    return 0


# ----------------------------------------------------------------------------
# eval / ablate

def _write_report(out: Path, report, label: str) -> str:
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report.to_csv())
    text = report.table(label)
    (out / "metrics.txt").write_text(text + "\n")
    return text


def cmd_eval(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    train, held = _datasets(cfg)
    if args.checkpoint:
        inpainter, label = generator_inpainter(ckpt.load_generator(args.checkpoint)), "generator"
    elif args.baseline == "mean-fill":
        inpainter, label = mean_fill_inpainter, "visible-mean fill"
    else:
        inpainter, label = constant_fill_inpainter(dataset_mean(train.images)), "constant-mean fill"
    report = evaluate_dataset(inpainter, held, cfg.mask_spec(), cfg.seed + 1)
    print(_write_report(Path(cfg.out), report, label))
    return 0


def cmd_ablate(args) -> int:
    base = load_config(args.config, _overrides(args))
    root = Path(base.out)
    _, held = _datasets(base)
    reports, outputs = {}, {}
    probe = None
    for kind in DISC_KINDS:
        cfg = replace(base, disc=kind, out=str(root / kind)).validate()
        log.info("ablation: training with the %s discriminator", kind)
        try:
            state = run_training(cfg)
        except NonFiniteLossError as exc:
            print(f"error: {kind} run diverged: {exc}", file=sys.stderr)
            return 3
        reports[kind] = evaluate_dataset(generator_inpainter(state.generator), held, cfg.mask_spec(), cfg.seed + 1)
        _write_report(root / kind, reports[kind], f"{kind} D")
        if probe is None:
            probe = sample_batch(replace(state, rng=np.random.default_rng(cfg.seed + 2),
                                         config=replace(state.config, batch_size=4)), held)
        outputs[kind] = probe.composite(state.generator(probe.x_corrupted, track_grads=False).data)

    write_image(root / "ablation_grid.png", _grid([probe.x_corrupted, *outputs.values(), probe.x]))
    lines = [reports["pggan"].table("pggan D").splitlines()[0]]
    header = f"| {'Method':<22}|" + "|".join(f"{c:^10}" for c in COLUMNS) + "|"
    sep = "-" * len(header)
    lines += [sep, header, sep] + [table_row(f"{k} D", r.aggregate) for k, r in reports.items()] + [sep]
    text = "\n".join(lines)
    (root / "ablation.txt").write_text(text + "\n")
    print(text)
    print(f"grid columns: input, {', '.join(DISC_KINDS)}, ground truth -> {root / 'ablation_grid.png'}")
    return 0


# ----------------------------------------------------------------------------
# describe

def cmd_describe(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    net = cfg.net_config()
    gen_spec = build_generator(**net["generator"])
    print(summary(gen_spec, cfg.image_size))
    print()
    if net["discriminator"]:
        print(summary(build_discriminator(**net["discriminator"]), cfg.image_size))
        print()
    # residual stack against a type-a stack of the same depth and width
    res_blocks = [b for _, b in gen_spec.trunk if b.kind.startswith("residual")]
    ch = res_blocks[0].channels_in
    plain = [build_residual_block("a", ch) for _ in res_blocks]
    rf_this = receptive_field([l for b in res_blocks for l in block_rf_layers(b)]).rf
    rf_plain = receptive_field([l for b in plain for l in block_rf_layers(b)]).rf
    print(f"residual stack receptive field: {cfg.variant} {rf_this} px vs type-a stack of equal depth "
          f"{rf_plain} px")
    return 0


COMMANDS = {"train": cmd_train, "inpaint": cmd_inpaint, "eval": cmd_eval, "ablate": cmd_ablate,
            "describe": cmd_describe}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ckpt.CheckpointError, ContractError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
