"""Normalization/augmentation ablation on synthetic words with injected slope and slant.

Training and validation words are rendered from disjoint glyph exemplars (a
writer split), then every image is rotated and sheared at random. Each seed
trains the same model twice: on normalized images with augmentation, and on
plain crop/resize images without augmentation.

    python scripts/ablation.py [--seeds 0 1 2] [--max-epochs 30]
"""
from __future__ import annotations

import argparse
import math
import time
from dataclasses import dataclass

import numpy as np

from inkline.augment import AugmentConfig
from inkline.data import COMMON_WORDS, GlyphSet, synth_word
from inkline.imaging import GrayImage
from inkline.normalize import NormalizeConfig, correct_slant, correct_slope
from inkline.seq2seq import EncoderConfig, ModelConfig, Seq2SeqModel
from inkline.train import TrainConfig, prepare_set, train_loop

HEIGHT, WIDTH = 24, 64


@dataclass(frozen=True)
class AblationSetup:
    n_train: int = 192
    n_val: int = 64
    vocabulary: int = 48
    max_slope: float = 0.12
    max_slant: float = 0.45
    max_epochs: int = 30
    patience: int = 8
    batch_size: int = 8


def distort(img: GrayImage, rng: np.random.Generator, max_slope: float, max_slant: float) -> GrayImage:
    """White margins, a random shear, then a random rotation."""
    alpha = rng.uniform(-max_slant, max_slant)
    angle = rng.uniform(-max_slope, max_slope)
    m = int(math.ceil(abs(alpha) * img.height)) + 2
    padded = GrayImage(np.pad(img.pixels, ((0, 0), (m, m)), constant_values=1.0))
    return correct_slope(correct_slant(padded, alpha), angle)


def make_words(setup: AblationSetup, seed: int):
    glyphs = GlyphSet.builtin(exemplars=6, height=32, seed=seed)
    train_glyphs, val_glyphs = glyphs.subset(range(4)), glyphs.subset([4, 5])
    vocab = [w for w in COMMON_WORDS if len(w) <= 5][: setup.vocabulary]
    pick = np.random.default_rng([seed, 0])
    out = {}
    for part, gs, n in (("train", train_glyphs, setup.n_train), ("validation", val_glyphs, setup.n_val)):
        words = [vocab[i] for i in pick.integers(len(vocab), size=n)]
        imgs = []
        for i, w in enumerate(words):
            rng = np.random.default_rng([seed, len(out) + 1, i])
            img, _ = synth_word(gs, w, rng)
            imgs.append(distort(img, rng, setup.max_slope, setup.max_slant))
        out[part] = (imgs, words)
    return out, vocab


def ablation_augment(seed: int) -> AugmentConfig:
    """Defaults are sized for 48-pixel lines; pixel magnitudes are halved for 24, and a 3x3 morphology
    kernel is as thick as a stroke at this size, so it is left off."""
    return AugmentConfig(rng_seed=seed, translate_px=1.5, elastic_spacing=8, elastic_sigma=0.75,
                         projective_jitter=1.0, p_morph=0.0)


def run_pipeline(words, vocab, seed: int, normalize_and_augment: bool, setup: AblationSetup, log=None):
    ncfg = NormalizeConfig(target_height=HEIGHT, target_width=WIDTH, seed=seed)
    train = prepare_set(*words["train"], ncfg, normalize=normalize_and_augment)
    val = prepare_set(*words["validation"], ncfg, normalize=normalize_and_augment)
    cfg = ModelConfig(chars=tuple(sorted(set("".join(vocab)))), image_height=HEIGHT, patch_width=10, patch_step=2,
                      encoder=EncoderConfig("gru", 64, 1, True), attention_size=64, dropout=0.2, seed=seed)
    tc = TrainConfig(batch_size=setup.batch_size, dropout=0.2, l2=0.0, augment=normalize_and_augment,
                     max_epochs=setup.max_epochs, patience=setup.patience, seed=seed)
    aug = ablation_augment(seed)
    return train_loop(Seq2SeqModel(cfg), train, val, tc, aug, log=log)


def run(seeds=(0, 1, 2), setup: AblationSetup = AblationSetup(), log=None) -> list[dict]:
    rows = []
    for seed in seeds:
        words, vocab = make_words(setup, seed)
        row = {"seed": seed}
        for name, flag in (("norm_aug", True), ("neither", False)):
            t0 = time.perf_counter()
            res = run_pipeline(words, vocab, seed, flag, setup)
            row[name] = res.best_val_wer
            row[f"{name}_epoch"] = res.best_epoch
            row[f"{name}_seconds"] = time.perf_counter() - t0
            if log is not None:
                log(f"seed {seed} {name}: best val WER {res.best_val_wer:.4f} at epoch {res.best_epoch} "
                    f"({row[f'{name}_seconds']:.0f}s)")
        rows.append(row)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--max-epochs", type=int, default=AblationSetup.max_epochs)
    a = ap.parse_args()
    rows = run(a.seeds, AblationSetup(max_epochs=a.max_epochs), log=lambda m: print(m, flush=True))
    wins = sum(r["norm_aug"] <= r["neither"] for r in rows)
    print(f"normalization+augmentation <= neither on {wins}/{len(rows)} seeds")


if __name__ == "__main__":
    main()
