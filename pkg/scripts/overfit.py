"""Overfit a small seq2seq recognizer on 32 synthetic words until the training WER reaches zero.

    python scripts/overfit.py [--batch-size 4] [--max-epochs 300]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from inkline.data import COMMON_WORDS, GlyphSet, synth_word
from inkline.normalize import NormalizeConfig
from inkline.seq2seq import EncoderConfig, ModelConfig, Seq2SeqModel
from inkline.train import TrainConfig, prepare_set, train_loop

HEIGHT, WIDTH = 24, 64


def overfit_words(n: int = 32, max_len: int = 6) -> list[str]:
    return [w for w in COMMON_WORDS if len(w) <= max_len][:n]


def run(batch_size: int = 4, max_epochs: int = 300, seed: int = 0, log=None):
    glyphs = GlyphSet.builtin(exemplars=3, height=32, seed=seed)
    words = overfit_words()
    imgs = [synth_word(glyphs, w, np.random.default_rng([seed, i]))[0] for i, w in enumerate(words)]
    data = prepare_set(imgs, words, NormalizeConfig(target_height=HEIGHT, target_width=WIDTH), normalize=False)
    cfg = ModelConfig(chars=tuple(sorted(set("".join(words)))), image_height=HEIGHT, patch_width=10, patch_step=2,
                      encoder=EncoderConfig("gru", 64, 1, True), attention_size=64, dropout=0.0, seed=seed)
    model = Seq2SeqModel(cfg)
    # regularisers off: the point is to memorise the training set
    tc = TrainConfig(batch_size=batch_size, lr0=0.001, decay=0.02, dropout=0.0, l2=0.0, augment=False,
                     teacher_forcing=True, max_epochs=max_epochs, patience=max_epochs,
                     stop_at_zero_train_wer=True, seed=seed)
    return train_loop(model, data, data, tc, log=log)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch-size", type=int, default=4)
    ap.add_argument("--max-epochs", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    t0 = time.perf_counter()
    res = run(a.batch_size, a.max_epochs, a.seed,
              log=lambda s: print(f"epoch {s.epoch:3d} loss {s.loss:.4f} train_wer {s.train_wer:.4f} "
                                  f"({time.perf_counter() - t0:.0f}s)", flush=True))
    last = res.history[-1]
    print(f"{res.stop_reason}: epoch {last.epoch}, train WER {last.train_wer}, {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
