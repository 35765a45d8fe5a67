"""Optimizers, learning-rate schedule, early stopping and the epoch loop with per-sample augmentation."""
from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .augment import AugmentConfig, augment, sample_seed
from .decode import Lexicon, decode_with_lexicon
from .evalkit import corpus_cer, wer
from .imaging import GrayImage
from .normalize import NormalizeConfig, crop_resize, normalize_pipeline
from .seq2seq import Seq2SeqModel, VocabError, forward_train, greedy_decode, load_blob, model_blob, sequence_loss
from .tensor import glorot_normal_init  # noqa: F401  (re-exported: initialisation lives with training)

OPTIMIZERS = ("adam", "rmsprop")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    lr0: float = 0.001
    decay: float = 0.02
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rho: float = 0.9
    dropout: float = 0.5
    l2: float = 1e-4
    patience: int = 20
    teacher_forcing: bool = True
    augment: bool = True
    seed: int = 0
    max_epochs: int = 300
    stop_at_zero_train_wer: bool = False

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be > 0")
        if not 0.0 <= self.decay < 1.0:
            raise ValueError("decay must lie in [0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.l2 < 0 or not 0.0 <= self.dropout < 1.0:
            raise ValueError("l2 must be >= 0 and dropout in [0, 1)")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    lr: float
    val_cer: float
    val_wer: float
    seconds: float
    train_wer: float | None = None


STATS_COLUMNS = ("epoch", "loss", "lr", "val_cer", "val_wer", "seconds")


def write_stats_csv(history, path) -> None:
    with open(os.fspath(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATS_COLUMNS)
        for s in history:
            w.writerow([s.epoch, repr(s.loss), repr(s.lr), repr(s.val_cer), repr(s.val_wer), f"{s.seconds:.3f}"])


# ---------------------------------------------------------------- optimizers

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """Bias-corrected Adam; returns (new parameter arrays, new state). Inputs are not modified."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and moments must align")
    t = state.t + 1
    c1, c2 = 1.0 - beta1 ** t, 1.0 - beta2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


@dataclass
class RMSPropState:
    acc: list

    @classmethod
    def zeros_like(cls, params) -> "RMSPropState":
        return cls([np.zeros_like(p) for p in params])


def rmsprop_step(params, grads, state: RMSPropState, lr: float, rho: float = 0.9, eps: float = 1e-8):
    if len(params) != len(grads) or len(params) != len(state.acc):
        raise ValueError("params, grads and accumulators must align")
    new_p, new_acc = [], []
    for p, g, a in zip(params, grads, state.acc):
        a = rho * a + (1.0 - rho) * g * g
        new_p.append(p - lr * g / (np.sqrt(a) + eps))
        new_acc.append(a)
    return new_p, RMSPropState(new_acc)


def lr_at(epoch: int, cfg: TrainConfig = TrainConfig()) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 * (1.0 - cfg.decay) ** epoch


def l2_penalty(params, lam: float) -> T.Tensor:
    """lam * sum of squared entries over all parameters."""
    total = None
    for p in params:
        term = T.sum(T.mul(p, p))
        total = term if total is None else T.add(total, term)
    return T.mul(total, lam)


# ---------------------------------------------------------------- early stopping

class EarlyStopper:
    """Tracks the minimum validation WER; a tie keeps the earlier epoch."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best_epoch: int | None = None
        self.best_value = math.inf
        self.last_epoch: int | None = None

    def update(self, epoch: int, value: float) -> bool:
        """Record an epoch; returns True when it is the new best."""
        self.last_epoch = epoch
        if value < self.best_value:
            self.best_value, self.best_epoch = value, epoch
            return True
        return False

    @property
    def should_stop(self) -> bool:
        return self.best_epoch is not None and self.last_epoch - self.best_epoch >= self.patience


# ---------------------------------------------------------------- data

@dataclass
class WordSet:
    """Model-ready images (ink bright, fixed size) and their transcriptions."""

    images: np.ndarray
    texts: list

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 3:
            raise ValueError("images must be stacked as [N, H, W]")
        if len(self.texts) != len(self.images):
            raise ValueError("image and transcription counts differ")

    def __len__(self):
        return len(self.texts)

    def subset(self, idx) -> "WordSet":
        idx = list(idx)
        return WordSet(self.images[idx], [self.texts[i] for i in idx])


def prepare_image(img: GrayImage, cfg: NormalizeConfig, normalize: bool = True) -> np.ndarray:
    """Full normalization, or just crop/resize, ending with bright ink on black."""
    if normalize:
        return normalize_pipeline(img, cfg).pixels
    return 1.0 - crop_resize(img, cfg).pixels


def prepare_set(imgs, texts, cfg: NormalizeConfig, normalize: bool = True) -> WordSet:
    return WordSet(np.stack([prepare_image(i, cfg, normalize) for i in imgs]), list(texts))


def augment_batch(images: np.ndarray, idx, epoch: int, cfg: AugmentConfig, seed: int) -> np.ndarray:
    """Augment model-ready images; each sample's randomness depends only on (seed, epoch, index)."""
    out = np.empty((len(idx),) + images.shape[1:])
    for k, i in enumerate(idx):
        dark = GrayImage(1.0 - images[i])
        out[k] = 1.0 - augment(dark, cfg, sample_seed(seed, epoch, int(i))).pixels
    return out


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalRecord:
    index: int
    prediction: str
    reference: str
    lexicon_prediction: str | None = None
    error: str | None = None


@dataclass
class EvalResult:
    cer: float
    wer: float
    records: list
    lexicon_cer: float | None = None
    lexicon_wer: float | None = None


def predict(model: Seq2SeqModel, images: np.ndarray, batch_size: int = 64, max_len: int = 32) -> list[str]:
    out = []
    for s in range(0, len(images), batch_size):
        out.extend(greedy_decode(model, images[s: s + batch_size], max_len).texts)
    return out


def evaluate(model: Seq2SeqModel, data: WordSet, lexicon: Lexicon | None = None,
             batch_size: int = 64, max_len: int | None = None) -> EvalResult:
    """Greedy decoding then corpus CER and WER; references outside the vocabulary are flagged per record."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    if max_len is None:
        max_len = max(32, max(len(t) for t in data.texts) + 8)
    preds = predict(model, data.images, batch_size, max_len)
    records = []
    for i, (p, r) in enumerate(zip(preds, data.texts)):
        err = None
        try:
            model.vocab.encode(r)
        except VocabError as exc:
            err = str(exc)
        records.append(EvalRecord(i, p, r, error=err))
    result = EvalResult(corpus_cer(preds, data.texts), wer(preds, data.texts), records)
    if lexicon is not None:
        snapped, _ = decode_with_lexicon(preds, lexicon)
        for rec, s in zip(records, snapped):
            rec.lexicon_prediction = s
        result.lexicon_cer = corpus_cer(snapped, data.texts)
        result.lexicon_wer = wer(snapped, data.texts)
    return result


# ---------------------------------------------------------------- the loop

class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    best_checkpoint: bytes
    best_epoch: int
    best_val_wer: float
    history: list = field(default_factory=list)
    stop_reason: str = "max_epochs"


def _encode_targets(model: Seq2SeqModel, texts) -> list:
    try:
        return [[model.vocab.go] + model.vocab.encode(t) for t in texts]
    except VocabError as exc:
        raise ValueError(f"training transcription not encodable: {exc}") from None


def train_loop(model: Seq2SeqModel, train: WordSet, val: WordSet, cfg: TrainConfig,
               aug_cfg: AugmentConfig | None = None, log=None) -> TrainResult:
    """Mini-batch training with early stopping on validation WER (no lexicon).

    Epoch e shuffles with a generator seeded by (seed, e), augments each sample
    from (seed, e, index) and steps at lr_at(e). The model is left holding the
    best checkpoint's weights.
    """
    if len(train) == 0 or len(val) == 0:
        raise ValueError("train and validation sets must be nonempty")
    targets = _encode_targets(model, train.texts)
    if model.cfg.dropout != cfg.dropout:
        model.cfg = replace(model.cfg, dropout=cfg.dropout)
    params = model.parameters()
    if cfg.optimizer == "adam":
        state = AdamState.zeros_like([p.data for p in params])
    else:
        state = RMSPropState.zeros_like([p.data for p in params])
    aug_cfg = aug_cfg or AugmentConfig()
    stopper = EarlyStopper(cfg.patience)
    history, best_blob = [], None
    reason = "max_epochs"
    max_len = max(32, max(len(t) for t in train.texts + val.texts) + 8)
    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        lr = lr_at(epoch, cfg)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train))
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start: start + cfg.batch_size]
            if cfg.augment:
                x = augment_batch(train.images, idx, epoch, aug_cfg, cfg.seed)
            else:
                x = train.images[idx]
            tg = [targets[i] for i in idx]
            for p in params:
                p.zero_grad()
            drop_rng = np.random.default_rng([cfg.seed, epoch, b, 1])
            result = forward_train(model, x, tg, cfg.teacher_forcing, "train", drop_rng)
            loss = sequence_loss(model, result, tg)
            if cfg.l2 > 0:
                loss = T.add(loss, l2_penalty(params, cfg.l2))
            value = float(loss.data)
            if not math.isfinite(value):
                norms = {p.name: float(np.abs(p.data).max()) for p in params}
                worst = max(norms, key=norms.get)
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}, lr {lr:.3g}; "
                                       f"largest weight {worst}={norms[worst]:.3g}")
            T.backward(loss)
            grads = [p.grad for p in params]
            if cfg.optimizer == "adam":
                new, state = adam_step([p.data for p in params], grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            else:
                new, state = rmsprop_step([p.data for p in params], grads, state, lr, cfg.rho, cfg.eps)
            for p, d in zip(params, new):
                p.data = d
            total += value * len(idx)
            seen += len(idx)
        ev = evaluate(model, val, max_len=max_len)
        train_wer = None
        if cfg.stop_at_zero_train_wer:
            # an overfit run may validate on its own training set; decode it once
            train_wer = ev.wer if val is train else wer(predict(model, train.images, max_len=max_len), train.texts)
        stats = EpochStats(epoch, total / seen, lr, ev.cer, ev.wer, time.perf_counter() - t0, train_wer)
        history.append(stats)
        if log is not None:
            log(stats)
        if stopper.update(epoch, ev.wer):
            best_blob = model_blob(model, {"epoch": epoch, "val_wer": ev.wer})
        if cfg.stop_at_zero_train_wer and train_wer == 0.0:
            reason = "train_wer_zero"
            break
        if stopper.should_stop:
            reason = "patience"
            break
    load_blob(model, best_blob)
    return TrainResult(best_blob, stopper.best_epoch, stopper.best_value, history, reason)
