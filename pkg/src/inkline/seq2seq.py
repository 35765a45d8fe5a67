"""Convolutional reader + recurrent encoder + content attention + character decoder."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .convnets import PatchSpec, build_lenet_reader, build_vgg, patch_array, read_fullimage, read_patches
from .imaging import GrayImage
from .tensor import Parameter, glorot_normal_init

PAD, GO, END = "<pad>", "<go>", "<end>"
SPECIALS = (PAD, GO, END)


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class CharVocab:
    chars: tuple

    def __post_init__(self):
        chars = tuple(self.chars)
        if len(set(chars)) != len(chars):
            raise VocabError("duplicate characters in vocabulary")
        if any(c in SPECIALS for c in chars):
            raise VocabError("vocabulary characters clash with reserved tokens")
        object.__setattr__(self, "chars", chars)
        object.__setattr__(self, "_index", {c: i + len(SPECIALS) for i, c in enumerate(chars)})

    @classmethod
    def from_texts(cls, texts) -> "CharVocab":
        return cls(tuple(sorted({c for t in texts for c in t})))

    pad = 0
    go = 1
    end = 2

    @property
    def size(self) -> int:
        return len(SPECIALS) + len(self.chars)

    def token(self, i: int) -> str:
        return SPECIALS[i] if i < len(SPECIALS) else self.chars[i - len(SPECIALS)]

    def encode(self, text: str, add_end: bool = True) -> list[int]:
        try:
            ids = [self._index[c] for c in text]
        except KeyError as exc:
            raise VocabError(f"character {exc.args[0]!r} is not in the vocabulary") from None
        return ids + [self.end] if add_end else ids

    def decode(self, ids) -> str:
        """Characters up to the first END; reserved tokens are dropped."""
        out = []
        for i in ids:
            i = int(i)
            if i == self.end:
                break
            if i >= len(SPECIALS):
                out.append(self.chars[i - len(SPECIALS)])
        return "".join(out)


@dataclass(frozen=True)
class EncoderConfig:
    cell: str = "gru"
    size: int = 64
    layers: int = 1
    bidirectional: bool = True

    def __post_init__(self):
        if self.cell not in ("gru", "lstm"):
            raise ValueError("cell must be 'gru' or 'lstm'")
        if self.size < 1 or self.layers < 1:
            raise ValueError("encoder size and layers must be >= 1")

    @property
    def gates(self) -> int:
        return 3 if self.cell == "gru" else 4

    @property
    def out_size(self) -> int:
        return self.size * (2 if self.bidirectional else 1)


@dataclass(frozen=True)
class ModelConfig:
    chars: tuple = ()
    image_height: int = 48
    reader: str = "lenet"
    features: str = "patches"
    patch_width: int = 10
    patch_step: int = 2
    vgg_blocks: int = 3
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    attention_size: int = 64
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.reader not in ("lenet", "vgg"):
            raise ValueError("reader must be 'lenet' or 'vgg'")
        if self.features not in ("patches", "fullimage"):
            raise ValueError("features must be 'patches' or 'fullimage'")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if isinstance(self.encoder, dict):
            object.__setattr__(self, "encoder", EncoderConfig(**self.encoder))
        object.__setattr__(self, "chars", tuple(self.chars))

    @property
    def patch(self) -> PatchSpec:
        return PatchSpec(self.patch_width, self.patch_step)

    def to_json(self) -> dict:
        d = asdict(self)
        d["chars"] = list(self.chars)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["encoder"] = EncoderConfig(**d["encoder"])
        d["chars"] = tuple(d["chars"])
        return cls(**d)


@dataclass
class AttentionParams:
    W: Parameter
    V: Parameter
    w: Parameter
    b: Parameter

    def __post_init__(self):
        a = self.W.shape[1]
        if self.V.shape[1] != a or self.w.shape != (a,) or self.b.shape != (a,):
            raise T.ShapeError("attention dimensions disagree")


@dataclass
class RecurrentParams:
    w_x: Parameter
    w_h: Parameter
    b: Parameter


def _recurrent(name: str, n_in: int, size: int, gates: int, rng) -> RecurrentParams:
    b = np.zeros(gates * size)
    if gates == 4:
        b[:size] = 1.0  # forget gate starts open
    return RecurrentParams(
        Parameter(glorot_normal_init((n_in, gates * size), n_in, gates * size, rng), f"{name}.w_x"),
        Parameter(glorot_normal_init((size, gates * size), size, gates * size, rng), f"{name}.w_h"),
        Parameter(b, f"{name}.b"),
    )


# ---------------------------------------------------------------- cells

def lstm_step(x, state, p: RecurrentParams):
    """(h, C) -> (h', C') with forget/input/output gates and a tanh candidate."""
    h, c = state
    out = T.lstm_cell(x, h, c, p.w_x, p.w_h, p.b)
    H = p.w_h.shape[0]
    return T.getitem(out, (Ellipsis, slice(0, H))), T.getitem(out, (Ellipsis, slice(H, 2 * H)))


def gru_step(x, h, p: RecurrentParams):
    return T.gru_cell(x, h, p.w_x, p.w_h, p.b)


# ---------------------------------------------------------------- encoder

class Encoder:
    def __init__(self, cfg: EncoderConfig, n_in: int, rng):
        self.cfg = cfg
        self.layers = []
        for layer in range(cfg.layers):
            dirs = [_recurrent(f"enc{layer}.fw", n_in, cfg.size, cfg.gates, rng)]
            if cfg.bidirectional:
                dirs.append(_recurrent(f"enc{layer}.bw", n_in, cfg.size, cfg.gates, rng))
            self.layers.append(dirs)
            n_in = cfg.out_size

    def parameters(self) -> list[Parameter]:
        return [q for dirs in self.layers for p in dirs for q in (p.w_x, p.w_h, p.b)]


def _run_direction(cfg: EncoderConfig, x, p: RecurrentParams, reverse: bool):
    H = cfg.size
    if cfg.cell == "gru":
        seq = T.gru_sequence(x, p.w_x, p.w_h, p.b, reverse=reverse)
        return seq, seq
    both = T.lstm_sequence(x, p.w_x, p.w_h, p.b, reverse=reverse)
    return T.getitem(both, (Ellipsis, slice(0, H))), both


def run_encoder(encoder: Encoder, features, mode: str = "eval", rate: float = 0.0, rng=None):
    """Stacked (bi)directional recurrent layers over features [B, n, F].

    Returns (H [B, n, size * directions], last_state) where last_state is the
    forward direction's final state of the top layer: h for a GRU, (h, C) for an LSTM.
    Initial states are zero.
    """
    x = T.as_tensor(features)
    if x.ndim != 3 or x.shape[1] == 0:
        raise ValueError("encoder needs a nonempty [B, n, F] sequence")
    cfg = encoder.cfg
    H = cfg.size
    last = None
    for li, dirs in enumerate(encoder.layers):
        fw_h, fw_raw = _run_direction(cfg, x, dirs[0], reverse=False)
        if cfg.bidirectional:
            bw_h, _ = _run_direction(cfg, x, dirs[1], reverse=True)
            out = T.concat([fw_h, bw_h], axis=-1)
        else:
            out = fw_h
        if li == len(encoder.layers) - 1:
            final = T.getitem(fw_raw, (slice(None), -1))
            if cfg.cell == "gru":
                last = final
            else:
                last = (T.getitem(final, (Ellipsis, slice(0, H))), T.getitem(final, (Ellipsis, slice(H, 2 * H))))
        x = T.dropout(out, rate, mode, rng) if rate > 0 else out
    return x, last


# ---------------------------------------------------------------- attention / decoder

def attention_scores_precompute(Hs, p: AttentionParams):
    """W h^e_i for every encoder position; shared by all decoder steps."""
    return T.matmul(Hs, p.W)


def attention(Hs, h_prev, p: AttentionParams, WH=None):
    """e_i = w . tanh(W h^e_i + V h^d + b); a = softmax(e); c = sum_i a_i h^e_i.

    Hs: [B, n, d]; h_prev: [B, H]. Returns (c [B, d], a [B, n]).
    """
    Hs, h_prev = T.as_tensor(Hs), T.as_tensor(h_prev)
    if Hs.shape[1] == 0:
        raise ValueError("attention over an empty sequence")
    WH = attention_scores_precompute(Hs, p) if WH is None else WH
    B = Hs.shape[0]
    vh = T.reshape(T.matmul(h_prev, p.V), (B, 1, -1))
    e = T.matmul(T.tanh(T.add(T.add(WH, vh), p.b)), T.reshape(p.w, (-1, 1)))
    a = T.softmax(T.reshape(e, (B, -1)), axis=-1)
    c = T.matmul(T.reshape(a, (B, 1, -1)), Hs)
    return T.reshape(c, (B, -1)), a


class Seq2SeqModel:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.vocab = CharVocab(cfg.chars)
        rng = np.random.default_rng(cfg.seed)
        H = cfg.image_height
        if cfg.features == "patches":
            hw = (H, cfg.patch_width)
        else:
            hw = (H, max(H, 8))
        if cfg.reader == "lenet":
            self.reader = build_lenet_reader(hw, seed=rng)
        else:
            self.reader = build_vgg(cfg.vgg_blocks, hw, classes=None, seed=rng)
        h_out, w_out, c_out = self.reader.output_shape()
        n_feat = h_out * w_out * c_out if cfg.features == "patches" else h_out * c_out
        enc = cfg.encoder
        self.encoder = Encoder(enc, n_feat, rng)
        d = enc.out_size
        A = cfg.attention_size
        self.attn = AttentionParams(
            Parameter(glorot_normal_init((d, A), d, A, rng), "attn.W"),
            Parameter(glorot_normal_init((enc.size, A), enc.size, A, rng), "attn.V"),
            Parameter(glorot_normal_init((A,), A, 1, rng), "attn.w"),
            Parameter(np.zeros(A), "attn.b"),
        )
        V = self.vocab.size
        self.decoder = _recurrent("dec", V + d, enc.size, enc.gates, rng)
        self.out_w = Parameter(glorot_normal_init((enc.size, V), enc.size, V, rng), "out.weight")
        self.out_b = Parameter(np.zeros(V), "out.bias")
        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise ValueError("parameter names must be unique")

    def parameters(self) -> list[Parameter]:
        return (self.reader.parameters() + self.encoder.parameters()
                + [self.attn.W, self.attn.V, self.attn.w, self.attn.b]
                + [self.decoder.w_x, self.decoder.w_h, self.decoder.b, self.out_w, self.out_b])

    def running_stats(self):
        return self.reader.running_stats()

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _as_batch(imgs) -> np.ndarray:
    if isinstance(imgs, GrayImage):
        return imgs.pixels[None]
    if isinstance(imgs, (list, tuple)):
        return np.stack([i.pixels if isinstance(i, GrayImage) else np.asarray(i, dtype=np.float64) for i in imgs])
    arr = np.asarray(imgs, dtype=np.float64)
    return arr[None] if arr.ndim == 2 else arr


def encode_images(model: Seq2SeqModel, imgs, mode: str = "eval", rng=None):
    """Reader then encoder; returns (H [B, n, d], last_state)."""
    cfg = model.cfg
    batch = _as_batch(imgs)
    if batch.shape[1] != cfg.image_height:
        raise T.ShapeError(f"images must be {cfg.image_height} pixels high, got {batch.shape[1]}")
    if cfg.features == "patches":
        feats = read_patches(model.reader, patch_array(batch, cfg.patch), mode, rng)
    else:
        feats = read_fullimage(model.reader, batch, mode, rng)
    rate = cfg.dropout if mode == "train" else 0.0
    if rate > 0:
        feats = T.dropout(feats, rate, mode, rng)
    return run_encoder(model.encoder, feats, mode, rate, rng)


def _one_hot(ids, V: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise IndexError("token index out of vocabulary")
    out = np.zeros(ids.shape + (V,))
    np.put_along_axis(out, ids[..., None], 1.0, axis=-1)
    return out


def decoder_step(model: Seq2SeqModel, prev_tokens, context, state):
    """concat(one-hot(prev), context) -> one recurrent step -> logits = dense(h).

    ``state`` is h (GRU) or (h, C) (LSTM). Returns (logits [B, V], new state).
    """
    V = model.vocab.size
    x = T.concat([T.Tensor(_one_hot(prev_tokens, V)), T.as_tensor(context)], axis=-1)
    if model.cfg.encoder.cell == "gru":
        new_state = gru_step(x, state, model.decoder)
        h = new_state
    else:
        new_state = lstm_step(x, state, model.decoder)
        h = new_state[0]
    return T.dense(h, model.out_w, model.out_b), new_state


def _state_h(model, state):
    return state if model.cfg.encoder.cell == "gru" else state[0]


@dataclass
class ForwardResult:
    logits: T.Tensor            # [B, T, V]
    attention: list             # per step, [B, n] arrays
    init_state: object = None


def pad_targets(targets, vocab: CharVocab) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad token lists with PAD; weights are 1 on real tokens and 0 on padding."""
    seqs = [list(t[1:]) if len(t) and t[0] == vocab.go else list(t) for t in targets]
    if not seqs or any(len(s) == 0 for s in seqs):
        raise ValueError("empty target sequence")
    if any(s[-1] != vocab.end for s in seqs):
        raise ValueError("every target must end with END")
    Tm = max(len(s) for s in seqs)
    ids = np.full((len(seqs), Tm), vocab.pad, dtype=np.intp)
    weights = np.zeros((len(seqs), Tm))
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        weights[i, : len(s)] = 1.0
    return ids, weights


def forward_train(model: Seq2SeqModel, imgs, targets, teacher_forcing: bool = True,
                  mode: str = "train", rng=None) -> ForwardResult:
    """One logits row per target position; a leading GO in a target is ignored.

    With teacher forcing, step t is fed target[t-1]; otherwise the argmax of step t-1.
    """
    ids, _ = pad_targets(targets, model.vocab)
    B, Tm = ids.shape
    Hs, state = encode_images(model, imgs, mode, rng)
    if Hs.shape[0] != B:
        raise T.ShapeError("number of images and targets differ")
    init = state
    WH = attention_scores_precompute(Hs, model.attn)
    prev = np.full(B, model.vocab.go, dtype=np.intp)
    steps, attn = [], []
    for t in range(Tm):
        ctx, a = attention(Hs, _state_h(model, state), model.attn, WH)
        logits, state = decoder_step(model, prev, ctx, state)
        steps.append(logits)
        attn.append(a.data)
        prev = ids[:, t] if teacher_forcing else np.argmax(logits.data, axis=-1)
    return ForwardResult(T.stack(steps, axis=1), attn, init)


def sequence_loss(model: Seq2SeqModel, result: ForwardResult, targets):
    ids, weights = pad_targets(targets, model.vocab)
    return T.weighted_sequence_cross_entropy(result.logits, ids, weights)


@dataclass
class Decoded:
    texts: list
    tokens: list
    attention: list  # per sample, [steps, n] weight matrix


def greedy_decode(model: Seq2SeqModel, imgs, max_len: int = 32) -> Decoded:
    """Argmax decoding from GO until END or ``max_len`` steps (lowest index wins ties)."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    Hs, state = encode_images(model, imgs, "eval")
    B = Hs.shape[0]
    WH = attention_scores_precompute(Hs, model.attn)
    prev = np.full(B, model.vocab.go, dtype=np.intp)
    done = np.zeros(B, dtype=bool)
    tokens = [[] for _ in range(B)]
    weights = [[] for _ in range(B)]
    for _ in range(max_len):
        ctx, a = attention(Hs, _state_h(model, state), model.attn, WH)
        logits, state = decoder_step(model, prev, ctx, state)
        prev = np.argmax(logits.data, axis=-1)
        for i in range(B):
            if not done[i]:
                tokens[i].append(int(prev[i]))
                weights[i].append(a.data[i].copy())
                done[i] = prev[i] == model.vocab.end
        if done.all():
            break
    texts = [model.vocab.decode(t) for t in tokens]
    return Decoded(texts, tokens, [np.array(w) for w in weights])


def attention_csv(matrix: np.ndarray, text: str) -> str:
    """One row per decoded step (labelled with its character), one column per encoder position."""
    labels = list(text) + ["<end>"]
    rows = ["step," + ",".join(f"x{i}" for i in range(matrix.shape[1]))]
    for k, row in enumerate(matrix):
        label = labels[k] if k < len(labels) else "<pad>"
        rows.append(f"{label}," + ",".join(f"{v:.6f}" for v in row))
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------- checkpoints

def model_blob(model: Seq2SeqModel, extra: dict | None = None) -> bytes:
    header = {"kind": "seq2seq", "config": model.cfg.to_json(), **(extra or {})}
    return T.dump_checkpoint(model.parameters(), model.running_stats(), header)


def load_blob(model: Seq2SeqModel, blob: bytes) -> dict:
    """Copy weights from checkpoint bytes into an existing model of the same shape."""
    header, arrays, buffers = T.parse_checkpoint(blob)
    T.load_into(model.parameters(), model.running_stats(), arrays, buffers)
    return header


def save_model(model: Seq2SeqModel, path, extra: dict | None = None) -> None:
    blob = model_blob(model, extra)
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_model(path) -> tuple[Seq2SeqModel, dict]:
    with open(os.fspath(path), "rb") as fh:
        header, arrays, buffers = T.parse_checkpoint(fh.read())
    if header.get("kind") != "seq2seq":
        raise T.CheckpointError("checkpoint does not hold a seq2seq model")
    model = Seq2SeqModel(ModelConfig.from_json(header["config"]))
    T.load_into(model.parameters(), model.running_stats(), arrays, buffers)
    return model, header


def config_json(cfg: ModelConfig) -> str:
    return json.dumps(cfg.to_json(), sort_keys=True)
