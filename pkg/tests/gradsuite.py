"""Finite-difference checks for every differentiable op and a tiny seq2seq model.

Each case builder takes a generator and returns ``(loss_fn, leaves)``; the
loss is a random projection of the op output so every output entry matters.
"""
import numpy as np

from inkline import tensor as T
from inkline.seq2seq import EncoderConfig, ModelConfig, Seq2SeqModel, forward_train, sequence_loss

EPS = 1e-5
TOL = 1e-4


def _leaf(rng, *shape, scale=1.0):
    return T.Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _away_from_zero(rng, *shape):
    x = rng.uniform(0.1, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return T.Tensor(x, requires_grad=True)


def _distinct(rng, *shape):
    # maxima must not be within EPS of each other
    x = rng.permutation(int(np.prod(shape))).reshape(shape) * 0.05 + rng.normal(0, 0.001, size=shape)
    return T.Tensor(x, requires_grad=True)


def _project(out, rng):
    r = rng.normal(size=out.shape)
    return lambda t: T.sum(T.mul(t, r))


def unary(op, make=_leaf):
    def build(rng):
        x = make(rng, 3, 4)
        proj = _project(op(x), rng)
        return (lambda: proj(op(x))), [x]
    return build


def binary(op, sa=(3, 4), sb=(3, 4)):
    def build(rng):
        a, b = _leaf(rng, *sa), _leaf(rng, *sb)
        proj = _project(op(a, b), rng)
        return (lambda: proj(op(a, b))), [a, b]
    return build


def _log_case(rng):
    x = T.Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    proj = _project(T.log(x), rng)
    return (lambda: proj(T.log(x))), [x]


def _conv_case(stride, k=3):
    def build(rng):
        x, K, b = _leaf(rng, 2, 5, 6, 2), _leaf(rng, k, k, 2, 3, scale=0.5), _leaf(rng, 3)
        f = lambda: T.conv2d(x, K, b, stride=stride)  # noqa: E731
        proj = _project(f(), rng)
        return (lambda: proj(f())), [x, K, b]
    return build


def _maxpool_case(rng):
    x = _distinct(rng, 2, 5, 6, 2)
    proj = _project(T.maxpool2(x), rng)
    return (lambda: proj(T.maxpool2(x))), [x]


def _batchnorm_case(mode):
    def build(rng):
        x, g, b = _leaf(rng, 4, 3, 2), _leaf(rng, 2), _leaf(rng, 2)
        stats = T.RunningStats(2, "bn")
        stats.mean, stats.var = rng.normal(size=2), rng.uniform(0.5, 2, size=2)
        f = lambda: T.batchnorm(x, g, b, mode, stats)  # noqa: E731
        proj = _project(f(), rng)
        return (lambda: proj(f())), [x, g, b]
    return build


def _dropout_case(rng):
    x = _leaf(rng, 4, 5)
    seed = int(rng.integers(1 << 30))
    f = lambda: T.dropout(x, 0.5, "train", np.random.default_rng(seed))  # noqa: E731
    proj = _project(f(), rng)
    return (lambda: proj(f())), [x]


def _dense_case(rng):
    x, w, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5), _leaf(rng, 5)
    proj = _project(T.dense(x, w, b), rng)
    return (lambda: proj(T.dense(x, w, b))), [x, w, b]


def _structural_case(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 3, 2)

    def f():
        c = T.concat([a, b], axis=-1)
        s = T.stack([T.reshape(c, (2, 18)), T.reshape(T.transpose(c, (1, 0, 2)), (2, 18))], axis=0)
        picked = T.getitem(s, (slice(None), 1, [0, 3, 3, 7]))
        return T.add(T.mean(s, axis=1), T.sum(picked, axis=-1, keepdims=True))
    proj = _project(f(), rng)
    return (lambda: proj(f())), [a, b]


def _wce_case(rng):
    z = _leaf(rng, 2, 4, 5)
    tgt = rng.integers(0, 5, size=(2, 4))
    w = (rng.random((2, 4)) < 0.7).astype(float)
    w[0, 0] = 1.0
    return (lambda: T.weighted_sequence_cross_entropy(z, tgt, w)), [z]


def _gru_cell_case(rng):
    x, h = _leaf(rng, 2, 3), _leaf(rng, 2, 4)
    wx, wh, b = _leaf(rng, 3, 12, scale=0.5), _leaf(rng, 4, 12, scale=0.5), _leaf(rng, 12, scale=0.5)
    f = lambda: T.gru_cell(x, h, wx, wh, b)  # noqa: E731
    proj = _project(f(), rng)
    return (lambda: proj(f())), [x, h, wx, wh, b]


def _lstm_cell_case(rng):
    x, h, c = _leaf(rng, 2, 3), _leaf(rng, 2, 4), _leaf(rng, 2, 4)
    wx, wh, b = _leaf(rng, 3, 16, scale=0.5), _leaf(rng, 4, 16, scale=0.5), _leaf(rng, 16, scale=0.5)
    f = lambda: T.lstm_cell(x, h, c, wx, wh, b)  # noqa: E731
    proj = _project(f(), rng)
    return (lambda: proj(f())), [x, h, c, wx, wh, b]


def _sequence_case(cell, reverse):
    def build(rng):
        gates = 3 if cell == "gru" else 4
        x, h0 = _leaf(rng, 2, 4, 3), _leaf(rng, 2, 3)
        wx = _leaf(rng, 3, gates * 3, scale=0.5)
        wh, b = _leaf(rng, 3, gates * 3, scale=0.5), _leaf(rng, gates * 3, scale=0.5)
        if cell == "gru":
            f = lambda: T.gru_sequence(x, wx, wh, b, h0, reverse=reverse)  # noqa: E731
            leaves = [x, h0, wx, wh, b]
        else:
            c0 = _leaf(rng, 2, 3)
            f = lambda: T.lstm_sequence(x, wx, wh, b, h0, c0, reverse=reverse)  # noqa: E731
            leaves = [x, h0, c0, wx, wh, b]
        proj = _project(f(), rng)
        return (lambda: proj(f())), leaves
    return build


OP_CASES = {
    "add": binary(T.add, (3, 4), (4,)),
    "sub": binary(T.sub, (3, 4), (3, 1)),
    "mul": binary(T.mul),
    "matmul": binary(T.matmul, (2, 3, 4), (4, 5)),
    "matmul_vec": binary(T.matmul, (3, 4), (4,)),
    "exp": unary(T.exp),
    "log": _log_case,
    "relu": unary(T.relu, _away_from_zero),
    "tanh": unary(T.tanh),
    "sigmoid": unary(T.sigmoid),
    "softmax": unary(T.softmax),
    "log_softmax": unary(T.log_softmax),
    "structural": _structural_case,
    "dense": _dense_case,
    "conv2d": _conv_case(1),
    "conv2d_stride2": _conv_case(2),
    "conv2d_5x5": _conv_case(1, k=5),
    "maxpool2": _maxpool_case,
    "batchnorm_train": _batchnorm_case("train"),
    "batchnorm_eval": _batchnorm_case("eval"),
    "dropout": _dropout_case,
    "cross_entropy": _wce_case,
    "gru_cell": _gru_cell_case,
    "lstm_cell": _lstm_cell_case,
    "gru_sequence": _sequence_case("gru", False),
    "gru_sequence_rev": _sequence_case("gru", True),
    "lstm_sequence": _sequence_case("lstm", False),
    "lstm_sequence_rev": _sequence_case("lstm", True),
}


def tiny_model(seed=0, cell="gru"):
    """LeNet reader over two 10-wide patches, BiRNN(8), four letters plus specials."""
    cfg = ModelConfig(chars=("a", "b"), image_height=8, patch_width=10, patch_step=2,
                      encoder=EncoderConfig(cell, 8, 1, True), attention_size=6, dropout=0.0, seed=seed)
    return Seq2SeqModel(cfg)


def seq2seq_case(rng, cell="gru"):
    model = tiny_model(int(rng.integers(1 << 30)), cell)
    for p in model.parameters():
        p.data = p.data + rng.normal(0.0, 0.1, size=p.shape)  # nonzero biases too
    imgs = rng.random((2, 8, 12))
    # vocabulary of five: PAD, GO, END, a, b; three target steps each
    targets = [[model.vocab.go, 3, 4, model.vocab.end], [model.vocab.go, 4, 4, model.vocab.end]]

    def loss():
        return sequence_loss(model, forward_train(model, imgs, targets, True, "eval"), targets)
    return loss, model.parameters()


def run_case(build, rng, max_entries=None):
    loss_fn, leaves = build(rng)
    return T.gradcheck(loss_fn, leaves, eps=EPS, max_entries=max_entries, rng=rng)


def probe_smooth(loss_fn, leaves, entries: int, rng, max_draws: int = 50) -> tuple[float, int]:
    """Gradcheck on random entries, replacing those whose +-EPS interval crosses a ReLU or max-pool switch.

    An entry whose EPS difference disagrees with backprop is probed again at
    EPS/10. When the two numeric estimates disagree with each other the
    interval straddles a kink and another entry is drawn; when they agree the
    disagreement with backprop stands. The kink test compares numeric values
    only, so it cannot hide a wrong analytic gradient.
    Returns (max relative error, number of replaced entries).
    """
    for t in leaves:
        t.grad = np.zeros_like(t.data)
        t.requires_grad = True
    T.backward(loss_fn())
    f = lambda: float(loss_fn().data)  # noqa: E731
    worst, skipped = 0.0, 0
    for t in leaves:
        want, done = min(entries, t.data.size), 0
        for i in rng.permutation(t.data.size)[:max_draws]:
            analytic = t.grad.reshape(-1)[[i]]
            coarse = T.numeric_grad(f, t.data, EPS, [i]).reshape(-1)[[i]]
            err = T.relative_error(analytic, coarse)
            if err >= TOL:
                fine = T.numeric_grad(f, t.data, EPS / 10, [i]).reshape(-1)[[i]]
                if T.relative_error(coarse, fine) > TOL:
                    skipped += 1
                    continue
            worst = max(worst, err)
            done += 1
            if done == want:
                break
    return worst, skipped


def run_trial(seed: int, seq2seq_entries: int = 3) -> tuple[dict, int]:
    """One randomized pass over all cases; returns (max relative error per case, skipped kinks)."""
    rng = np.random.default_rng(seed)
    errors = {name: run_case(build, rng) for name, build in OP_CASES.items()}
    skipped = 0
    for cell in ("gru", "lstm"):
        loss, params = seq2seq_case(rng, cell)
        errors[f"seq2seq_{cell}"], k = probe_smooth(loss, params, seq2seq_entries, rng)
        skipped += k
    return errors, skipped
