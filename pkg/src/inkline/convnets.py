"""LeNet, VGG and ResNet builders plus the two ways of turning a word image into a feature sequence.

All layers work on batched channel-last tensors [B, h, w, c].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .imaging import GrayImage
from .tensor import Parameter, RunningStats, glorot_normal_init


@dataclass(frozen=True)
class LayerRow:
    name: str
    kind: str
    shape: tuple
    params: int


@dataclass(frozen=True)
class PatchSpec:
    width: int = 10
    step: int = 2

    def __post_init__(self):
        if self.width < 5:
            raise ValueError("patch width must be >= 5")
        if not 1 <= self.step <= self.width:
            raise ValueError("patch step must lie in [1, width]")


@dataclass(frozen=True)
class ConvArchSpec:
    family: str
    feature_maps: tuple
    dense: tuple
    blocks: int
    classes: int | None


class Layer:
    name = ""
    kind = ""

    def parameters(self) -> list[Parameter]:
        return []

    def running_stats(self) -> list[RunningStats]:
        return []

    def param_count(self) -> int:
        # running statistics are counted like the table in the original model summaries does
        return sum(p.data.size for p in self.parameters()) + sum(2 * s.mean.size for s in self.running_stats())

    def out_shape(self, shape: tuple) -> tuple:
        return shape

    def rows(self, shape: tuple) -> list[LayerRow]:
        return [LayerRow(self.name, self.kind, self.out_shape(shape), self.param_count())]

    def __call__(self, x, mode: str, rng):
        raise NotImplementedError


class Conv2D(Layer):
    def __init__(self, name: str, k: int, c_in: int, c_out: int, rng, bias: bool = False,
                 stride: int = 1, relu: bool = True):
        self.name, self.kind = name, "Convolution2D(ReLU)" if relu else "Convolution2D"
        self.k, self.stride, self.relu = k, stride, relu
        self.kernel = Parameter(glorot_normal_init((k, k, c_in, c_out), k * k * c_in, k * k * c_out, rng),
                                f"{name}.kernel")
        self.bias = Parameter(np.zeros(c_out), f"{name}.bias") if bias else None

    def parameters(self):
        return [self.kernel] + ([self.bias] if self.bias is not None else [])

    def out_shape(self, shape):
        h, w, _ = shape
        return (-(-h // self.stride), -(-w // self.stride), self.kernel.shape[3])

    def __call__(self, x, mode, rng):
        y = T.conv2d(x, self.kernel, self.bias, stride=self.stride)
        return T.relu(y) if self.relu else y


class MaxPool(Layer):
    kind = "MaxPooling2D"

    def __init__(self, name: str):
        self.name = name

    def out_shape(self, shape):
        h, w, c = shape
        return (-(-h // 2), -(-w // 2), c)

    def __call__(self, x, mode, rng):
        return T.maxpool2(x)


class BatchNorm(Layer):
    kind = "BatchNormalization"

    def __init__(self, name: str, channels: int):
        self.name = name
        self.gamma = Parameter(np.ones(channels), f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels), f"{name}.beta")
        self.stats = RunningStats(channels, name)

    def parameters(self):
        return [self.gamma, self.beta]

    def running_stats(self):
        return [self.stats]

    def __call__(self, x, mode, rng):
        return T.batchnorm(x, self.gamma, self.beta, mode, self.stats)


class Flatten(Layer):
    kind = "Flatten"

    def __init__(self, name: str = "flatten"):
        self.name = name

    def out_shape(self, shape):
        return (int(np.prod(shape)),)

    def __call__(self, x, mode, rng):
        return T.reshape(x, (x.shape[0], -1))


class Dense(Layer):
    def __init__(self, name: str, n_in: int, n_out: int, rng, activation: str | None = "relu"):
        self.name = name
        self.activation = activation
        self.kind = {"relu": "Dense(ReLU)", "softmax": "Dense(Softmax)", None: "Dense"}[activation]
        self.weight = Parameter(glorot_normal_init((n_in, n_out), n_in, n_out, rng), f"{name}.weight")
        self.bias = Parameter(np.zeros(n_out), f"{name}.bias")

    def parameters(self):
        return [self.weight, self.bias]

    def out_shape(self, shape):
        return (self.weight.shape[1],)

    def __call__(self, x, mode, rng, logits: bool = False):
        y = T.dense(x, self.weight, self.bias)
        if self.activation == "relu":
            return T.relu(y)
        if self.activation == "softmax" and not logits:
            return T.softmax(y)
        return y


class ResidualModule(Layer):
    """BN/conv 1x1 -> BN/conv 3x3 -> BN/conv 1x1 with an additive skip.

    ``order="post"`` applies each convolution to the normalised input and
    rectifies its output; ``order="pre"`` rectifies before convolving.
    A stride above 1 subsamples both the first 1x1 convolution and the skip.
    """

    kind = "Add"

    def __init__(self, index: int, channels: int, inner: int, rng, stride: int = 1, order: str = "post",
                 first_bn: str | None = None):
        if order not in ("pre", "post"):
            raise ValueError("order must be 'pre' or 'post'")
        i = index
        self.name = f"add{i}"
        self.index, self.stride, self.order = i, stride, order
        post = order == "post"
        self.stages = [
            (BatchNorm(first_bn or f"bn{i}a", channels), Conv2D(f"conv{i}a", 1, channels, inner, rng, stride=stride, relu=post)),
            (BatchNorm(f"bn{i}b", inner), Conv2D(f"conv{i}b", 3, inner, inner, rng, relu=post)),
            (BatchNorm(f"bn{i}c", inner), Conv2D(f"conv{i}c", 1, inner, channels, rng, bias=True, relu=post)),
        ]

    def sublayers(self) -> list[Layer]:
        return [layer for pair in self.stages for layer in pair]

    def parameters(self):
        return [p for layer in self.sublayers() for p in layer.parameters()]

    def running_stats(self):
        return [s for layer in self.sublayers() for s in layer.running_stats()]

    def out_shape(self, shape):
        for layer in self.sublayers():
            shape = layer.out_shape(shape)
        return shape

    def rows(self, shape):
        out = []
        for layer in self.sublayers():
            shape = layer.out_shape(shape)
            out.append(LayerRow(layer.name, layer.kind, shape, layer.param_count()))
        out.append(LayerRow(self.name, self.kind, shape, 0))
        return out

    def __call__(self, x, mode, rng):
        y = x
        for bn, conv in self.stages:
            y = bn(y, mode, rng)
            if self.order == "pre":
                y = T.relu(y)
            y = conv(y, mode, rng)
        skip = x if self.stride == 1 else T.getitem(x, (slice(None), slice(None, None, self.stride),
                                                        slice(None, None, self.stride)))
        if skip.shape != y.shape:
            raise T.ShapeError(f"residual shapes differ: {skip.shape} vs {y.shape}")
        return T.add(y, skip)


class ConvNet:
    """A sequential stack of layers applied to [B, h, w, c] inputs."""

    def __init__(self, arch: ConvArchSpec, layers: list[Layer], input_shape: tuple):
        self.arch = arch
        self.layers = layers
        self.input_shape = tuple(input_shape)
        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise ValueError("parameter names must be unique")

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def running_stats(self) -> list[RunningStats]:
        return [s for layer in self.layers for s in layer.running_stats()]

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def output_shape(self, input_shape: tuple | None = None) -> tuple:
        shape = self.input_shape if input_shape is None else tuple(input_shape)
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape

    def summary(self) -> list[LayerRow]:
        shape = self.input_shape
        rows = [LayerRow("input", "InputLayer", shape, 0)]
        for layer in self.layers:
            rows.extend(layer.rows(shape))
            shape = layer.out_shape(shape)
        return rows

    def format_summary(self) -> str:
        rows = self.summary()
        lines = [f"{'name':<10} {'type':<22} {'output shape':<16} {'params':>12}"]
        for r in rows:
            lines.append(f"{r.name:<10} {r.kind:<22} {str(r.shape):<16} {r.params:>12,}")
        lines.append(f"total parameters: {self.param_count():,}")
        return "\n".join(lines)

    def __call__(self, x, mode: str = "eval", rng=None, logits: bool = False):
        x = T.as_tensor(x)
        if x.ndim == 3:
            x = T.reshape(x, x.shape + (1,))
        for layer in self.layers:
            if isinstance(layer, Dense) and layer is self.layers[-1]:
                x = layer(x, mode, rng, logits=logits)
            else:
                x = layer(x, mode, rng)
        return x


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _check_pools(h: int, w: int, pools: int):
    if min(h, w) < 2 ** pools:
        raise ValueError(f"input {h}x{w} is too small for {pools} pooling stages")


def _lenet_convs(rng) -> list[Layer]:
    return [Conv2D("conv1", 5, 1, 20, rng), MaxPool("pool1"), Conv2D("conv2", 5, 20, 50, rng), MaxPool("pool2")]


def _dense_head(n_in: int, sizes: tuple, classes: int, rng) -> list[Layer]:
    layers: list[Layer] = [Flatten()]
    for i, n in enumerate(sizes, 1):
        layers.append(Dense(f"dense{i}", n_in, n, rng))
        n_in = n
    layers.append(Dense("output", n_in, classes, rng, activation="softmax"))
    return layers


def default_dense_sizes(classes: int) -> tuple[int, int]:
    return (256, 128) if classes <= 10 else (512, 256)


def build_lenet_classifier(input_hw=(28, 28), dense1: int = 256, dense2: int = 128, classes: int = 10,
                           seed=0) -> ConvNet:
    h, w = input_hw
    if min(h, w) < 8:
        raise ValueError("LeNet classifier needs an input of at least 8x8")
    rng = _rng(seed)
    layers = _lenet_convs(rng)
    flat = int(np.prod(ConvNet(None, list(layers), (h, w, 1)).output_shape()))
    layers += _dense_head(flat, (dense1, dense2), classes, rng)
    return ConvNet(ConvArchSpec("LeNet", (20, 50), (dense1, dense2), 2, classes), layers, (h, w, 1))


def build_lenet_reader(patch_hw=(48, 10), seed=0) -> ConvNet:
    """LeNet without its dense layers; outputs the last pooled feature maps."""
    h, w = patch_hw
    if w < 5:
        raise ValueError("LeNet reader needs a patch width of at least 5")
    if h < 4:
        raise ValueError("LeNet reader needs a patch height of at least 4")
    rng = _rng(seed)
    return ConvNet(ConvArchSpec("LeNet", (20, 50), (), 2, None), _lenet_convs(rng), (h, w, 1))


def build_vgg(blocks: int = 3, input_hw=(64, 64), dense: tuple | None = None, classes: int | None = 52,
              seed=0) -> ConvNet:
    """conv3x3-conv3x3-pool blocks with 32, 64, 128, ... maps; a reader when ``classes`` is None."""
    if blocks not in (2, 3, 4):
        raise ValueError("VGG blocks must be 2, 3 or 4")
    h, w = input_hw
    _check_pools(h, w, blocks)
    rng = _rng(seed)
    layers: list[Layer] = []
    c_in = 1
    maps = tuple(32 * 2 ** i for i in range(blocks))
    n = 0
    for b, c in enumerate(maps, 1):
        for _ in range(2):
            n += 1
            layers.append(Conv2D(f"conv{n}", 3, c_in, c, rng))
            c_in = c
        layers.append(MaxPool(f"pool{b}"))
    if classes is None:
        return ConvNet(ConvArchSpec("VGG", maps, (), blocks, None), layers, (h, w, 1))
    dense = default_dense_sizes(classes) if dense is None else tuple(dense)
    flat = int(np.prod(ConvNet(None, list(layers), (h, w, 1)).output_shape()))
    layers += _dense_head(flat, dense, classes, rng)
    return ConvNet(ConvArchSpec("VGG", maps, dense, blocks, classes), layers, (h, w, 1))


def build_resnet(blocks: int = 3, input_hw=(64, 64), classes: int = 26, dense: tuple | None = None,
                 seed=0, order: str = "post") -> ConvNet:
    """Stem conv (16 maps), a downsampling entry module, ``blocks`` further modules, final BN and dense head."""
    if blocks < 1:
        raise ValueError("ResNet needs at least one block")
    h, w = input_hw
    _check_pools(h, w, 1)
    rng = _rng(seed)
    layers: list[Layer] = [Conv2D("conv0", 3, 1, 16, rng)]
    layers.append(ResidualModule(1, 16, 8, rng, stride=2, order=order, first_bn="bn0"))
    for i in range(2, blocks + 2):
        layers.append(ResidualModule(i, 16, 8, rng, order=order))
    layers.append(BatchNorm("bnF", 16))
    dense = default_dense_sizes(classes) if dense is None else tuple(dense)
    flat = int(np.prod(ConvNet(None, list(layers), (h, w, 1)).output_shape()))
    layers += _dense_head(flat, dense, classes, rng)
    return ConvNet(ConvArchSpec("ResNet", (16, 8, 16), dense, blocks, classes), layers, (h, w, 1))


# ---------------------------------------------------------------- feature sequences

def extract_patches(img: GrayImage, spec: PatchSpec) -> list[GrayImage]:
    """Left-to-right sliding window; count = floor((W - width) / step) + 1."""
    return [GrayImage(p) for p in patch_array(img.pixels, spec)]


def patch_array(pixels: np.ndarray, spec: PatchSpec) -> np.ndarray:
    """Patches of a [h, W] (or [B, h, W]) raster as a read-only view [(B,) n, h, width]."""
    W = pixels.shape[-1]
    if W < spec.width:
        raise ValueError(f"image width {W} is narrower than the patch width {spec.width}")
    n = (W - spec.width) // spec.step + 1
    win = np.lib.stride_tricks.sliding_window_view(pixels, spec.width, axis=-1)
    win = win[..., :: spec.step, :][..., :n, :]
    return np.moveaxis(win, -2, -3)


def read_patches(reader: ConvNet, patches, mode: str = "eval", rng=None) -> T.Tensor:
    """Apply one reader to every patch; returns [n, F] (or [B, n, F] for batched [B, n, h, w] input)."""
    if isinstance(patches, (list, tuple)):
        patches = np.stack([p.pixels if isinstance(p, GrayImage) else np.asarray(p) for p in patches])
    arr = np.asarray(patches, dtype=np.float64)
    batched = arr.ndim == 4
    if not batched:
        arr = arr[None]
    B, n, h, w = arr.shape
    maps = reader(arr.reshape(B * n, h, w, 1), mode, rng)
    feats = T.reshape(maps, (B, n, -1))
    return feats if batched else T.reshape(feats, (n, -1))


def maps_to_sequence(maps) -> T.Tensor:
    """[B, h', w', c] feature maps -> [B, w', h'*c], one vector per column, left to right."""
    maps = T.as_tensor(maps)
    B, h, w, c = maps.shape
    return T.reshape(T.transpose(maps, (0, 2, 1, 3)), (B, w, h * c))


def read_fullimage(reader: ConvNet, img, mode: str = "eval", rng=None) -> T.Tensor:
    """Run the reader over whole images; returns [w', h'*c] (or [B, w', h'*c] for a batch)."""
    arr = img.pixels if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    batched = arr.ndim == 3
    if not batched:
        arr = arr[None]
    seq = maps_to_sequence(reader(arr[..., None], mode, rng))
    return seq if batched else T.reshape(seq, seq.shape[1:])
