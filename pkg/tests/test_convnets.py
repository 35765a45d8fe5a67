import numpy as np
import pytest

from inkline import tensor as T
from inkline.convnets import (PatchSpec, ResidualModule, build_lenet_classifier, build_lenet_reader, build_resnet,
                              build_vgg, default_dense_sizes, extract_patches, maps_to_sequence, patch_array,
                              read_fullimage, read_patches)
from inkline.imaging import GrayImage

from . import paper_tables


def table(net, skip=()):
    return [(r.kind, r.shape, r.params) for r in net.summary() if r.kind not in skip]


def test_parameter_totals():
    assert build_lenet_classifier().param_count() == paper_tables.TOTALS["lenet"]
    assert build_vgg(3, (64, 64), classes=52).param_count() == paper_tables.TOTALS["vgg"]
    assert build_resnet(3, (64, 64), 26).param_count() == paper_tables.TOTALS["resnet"]


def test_lenet_table():
    assert table(build_lenet_classifier()) == paper_tables.LENET_MNIST


def test_vgg_table():
    assert table(build_vgg(3, (64, 64), classes=52), skip=("Flatten",)) == paper_tables.VGG_COUT52


def test_resnet_table():
    rows = [(r.name, r.shape, r.params) for r in build_resnet(3, (64, 64), 26).summary()]
    assert rows == paper_tables.RESNET_NIST26


def test_resnet_orders_share_counts():
    assert build_resnet(3, order="pre").param_count() == build_resnet(3, order="post").param_count()
    with pytest.raises(ValueError):
        build_resnet(3, order="mid")


@pytest.mark.parametrize("blocks", [2, 3, 4])
def test_vgg_block_variants(blocks):
    net = build_vgg(blocks, (64, 64), classes=52)
    assert net.output_shape() == (52,)
    side = 64 // 2 ** blocks
    assert net.summary()[3 * blocks].shape == (side, side, 32 * 2 ** (blocks - 1))


def test_builder_guards():
    with pytest.raises(ValueError):
        build_vgg(5)
    with pytest.raises(ValueError):
        build_vgg(4, (8, 8))
    with pytest.raises(ValueError):
        build_lenet_classifier((6, 6))
    with pytest.raises(ValueError):
        build_lenet_reader((48, 4))


def test_dense_sizes_follow_class_count():
    assert default_dense_sizes(10) == (256, 128)
    assert default_dense_sizes(28) == (512, 256)


def test_forward_probabilities(rng):
    net = build_lenet_classifier()
    out = net(rng.random((3, 28, 28))).data
    assert out.shape == (3, 10)
    assert np.allclose(out.sum(axis=1), 1.0)
    logits = net(rng.random((3, 28, 28)), logits=True).data
    assert not np.allclose(logits.sum(axis=1), 1.0)


def test_forward_is_deterministic_per_seed(rng):
    x = rng.random((2, 28, 28))
    a = build_lenet_classifier(seed=3)(x).data
    b = build_lenet_classifier(seed=3)(x).data
    c = build_lenet_classifier(seed=4)(x).data
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_resnet_forward_shape(rng):
    net = build_resnet(1, (16, 16), 5)
    assert net(rng.random((2, 16, 16)), mode="train").shape == (2, 5)


def test_residual_zero_branch_is_identity(rng):
    mod = ResidualModule(2, 16, 8, rng)
    for p in mod.parameters():
        if p.name.startswith("conv2c"):
            p.data = np.zeros_like(p.data)
    x = rng.normal(size=(1, 4, 4, 16))
    assert np.array_equal(mod(T.Tensor(x), "eval", None).data, x)


def test_patch_count():
    spec = PatchSpec(10, 2)
    assert len(extract_patches(GrayImage(np.ones((48, 192))), spec)) == 92
    assert patch_array(np.ones((3, 48, 192)), spec).shape == (3, 92, 48, 10)
    with pytest.raises(ValueError):
        patch_array(np.ones((48, 8)), spec)
    with pytest.raises(ValueError):
        PatchSpec(10, 11)


def test_patch_contents(rng):
    px = rng.random((8, 30))
    patches = extract_patches(GrayImage(px), PatchSpec(6, 4))
    assert len(patches) == 7
    assert np.array_equal(patches[3].pixels, px[:, 12:18])


def test_read_patches_batched_equals_single(rng):
    reader = build_lenet_reader((16, 10))
    px = rng.random((2, 16, 20))
    batched = read_patches(reader, patch_array(px, PatchSpec())).data
    single = read_patches(reader, extract_patches(GrayImage(px[1]), PatchSpec())).data
    assert batched.shape == (2, 6, 4 * 3 * 50)
    assert np.allclose(batched[1], single)


def test_read_fullimage_arithmetic(rng):
    reader = build_vgg(3, (48, 48), classes=None)
    seq = read_fullimage(reader, rng.random((48, 192))).data
    assert seq.shape == (24, 6 * 128)


def test_maps_to_sequence_columns():
    maps = np.arange(2 * 3 * 4 * 5, dtype=float).reshape(2, 3, 4, 5)
    seq = maps_to_sequence(maps).data
    assert np.array_equal(seq[1, 2], maps[1, :, 2, :].reshape(-1))
