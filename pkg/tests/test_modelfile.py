import numpy as np
import pytest

from nkm.data import StandardizationStats
from nkm.features import nystrom_apply, nystrom_new, rff_apply, rff_new
from nkm.modelfile import (MAGIC, ModelBundle, ModelFileError, decode_map, decode_model, encode_map,
                           encode_model, load_model, save_model)
from nkm.network import ArchSpec, BlockSpec, build_network, scores


def bundle(pooling="conv"):
    net = build_network(ArchSpec(3, 3, [BlockSpec(4, 5, 3, pooling, 1.1), BlockSpec(2, 3, 3, pooling, 0.8)]), 9)
    rng = np.random.default_rng(0)
    for p in net.parameters().values():
        p[...] = rng.normal(size=p.shape)
    stats = StandardizationStats(rng.normal(size=3), rng.uniform(0.5, 2.0, size=3))
    return ModelBundle(net, stats, ("a", "b", "c"), "0", True, ("x", "y", "z"))


@pytest.mark.parametrize("pooling", ["maxout", "average", "conv"])
def test_roundtrip_is_bitwise(tmp_path, pooling):
    b = bundle(pooling)
    save_model(tmp_path / "m.nkm", b)
    got = load_model(tmp_path / "m.nkm")
    for k, v in b.network.parameters(False).items():
        np.testing.assert_array_equal(got.network.parameters(False)[k], v)
    for old, new in zip(b.network.blocks, got.network.blocks):
        np.testing.assert_array_equal(old.rff.zeta, new.rff.zeta)
        assert (old.rff.sigma, old.rff.seed, old.pooling) == (new.rff.sigma, new.rff.seed, new.pooling)
    np.testing.assert_array_equal(got.stats.mean, b.stats.mean)
    np.testing.assert_array_equal(got.stats.std, b.stats.std)
    assert got.labels == b.labels and got.feature_names == b.feature_names
    assert got.label_column == "0" and got.has_header is True
    X = np.random.default_rng(1).normal(size=(20, 3))
    np.testing.assert_array_equal(scores(got.network, X), scores(b.network, X))


def test_encoding_is_deterministic():
    assert encode_model(bundle()) == encode_model(bundle())


def test_layout_header():
    buf = encode_model(bundle())
    assert buf[:4] == MAGIC
    hlen = int.from_bytes(buf[4:8], "little")
    assert buf[8:9] == b"{" and buf[8 + hlen - 1:8 + hlen] == b"}"


def test_freeze_flag_survives():
    b = bundle()
    b.network.blocks[0].freeze = True
    assert decode_model(encode_model(b)).network.blocks[0].freeze


@pytest.mark.parametrize("mutate, match", [
    (lambda buf: b"XXXX" + buf[4:], "magic"),
    (lambda buf: buf[:-8], "truncated"),
    (lambda buf: buf + b"\0", "trailing"),
    (lambda buf: buf[:3], "magic|truncated"),
    (lambda buf: buf.replace(b'"format_version":1', b'"format_version":9'), "version"),
])
def test_corrupt_files_rejected(mutate, match):
    with pytest.raises(ModelFileError, match=match):
        decode_model(mutate(encode_model(bundle())))


def test_missing_model_file(tmp_path):
    with pytest.raises(ModelFileError, match="nope.nkm"):
        load_model(tmp_path / "nope.nkm")


def test_standalone_maps_roundtrip():
    X = np.random.default_rng(2).normal(size=(6, 2))
    r = rff_new(2, 7, 1.3, 5)
    r2 = decode_map(encode_map(r))
    np.testing.assert_array_equal(rff_apply(r2, X), rff_apply(r, X))
    ny = nystrom_new(X, 0.9, seed=4)
    ny2 = decode_map(encode_map(ny))
    np.testing.assert_array_equal(nystrom_apply(ny2, X), nystrom_apply(ny, X))
    assert ny2.seed == 4 and ny2.rank == ny.rank
