import struct
from pathlib import Path

import numpy as np
import pytest

from modalfuse import ModuleConfig, init_weights
from modalfuse.errors import ConfigError, FormatError, VersionError
from modalfuse.params import check_manifest
from modalfuse.serialize import (
    WeightArchive, decode_tensor, encode_tensor, read_archive, read_tensor, write_archive, write_tensor,
)
from modalfuse.tensor import Tensor
from modalfuse.weights import infer_config, manifest

FIX = Path(__file__).parent / "fixtures"


def test_one_encodes_to_known_bytes():
    raw = encode_tensor(Tensor.ones((1, 1, 1, 1)))
    assert raw == b"LASF" + b"\x01\x00" + b"\x00" + b"\x04" + b"\x01\x00\x00\x00" * 4 + b"\x00\x00\x80\x3f"


def test_golden_tensor_layout_and_roundtrip():
    raw = (FIX / "golden_tensor.lasf").read_bytes()
    values = np.arange(12, dtype="<f4") * np.float32(0.5) - np.float32(1.25)
    assert raw == b"LASF\x01\x00\x00\x04" + struct.pack("<4I", 1, 2, 2, 3) + values.tobytes()
    t = read_tensor(FIX / "golden_tensor.lasf")
    assert t.dims == (1, 2, 2, 3) and np.array_equal(t.data.ravel(), values)
    assert encode_tensor(t) == raw


def test_golden_archive_roundtrip(tmp_path):
    raw = (FIX / "golden_archive.lasw").read_bytes()
    a = read_archive(FIX / "golden_archive.lasw")
    assert list(a) == ["conv.weight", "conv.bias", "bn.running_var"]
    assert np.array_equal(a["conv.weight"].data.ravel(), [1.0, -2.0, 0.25, 3.5])
    assert a.to_bytes() == raw
    write_archive(tmp_path / "copy.lasw", a)
    assert (tmp_path / "copy.lasw").read_bytes() == raw
    assert raw[:4] == b"LASW" and struct.unpack_from("<HI", raw, 4) == (1, 3)


def test_bad_fixtures_raise_specified_errors():
    with pytest.raises(FormatError, match="magic"):
        read_tensor(FIX / "bad_magic.lasf")
    with pytest.raises(FormatError, match="truncated"):
        read_tensor(FIX / "truncated_payload.lasf")
    with pytest.raises(VersionError):
        read_tensor(FIX / "future_version.lasf")


def test_random_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(10):
        dims = tuple(int(d) for d in rng.integers(1, 5, size=4))
        t = Tensor(rng.standard_normal(dims))
        write_tensor(tmp_path / f"{i}.lasf", t)
        assert read_tensor(tmp_path / f"{i}.lasf").bit_equal(t)


def test_decoder_rejects_malformed_input():
    body = encode_tensor(Tensor.ones((1, 1, 1, 2)))
    with pytest.raises(FormatError):
        decode_tensor(body[:5])
    with pytest.raises(VersionError):
        decode_tensor(body[:6] + b"\x01" + body[7:])
    with pytest.raises(FormatError):
        decode_tensor(body[:7] + b"\x03" + body[8:])
    archive = WeightArchive({"a.weight": Tensor.ones((1, 1, 1, 1))}).to_bytes()
    with pytest.raises(FormatError):
        WeightArchive.from_bytes(archive + b"\x00")
    with pytest.raises(FormatError):
        WeightArchive.from_bytes(b"LASX" + archive[4:])
    with pytest.raises(FormatError):
        WeightArchive({"x": Tensor.ones((1, 1, 1, 1))}).add("x", Tensor.ones((1, 1, 1, 1)))


@pytest.mark.parametrize("which,cfg", [("asff", ModuleConfig(8, groups=2)), ("fatm", ModuleConfig(16, ratio=4))])
def test_init_weights_determinism_and_manifest(which, cfg):
    a, b, c = init_weights(cfg, which, 5), init_weights(cfg, which, 5), init_weights(cfg, which, 6)
    assert a.to_bytes() == b.to_bytes()
    assert a.to_bytes() != c.to_bytes()
    spec = manifest(cfg, which)
    assert [(s.name, s.dims) for s in spec] == [(k, v.dims) for k, v in a.items()]
    check_manifest(a, spec)
    assert infer_config(a, which, cfg.groups).channels == cfg.channels


def test_init_values_follow_rules():
    a = init_weights(ModuleConfig(8, groups=2), "asff", 1)
    assert np.all(a["dfm.modulate.alpha"].data == 1) and not a["dfm.modulate.beta"].data.any()
    assert np.all(a["fm.cbs1_bn.gamma"].data == 1) and not a["fm.cbs1_bn.running_mean"].data.any()
    bound = np.sqrt(1.0 / 8)  # dfm.entry is pointwise over 8 input channels
    assert np.abs(a["dfm.entry.weight"].data).max() <= bound


def test_invalid_config_rejected():
    with pytest.raises(ConfigError):
        init_weights(ModuleConfig(7), "asff", 0)
    with pytest.raises(ConfigError):
        init_weights(ModuleConfig(8, groups=3), "asff", 0)
    with pytest.raises(ConfigError):
        init_weights(ModuleConfig(8, cam_kernel=4), "asff", 0)
    with pytest.raises(ConfigError):
        init_weights(ModuleConfig(8), "yolo", 0)
    with pytest.raises(FormatError):
        infer_config(init_weights(ModuleConfig(8, ratio=4), "fatm", 0), "asff")
