import struct

import numpy as np
import pytest

from xraynet import Tensor, models, persistence


def _randomized_baseline(seed=0):
    model = models.build_baseline_cnn(init_seed=seed)
    rng = np.random.default_rng(seed + 100)
    # perturb running stats so the round trip covers non-trainable buffers too
    for name, p in model.params.items():
        if name.endswith("running_mean"):
            p.value = Tensor(rng.normal(size=p.value.shape).astype(np.float32))
        if name.endswith("running_var"):
            p.value = Tensor(rng.random(p.value.shape).astype(np.float32) + 0.5)
    return model


def _tiny_densenet(seed=0):
    cfg = models.DenseNetConfig(growth_rate=4, stem_channels=8,
                                block_sizes=(2, 2), compression=0.5)
    return models.build_densenet121(cfg, init_seed=seed)


def test_round_trip_is_bitwise(tmp_path):
    model = _randomized_baseline(seed=3)
    path = str(tmp_path / "m.nnck")
    persistence.save(model, path)
    back = persistence.load(path)
    assert back.kind == model.kind
    assert set(back.params) == set(model.params)
    for name, p in model.params.items():
        a = p.value.numpy()
        b = back.params[name].value.numpy()
        assert a.dtype == b.dtype
        assert a.tobytes() == b.tobytes(), name
        assert back.params[name].trainable == p.trainable


def test_round_trip_preserves_forward_pass(tmp_path):
    model = _randomized_baseline(seed=5)
    path = str(tmp_path / "m.nnck")
    persistence.save(model, path)
    back = persistence.load(path)
    rng = np.random.default_rng(0)
    x = Tensor(rng.random((2, 1, 32, 32)).astype(np.float32))
    before = models.forward(model, x, mode="eval").numpy()
    after = models.forward(back, x, mode="eval").numpy()
    assert before.tobytes() == after.tobytes()


def test_densenet_round_trip_keeps_structure(tmp_path):
    model = _tiny_densenet(seed=1)
    path = str(tmp_path / "d.nnck")
    persistence.save(model, path)
    back = persistence.load(path)
    assert back.kind == "densenet121"
    assert models.count_layers(back) == models.count_layers(model)
    assert back.num_parameters() == model.num_parameters()
    for name, p in model.params.items():
        assert back.params[name].value.numpy().tobytes() == p.value.numpy().tobytes()


def test_double_save_is_byte_identical(tmp_path):
    model = _randomized_baseline(seed=7)
    p1, p2 = str(tmp_path / "a.nnck"), str(tmp_path / "b.nnck")
    persistence.save(model, p1)
    persistence.save(model, p2)
    with open(p1, "rb") as f1, open(p2, "rb") as f2:
        assert f1.read() == f2.read()


def test_save_replaces_existing_file(tmp_path):
    path = str(tmp_path / "m.nnck")
    persistence.save(_randomized_baseline(seed=1), path)
    model = _randomized_baseline(seed=2)
    persistence.save(model, path)
    back = persistence.load(path)
    assert back.params["fc.weight"].value.numpy().tobytes() == \
        model.params["fc.weight"].value.numpy().tobytes()


def test_file_starts_with_magic_and_version(tmp_path):
    path = str(tmp_path / "m.nnck")
    persistence.save(_randomized_baseline(), path)
    with open(path, "rb") as fh:
        head = fh.read(8)
    assert head[:4] == b"NNCK"
    assert struct.unpack("<I", head[4:8])[0] == persistence.VERSION


def test_read_checkpoint_exposes_tensors_and_metadata(tmp_path):
    model = _randomized_baseline()
    path = str(tmp_path / "m.nnck")
    persistence.save(model, path, metadata={"note": "hello"})
    ck = persistence.read_checkpoint(path)
    assert ck.model_kind == "baseline"
    assert ck.metadata["note"] == "hello"
    assert {t.name for t in ck.tensors} == set(model.params)
    fc = next(t for t in ck.tensors if t.name == "fc.bias")
    assert fc.shape == (2,)
    assert np.array_equal(fc.values, model.params["fc.bias"].value.numpy())


def test_unknown_metadata_survives_load_and_resave(tmp_path):
    model = _randomized_baseline()
    p1, p2 = str(tmp_path / "a.nnck"), str(tmp_path / "b.nnck")
    persistence.save(model, p1, metadata={"trained_epochs": "7", "corpus": "demo"})
    back = persistence.load(p1)
    assert back.extra_metadata["trained_epochs"] == "7"
    persistence.save(back, p2)
    again = persistence.read_checkpoint(p2)
    assert again.metadata["corpus"] == "demo"


def _saved_bytes(tmp_path) -> tuple[str, bytes]:
    path = str(tmp_path / "m.nnck")
    persistence.save(_randomized_baseline(), path)
    with open(path, "rb") as fh:
        return path, fh.read()


def _rewrite(path: str, buf: bytes) -> str:
    with open(path, "wb") as fh:
        fh.write(buf)
    return path


def test_bad_magic_is_its_own_error(tmp_path):
    path, buf = _saved_bytes(tmp_path)
    _rewrite(path, b"JUNK" + buf[4:])
    with pytest.raises(persistence.BadMagicError):
        persistence.read_checkpoint(path)


def test_unsupported_version_is_its_own_error(tmp_path):
    path, buf = _saved_bytes(tmp_path)
    _rewrite(path, buf[:4] + struct.pack("<I", 999) + buf[8:])
    with pytest.raises(persistence.FormatVersionError) as err:
        persistence.read_checkpoint(path)
    assert "999" in str(err.value)


def test_truncation_is_its_own_error(tmp_path):
    path, buf = _saved_bytes(tmp_path)
    for cut in (3, 7, len(buf) // 2, len(buf) - 1):
        _rewrite(path, buf[:cut])
        with pytest.raises(persistence.TruncatedFileError):
            persistence.read_checkpoint(path)


def test_unknown_dtype_code_is_rejected(tmp_path):
    path, buf = _saved_bytes(tmp_path)
    # header: magic(4) version(4) kind(1) count(4), then name_len(2) + name + dtype
    name_len = struct.unpack("<H", buf[13:15])[0]
    dtype_at = 15 + name_len
    _rewrite(path, buf[:dtype_at] + bytes([250]) + buf[dtype_at + 1:])
    with pytest.raises(persistence.TensorFormatError) as err:
        persistence.read_checkpoint(path)
    assert "dtype" in str(err.value)


def test_renamed_tensor_fails_load_with_both_sides_named(tmp_path):
    path, buf = _saved_bytes(tmp_path)
    needle = struct.pack("<H", len(b"fc.bias")) + b"fc.bias"
    spliced = buf.replace(needle, struct.pack("<H", len(b"fc.bozo")) + b"fc.bozo")
    assert spliced != buf
    _rewrite(path, spliced)
    with pytest.raises(persistence.TensorFormatError) as err:
        persistence.load(path)
    assert "fc.bias" in str(err.value) and "fc.bozo" in str(err.value)


def test_config_tensor_shape_disagreement_fails_load(tmp_path):
    path, buf = _saved_bytes(tmp_path)
    # claim a wider input; the stored fc.weight no longer fits the rebuilt model
    needle = b"input_hw" + struct.pack("<H", 2) + b"32"
    spliced = buf.replace(needle, b"input_hw" + struct.pack("<H", 2) + b"64")
    assert spliced != buf
    _rewrite(path, spliced)
    with pytest.raises(persistence.TensorFormatError) as err:
        persistence.load(path)
    assert "fc.weight" in str(err.value)


def test_errors_share_a_catchall_base(tmp_path):
    path, buf = _saved_bytes(tmp_path)
    _rewrite(path, buf[:10])
    with pytest.raises(persistence.CheckpointError):
        persistence.read_checkpoint(path)
    _rewrite(path, b"XXXX" + buf[4:])
    with pytest.raises(persistence.CheckpointError):
        persistence.read_checkpoint(path)
