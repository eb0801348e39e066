import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays, array_shapes

from predvision import checkpoint as ckpt
from predvision.hierarchy import build, load_checkpoint, run, save_checkpoint, train_on_stream

from conftest import random_frames, small_spec


@settings(max_examples=50, deadline=None)
@given(arrays(st.sampled_from([np.float64, np.float32, np.int64, np.int32, np.uint8]),
              array_shapes(min_dims=0, max_dims=3, max_side=4)))
def test_array_codec_round_trip(arr):
    back = ckpt.decode_array(ckpt.encode_array(arr))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_unsupported_dtype():
    with pytest.raises(ckpt.CheckpointError):
        ckpt.encode_array(np.zeros(2, dtype=np.complex128))


def test_model_round_trip_is_byte_identical(tmp_path):
    model = build(small_spec(first_update_interval=5), seed=2)
    train_on_stream(model, random_frames(12, 16))
    a, b = tmp_path / "a.pvm", tmp_path / "b.pvm"
    save_checkpoint(model, a)
    restored = load_checkpoint(a)
    save_checkpoint(restored, b)
    assert a.read_bytes() == b.read_bytes()
    assert restored.weight_checksum() == model.weight_checksum()


def test_replay_after_reload(tmp_path):
    model = build(small_spec(first_update_interval=5), seed=2)
    train_on_stream(model, random_frames(12, 16))
    path = tmp_path / "m.pvm"
    save_checkpoint(model, path)
    restored = load_checkpoint(path)
    probe = random_frames(4, 16, seed=9)
    for x, y in zip(run(model, probe), run(restored, probe)):
        for u, v in zip(x, y):
            np.testing.assert_array_equal(u, v)
    # learning continues identically too
    train_on_stream(model, probe)
    train_on_stream(restored, probe)
    assert model.weight_checksum() == restored.weight_checksum()


def test_version_mismatch(tmp_path):
    path = tmp_path / "v.pvm"
    ckpt.write_container(path, {"x": b""}, version=ckpt.VERSION + 1)
    with pytest.raises(ckpt.VersionError):
        ckpt.read_container(path)


def test_corrupt_files(tmp_path):
    model = build(small_spec(), seed=0)
    path = tmp_path / "m.pvm"
    save_checkpoint(model, path)
    data = path.read_bytes()
    (tmp_path / "short").write_bytes(data[:-10])
    with pytest.raises(ckpt.CheckpointError):
        load_checkpoint(tmp_path / "short")
    (tmp_path / "magic").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(ckpt.CheckpointError):
        load_checkpoint(tmp_path / "magic")
    (tmp_path / "tail").write_bytes(data + b"\0")
    with pytest.raises(ckpt.CheckpointError):
        load_checkpoint(tmp_path / "tail")
    ckpt.write_container(tmp_path / "partial", {"spec": ckpt.read_container(path)["spec"]})
    with pytest.raises(ckpt.CheckpointError):
        load_checkpoint(tmp_path / "partial")
