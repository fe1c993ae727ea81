import struct

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from catsnet.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from catsnet.cli import model_from_checkpoint
from catsnet.embedding import Vocabulary
from catsnet.errors import CatsNetError, CorruptFile, VersionMismatch
from catsnet.training import TrainConfig, train

from conftest import ragged_batch, tiny_model


def _ckpt(model, optimizer=None):
    vocab = Vocabulary("abcdefg")
    return Checkpoint(model.config, vocab, model.state_dict(), optimizer, seed=0)


@pytest.fixture
def saved(tmp_path):
    model = tiny_model(seed=3, sublayer_variant="bilstm")
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, _ckpt(model))
    return model, path


def test_forward_bitwise_after_round_trip(saved):
    model, path = saved
    restored = model_from_checkpoint(load_checkpoint(path))
    batch = ragged_batch()
    assert model(batch).logits.data.tobytes() == restored(batch).logits.data.tobytes()


def test_tensors_bit_exact(saved):
    model, path = saved
    ckpt = load_checkpoint(path)
    assert ckpt.config == model.config
    for name, arr in model.state_dict().items():
        assert ckpt.params[name].tobytes() == arr.tobytes()
        assert ckpt.params[name].shape == arr.shape


def test_every_truncation_is_detected(saved):
    _, path = saved
    blob = path.read_bytes()
    cut = path.with_suffix(".cut")
    for n in sorted({0, 3, 4, 7, 8, 15, 16, 40} | set(range(0, len(blob), max(1, len(blob) // 60)))):
        cut.write_bytes(blob[:n])
        with pytest.raises(CorruptFile):
            load_checkpoint(cut)


def test_foreign_magic(saved):
    _, path = saved
    blob = bytearray(path.read_bytes())
    blob[:4] = b"PK\x03\x04"
    path.write_bytes(bytes(blob))
    with pytest.raises(CorruptFile):
        load_checkpoint(path)


def test_version_mismatch(saved):
    _, path = saved
    blob = bytearray(path.read_bytes())
    blob[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(blob))
    with pytest.raises(VersionMismatch):
        load_checkpoint(path)


def test_trailing_garbage(saved):
    _, path = saved
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CorruptFile):
        load_checkpoint(path)


def test_header_layout(saved):
    _, path = saved
    blob = path.read_bytes()
    assert blob[:4] == b"CATS"
    assert struct.unpack("<I", blob[4:8]) == (1,)
    (meta_len,) = struct.unpack("<Q", blob[8:16])
    assert b'"config"' in blob[16 : 16 + meta_len]


def test_optimizer_state_round_trip(tmp_path):
    from catsnet.data import TokenizedPair

    model = tiny_model()
    result = train(model, [TokenizedPair([2, 3], [4], 1)] * 4, cfg=TrainConfig(epochs=2, batch_size=2))
    path = tmp_path / "o.ckpt"
    save_checkpoint(path, _ckpt(model, result.optimizer.state_dict()))
    opt = load_checkpoint(path).optimizer
    assert opt["step"] == 4
    for name, m in result.optimizer.m.items():
        assert opt["m"][name].tobytes() == m.tobytes()
        assert opt["v"][name].tobytes() == result.optimizer.v[name].tobytes()


def test_frozen_embeddings_are_saved(tmp_path):
    model = tiny_model(trainable_embeddings=False)
    assert "embedding.weights" not in dict(model.named_parameters())
    path = tmp_path / "f.ckpt"
    save_checkpoint(path, _ckpt(model))
    restored = model_from_checkpoint(load_checkpoint(path))
    np.testing.assert_array_equal(restored.embedding.weights.data, model.embedding.weights.data)


def test_metadata_must_be_an_object(tmp_path):
    blob = b"[1, 2]"
    path = tmp_path / "list.ckpt"
    path.write_bytes(b"CATS" + struct.pack("<I", 1) + struct.pack("<Q", len(blob)) + blob + struct.pack("<I", 0))
    with pytest.raises(CorruptFile):
        load_checkpoint(path)


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.data())
def test_flipped_bytes_never_escape_the_error_hierarchy(saved, data):
    _, path = saved
    blob = bytearray(path.read_bytes())
    for _ in range(data.draw(st.integers(1, 4))):
        blob[data.draw(st.integers(0, len(blob) - 1))] ^= data.draw(st.integers(1, 255))
    bad = path.with_suffix(".flip")
    bad.write_bytes(bytes(blob))
    try:
        model_from_checkpoint(load_checkpoint(bad))
    except CatsNetError:
        pass
