"""Checkpoint encoding: bit-exact round trips and corruption diagnostics."""

import struct
import zlib

import numpy as np
import pytest

from forgetnet.checkpoint import (CheckpointChecksumError, CheckpointError,
                                  CheckpointTruncatedError,
                                  CheckpointVersionError, MAGIC, load_arrays,
                                  load_checkpoint, save_arrays,
                                  save_checkpoint)
from forgetnet.nets import ForgettingModel
from forgetnet.tensor import Tensor


def make_model(seed=0, tasks=1):
    rng = np.random.default_rng(seed)
    y = 3 if tasks == 1 else [3] * tasks
    s = 2 if tasks == 1 else [2] * tasks
    return ForgettingModel.build(5, 4, y, s, rng, hidden=6)


def test_roundtrip_is_bit_exact(tmp_path):
    model = make_model(seed=42)
    path = tmp_path / "model.frgt"
    save_checkpoint(model, path)
    restored = load_checkpoint(path)
    originals = dict(model.named_params())
    for name, p in restored.named_params():
        assert np.array_equal(p.data, originals[name].data), name
        assert p.data.dtype == np.float64


def test_restored_model_predicts_identically(tmp_path):
    model = make_model(seed=7)
    x = np.random.default_rng(1).normal(size=(9, 5))
    path = tmp_path / "model.frgt"
    save_checkpoint(model, path)
    restored = load_checkpoint(path)
    assert np.array_equal(restored.predict_logits(x), model.predict_logits(x))
    b0 = model.forward(Tensor(x))
    b1 = restored.forward(Tensor(x))
    assert np.array_equal(b0.m.data, b1.m.data)
    assert np.array_equal(b0.x_hat.data, b1.x_hat.data)


def test_multi_task_restore_keeps_every_gate(tmp_path):
    model = make_model(seed=3, tasks=2)
    path = tmp_path / "model.frgt"
    save_checkpoint(model, path)
    restored = load_checkpoint(path)
    assert restored.task_count == 2
    x = np.random.default_rng(2).normal(size=(4, 5))
    for j in range(2):
        want = model.forward(Tensor(x), task=j).s_logits.data
        got = restored.forward(Tensor(x), task=j).s_logits.data
        assert np.array_equal(want, got)


def test_gate_activation_survives_reload(tmp_path):
    model = make_model()
    path = tmp_path / "model.frgt"
    save_checkpoint(model, path)
    restored = load_checkpoint(path)
    assert restored.gates[0].activations[-1] == "sigmoid"
    assert restored.encoder.activations[-1] == "linear"
    assert restored.encoder.activations[0] == "relu"


def test_checksum_mismatch_detected(tmp_path):
    model = make_model()
    path = tmp_path / "model.frgt"
    save_checkpoint(model, path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointChecksumError, match="checksum"):
        load_checkpoint(path)


def test_version_mismatch_detected(tmp_path):
    model = make_model()
    path = tmp_path / "model.frgt"
    save_checkpoint(model, path)
    raw = bytearray(path.read_bytes())
    raw[len(MAGIC)] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointVersionError, match="version 99"):
        load_checkpoint(path)


def test_bad_magic_detected(tmp_path):
    path = tmp_path / "model.frgt"
    path.write_bytes(b"NOTAFRGT" + bytes(20))
    with pytest.raises(CheckpointVersionError, match="magic"):
        load_checkpoint(path)


def test_truncated_file_detected(tmp_path):
    model = make_model()
    path = tmp_path / "model.frgt"
    save_checkpoint(model, path)
    raw = path.read_bytes()
    # cut mid-payload, then re-append a checksum that matches the cut
    # payload so the failure is attributed to truncation, not corruption
    cut = raw[:len(raw) // 2]
    payload = cut[len(MAGIC) + 1:]
    path.write_bytes(cut + struct.pack("<I", zlib.crc32(payload)))
    with pytest.raises(CheckpointTruncatedError, match="truncated"):
        load_checkpoint(path)


def test_empty_file_detected(tmp_path):
    path = tmp_path / "model.frgt"
    path.write_bytes(b"")
    with pytest.raises(CheckpointTruncatedError, match="too short"):
        load_checkpoint(path)


def test_generic_array_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    blocks = [("features", rng.normal(size=(7, 3))),
              ("labels", np.array([0.0, 1.0, 2.0])),
              ("scalarish", np.array(3.25))]
    path = tmp_path / "cache.frgt"
    save_arrays(path, blocks)
    loaded = load_arrays(path)
    assert [n for n, _ in loaded] == ["features", "labels", "scalarish"]
    for (_, want), (_, got) in zip(blocks, loaded):
        assert np.array_equal(np.asarray(want, dtype=np.float64), got)
        assert got.shape == np.asarray(want).shape


def test_unknown_parameter_name_rejected(tmp_path):
    path = tmp_path / "odd.frgt"
    save_arrays(path, [("mystery.L0.W", np.zeros((2, 2)))])
    with pytest.raises(CheckpointError, match="unrecognized"):
        load_checkpoint(path)


def test_missing_network_rejected(tmp_path):
    model = make_model()
    path = tmp_path / "partial.frgt"
    blocks = [(n, p.data) for n, p in model.named_params()
              if not n.startswith("decoder")]
    save_arrays(path, blocks)
    with pytest.raises(CheckpointError, match="decoder"):
        load_checkpoint(path)
