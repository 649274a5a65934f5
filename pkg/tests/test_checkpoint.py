"""Checkpoint format: bit-exact round-trips and corruption handling."""

import struct

import numpy as np
import pytest

from smtr.checkpoint import MAGIC, VERSION, load_checkpoint, save_checkpoint
from smtr.errors import CheckpointError
from smtr.model import ModelConfig, init_params


@pytest.fixture(scope="module")
def saved(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "model.smtr"
    cfg = ModelConfig(charset="ACDE", base_channels=8, substring_len=3)
    params = init_params(cfg, np.random.default_rng(3))
    save_checkpoint(path, params, cfg, extra={"max_text_len": 10, "note": "x"})
    return path, params, cfg


class TestRoundTrip:
    def test_bit_exact_tensors(self, saved):
        path, params, _ = saved
        loaded = load_checkpoint(path)
        assert list(loaded.params) == list(params)
        for name, p in params.items():
            got = loaded.params[name]
            assert got.data.shape == p.data.shape
            assert got.data.tobytes() == p.data.tobytes()

    def test_config_and_vocab(self, saved):
        path, _, cfg = saved
        loaded = load_checkpoint(path)
        assert loaded.model_config == cfg
        assert loaded.vocab.chars == "ACDE"
        assert loaded.extra == {"max_text_len": 10, "note": "x"}

    def test_double_roundtrip_identical_bytes(self, saved, tmp_path):
        path, _, _ = saved
        loaded = load_checkpoint(path)
        second = tmp_path / "again.smtr"
        save_checkpoint(second, loaded.params, loaded.model_config, loaded.extra)
        assert path.read_bytes() == second.read_bytes()


class TestCorruption:
    def test_bad_magic_names_expected(self, saved, tmp_path):
        path, _, _ = saved
        data = bytearray(path.read_bytes())
        data[:4] = b"XXXX"
        bad = tmp_path / "bad.smtr"
        bad.write_bytes(data)
        with pytest.raises(CheckpointError, match="SMTR"):
            load_checkpoint(bad)

    def test_version_mismatch(self, saved, tmp_path):
        path, _, _ = saved
        data = bytearray(path.read_bytes())
        data[4:8] = struct.pack("<I", VERSION + 1)
        bad = tmp_path / "ver.smtr"
        bad.write_bytes(data)
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(bad)

    def test_truncated_record(self, saved, tmp_path):
        path, _, _ = saved
        data = path.read_bytes()[:-5]
        bad = tmp_path / "trunc.smtr"
        bad.write_bytes(data)
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(bad)

    def test_magic_constant(self):
        assert MAGIC == b"SMTR"
