"""Checkpoint format: round trips, corruption handling, force loads."""

import numpy as np
import pytest

from modfuse.checkpoint import (MAGIC, CheckpointError, checkpoint_bytes,
                                load_checkpoint, model_from_checkpoint,
                                parse_checkpoint, restore_into,
                                save_checkpoint)
from modfuse.config import build_model, parse_config

TWO = """
modalities = video,audio
modality.video.feat_dim = 16
modality.audio.feat_dim = 24
modality.video.seq_len = 5
modality.audio.seq_len = 5
bench.train_size = 32
bench.test_size = 16
train.epochs = 2
"""

THREE = TWO.replace("modalities = video,audio",
                    "modalities = video,audio,depth") + \
    "modality.depth.feat_dim = 48\nmodality.depth.seq_len = 5\n"


def make(text=TWO):
    cfg = parse_config(text)
    return build_model(cfg), cfg


class TestRoundTrip:
    def test_save_load_restore_bitwise(self, tmp_path):
        model, cfg = make()
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, model.registry, cfg)
        ckpt = load_checkpoint(path)
        assert ckpt.order == ["video", "audio"]
        assert ckpt.strategy == "SelfGated"
        assert ckpt.digest == cfg.digest()

        other, _ = make()
        for _, t in other.registry.named():
            t.data += 1.0
        assert other.registry.checksum() != model.registry.checksum()
        warnings = restore_into(other.registry, ckpt)
        assert warnings == []
        assert other.registry.checksum() == model.registry.checksum()

    def test_save_load_save_byte_identical(self, tmp_path):
        model, cfg = make()
        p1 = str(tmp_path / "a.ckpt")
        save_checkpoint(p1, model.registry, cfg)
        ckpt = load_checkpoint(p1)
        other, _ = make()
        restore_into(other.registry, ckpt)
        p2 = str(tmp_path / "b.ckpt")
        save_checkpoint(p2, other.registry, cfg)
        with open(p1, "rb") as f1, open(p2, "rb") as f2:
            assert f1.read() == f2.read()

    def test_header_fields(self, tmp_path):
        model, cfg = make()
        raw = checkpoint_bytes(model.registry, cfg)
        assert raw[:4] == MAGIC
        assert raw[-4:] == b"END!"
        ckpt = parse_checkpoint(raw)
        assert ckpt.version == 1
        assert ckpt.config_text == cfg.to_text()
        assert len(ckpt.tensors) == len(model.registry.named())

    def test_model_from_checkpoint(self, tmp_path):
        model, cfg = make()
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, model.registry, cfg)
        rebuilt, recfg, warnings = model_from_checkpoint(load_checkpoint(path))
        assert warnings == []
        assert recfg == cfg
        assert rebuilt.registry.checksum() == model.registry.checksum()

    def test_staging_leaves_no_temp_file(self, tmp_path):
        model, cfg = make()
        save_checkpoint(str(tmp_path / "m.ckpt"), model.registry, cfg)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["m.ckpt"]


class TestCorruption:
    def test_bad_magic(self):
        with pytest.raises(CheckpointError, match="bad magic"):
            parse_checkpoint(b"XXXX" + b"\x00" * 64)

    def test_truncation_reports_offset(self):
        model, cfg = make()
        raw = checkpoint_bytes(model.registry, cfg)
        with pytest.raises(CheckpointError, match=r"truncated at byte \d+"):
            parse_checkpoint(raw[:len(raw) // 2])

    def test_trailing_garbage(self):
        model, cfg = make()
        raw = checkpoint_bytes(model.registry, cfg)
        with pytest.raises(CheckpointError, match="trailing bytes"):
            parse_checkpoint(raw + b"xx")

    def test_digest_mismatch_is_hard_error(self):
        model, cfg = make()
        raw = bytearray(checkpoint_bytes(model.registry, cfg))
        raw[8] ^= 0xFF  # flip a digest byte
        with pytest.raises(CheckpointError, match="does not match"):
            parse_checkpoint(bytes(raw))
        ckpt = parse_checkpoint(bytes(raw), force=True)
        assert ckpt.config_text == cfg.to_text()

    def test_unsupported_version(self):
        model, cfg = make()
        raw = bytearray(checkpoint_bytes(model.registry, cfg))
        raw[4] = 99
        with pytest.raises(CheckpointError, match="version"):
            parse_checkpoint(bytes(raw))


class TestForceRestore:
    def test_strict_restore_rejects_missing(self, tmp_path):
        model, cfg = make(TWO)
        path = str(tmp_path / "two.ckpt")
        save_checkpoint(path, model.registry, cfg)
        bigger, _ = make(THREE)
        with pytest.raises(CheckpointError, match="not in the checkpoint"):
            restore_into(bigger.registry, load_checkpoint(path))

    def test_extension_keeps_existing_tensors(self, tmp_path):
        model, cfg = make(TWO)
        path = str(tmp_path / "two.ckpt")
        save_checkpoint(path, model.registry, cfg)
        ckpt = load_checkpoint(path)

        bigger, _ = make(THREE)
        warnings = restore_into(bigger.registry, ckpt, force=True)
        assert warnings
        # every surviving name matches the checkpoint bit for bit
        restored = dict(bigger.registry.named())
        matched = 0
        for name, arr in ckpt.tensors.items():
            t = restored.get(name)
            if t is not None and t.data.shape == arr.shape:
                assert t.data.tobytes() == arr.tobytes(), name
                matched += 1
        assert matched > 50
        # the old adapters and the backbone all survive
        for prefix in ("video.", "audio.", "backbone."):
            assert any(n.startswith(prefix) and n in ckpt.tensors
                       for n in restored)

    def test_force_skips_shape_mismatch(self):
        model, cfg = make(TWO)
        ckpt = parse_checkpoint(checkpoint_bytes(model.registry, cfg))
        ckpt.tensors["video.queries"] = np.zeros((9, 9), dtype=np.float32)
        with pytest.raises(CheckpointError, match="shape"):
            restore_into(make(TWO)[0].registry, ckpt)
        other, _ = make(TWO)
        before = other.registry["video.queries"].tensor.data.copy()
        warnings = restore_into(other.registry, ckpt, force=True)
        assert any("video.queries" in w for w in warnings)
        assert np.array_equal(other.registry["video.queries"].tensor.data,
                              before)

    def test_extra_tensor_rejected_without_force(self):
        model, cfg = make(TWO)
        ckpt = parse_checkpoint(checkpoint_bytes(model.registry, cfg))
        ckpt.tensors["ghost.w"] = np.zeros(3, dtype=np.float32)
        with pytest.raises(CheckpointError, match="not in the model"):
            restore_into(make(TWO)[0].registry, ckpt)
        warnings = restore_into(make(TWO)[0].registry, ckpt, force=True)
        assert any("ghost.w" in w for w in warnings)
