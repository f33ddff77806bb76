import struct

import numpy as np
import pytest

from conftest import small_model
from mcadial.checkpoint import MAGIC, CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint


def test_round_trip_is_bit_identical(tiny, tmp_path):
    _, _, _, vocab, ds = tiny
    model = small_model("MCA-I-HGuidedQ", len(vocab)).eval()
    save_checkpoint(tmp_path / "a.ckpt", model, {"epoch": 3}, {"extra/x": np.arange(6.0).reshape(2, 3)})
    back, meta, extra = load_checkpoint(tmp_path / "a.ckpt")
    assert meta == {"epoch": 3} and back.cfg == model.cfg
    np.testing.assert_array_equal(extra["extra/x"], np.arange(6.0).reshape(2, 3))
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(back.state_dict()[k], v)
    batch = ds.batch(ds.round_keys()[:3])
    np.testing.assert_array_equal(back.eval()(batch).data, model(batch).data)
    save_checkpoint(tmp_path / "b.ckpt", back, meta, extra)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_layout(tiny, tmp_path):
    model = small_model("MCA-I", len(tiny[3]))
    save_checkpoint(tmp_path / "m.ckpt", model)
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:4] == MAGIC and struct.unpack_from("<I", raw, 4) == (1,)
    assert raw[9:9 + raw[8]] == b"MCA-I"
    tag, config, blocks = read_checkpoint(tmp_path / "m.ckpt")
    assert tag == "MCA-I" and config["model"]["variant"] == "MCA-I"
    assert set(blocks) == set(model.state_dict()) and all(b.dtype == np.float32 for b in blocks.values())


def test_corrupt_files(tiny, tmp_path):
    model = small_model("MCA-I", len(tiny[3]))
    save_checkpoint(tmp_path / "m.ckpt", model)
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "magic.ckpt").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        read_checkpoint(tmp_path / "magic.ckpt")
    (tmp_path / "ver.ckpt").write_bytes(raw[:4] + struct.pack("<I", 9) + raw[8:])
    with pytest.raises(CheckpointError, match="version"):
        read_checkpoint(tmp_path / "ver.ckpt")
    (tmp_path / "tail.ckpt").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        read_checkpoint(tmp_path / "tail.ckpt")


def test_extra_block_collision(tiny, tmp_path):
    model = small_model("MCA-I", len(tiny[3]))
    name = next(iter(model.state_dict()))
    with pytest.raises(CheckpointError, match="collides"):
        save_checkpoint(tmp_path / "m.ckpt", model, extra={name: np.zeros(1)})
