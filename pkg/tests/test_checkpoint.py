import numpy as np
import pytest

from pocketbfn import bfn
from pocketbfn.checkpoint import (MAGIC, CheckpointError, load_checkpoint, restore_optimizer,
                                  save_checkpoint)
from pocketbfn.checks import small_config
from pocketbfn.model import ModelWeights


@pytest.fixture
def saved(tmp_path):
    w = ModelWeights.init(small_config(use_mhca=False), np.random.default_rng(0))
    opt = bfn.AdamState(w.parameters())
    opt.step = 7
    opt.m = [np.full_like(m, 0.5) for m in opt.m]
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, w, {"epoch": 2}, opt)
    return w, opt, path


def test_round_trip(saved):
    w, opt, path = saved
    w2, meta, arrays = load_checkpoint(path)
    assert w2.config == w.config and meta["epoch"] == 2
    for (pa, a), (pb, b) in zip(w.named_parameters(), w2.named_parameters()):
        assert pa == pb and np.array_equal(a.data, b.data)
    opt2 = bfn.AdamState(w2.parameters())
    restore_optimizer(opt2, w2, meta, arrays)
    assert opt2.step == 7 and all(np.array_equal(a, b) for a, b in zip(opt.m, opt2.m))


def test_rewrite_is_byte_identical(saved, tmp_path):
    w, opt, path = saved
    save_checkpoint(tmp_path / "b.ckpt", w, {"epoch": 2}, opt)
    assert path.read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_bad_magic(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"hello")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)


def test_truncated_and_trailing(saved, tmp_path):
    _, _, path = saved
    raw = path.read_bytes()
    (tmp_path / "t.ckpt").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "u.ckpt").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "u.ckpt")


def test_version_mismatch(saved, tmp_path):
    _, _, path = saved
    raw = path.read_bytes()
    p = tmp_path / "v.ckpt"
    p.write_bytes(MAGIC + b"99" + raw[len(MAGIC) + 1:])
    with pytest.raises(CheckpointError, match="version 99"):
        load_checkpoint(p)


def test_missing_optimizer_state(tmp_path):
    w = ModelWeights.init(small_config(), np.random.default_rng(1))
    save_checkpoint(tmp_path / "w.ckpt", w)
    w2, meta, arrays = load_checkpoint(tmp_path / "w.ckpt")
    with pytest.raises(CheckpointError, match="optimizer"):
        restore_optimizer(bfn.AdamState(w2.parameters()), w2, meta, arrays)
