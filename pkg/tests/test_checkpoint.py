import numpy as np
import pytest

from byb.checkpoint import ArchiveError, load_archive, save_archive


def _tensors():
    rng = np.random.default_rng(0)
    return {"a.w": rng.normal(size=(3, 4)), "scalar": np.array(2.5), "étiquette": np.zeros((0, 2))}


def test_round_trip_is_exact(tmp_path):
    path = tmp_path / "x.bybt"
    src = _tensors()
    save_archive(path, src)
    back = load_archive(path)
    assert list(back) == list(src)
    for k in src:
        assert back[k].shape == src[k].shape
        np.testing.assert_array_equal(back[k], src[k])


def test_bad_magic(tmp_path):
    path = tmp_path / "x.bybt"
    path.write_bytes(b"NOPE" + b"\0" * 8)
    with pytest.raises(ArchiveError, match="not a BYBT"):
        load_archive(path)


def test_unknown_version(tmp_path):
    path = tmp_path / "x.bybt"
    save_archive(path, _tensors())
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(ArchiveError, match="version"):
        load_archive(path)


@pytest.mark.parametrize("cut", [6, 20, -3])
def test_truncation(tmp_path, cut):
    path = tmp_path / "x.bybt"
    save_archive(path, _tensors())
    path.write_bytes(path.read_bytes()[:cut])
    with pytest.raises(ArchiveError):
        load_archive(path)


def test_trailing_bytes(tmp_path):
    path = tmp_path / "x.bybt"
    save_archive(path, _tensors())
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(ArchiveError, match="trailing"):
        load_archive(path)
