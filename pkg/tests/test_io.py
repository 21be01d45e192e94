import numpy as np
import pytest

from dtstereo.io import read_grid, read_grid_csv, read_keyvalue, write_csv, write_grid, write_grid_csv, write_keyvalue


def test_grid_round_trip(tmp_path):
    a = np.random.default_rng(0).standard_normal((5, 7, 3)).astype(np.float32)
    write_grid(tmp_path / "g.bin", a)
    back = read_grid(tmp_path / "g.bin")
    assert back.dtype == np.float32 and np.array_equal(back, a)


def test_grid_layout(tmp_path):
    a = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_grid(tmp_path / "g.bin", a)
    raw = (tmp_path / "g.bin").read_bytes()
    assert raw[:4] == b"DTSG"
    assert np.frombuffer(raw[4:16], "<u4").tolist() == [2, 3, 1]
    assert np.frombuffer(raw[16:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]
    assert read_grid(tmp_path / "g.bin").shape == (2, 3, 1)


def test_grid_rejects_bad_files(tmp_path):
    p = tmp_path / "g.bin"
    write_grid(p, np.ones((2, 2)))
    raw = p.read_bytes()
    (tmp_path / "magic.bin").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "short.bin").write_bytes(raw[:-4])
    (tmp_path / "head.bin").write_bytes(raw[:10])
    for name, msg in [("magic.bin", "magic"), ("short.bin", "expected"), ("head.bin", "truncated")]:
        with pytest.raises(ValueError, match=msg):
            read_grid(tmp_path / name)
    with pytest.raises(ValueError):
        write_grid(p, np.ones((2, 2, 2, 2)))


def test_grid_csv_round_trip(tmp_path):
    a = np.random.default_rng(1).standard_normal((3, 4, 2))
    write_grid_csv(tmp_path / "g.csv", a)
    assert np.array_equal(read_grid_csv(tmp_path / "g.csv"), a)
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "row,col,bin,value"


def test_csv_writes_exact_floats(tmp_path):
    write_csv(tmp_path / "t.csv", [{"a": np.float64(0.1), "b": np.int64(3), "c": "x"}], ["a", "b", "c"])
    assert (tmp_path / "t.csv").read_text() == "a,b,c\n0.1,3,x\n"


def test_keyvalue_round_trip(tmp_path):
    d = {"silog": np.float64(1.25), "n": np.int64(4), "name": "run", "flag": True}
    write_keyvalue(tmp_path / "k.yaml", d)
    back = read_keyvalue(tmp_path / "k.yaml")
    assert back == {"silog": 1.25, "n": 4, "name": "run", "flag": True}
    assert list(back) == list(d)
