import numpy as np
import pytest

from slotfree import io
from slotfree.errors import InsufficientDataError
from slotfree.network import KWinnerConfig, KWinnerMHN
from slotfree.patterns import random_patterns, tgcrp_generate

SMALL = KWinnerConfig(n_v=100, n_h=30, k_h=3, f=0.2, epsilon=0.3, s_v=0.1)


def test_pattern_round_trip(tmp_path, rng):
    p = random_patterns(10, 100, 0.1, rng)
    io.write_patterns(tmp_path / "p.txt", p)
    assert np.array_equal(io.read_patterns(tmp_path / "p.txt"), p)


def test_pattern_file_validation(tmp_path):
    f = tmp_path / "p.txt"
    f.write_text("10\n3 1\n")
    with pytest.raises(io.SchemaError):
        io.read_patterns(f)
    f.write_text("")
    with pytest.raises(io.SchemaError):
        io.read_patterns(f)


def test_tree_edges_round_trip(tmp_path, rng):
    tree = tgcrp_generate(40, 100, 0.1, 2, rng)
    io.write_tree_edges(tmp_path / "e.txt", tree)
    assert io.read_tree_edges(tmp_path / "e.txt") == [tuple(e) for e in tree.edges()]


def test_checkpoint_round_trip_is_exact(tmp_path, rng):
    net = KWinnerMHN.init(SMALL, rng)
    net.learn_sequence(random_patterns(40, 100, 0.1, rng))
    io.save_checkpoint(tmp_path / "c.txt", net)
    back = io.load_checkpoint(tmp_path / "c.txt")
    assert back.config == net.config
    assert np.array_equal(back.M, net.M) and np.array_equal(back.M_ret, net.M_ret)
    probes = random_patterns(10, 100, 0.1, rng)
    assert np.array_equal(back.retrieve_batch(probes)[0], net.retrieve_batch(probes)[0])


def test_truncated_checkpoint(tmp_path, rng):
    net = KWinnerMHN.init(SMALL, rng)
    io.save_checkpoint(tmp_path / "c.txt", net)
    lines = (tmp_path / "c.txt").read_text().splitlines()
    (tmp_path / "c.txt").write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(io.SchemaError):
        io.load_checkpoint(tmp_path / "c.txt")


def test_curve_file_errors(tmp_path):
    f = tmp_path / "c.csv"
    f.write_text(",".join(io.CURVE_COLUMNS) + "\n")
    with pytest.raises(InsufficientDataError):
        io.read_curve(f)
    f.write_text("age,rd\n1,0.5\n")
    with pytest.raises(io.SchemaError):
        io.read_curve(f)
    f.write_text("")
    with pytest.raises(InsufficientDataError):
        io.read_curve(f)


def test_json_handles_numpy(tmp_path):
    io.write_json(tmp_path / "j.json", {"a": np.int64(3), "b": np.float32(0.5), "c": np.arange(2)})
    assert '"a": 3' in (tmp_path / "j.json").read_text()
