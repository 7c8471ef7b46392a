import numpy as np

from arf_forge.rng import child_rng


def test_same_keys_same_stream():
    a = child_rng(7, "alpha", 3).integers(0, 1_000_000, size=8)
    b = child_rng(7, "alpha", 3).integers(0, 1_000_000, size=8)
    assert np.array_equal(a, b)


def test_different_keys_differ():
    a = child_rng(7, "alpha", 3).integers(0, 1_000_000, size=8)
    b = child_rng(7, "alpha", 4).integers(0, 1_000_000, size=8)
    c = child_rng(8, "alpha", 3).integers(0, 1_000_000, size=8)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_string_keys_hash_stably():
    a = child_rng(0, "question", "q00042").random(4)
    b = child_rng(0, "question", "q00042").random(4)
    assert np.array_equal(a, b)


def test_sibling_independence():
    # Draw order in one child must not affect another child.
    a1 = child_rng(1, "x")
    _ = a1.random(100)
    b_after = child_rng(1, "y").random(4)
    b_fresh = child_rng(1, "y").random(4)
    assert np.array_equal(b_after, b_fresh)
