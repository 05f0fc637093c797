from __future__ import annotations

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from sparsedom.rng import SplitMix64

M64 = (1 << 64) - 1


def scalar_splitmix(seed: int, count: int) -> list[int]:
    """Plain-integer reference, written from the published algorithm."""
    out = []
    x = seed & M64
    for _ in range(count):
        x = (x + 0x9E3779B97F4A7C15) & M64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        out.append(z ^ (z >> 31))
    return out


def test_reference_vector():
    assert int(SplitMix64(1234567).next_u64(1)[0]) == 0x599ED017FB08FC85


@given(st.integers(0, M64), st.integers(1, 40))
def test_matches_scalar_reference(seed, count):
    assert [int(v) for v in SplitMix64(seed).next_u64(count)] == scalar_splitmix(seed, count)


def test_stream_is_sequential():
    a = SplitMix64(99)
    first = a.next_u64(5)
    rest = a.next_u64(3)
    assert list(np.concatenate([first, rest])) == list(SplitMix64(99).next_u64(8))


def test_unit_interval_and_ranges():
    g = SplitMix64(5)
    u = g.random(10000)
    assert (u >= 0).all() and (u < 1).all()
    i = g.integers(7, 10000)
    assert i.min() == 0 and i.max() == 6
    assert abs(u.mean() - 0.5) < 0.02


def test_spawn_is_deterministic_and_distinct():
    a, b = SplitMix64(3).spawn(1), SplitMix64(3).spawn(1)
    assert list(a.next_u64(4)) == list(b.next_u64(4))
    assert list(SplitMix64(3).spawn(2).next_u64(4)) != list(SplitMix64(3).spawn(1).next_u64(4))
