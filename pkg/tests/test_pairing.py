from collections import Counter

import numpy as np
import pytest

from mospc.pairing import make_pairs


def _is_single_cycle(pairs, n):
    adj = {i: [] for i in range(n)}
    for a, b in pairs:
        adj[a].append(b)
        adj[b].append(a)
    seen, prev, cur = {0}, None, 0
    while True:
        nxt = adj[cur][0] if adj[cur][0] != prev else adj[cur][1]
        if nxt == 0:
            break
        seen.add(nxt)
        prev, cur = cur, nxt
    return len(seen) == n


def test_singleton_batch_has_no_pairs():
    assert make_pairs(1, 0).pairs == ()


def test_two_samples_form_one_pair():
    for seed in range(10):
        (pair,) = make_pairs(2, seed).pairs
        assert sorted(pair) == [0, 1]


def test_batch_of_eight_every_index_twice():
    for seed in range(200):
        pb = make_pairs(8, seed)
        assert len(pb) == 8
        counts = Counter(i for pair in pb.pairs for i in pair)
        assert set(counts.values()) == {2} and set(counts) == set(range(8))


@pytest.mark.parametrize("b", [3, 4, 5, 8, 17, 64])
def test_ring_structure(b):
    for seed in range(50):
        pairs = make_pairs(b, seed).pairs
        assert all(i != j for i, j in pairs)
        assert len({frozenset(p) for p in pairs}) == len(pairs)
        assert _is_single_cycle(pairs, b)


def test_pairings_vary_across_rng_states():
    # 2520 distinct undirected 8-cycles exist, so consecutive draws should rarely repeat
    rng = np.random.default_rng(0)
    cycles = [frozenset(frozenset(p) for p in make_pairs(8, rng).pairs) for _ in range(1001)]
    differing = sum(a != b for a, b in zip(cycles, cycles[1:]))
    assert differing / 1000 >= 0.99


def test_rejects_empty_batch():
    with pytest.raises(ValueError):
        make_pairs(0, 0)
