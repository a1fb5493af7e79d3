import numpy as np
import pytest

from locnas import locality
from locnas.cells import (
    CONV1X1,
    CONV3X3,
    INPUT,
    OUTPUT,
    CellGraph,
    canonical_hash,
    random_graph,
)
from locnas.locality import (
    NEGATIVE,
    POSITIVE,
    ConfigError,
    PretrainBatch,
    build_pretrain_epoch,
    edit_distance,
    label_pair,
    perturb,
    sample_negative,
    single_edit,
)


def chain(*ops):
    n = len(ops)
    adj = np.zeros((n, n), dtype=np.uint8)
    for i in range(n - 1):
        adj[i, i + 1] = 1
    return CellGraph(adj, ops)


class TestEditDistance:
    def test_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            g = random_graph(rng)
            assert edit_distance(g, g) == 0

    def test_single_op_swap_is_one(self):
        a = chain(INPUT, CONV3X3, OUTPUT)
        b = chain(INPUT, CONV1X1, OUTPUT)
        assert edit_distance(a, b) == 1

    def test_node_count_change_costs_at_least_three(self):
        # adding an interior node takes one op slot plus an in and an out edge
        two = chain(INPUT, OUTPUT)
        three = chain(INPUT, CONV1X1, OUTPUT)
        assert edit_distance(two, three) == 3

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            a, b = random_graph(rng), random_graph(rng)
            assert edit_distance(a, b) == edit_distance(b, a)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            a, b, c = (random_graph(rng) for _ in range(3))
            assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)

    def test_zero_iff_isomorphic(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            a, b = random_graph(rng), random_graph(rng)
            d = edit_distance(a, b)
            same = canonical_hash(a) == canonical_hash(b)
            assert (d == 0) == same


class TestEdits:
    def test_single_edit_within_distance_one(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            g = random_graph(rng)
            assert edit_distance(g, single_edit(g, rng)) <= 1

    def test_minimal_cell_edits_are_noops(self):
        # the 2-node cell has no distance-1 neighbor; every legal edit
        # (activating an isolated slot) re-prunes back to the input
        g = chain(INPUT, OUTPUT)
        rng = np.random.default_rng(5)
        for _ in range(20):
            assert edit_distance(g, single_edit(g, rng)) == 0

    def test_perturb_bounded_by_k(self):
        rng = np.random.default_rng(6)
        for k in (1, 2, 3):
            for _ in range(150):
                g = random_graph(rng)
                assert edit_distance(g, perturb(g, k, rng)) <= k

    def test_perturb_rejects_bad_k(self):
        rng = np.random.default_rng(7)
        g = random_graph(rng)
        with pytest.raises(ValueError):
            perturb(g, 0, rng)
        with pytest.raises(ValueError):
            perturb(g, 4, rng)

    def test_two_positives_within_six(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            g = random_graph(rng)
            p1 = perturb(g, int(rng.integers(1, 4)), rng)
            p2 = perturb(g, int(rng.integers(1, 4)), rng)
            assert edit_distance(p1, p2) <= 6


class TestLabels:
    def test_self_pair_positive(self):
        rng = np.random.default_rng(9)
        g = random_graph(rng)
        assert label_pair(g, g) == POSITIVE

    def test_perturbed_pair_positive(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            g = random_graph(rng)
            assert label_pair(g, perturb(g, 3, rng)) == POSITIVE

    def test_symmetric(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            a, b = random_graph(rng), random_graph(rng)
            assert label_pair(a, b) == label_pair(b, a)

    def test_most_random_pairs_negative(self):
        rng = np.random.default_rng(12)
        neg = sum(
            label_pair(random_graph(rng), random_graph(rng)) == NEGATIVE
            for _ in range(500)
        )
        assert neg / 500 > 0.8


class TestSampleNegative:
    def test_default_mode_never_measures_distance(self, monkeypatch):
        def boom(*args, **kwargs):
            raise AssertionError("edit_distance called in default mode")

        monkeypatch.setattr(locality, "edit_distance", boom)
        rng = np.random.default_rng(13)
        sample_negative(rng)

    def test_strict_mode_guarantees_negative(self):
        rng = np.random.default_rng(14)
        anchor = random_graph(rng)
        for _ in range(20):
            out = sample_negative(rng, anchor=anchor, strict=True)
            assert label_pair(anchor, out) == NEGATIVE

    def test_strict_mode_needs_anchor(self):
        with pytest.raises(ValueError):
            sample_negative(np.random.default_rng(15), strict=True)


class TestPretrainBatches:
    def test_batch_shape_and_groups(self):
        rng = np.random.default_rng(16)
        batches = list(build_pretrain_epoch(4, 16, rng))
        assert len(batches) == 2  # 16/8 = 2 groups per batch
        for b in batches:
            assert isinstance(b, PretrainBatch)
            assert b.sequences.shape == (16, 27)
            assert b.group_labels.tolist() == [0] * 8 + [1] * 8
            assert b.sequences.min() >= 1 and b.sequences.max() <= 7

    def test_512_batch_has_64_groups(self):
        rng = np.random.default_rng(17)
        batch = next(build_pretrain_epoch(64, 512, rng))
        assert len(set(batch.group_labels.tolist())) == 64
        assert batch.sequences.shape == (512, 27)

    def test_in_group_pairs_within_six(self):
        rng = np.random.default_rng(18)
        batch = next(build_pretrain_epoch(2, 16, rng))
        for lab in (0, 1):
            idx = np.nonzero(batch.group_labels == lab)[0]
            members = [batch.graphs[i] for i in idx]
            for i in range(len(members)):
                for j in range(i + 1, len(members)):
                    assert edit_distance(members[i], members[j]) <= 6

    def test_divisibility_enforced(self):
        rng = np.random.default_rng(19)
        with pytest.raises(ConfigError):
            next(build_pretrain_epoch(4, 12, rng))

    def test_deterministic_given_seed(self):
        a = next(build_pretrain_epoch(4, 32, np.random.default_rng(20)))
        b = next(build_pretrain_epoch(4, 32, np.random.default_rng(20)))
        assert np.array_equal(a.sequences, b.sequences)
        assert np.array_equal(a.group_labels, b.group_labels)


def test_distance_histogram_smoke():
    rng = np.random.default_rng(21)
    counts = locality.distance_histogram(300, rng)
    assert sum(counts.values()) == 300
    assert counts[">6"] / 300 > 0.75
