"""Structural locality machinery: single edits, the k-edit perturbation
operator, the exact edit-distance oracle, pair labeling and the batch stream
for self-supervised pretraining."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .cells import (
    CONV1X1,
    CONV3X3,
    MAXPOOL3X3,
    NONE,
    NUM_SLOTS,
    UPPER_COORDS,
    INTERIOR_PERMS,
    CellGraph,
    DecodeInvalid,
    InvalidGraph,
    PaddedCell,
    encode_sequence,
    graphs_equal,
    is_pruned,
    is_valid,
    pad,
    prune,
    random_graph,
    unpad,
)

POSITIVE = "positive"
NEGATIVE = "negative"

# positive iff edit distance <= threshold
PAIR_THRESHOLD = 6

_EDIT_LABELS = (CONV1X1, CONV3X3, MAXPOOL3X3, NONE)
_NUM_EDGE_EDITS = len(UPPER_COORDS)             # 21
_NUM_OP_EDITS = (NUM_SLOTS - 2) * 3             # 5 slots x 3 alternative labels


class EditExhausted(RuntimeError):
    """No valid single edit found within the retry cap."""


class ConfigError(ValueError):
    """Inconsistent batch/stream configuration."""


def edit_distance(a: CellGraph, b: CellGraph) -> int:
    """Exact edit distance between two cells.

    Minimum, over all relabelings of the 5 interior padded slots, of the number
    of differing adjacency entries plus differing op slots between the
    pruned-padded forms.  Symmetric, zero iff the cells are isomorphic.
    """
    if not is_valid(a) or not is_valid(b):
        raise InvalidGraph("edit_distance expects valid cells")
    pa, pb = pad(prune(a)), pad(prune(b))
    adj_b = pb.adjacency7[INTERIOR_PERMS[:, :, None], INTERIOR_PERMS[:, None, :]]
    ops_b = pb.op_codes()[INTERIOR_PERMS]
    diffs = (adj_b != pa.adjacency7).sum(axis=(1, 2)) + (
        ops_b != pa.op_codes()
    ).sum(axis=1)
    return int(diffs.min())


def label_pair(a: CellGraph, b: CellGraph) -> str:
    """POSITIVE iff edit_distance(a, b) <= 6, NEGATIVE otherwise."""
    return POSITIVE if edit_distance(a, b) <= PAIR_THRESHOLD else NEGATIVE


def single_edit(
    g: CellGraph, rng: np.random.Generator, max_retries: int = 1000
) -> CellGraph:
    """Apply one uniformly chosen edge flip or op change to the padded form.

    Candidate edits that leave the cell invalid are redrawn.  An edit whose
    result re-prunes to something other than a one-entry change (a pruning
    cascade) is also redrawn, so the result is always within edit distance 1 of
    the input; activating an isolated slot re-prunes back to the input itself.
    """
    if not is_valid(g):
        raise InvalidGraph("single_edit expects a valid cell")
    g = prune(g)
    base = pad(g)
    for _ in range(max_retries):
        k = int(rng.integers(_NUM_EDGE_EDITS + _NUM_OP_EDITS))
        adj7 = base.adjacency7.copy()
        ops7 = list(base.ops7)
        if k < _NUM_EDGE_EDITS:
            i, j = UPPER_COORDS[k]
            adj7[i, j] ^= 1
        else:
            slot = 1 + (k - _NUM_EDGE_EDITS) // 3
            alternatives = [lb for lb in _EDIT_LABELS if lb != ops7[slot]]
            ops7[slot] = alternatives[(k - _NUM_EDGE_EDITS) % 3]
        try:
            stripped = unpad(PaddedCell(adj7, tuple(ops7)))
        except DecodeInvalid:
            continue
        if is_pruned(stripped):
            return stripped
        pruned = prune(stripped)
        if graphs_equal(pruned, g):
            return pruned
    raise EditExhausted(f"no valid edit after {max_retries} attempts")


def perturb(g: CellGraph, k: int, rng: np.random.Generator) -> CellGraph:
    """Compose k single edits (1 <= k <= 3); the positive-sample generator."""
    if not 1 <= k <= 3:
        raise ValueError("perturb supports 1 <= k <= 3 edits")
    for _ in range(k):
        g = single_edit(g, rng)
    return g


def sample_negative(
    rng: np.random.Generator,
    anchor: CellGraph | None = None,
    strict: bool = False,
) -> CellGraph:
    """A random cell presumed far (> 6 edits) from any anchor.

    The default mode never computes a distance; strict mode verifies against
    the given anchor and resamples while the pair would be labeled POSITIVE.
    """
    g = random_graph(rng)
    if strict:
        if anchor is None:
            raise ValueError("strict mode needs an anchor to verify against")
        while label_pair(anchor, g) == POSITIVE:
            g = random_graph(rng)
    return g


@dataclass
class PretrainBatch:
    """A batch of token sequences with anchor-group labels.

    Members of one group are an anchor and its positives; all cross-group
    members act as negatives for pair-wise losses.
    """

    sequences: np.ndarray     # (batch, 27) int64
    group_labels: np.ndarray  # (batch,) int64
    graphs: list[CellGraph]


def build_pretrain_epoch(
    num_anchors: int,
    batch_size: int,
    rng: np.random.Generator,
    positives_per_anchor: int = 7,
    max_edits: int = 3,
) -> Iterator[PretrainBatch]:
    """Stream batches of anchor groups: each group is one random anchor plus
    positives_per_anchor perturbations with k uniform in [1, max_edits].

    batch_size must be divisible by the group size; trailing anchors that do
    not fill a whole batch are dropped.
    """
    group = positives_per_anchor + 1
    if batch_size % group != 0:
        raise ConfigError(
            f"batch size {batch_size} not divisible by group size {group}"
        )
    groups_per_batch = batch_size // group
    for _ in range(num_anchors // groups_per_batch):
        graphs: list[CellGraph] = []
        labels = np.repeat(np.arange(groups_per_batch), group)
        for _ in range(groups_per_batch):
            anchor = random_graph(rng)
            graphs.append(anchor)
            for _ in range(positives_per_anchor):
                k = int(rng.integers(1, max_edits + 1))
                graphs.append(perturb(anchor, k, rng))
        seqs = np.array([encode_sequence(g) for g in graphs], dtype=np.int64)
        yield PretrainBatch(seqs, labels, graphs)


def distance_histogram(
    num_pairs: int, rng: np.random.Generator
) -> dict[int | str, int]:
    """Edit-distance counts over uniformly random cell pairs; distances above 6
    are pooled into the '>6' bucket."""
    counts: dict[int | str, int] = {d: 0 for d in range(PAIR_THRESHOLD + 1)}
    counts[">6"] = 0
    for _ in range(num_pairs):
        d = edit_distance(random_graph(rng), random_graph(rng))
        counts[d if d <= PAIR_THRESHOLD else ">6"] += 1
    return counts
