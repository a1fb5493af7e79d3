"""The cell search space: labeled DAG cells, validity, pruning, hashing and the
bidirectional graph <-> 27-token sequence codec.

A cell is a DAG over at most 7 nodes with at most 9 edges.  Node 0 is the input,
the last node is the output, interior nodes carry one of three operations.  All
adjacency matrices are strictly upper triangular, so node order is always a
topological order.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from hashlib import blake2b

import numpy as np

INPUT = "input"
OUTPUT = "output"
CONV1X1 = "conv1x1-bn-relu"
CONV3X3 = "conv3x3-bn-relu"
MAXPOOL3X3 = "maxpool3x3"
NONE = "none"

INTERIOR_OPS = (CONV1X1, CONV3X3, MAXPOOL3X3)

MAX_NODES = 7
MAX_EDGES = 9
NUM_SLOTS = 7            # padded slots: 0 = input, 6 = output
SEQ_LEN = 27             # 21 adjacency tokens + 6 op tokens
VOCAB_SIZE = 7           # token ids 1..7 (0 is reserved by the controller)

# token vocabulary
TOK_EDGE_ABSENT = 1
TOK_EDGE_PRESENT = 2
TOK_CONV1X1 = 3
TOK_CONV3X3 = 4
TOK_MAXPOOL3X3 = 5
TOK_OUTPUT = 6
TOK_NONE = 7

_OP_TO_TOKEN = {
    CONV1X1: TOK_CONV1X1,
    CONV3X3: TOK_CONV3X3,
    MAXPOOL3X3: TOK_MAXPOOL3X3,
    OUTPUT: TOK_OUTPUT,
    NONE: TOK_NONE,
}
_TOKEN_TO_OP = {v: k for k, v in _OP_TO_TOKEN.items()}

# integer codes for padded op slots; only used for vectorized distance work
_OP_CODE = {NONE: 0, INPUT: 1, OUTPUT: 2, CONV1X1: 3, CONV3X3: 4, MAXPOOL3X3: 5}

# row-major upper-triangle coordinates of the 7x7 adjacency (21 entries)
UPPER_COORDS = tuple(
    (i, j) for i in range(NUM_SLOTS) for j in range(i + 1, NUM_SLOTS)
)

# all relabelings of the 5 interior slots, as index arrays over the 7 slots
INTERIOR_PERMS = np.array(
    [(0, *p, 6) for p in itertools.permutations(range(1, 6))], dtype=np.intp
)


class InvalidGraph(ValueError):
    """Operation applied to a graph that fails the structural validity rules."""


class DecodeInvalid(ValueError):
    """Token sequence does not describe a valid cell."""


@dataclass(frozen=True, eq=False)
class CellGraph:
    """A labeled DAG cell: strictly upper-triangular adjacency plus node ops."""

    adjacency: np.ndarray   # (n, n) uint8
    ops: tuple[str, ...]    # length n

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.uint8)
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "ops", tuple(self.ops))

    @property
    def node_count(self) -> int:
        return len(self.ops)

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.sum())

    def edges(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.adjacency))]

    def __repr__(self):
        return f"CellGraph(nodes={self.node_count}, edges={self.edges()}, ops={self.ops})"


def graphs_equal(a: CellGraph, b: CellGraph) -> bool:
    """Structural equality (same labeling); use canonical_hash for isomorphism."""
    return a.ops == b.ops and np.array_equal(a.adjacency, b.adjacency)


def _reach_from_input(adj: np.ndarray) -> np.ndarray:
    n = adj.shape[0]
    reach = np.zeros(n, dtype=bool)
    reach[0] = True
    for i in range(n):
        if reach[i]:
            reach |= adj[i].astype(bool)
    return reach


def _reach_to_output(adj: np.ndarray) -> np.ndarray:
    n = adj.shape[0]
    reach = np.zeros(n, dtype=bool)
    reach[n - 1] = True
    for j in range(n - 1, -1, -1):
        if reach[j]:
            reach |= adj[:, j].astype(bool)
    return reach


def is_valid(g: CellGraph) -> bool:
    """True iff node/edge caps hold, op labels are well placed and an
    input->output path exists.  Nodes off every path are allowed (see prune)."""
    n = g.node_count
    if n < 2 or n > MAX_NODES:
        return False
    adj = g.adjacency
    if adj.shape != (n, n):
        return False
    if np.any(adj > 1) or np.any(np.tril(adj) != 0):
        return False
    if int(adj.sum()) > MAX_EDGES:
        return False
    if g.ops[0] != INPUT or g.ops[-1] != OUTPUT:
        return False
    if any(op not in INTERIOR_OPS for op in g.ops[1:-1]):
        return False
    return bool(_reach_from_input(adj)[n - 1])


def is_pruned(g: CellGraph) -> bool:
    """True iff every node lies on some input->output path."""
    if not is_valid(g):
        return False
    on_path = _reach_from_input(g.adjacency) & _reach_to_output(g.adjacency)
    return bool(on_path.all())


def prune(g: CellGraph) -> CellGraph:
    """Subgraph induced by nodes on some input->output path, kept in
    topological order.  Idempotent."""
    if not is_valid(g):
        raise InvalidGraph("cannot prune an invalid cell")
    on_path = _reach_from_input(g.adjacency) & _reach_to_output(g.adjacency)
    if on_path.all():
        return g
    keep = np.nonzero(on_path)[0]
    return CellGraph(g.adjacency[np.ix_(keep, keep)], tuple(g.ops[i] for i in keep))


@dataclass(frozen=True, eq=False)
class PaddedCell:
    """A pruned cell embedded in the fixed 7-slot frame: original nodes occupy
    slots 0..n-2 plus slot 6, absent slots are NONE with no incident edges."""

    adjacency7: np.ndarray   # (7, 7) uint8
    ops7: tuple[str, ...]    # length 7

    def __post_init__(self):
        adj = np.asarray(self.adjacency7, dtype=np.uint8)
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency7", adj)
        object.__setattr__(self, "ops7", tuple(self.ops7))

    def op_codes(self) -> np.ndarray:
        return np.array([_OP_CODE[op] for op in self.ops7], dtype=np.int8)


def pad(g: CellGraph) -> PaddedCell:
    """Embed a pruned cell into the 7-slot frame."""
    if not is_pruned(g):
        raise InvalidGraph("pad expects a pruned cell")
    n = g.node_count
    slots = list(range(n - 1)) + [NUM_SLOTS - 1]
    adj7 = np.zeros((NUM_SLOTS, NUM_SLOTS), dtype=np.uint8)
    ops7 = [NONE] * NUM_SLOTS
    for orig, slot in enumerate(slots):
        ops7[slot] = g.ops[orig]
    for i, j in g.edges():
        adj7[slots[i], slots[j]] = 1
    return PaddedCell(adj7, tuple(ops7))


def unpad(p: PaddedCell) -> CellGraph:
    """Strip NONE slots; raises DecodeInvalid if a NONE slot has an edge or the
    stripped cell is invalid.  The result is not re-pruned."""
    active = [s for s in range(NUM_SLOTS) if p.ops7[s] != NONE]
    inactive = [s for s in range(NUM_SLOTS) if p.ops7[s] == NONE]
    adj = p.adjacency7
    if inactive and (adj[inactive, :].any() or adj[:, inactive].any()):
        raise DecodeInvalid("edge incident to an absent slot")
    g = CellGraph(adj[np.ix_(active, active)], tuple(p.ops7[s] for s in active))
    if not is_valid(g):
        raise DecodeInvalid("stripped cell violates validity rules")
    return g


def encode_sequence(g: CellGraph) -> list[int]:
    """Serialize prune(g) as 27 tokens: 21 adjacency tokens (row-major upper
    triangle) followed by op tokens for slots 1..6."""
    if not is_valid(g):
        raise InvalidGraph("cannot encode an invalid cell")
    p = pad(prune(g))
    tokens = [
        TOK_EDGE_PRESENT if p.adjacency7[i, j] else TOK_EDGE_ABSENT
        for i, j in UPPER_COORDS
    ]
    tokens += [_OP_TO_TOKEN[p.ops7[s]] for s in range(1, NUM_SLOTS)]
    return tokens


def decode_sequence(tokens) -> CellGraph:
    """Reconstruct and prune the cell a token sequence describes.

    Raises DecodeInvalid when the layout is violated (op token in an adjacency
    position or vice versa), a NONE slot has incident edges, the edge cap is
    exceeded, or no input->output path exists.
    """
    tokens = [int(t) for t in tokens]
    if len(tokens) != SEQ_LEN:
        raise DecodeInvalid(f"expected {SEQ_LEN} tokens, got {len(tokens)}")
    adj7 = np.zeros((NUM_SLOTS, NUM_SLOTS), dtype=np.uint8)
    for pos, (i, j) in enumerate(UPPER_COORDS):
        t = tokens[pos]
        if t not in (TOK_EDGE_ABSENT, TOK_EDGE_PRESENT):
            raise DecodeInvalid(f"adjacency position {pos} holds token {t}")
        adj7[i, j] = 1 if t == TOK_EDGE_PRESENT else 0
    ops7 = [INPUT]
    for slot in range(1, NUM_SLOTS):
        t = tokens[21 + slot - 1]
        op = _TOKEN_TO_OP.get(t)
        if op is None:
            raise DecodeInvalid(f"op slot {slot} holds token {t}")
        if slot < NUM_SLOTS - 1 and op == OUTPUT:
            raise DecodeInvalid("interior slot labeled as output")
        if slot == NUM_SLOTS - 1 and op != OUTPUT:
            raise DecodeInvalid("final slot must be the output")
        ops7.append(op)
    return prune(unpad(PaddedCell(adj7, tuple(ops7))))


# -- exhaustive space table ----------------------------------------------------
#
# The cell space is small enough to enumerate exactly: every pruned wiring per
# node count, canonicalized over interior relabelings together with the op
# assignment.  random_graph samples uniformly over the resulting unique cells,
# which is the distribution architecture pairs are drawn from when measuring
# the distance histogram of the space.

_space_cache: "_CellSpace | None" = None


class _CellSpace:
    def __init__(self):
        reps_n: list[np.ndarray] = []
        reps_bits: list[np.ndarray] = []
        reps_ops: list[np.ndarray] = []
        perms = INTERIOR_PERMS
        inv_int = np.argsort(perms, axis=1)[:, 1:6] - 1  # (120, 5)
        pow4 = 4 ** np.arange(5, dtype=np.int64)
        pow2 = np.float64(2.0) ** np.arange(49)
        for n in range(2, MAX_NODES + 1):
            wirings = _enumerate_wirings(n)  # (W, 7, 7) padded, bool
            n_int = n - 2
            ops_all = _op_assignments(n_int)  # (A, n_int) values 0..2
            # padded interior code vector: active slots 1..n-2, NONE elsewhere
            codes = np.full((len(ops_all), 5), 3, dtype=np.int64)
            codes[:, :n_int] = ops_all
            # ops_enc[p, a]: assignment a relabeled by perm p, base-4 packed
            ops_enc = np.einsum("apk,k->pa", codes[:, inv_int], pow4)
            keys_parts = []
            chunk = 256
            for start in range(0, len(wirings), chunk):
                adj = wirings[start : start + chunk]
                imgs = adj[:, perms[:, :, None], perms[:, None, :]]  # (C,120,7,7)
                packed = (
                    imgs.reshape(len(adj), len(perms), 49).astype(np.float64) @ pow2
                ).astype(np.int64)
                keys = (packed[:, :, None] << 10) + ops_enc[None, :, :]
                keys_parts.append(keys.min(axis=1))  # (C, A)
            keys_all = np.concatenate(keys_parts, axis=0).ravel()
            _, first = np.unique(keys_all, return_index=True)
            w_idx, a_idx = np.divmod(first, len(ops_all))
            bits = (wirings.reshape(len(wirings), 49).astype(np.float64) @ pow2).astype(
                np.int64
            )
            reps_n.append(np.full(len(first), n, dtype=np.int8))
            reps_bits.append(bits[w_idx])
            reps_ops.append(ops_all[a_idx] if n_int else np.zeros((len(first), 0), np.int64))
        self.counts_by_n = [len(r) for r in reps_n]
        self.node_counts = np.concatenate(reps_n)
        self.wiring_bits = np.concatenate(reps_bits)
        self.op_rows = [row for rows in reps_ops for row in rows]
        self.total = len(self.node_counts)

    def cell(self, index: int) -> CellGraph:
        n = int(self.node_counts[index])
        bits = int(self.wiring_bits[index])
        adj7 = np.zeros((NUM_SLOTS, NUM_SLOTS), dtype=np.uint8)
        flat = [(bits >> k) & 1 for k in range(49)]
        adj7[:] = np.array(flat, dtype=np.uint8).reshape(NUM_SLOTS, NUM_SLOTS)
        slots = list(range(n - 1)) + [NUM_SLOTS - 1]
        adj = adj7[np.ix_(slots, slots)]
        ops = (
            (INPUT,)
            + tuple(INTERIOR_OPS[c] for c in self.op_rows[index])
            + (OUTPUT,)
        )
        return CellGraph(adj, ops)


def _enumerate_wirings(n: int) -> np.ndarray:
    """All pruned wirings on n nodes (every node on an input->output path,
    <= 9 edges), embedded in the padded 7-slot frame."""
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    m = len(pairs)
    slots = list(range(n - 1)) + [NUM_SLOTS - 1]
    out = []
    chunk = 1 << 18
    for start in range(0, 1 << m, chunk):
        idx = np.arange(start, min(start + chunk, 1 << m), dtype=np.int64)
        bits = (idx[:, None] >> np.arange(m)[None, :]) & 1
        idx = idx[bits.sum(axis=1) <= MAX_EDGES]
        bits = (idx[:, None] >> np.arange(m)[None, :]) & 1
        adj = np.zeros((len(idx), n, n), dtype=bool)
        for k, (i, j) in enumerate(pairs):
            adj[:, i, j] = bits[:, k] == 1
        fwd = np.zeros((len(idx), n), dtype=bool)
        fwd[:, 0] = True
        for i in range(n):
            fwd |= fwd[:, i][:, None] & adj[:, i, :]
        bwd = np.zeros((len(idx), n), dtype=bool)
        bwd[:, n - 1] = True
        for j in range(n - 1, -1, -1):
            bwd |= bwd[:, j][:, None] & adj[:, :, j]
        keep = (fwd & bwd).all(axis=1)
        padded = np.zeros((int(keep.sum()), NUM_SLOTS, NUM_SLOTS), dtype=bool)
        padded[np.ix_(range(int(keep.sum())), slots, slots)] = adj[keep]
        out.append(padded)
    return np.concatenate(out, axis=0)


def _op_assignments(k: int) -> np.ndarray:
    if k == 0:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.meshgrid(*([np.arange(3)] * k), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)


def the_space() -> _CellSpace:
    """The exhaustively enumerated cell space (built lazily, cached)."""
    global _space_cache
    if _space_cache is None:
        _space_cache = _CellSpace()
    return _space_cache


def space_size() -> int:
    """Number of unique cells (up to isomorphism) in the search space."""
    return the_space().total


def random_graph(rng: np.random.Generator) -> CellGraph:
    """Uniform sample over the unique cells of the search space.

    Backed by the exhaustive space table, so every isomorphism class is equally
    likely; the returned cell is always valid and pruned.
    """
    space = the_space()
    return space.cell(int(rng.integers(space.total)))


# -- canonical hashing --------------------------------------------------------

# WL digests are exact on this space in every sweep we ran; the registry guards
# the remaining theoretical collisions by brute-force isomorphism comparison.
_collision_registry: dict[str, list[PaddedCell]] = {}


def _wl_digest(g: CellGraph) -> str:
    adj = g.adjacency.astype(bool)
    n = g.node_count
    in_nbrs = [np.nonzero(adj[:, v])[0] for v in range(n)]
    out_nbrs = [np.nonzero(adj[v, :])[0] for v in range(n)]
    labels = [
        _h(f"{g.ops[v]}|{len(in_nbrs[v])}|{len(out_nbrs[v])}") for v in range(n)
    ]
    for _ in range(n):
        labels = [
            _h(
                labels[v]
                + "<" + ",".join(sorted(labels[u] for u in in_nbrs[v]))
                + ">" + ",".join(sorted(labels[u] for u in out_nbrs[v]))
            )
            for v in range(n)
        ]
    return _h(f"{n}|{g.edge_count}|" + ",".join(sorted(labels)))


def _h(s: str) -> str:
    return blake2b(s.encode(), digest_size=16).hexdigest()


def _isomorphic_padded(a: PaddedCell, b: PaddedCell) -> bool:
    ca, cb = a.op_codes(), b.op_codes()
    adj_b = b.adjacency7[INTERIOR_PERMS[:, :, None], INTERIOR_PERMS[:, None, :]]
    ops_b = cb[INTERIOR_PERMS]
    hits = (adj_b == a.adjacency7).all(axis=(1, 2)) & (ops_b == ca).all(axis=1)
    return bool(hits.any())


def canonical_hash(g: CellGraph) -> str:
    """Isomorphism-invariant identity of prune(g).

    Iterated neighborhood hashing over the pruned cell; a per-process registry
    resolves any digest collision between non-isomorphic cells by exhaustive
    interior relabeling, so equal hashes always mean isomorphic cells.
    """
    if not is_valid(g):
        raise InvalidGraph("cannot hash an invalid cell")
    p = prune(g)
    digest = _wl_digest(p)
    padded = pad(p)
    reps = _collision_registry.setdefault(digest, [])
    for k, rep in enumerate(reps):
        if _isomorphic_padded(padded, rep):
            return digest if k == 0 else f"{digest}.{k}"
    reps.append(padded)
    k = len(reps) - 1
    return digest if k == 0 else f"{digest}.{k}"


# -- text formats --------------------------------------------------------------


def graph_to_json(g: CellGraph) -> str:
    """One-line JSON with `ops` (label strings) and `edges` ([i, j] pairs)."""
    return json.dumps({"ops": list(g.ops), "edges": [list(e) for e in g.edges()]})


def graph_from_json(line: str) -> CellGraph:
    obj = json.loads(line)
    ops = tuple(obj["ops"])
    n = len(ops)
    adj = np.zeros((n, n), dtype=np.uint8)
    for i, j in obj["edges"]:
        if not (0 <= i < n and 0 <= j < n):
            raise InvalidGraph(f"edge ({i}, {j}) out of range for {n} nodes")
        adj[i, j] = 1
    return CellGraph(adj, ops)


def sequence_to_str(tokens) -> str:
    return " ".join(str(int(t)) for t in tokens)


def sequence_from_str(text: str) -> list[int]:
    return [int(t) for t in text.split()]
