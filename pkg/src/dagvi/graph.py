"""Adjacency matrices: linearization, acyclicity, the trace-exponential
penalty, structural distances and Markov equivalence.

Row ``i`` / column ``j`` set to 1 means a directed edge ``i -> j``. Nodes are
0-based in code; the edge-list text format is 1-based.
"""
from __future__ import annotations

import json
import math
from functools import lru_cache
from itertools import combinations
from pathlib import Path

import numpy as np


class CyclicGraph(ValueError):
    """Raised when an operation needs a DAG but got a graph with a cycle."""


def validate(A) -> np.ndarray:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValueError(f"adjacency matrix must be square and non-empty, got shape {A.shape}")
    if not np.all((A == 0) | (A == 1)):
        raise ValueError("adjacency entries must be 0 or 1")
    if np.any(np.diag(A) != 0):
        raise ValueError("adjacency matrix has a self-loop")
    return A.astype(np.int8)


def num_entries(d: int) -> int:
    """Number of off-diagonal entries, i.e. the length of a linearized graph."""
    return d * (d - 1)


@lru_cache(maxsize=None)
def offdiag_positions(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the off-diagonal entries in row-major order."""
    rows, cols = np.nonzero(~np.eye(d, dtype=bool))
    rows.flags.writeable = False
    cols.flags.writeable = False
    return rows, cols


def linearize(A) -> np.ndarray:
    """Off-diagonal entries of ``A`` in row-major order, skipping the diagonal.

    For d=3 the order is (0,1), (0,2), (1,0), (1,2), (2,0), (2,1).
    """
    A = np.asarray(A)
    rows, cols = offdiag_positions(A.shape[-1])
    return A[..., rows, cols].astype(np.int8)


def delinearize(bits, d: int) -> np.ndarray:
    """Inverse of :func:`linearize`; accepts a trailing batch of bit vectors.

    Integer input gives an ``int8`` matrix; real-valued entries (edge
    probabilities, say) keep their dtype.
    """
    bits = np.asarray(bits)
    if bits.shape[-1] != num_entries(d):
        raise ValueError(f"expected {num_entries(d)} bits for d={d}, got {bits.shape[-1]}")
    rows, cols = offdiag_positions(d)
    dtype = bits.dtype if np.issubdtype(bits.dtype, np.floating) else np.int8
    A = np.zeros(bits.shape[:-1] + (d, d), dtype=dtype)
    A[..., rows, cols] = bits
    return A


def graph_index(A) -> int:
    """Integer code of ``A``: bit ``k`` of the code is linearized entry ``k``."""
    bits = linearize(A)
    return int(sum(int(b) << k for k, b in enumerate(bits)))


def index_to_graph(code: int, d: int) -> np.ndarray:
    m = num_entries(d)
    if not 0 <= code < 2**m:
        raise ValueError(f"graph index {code} out of range for d={d}")
    bits = [(code >> k) & 1 for k in range(m)]
    return delinearize(bits, d)


def all_bits(d: int) -> np.ndarray:
    """Every off-diagonal configuration, row ``c`` holding the bits of index ``c``."""
    m = num_entries(d)
    codes = np.arange(2**m, dtype=np.int64)
    return ((codes[:, None] >> np.arange(m)) & 1).astype(np.int8)


def all_graphs(d: int) -> np.ndarray:
    """All ``2**(d(d-1))`` adjacency matrices, ordered by graph index."""
    return delinearize(all_bits(d), d)


def is_acyclic(A) -> bool:
    """Decide acyclicity by repeatedly removing nodes with no incoming edges."""
    A = np.asarray(A, dtype=bool).copy()
    remaining = np.ones(A.shape[0], dtype=bool)
    while remaining.any():
        indeg = A[np.ix_(remaining, remaining)].sum(axis=0)
        sources = np.flatnonzero(remaining)[indeg == 0]
        if sources.size == 0:
            return False
        remaining[sources] = False
    return True


def topological_order(A) -> list[int]:
    """Kahn's algorithm, always taking the lowest-numbered available source."""
    A = np.asarray(A, dtype=bool)
    d = A.shape[0]
    indeg = A.sum(axis=0).astype(int)
    ready = [j for j in range(d) if indeg[j] == 0]
    order = []
    while ready:
        ready.sort()
        i = ready.pop(0)
        order.append(i)
        for j in np.flatnonzero(A[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(int(j))
    if len(order) != d:
        raise CyclicGraph("graph contains a directed cycle")
    return order


def expm(M) -> np.ndarray:
    """Matrix exponential by Taylor series with scaling and squaring.

    The matrix is scaled by ``2**-s`` until its 1-norm is at most 1/2, the
    series is summed until terms drop below machine precision relative to
    the partial sum, and the result is squared ``s`` times.
    """
    M = np.asarray(M, dtype=float)
    norm = np.abs(M).sum(axis=0).max() if M.size else 0.0
    s = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    X = M / 2.0**s
    result = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, 60):
        term = term @ X / k
        result = result + term
        if np.abs(term).max() <= np.finfo(float).eps * np.abs(result).max():
            break
    for _ in range(s):
        result = result @ result
    return result


def dag_penalty(A) -> float:
    """``tr(exp(A)) - d``; zero exactly on acyclic graphs."""
    A = np.asarray(A, dtype=float)
    return float(np.trace(expm(A)) - A.shape[0])


def num_edges(A) -> int:
    return int(np.asarray(A).sum())


def shd(A, B) -> int:
    """Structural Hamming distance.

    Counts unordered node pairs whose edge state (none, forward, backward,
    both) differs, so a reversed edge costs one operation.
    """
    A = np.asarray(A, dtype=bool)
    B = np.asarray(B, dtype=bool)
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    diff = A != B
    pair_diff = diff | diff.T
    return int(np.triu(pair_diff, k=1).sum())


def skeleton(A) -> np.ndarray:
    A = np.asarray(A, dtype=bool)
    return A | A.T


def v_structures(A) -> set[tuple[int, int, int]]:
    """Unshielded colliders ``(i, k, j)`` with ``i -> k <- j``, ``i < j`` and ``i``, ``j`` non-adjacent."""
    A = np.asarray(A, dtype=bool)
    skel = skeleton(A)
    out = set()
    for k in range(A.shape[0]):
        parents = np.flatnonzero(A[:, k])
        for i, j in combinations(parents, 2):
            if not skel[i, j]:
                out.add((int(i), k, int(j)))
    return out


def markov_equivalent(A, B) -> bool:
    """Same skeleton and same v-structures (valid for DAGs)."""
    return bool(np.array_equal(skeleton(A), skeleton(B))) and v_structures(A) == v_structures(B)


def has_equivalent_reversal(A) -> bool:
    """True if reversing a single edge yields a distinct Markov-equivalent DAG.

    A DAG's equivalence class has more than one member exactly when it has a
    covered edge, and reversing a covered edge preserves equivalence, so this
    is a test for class size > 1.
    """
    A = np.asarray(A, dtype=np.int8)
    for i, j in zip(*np.nonzero(A)):
        B = A.copy()
        B[i, j], B[j, i] = 0, 1
        if is_acyclic(B) and markov_equivalent(A, B):
            return True
    return False


def to_json(A) -> str:
    return json.dumps(np.asarray(A, dtype=int).tolist())


def from_json(text: str) -> np.ndarray:
    return validate(np.array(json.loads(text), dtype=int))


def to_edge_list(A) -> str:
    """One ``"i j"`` line per edge, 1-based."""
    rows, cols = np.nonzero(np.asarray(A))
    return "".join(f"{i + 1} {j + 1}\n" for i, j in zip(rows, cols))


def from_edge_list(text: str, d: int) -> np.ndarray:
    A = np.zeros((d, d), dtype=np.int8)
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'i j', got {line!r}")
        i, j = (int(p) - 1 for p in parts)
        if not (0 <= i < d and 0 <= j < d):
            raise ValueError(f"line {lineno}: node out of range for d={d}")
        A[i, j] = 1
    return validate(A)


def save_json(A, path) -> None:
    Path(path).write_text(to_json(A))


def load_json(path) -> np.ndarray:
    return from_json(Path(path).read_text())
