"""Pairwise win counts and Bradley-Terry strength estimation.

Scores are maximum-likelihood log strengths under the Bradley-Terry
model, found by minorization-maximization and shifted to zero mean, so
only orderings and gaps carry meaning.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MM_TOL = 1e-10
MM_MAX_ITER = 100_000


class RankingError(ValueError):
    """Raised for malformed matrices or unidentifiable models."""


@dataclass(frozen=True)
class PairwiseMatrix:
    """Win counts C where C[i][j] is how often method i beat method j."""

    methods: tuple
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        methods = tuple(self.methods)
        if len(methods) < 2:
            raise RankingError(f"need at least two methods, got {len(methods)}")
        if len(set(methods)) != len(methods):
            raise RankingError(f"duplicate method names: {methods}")
        arr = np.asarray(self.counts)
        n = len(methods)
        if arr.shape != (n, n):
            raise RankingError(f"counts must be {n}x{n}, got {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.round(arr)):
                raise RankingError("win counts must be integers")
        arr = arr.astype(np.int64)
        if (arr < 0).any():
            raise RankingError("win counts must be non-negative")
        if np.diagonal(arr).any():
            raise RankingError("diagonal of the win matrix must be zero")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "counts", arr)


def _components(pairs: np.ndarray) -> list[list[int]]:
    n = pairs.shape[0]
    seen = [False] * n
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        stack, comp = [start], []
        seen[start] = True
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in range(n):
                if not seen[v] and pairs[u, v] > 0:
                    seen[v] = True
                    stack.append(v)
        comps.append(sorted(comp))
    return comps


def bt_scores(matrix: PairwiseMatrix, smoothing: bool = False,
              init: np.ndarray | None = None) -> dict:
    """Zero-mean log strengths per method.

    With smoothing enabled, 0.5 pseudo-wins are added to every ordered
    method pair, which also guarantees identifiability for methods that
    never won a comparison.
    """
    c = matrix.counts.astype(np.float64)
    n = c.shape[0]
    if smoothing:
        c = c + 0.5 * (1.0 - np.eye(n))
    games = c + c.T
    comps = _components(games)
    if len(comps) > 1:
        names = [" | ".join(matrix.methods[i] for i in comp) for comp in comps]
        raise RankingError("comparison graph is disconnected: " + " // ".join(names))
    wins = c.sum(axis=1)
    if (wins == 0).any():
        losers = [matrix.methods[i] for i in np.flatnonzero(wins == 0)]
        raise RankingError(
            f"methods with zero wins have no finite score: {', '.join(losers)}; "
            "pass smoothing=True to add 0.5 pseudo-counts")

    pi = np.ones(n) if init is None else np.asarray(init, dtype=np.float64).copy()
    if pi.shape != (n,) or (pi <= 0).any():
        raise RankingError("init must be a positive vector of per-method strengths")
    for _ in range(MM_MAX_ITER):
        denom = games / (pi[:, None] + pi[None, :])
        np.fill_diagonal(denom, 0.0)
        new = wins / denom.sum(axis=1)
        new = new / np.exp(np.mean(np.log(new)))
        if np.max(np.abs(new - pi) / pi) < MM_TOL:
            pi = new
            break
        pi = new
    scores = np.log(pi)
    scores = scores - scores.mean()
    return {m: float(s) for m, s in zip(matrix.methods, scores)}


def matrix_to_csv(matrix: PairwiseMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow([""] + list(matrix.methods))
    for name, row in zip(matrix.methods, matrix.counts):
        writer.writerow([name] + [int(v) for v in row])
    return buf.getvalue()


def matrix_from_csv(text: str) -> PairwiseMatrix:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows:
        raise RankingError("empty pairwise matrix CSV")
    header = rows[0]
    if header[0] != "":
        raise RankingError("first header cell must be empty")
    methods = tuple(header[1:])
    body = rows[1:]
    if len(body) != len(methods):
        raise RankingError(f"expected {len(methods)} rows, got {len(body)}")
    counts = np.zeros((len(methods), len(methods)), dtype=np.int64)
    for i, row in enumerate(body):
        if row[0] != methods[i]:
            raise RankingError(f"row {i} is labeled {row[0]!r}, expected {methods[i]!r}")
        if len(row) != len(methods) + 1:
            raise RankingError(f"row {methods[i]!r} has {len(row) - 1} cells")
        try:
            counts[i] = [int(v) for v in row[1:]]
        except ValueError as exc:
            raise RankingError(f"row {methods[i]!r}: {exc}") from None
    return PairwiseMatrix(methods, counts)


VOTE_FIELDS = ("rater", "image", "methodA", "methodB", "winner", "ts")


def matrix_from_votes(rows, methods=None) -> PairwiseMatrix:
    """Aggregate vote records into a win matrix.

    Rows are dicts with the vote CSV fields; winner is "A" or "B".  The
    method list defaults to the sorted set of methods seen.
    """
    votes = list(rows)
    if methods is None:
        seen = set()
        for r in votes:
            seen.add(r["methodA"])
            seen.add(r["methodB"])
        methods = tuple(sorted(seen))
    else:
        methods = tuple(methods)
    index = {m: i for i, m in enumerate(methods)}
    counts = np.zeros((len(methods), len(methods)), dtype=np.int64)
    for r in votes:
        try:
            a, b = index[r["methodA"]], index[r["methodB"]]
        except KeyError as exc:
            raise RankingError(f"vote references unknown method {exc}") from None
        winner = r["winner"]
        if winner == "A":
            counts[a, b] += 1
        elif winner == "B":
            counts[b, a] += 1
        else:
            raise RankingError(f"winner must be 'A' or 'B', got {winner!r}")
    return PairwiseMatrix(methods, counts)


def read_votes_csv(path) -> list[dict]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != VOTE_FIELDS:
            raise RankingError(
                f"vote CSV header must be {','.join(VOTE_FIELDS)}, got {reader.fieldnames}")
        return list(reader)
