"""Matrix and vector domain types, constructions, and Sinkhorn scaling.

Values are immutable after construction; every operation here is a pure
function of its inputs.  Matrices carry either float64 entries or exact
rationals (``fractions.Fraction``); exactness is preserved wherever the
math allows it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

Scalar = int | float | Fraction

#: Exact rational scalar used by the certificate and small-n exact paths.
BigRational = Fraction

#: Default tolerance for doubly stochastic validation in float mode.
DEFAULT_DS_TOL = 1e-9


class ZeroPermanentError(ValueError):
    """The matrix has no perfect matching in its support (permanent is zero)."""


class MatrixParseError(ValueError):
    """Matrix or vector input could not be parsed; message carries position info."""


class SinkhornConvergenceError(RuntimeError):
    """Sinkhorn scaling hit the iteration cap before reaching tolerance.

    Carries the best iterate found so callers can inspect or reuse it.
    """

    def __init__(self, message: str, best: "DoublyStochMatrix | None",
                 row_scalers: tuple[float, ...], col_scalers: tuple[float, ...],
                 deviation: float):
        super().__init__(message)
        self.best = best
        self.row_scalers = row_scalers
        self.col_scalers = col_scalers
        self.deviation = deviation


def is_exact_scalar(x: Scalar) -> bool:
    return isinstance(x, (int, Fraction)) and not isinstance(x, bool)


def log_scalar(x: Scalar) -> float:
    """Natural log of a nonnegative scalar; exact-ratio aware, -inf at 0."""
    if isinstance(x, Fraction):
        if x == 0:
            return float("-inf")
        return math.log(x.numerator) - math.log(x.denominator)
    if x == 0:
        return float("-inf")
    return math.log(x)


def _freeze_rows(rows: Iterable[Sequence[Scalar]]) -> tuple[tuple[Scalar, ...], ...]:
    return tuple(tuple(row) for row in rows)


@dataclass(frozen=True)
class NonNegMatrix:
    """Square matrix A with nonnegative entries, the permanent's argument."""

    entries: tuple[tuple[Scalar, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", _freeze_rows(self.entries))
        n = len(self.entries)
        if n == 0:
            raise ValueError("matrix must have at least one row")
        for i, row in enumerate(self.entries):
            if len(row) != n:
                raise ValueError(f"row {i + 1} has {len(row)} entries, expected {n}")
            for j, x in enumerate(row):
                if x < 0:
                    raise ValueError(f"negative entry {x} at row {i + 1}, column {j + 1}")

    @property
    def n(self) -> int:
        return len(self.entries)

    @property
    def is_exact(self) -> bool:
        return all(is_exact_scalar(x) for row in self.entries for x in row)

    def numpy(self) -> np.ndarray:
        return np.array([[float(x) for x in row] for row in self.entries], dtype=float)

    def support(self) -> list[list[bool]]:
        return [[x > 0 for x in row] for row in self.entries]


@dataclass(frozen=True)
class DoublyStochMatrix:
    """Matrix in the Birkhoff polytope.  Construct via ``validate_doubly_stochastic``."""

    entries: tuple[tuple[Scalar, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", _freeze_rows(self.entries))

    @property
    def n(self) -> int:
        return len(self.entries)

    @property
    def is_exact(self) -> bool:
        return all(is_exact_scalar(x) for row in self.entries for x in row)

    def numpy(self) -> np.ndarray:
        return np.array([[float(x) for x in row] for row in self.entries], dtype=float)


@dataclass(frozen=True)
class StochasticVector:
    """Point of the standard simplex: nonnegative entries summing to one."""

    entries: tuple[Scalar, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    @property
    def n(self) -> int:
        return len(self.entries)

    @property
    def is_exact(self) -> bool:
        return all(is_exact_scalar(x) for x in self.entries)


def validate_stochastic_vector(entries: Sequence[Scalar],
                               tol: float = DEFAULT_DS_TOL) -> StochasticVector:
    """Check simplex membership; exact equality is required for rational input."""
    entries = tuple(entries)
    if not entries:
        raise ValueError("vector must have at least one entry")
    for k, x in enumerate(entries):
        if x < 0:
            raise ValueError(f"negative entry {x} at position {k + 1}")
    total = sum(entries)
    if all(is_exact_scalar(x) for x in entries):
        if total != 1:
            raise ValueError(f"entries sum to {total}, expected exactly 1")
    elif abs(total - 1) > tol:
        raise ValueError(f"entries sum to {float(total)!r}, outside tolerance {tol}")
    return StochasticVector(entries)


def validate_doubly_stochastic(matrix, tol: float = DEFAULT_DS_TOL) -> DoublyStochMatrix:
    """Validate row sums, column sums, and entry range; return the typed value.

    Rational input is checked for exact equality; float input within ``tol``.
    The first violated constraint is reported (negative entry, row, or column,
    all 1-based in messages).
    """
    if isinstance(matrix, (NonNegMatrix, DoublyStochMatrix)):
        rows = matrix.entries
    elif isinstance(matrix, np.ndarray):
        rows = tuple(tuple(float(x) for x in row) for row in matrix)
    else:
        rows = _freeze_rows(matrix)
    n = len(rows)
    for i, row in enumerate(rows):
        if len(row) != n:
            raise ValueError(f"row {i + 1} has {len(row)} entries, expected {n}")

    exact = all(is_exact_scalar(x) for row in rows for x in row)

    for i, row in enumerate(rows):
        for j, x in enumerate(row):
            if x < 0:
                raise ValueError(f"negative entry {x} at row {i + 1}, column {j + 1}")
            upper = 1 if exact else 1 + tol
            if x > upper:
                raise ValueError(f"entry {x} at row {i + 1}, column {j + 1} exceeds 1")

    def _bad(total) -> bool:
        if exact:
            return total != 1
        return abs(total - 1) > tol

    for i, row in enumerate(rows):
        total = sum(row)
        if _bad(total):
            raise ValueError(f"row {i + 1} sums to {total}")
    for j in range(n):
        total = sum(rows[i][j] for i in range(n))
        if _bad(total):
            raise ValueError(f"column {j + 1} sums to {total}")
    return DoublyStochMatrix(rows)


# ---------------------------------------------------------------------------
# Constructions
# ---------------------------------------------------------------------------

def ones(n: int) -> NonNegMatrix:
    """The all-ones matrix J_n (exact integer entries)."""
    return NonNegMatrix(tuple(tuple(1 for _ in range(n)) for _ in range(n)))


def block_diag(top: NonNegMatrix, bottom: NonNegMatrix) -> NonNegMatrix:
    """Block-diagonal matrix with ``top`` and ``bottom`` on the diagonal."""
    n1, n2 = top.n, bottom.n
    zero_right = (0,) * n2
    zero_left = (0,) * n1
    rows = [row + zero_right for row in top.entries]
    rows += [zero_left + row for row in bottom.entries]
    return NonNegMatrix(tuple(rows))


def identity_tensor(m: int, block: NonNegMatrix) -> NonNegMatrix:
    """Block-diagonal matrix with ``m`` copies of ``block`` (permanent = per(block)^m)."""
    if m < 1:
        raise ValueError("m must be at least 1")
    result = block
    for _ in range(m - 1):
        result = block_diag(result, block)
    return result


def pair_block_matrix(m: int) -> NonNegMatrix:
    """The 2m x 2m matrix of m all-ones 2x2 diagonal blocks, the worst case
    for the Bethe lower bound: its permanent is 2^m while the Bethe value is 1."""
    return identity_tensor(m, ones(2))


# ---------------------------------------------------------------------------
# Bipartite support matching (Hopcroft-Karp)
# ---------------------------------------------------------------------------

_UNSEEN = -1


def max_matching_size(adjacency: Sequence[Sequence[int]], n_right: int) -> int:
    """Maximum bipartite matching size via Hopcroft-Karp (BFS layers + DFS)."""
    n_left = len(adjacency)
    match_left = [_UNSEEN] * n_left
    match_right = [_UNSEEN] * n_right
    dist: dict[int, float] = {}
    inf = float("inf")

    def bfs() -> bool:
        dist.clear()
        queue = []
        for u in range(n_left):
            if match_left[u] == _UNSEEN:
                dist[u] = 0
                queue.append(u)
        found = False
        head = 0
        while head < len(queue):
            u = queue[head]
            head += 1
            for v in adjacency[u]:
                w = match_right[v]
                if w == _UNSEEN:
                    found = True
                elif w not in dist:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return found

    def dfs(u: int) -> bool:
        for v in adjacency[u]:
            w = match_right[v]
            if w == _UNSEEN or (dist.get(w) == dist[u] + 1 and dfs(w)):
                match_left[u] = v
                match_right[v] = u
                return True
        dist[u] = inf
        return False

    size = 0
    while bfs():
        for u in range(n_left):
            if match_left[u] == _UNSEEN and dfs(u):
                size += 1
    return size


def _support_adjacency(matrix: NonNegMatrix) -> list[list[int]]:
    return [[j for j, x in enumerate(row) if x > 0] for row in matrix.entries]


def has_matching_support(matrix: NonNegMatrix) -> bool:
    """True iff the support admits a perfect matching, i.e. per(A) > 0."""
    return max_matching_size(_support_adjacency(matrix), matrix.n) == matrix.n


def matchable_support(matrix: NonNegMatrix) -> list[list[bool]]:
    """Mask of entries that lie on at least one permutation within the support.

    Entries outside this mask are forced to zero on every doubly stochastic
    matrix with the same support, so optimizers freeze them.
    """
    n = matrix.n
    adjacency = _support_adjacency(matrix)
    if max_matching_size(adjacency, n) < n:
        return [[False] * n for _ in range(n)]
    mask = [[False] * n for _ in range(n)]
    for i in range(n):
        for j in adjacency[i]:
            reduced = [[v for v in adjacency[u] if v != j]
                       for u in range(n) if u != i]
            if max_matching_size(reduced, n) == n - 1:
                mask[i][j] = True
    return mask


# ---------------------------------------------------------------------------
# Sinkhorn scaling
# ---------------------------------------------------------------------------

def sinkhorn_scale(matrix: NonNegMatrix, tol: float = DEFAULT_DS_TOL,
                   max_iter: int = 100_000,
                   ) -> tuple[DoublyStochMatrix, tuple[float, ...], tuple[float, ...]]:
    """Scale A to doubly stochastic form P = diag(r) A diag(c).

    Alternates row and column normalization until the maximum row/column sum
    deviation from 1 drops below ``tol``.  Operates in float64; rational
    entries are converted (the scaling limit is irrational in general).

    Returns:
        (P, row_scalers, col_scalers) with P reconstructible entrywise as
        r[i] * A[i][j] * c[j].

    Raises:
        ZeroPermanentError: support admits no perfect matching.
        SinkhornConvergenceError: tolerance not reached in ``max_iter`` sweeps;
            the error carries the best iterate.
    """
    if not has_matching_support(matrix):
        raise ZeroPermanentError(
            "support admits no perfect matching: permanent is zero, "
            "no doubly stochastic scaling exists")
    a = matrix.numpy()
    n = matrix.n
    r = np.ones(n)
    c = np.ones(n)

    best_dev = float("inf")
    best = (r.copy(), c.copy())
    for _ in range(max_iter):
        row_sums = (a * c) @ np.ones(n)
        r = 1.0 / row_sums
        col_sums = r @ a
        c = 1.0 / col_sums
        # after the column step rows may drift; measure both
        p = (a * c) * r[:, None]
        dev = max(np.abs(p.sum(axis=1) - 1.0).max(),
                  np.abs(p.sum(axis=0) - 1.0).max())
        if dev < best_dev:
            best_dev = dev
            best = (r.copy(), c.copy())
        if dev <= tol:
            scaled = validate_doubly_stochastic(p, tol=max(tol, 4 * dev + 1e-15))
            return scaled, tuple(r), tuple(c)

    r, c = best
    p = (a * c) * r[:, None]
    raise SinkhornConvergenceError(
        f"did not reach deviation {tol} within {max_iter} sweeps "
        f"(best {best_dev:.3g})",
        DoublyStochMatrix(tuple(tuple(row) for row in p)),
        tuple(r), tuple(c), best_dev)


# ---------------------------------------------------------------------------
# File formats: CSV (decimal or p/q literals) and JSON {"n":..., "entries":...}
# ---------------------------------------------------------------------------

def parse_scalar(token: str, exact: bool) -> Scalar:
    token = token.strip()
    if exact:
        return Fraction(token)
    if "/" in token:
        return float(Fraction(token))
    return float(token)


def format_scalar(x: Scalar) -> str | float:
    """JSON-friendly form: rationals as 'p/q' strings, floats as numbers."""
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}" if x.denominator != 1 else str(x.numerator)
    if isinstance(x, int):
        return str(x)
    return float(x)


def parse_matrix_csv(text: str, exact: bool = False) -> NonNegMatrix:
    rows: list[tuple[Scalar, ...]] = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        tokens = line.split(",")
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise MatrixParseError(
                f"line {lineno}: expected {width} values, got {len(tokens)}")
        row = []
        for col, token in enumerate(tokens, start=1):
            try:
                value = parse_scalar(token, exact)
            except (ValueError, ZeroDivisionError) as exc:
                raise MatrixParseError(f"line {lineno}, column {col}: {exc}") from exc
            if value < 0:
                raise MatrixParseError(
                    f"line {lineno}, column {col}: negative entry {token.strip()}")
            row.append(value)
        rows.append(tuple(row))
    if not rows:
        raise MatrixParseError("empty input")
    if len(rows) != width:
        raise MatrixParseError(
            f"matrix is {len(rows)}x{width}, expected square")
    return NonNegMatrix(tuple(rows))


def parse_matrix_json(text: str, exact: bool = False) -> NonNegMatrix:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MatrixParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict) or "entries" not in data:
        raise MatrixParseError('expected an object with "n" and "entries"')
    entries = data["entries"]
    n = data.get("n", len(entries))
    if len(entries) != n:
        raise MatrixParseError(f'"entries" has {len(entries)} rows, "n" is {n}')
    rows = []
    for i, raw_row in enumerate(entries, start=1):
        if len(raw_row) != n:
            raise MatrixParseError(f"row {i}: expected {n} values, got {len(raw_row)}")
        row = []
        for j, item in enumerate(raw_row, start=1):
            try:
                value = parse_scalar(str(item), exact)
            except (ValueError, ZeroDivisionError) as exc:
                raise MatrixParseError(f"row {i}, column {j}: {exc}") from exc
            if value < 0:
                raise MatrixParseError(f"row {i}, column {j}: negative entry {item}")
            row.append(value)
        rows.append(tuple(row))
    return NonNegMatrix(tuple(rows))


def parse_matrix(text: str, exact: bool = False) -> NonNegMatrix:
    """Dispatch on the leading character: '{' means JSON, anything else CSV."""
    if text.lstrip().startswith("{"):
        return parse_matrix_json(text, exact)
    return parse_matrix_csv(text, exact)


def parse_vector_csv(text: str, exact: bool = False,
                     tol: float = DEFAULT_DS_TOL) -> StochasticVector:
    tokens = [t for t in text.replace("\n", ",").split(",") if t.strip()]
    if not tokens:
        raise MatrixParseError("empty input")
    values = []
    for col, token in enumerate(tokens, start=1):
        try:
            values.append(parse_scalar(token, exact))
        except (ValueError, ZeroDivisionError) as exc:
            raise MatrixParseError(f"column {col}: {exc}") from exc
    try:
        return validate_stochastic_vector(values, tol=tol)
    except ValueError as exc:
        raise MatrixParseError(str(exc)) from exc


def matrix_to_json_dict(matrix: NonNegMatrix | DoublyStochMatrix) -> dict:
    return {
        "n": matrix.n,
        "entries": [[format_scalar(x) for x in row] for row in matrix.entries],
    }
