"""Exact permanents, the weighted distribution over permutations, and its marginals.

Two independent permanent algorithms are kept side by side: full permutation
enumeration (the definition, n <= 10) and Ryser's inclusion-exclusion with
Gray-code subset iteration (n <= 30).  Both are exact on rational input.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .matrices import (
    DEFAULT_DS_TOL,
    DoublyStochMatrix,
    NonNegMatrix,
    Scalar,
    ZeroPermanentError,
    validate_doubly_stochastic,
)

BRUTEFORCE_LIMIT = 10
RYSER_LIMIT = 30

Permutation = tuple[int, ...]


# ---------------------------------------------------------------------------
# Permutations (0-based images)
# ---------------------------------------------------------------------------

def validate_permutation(seq: Sequence[int], n: int | None = None) -> Permutation:
    """Check that ``seq`` is a bijection of {0, ..., len(seq)-1}."""
    sigma = tuple(int(x) for x in seq)
    if n is not None and len(sigma) != n:
        raise ValueError(f"permutation has length {len(sigma)}, expected {n}")
    if sorted(sigma) != list(range(len(sigma))):
        raise ValueError(f"not a permutation of 0..{len(sigma) - 1}: {sigma}")
    return sigma


def identity_permutation(n: int) -> Permutation:
    return tuple(range(n))


def compose(sigma: Permutation, pi: Permutation) -> Permutation:
    """(sigma o pi)(i) = sigma(pi(i))."""
    return tuple(sigma[pi[i]] for i in range(len(pi)))


def reverse_order(pi: Permutation) -> Permutation:
    """The reversed permutation; it induces the opposite total ordering."""
    n = len(pi)
    return tuple(pi[n - 1 - i] for i in range(n))


def permutation_weight(matrix: NonNegMatrix, sigma: Permutation) -> Scalar:
    """Product of the matrix entries selected by sigma."""
    weight = matrix.entries[0][sigma[0]]
    for i in range(1, matrix.n):
        weight = weight * matrix.entries[i][sigma[i]]
    return weight


# ---------------------------------------------------------------------------
# Permanents
# ---------------------------------------------------------------------------

def per_bruteforce(matrix: NonNegMatrix) -> Scalar:
    """Permanent by summing over all n! permutations (n <= 10)."""
    n = matrix.n
    if n > BRUTEFORCE_LIMIT:
        raise ValueError(
            f"n={n} exceeds the brute-force limit {BRUTEFORCE_LIMIT}; use per_ryser")
    rows = matrix.entries
    total = 0
    for sigma in itertools.permutations(range(n)):
        weight = rows[0][sigma[0]]
        for i in range(1, n):
            if weight == 0:
                break
            weight = weight * rows[i][sigma[i]]
        total = total + weight
    return total


def per_ryser(matrix: NonNegMatrix) -> Scalar:
    """Permanent by Ryser's formula, Gray-code order, O(2^n * n).

    Exact on rational input.  Float input uses Neumaier compensated summation:
    the inclusion-exclusion terms alternate in sign and cancel heavily.
    """
    n = matrix.n
    if n > RYSER_LIMIT:
        raise ValueError(f"n={n} exceeds the Ryser limit {RYSER_LIMIT}")
    if matrix.is_exact:
        return _ryser_exact(matrix.entries, n)
    return _ryser_float([[float(x) for x in row] for row in matrix.entries], n)


def _ryser_exact(rows, n: int) -> Scalar:
    sums = [0] * n
    total = 0
    size = 0
    gray = 0
    for k in range(1, 1 << n):
        bit = (k & -k).bit_length() - 1
        gray ^= 1 << bit
        if gray & (1 << bit):
            size += 1
            for i in range(n):
                sums[i] = sums[i] + rows[i][bit]
        else:
            size -= 1
            for i in range(n):
                sums[i] = sums[i] - rows[i][bit]
        product = sums[0]
        for i in range(1, n):
            if product == 0:
                break
            product = product * sums[i]
        total = total + product if (n - size) % 2 == 0 else total - product
    return total


def _ryser_float(rows, n: int) -> float:
    sums = [0.0] * n
    acc = 0.0
    comp = 0.0  # Neumaier correction term
    size = 0
    gray = 0
    for k in range(1, 1 << n):
        bit = (k & -k).bit_length() - 1
        gray ^= 1 << bit
        if gray & (1 << bit):
            size += 1
            for i in range(n):
                sums[i] += rows[i][bit]
        else:
            size -= 1
            for i in range(n):
                sums[i] -= rows[i][bit]
        product = 1.0
        for i in range(n):
            product *= sums[i]
        term = product if (n - size) % 2 == 0 else -product
        t = acc + term
        if abs(acc) >= abs(term):
            comp += (acc - t) + term
        else:
            comp += (term - t) + acc
        acc = t
    return acc + comp


def log_permanent(matrix: NonNegMatrix) -> float:
    """log per(A) via Ryser; -inf when the permanent is zero."""
    value = per_ryser(matrix)
    if isinstance(value, Fraction):
        if value == 0:
            return float("-inf")
        return math.log(value.numerator) - math.log(value.denominator)
    if value <= 0:
        # roundoff can leave a tiny negative for a structurally zero permanent
        return float("-inf")
    return math.log(value)


# ---------------------------------------------------------------------------
# The distribution mu(sigma) = weight(sigma) / per(A) and its marginal matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GibbsWeights:
    """per-permutation weights of A together with their normalizer per(A)."""

    matrix: NonNegMatrix
    total: Scalar

    @classmethod
    def of(cls, matrix: NonNegMatrix) -> "GibbsWeights":
        total = per_ryser(matrix)
        if total == 0:
            raise ZeroPermanentError("permanent is zero: weights cannot be normalized")
        if matrix.is_exact:
            total = Fraction(total)  # keep int/int divisions exact
        return cls(matrix, total)

    def weight(self, sigma: Permutation) -> Scalar:
        return permutation_weight(self.matrix, sigma)

    def probability(self, sigma: Permutation) -> Scalar:
        sigma = validate_permutation(sigma, self.matrix.n)
        return self.weight(sigma) / self.total


def mu_prob(matrix: NonNegMatrix, sigma: Permutation) -> Scalar:
    """Probability of ``sigma`` under the weight-proportional distribution."""
    return GibbsWeights.of(matrix).probability(sigma)


def permanent_minors(matrix: NonNegMatrix) -> list[list[Scalar]]:
    """per of the (i, j) minor for every entry, in one Ryser-style pass.

    The permanent is multilinear in the entries, so the (i, j) minor permanent
    is the partial derivative with respect to entry (i, j).  Differentiating
    Ryser's formula term by term costs O(2^n * n^2) for all n^2 minors at once
    instead of n^2 separate Ryser runs.
    """
    n = matrix.n
    if n > RYSER_LIMIT:
        raise ValueError(f"n={n} exceeds the Ryser limit {RYSER_LIMIT}")
    if n == 1:
        return [[1]]
    exact = matrix.is_exact
    rows = matrix.entries if exact else [[float(x) for x in row] for row in matrix.entries]
    zero: Scalar = 0 if exact else 0.0
    one: Scalar = 1 if exact else 1.0
    sums = [zero] * n
    minors = [[zero] * n for _ in range(n)]
    members: list[int] = []
    size = 0
    gray = 0
    sign_base = 1 if (n - 1) % 2 == 0 else -1
    for k in range(1, 1 << n):
        bit = (k & -k).bit_length() - 1
        gray ^= 1 << bit
        if gray & (1 << bit):
            size += 1
            members.append(bit)
            for i in range(n):
                sums[i] = sums[i] + rows[i][bit]
        else:
            size -= 1
            members.remove(bit)
            for i in range(n):
                sums[i] = sums[i] - rows[i][bit]
        # products of all row sums except row i, via prefix/suffix sweeps
        prefix = [one] * (n + 1)
        for i in range(n):
            prefix[i + 1] = prefix[i] * sums[i]
        suffix = one
        sign = sign_base if (size - 1) % 2 == 0 else -sign_base
        for i in range(n - 1, -1, -1):
            exclude_i = prefix[i] * suffix
            if exclude_i != 0:
                if sign > 0:
                    for j in members:
                        minors[i][j] = minors[i][j] + exclude_i
                else:
                    for j in members:
                        minors[i][j] = minors[i][j] - exclude_i
            suffix = suffix * sums[i]
    return minors


def marginals(matrix: NonNegMatrix, tol: float = DEFAULT_DS_TOL) -> DoublyStochMatrix:
    """Marginal matrix P[i][j] = Pr[(i, j) is selected] under the weight
    distribution, computed as A[i][j] * per(minor ij) / per(A).

    Exact on rational input; the result is validated doubly stochastic.
    """
    total = per_ryser(matrix)
    if total == 0:
        raise ZeroPermanentError("permanent is zero: marginals are undefined")
    if matrix.is_exact:
        total = Fraction(total)  # keep int/int divisions exact
    minors = permanent_minors(matrix)
    n = matrix.n
    rows = []
    for i in range(n):
        rows.append(tuple(matrix.entries[i][j] * minors[i][j] / total for j in range(n)))
    return validate_doubly_stochastic(rows, tol=tol)
