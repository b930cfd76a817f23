"""Sequential row-by-row proposal over permutations, exact KL, and the
ordering-averaged entropy bound.

The proposal walks rows in a fixed order and picks a still-free column with
probability proportional to the corresponding entry of a doubly stochastic
weight matrix.  Comparing it against the weight-proportional distribution of
a matrix yields the permanent upper bound verified here at desk scale.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .matrices import (
    DoublyStochMatrix,
    NonNegMatrix,
    Scalar,
    is_exact_scalar,
    log_scalar,
)
from .permanents import (
    GibbsWeights,
    Permutation,
    identity_permutation,
    validate_permutation,
)
from .permanents import marginals as _marginals
from .phi import LogForm, add_log_term

#: Full enumeration of n! permutations or orderings is used up to this size.
ENUM_LIMIT = 7


class SamplerStrandedError(RuntimeError):
    """Every retry ran out of admissible columns part-way through a sample."""


class AbsoluteContinuityError(ValueError):
    """The proposal assigns zero probability to a permutation the target needs."""

    def __init__(self, witness: Permutation):
        super().__init__(
            f"proposal probability is zero at {witness} where the target is positive")
        self.witness = witness


@dataclass(frozen=True)
class NuDistribution:
    """Sequential proposal: rows visited in ``order``, columns drawn from ``weights``."""

    weights: DoublyStochMatrix
    order: Permutation

    def __post_init__(self):
        object.__setattr__(self, "order",
                           validate_permutation(self.order, self.weights.n))

    @property
    def n(self) -> int:
        return self.weights.n


def nu_prob(dist: NuDistribution, sigma: Permutation) -> Scalar:
    """Probability that the sequential procedure produces ``sigma``.

    Product over visit steps of the chosen entry divided by the total weight
    of the columns still free at that step.  Exact on rational weights.
    """
    n = dist.n
    sigma = validate_permutation(sigma, n)
    rows = dist.weights.entries
    order = dist.order
    exact = dist.weights.is_exact
    chosen_cols = [sigma[order[t]] for t in range(n)]
    value: Scalar = Fraction(1) if exact else 1.0
    for t in range(n):
        r = order[t]
        numerator = rows[r][sigma[r]]
        denominator = sum(rows[r][chosen_cols[u]] for u in range(t, n))
        if denominator == 0:
            if numerator == 0:
                return Fraction(0) if exact else 0.0
            raise RuntimeError(
                "zero step total with a positive numerator; the weight matrix "
                "cannot be doubly stochastic")  # unreachable for valid weights
        if numerator == 0:
            return Fraction(0) if exact else 0.0
        if exact:
            value *= Fraction(numerator) / Fraction(denominator)
        else:
            value *= numerator / denominator
    return value


def nu_sample(dist: NuDistribution, rng, max_retries: int = 64) -> Permutation:
    """Draw one permutation; restart from scratch when all free columns weigh zero.

    Args:
        rng: ``numpy.random.Generator`` or a seed for one.  No global state.
    """
    rng = np.random.default_rng(rng)
    n = dist.n
    weights = dist.weights.numpy()
    order = dist.order
    for _ in range(max_retries):
        free = np.ones(n, dtype=bool)
        image = [0] * n
        stranded = False
        for t in range(n):
            r = order[t]
            w = np.where(free, weights[r], 0.0)
            total = w.sum()
            if total <= 0.0:
                stranded = True
                break
            j = int(rng.choice(n, p=w / total))
            image[r] = j
            free[j] = False
        if not stranded:
            return tuple(image)
    raise SamplerStrandedError(
        f"no complete sample in {max_retries} attempts; the weight matrix "
        "strands the sampler too often")


def kl_mu_nu(matrix: NonNegMatrix, dist: NuDistribution) -> float:
    """KL divergence from the weight-proportional distribution to the proposal.

    Full enumeration (n <= 7); always nonnegative, and exactly zero when the
    two distributions coincide pointwise.
    """
    n = matrix.n
    if n != dist.n:
        raise ValueError(f"dimension mismatch: {n} vs {dist.n}")
    if n > ENUM_LIMIT:
        raise ValueError(f"n={n} exceeds the enumeration limit {ENUM_LIMIT}")
    gibbs = GibbsWeights.of(matrix)
    acc = 0.0
    for sigma in itertools.permutations(range(n)):
        mu = gibbs.probability(sigma)
        if mu == 0:
            continue
        nu = nu_prob(dist, sigma)
        if nu == 0:
            raise AbsoluteContinuityError(sigma)
        if is_exact_scalar(mu) and is_exact_scalar(nu):
            acc += float(mu) * log_scalar(Fraction(mu) / Fraction(nu))
        else:
            acc += float(mu) * (math.log(float(mu)) - math.log(float(nu)))
    return acc


# ---------------------------------------------------------------------------
# Ordering-averaged log tail sums and the entropy upper bound
# ---------------------------------------------------------------------------

def _avg_tail_log_sum(row: Sequence[Scalar]) -> float:
    """Average over all orderings of  sum_k p_k log(sum of p over k's tail).

    The tail of k under an ordering contains k itself and everything placed
    after it.  Exact partial sums are kept when the input is rational.
    """
    n = len(row)
    exact = all(is_exact_scalar(x) for x in row)
    zero: Scalar = Fraction(0) if exact else 0.0
    acc = 0.0
    for order in itertools.permutations(range(n)):
        tail = zero
        for t in range(n - 1, -1, -1):
            x = row[order[t]]
            tail = tail + x
            if x > 0:
                acc += float(x) * log_scalar(tail)
    return acc / math.factorial(n)


def ordering_gap(p) -> float:
    """Ordering-averaged gap of one stochastic vector; at most log sqrt(2).

    Computes  E_orderings[ sum_k p_k log(tail_k) ] - sum_k (1 - p_k) log(1 - p_k)
    by full enumeration (n <= 7).  Equality holds at the two-point uniform
    vector.
    """
    entries = p.entries if hasattr(p, "entries") else tuple(p)
    n = len(entries)
    if n > ENUM_LIMIT:
        raise ValueError(f"n={n} exceeds the enumeration limit {ENUM_LIMIT}")
    acc = _avg_tail_log_sum(entries)
    for x in entries:
        if x < 1:
            if is_exact_scalar(x):
                rest = 1 - Fraction(x)
                acc -= float(rest) * log_scalar(rest)
            else:
                acc -= (1.0 - float(x)) * math.log1p(-float(x))
    return acc


def ordering_gap_log_form(p) -> LogForm:
    """The ordering-averaged gap as an exact log-linear form (rational input).

    Equals one half of the average of the gap-function forms over all
    reorderings of ``p``; the pairing of each ordering with its reverse makes
    that an exact identity of forms, testable without evaluating a single log.
    """
    entries = [Fraction(x) for x in (p.entries if hasattr(p, "entries") else p)]
    n = len(entries)
    if n > ENUM_LIMIT:
        raise ValueError(f"n={n} exceeds the enumeration limit {ENUM_LIMIT}")
    form: LogForm = {}
    weight = Fraction(1, math.factorial(n))
    for order in itertools.permutations(range(n)):
        tail = Fraction(0)
        for t in range(n - 1, -1, -1):
            x = entries[order[t]]
            tail += x
            add_log_term(form, tail, x * weight)
    for x in entries:
        rest = 1 - x
        if rest > 0:
            add_log_term(form, rest, -rest)
    return form


def entropy_upper_bound(matrix: NonNegMatrix) -> float:
    """Ordering-averaged upper bound on log per(A) at the exact marginal matrix.

    Evaluates  sum_e P_e log(A_e/P_e) + sum_i E_orderings[sum_k P_ik log(tail)]
    with P the marginal matrix of A; full enumeration per row (n <= 7).
    Tight for the paired all-ones block matrix.
    """
    n = matrix.n
    if n > ENUM_LIMIT:
        raise ValueError(f"n={n} exceeds the enumeration limit {ENUM_LIMIT}")
    weights = _marginals(matrix)
    acc = _relative_weight_term(matrix, weights)
    for row in weights.entries:
        acc += _avg_tail_log_sum(row)
    return acc


def entropy_upper_bound_sampled(matrix: NonNegMatrix, num_orders: int,
                                rng) -> tuple[float, float]:
    """Monte Carlo version of :func:`entropy_upper_bound` for larger n.

    One uniformly random ordering is shared across rows per sample, which
    keeps the estimator unbiased by linearity.  Returns (estimate, standard
    error); bound checks against it should allow several standard errors.
    """
    if num_orders < 2:
        raise ValueError("need at least two sampled orderings for a standard error")
    rng = np.random.default_rng(rng)
    weights = _marginals(matrix)
    rows = [[float(x) for x in row] for row in weights.entries]
    n = matrix.n
    samples = np.empty(num_orders)
    for k in range(num_orders):
        order = rng.permutation(n)
        value = 0.0
        for row in rows:
            tail = 0.0
            for t in range(n - 1, -1, -1):
                x = row[order[t]]
                tail += x
                if x > 0.0:
                    value += x * math.log(tail)
        samples[k] = value
    base = _relative_weight_term(matrix, weights)
    return base + float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(num_orders))


def _relative_weight_term(matrix: NonNegMatrix, weights: DoublyStochMatrix) -> float:
    """sum_e P_e log(A_e / P_e), exact-ratio aware."""
    acc = 0.0
    for arow, prow in zip(matrix.entries, weights.entries):
        for a, p in zip(arow, prow):
            if p > 0:
                if is_exact_scalar(a) and is_exact_scalar(p):
                    acc += float(p) * log_scalar(Fraction(a) / Fraction(p))
                else:
                    acc += float(p) * (math.log(float(a)) - math.log(float(p)))
    return acc


# ---------------------------------------------------------------------------
# Importance-sampling demonstration (not a bound)
# ---------------------------------------------------------------------------

def estimate_log_permanent(matrix: NonNegMatrix, dist: NuDistribution | None,
                           num_samples: int, rng) -> float:
    """Unbiased importance-sampling estimate of log per(A), for demonstration.

    Weights are the permutation products of A divided by the proposal
    probability; the default proposal uses the exact marginal matrix with the
    identity visit order.  Log-domain throughout, so large n does not
    underflow.
    """
    if num_samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(rng)
    if dist is None:
        dist = NuDistribution(_marginals(matrix), identity_permutation(matrix.n))
    log_weights = np.empty(num_samples)
    rows = matrix.entries
    for k in range(num_samples):
        sigma = nu_sample(dist, rng)
        log_target = sum(log_scalar(rows[i][sigma[i]]) for i in range(matrix.n))
        log_weights[k] = log_target - log_scalar(nu_prob(dist, sigma))
    return float(logsumexp(log_weights) - math.log(num_samples))
