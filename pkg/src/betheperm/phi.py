"""The simplex gap function, its reduction machinery, and the exact grid certificate.

The gap function on the simplex attains its maximum log 2; certifying that
bound over the hard region reduces to finitely many arbitrary-precision
integer comparisons on an epsilon-net, which :func:`certify` runs cell by
cell.  Everything on the certificate path is exact: no floats are consulted
when deciding a cell.
"""

from __future__ import annotations

import math
import multiprocessing
import time
from dataclasses import dataclass
from fractions import Fraction
import numpy as np
from scipy.special import xlogy

from .matrices import Scalar, StochasticVector, is_exact_scalar, log_scalar

#: Threshold for merging two adjacent coordinates without decreasing the gap
#: function: (sqrt(17) - 3) / 2.
GAMMA = (math.sqrt(17.0) - 3.0) / 2.0

LOG2 = math.log(2.0)


def _as_entries(p) -> tuple[Scalar, ...]:
    if isinstance(p, StochasticVector):
        return p.entries
    return tuple(p)


# ---------------------------------------------------------------------------
# Exact log-linear forms: a finite sum  sum_i c_i * log(x_i)  represented as a
# mapping {x_i: c_i} with rational x_i, c_i.  Identities between such sums can
# be checked exactly by comparing the mappings, with no transcendental math.
# ---------------------------------------------------------------------------

LogForm = dict[Fraction, Fraction]


def add_log_term(form: LogForm, argument: Fraction, coefficient: Fraction) -> None:
    """Accumulate coefficient * log(argument); log 1 terms are dropped."""
    if coefficient == 0 or argument == 1:
        return
    if argument <= 0:
        raise ValueError(f"log argument must be positive, got {argument}")
    form[argument] = form.get(argument, Fraction(0)) + coefficient
    if form[argument] == 0:
        del form[argument]


def merge_log_forms(target: LogForm, other: LogForm, factor: Fraction = Fraction(1)) -> None:
    for arg, c in other.items():
        add_log_term(target, arg, c * factor)


def eval_log_form(form: LogForm) -> float:
    return sum(float(c) * log_scalar(arg) for arg, c in form.items())


def phi_log_form(p) -> LogForm:
    """The gap function of a rational simplex point as an exact log-linear form.

    Useful for exact identity checks: inserting zero coordinates, reversal
    symmetry, and the ordering-average pairing identity all become equalities
    of these mappings.
    """
    entries = [Fraction(x) for x in _as_entries(p)]
    form: LogForm = {}
    prefix = Fraction(0)
    for x in entries:
        prefix += x
        add_log_term(form, prefix, x)
    suffix = Fraction(0)
    for x in reversed(entries):
        suffix += x
        add_log_term(form, suffix, x)
    for x in entries:
        rest = 1 - x
        if rest > 0:
            add_log_term(form, rest, -2 * rest)
    return form


# ---------------------------------------------------------------------------
# The gap function and the coordinate-merge reduction
# ---------------------------------------------------------------------------

def phi(p) -> float:
    """Gap function value, with the x log x = 0 convention at zero coordinates.

    Rational input is evaluated through exact prefix/suffix sums; float input
    uses log1p for the (1 - p_k) terms.
    """
    entries = _as_entries(p)
    if entries and all(is_exact_scalar(x) for x in entries):
        return eval_log_form(phi_log_form(entries))
    values = [float(x) for x in entries]
    acc = 0.0
    running = 0.0
    for x in values:
        running += x
        if x > 0.0:
            acc += x * math.log(running)
    running = 0.0
    for x in reversed(values):
        running += x
        if x > 0.0:
            acc += x * math.log(running)
    for x in values:
        if x < 1.0:
            acc -= 2.0 * (1.0 - x) * math.log1p(-x)
    return acc


def entropy_dominance_check(p, slack: float = 1e-12) -> bool:
    """True iff sum (1-p_k) log(1-p_k) >= sum p_k log(prefix) + sum p_k log(suffix).

    Holds for every stochastic vector.  Rational input goes through exact
    log-linear forms, so the equality cases are decided exactly.
    """
    entries = _as_entries(p)
    if entries and all(is_exact_scalar(x) for x in entries):
        diff: LogForm = {}
        values = [Fraction(x) for x in entries]
        for x in values:
            rest = 1 - x
            if rest > 0:
                add_log_term(diff, rest, rest)
        prefix = Fraction(0)
        for x in values:
            prefix += x
            add_log_term(diff, prefix, -x)
        suffix = Fraction(0)
        for x in reversed(values):
            suffix += x
            add_log_term(diff, suffix, -x)
        if not diff:
            return True  # exact equality
        return eval_log_form(diff) >= -slack
    values = [float(x) for x in entries]
    lhs = sum((1.0 - x) * math.log1p(-x) for x in values if x < 1.0)
    rhs = 0.0
    running = 0.0
    for x in values:
        running += x
        if x > 0.0:
            rhs += x * math.log(running)
    running = 0.0
    for x in reversed(values):
        running += x
        if x > 0.0:
            rhs += x * math.log(running)
    return lhs >= rhs - slack


def within_merge_threshold(r: Scalar, s: Scalar) -> bool:
    """Exact test of r + s <= (sqrt(17) - 3) / 2 for rational input.

    Rearranged to the integer comparison (2(r+s) + 3)^2 <= 17 so that the
    irrational threshold never enters an exact code path.
    """
    if is_exact_scalar(r) and is_exact_scalar(s):
        v = Fraction(r) + Fraction(s)
        if v < 0:
            return True
        return (2 * v + 3) ** 2 <= 17
    return float(r) + float(s) <= GAMMA


def reduction_check(q: Scalar, r: Scalar, s: Scalar, t: Scalar,
                    slack: float = 1e-12) -> bool:
    """True iff merging the two middle coordinates does not decrease phi.

    Guaranteed whenever r + s is within the merge threshold; outside it the
    inequality may go either way and the returned value simply reports it.
    """
    total = q + r + s + t
    if q < 0 or r < 0 or s < 0 or t < 0 or abs(float(total) - 1.0) > 1e-9:
        raise ValueError(f"({q}, {r}, {s}, {t}) is not a point of the 4-simplex")
    return phi((q, r, s, t)) <= phi((q, r + s, t)) + slack


def stationary_qt(r: Scalar, s: Scalar) -> tuple[Scalar, Scalar]:
    """Outer coordinates maximizing the merge defect for fixed middle pair.

    Returns (q*, t*) with q* + r + s + t* = 1; exact on rational input.

    Raises:
        ValueError: when (1 + r + s) * max(r, s) > 1, where the stationary
            point leaves the simplex.
    """
    if is_exact_scalar(r) and is_exact_scalar(s):
        r, s = Fraction(r), Fraction(s)
    if (1 + r + s) * max(r, s) > 1:
        raise ValueError("stationary point is infeasible: (1 + r + s) max(r, s) > 1")
    q = (1 - r * (1 + r + s)) / (2 + r + s)
    t = (1 - s * (1 + r + s)) / (2 + r + s)
    return q, t


# ---------------------------------------------------------------------------
# Exact certificate pieces
# ---------------------------------------------------------------------------

def loop_bound(n_grid: int) -> int:
    """Largest grid index checked on each axis: floor(44 N / 100)."""
    return 44 * n_grid // 100


def phi3_exp_form(q: Scalar, s: Scalar, n_grid: int,
                  qs_base_shift: Scalar = 0) -> tuple[Fraction, Fraction]:
    """Both sides of the N-th power of exp(phi) <= 2 at a 3-simplex point.

    For rationals q, s whose denominators divide N the two returned values
    are exact, so phi(q, 1-q-s, s) <= log 2 holds iff lhs <= rhs.  The
    optional base shift replaces q + s in the final factor (used to make the
    origin cell comparison nondegenerate); the exponents are unchanged.
    """
    q, s, shift = Fraction(q), Fraction(s), Fraction(qs_base_shift)
    if q < 0 or s < 0 or q + s > 1:
        raise ValueError(f"(q, s) = ({q}, {s}) leaves the simplex face")
    for name, value in (("q", q * n_grid), ("s", s * n_grid)):
        if value.denominator != 1:
            raise ValueError(f"N*{name} must be an integer, got {value}")
    nq = int(q * n_grid)
    ns = int(s * n_grid)
    lhs = q ** nq * s ** ns
    rhs = (Fraction(2) ** n_grid
           * (1 - q) ** (n_grid + ns - nq)
           * (1 - s) ** (n_grid + nq - ns)
           * (q + s + shift) ** (2 * (nq + ns)))
    return lhs, rhs


def _uses_origin_variant(i: int, j: int, n_grid: int) -> bool:
    # reproduced exactly as printed, including the N > 100 branch condition
    return i == 0 and j == 0 and n_grid > 100


def verify_cell(i: int, j: int, n_grid: int) -> bool:
    """Certify the bound on one epsilon-net patch by a single integer comparison.

    The patch inequality has every base a multiple of 1/N, so multiplying
    both sides by N^(2N + i + j + 6) clears all denominators:

        (i+1)^i (j+1)^j N^(2N+i+j+6)
            <= 2^N (N-i-1)^(N-i+j+1) (N-j-1)^(N+i-j+1) B^(2(i+j+2))

    with B = i + j, except at the origin cell for N > 100 where B = i + j + 2.
    A failed comparison is a value, not an error.
    """
    m = loop_bound(n_grid)
    if n_grid <= 5:
        raise ValueError("grid resolution must exceed 2e")
    if not (0 <= i <= m and 0 <= j <= m):
        raise ValueError(f"cell ({i}, {j}) outside the {m + 1}x{m + 1} grid")
    lhs = (i + 1) ** i * (j + 1) ** j * n_grid ** (2 * n_grid + i + j + 6)
    base = i + j + 2 if _uses_origin_variant(i, j, n_grid) else i + j
    rhs = (2 ** n_grid
           * (n_grid - i - 1) ** (n_grid - i + j + 1)
           * (n_grid - j - 1) ** (n_grid + i - j + 1)
           * base ** (2 * (i + j + 2)))
    return lhs <= rhs


def _certificate_tables(n_grid: int):
    m = loop_bound(n_grid)
    selfpow = [(k + 1) ** k for k in range(m + 1)]
    pow_n = [n_grid ** (2 * n_grid + 6)]
    for _ in range(2 * m):
        pow_n.append(pow_n[-1] * n_grid)
    midpow = [k ** (2 * (k + 2)) for k in range(2 * m + 1)]
    colpow = [(n_grid - j - 1) ** (n_grid - j + 1) for j in range(m + 1)]
    two_n = 2 ** n_grid
    return m, selfpow, pow_n, midpow, colpow, two_n


def _row_failures(i: int, n_grid: int, tables) -> list[int]:
    """Failing j indices of row i, using per-row incremental exponent reuse."""
    m, selfpow, pow_n, midpow, colpow, two_n = tables
    base = n_grid - i - 1
    running = base ** (n_grid - i + 1)  # exponent advances by one per column
    origin = _uses_origin_variant(0, 0, n_grid)
    row_lhs = selfpow[i]
    failures = []
    for j in range(m + 1):
        lhs = row_lhs * selfpow[j] * pow_n[i + j]
        if i == 0 and j == 0 and origin:
            last = 2 ** (2 * (i + j + 2))
        else:
            last = midpow[i + j]
        rhs = two_n * running * (colpow[j] * (n_grid - j - 1) ** i) * last
        if lhs > rhs:
            failures.append(j)
        running *= base
    return failures


_WORKER_TABLES = None
_WORKER_N = None


def _worker_init(n_grid: int) -> None:
    global _WORKER_TABLES, _WORKER_N
    _WORKER_N = n_grid
    _WORKER_TABLES = _certificate_tables(n_grid)


def _worker_row(i: int) -> list[int]:
    return _row_failures(i, _WORKER_N, _WORKER_TABLES)


@dataclass(frozen=True)
class CertificateRun:
    """Record of one certificate execution; an empty failure list is the certificate."""

    n_grid: int
    loop_bound: int
    cells_checked: int
    failures: tuple[tuple[int, int], ...]
    elapsed_s: float

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_json_dict(self) -> dict:
        return {
            "N": self.n_grid,
            "M": self.loop_bound,
            "cells": self.cells_checked,
            "failures": [[i, j] for i, j in self.failures],
            "elapsed_ms": round(self.elapsed_s * 1000.0),
        }


def certify(n_grid: int, smoke: int | None = None, seed: int | None = None,
            workers: int = 1) -> CertificateRun:
    """Run the exact cell check over the whole (M+1)^2 grid.

    Args:
        n_grid: grid resolution; must exceed 2e (a full pass additionally
            needs the origin-cell variant, which engages above 100).
        smoke: if given, check only this many uniformly sampled cells.
        seed: RNG seed for smoke sampling.
        workers: processes to distribute rows across; failures are merged
            in deterministic (i, j) order regardless.
    """
    if n_grid <= 5:
        raise ValueError("grid resolution must exceed 2e")
    m = loop_bound(n_grid)
    start = time.perf_counter()

    if smoke is not None:
        rng = np.random.default_rng(seed)
        cells = rng.integers(0, m + 1, size=(smoke, 2))
        failures = tuple(
            (int(i), int(j)) for i, j in cells if not verify_cell(int(i), int(j), n_grid)
        )
        return CertificateRun(n_grid, m, smoke, tuple(sorted(failures)),
                              time.perf_counter() - start)

    failures_by_row: list[list[int]]
    if workers > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(workers, initializer=_worker_init, initargs=(n_grid,)) as pool:
            failures_by_row = pool.map(_worker_row, range(m + 1), chunksize=8)
    else:
        tables = _certificate_tables(n_grid)
        failures_by_row = [_row_failures(i, n_grid, tables) for i in range(m + 1)]

    failures = tuple((i, j) for i, row in enumerate(failures_by_row) for j in row)
    return CertificateRun(n_grid, m, (m + 1) ** 2, failures,
                          time.perf_counter() - start)


# ---------------------------------------------------------------------------
# Dense float search, a sanity check against the exact certificate
# ---------------------------------------------------------------------------

def phi_max_search(n: int, step: float = 1e-3, within_u: bool = False) -> float:
    """Maximum of the gap function found on a dense grid of the 2- or 3-simplex.

    ``within_u`` restricts the 3-simplex search to the region where both
    outer coordinates stay below 1 - GAMMA (the part not handled by the
    coordinate-merge reduction); there the maximum sits strictly below log 2.
    """
    if n == 2:
        q = np.arange(0.0, 1.0 + step / 2, step)
        values = -xlogy(q, q) - xlogy(1.0 - q, 1.0 - q)
        return float(values.max())
    if n == 3:
        axis = np.arange(0.0, 1.0 + step / 2, step)
        q, s = np.meshgrid(axis, axis, indexing="ij")
        mask = q + s <= 1.0 + 1e-12
        if within_u:
            mask &= (q <= 1.0 - GAMMA) & (s <= 1.0 - GAMMA)
        q, s = q[mask], s[mask]
        values = (xlogy(q, q) + xlogy(s, s)
                  - xlogy(1.0 - q + s, 1.0 - q)
                  - xlogy(1.0 + q - s, 1.0 - s)
                  - 2.0 * xlogy(q + s, q + s))
        return float(values.max())
    raise ValueError("dense search is provided for n in {2, 3} only")
