"""Objectives, gradients, the Birkhoff-polytope ascent, and bound reports."""

import math
from fractions import Fraction

import numpy as np
import pytest

from betheperm import (
    NonNegMatrix,
    ZeroPermanentError,
    beta_objective,
    block_diag,
    bound_report,
    bp_objective,
    log_permanent,
    marginals,
    objective_gradient,
    ones,
    optimize,
    pair_block_matrix,
    validate_doubly_stochastic,
)
from tests.test_matrices import identity_matrix

LOG2 = math.log(2.0)


def random_positive_matrix(rng, n, low=0.05, high=1.0):
    return NonNegMatrix(tuple(tuple(float(x) for x in row)
                              for row in rng.uniform(low, high, (n, n))))


def random_doubly_stochastic(rng, n, num_vertices=8):
    """Random convex combination of permutation matrices (always feasible)."""
    weights = rng.dirichlet(np.ones(num_vertices))
    m = np.zeros((n, n))
    for w in weights:
        perm = rng.permutation(n)
        m[np.arange(n), perm] += w
    return validate_doubly_stochastic(m, tol=1e-9)


def exchange_family(p):
    """The one-parameter family of 2x2 doubly stochastic matrices."""
    return validate_doubly_stochastic([[p, 1.0 - p], [1.0 - p, p]], tol=1e-12)


class TestObjectives:
    def test_two_by_two_family_closed_form(self):
        rng = np.random.default_rng(2)
        a = random_positive_matrix(rng, 2)
        (a11, a12), (a21, a22) = a.entries
        for p in (0.0, 0.2, 0.5, 0.9, 1.0):
            expected = 0.0
            if p > 0:
                expected += p * math.log(a11 * a22)
            if p < 1:
                expected += (1 - p) * math.log(a12 * a21)
            assert beta_objective(a, exchange_family(p)) == pytest.approx(expected, abs=1e-12)

    def test_identity_pair_is_zero(self):
        eye = identity_matrix(3)
        assert beta_objective(eye, validate_doubly_stochastic(eye)) == 0.0
        assert bp_objective(eye, validate_doubly_stochastic(eye), 0.37) == 0.0

    def test_beta_at_marginals_term_by_term(self):
        a = NonNegMatrix(((1, 2), (3, 4)))
        p = marginals(a)
        # independent evaluator: plain float sum straight off the definition
        expected = 0.0
        for arow, prow in zip(a.entries, p.entries):
            for av, pv in zip(arow, prow):
                av, pv = float(av), float(pv)
                if pv > 0:
                    expected += pv * math.log(av / pv)
                if pv < 1:
                    expected += (1 - pv) * math.log(1 - pv)
        assert beta_objective(a, p) == pytest.approx(expected, abs=1e-12)

    def test_gamma_minus_one_is_beta(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            n = int(rng.integers(2, 6))
            a = random_positive_matrix(rng, n)
            p = random_doubly_stochastic(rng, n)
            assert bp_objective(a, p, -1.0) == beta_objective(a, p)

    def test_uniform_ones_half_gamma_value(self):
        # four entries of 1/2: relative term 2 log 2, entropy term -log 2
        value = bp_objective(ones(2), exchange_family(0.5), -0.5)
        assert value == pytest.approx(LOG2, abs=1e-14)

    def test_mass_on_zero_entry_is_minus_infinity(self):
        a = NonNegMatrix(((1, 0), (1, 1)))
        p = exchange_family(0.5)
        assert beta_objective(a, p) == float("-inf")

    def test_gamma_range_enforced(self):
        with pytest.raises(ValueError, match="gamma"):
            bp_objective(ones(2), exchange_family(0.5), 1.5)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            beta_objective(ones(3), exchange_family(0.5))

    def test_exact_entries_accepted(self):
        a = NonNegMatrix(((Fraction(1, 2), Fraction(1, 2)),
                          (Fraction(1, 2), Fraction(1, 2))))
        p = validate_doubly_stochastic([[Fraction(1, 2), Fraction(1, 2)],
                                        [Fraction(1, 2), Fraction(1, 2)]])
        # relative term vanishes; four entropy terms of (1/2) log(1/2)
        assert beta_objective(a, p) == pytest.approx(-2 * LOG2, abs=1e-14)


class TestGradient:
    def test_matches_central_differences(self):
        # single-entry perturbations leave the polytope; the objective is
        # still defined entrywise, so the raw container is used directly
        from betheperm.matrices import DoublyStochMatrix

        rng = np.random.default_rng(5)
        step = 1e-6
        for _ in range(10):
            n = int(rng.integers(2, 6))
            a = random_positive_matrix(rng, n, low=0.2)
            base = np.clip(
                np.asarray(random_doubly_stochastic(rng, n).entries, dtype=float),
                0.05, 0.95)
            for gamma in (-1.0, -0.5, 0.0, 1.0):
                g = objective_gradient(a, DoublyStochMatrix(tuple(map(tuple, base))),
                                       gamma)
                i, j = rng.integers(0, n, 2)
                up = base.copy()
                up[i, j] += step
                down = base.copy()
                down[i, j] -= step
                numeric = (bp_objective(a, DoublyStochMatrix(tuple(map(tuple, up))), gamma)
                           - bp_objective(a, DoublyStochMatrix(tuple(map(tuple, down))), gamma)
                           ) / (2 * step)
                assert g[i, j] == pytest.approx(numeric, rel=1e-5)


class TestOptimize:
    def test_all_ones_2x2(self):
        result = optimize(ones(2), -1.0)
        assert abs(result.log_value) <= 1e-9
        assert result.converged

    def test_diagonal_support_forces_permutation(self):
        a = NonNegMatrix(((2, 0, 0), (0, 5, 0), (0, 0, 3)))
        result = optimize(a, -1.0)
        assert result.log_value == pytest.approx(math.log(30), abs=1e-12)
        assert result.optimizer_P.entries == ((1.0, 0.0, 0.0),
                                              (0.0, 1.0, 0.0),
                                              (0.0, 0.0, 1.0))
        assert result.iterations == 0 and result.converged

    def test_two_by_two_endpoint_maximum(self):
        result = optimize(NonNegMatrix(((1, 2), (3, 4))), -1.0)
        assert result.log_value == pytest.approx(math.log(6), abs=1e-6)
        assert result.converged

    def test_zero_permanent_short_circuit(self):
        result = optimize(NonNegMatrix(((1, 0), (0, 0))), -1.0)
        assert result.log_value == float("-inf")
        assert result.optimizer_P is None
        assert result.converged and result.iterations == 0

    def test_iterates_feasible_and_support_respecting(self):
        a = NonNegMatrix(((1, 1, 0), (1, 1, 0), (0, 0, 5)))
        result = optimize(a, -1.0)
        p = result.optimizer_P
        validate_doubly_stochastic(p, tol=1e-9)
        for i in range(3):
            for j in range(3):
                if a.entries[i][j] == 0:
                    assert p.entries[i][j] == 0.0

    def test_log_value_recomputable_from_returned_point(self):
        rng = np.random.default_rng(53)
        for gamma in (-1.0, -0.5):
            a = random_positive_matrix(rng, 4)
            result = optimize(a, gamma)
            assert result.log_value == pytest.approx(
                bp_objective(a, result.optimizer_P, gamma), abs=1e-12)
            assert result.converged and result.gradient_residual <= 1e-8

    def test_objective_history_non_decreasing(self):
        rng = np.random.default_rng(11)
        a = random_positive_matrix(rng, 5)
        result = optimize(a, -1.0, record_history=True)
        h = result.objective_history
        assert all(h[k + 1] >= h[k] - 1e-9 for k in range(len(h) - 1))

    def test_nonconvergence_is_flagged_not_wrong(self):
        rng = np.random.default_rng(13)
        a = random_positive_matrix(rng, 5)
        result = optimize(a, -1.0, max_iter=2)
        assert not result.converged
        assert result.gradient_residual > 0
        validate_doubly_stochastic(result.optimizer_P, tol=1e-9)


class TestProperties:
    def test_monotone_in_gamma(self):
        rng = np.random.default_rng(17)
        tol = 1e-8
        for _ in range(5):
            n = int(rng.integers(2, 6))
            a = random_positive_matrix(rng, n)
            gammas = sorted(rng.uniform(-1, 1, 3))
            values = [optimize(a, g, tol=tol).log_value for g in gammas]
            assert values[0] <= values[1] + tol
            assert values[1] <= values[2] + tol

    def test_concavity_probe(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            n = int(rng.integers(2, 6))
            a = random_positive_matrix(rng, n)
            gamma = float(rng.uniform(-1, 1))
            p1 = np.asarray(random_doubly_stochastic(rng, n).entries, dtype=float)
            p2 = np.asarray(random_doubly_stochastic(rng, n).entries, dtype=float)
            lam = float(rng.uniform(0.05, 0.95))
            mix = validate_doubly_stochastic(lam * p1 + (1 - lam) * p2, tol=1e-9)
            f1 = bp_objective(a, validate_doubly_stochastic(p1, tol=1e-9), gamma)
            f2 = bp_objective(a, validate_doubly_stochastic(p2, tol=1e-9), gamma)
            assert bp_objective(a, mix, gamma) >= lam * f1 + (1 - lam) * f2 - 1e-9

    def test_lower_bound_and_marginals_sandwich(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            n = int(rng.integers(3, 7))
            a = random_positive_matrix(rng, n, low=0.0)
            lp = log_permanent(a)
            assert optimize(a, -1.0).log_value <= lp
            assert lp <= 0.5 * n * LOG2 + beta_objective(a, marginals(a)) + 1e-9

    def test_block_multiplicativity(self):
        rng = np.random.default_rng(29)
        tol = 1e-8
        b = random_positive_matrix(rng, 3)
        c = random_positive_matrix(rng, 2)
        lhs = optimize(block_diag(b, c), -1.0, tol=tol).log_value
        rhs = optimize(b, -1.0, tol=tol).log_value + optimize(c, -1.0, tol=tol).log_value
        assert abs(lhs - rhs) <= 3 * tol

    def test_sqrt_e_gap(self):
        rng = np.random.default_rng(31)
        tol = 1e-8
        for _ in range(5):
            n = int(rng.integers(2, 6))
            a = random_positive_matrix(rng, n)
            gap = (optimize(a, -0.5, tol=tol).log_value
                   - optimize(a, -1.0, tol=tol).log_value)
            assert gap <= 0.5 * n + tol

    def test_diagonal_scaling_covariance_grid_check_n2(self):
        # closed 2x2 family: the objective shifts by the scaler logs pointwise,
        # so the grid maxima must shift by exactly that amount
        rng = np.random.default_rng(37)
        a = random_positive_matrix(rng, 2)
        d = rng.uniform(0.5, 2.0, 2)
        e = rng.uniform(0.5, 2.0, 2)
        scaled = NonNegMatrix(tuple(
            tuple(d[i] * a.entries[i][j] * e[j] for j in range(2)) for i in range(2)))
        shift = math.log(d[0] * d[1] * e[0] * e[1])
        grid = np.linspace(1e-9, 1 - 1e-9, 2001)
        base_vals = [beta_objective(a, exchange_family(p)) for p in grid]
        scaled_vals = [beta_objective(scaled, exchange_family(p)) for p in grid]
        assert max(scaled_vals) == pytest.approx(max(base_vals) + shift, abs=1e-9)

    def test_diagonal_scaling_covariance_optimizer(self):
        rng = np.random.default_rng(41)
        tol = 1e-8
        for n in (2, 4):
            a = random_positive_matrix(rng, n)
            d = rng.uniform(0.5, 2.0, n)
            e = rng.uniform(0.5, 2.0, n)
            scaled = NonNegMatrix(tuple(
                tuple(d[i] * a.entries[i][j] * e[j] for j in range(n))
                for i in range(n)))
            shift = float(np.log(d).sum() + np.log(e).sum())
            lhs = optimize(scaled, -1.0, tol=tol).log_value
            rhs = optimize(a, -1.0, tol=tol).log_value + shift
            assert abs(lhs - rhs) <= 3 * tol


class TestBoundReport:
    def test_tight_block_example(self):
        report = bound_report(pair_block_matrix(4))
        assert report.n == 8
        assert report.log_per == pytest.approx(4 * LOG2, abs=1e-12)
        assert abs(report.log_bethe) <= 1e-6
        assert report.ratio_per_bethe == pytest.approx(2.0 ** 4, rel=1e-6)
        assert report.all_passed

    def test_identity_all_ratios_one(self):
        report = bound_report(identity_matrix(4))
        assert report.log_per == 0.0
        assert abs(report.log_bethe) <= 1e-9
        assert report.ratio_per_bethe == pytest.approx(1.0, rel=1e-9)
        assert report.ratio_per_bp_half == pytest.approx(1.0, rel=1e-9)
        assert report.all_passed

    def test_random_matrices_pass_all_checks(self):
        rng = np.random.default_rng(43)
        for _ in range(15):
            n = int(rng.integers(2, 7))
            a = NonNegMatrix(tuple(tuple(float(x) for x in row)
                                   for row in rng.uniform(0, 1, (n, n))))
            report = bound_report(a)
            assert report.all_passed, report.checks

    def test_ratios_consistent_with_logs(self):
        rng = np.random.default_rng(47)
        a = random_positive_matrix(rng, 4)
        report = bound_report(a)
        assert report.ratio_per_bethe == pytest.approx(
            math.exp(report.log_per - report.log_bethe), rel=1e-9)
        assert report.ratio_per_bp_half == pytest.approx(
            math.exp(report.log_per - report.log_bp_half), rel=1e-9)

    def test_zero_permanent_propagates(self):
        with pytest.raises(ZeroPermanentError):
            bound_report(NonNegMatrix(((1, 0), (0, 0))))

    def test_json_keys(self):
        payload = bound_report(ones(2)).to_json_dict()
        assert set(payload) == {"n", "log_per", "log_bethe", "log_bp_half",
                                "log_beta_marginals", "ratio_per_bethe",
                                "ratio_per_bp_half", "checks"}
        assert set(payload["checks"]) == {
            "bethe_le_per", "per_le_sqrt2n_beta_marginals", "per_le_sqrt2n_bethe",
            "per_le_bp_half", "bp_half_le_sqrte_n_bethe"}
