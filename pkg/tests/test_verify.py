import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from breakage_profiles import (
    CollisionKernel,
    DensityField,
    DomainError,
    PowerLaw,
    SolverConfig,
    build_redistribution,
    discretize,
    make_geometric_grid,
    simulate_rescaled,
)
from breakage_profiles.solver import initial_field
from breakage_profiles.verify import (
    CheckResult,
    ProfileFunctionals,
    VerificationReport,
    check_derivative_bound,
    check_l1_identity,
    check_moment_bounds,
    check_moment_ode,
    check_monotone_lower_bound,
    check_nonnegative,
    check_pointwise_form,
    check_positivity,
    check_sup_bound,
    check_weak_form,
    tail_fractions,
    verify_profile,
)

from helpers import analytic_moment, analytic_profile, stationary

REF = CollisionKernel(1.0, 1.0)
BETA2 = PowerLaw(0.0)


def analytic_eta(n=512):
    return discretize(make_geometric_grid(1e-4, 40.0, n), analytic_profile).normalized()


class TestAnalyticOracles:
    eta = analytic_eta()

    def test_functionals(self):
        fn = ProfileFunctionals.from_profile(self.eta, REF, BETA2)
        assert fn.e_beta == 0.5
        assert fn.moments[2.0] == pytest.approx(analytic_moment(2.0), rel=1e-4)
        assert fn.L1 == pytest.approx(2.0, rel=1e-4)

    def test_l1_identity(self):
        res = check_l1_identity(self.eta, REF, BETA2)
        assert res.passed and res.computed < 1e-4

    def test_moment_bounds(self):
        lower, upper = check_moment_bounds(self.eta, REF, BETA2)
        assert lower.reference == pytest.approx(1.0) and lower.passed
        assert upper.reference == pytest.approx(2.0) and upper.passed
        assert upper.computed == pytest.approx(1.0, rel=1e-4)

    def test_sup_bound(self):
        res = check_sup_bound(self.eta, REF, BETA2)
        assert res.computed == pytest.approx(2.0 / math.e, rel=1e-4)
        assert res.reference == pytest.approx(4.0, rel=1e-4) and res.passed

    def test_derivative_bound(self):
        res = check_derivative_bound(self.eta, REF, BETA2)
        assert res.computed == pytest.approx(2.0, rel=5e-3)
        assert res.reference == pytest.approx(6.0, rel=1e-4) and res.passed

    def test_weak_form_k2(self):
        by_k = {r.name: r for r in check_weak_form(self.eta, REF, BETA2)}
        assert by_k["weak_form_k2"].details["lhs"] == pytest.approx(-analytic_moment(2.0), rel=1e-4)
        assert all(r.passed for r in by_k.values())

    def test_monotone_and_positive(self):
        assert check_monotone_lower_bound(self.eta, REF).passed
        assert check_positivity(self.eta).passed
        assert check_nonnegative(self.eta).passed

    def test_full_report(self):
        report = verify_profile(self.eta, REF, BETA2)
        assert report.passed, report.table()


class TestFailures:
    eta = analytic_eta(256)

    def test_unnormalised_mass_is_a_precondition_failure(self):
        bad = self.eta.scaled(1.1)
        res = check_l1_identity(bad, REF, BETA2)
        assert not res.passed and res.kind == "precondition"
        assert check_moment_bounds(bad, REF, BETA2)[0].kind == "precondition"
        assert not verify_profile(bad, REF, BETA2).passed

    def test_zero_interior_cell(self):
        v = self.eta.values.copy()
        v[100] = 0.0
        bad = DensityField(self.eta.grid, v)
        assert not check_positivity(bad).passed
        assert not check_monotone_lower_bound(bad, REF).passed

    def test_negative_cell(self):
        v = self.eta.values.copy()
        v[50] = -1e-3
        res = check_nonnegative(DensityField(self.eta.grid, v))
        assert not res.passed and res.details["negative_cells"] == 1

    def test_decreasing_functional_fails(self):
        v = self.eta.values.copy()
        v[120:] *= 0.5  # a step down that no growth of exp(alpha g) can hide
        res = check_monotone_lower_bound(DensityField(self.eta.grid, v), REF)
        assert not res.passed and res.computed > 1e-3

    def test_heavy_tail_raises_divergence_indicator(self):
        g = make_geometric_grid(1e-4, 40.0, 256)
        tail = DensityField(g, g.centers**-2.5).normalized()
        tails = tail_fractions(tail, REF)
        assert tails["upper"] > 0.1
        res = check_pointwise_form(tail, REF, BETA2)
        assert not res.passed and res.details["divergence"]


class TestRefinement:
    def test_pointwise_and_weak_form_orders(self):
        pw, wk = [], []
        for n in (128, 256, 512):
            result, K, law = stationary((1.0, 1.0, 0.0), n)
            pw.append(check_pointwise_form(result.profile, K, law).computed)
            wk.append({r.name: r.computed for r in check_weak_form(result.profile, K, law)}["weak_form_k2"])
        for errs in (pw, wk):
            orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
            assert np.all(orders >= 0.9), orders

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([REF, CollisionKernel(0.75, 0.75), CollisionKernel(0.5, 1.0)]))
    def test_weak_form_mass_is_exact_on_random_fields(self, seed, K):
        g = make_geometric_grid(1e-3, 50.0, 48)
        law = PowerLaw(-0.5)
        u = DensityField(g, np.random.default_rng(seed).random(48))
        res = check_weak_form(u, K, law, test_family=(1.0,), R=build_redistribution(g, law))[0]
        assert res.computed <= 1e-12


class TestMomentOde:
    grid = make_geometric_grid(1e-4, 40.0, 128)

    def _trajectory(self, tau_end=1.0):
        return simulate_rescaled(initial_field(self.grid), tau_end, SolverConfig(), REF, BETA2)

    def test_k1_is_trivial(self):
        res = check_moment_ode(self._trajectory(), 1.0, REF, BETA2)
        assert res.passed and res.computed < 1e-10

    def test_k2_is_consistent(self):
        res = check_moment_ode(self._trajectory(), 2.0, REF, BETA2, tol=0.05)
        assert res.passed, res.computed

    def test_missing_order(self):
        with pytest.raises(DomainError):
            check_moment_ode(self._trajectory(), 7.0, REF, BETA2)


class TestReport:
    def test_json_round_trip(self):
        report = verify_profile(analytic_eta(128), REF, BETA2)
        back = VerificationReport.from_json(report.to_json())
        assert back.passed == report.passed
        assert [c.name for c in back.checks] == [c.name for c in report.checks]
        assert back["l1_identity"].computed == report["l1_identity"].computed

    def test_missing_check(self):
        with pytest.raises(KeyError):
            VerificationReport()["nope"]

    def test_check_result_dict(self):
        c = CheckResult("a", "b", "bound", 1.0, 2.0, 0.0, True)
        assert CheckResult.from_dict(c.to_dict()) == c

    def test_table_lists_every_check(self):
        report = verify_profile(analytic_eta(128), REF, BETA2)
        text = report.table()
        assert all(c.name in text for c in report.checks)
