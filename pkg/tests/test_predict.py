import json
import math

import numpy as np
import pytest

from asymlab.dist import expectation
from asymlab.errors import ShapeMismatch, WrongSubspaceLabel
from asymlab.gmm import efficient_influence
from asymlab.instances import tangent_bases, three_way_bases
from asymlab.iv import hausman_contrast_basis
from asymlab.paths import LocalPath, path_distribution
from asymlab.predict import (
    Prediction,
    build_prediction,
    hall_split,
    hausman_noncentrality,
    j_noncentrality,
    local_power,
    predicted_bias,
)
from asymlab.scores import (
    ScoreFunction,
    centered_score,
    decompose_score,
    project,
    zero_score,
)


class TestPredictedBias:
    def test_zero_direction(self, g1):
        nu, _, _ = efficient_influence(g1.dist, g1.model, g1.theta0)
        assert np.array_equal(predicted_bias(g1.dist, nu, zero_score(g1.dist)), [0.0])

    def test_orthocomplement_direction_is_invisible(self, g1):
        # oracle: E[x^3] = 0 by symmetry
        nu, _, _ = efficient_influence(g1.dist, g1.model, g1.theta0)
        x = g1.dist.column(0)
        g = centered_score(g1.dist, (x**2 - 1.2) / math.sqrt(2.16))
        assert abs(predicted_bias(g1.dist, nu, g)[0]) < 1e-12

    def test_efficient_score_direction_moves_one_for_one(self, g1):
        # oracle: E[x * c x / 1.2] = c since E[x^2] = 1.2
        nu, _, _ = efficient_influence(g1.dist, g1.model, g1.theta0)
        for c in (0.5, 1.5, -2.0):
            g = centered_score(g1.dist, c * g1.dist.column(0) / 1.2)
            assert predicted_bias(g1.dist, nu, g)[0] == pytest.approx(c, abs=1e-12)


class TestJNoncentrality:
    def test_tangent_directions_are_null(self, g1, rng):
        t_basis, _ = tangent_bases(g1)
        for _ in range(20):
            coefs = rng.standard_normal(t_basis.dim)
            g = ScoreFunction(g1.dist, coefs @ t_basis.matrix())
            assert j_noncentrality(g1.dist, g1.model, g1.theta0, g) < 1e-10

    def test_zero_score(self, g1):
        assert j_noncentrality(g1.dist, g1.model, g1.theta0, zero_score(g1.dist)) == 0.0

    def test_hand_value_on_detectable_direction(self, g1):
        # oracle: Sigma^{-1/2} E[m g] = (0, c sqrt(2.16)) and the identifying
        # projector kills only the first coordinate, so ncp = c^2 * 2.16
        x = g1.dist.column(0)
        for c in (0.5, 2.0):
            g = centered_score(g1.dist, c * (x**2 - 1.2))
            ncp = j_noncentrality(g1.dist, g1.model, g1.theta0, g)
            assert ncp == pytest.approx(c * c * 2.16, abs=1e-10)

    def test_matches_quadratic_form_with_projected_score(self, g1, rng):
        # the noncentrality is the same whether computed from g or from its
        # orthocomplement projection
        t_basis, t_perp = tangent_bases(g1)
        for _ in range(10):
            g = centered_score(g1.dist, rng.standard_normal(5))
            g_perp = project(g1.dist, g, t_perp)
            a = j_noncentrality(g1.dist, g1.model, g1.theta0, g)
            b = j_noncentrality(g1.dist, g1.model, g1.theta0, g_perp)
            assert a == pytest.approx(b, abs=1e-10)


class TestHausmanNoncentrality:
    def test_tangent_direction_null(self, iv1):
        basis = hausman_contrast_basis(iv1.dist, iv1.model)
        e = iv1.model.errors_on(iv1.dist.support)
        g = centered_score(iv1.dist, iv1.dist.column(1) * e)
        ncp, dof = hausman_noncentrality(iv1.dist, basis, g)
        assert ncp < 1e-12 and dof == 1

    def test_basis_element_has_unit_ncp(self, iv1):
        basis = hausman_contrast_basis(iv1.dist, iv1.model)
        ncp, _ = hausman_noncentrality(iv1.dist, basis, basis.functions[0])
        assert ncp == pytest.approx(1.0, abs=1e-12)

    def test_detectable_direction_matches_decomposition(self, iv1):
        # oracle: exact projection on the support via decompose_score
        e = iv1.model.errors_on(iv1.dist.support)
        x1, z1 = iv1.dist.column(1), iv1.dist.column(3)
        c = 2.0
        g = centered_score(iv1.dist, c * (z1 - 0.5 * x1) * e)
        basis = hausman_contrast_basis(iv1.dist, iv1.model)
        ncp, _ = hausman_noncentrality(iv1.dist, basis, g)
        report = decompose_score(iv1.dist, g, three_way_bases(iv1))
        assert ncp == pytest.approx(report.var_TperpM, abs=1e-10)
        assert ncp == pytest.approx(2.0, abs=1e-10)

    def test_wrong_label_rejected(self, iv1):
        t_basis, _, _ = tangent_bases(iv1)
        with pytest.raises(WrongSubspaceLabel):
            hausman_noncentrality(iv1.dist, t_basis, zero_score(iv1.dist))


class TestHallSplit:
    def test_parts_orthogonal_and_additive(self, g1, rng):
        for _ in range(20):
            g = centered_score(g1.dist, rng.standard_normal(5))
            ident, over = hall_split(g1.dist, g1.model, g1.theta0, g)
            assert abs(ident @ over) < 1e-12
            total = np.linalg.norm(ident) ** 2 + np.linalg.norm(over) ** 2
            drift = ident + over
            assert total == pytest.approx(drift @ drift, abs=1e-12)

    def test_orthocomplement_direction_has_no_identifying_part(self, g1):
        # oracle: the influence is orthogonal to g, so E[grad m]' Sigma^{-1}
        # E[m g] vanishes
        _, t_perp = tangent_bases(g1)
        g = t_perp.functions[0]
        ident, _ = hall_split(g1.dist, g1.model, g1.theta0, g)
        assert np.linalg.norm(ident) < 1e-10

    def test_tangent_direction_has_no_overidentifying_part(self, g1, rng):
        t_basis, _ = tangent_bases(g1)
        coefs = rng.standard_normal(t_basis.dim)
        g = ScoreFunction(g1.dist, coefs @ t_basis.matrix())
        _, over = hall_split(g1.dist, g1.model, g1.theta0, g)
        assert np.linalg.norm(over) < 1e-10

    def test_zero_score(self, g1):
        ident, over = hall_split(g1.dist, g1.model, g1.theta0, zero_score(g1.dist))
        assert np.linalg.norm(ident) == 0.0 and np.linalg.norm(over) == 0.0


class TestOrthogonalityProposition:
    def test_bias_and_power_live_on_orthogonal_channels(self, g1, rng):
        # computable form: a nonzero bias needs tangent variance, a nonzero
        # noncentrality needs orthocomplement variance; and the cross checks
        # vanish exactly
        nu, _, _ = efficient_influence(g1.dist, g1.model, g1.theta0)
        bases = three_way_bases(g1)
        t_basis, t_perp = bases[0], bases[1]
        for _ in range(100):
            g = centered_score(g1.dist, rng.standard_normal(5))
            report = decompose_score(g1.dist, g, bases)
            bias = predicted_bias(g1.dist, nu, g)
            ncp = j_noncentrality(g1.dist, g1.model, g1.theta0, g)
            if np.linalg.norm(bias) > 1e-12:
                assert report.var_T > 1e-12
            if ncp > 1e-12:
                assert report.var_TperpM > 1e-12
            assert np.linalg.norm(predicted_bias(g1.dist, nu, report.pi_TperpM)) < 1e-10
            assert j_noncentrality(g1.dist, g1.model, g1.theta0, report.pi_T) < 1e-10


class TestPathwiseDerivative:
    def test_mean_functional_derivative_matches_inner_product(self, g1, rng):
        # central difference of the mean along the path against E[nu g]
        nu, _, _ = efficient_influence(g1.dist, g1.model, g1.theta0)
        step = 1e-4
        for _ in range(5):
            g = centered_score(g1.dist, rng.standard_normal(5))
            up = LocalPath(g1.dist, g)
            down = LocalPath(g1.dist, -g)
            mean_up = expectation(path_distribution(up, step), g1.dist.column(0))
            mean_down = expectation(path_distribution(down, step), g1.dist.column(0))
            derivative = (mean_up - mean_down) / (2.0 * step)
            assert derivative == pytest.approx(
                predicted_bias(g1.dist, nu, g)[0], abs=1e-6
            )


class TestBuildPrediction:
    def test_gmm_document_roundtrip(self, g1):
        x = g1.dist.column(0)
        g = centered_score(g1.dist, 2.0 * (x**2 - 1.2) / math.sqrt(2.16))
        pred = build_prediction(g1, g, ["gmm"], ["j"], 0.05)
        assert pred.tests["j"].ncp == pytest.approx(4.0, abs=1e-10)
        assert pred.tests["j"].dof == 1
        assert pred.tests["j"].power == pytest.approx(local_power(1, 4.0, 0.05), abs=1e-12)
        assert np.max(np.abs(pred.biases["gmm"])) < 1e-10
        assert pred.decomposition["var_T"] == pytest.approx(0.0, abs=1e-10)
        assert pred.decomposition["var_TperpM"] == pytest.approx(4.0, abs=1e-10)
        doc = json.loads(json.dumps(pred.to_dict()))
        back = Prediction.from_dict(doc)
        assert back.tests["j"].power == pred.tests["j"].power
        assert np.array_equal(back.biases["gmm"], pred.biases["gmm"])

    def test_iv_document(self, iv1):
        e = iv1.model.errors_on(iv1.dist.support)
        g = centered_score(iv1.dist, iv1.dist.column(1) * e)
        pred = build_prediction(iv1, g, ["ols", "tsls"], ["dwh"], 0.05)
        assert np.allclose(pred.biases["ols"], [1.0, 0.0], atol=1e-10)
        assert np.allclose(pred.biases["tsls"], [1.0, 0.0], atol=1e-10)
        assert pred.tests["dwh"].ncp == pytest.approx(0.0, abs=1e-12)
        assert pred.tests["dwh"].power == pytest.approx(0.05, abs=1e-8)

    def test_incompatible_names_rejected(self, g1):
        g = zero_score(g1.dist)
        with pytest.raises(ShapeMismatch):
            build_prediction(g1, g, ["ols"], [], 0.05)
        with pytest.raises(ShapeMismatch):
            build_prediction(g1, g, ["gmm"], ["dwh"], 0.05)

    def test_malformed_document_rejected(self):
        with pytest.raises(ShapeMismatch):
            Prediction.from_dict({"bias": [{"estimator": "gmm"}], "tests": []})

    def test_invalid_prediction_fields_rejected(self):
        from asymlab.predict import TestPrediction

        with pytest.raises(ShapeMismatch):
            TestPrediction(dof=1, ncp=-1.0, power=0.5)
        with pytest.raises(ShapeMismatch):
            TestPrediction(dof=1, ncp=1.0, power=1.5)

    def test_noncentrality_hint_attaches(self, g1):
        from asymlab.chi2 import TestStatistic
        from asymlab.predict import TestPrediction, with_noncentrality

        stat = TestStatistic(value=2.0, dof=1)
        assert stat.noncentrality_hint is None
        annotated = with_noncentrality(stat, TestPrediction(dof=1, ncp=4.0, power=0.5))
        assert annotated.noncentrality_hint == 4.0
        assert annotated.value == stat.value
