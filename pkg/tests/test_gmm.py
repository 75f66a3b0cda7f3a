import math

import numpy as np
import pytest

from asymlab.dist import Dataset, draw_sample, expectation, make_distribution
from asymlab.errors import DegenerateDof, Infeasible, MomentNotSatisfied, SingularSigma
from asymlab.gmm import (
    efficient_influence,
    estimate_gmm,
    j_statistic,
    kl_projection,
    population_dataset,
)
from asymlab.instances import tangent_bases
from asymlab.models import MomentModel
from asymlab.scores import ScoreFunction, project


def mean_model():
    def m(theta, x):
        return np.array([x[0] - theta[0]])

    def jac(theta, x):
        return np.array([[-1.0]])

    return MomentModel(m=m, jac=jac, p=1, l=1)


class TestEfficientInfluence:
    def test_g1_hand_algebra(self, g1):
        # oracle: E[grad m] = (-1, 0)', Sigma = diag(1.2, 2.16), so the
        # efficient score is x / 1.2, the information 1/1.2, the influence x
        nu, info, ell = efficient_influence(g1.dist, g1.model, g1.theta0)
        x = g1.dist.column(0)
        assert info.shape == (1, 1) and info[0, 0] == pytest.approx(1.0 / 1.2, abs=1e-12)
        assert np.max(np.abs(nu[0].values - x)) < 1e-10
        assert np.max(np.abs(ell[0].values - x / 1.2)) < 1e-10

    def test_just_identified_sample_mean_influence(self, g1):
        nu, info, _ = efficient_influence(g1.dist, mean_model(), np.array([0.0]))
        assert np.max(np.abs(nu[0].values - g1.dist.column(0))) < 1e-10

    def test_duplicate_moment_singular(self, g1):
        def m(theta, x):
            d = x[0] - theta[0]
            return np.array([d, d])

        def jac(theta, x):
            return np.array([[-1.0], [-1.0]])

        with pytest.raises(SingularSigma):
            efficient_influence(g1.dist, MomentModel(m=m, jac=jac, p=1, l=2), np.array([0.0]))

    def test_moment_not_satisfied(self, g1):
        with pytest.raises(MomentNotSatisfied):
            efficient_influence(g1.dist, g1.model, np.array([0.7]))

    def test_influence_lies_in_tangent_space(self, g1):
        nu, _, _ = efficient_influence(g1.dist, g1.model, g1.theta0)
        t_basis, _ = tangent_bases(g1)
        for f in nu:
            assert (f - project(g1.dist, f, t_basis)).norm() < 1e-8


class TestEstimateGmm:
    def test_population_sample_recovers_truth(self, g1):
        # oracle: population moments vanish exactly at the truth
        data = population_dataset(g1.dist, 10)
        est = estimate_gmm(data, g1.model, np.array([0.6]))
        assert est.converged
        assert abs(est.theta_hat[0]) < 1e-8
        assert est.j_stat < 1e-12

    def test_just_identified_equals_sample_mean(self, g1):
        data = draw_sample(g1.dist, 200, seed=11)
        est = estimate_gmm(data, mean_model(), np.array([0.3]))
        assert est.theta_hat[0] == pytest.approx(float(np.mean(data.rows)), abs=1e-10)
        assert est.j_stat < 1e-10

    def test_null_sampling_distribution(self, g1):
        # oracle: chi-square(1) has mean one under the null; the scaled
        # estimator stays within four standard deviations of zero
        reps, n = 300, 1000
        j_values, devs = [], []
        for rep in range(reps):
            data = draw_sample(g1.dist, n, seed=42 + rep)
            est = estimate_gmm(data, g1.model, g1.theta0)
            assert est.converged
            j_values.append(est.j_stat)
            devs.append(math.sqrt(n) * est.theta_hat[0])
        assert abs(np.mean(j_values) - 1.0) < 4.0 * math.sqrt(2.0 / reps)
        assert abs(np.mean(devs)) < 4.0 * math.sqrt(1.2 / reps)

    def test_large_sample_consistency(self, g1):
        # two-step on data generated from the truth reproduces it
        n = 10**5
        data = draw_sample(g1.dist, n, seed=77)
        est = estimate_gmm(data, g1.model, np.array([0.2]))
        assert abs(est.theta_hat[0]) < 5.0 * math.sqrt(1.2 / n)

    def test_preconditions(self, g1):
        data = draw_sample(g1.dist, 2, seed=1)
        with pytest.raises(ValueError):
            estimate_gmm(data, g1.model, np.array([0.0]))
        bounded = MomentModel(
            m=g1.model.m,
            jac=g1.model.jac,
            p=1,
            l=2,
            theta_bounds=(np.array([-0.5]), np.array([0.5])),
        )
        with pytest.raises(ValueError):
            estimate_gmm(population_dataset(g1.dist, 10), bounded, np.array([0.9]))

    def test_sigma_hat_positive_definite(self, g1):
        data = draw_sample(g1.dist, 500, seed=5)
        est = estimate_gmm(data, g1.model, g1.theta0)
        evals = np.linalg.eigvalsh(est.sigma_hat)
        assert evals[0] > 0
        assert np.linalg.eigvalsh(est.info_hat)[0] > 0

    def test_singular_sigma_hat_detected(self, g1):
        from asymlab.errors import SingularSigmaHat

        # a constant sample makes the moment outer product rank one
        data = Dataset(rows=np.zeros((10, 1)))
        with pytest.raises(SingularSigmaHat):
            estimate_gmm(data, g1.model, g1.theta0)

    def test_rank_deficient_jacobian_detected(self, g1):
        from asymlab.errors import RankDeficientJacobian

        def m(theta, x):
            return np.array([x[0], x[0] ** 2 - 1.2])  # does not depend on theta

        def jac(theta, x):
            return np.array([[0.0], [0.0]])

        flat = MomentModel(m=m, jac=jac, p=1, l=2)
        with pytest.raises(RankDeficientJacobian):
            efficient_influence(g1.dist, flat, np.array([0.0]))


class TestJStatistic:
    def test_degenerate_dof_refused(self, g1):
        data = draw_sample(g1.dist, 100, seed=2)
        est = estimate_gmm(data, mean_model(), np.array([0.0]))
        with pytest.raises(DegenerateDof):
            j_statistic(data, mean_model(), est)

    def test_dof_is_overidentification_count(self, g1):
        data = draw_sample(g1.dist, 100, seed=3)
        est = estimate_gmm(data, g1.model, g1.theta0)
        assert j_statistic(data, g1.model, est).dof == 1

    def test_population_data_never_rejects(self, g1):
        data = population_dataset(g1.dist, 10)
        est = estimate_gmm(data, g1.model, g1.theta0)
        stat = j_statistic(data, g1.model, est)
        assert not stat.reject(0.05)

    def test_estimate_must_match_data(self, g1):
        data = draw_sample(g1.dist, 100, seed=3)
        est = estimate_gmm(data, g1.model, g1.theta0)
        other = draw_sample(g1.dist, 120, seed=3)
        with pytest.raises(ValueError):
            j_statistic(other, g1.model, est)


class TestKlProjection:
    def test_member_projects_to_itself(self, g1):
        projected, lam = kl_projection(g1.dist, g1.model, g1.theta0)
        assert np.linalg.norm(lam) < 1e-10
        assert np.max(np.abs(projected.probs - g1.dist.probs)) < 1e-10

    def test_two_point_closed_form(self):
        # oracle: solving 0.6 e^lam = 0.4 e^{-lam} gives lam = log(2/3) / 2
        eta = make_distribution([1.0, -1.0], [0.6, 0.4])

        def m(theta, x):
            return np.array([x[0]])

        def jac(theta, x):
            return np.array([[1.0]])

        model = MomentModel(m=m, jac=jac, p=1, l=1)
        projected, lam = kl_projection(eta, model, np.array([0.0]))
        assert lam[0] == pytest.approx(0.5 * math.log(2.0 / 3.0), abs=1e-10)
        assert np.allclose(projected.probs, [0.5, 0.5], atol=1e-10)

    def test_infeasible_target(self, g1):
        def m(theta, x):
            return np.array([x[0] - 3.0])

        def jac(theta, x):
            return np.array([[0.0]])

        model = MomentModel(m=m, jac=jac, p=1, l=1)
        with pytest.raises(Infeasible):
            kl_projection(g1.dist, model, np.array([0.0]))

    def test_random_feasible_pairs(self, g1, rng):
        for _ in range(10):
            eta = make_distribution(g1.dist.support, rng.dirichlet(np.full(5, 4.0)))
            theta = rng.uniform(-0.3, 0.3, size=1)
            projected, lam = kl_projection(eta, g1.model, theta)
            moments = expectation(projected, g1.model.moments_at(theta, projected.support))
            assert np.max(np.abs(moments)) < 1e-10
            # dual form: projected probs proportional to eta * exp(lam' m)
            m_vals = g1.model.moments_at(theta, eta.support)
            weights = eta.probs * np.exp(m_vals @ lam)
            assert np.max(np.abs(projected.probs - weights / weights.sum())) < 1e-10


class TestProjectionMatrixIdentity:
    def test_projector_idempotent_symmetric(self, g1):
        from asymlab.predict import _hall_projector

        _, proj, _ = _hall_projector(g1.dist, g1.model, g1.theta0)
        assert np.max(np.abs(proj - proj.T)) < 1e-10
        assert np.max(np.abs(proj @ proj - proj)) < 1e-10

    def test_tangent_scores_have_no_overidentifying_drift(self, g1, rng):
        # for scores inside the tangent space the whitened moment drift lies
        # entirely in the identifying subspace
        from asymlab.predict import hall_split

        t_basis, _ = tangent_bases(g1)
        for _ in range(50):
            coefs = rng.standard_normal(t_basis.dim)
            g = ScoreFunction(g1.dist, coefs @ t_basis.matrix())
            _, over = hall_split(g1.dist, g1.model, g1.theta0, g)
            assert np.linalg.norm(over) < 1e-10
