import numpy as np
import pytest

from msfem import problems


class TestModelProblem:
    def setup_method(self):
        self.prob = problems.model_problem_section5()

    def test_coefficient_at_zero(self):
        # cos(0) = 1: entries 2/(2+1) and 1 + 1/2, times the global scale
        a = self.prob.coefficient.matrix(np.array([[0.0, 0.3]]))[0]
        scale = 1.0 / (8 * np.pi ** 2)
        assert a[0, 0] == pytest.approx(scale * 2.0 / 3.0, rel=1e-14)
        assert a[1, 1] == pytest.approx(scale * 1.5, rel=1e-14)
        assert a[0, 1] == 0.0 and a[1, 0] == 0.0

    def test_declared_spectral_bounds(self):
        scale = 1.0 / (8 * np.pi ** 2)
        assert self.prob.coefficient.gamma_min == pytest.approx(scale * 0.5)
        assert self.prob.coefficient.gamma_max == pytest.approx(scale * 2.0)

    def test_exact_solution_at_quarter_point(self):
        # cos(2 pi / 4) = 0 kills the oscillatory term
        val = self.prob.exact_solution(np.array([0.25, 0.25]))
        assert val == pytest.approx(1.0, abs=1e-14)

    def test_source_is_plain_sine_product(self):
        pts = np.array([[0.25, 0.25], [0.1, 0.7]])
        expected = np.sin(2 * np.pi * pts[:, 0]) * np.sin(2 * np.pi * pts[:, 1])
        assert np.allclose(self.prob.source(pts), expected, atol=1e-15)

    def test_epsilon(self):
        assert self.prob.epsilon == 0.05

    def test_bounds_hold_at_many_sample_points(self):
        rng = np.random.default_rng(42)
        pts = rng.random((1_000_000, 2))
        self.prob.coefficient.validate(pts)


class TestConstantProblem:
    def test_identity_coefficient(self):
        prob = problems.constant_problem(1.0)
        pts = np.random.default_rng(0).random((100, 2))
        a = prob.coefficient.matrix(pts)
        assert np.abs(a - np.eye(2)).max() == 0.0

    def test_eigenvalues_are_gamma(self):
        prob = problems.constant_problem(3.5)
        a = prob.coefficient.matrix(np.array([[0.2, 0.9]]))
        eigs = np.linalg.eigvalsh(a)[0]
        assert np.allclose(eigs, [3.5, 3.5])
        assert prob.coefficient.gamma_min == prob.coefficient.gamma_max == 3.5

    def test_unit_source_no_exact_solution(self):
        prob = problems.constant_problem()
        assert prob.exact_solution is None
        assert np.all(prob.source(np.zeros((5, 2))) == 1.0)

    @pytest.mark.parametrize("gamma", [0.0, -1.0])
    def test_nonpositive_gamma_rejected(self, gamma):
        with pytest.raises(ValueError):
            problems.constant_problem(gamma)


def test_registry_lookup():
    assert problems.get_problem("constant", gamma=2.0).name == "constant"
    assert problems.get_problem("section5").name == "section5"
    with pytest.raises(ValueError, match="unknown problem"):
        problems.get_problem("nope")


def test_validate_catches_bad_bounds():
    field = problems.CoefficientField(
        matrix=lambda pts: np.broadcast_to(
            3.0 * np.eye(2), np.asarray(pts).shape[:-1] + (2, 2)
        ),
        gamma_min=1.0,
        gamma_max=2.0,
    )
    with pytest.raises(ValueError, match="escape declared bounds"):
        field.validate(np.zeros((4, 2)))


def test_bad_spectral_declaration_rejected():
    with pytest.raises(ValueError):
        problems.CoefficientField(matrix=lambda p: None, gamma_min=0.0, gamma_max=1.0)


def test_nonpositive_epsilon_rejected():
    prob = problems.constant_problem()
    with pytest.raises(ValueError):
        problems.ProblemInstance(
            name="bad", coefficient=prob.coefficient, source=prob.source,
            epsilon=0.0,
        )
