import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from bsumkit.core import (
    PATHOLOGY_NAMES,
    BlockVector,
    FeasibleSet,
    Problem,
    build_pathology,
    directional_derivative,
    eval_objective,
    l1_norm,
    prox_residual,
    quadratic_penalty,
)
from bsumkit.errors import DimensionMismatchError, InfeasibleError
from bsumkit.utils import fold, read_matrix, read_tensor, soft_threshold, unfold, write_matrix, write_tensor


def test_block_vector_flat_round_trip():
    x = BlockVector.from_flat(np.arange(6.0), (2, 3, 1))
    assert x.dims == (2, 3, 1)
    assert x.n_blocks == 3
    assert_array_equal(x[1], [2.0, 3.0, 4.0])
    assert_array_equal(x.flatten(), np.arange(6.0))


def test_block_vector_blocks_are_read_only():
    x = BlockVector.zeros((2, 2))
    with pytest.raises(ValueError):
        x[0][0] = 1.0


def test_replace_block_checks_size():
    x = BlockVector.zeros((2, 2))
    y = x.replace_block(1, [1.0, 2.0])
    assert_array_equal(y.flatten(), [0.0, 0.0, 1.0, 2.0])
    assert_array_equal(x.flatten(), np.zeros(4))
    with pytest.raises(DimensionMismatchError) as err:
        x.replace_block(0, [1.0, 2.0, 3.0])
    assert err.value.block == 0
    assert err.value.expected == 2
    assert err.value.got == 3


def test_box_and_nonneg_projection():
    box = FeasibleSet.box(-1.0, 1.0, 3)
    assert_array_equal(box.project([-2.0, 0.5, 3.0]), [-1.0, 0.5, 1.0])
    assert_array_equal(FeasibleSet.nonneg(3).project([-2.0, 0.5, 3.0]), [0.0, 0.5, 3.0])


def test_ball_projection_scales_to_radius():
    ball = FeasibleSet.ball(2.0, 2)
    assert_allclose(ball.project([3.0, 4.0]), [1.2, 1.6])
    assert_array_equal(ball.project([0.3, 0.4]), [0.3, 0.4])


def test_simplex_projection_examples():
    simplex = FeasibleSet.simplex(3)
    assert_allclose(simplex.project([0.5, 0.5, 0.5]), np.full(3, 1.0 / 3.0))
    assert_allclose(simplex.project([2.0, 0.0, 0.0]), [1.0, 0.0, 0.0])


@pytest.mark.parametrize(
    "fset",
    [
        FeasibleSet.box(-0.5, 0.25, 5),
        FeasibleSet.nonneg(5),
        FeasibleSet.ball(1.5, 5),
        FeasibleSet.simplex(5),
    ],
)
def test_projection_is_feasible_and_idempotent(fset, rng):
    for v in 3.0 * rng.standard_normal((20, 5)):
        p = fset.project(v)
        assert fset.contains(p)
        assert_allclose(fset.project(p), p, atol=1e-12)


@pytest.mark.parametrize(
    "fset",
    [
        FeasibleSet.box([-1.0, 0.0, -0.5, 0.2, -2.0], [1.0, 0.5, 0.5, 0.3, 2.0]),
        FeasibleSet.nonneg(5),
        FeasibleSet.ball(0.75, 5),
        FeasibleSet.simplex(5),
    ],
    ids=["box", "nonneg", "ball", "simplex"],
)
def test_projection_is_nonexpansive(fset, rng):
    u = 2.0 * rng.standard_normal((1000, 5))
    v = u + rng.standard_normal((1000, 5)) * rng.uniform(1e-3, 3.0, (1000, 1))
    for a, b in zip(u, v):
        assert np.linalg.norm(fset.project(a) - fset.project(b)) <= np.linalg.norm(a - b) + 1e-12


def test_direct_construction_converts_bounds():
    fset = FeasibleSet("box", 3, lo=[0, -1, 0], hi=[1, 1, 2])
    assert isinstance(fset.lo, np.ndarray) and fset.lo.dtype == float
    assert isinstance(fset.hi, np.ndarray)
    assert_array_equal(fset.project([-5.0, 5.0, 1.0]), [0.0, 1.0, 1.0])
    assert fset.contains(np.array([0.5, 0.0, 2.0]))
    with pytest.raises(ValueError):
        fset.lo[0] = 3.0
    scalar = FeasibleSet("box", 2, lo=0, hi=1)
    assert_array_equal(scalar.lo, [0.0, 0.0])
    with pytest.raises(ValueError):
        FeasibleSet("box", 3, lo=[0.0, 0.0], hi=[1.0, 1.0, 1.0])


def test_sample_draws_feasible_points(rng):
    for fset in (FeasibleSet.box(0.0, 2.0, 3), FeasibleSet.ball(1.0, 3), FeasibleSet.simplex(3), FeasibleSet.nonneg(3)):
        assert all(fset.contains(p, tol=1e-10) for p in fset.sample(rng, 50))


def test_bad_set_parameters():
    with pytest.raises(ValueError):
        FeasibleSet.box(1.0, -1.0, 2)
    with pytest.raises(ValueError):
        FeasibleSet.ball(0.0, 2)
    with pytest.raises(ValueError):
        FeasibleSet("cube", 2)


def test_soft_threshold_is_l1_prox():
    assert_array_equal(soft_threshold(np.array([3.0, -0.5, 1.0, -2.0]), 1.0), [2.0, 0.0, 0.0, -1.0])
    h = l1_norm(0.5)
    assert_array_equal(h.prox(np.array([1.0, -0.2]), 2.0), [0.0, 0.0])
    assert h(np.array([1.0, -2.0])) == 1.5
    with pytest.raises(ValueError):
        l1_norm(-1.0)


def test_quadratic_penalty_prox_optimality(rng):
    B = rng.standard_normal((4, 3))
    e = rng.standard_normal(4)
    h = quadratic_penalty(B, e)
    v = rng.standard_normal(3)
    y = h.prox(v, 0.7)
    # gradient of h(y) + |y - v|^2 / (2t) vanishes
    assert_allclose(B.T @ (B @ y - e) + (y - v) / 0.7, 0.0, atol=1e-12)
    Q, q, c = h.quadratic
    assert_allclose(0.5 * y @ Q @ y + q @ y + c, h(y))


def _scalar_problem():
    return Problem(
        dims=(1,),
        smooth=lambda x: 0.5 * float((x[0][0] - 3.0) ** 2),
        smooth_grad=lambda x, i: x[0] - 3.0,
        nonsmooth=(l1_norm(1.0),),
    )


def test_eval_objective_adds_nonsmooth_terms():
    problem = _scalar_problem()
    assert eval_objective(problem, BlockVector((np.array([1.0]),))) == 3.0


def test_prox_residual_vanishes_at_minimizer():
    problem = _scalar_problem()
    assert prox_residual(problem, BlockVector((np.array([2.0]),))) == 0.0
    assert prox_residual(problem, BlockVector((np.array([0.0]),))) == pytest.approx(2.0)


def test_problem_validation():
    with pytest.raises(ValueError):
        Problem(dims=(2,))
    with pytest.raises(DimensionMismatchError):
        Problem(dims=(2, 1), sets=(FeasibleSet.nonneg(2),), smooth=lambda x: 0.0)
    with pytest.raises(DimensionMismatchError):
        Problem(dims=(2,), sets=(FeasibleSet.nonneg(3),), smooth=lambda x: 0.0)


def test_check_point_rejects_wrong_block_sizes():
    problem = _scalar_problem()
    with pytest.raises(DimensionMismatchError):
        eval_objective(problem, BlockVector((np.zeros(2),)))
    with pytest.raises(TypeError):
        eval_objective(problem, np.zeros(1))


def test_directional_derivative_on_nonregular_example():
    fx = build_pathology("ex2_l1_nonregular")
    d = np.array([4.0, -3.0]) / 5.0
    assert_allclose(directional_derivative(fx.problem, fx.start, d), -1.0, atol=1e-9)
    # both coordinate directions are ascent directions
    assert directional_derivative(fx.problem, fx.start, np.array([1.0, 0.0])) > 0
    assert directional_derivative(fx.problem, fx.start, np.array([0.0, -1.0])) > 0


def test_directional_derivative_leaving_the_set():
    fx = build_pathology("ex5_linear_bound")
    with pytest.raises(InfeasibleError):
        directional_derivative(fx.problem, fx.start, np.array([1.0, 0.0]))
    assert_allclose(directional_derivative(fx.problem, fx.start, np.array([-1.0, 0.0])), -4.0, atol=1e-9)


def test_build_pathology_names():
    for name in PATHOLOGY_NAMES:
        fx = build_pathology(name)
        assert fx.problem.is_feasible(fx.start)
    with pytest.raises(ValueError, match="valid names"):
        build_pathology("ex9")


def test_powell_fixture():
    fx = build_pathology("ex6_powell", epsilon=1e-2)
    assert fx.expected_behavior.kind == "cycle"
    assert fx.expected_behavior.period == 6
    assert_allclose(fx.start.flatten(), [-1.01, 1.005, -1.0025])
    assert build_pathology("ex6_powell", bound=2.0).problem.sets[0].is_bounded
    with pytest.raises(ValueError):
        build_pathology("ex6_powell", bound=1.0)
    with pytest.raises(ValueError):
        build_pathology("ex6_powell", epsilon=0.0)


def test_coupled_fixture_known_optimum():
    fx = build_pathology("ex4_coupling")
    assert fx.problem.known_optimum.value == 2.0
    assert fx.problem.coupling.residual_norm(fx.start) == 0.0
    assert eval_objective(fx.problem, fx.start) == 4.0


def test_unfold_fold_inverse(rng):
    X = rng.standard_normal((3, 4, 2))
    for mode in range(3):
        M = unfold(X, mode)
        assert M.shape == (X.shape[mode], X.size // X.shape[mode])
        assert_array_equal(fold(M, mode, X.shape), X)
    # mode-0 unfolding: column index j + 4 k
    assert_array_equal(unfold(X, 0)[:, 1 + 4 * 1], X[:, 1, 1])


def test_matrix_and_tensor_files(tmp_path, rng):
    A = rng.standard_normal((3, 2))
    write_matrix(tmp_path / "a.mtx", A)
    assert_array_equal(read_matrix(tmp_path / "a.mtx"), A)

    X = rng.standard_normal((2, 3, 4))
    write_tensor(tmp_path / "x.tns", X)
    assert (tmp_path / "x.tns").read_text().splitlines()[0] == "dims: 2 3 4"
    assert_array_equal(read_tensor(tmp_path / "x.tns"), X)


def test_tensor_header_must_parse(tmp_path):
    path = tmp_path / "bad.tns"
    path.write_text("shape 2 2 2\n")
    with pytest.raises(ValueError, match="dims"):
        read_tensor(path)
