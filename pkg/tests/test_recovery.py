import numpy as np
import pytest
import scipy.sparse as sps

from cosparse.geometry import build_projection_2d, project
from cosparse.lattice import Image, Lattice, build_gradient, cosupport_of, tv
from cosparse.lpsolve import SolverOptions
from cosparse.phantom import PhantomSpec, generate
from cosparse.recovery import (
    CertificateVerdict, RecoveryError, RecoveryMode, RecoveryProblem, assemble_l1_lp, assemble_tv_lp,
    assemble_tv_lp_known, certificate_for, index_sets, recover, uniqueness_certificate,
)


def constant_image(d, value=0.7):
    lattice = Lattice.cube(d, 2)
    return Image(lattice, np.full(lattice.n, value))


def bump_image():
    """3 x 3 image with a brighter center pixel."""
    values = np.ones(9)
    values[4] = 2.0
    return Image(Lattice.cube(3, 2), values)


def test_tv_lp_layout(square_image):
    A = build_projection_2d(8, 3)
    B = build_gradient(square_image.lattice)
    lp = assemble_tv_lp(A, B, project(A, square_image.values))
    n, p, m = 64, B.shape[0], A.shape[0]
    assert lp.shape == (p + m, n + 2 * p)
    assert np.all(lp.c[:n] == 0) and np.all(lp.c[n:] == 1)
    v = B @ square_image.values
    w = np.concatenate([square_image.values, np.maximum(v, 0), np.maximum(-v, 0)])
    assert np.allclose(lp.M @ w, lp.q)
    assert lp.c @ w == pytest.approx(tv(square_image))


def test_known_lp_layout(square_image):
    A = build_projection_2d(8, 3)
    B = build_gradient(square_image.lattice)
    b = project(A, square_image.values)
    cosupport = cosupport_of(square_image)
    lp = assemble_tv_lp_known(A, B, b, cosupport)
    k = B.shape[0] - cosupport.ell
    assert lp.shape == (B.shape[0] + A.shape[0], 64 + 2 * k)
    assert assemble_tv_lp_known(A, B, b, []).shape == assemble_tv_lp(A, B, b).shape
    with pytest.raises(RecoveryError):
        assemble_tv_lp_known(A, B, b, [B.shape[0]])


def test_l1_lp_layout():
    A = build_projection_2d(6, 3)
    b = np.ones(A.shape[0])
    assert assemble_l1_lp(A, b).shape == A.shape
    assert assemble_l1_lp(A, b, nonneg=False).shape == (A.shape[0], 2 * A.shape[1])


def test_problem_validation(square_image):
    A = build_projection_2d(8, 3)
    B = build_gradient(square_image.lattice)
    b = project(A, square_image.values)
    with pytest.raises(RecoveryError):
        RecoveryProblem(A, b + 1.0, B, ground_truth=square_image)
    with pytest.raises(RecoveryError):
        RecoveryProblem(A, b, B, mode=RecoveryMode.TV_KNOWN)
    with pytest.raises(RecoveryError):
        RecoveryProblem(A, b[:-1], B)
    with pytest.raises(RecoveryError):
        RecoveryProblem(A, b, build_gradient(Lattice.cube(7, 2)))


@pytest.mark.parametrize('mode', [RecoveryMode.TV_UNKNOWN, RecoveryMode.TV_KNOWN])
def test_constant_image_is_recovered(mode):
    image = constant_image(6)
    result = recover(RecoveryProblem.from_image(build_projection_2d(6, 3), image, mode))
    assert result.solver.optimal
    assert result.success
    assert result.l2_error <= 1e-6 * 36
    assert result.eps == 1e-6
    assert result.tv_truth == 0
    assert result.to_dict()['solver']['status'] == 'Optimal'


def test_known_cosupport_recovers_block(square_image):
    A = build_projection_2d(8, 3)
    result = recover(RecoveryProblem.from_image(A, square_image, RecoveryMode.TV_KNOWN))
    assert result.success
    assert result.tv_result == pytest.approx(tv(square_image), abs=1e-5)


def test_unknown_cosupport_never_beats_truth(square_image):
    A = build_projection_2d(8, 3)
    problem = RecoveryProblem.from_image(A, square_image)
    result = recover(problem)
    assert result.solver.optimal
    assert result.tv_result <= result.tv_truth + 1e-6
    assert result.solver.objective == pytest.approx(result.tv_result, abs=1e-6)
    assert np.allclose(A @ result.u, problem.b, atol=1e-6)
    assert result.u.min() >= -1e-9


def test_nonnegative_l1_objective_is_total_mass(square_image):
    A = build_projection_2d(8, 4)
    for mode in (RecoveryMode.L1_NONNEG, RecoveryMode.L1):
        result = recover(RecoveryProblem.from_image(A, square_image, mode))
        assert result.solver.optimal
        assert result.solver.objective == pytest.approx(square_image.values.sum(), rel=1e-7)


def test_direct_measurements_always_succeed(square_image):
    result = recover(RecoveryProblem.from_image(sps.identity(64, format='csr'), square_image))
    assert result.success


def test_index_sets_of_constant_image():
    image = constant_image(5)
    p = image.lattice.p
    problem = RecoveryProblem.from_image(build_projection_2d(5, 3), image)
    result = recover(problem, opts=SolverOptions(crossover=True))
    J, J_bar = index_sets(result.solver, image.lattice.n)
    assert J_bar.size == p + p
    assert np.array_equal(J, J_bar + image.lattice.n)


def test_index_sets_of_block_image():
    grid = np.full((8, 8), 0.5)
    grid[3:5, 3:5] = 1.0
    image = Image(Lattice((8, 8)), grid.ravel())
    p = image.lattice.p
    problem = RecoveryProblem.from_image(build_projection_2d(8, 8), image)
    result = recover(problem, opts=SolverOptions(crossover=True))
    assert result.success
    _, J_bar = index_sets(result.solver, image.lattice.n)
    assert image.cosparsity() == p - 8
    assert J_bar.size == p + image.cosparsity()
    # both halves vanish on the cosupport, one half elsewhere
    v = result.solver.w[image.lattice.n:]
    assert np.all(np.abs(v[:p] * v[p:]) == 0.0)


def test_certificate_trivial_nullspace(square_image):
    result = certificate_for(sps.identity(64, format='csr'), square_image)
    assert result.verdict == CertificateVerdict.NOT_VIOLATED
    assert result.margin == np.inf
    assert any('vacuously' in note for note in result.notes)


def test_certificate_holds_for_constant_image():
    image = constant_image(4)
    result = certificate_for(build_projection_2d(4, 3), image)
    assert result.verdict == CertificateVerdict.NOT_VIOLATED
    assert result.margin > 1e-6
    assert not result.degenerate


def test_certificate_violated_gives_descent_direction():
    image = bump_image()
    A = np.ones((1, 9))
    result = certificate_for(A, image)
    assert result.violated
    assert result.minimum < 0
    witness = result.witness
    assert np.allclose(A @ witness, 0, atol=1e-9)
    step = 1e-3 / np.abs(witness).max()
    moved = Image(image.lattice, image.values + step * witness)
    assert tv(moved) < tv(image)


def test_certificate_agrees_with_failed_recovery():
    image = bump_image()
    A = sps.csr_matrix(np.ones((1, 9)))
    result = recover(RecoveryProblem.from_image(A, image))
    assert result.success is False
    assert result.tv_result < result.tv_truth


def test_certificate_notes_zero_entries():
    values = np.zeros(16)
    values[5] = 1.0
    image = Image(Lattice.cube(4, 2), values)
    result = certificate_for(build_projection_2d(4, 3), image)
    assert any('zero entries' in note for note in result.notes)


def test_certificate_rejects_bad_signs():
    lattice = Lattice.cube(3, 2)
    B = build_gradient(lattice)
    with pytest.raises(RecoveryError):
        uniqueness_certificate(np.ones((1, 9)), B, [0, 1], np.ones(3))
    with pytest.raises(RecoveryError):
        uniqueness_certificate(np.ones((1, 9)), B, list(range(10)), np.array([1.0, 0.0]))


@pytest.mark.slow
def test_tv_beats_l1_on_binary_phantom():
    A = build_projection_2d(64, 6)
    tv_successes, l1_successes = 0, 0
    for seed in range(10):
        image = generate(PhantomSpec(dims=(64, 64), target_rho=0.04, intensity_levels=(1.0,), seed=seed))
        tv_successes += bool(recover(RecoveryProblem.from_image(A, image)).success)
        l1_successes += bool(recover(RecoveryProblem.from_image(A, image, RecoveryMode.L1_NONNEG)).success)
    assert tv_successes >= 9
    assert l1_successes <= 2


@pytest.mark.slow
def test_certificate_consistent_with_recovery():
    A = build_projection_2d(8, 3)
    agree, decided = 0, 0
    for seed in range(100):
        rho = 0.05 + 0.01 * (seed % 20)
        image = generate(PhantomSpec(dims=(8, 8), target_rho=rho, background=0.1, tolerance=0.2, seed=seed))
        certificate = certificate_for(A, image)
        if certificate.degenerate:
            continue
        decided += 1
        success = recover(RecoveryProblem.from_image(A, image)).success
        agree += success == (not certificate.violated)
    assert agree >= 0.95 * decided
