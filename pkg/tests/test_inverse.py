import numpy as np
import pytest

from diffreg.inverse import (DEFORMATIONS, Model, NewtonConfig, ReducedSpace, evaluate_gradient,
                             evaluate_objective, hessian_matvec, newton_solve, pcg)
from diffreg.problems import RegistrationProblem, blob_image, make_synthetic_pair, smooth_velocity, swirl_velocity
from diffreg.spectral import Grid, band_limited_noise, divergence, gradient, inner, norm
from diffreg.transport import SchemeConfig

SCHEMES = [SchemeConfig("rk2", 0.2), SchemeConfig("rk2a", 0.2), SchemeConfig("sl", 1.0)]


@pytest.fixture(scope="module")
def pair():
    g = Grid((32, 32))
    return make_synthetic_pair(smooth_velocity(g, "A"), blob_image(g, 8, seed=1))


def model_for(deformation, norm_name="h2", beta=1e-2):
    return Model(norm_name, beta, deformation, 1e-2 if deformation == "nearincompressible" else None)


def test_model_validation():
    with pytest.raises(ValueError):
        Model("l2")
    with pytest.raises(ValueError):
        Model(beta_v=0)
    with pytest.raises(ValueError):
        Model(deformation="rigid")
    with pytest.raises(ValueError):
        Model(deformation="nearincompressible")


def test_objective_at_zero(pair):
    ev = evaluate_objective(pair, Model(), np.zeros((2,) + pair.grid.n))
    assert np.isclose(ev.total, 0.5 * norm(pair.m_t - pair.m_r) ** 2)
    assert ev.regularization == 0 and ev.penalty == 0


def test_identical_images_have_zero_gradient():
    g = Grid((16, 16))
    m = blob_image(g, 3)
    prob = RegistrationProblem(m, m.copy())
    gr = evaluate_gradient(prob, Model(), np.zeros((2,) + g.n))
    assert gr.objective < 1e-25 and np.abs(gr.g).max() < 1e-12
    v, rep = newton_solve(prob, Model())
    assert rep.status == "converged" and rep.outer_iterations == 0
    assert np.all(v == 0)


@pytest.mark.parametrize("scheme", SCHEMES, ids=lambda s: s.scheme)
@pytest.mark.parametrize("deformation", DEFORMATIONS)
def test_data_gradient_matches_finite_differences(pair, scheme, deformation):
    # tiny beta so the check is not dominated by the exact quadratic terms
    sp = ReducedSpace(pair, Model("h1", 1e-8, deformation, 1e-8 if deformation == "nearincompressible" else None), scheme)
    rng = np.random.default_rng(0)
    base = swirl_velocity(pair.grid) if deformation == "incompressible" else pair.v_true
    v = sp.project(0.7 * base + 0.05 * band_limited_noise(pair.grid, rng, 2))
    d = sp.project(band_limited_noise(pair.grid, rng, 2))
    gr = sp.gradient(v)
    nt = gr.evaluation.transport.nt
    eps = 1e-4
    fd = (sp.evaluate(v + eps * d, nt).total - sp.evaluate(v - eps * d, nt).total) / (2 * eps)
    assert abs(fd - inner(gr.g, d)) <= 1e-6 * abs(fd)


def test_penalty_gradient_matches_finite_differences(pair):
    sp = ReducedSpace(pair, Model("h2", 1e-2, "nearincompressible", 0.3))
    rng = np.random.default_rng(1)
    v = band_limited_noise(pair.grid, rng, 2)
    d = band_limited_noise(pair.grid, rng, 2)

    def pen(u):
        w = divergence(u)
        return 0.15 * (norm(gradient(w)) ** 2 + norm(w) ** 2)

    fd = (pen(v + 1e-4 * d) - pen(v - 1e-4 * d)) / 2e-4
    assert np.isclose(fd, inner(0.3 * sp._penalty_op(v), d), rtol=1e-8)


@pytest.mark.parametrize("scheme", SCHEMES, ids=lambda s: s.scheme)
def test_continuous_gradient_approximates_discrete(pair, scheme):
    v = 0.5 * pair.v_true
    gd = evaluate_gradient(pair, Model(), v, scheme).g
    gc = evaluate_gradient(pair, Model(), v, scheme, derivatives="continuous").g
    assert norm(gc - gd) <= 0.05 * norm(gd)


@pytest.mark.parametrize("scheme", SCHEMES, ids=lambda s: s.scheme)
def test_gauss_newton_hessian_is_symmetric_positive(pair, scheme):
    sp = ReducedSpace(pair, Model(), scheme)
    H = sp.hessian(sp.gradient(0.5 * pair.v_true))
    rng = np.random.default_rng(2)
    u, w = (band_limited_noise(pair.grid, rng, 2) for _ in range(2))
    assert abs(inner(H(u), w) - inner(u, H(w))) <= 1e-10 * abs(inner(H(u), w))
    assert inner(H(u), u) > 0
    assert np.allclose(H(2 * u - 3 * w), 2 * H(u) - 3 * H(w), atol=1e-12 * np.abs(H(u)).max())


@pytest.mark.parametrize("mode", ["GN", "FN"])
def test_hessian_is_gradient_derivative_at_a_perfect_match(mode):
    # with matching images and v = 0 the adjoint vanishes, so both Hessians are exact
    g = Grid((32, 32))
    m = blob_image(g, 5)
    prob = RegistrationProblem(m, m.copy())
    sp = ReducedSpace(prob, Model("h1", 1e-3), SchemeConfig("rk2a", 0.2, nt=8))
    d = band_limited_noise(g, np.random.default_rng(3), 2)
    zero = sp.zeros()
    Hd = sp.hessian(sp.gradient(zero), mode)(d)
    eps = 1e-5
    fd = (sp.gradient(eps * d, nt=8).g - sp.gradient(-eps * d, nt=8).g) / (2 * eps)
    assert norm(fd - Hd) <= 1e-6 * norm(Hd)


def test_full_newton_differs_away_from_match(pair):
    v = 0.3 * pair.v_true
    d = band_limited_noise(pair.grid, np.random.default_rng(4), 2)
    gn = hessian_matvec(pair, Model(), v, d)
    fn = hessian_matvec(pair, Model(), v, d, mode="FN")
    assert norm(fn - gn) > 1e-6 * norm(gn)
    with pytest.raises(ValueError):
        hessian_matvec(pair, Model(), v, d, mode="BFGS")


def test_incompressible_outputs_are_divergence_free(pair):
    sp = ReducedSpace(pair, Model("h1", 1e-2, "incompressible"))
    gr = sp.gradient(swirl_velocity(pair.grid))
    d = band_limited_noise(pair.grid, np.random.default_rng(5), 2)
    for field in (gr.g, sp.hessian(gr)(sp.project(d))):
        assert np.abs(divergence(field)).max() <= 1e-10 * np.abs(field).max()


def test_separate_hessian_scheme(pair):
    sp = ReducedSpace(pair, Model(), SchemeConfig("rk2a", 0.2), hessian_scheme=SchemeConfig("sl", 5.0))
    gr = sp.gradient(0.5 * pair.v_true)
    H = sp.hessian(gr)
    assert H.tr.cfg.scheme == "sl"
    d = band_limited_noise(pair.grid, np.random.default_rng(6), 2)
    assert inner(H(d), d) > 0


def dense_spd(n, cond, seed):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * np.geomspace(1, cond, n)) @ q.T


def test_pcg_matches_dense_solve():
    A = dense_spd(40, 1e3, 0)
    b = np.random.default_rng(1).standard_normal(40)
    res = pcg(lambda x: A @ x, b, tol=1e-12)
    assert res.converged
    assert np.allclose(res.x, np.linalg.solve(A, b), rtol=1e-8)
    M = np.diag(1 / np.diag(A))
    res_p = pcg(lambda x: A @ x, b, lambda r: M @ r, tol=1e-12)
    assert np.allclose(res_p.x, res.x, rtol=1e-8)
    assert res_p.history[0] == 1.0 and res_p.rel_residual <= 1e-12


def test_pcg_stops_on_negative_curvature():
    A = np.diag([1.0, -1.0, 2.0])
    res = pcg(lambda x: A @ x, np.ones(3), tol=1e-12)
    assert res.negative_curvature and not res.converged


def test_pcg_zero_rhs_and_cap():
    res = pcg(lambda x: x, np.zeros(5))
    assert res.converged and res.iterations == 0 and np.all(res.x == 0)
    A = dense_spd(30, 1e6, 2)
    res = pcg(lambda x: A @ x, np.ones(30), tol=1e-14, maxiter=3)
    assert res.iterations == 3 and not res.converged


def test_newton_monotone_and_converged(pair):
    v, rep = newton_solve(pair, Model("h2", 1e-2), SchemeConfig("sl", 2.0))
    J = [r["objective"] for r in rep.iterations]
    assert rep.converged and rep.grad_rel <= 1e-2
    assert all(a > b for a, b in zip(J, J[1:]))
    assert rep.rel_residual < 1 and rep.jac_min > 0
    assert rep.counts["interp"] > 0 and rep.krylov_iterations > 0
    summary = rep.summary()
    assert summary["outer_iterations"] == rep.outer_iterations


def test_newton_iteration_limit(pair):
    _, rep = newton_solve(pair, Model("h2", 1e-3), SchemeConfig("sl", 2.0),
                          NewtonConfig(max_iter=1, tol_rel=1e-12))
    assert rep.status == "maxit" and rep.outer_iterations == 1


def test_newton_line_search_failure(pair):
    _, rep = newton_solve(pair, Model("h2", 1e-2), SchemeConfig("sl", 2.0),
                          NewtonConfig(c1=0.99, max_backtracks=0))
    assert rep.status == "linesearch"
