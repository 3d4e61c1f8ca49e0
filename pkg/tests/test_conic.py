import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airsea.conic import (ConicProgram, SurrogateInfeasible, check_linearization, cone_violation,
                          dump_program, extract_rank1, hermitian_basis, real_embedding, sca_loop, solve_conic)
from airsea.energy import xi_from_speed, xi_surrogate
from airsea.scenario import SystemParams
from airsea.stage import _rate_function

import oracles


def test_scalar_lp():
    prog = ConicProgram(np.array([1.0]))
    prog.add("l", [[-1.0]], [-3.0])
    sol = solve_conic(prog)
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(3.0, abs=1e-7)


def test_diagonal_sdp():
    # x = (X11, X21, X22); PSD block holds vec(X) column-major, s = h - G x
    prog = ConicProgram(np.array([1.0, 0.0, 1.0]))
    prog.add("l", [[-1.0, 0.0, 0.0]], [-2.0])
    prog.add("s", -np.array([[1, 0, 0], [0, 1, 0], [0, 1, 0], [0, 0, 1]], float), np.zeros(4))
    sol = solve_conic(prog)
    assert sol.objective == pytest.approx(2.0, abs=1e-7)
    X = np.array([[sol.x[0], sol.x[1]], [sol.x[1], sol.x[2]]])
    lam = np.linalg.eigvalsh(X)
    assert lam[0] == pytest.approx(0.0, abs=1e-6)
    assert sol.violation <= 1e-6


def _ball_program(c, center, radius):
    n = len(c)
    prog = ConicProgram(np.asarray(c, float))
    G = np.vstack([np.zeros(n), -np.eye(n)])
    prog.add("q", G, np.r_[radius, -center])
    return prog


@pytest.mark.parametrize("seed", range(5))
def test_random_socp_matches_subgradient_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 21))
    c, center, radius = rng.normal(size=n), rng.normal(size=n), float(rng.uniform(0.5, 2.0))
    sol = solve_conic(_ball_program(c, center, radius))
    ref, _ = oracles.ball_socp_optimum(c, center, radius)
    assert sol.objective == pytest.approx(ref, abs=1e-5 * max(1.0, abs(ref)))
    assert sol.violation <= 1e-6


def test_infeasible_reported():
    prog = ConicProgram(np.array([1.0]))
    prog.add("l", [[1.0], [-1.0]], [0.0, -1.0])  # x <= 0 and x >= 1
    assert solve_conic(prog).status == "infeasible"


def test_program_checks():
    prog = ConicProgram(np.array([1.0, 2.0]))
    prog.add("l", [[1.0]], [0.0])
    with pytest.raises(ValueError):
        solve_conic(prog)
    bad = ConicProgram(np.array([1.0]))
    bad.add("s", np.zeros((3, 1)), np.zeros(3))
    with pytest.raises(ValueError):
        bad.check()


def test_cone_violation_and_dump():
    prog = _ball_program(np.array([1.0, 0.0]), np.zeros(2), 1.0)
    assert cone_violation(prog, np.array([0.5, 0.0])) == 0.0
    assert cone_violation(prog, np.array([2.0, 0.0])) == pytest.approx(1.0)
    text = dump_program(prog)
    assert text.startswith("variables 2") and "block 0 q rows 3" in text


def test_hermitian_helpers(rng):
    basis = hermitian_basis(3)
    assert basis.shape == (9, 3, 3)
    assert np.linalg.matrix_rank(basis.reshape(9, 9)) == 9
    w = rng.normal(size=3) + 1j * rng.normal(size=3)
    emb = real_embedding(np.outer(w, w.conj()))
    assert np.linalg.eigvalsh(emb)[0] > -1e-12


def test_rank1_exact(rng):
    w = rng.normal(size=4) + 1j * rng.normal(size=4)
    r = extract_rank1(np.outer(w, w.conj()))
    assert r.residual < 1e-12 and not r.randomized
    phase = np.vdot(r.vector, w) / abs(np.vdot(r.vector, w))
    np.testing.assert_allclose(r.vector * phase, w, atol=1e-10)


def test_rank1_identity_randomizes():
    r = extract_rank1(np.eye(2))
    assert r.residual == pytest.approx(0.5)
    assert r.randomized


def test_rank1_perturbed(rng):
    w = rng.normal(size=4) + 1j * rng.normal(size=4)
    noise = rng.normal(size=(4, 4)) * 1e-8
    r = extract_rank1(np.outer(w, w.conj()) + noise @ noise.T)
    assert r.residual < 1e-6


def test_rank1_rejects_indefinite():
    with pytest.raises(ValueError):
        extract_rank1(np.diag([1.0, -1.0]))


def test_rank1_randomization_respects_rescale():
    # keep only candidates whose first entry dominates; score by norm
    def rescale(v):
        return v / abs(v[0]) if abs(v[0]) > 1e-9 else None

    r = extract_rank1(np.eye(3), rescale=rescale, rng=np.random.default_rng(1))
    assert abs(r.vector[0]) == pytest.approx(1.0)


def test_sca_convex_problem_one_step():
    # surrogate equals the problem: one solve reaches the optimum, the next confirms it
    state = sca_loop(lambda x: 2.0, 10.0, lambda x: (x - 2.0) ** 2)
    assert state.converged
    assert state.history[1] == state.history[-1] == 0.0
    assert state.iterate == 2.0


def test_sca_majorize_minimize_monotone():
    # minimize f(x) = x^4 - 3x^2 + x using quadratic majorizers
    f = lambda x: x**4 - 3 * x**2 + x

    def step(xk):
        # curvature bound on [-3, 3]
        L = 12 * 9.0
        return xk - (4 * xk**3 - 6 * xk + 1) / L

    state = sca_loop(step, 2.5, f, eps=1e-10, max_iter=500, relative=False)
    h = np.array(state.history)
    assert np.all(np.diff(h) <= 1e-12)
    assert state.converged


def test_sca_blend_keeps_history_non_increasing():
    # a surrogate that overshoots; the blend search must rescue descent
    f = lambda x: abs(x - 1.0)
    state = sca_loop(lambda x: 2.0 - x + 0.9 * (x - 1.0), 5.0, f, eps=1e-9, max_iter=50,
                     blend=lambda a, b, s: a + s * (b - a))
    assert np.all(np.diff(state.history) <= 0)


def test_sca_first_surrogate_infeasible_raises():
    def bad(x):
        raise SurrogateInfeasible("nope")

    with pytest.raises(SurrogateInfeasible):
        sca_loop(bad, 0.0, lambda x: 0.0)


def test_check_linearization_affine():
    a = np.array([1.0, -2.0, 0.5])
    assert check_linearization(lambda x: a @ x + 3, lambda x: a @ x + 3, np.ones(3), 0.1) == 0.0


def test_rate_linearization_second_order():
    sp = SystemParams()
    rng = np.random.default_rng(7)
    q3 = np.array([20.0, -10.0, 100.0])
    w = rng.normal(size=4) + 1j * rng.normal(size=4)
    V = [rng.normal(size=4) * 0.2]
    b0 = np.array([60.0, 35.0])
    f = lambda b: _rate_function(q3, b, w, V, 3.0, sp)[0]
    f0, g0 = _rate_function(q3, b0, w, V, 3.0, sp)
    surrogate = lambda b: f0 + g0 @ (b - b0)
    ratios = [check_linearization(f, surrogate, b0, r, rng=np.random.default_rng(0)) for r in (1.0, 0.5, 0.25)]
    assert ratios[2] < 2 * ratios[0]
    assert ratios[1] / ratios[2] == pytest.approx(1.0, rel=0.2)
    # gradient agrees with finite differences
    eps = 1e-4
    fd = np.array([(f(b0 + eps * e) - f(b0 - eps * e)) / (2 * eps) for e in np.eye(2)])
    np.testing.assert_allclose(g0, fd, rtol=1e-5)


def test_xi_surrogate_tangency_random_points():
    rng = np.random.default_rng(3)
    v0 = SystemParams().mean_induced_speed
    worst = 0.0
    for vk in rng.uniform(0, 25, 100):
        xik = float(xi_from_speed(vk, v0))
        worst = max(worst, abs(xi_surrogate(xik, vk, xik, vk, v0) - 1 / xik**2))
    assert worst < 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_rank1_residual_bounds(m, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    r = extract_rank1(A @ A.conj().T)
    assert 0.0 <= r.residual <= 1 - 1 / m + 1e-12
