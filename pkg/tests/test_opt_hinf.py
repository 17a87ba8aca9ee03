import math

import numpy as np
import pytest

from phdae_mor.bench import LadderSpec, random_fom_from_theta, rcl_ladder
from phdae_mor.core import PHDae
from phdae_mor.param import Theta, assemble_rom
from phdae_mor.spectral import ImproperError, state_space
from phdae_mor.opt_hinf import (FomSampler, HinfProblem, adapt_grid, baseline_theta,
                                certified_error, hinf_objective, hinf_value_and_grad,
                                initial_grid, minimize_hinf)


def scalar_fom():
    return PHDae(np.eye(1), np.zeros((1, 1)), np.eye(1), np.eye(1))


def problem_at(sys, theta, omega, **kw):
    return HinfProblem(FomSampler(sys), state_space(sys, allow_improper=True), theta,
                       np.asarray(omega, dtype=float), **kw)


def test_objective_examples():
    zero = Theta.from_segments(0, 1, 0, W=[0.0])
    prob = problem_at(scalar_fom(), zero, [0.0])
    assert hinf_objective(prob, zero, 2.0) == 0.0
    assert hinf_objective(prob, zero, 0.5) == pytest.approx(0.25)
    exact = Theta.from_segments(1, 1, 0, W=[1.0, 0.0, 0.0], G=[1.0])
    assert hinf_objective(prob, exact, 0.0, omega=[0.0, 1.0, 10.0]) == pytest.approx(0, abs=1e-28)


def test_sampler_caches():
    calls = []
    sampler = FomSampler(lambda s: (calls.append(s), np.eye(1) / (s + 1))[1])
    sampler([1.0, 2.0])
    sampler([2.0, 3.0])
    assert len(calls) == 3 and len(sampler) == 3


def test_problem_validation():
    th = Theta.from_segments(0, 1, 0, W=[0.0])
    with pytest.raises(ValueError):
        problem_at(scalar_fom(), th, [])
    with pytest.raises(ValueError):
        problem_at(scalar_fom(), th, [1.0], beta=1.0)


@pytest.mark.parametrize('seed', range(3))
def test_gradient_matches_finite_differences(seed):
    fom = random_fom_from_theta(5, 2, 1, seed=seed)[0]
    prob = HinfProblem.from_system(fom, r=3, seed=seed)
    rng = np.random.default_rng(seed)
    x = prob.theta0.free + 0.1 * rng.standard_normal(prob.theta0.free.size)
    th = prob.theta0.with_free(x)
    gamma = 0.5 * math.sqrt(hinf_objective(prob, th, 0.0) / prob.omega.size)
    f, g = hinf_value_and_grad(prob, th, gamma)
    assert f > 0
    h = 1e-6
    fd = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fd[i] = (hinf_objective(prob, prob.theta0.with_free(x + e), gamma)
                 - hinf_objective(prob, prob.theta0.with_free(x - e), gamma)) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-6 * max(1.0, f))


def test_initial_grid_contains_peaks():
    sys = PHDae(np.eye(2), np.array([[0.0, 1.0], [-1.0, 0.0]]), np.diag([0.0, 0.02]),
                np.array([[0.0], [1.0]]))
    w = initial_grid(FomSampler(sys))
    assert np.all(np.diff(w) > 0)
    assert np.min(np.abs(w - 1.0)) < 0.02


def test_adapt_grid_behaviour():
    fom = random_fom_from_theta(4, 1, 0, seed=3)[0]
    prob = HinfProblem.from_system(fom, r=1, seed=0)
    th = prob.theta0
    cert, w_peak = certified_error(prob, th)
    # already below gamma: unchanged
    same = adapt_grid(prob.omega, th, 2 * cert, prob)
    np.testing.assert_array_equal(same, prob.omega)
    # coarse grid hides the peak: the certified peak gets added
    coarse = np.array([1e-3, 1e4])
    new = adapt_grid(coarse, th, 0.5 * cert, prob)
    assert 0 < new.size - coarse.size <= 8
    assert np.min(np.abs(new - w_peak)) <= 1e-12 * max(w_peak, 1)
    assert np.unique(new).size == new.size
    again = adapt_grid(new, th, 0.5 * cert, prob)
    assert np.unique(again).size == again.size


def test_certify_refuses_without_pinning():
    fom = rcl_ladder(LadderSpec.random(2, seed=0))
    prob = HinfProblem.from_system(fom, r=2, seed=0, pin=False)
    with pytest.raises(ImproperError):
        certified_error(prob, prob.theta0)
    res = minimize_hinf(HinfProblem.from_system(fom, r=2, seed=0, pin=False, max_inner=20))
    assert res.status == 'uncertified' and math.isinf(res.certified)


def test_baseline_matches_polynomial_part():
    fom = rcl_ladder(LadderSpec.random(3, seed=1))
    ss, P1 = state_space(fom, allow_improper=True)
    rom = assemble_rom(baseline_theta(fom))
    np.testing.assert_allclose(rom.S - rom.N, ss.D, atol=1e-12)
    np.testing.assert_allclose(rom.L @ rom.L.T, P1, rtol=1e-12)


def test_minimize_certified_not_above_initial():
    fom = random_fom_from_theta(4, 1, 1, seed=2)[0]
    prob = HinfProblem.from_system(fom, r=2, seed=0, max_stages=8, max_inner=60)
    rows = []
    res = minimize_hinf(prob, callback=lambda row, th: rows.append(row))
    assert res.certified <= res.initial_certified
    best = [row['gamma'] for row in res.trace]
    assert all(b <= a for a, b in zip(best, best[1:]))
    assert res.all_valid
    cert, _ = certified_error(prob, res.theta)
    assert cert == pytest.approx(res.certified, rel=1e-9)
    rom = assemble_rom(res.theta)
    np.testing.assert_allclose(rom.L @ rom.L.T, prob.fom_ss[1], rtol=1e-10)
    assert len(rows) == len(res.trace) - 1
