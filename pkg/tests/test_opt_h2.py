import math

import numpy as np
import pytest

from conftest import random_stable
from phdae_mor.bench import random_fom_from_theta
from phdae_mor.core import PHDae, validate
from phdae_mor.param import Theta, assemble_rom, init_theta
from phdae_mor.spectral import StateSpace, error_system, h2_norm
from phdae_mor.opt_h2 import H2Problem, h2_error_sq, h2_value_and_grad, minimize_h2


def scalar_fom():
    return PHDae(np.eye(1), np.zeros((1, 1)), np.eye(1), np.eye(1))


def test_zero_rom_gives_fom_norm():
    prob = H2Problem.from_system(scalar_fom(), r=0)
    assert h2_error_sq(prob, prob.theta0) == pytest.approx(0.5, rel=1e-12)


def test_first_order_rom_example():
    prob = H2Problem.from_system(scalar_fom(), r=1)
    th = Theta.from_segments(1, 1, 0, W=[math.sqrt(2), 0.0, 0.0], G=[1.0],
                             frozen=prob.theta0.frozen)
    assert h2_error_sq(prob, th) == pytest.approx(1 / 12, rel=1e-10)


def test_non_hurwitz_rom_is_infinite():
    prob = H2Problem.from_system(scalar_fom(), r=1)
    th = Theta.from_segments(1, 1, 0, W=[0.0, 0.0, 0.0], G=[1.0])
    assert h2_value_and_grad(prob, th) == (math.inf, None)


def test_unstable_fom_rejected():
    with pytest.raises(ValueError):
        H2Problem(np.eye(1), np.eye(1), np.eye(1), init_theta(1, 1, 0), np.zeros((1, 1)),
                  np.zeros((1, 1)))


@pytest.mark.parametrize('seed', range(3))
def test_matches_error_system_norm(seed):
    fom = random_fom_from_theta(5, 2, 1, seed=seed)[0]
    prob = H2Problem.from_system(fom, r=3, seed=seed)
    rng = np.random.default_rng(seed)
    th = prob.theta0.with_free(prob.theta0.free + 0.1 * rng.standard_normal(prob.theta0.free.size))
    rom = assemble_rom(th)
    es = error_system(fom, rom.system)
    assert np.abs(es.D).max() < 1e-12
    assert h2_error_sq(prob, th) == pytest.approx(h2_norm((es.A, es.B, es.C)) ** 2, rel=1e-8)


@pytest.mark.parametrize('seed', range(3))
def test_gradient_matches_finite_differences(seed):
    fom = random_fom_from_theta(4, 2, 1, seed=seed + 10)[0]
    prob = H2Problem.from_system(fom, r=3, seed=seed)
    rng = np.random.default_rng(seed)
    x = prob.theta0.free + 0.2 * rng.standard_normal(prob.theta0.free.size)
    f, g = h2_value_and_grad(prob, prob.theta0.with_free(x))
    h = 1e-6
    fd = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fd[i] = (h2_error_sq(prob, prob.theta0.with_free(x + e))
                 - h2_error_sq(prob, prob.theta0.with_free(x - e))) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7 * max(1.0, f))


def test_directional_derivative():
    fom = random_fom_from_theta(6, 1, 0, seed=4)[0]
    prob = H2Problem.from_system(fom, r=4, seed=1)
    rng = np.random.default_rng(0)
    x = prob.theta0.free
    d = rng.standard_normal(x.size)
    f, g = h2_value_and_grad(prob, prob.theta0.with_free(x))
    h = 1e-6
    fd = (h2_error_sq(prob, prob.theta0.with_free(x + h * d))
          - h2_error_sq(prob, prob.theta0.with_free(x - h * d))) / (2 * h)
    assert g @ d == pytest.approx(fd, rel=1e-5)


def test_similarity_invariance():
    A, B, C, _ = random_stable(6, 2, 3, damping=(0.5, 2.0))
    th = init_theta(2, 2, 0, seed=0)
    Z = np.zeros((2, 2))
    p = H2Problem(A, B, C, th, Z, Z)
    T = np.random.default_rng(1).standard_normal((6, 6)) + 3 * np.eye(6)
    Ti = np.linalg.inv(T)
    q = H2Problem(T @ A @ Ti, T @ B, C @ Ti, th, Z, Z)
    assert h2_error_sq(p, th) == pytest.approx(h2_error_sq(q, th), rel=1e-9)


def test_minimize_monotone_valid_and_pinned():
    fom, _ = random_fom_from_theta(4, 2, 1, seed=5)
    prob = H2Problem.from_system(fom, r=3, seed=0, max_iter=150)
    seen = []

    def cb(k, th, f):
        rom = assemble_rom(th)
        seen.append(f)
        np.testing.assert_allclose(rom.S - rom.N, prob.P0, atol=1e-12)
        np.testing.assert_allclose(rom.L @ rom.L.T, prob.P1, atol=1e-12)
        assert validate(rom.system).passed

    res = minimize_h2(prob, callback=cb)
    objs = [row['objective'] for row in res.trace]
    assert all(b <= a for a, b in zip(objs, objs[1:]))
    assert res.all_valid
    assert res.h2_error < math.sqrt(objs[0])
    assert len(seen) == len(objs) - 1


def test_trace_csv(tmp_path):
    prob = H2Problem.from_system(scalar_fom(), r=1, max_iter=5)
    res = minimize_h2(prob)
    res.trace_csv(tmp_path / 't.csv')
    lines = (tmp_path / 't.csv').read_text().splitlines()
    assert lines[0] == 'iter,gamma,objective,grad_norm,certified_error'
    assert len(lines) == len(res.trace) + 1


def test_recovers_first_order_fom():
    prob = H2Problem.from_system(scalar_fom(), r=1, seed=0)
    res = minimize_h2(prob)
    assert res.h2_error < 1e-6
