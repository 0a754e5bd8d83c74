import numpy as np
import pytest

import logics.inner_logic as inner_logic
from logics.channel_logic import Moments, moments_from_whitened, stream_layout
from logics.inner_logic import (_unit_norm_minimizer, dual_downlink_powers, initial_precoders,
                                mac_to_bc, solve_power_allocation, stationary_precoders,
                                update_precoders_per_sample, update_receivers)
from logics.outer_logic import compute_jacobian
from logics.mse_logic import bc_mmse_receiver, bc_mse, mac_mmse
from tests.helpers import make_csi, make_inner, random_complex, random_pd, scalar_csi
from utils.errors import ContractViolationError, InfeasibleTargetsError, InnerConvergenceError

def scalar_moments(mu=1.0, theta=1.0):
    return Moments(mu=np.array([[mu]], dtype=complex), theta=np.array([[[theta]]], dtype=complex))

def weakly_coupled_moments(rng, streams, dim=3):
    """Nearly orthogonal effective channels, so moderate targets are always feasible."""
    mu = 2.0 * np.eye(streams, dim) + 0.2 * random_complex(rng, streams, dim)
    theta = np.stack([np.outer(m, m.conj()) + 0.05 * random_pd(rng, dim, floor=0.0) for m in mu])
    return Moments(mu=mu.astype(complex), theta=theta)

def fixed_point_powers(g, moments, eps, iterations=5000):
    """Standard interference-function iteration xi <- (1 - eps)(Theta xi + n) / c."""
    useful = moments.useful_gains(g)
    cross = moments.cross_gains(g)
    noise = np.sum(np.abs(g) ** 2, axis=1)
    xi = np.zeros(len(eps))
    for _ in range(iterations):
        xi = (1.0 - eps) * (cross @ xi + noise) / useful
    return xi

def solve_or_best(inner, rho, warm_start=None):
    try:
        return inner.solve_inner(rho, warm_start)
    except InnerConvergenceError as e:
        return e.state

# Receivers and power allocation

def test_receivers_without_power_are_the_means(rng):
    moments = weakly_coupled_moments(rng, 2)
    np.testing.assert_allclose(update_receivers(moments, np.zeros(2)), moments.mu)
    np.testing.assert_allclose(update_receivers(scalar_moments(), np.array([3.0])), [[0.25]])

def test_receivers_never_increase_the_mmse(rng):
    moments = weakly_coupled_moments(rng, 3)
    xi = np.array([1.0, 2.0, 0.5])
    best = update_receivers(moments, xi)
    for _ in range(50):
        other = random_complex(rng, 3, 3)
        assert np.all(mac_mmse(best, moments, xi) <= mac_mmse(other, moments, xi) + 1e-12)

def test_dummy_receiver_uses_virtual_unit_power(rng):
    moments = weakly_coupled_moments(rng, 2)
    active = np.array([True, False])
    g = update_receivers(moments, np.array([2.0, 0.0]), active)
    base = np.eye(3) + 2.0 * moments.theta[0]
    np.testing.assert_allclose(g[0], np.linalg.solve(base, moments.mu[0]))
    np.testing.assert_allclose(g[1], np.linalg.solve(base + moments.theta[1], moments.mu[1]))

def test_scalar_power_allocation():
    g = np.array([[1.0 + 0j]])
    np.testing.assert_allclose(solve_power_allocation(g, scalar_moments(), [0.25]), [3.0])
    np.testing.assert_allclose(solve_power_allocation(g, scalar_moments(), [1.0]), [0.0])
    rho = 2.5
    xi = solve_power_allocation(g, scalar_moments(), [2.0 ** -rho])
    np.testing.assert_allclose(xi, [2.0 ** rho - 1.0])

def test_allocation_meets_targets_with_equality(rng):
    moments = weakly_coupled_moments(rng, 3)
    g = update_receivers(moments, np.ones(3), normalize=True)
    eps = np.array([0.3, 0.5, 1.0])
    xi = solve_power_allocation(g, moments, eps)
    assert xi[2] == 0.0
    np.testing.assert_allclose(mac_mmse(g, moments, xi)[:2], eps[:2], atol=1e-12)

def test_allocation_matches_fixed_point_oracle():
    rng = np.random.default_rng(5)
    for _ in range(100):
        streams = int(rng.integers(1, 4))
        moments = weakly_coupled_moments(rng, streams)
        g = update_receivers(moments, np.ones(streams), normalize=True)
        eps = rng.uniform(0.3, 0.9, size=streams)
        xi = solve_power_allocation(g, moments, eps)
        np.testing.assert_allclose(xi, fixed_point_powers(g, moments, eps), rtol=1e-9)

def test_infeasible_allocation():
    g = np.array([[1.0 + 0j]])
    with pytest.raises(InfeasibleTargetsError):
        solve_power_allocation(g, scalar_moments(theta=2.0), [0.25])

@pytest.mark.parametrize("eps", [[0.0], [1.5], [-0.1]])
def test_targets_outside_unit_interval(eps):
    with pytest.raises(ContractViolationError):
        solve_power_allocation(np.array([[1.0 + 0j]]), scalar_moments(), eps)

# Duality powers

def test_single_stream_duality_powers():
    beta2 = dual_downlink_powers(np.array([[1.0 + 0j]]), scalar_moments(theta=2.0), np.array([3.0]))
    np.testing.assert_allclose(beta2, [3.0])

def test_duality_powers_conserve_total(rng):
    for _ in range(20):
        moments = weakly_coupled_moments(rng, 3)
        g = random_complex(rng, 3, 3)
        xi = rng.uniform(0.1, 5.0, size=3)
        beta2 = dual_downlink_powers(g, moments, xi)
        assert np.sum(beta2) == pytest.approx(np.sum(xi), rel=1e-10)
        assert np.all(beta2 > 0)

# Per-sample precoders

def test_precoders_without_power_are_matched_filters(rng):
    csi = make_csi(rng, 2, 3, 2)
    inner = make_inner(csi, (1, 2), samples=5)
    g = random_complex(rng, 3, 3)
    tau = update_precoders_per_sample(g, np.zeros(3), inner.whitened, inner.layout)
    np.testing.assert_allclose(np.linalg.norm(tau, axis=-1), 1.0)
    matched = np.einsum('mnr,n->mr', inner.whitened[1].conj(), g[2])
    matched /= np.linalg.norm(matched, axis=-1, keepdims=True)
    np.testing.assert_allclose(tau[2], matched, atol=1e-12)

def test_single_receive_antenna_precoder_is_real_for_real_data():
    csi = scalar_csi(mean=2.0)
    inner = make_inner(csi, (1,), samples=1)
    tau = update_precoders_per_sample(np.array([[0.7 + 0j]]), np.array([5.0]), inner.whitened, inner.layout)
    np.testing.assert_allclose(tau, [[[1.0]]])

def sphere_objective(a, c, x):
    return np.sum(a * np.abs(x) ** 2, axis=-1) - 2.0 * np.real(np.sum(c.conj() * x, axis=-1))

def test_unit_norm_minimizer_beats_sampled_directions(rng):
    cases = [(np.array([0.0, 1.0]), np.array([0.0, 0.1 + 0j])),
             (np.array([0.5, 0.5, 2.0]), np.array([0.0, 0.0, 0.0 + 0j]))]
    for _ in range(20):
        a = np.sort(rng.uniform(0.0, 3.0, size=3))
        cases.append((a, rng.uniform(0.01, 2.0) * random_complex(rng, 3)))
    for a, c in cases:
        x = _unit_norm_minimizer(a, c)
        assert np.linalg.norm(x) == pytest.approx(1.0, abs=1e-9)
        directions = random_complex(rng, 20000, len(a))
        directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
        assert sphere_objective(a, c, x) <= sphere_objective(a, c, directions).min() + 1e-9

def lagrangian(inner, lam, u, xi, tau):
    """sum_a lam_a (1 - 2 sqrt(xi_a) Re(u_a^H mu_a) + sum_b xi_b u_a^H Theta_b u_a + ||u_a||^2)."""
    moments = moments_from_whitened(inner.whitened, tau, inner.layout)
    mse = (1.0 - 2.0 * np.sqrt(xi) * np.real(np.einsum('an,an->a', u.conj(), moments.mu))
           + np.einsum('b,an,bnp,ap->a', xi, u.conj(), moments.theta, u).real
           + np.sum(np.abs(u) ** 2, axis=1))
    return float(lam @ mse)

def test_stationary_precoders_minimize_the_lagrangian(small_csi, rng):
    inner = make_inner(small_csi, (2, 2), samples=20, max_inner_iters=1)
    state = solve_or_best(inner, np.array([0.6, 0.4, 0.5, 0.5]))
    g, xi, moments = state.g_tilde, state.xi, state.moments
    lam = -np.linalg.solve(compute_jacobian(state).T, np.ones(4))
    assert np.all(lam > 0)
    y = moments.cross_gains(g) @ xi + 1.0
    u = (np.sqrt(xi) * np.einsum('an,an->a', g.conj(), moments.mu) / y)[:, None] * g

    beta2 = dual_downlink_powers(g, moments, xi)
    # multipliers scaled by the squared equalizers are the duality powers
    np.testing.assert_allclose(lam * np.sum(np.abs(u) ** 2, axis=1), beta2, rtol=1e-9)

    best = stationary_precoders(g, xi, beta2, moments, inner.whitened, inner.layout, state.active, state.tau)
    np.testing.assert_allclose(np.linalg.norm(best, axis=-1), 1.0)
    value = lagrangian(inner, lam, u, xi, best)
    assert value <= lagrangian(inner, lam, u, xi, state.tau) + 1e-12 * abs(value)
    for scale in (1e-3, 1e-1, 1.0):
        for _ in range(5):
            moved = best + scale * random_complex(rng, *best.shape)
            moved /= np.linalg.norm(moved, axis=-1, keepdims=True)
            assert value <= lagrangian(inner, lam, u, xi, moved) + 1e-12 * abs(value)

def test_initial_precoders_are_unit_norm(small_inner):
    tau, g = initial_precoders(small_inner.whitened, small_inner.layout)
    assert tau.shape == (4, 20, 3) and g.shape == (4, 4)
    np.testing.assert_allclose(np.linalg.norm(tau, axis=-1), 1.0)

# Inner solver

def test_scalar_perfect_csi_power():
    inner = make_inner(scalar_csi(), (1,), samples=1)
    state = inner.solve_inner(np.array([1.0]))
    assert state.total_power == pytest.approx(1.0, abs=1e-8)
    assert state.converged
    state = inner.solve_inner(np.array([3.0]))
    assert state.total_power == pytest.approx(7.0, abs=1e-8)

def test_zero_targets_need_no_power(small_inner):
    state = small_inner.solve_inner(np.zeros(4))
    assert state.total_power == 0.0
    assert not state.active.any()

def test_negative_targets_are_rejected(small_inner):
    with pytest.raises(ContractViolationError):
        small_inner.solve_inner(np.array([1.0, -0.1, 0.5, 0.5]))

def test_targets_are_met_with_equality(small_inner):
    rho = np.array([0.6, 0.4, 0.5, 0.5])
    state = solve_or_best(small_inner, rho)
    np.testing.assert_allclose(state.achieved_mmse, np.exp2(-rho), atol=1e-8)
    assert np.all(state.xi > 0)
    np.testing.assert_allclose(np.linalg.norm(state.g_tilde, axis=1), 1.0)

def test_inactive_stream_gets_no_power(small_inner):
    rho = np.array([1.0, 0.0, 0.5, 0.5])
    state = solve_or_best(small_inner, rho)
    assert state.xi[1] == 0.0 and not state.active[1]
    assert state.xi_virtual[1] == 1.0
    np.testing.assert_allclose(state.achieved_mmse[[0, 2, 3]], np.exp2(-rho[[0, 2, 3]]), atol=1e-8)

def test_more_cycles_never_cost_more_power(small_csi):
    rho = np.array([0.6, 0.4, 0.5, 0.5])
    powers = []
    for cycles in range(1, 6):
        inner = make_inner(small_csi, (2, 2), samples=20, max_inner_iters=cycles)
        powers.append(solve_or_best(inner, rho).total_power)
    assert all(later <= earlier + 1e-9 * max(1.0, earlier) for earlier, later in zip(powers, powers[1:]))

def test_warm_start_reaches_the_same_power(small_inner):
    rho = np.array([0.6, 0.4, 0.5, 0.5])
    cold = solve_or_best(small_inner, rho)
    warm = solve_or_best(small_inner, rho, warm_start=cold)
    assert warm.total_power <= cold.total_power + 1e-9 * max(1.0, cold.total_power)

def test_iteration_cap_carries_the_best_state(small_inner, monkeypatch):
    calls = {"count": 0}
    original = inner_logic.solve_power_allocation

    def shrinking(g_tilde, moments, eps_targets):
        calls["count"] += 1
        return original(g_tilde, moments, eps_targets) * (1.0 + 1.0 / calls["count"])

    monkeypatch.setattr(inner_logic, "solve_power_allocation", shrinking)
    small_inner.max_iters = 3
    with pytest.raises(InnerConvergenceError) as excinfo:
        small_inner.solve_inner(np.array([0.6, 0.4, 0.5, 0.5]))
    assert excinfo.value.state is not None
    assert excinfo.value.state.iterations == 3

def test_unreachable_targets_are_infeasible():
    csi = scalar_csi(error_variance=1.0)
    inner = make_inner(csi, (1,), samples=200)
    with pytest.raises(InfeasibleTargetsError) as excinfo:
        inner.solve_inner(np.array([4.0]))
    assert excinfo.value.report is not None
    assert not excinfo.value.report.feasible

# MAC to BC conversion

def test_single_stream_downlink_power():
    inner = make_inner(scalar_csi(), (1,), samples=1)
    state = inner.solve_inner(np.array([2.0]))
    solution = mac_to_bc(state, inner.whitened, np.array([2.0]))
    np.testing.assert_allclose(solution.beta2, state.xi)
    np.testing.assert_allclose(solution.stream_mse, [0.25], atol=1e-8)
    np.testing.assert_allclose(solution.rates, [2.0], atol=1e-8)

def test_duality_preserves_power_and_mse(rng):
    checked = 0
    for _ in range(200):
        if checked == 50:
            break
        csi = make_csi(rng, 2, 4, 3, error_variance=0.2, random_noise=True)
        inner = make_inner(csi, (2, 2), samples=12, seed=int(rng.integers(1000)))
        rho = rng.uniform(0.3, 0.8, size=4)
        try:
            state = inner.solve_inner(rho)
        except (InfeasibleTargetsError, InnerConvergenceError):
            continue
        solution = mac_to_bc(state, inner.whitened, rho)
        assert solution.power_residual < 1e-8
        np.testing.assert_allclose(solution.stream_mse, state.achieved_mmse, rtol=0, atol=1e-6)
        assert np.all(solution.stream_mmse <= solution.stream_mse + 1e-10)
        checked += 1
    assert checked == 50

def test_downlink_mmse_matches_original_domain(rng):
    csi = make_csi(rng, 2, 3, 2, error_variance=0.0, random_noise=True)
    inner = make_inner(csi, (1, 1), samples=1)
    rho = np.array([1.0, 1.5])
    solution = mac_to_bc(solve_or_best(inner, rho), inner.whitened, rho)
    channels = inner.sample_set.samples[:, 0]
    receivers = [bc_mmse_receiver(solution.precoders, k, channels[k], csi.c_eta[k]) for k in range(2)]
    direct = bc_mse(solution.precoders, receivers, channels, csi.c_eta)
    np.testing.assert_allclose(direct, solution.stream_mmse, rtol=1e-9)

def test_downlink_layout(small_inner):
    rho = np.array([0.6, 0.4, 0.5, 0.5])
    solution = mac_to_bc(solve_or_best(small_inner, rho), small_inner.whitened, rho)
    assert [p.shape for p in solution.precoders] == [(4, 2), (4, 2)]
    assert solution.total_power == pytest.approx(sum(np.linalg.norm(p) ** 2 for p in solution.precoders))
    assert stream_layout([2, 2]).total == len(solution.beta2)
