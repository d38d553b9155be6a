import numpy as np
import pytest

from chainlab.model import (ChainParams, ChainState, MotorCommand, PendulumState,
                            boundary_accels, build_laplacian, chain_derivative,
                            coupling_accels, drift, error_dynamics_jacobian,
                            separatrix_energy, total_energy)

P5 = ChainParams.platform(5)
P20 = ChainParams.platform(20)


def random_states(params, n, seed, angle_range=np.pi, vel_range=10.0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        yield ChainState(0.0,
                         rng.uniform(-angle_range, angle_range, params.N),
                         rng.uniform(-vel_range, vel_range, params.N))


def pairwise_coupling_oracle(params, cs):
    """Per-link sum of spring/damper torques, one link at a time."""
    acc = np.zeros(params.N)
    for i in range(params.N - 1):
        tau = params.k * (cs.angles[i + 1] - cs.angles[i]) \
            + params.b * (cs.velocities[i + 1] - cs.velocities[i])
        acc[i] += tau / params.J
        acc[i + 1] -= tau / params.J
    return acc


def kronecker_derivative_oracle(params, cs, cmd):
    """Stacked matrix form: F(x) - ((L+D) (x) BK / J) x + ([d1 d2] (x) BK / J) u."""
    N = params.N
    x = np.empty(2 * N)
    x[0::2] = cs.angles
    x[1::2] = cs.velocities
    F = np.empty(2 * N)
    F[0::2] = cs.velocities
    F[1::2] = -(params.mgl / params.J) * np.sin(cs.angles) \
        - (params.gamma / params.J) * cs.velocities
    BK = np.array([[0.0, 0.0], [params.k, params.b]])
    LD = build_laplacian(N)
    LD[0, 0] += 1.0
    LD[-1, -1] += 1.0
    A = np.kron(LD, BK) / params.J
    d = np.zeros((N, 2))
    d[0, 0] = 1.0
    d[-1, 1] = 1.0
    Bu = np.kron(d, BK) / params.J
    u = np.array([cmd.phi_m1, cmd.omega_m1, cmd.phi_m2, cmd.omega_m2])
    dx = F - A @ x + Bu @ u
    return dx[0::2], dx[1::2]


class TestLaplacian:
    def test_n3_pattern(self):
        expected = np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]], dtype=float)
        np.testing.assert_array_equal(build_laplacian(3), expected)

    def test_n2_smallest_path(self):
        np.testing.assert_array_equal(build_laplacian(2),
                                      np.array([[1, -1], [-1, 1]], dtype=float))

    def test_n20_spectrum(self):
        L = build_laplacian(20)
        np.testing.assert_allclose(L.sum(axis=1), 0.0, atol=1e-15)
        np.testing.assert_array_equal(L, L.T)
        w, v = np.linalg.eigh(L)
        assert abs(w[0]) < 1e-12
        ones = v[:, 0] / v[0, 0]
        np.testing.assert_allclose(ones, np.ones(20), atol=1e-9)
        assert np.all(w[1:] > 0)

    def test_too_small(self):
        with pytest.raises(ValueError):
            build_laplacian(1)


class TestDrift:
    def test_stable_equilibrium(self):
        assert drift(P5, PendulumState(0.0, 0.0)) == (0.0, 0.0)

    def test_inverted_equilibrium(self):
        dv, da = drift(P5, PendulumState(np.pi, 0.0))
        assert dv == 0.0
        assert abs(da) < 1e-12  # sin(pi) is ~1e-16

    def test_horizontal(self):
        # hand evaluation: -m*g*l/J with table J; close to -g/l for J = m*l^2
        dv, da = drift(P5, PendulumState(np.pi / 2, 0.0))
        expected = -P5.m * P5.g * P5.l / P5.J
        np.testing.assert_allclose(da, expected, rtol=1e-12)
        np.testing.assert_allclose(da, -P5.g / P5.l, rtol=0.01)

    def test_damping_term(self):
        dv, da = drift(P5, PendulumState(0.0, 2.0))
        np.testing.assert_allclose(da, -P5.gamma / P5.J * 2.0, rtol=1e-12)
        assert dv == 2.0


class TestCoupling:
    def test_uniform_state_in_kernel(self):
        cs = ChainState(0.0, np.full(5, 0.7), np.full(5, -2.0))
        np.testing.assert_allclose(coupling_accels(P5, cs), 0.0, atol=1e-15)

    def test_two_pendulum_example(self):
        p2 = ChainParams.platform(2)
        cs = ChainState(0.0, np.array([0.0, 1.0]), np.zeros(2))
        acc = coupling_accels(p2, cs)
        k_over_J = p2.k / p2.J  # = 170.157...
        np.testing.assert_allclose(acc, [k_over_J, -k_over_J], rtol=1e-12)
        np.testing.assert_allclose(k_over_J, 170.157, rtol=1e-4)

    def test_matches_pairwise_oracle(self):
        for cs in random_states(P20, 1000, seed=42):
            np.testing.assert_allclose(coupling_accels(P20, cs),
                                       pairwise_coupling_oracle(P20, cs),
                                       rtol=1e-12, atol=1e-9)


class TestBoundary:
    def test_tracking_command_is_torque_free(self):
        for cs in random_states(P5, 5, seed=1):
            cmd = MotorCommand(cs.angles[0], cs.velocities[0],
                               cs.angles[-1], cs.velocities[-1])
            a1, aN = boundary_accels(P5, cs, cmd)
            assert a1 == 0.0 and aN == 0.0

    def test_unit_offset(self):
        cs = ChainState(0.0, np.zeros(5), np.zeros(5))
        a1, aN = boundary_accels(P5, cs, MotorCommand(phi_m1=1.0))
        np.testing.assert_allclose(a1, P5.k / P5.J, rtol=1e-12)
        assert aN == 0.0

    def test_restoring_sign(self):
        cs = ChainState(0.0, np.zeros(5), np.zeros(5))
        a1, _ = boundary_accels(P5, cs, MotorCommand(phi_m1=0.4))
        assert a1 > 0


class TestChainDerivative:
    def test_global_equilibrium(self):
        cs = ChainState.zero(5)
        dphi, dom = chain_derivative(P5, cs, MotorCommand())
        np.testing.assert_array_equal(dphi, 0.0)
        np.testing.assert_array_equal(dom, 0.0)

    @pytest.mark.parametrize("N", [2, 5, 20])
    def test_matches_both_oracles(self, N):
        params = ChainParams.platform(N)
        rng = np.random.default_rng(7)
        for _ in range(200):
            cs = ChainState(0.0, rng.uniform(-np.pi, np.pi, N),
                            rng.uniform(-10, 10, N))
            cmd = MotorCommand(*rng.uniform(-2, 2, 4))
            dphi, dom = chain_derivative(params, cs, cmd)
            # scalar per-pendulum textbook form
            for i in range(N):
                acc = -(params.mgl / params.J) * np.sin(cs.angles[i]) \
                    - (params.gamma / params.J) * cs.velocities[i]
                if i > 0:
                    acc += (params.k * (cs.angles[i - 1] - cs.angles[i])
                            + params.b * (cs.velocities[i - 1] - cs.velocities[i])) / params.J
                if i < N - 1:
                    acc += (params.k * (cs.angles[i + 1] - cs.angles[i])
                            + params.b * (cs.velocities[i + 1] - cs.velocities[i])) / params.J
                if i == 0:
                    acc += (params.k * (cmd.phi_m1 - cs.angles[0])
                            + params.b * (cmd.omega_m1 - cs.velocities[0])) / params.J
                if i == N - 1:
                    acc += (params.k * (cmd.phi_m2 - cs.angles[-1])
                            + params.b * (cmd.omega_m2 - cs.velocities[-1])) / params.J
                assert abs(dom[i] - acc) < 1e-9
            dphi_k, dom_k = kronecker_derivative_oracle(params, cs, cmd)
            np.testing.assert_allclose(dphi, dphi_k, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(dom, dom_k, rtol=1e-12, atol=1e-9)

    def test_energy_derivative_vanishes_without_dissipation(self):
        # chain rule: dE/dt = sum dE/dphi * dphi + dE/dv * dv along the field
        from dataclasses import replace
        p = replace(P5, gamma=0.0, b=0.0)
        for cs in random_states(p, 20, seed=3):
            cmd = MotorCommand(cs.angles[0], cs.velocities[0],
                               cs.angles[-1], cs.velocities[-1])
            dphi, dom = chain_derivative(p, cs, cmd)
            dE_dphi = p.mgl * np.sin(cs.angles)
            twist = np.diff(cs.angles)
            dE_dphi[:-1] -= p.k * twist
            dE_dphi[1:] += p.k * twist
            dE_dv = p.J * cs.velocities
            dE_dt = float(dE_dphi @ dphi + dE_dv @ dom)
            scale = max(1.0, abs(float(dE_dv @ dom)))
            assert abs(dE_dt) / scale < 1e-10

    def test_translation_symmetry(self):
        cs = next(iter(random_states(P5, 1, seed=11)))
        cmd = MotorCommand(0.3, 0.1, -0.2, 0.0)
        shift = 1.234
        cs2 = ChainState(0.0, cs.angles + shift, cs.velocities)
        cmd2 = MotorCommand(cmd.phi_m1 + shift, cmd.omega_m1,
                            cmd.phi_m2 + shift, cmd.omega_m2)
        np.testing.assert_allclose(coupling_accels(P5, cs), coupling_accels(P5, cs2),
                                   atol=1e-9)
        np.testing.assert_allclose(boundary_accels(P5, cs, cmd),
                                   boundary_accels(P5, cs2, cmd2), atol=1e-12)

    def test_mirror_symmetry(self):
        cs = next(iter(random_states(P5, 1, seed=13)))
        cmd = MotorCommand(0.3, 0.1, -0.2, -0.5)
        dphi, dom = chain_derivative(P5, cs, cmd)
        cs_r = ChainState(0.0, cs.angles[::-1].copy(), cs.velocities[::-1].copy())
        cmd_r = MotorCommand(cmd.phi_m2, cmd.omega_m2, cmd.phi_m1, cmd.omega_m1)
        dphi_r, dom_r = chain_derivative(P5, cs_r, cmd_r)
        np.testing.assert_allclose(dphi_r, dphi[::-1], atol=1e-12)
        np.testing.assert_allclose(dom_r, dom[::-1], atol=1e-9)


class TestEnergy:
    def test_zero_state(self):
        assert total_energy(P5, ChainState.zero(5)) == 0.0

    def test_inverted_gravity_contribution(self):
        # all pendulums at pi, no twist: N * 2*m*g*l, about 0.050 J each
        cs = ChainState(0.0, np.full(5, np.pi), np.zeros(5))
        np.testing.assert_allclose(total_energy(P5, cs), 5 * 2 * P5.mgl, rtol=1e-12)
        np.testing.assert_allclose(2 * P5.mgl, 0.050031, rtol=1e-4)

    def test_single_twist(self):
        p2 = ChainParams.platform(2)
        cs = ChainState(0.0, np.array([np.pi, 0.0]), np.zeros(2))
        expected = 2 * p2.mgl + 0.5 * p2.k * np.pi ** 2
        np.testing.assert_allclose(total_energy(p2, cs), expected, rtol=1e-12)

    def test_two_pi_shift_invariance(self):
        for cs in random_states(P5, 10, seed=5):
            cs2 = ChainState(0.0, cs.angles + 2 * np.pi, cs.velocities)
            np.testing.assert_allclose(total_energy(P5, cs2), total_energy(P5, cs),
                                       rtol=1e-9)

    def test_positive_otherwise(self):
        for cs in random_states(P5, 20, seed=6):
            if np.any(cs.angles != 0) or np.any(cs.velocities != 0):
                assert total_energy(P5, cs) > 0

    def test_separatrix(self):
        np.testing.assert_allclose(separatrix_energy(P5), 2 * P5.mgl, rtol=1e-15)


class TestErrorJacobian:
    def test_decoupled_limit_frequencies(self):
        # negligible coupling, no damping: two independent linear pendulums
        p = ChainParams(N=2, J=3.82e-4, m=0.017, l=0.15, k=1e-12, b=0.0, gamma=0.0)
        _, eig = error_dynamics_jacobian(p)
        w0 = np.sqrt(p.mgl / p.J)
        np.testing.assert_allclose(np.sort(np.abs(eig.imag)), np.full(4, w0), rtol=1e-4)
        np.testing.assert_allclose(eig.real, 0.0, atol=1e-6)

    def test_matches_finite_differences(self):
        A, _ = error_dynamics_jacobian(P5)
        N = P5.N
        LD = build_laplacian(N)
        LD[0, 0] += 1.0
        LD[-1, -1] += 1.0

        def error_field(delta):
            # nonlinear synchronization-error dynamics around x0 = 0
            d = delta.reshape(N, 2)
            out = np.empty_like(d)
            out[:, 0] = d[:, 1]
            out[:, 1] = -(P5.mgl / P5.J) * np.sin(d[:, 0]) \
                - (P5.gamma / P5.J) * d[:, 1] \
                - (LD @ (P5.k * d[:, 0] + P5.b * d[:, 1])) / P5.J
            return out.ravel()

        h = 1e-7
        J_fd = np.empty((2 * N, 2 * N))
        for j in range(2 * N):
            e = np.zeros(2 * N)
            e[j] = h
            J_fd[:, j] = (error_field(e) - error_field(-e)) / (2 * h)
        np.testing.assert_allclose(A, J_fd, atol=1e-5)

    @pytest.mark.parametrize("N", [5, 20])
    def test_identified_params_stable(self, N):
        _, eig = error_dynamics_jacobian(ChainParams.platform(N))
        assert np.max(eig.real) < 0


class TestParams:
    def test_from_mass_length(self):
        p = ChainParams.from_mass_length(5, m=0.017, l=0.15, k=0.065,
                                         b=1.7e-3, gamma=3.75e-4)
        np.testing.assert_allclose(p.J, 0.017 * 0.15 ** 2, rtol=1e-15)

    def test_platform_inertia_consistent(self):
        # table inertia within 1% of m*l^2
        assert abs(P5.J - P5.m * P5.l ** 2) / P5.J < 0.01

    def test_validation(self):
        with pytest.raises(ValueError):
            ChainParams(N=1, J=1e-4, m=0.01, l=0.1, k=0.05, b=0.0, gamma=0.0)
        with pytest.raises(ValueError):
            ChainParams(N=3, J=-1e-4, m=0.01, l=0.1, k=0.05, b=0.0, gamma=0.0)
        with pytest.raises(ValueError):
            ChainParams(N=3, J=1e-4, m=0.01, l=0.1, k=0.05, b=-0.1, gamma=0.0)

    def test_states_round_trip(self):
        cs = ChainState(0.0, np.array([0.1, 0.2]), np.array([1.0, -1.0]))
        states = cs.states
        assert states[1] == PendulumState(0.2, -1.0)
        cs2 = ChainState.from_states(0.0, states)
        np.testing.assert_array_equal(cs2.angles, cs.angles)
