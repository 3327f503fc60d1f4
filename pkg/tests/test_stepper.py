import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsch.diagnostics import MMSCase, mms_convergence
from nsch.grid import VectorField, make_grid, mean
from nsch.physics import PhysParams, energy_report
from nsch.stepper import (
    Equilibrium,
    FlatInterface,
    PerturbedInterface,
    ShearFlow,
    Sources,
    StepConfig,
    StepFailure,
    TiltedInterface,
    Trajectory,
    advance,
    build_initial,
    delta_continuation,
    init_mu_delta,
    make_state,
    picard_step,
)


def perturbed_state(g, amp=0.3, **pk):
    u, phi = build_initial(g, PerturbedInterface(amp, 1))
    return make_state(g, u, phi, PhysParams(**pk))


@pytest.mark.parametrize("kw", [{"dt": 0.0}, {"dt": -1.0}, {"dt": float("nan")}, {"dt": 0.1, "picard_tol": 0.0},
                                {"dt": 0.1, "picard_max": 0}, {"dt": 0.1, "norm_spec": "h2"}])
def test_step_config_rejects(kw):
    with pytest.raises(ValueError):
        StepConfig(**kw)


def test_flat_interface_mean_zero_and_bounded():
    g = make_grid(20.0, 64, 17)
    u, phi = build_initial(g, FlatInterface())
    assert abs(mean(g, phi)) <= 1e-12
    assert np.max(np.abs(phi)) < 1.0
    assert np.max(np.abs(u.u1)) == 0.0
    # phi > 0 inside the band [Lx/4, 3Lx/4]
    assert phi[g.Nx // 2, 0] > 0.9 and phi[0, 0] < -0.9


def test_flat_interface_profile():
    g = make_grid(20.0, 200, 5)
    _, phi = build_initial(g, FlatInterface(x0=5.0))
    i = 60  # x = 6, one unit past the left interface
    c = np.sqrt(2)
    tail = 2 * (1 - np.tanh(9 / c))  # neighbouring interface at x = 15
    assert abs(phi[i, 2] - np.tanh(1 / c)) <= tail


def test_tilted_interface_crosses_where_expected():
    g = make_grid(16.0, 256, 33)
    _, phi = build_initial(g, TiltedInterface(angle=60.0))
    x_top = 4.0 + 2.0 / np.tan(np.radians(60.0))
    j = np.argmin(np.abs(phi[: g.Nx // 2, -1]))
    assert g.x[j] == pytest.approx(x_top, abs=g.dx)


def test_initial_rejects():
    g = make_grid(2 * np.pi, 16, 9)
    with pytest.raises(ValueError):
        build_initial(g, Equilibrium(0.5))
    with pytest.raises(ValueError):
        build_initial(g, TiltedInterface(angle=10.0))
    with pytest.raises(ValueError):
        build_initial(g, FlatInterface(width=0.0))
    with pytest.raises(ValueError):
        build_initial(g, PerturbedInterface(mode=0))


def test_shear_flow_velocity():
    g = make_grid(2 * np.pi, 16, 9)
    u, _ = build_initial(g, ShearFlow(amplitude=0.2))
    assert np.allclose(u.u1, 0.2 * np.sin(np.pi * g.mesh[1]))
    assert np.max(np.abs(u.u2)) == 0.0


def test_flat_interface_centered_profile():
    g = make_grid(40.0, 400, 5)
    _, phi = build_initial(g, FlatInterface(x0=20.0))
    near = np.abs(g.x - 20.0) <= 5.0
    assert np.max(np.abs(phi[near, 2] - np.tanh((g.x[near] - 20.0) / np.sqrt(2)))) <= 1e-5
    assert abs(mean(g, phi)) <= 1e-12


def test_init_mu_delta_matches_dense_helmholtz():
    g = make_grid(2 * np.pi, 8, 17)
    _, Y = g.mesh
    phi0 = np.tanh(2 * Y) + 0.3 * Y**2
    z = np.zeros(g.shape)
    delta, M = 0.05, 2.0
    mu = init_mu_delta(g, VectorField(z, z), phi0, delta, M)
    N, h = g.Ny, g.dy
    L = np.zeros((N, N))
    for j in range(1, N - 1):
        L[j, j - 1:j + 2] = [1, -2, 1]
    L[0, :2] = [-2, 2]
    L[-1, -2:] = [2, -2]
    L /= h**2
    p = phi0[0]
    d2 = np.empty(N)
    d2[1:-1] = (p[2:] - 2 * p[1:-1] + p[:-2]) / h**2
    d2[0] = (2 * p[0] - 5 * p[1] + 4 * p[2] - p[3]) / h**2
    d2[-1] = (2 * p[-1] - 5 * p[-2] + 4 * p[-3] - p[-4]) / h**2
    ref = np.linalg.solve(np.eye(N) - delta * M * L, -d2 + p**3 - p)
    assert np.allclose(mu, ref, atol=1e-11)


def test_make_state_delta_mu():
    g = make_grid(2 * np.pi, 16, 17)
    s0 = perturbed_state(g, delta=0.0)
    s1 = perturbed_state(g, delta=0.01)
    assert s1.mu.shape == g.shape
    assert np.max(np.abs(s1.mu - s0.mu)) < 0.5 * np.max(np.abs(s0.mu))
    assert np.array_equal(s1.psi_bottom, s1.phi[:, 0])


@pytest.mark.parametrize("delta", [0.0, 0.01])
@pytest.mark.parametrize("value", [1.0, -1.0])
def test_equilibrium_step_exact(delta, value):
    g = make_grid(2 * np.pi, 16, 9)
    u, phi = build_initial(g, Equilibrium(value))
    s0 = make_state(g, u, phi, PhysParams(a=1.0, delta=delta))
    s, rep = picard_step(s0, StepConfig(dt=0.01))
    assert rep.converged
    assert np.max(np.abs(s.phi - value)) <= 1e-12
    assert np.max(np.abs(s.u.u1)) <= 1e-12 and np.max(np.abs(s.mu)) <= 1e-12
    assert s.step == 1 and s.t == pytest.approx(0.01)


def test_failed_step_leaves_state_untouched():
    g = make_grid(2 * np.pi, 16, 17)
    s0 = perturbed_state(g)
    before = s0.copy()
    s, rep = picard_step(s0, StepConfig(dt=0.01, picard_tol=1e-15, picard_max=2))
    assert not rep.converged and s is s0 and rep.iterations == 2
    assert np.array_equal(s0.phi, before.phi) and np.array_equal(s0.u.u1, before.u.u1)
    with pytest.raises(StepFailure) as exc:
        advance(s0, 3, StepConfig(dt=0.01, picard_tol=1e-15, picard_max=2))
    assert exc.value.step == 1
    assert "step 1" in str(exc.value)


def test_sources_rejected_on_delta_path():
    g = make_grid(2 * np.pi, 8, 9)
    s0 = perturbed_state(g, delta=0.01)
    with pytest.raises(ValueError):
        picard_step(s0, StepConfig(dt=0.01, forcing=lambda g, t: Sources()))


def test_advance_events_and_determinism():
    g = make_grid(2 * np.pi, 32, 17)
    cfg = StepConfig(dt=2e-3)
    tr = Trajectory()
    s1 = advance(perturbed_state(g), 5, cfg, [tr])
    s2 = advance(perturbed_state(g), 5, cfg)
    assert [e.step for e in tr.events] == [1, 2, 3, 4, 5]
    assert np.array_equal(s1.phi, s2.phi) and np.array_equal(s1.u.u1, s2.u.u1)
    assert s1.t == pytest.approx(0.01)
    assert all(e.picard.converged for e in tr.events)
    with pytest.raises(ValueError):
        advance(s1, -1, cfg)


def test_pure_ch_keeps_velocity():
    g = make_grid(2 * np.pi, 16, 9)
    u, phi = build_initial(g, ShearFlow(0.1))
    s0 = make_state(g, u, phi, PhysParams())
    s = advance(s0, 3, StepConfig(dt=1e-3, solve_flow=False))
    assert np.array_equal(s.u.u1, s0.u.u1)


def test_contraction_small_dt():
    g = make_grid(2 * np.pi, 32, 17)
    s, rep = picard_step(perturbed_state(g), StepConfig(dt=1e-3))
    assert rep.converged
    assert all(r < 0.5 for r in rep.contraction_ratios)


def test_contraction_improves_as_dt_halves():
    g = make_grid(2 * np.pi, 32, 17)
    s0 = perturbed_state(g)
    its, rho = [], []
    for dt in (4e-3, 2e-3, 1e-3, 5e-4):
        _, rep = picard_step(s0, StepConfig(dt=dt))
        its.append(rep.iterations)
        rho.append(float(np.mean(rep.contraction_ratios)))
    assert all(b <= a for a, b in zip(its, its[1:]))
    assert all(b < a for a, b in zip(rho, rho[1:]))


def test_coupled_energy_non_increasing_200_steps():
    g = make_grid(2 * np.pi, 32, 17)
    s0 = perturbed_state(g)
    tr = Trajectory()
    advance(s0, 200, StepConfig(dt=1e-3), [tr])
    e = [energy_report(g, s0).total] + [ev.energy.total for ev in tr.events]
    assert np.all(np.diff(e) <= 1e-8)


@settings(max_examples=8, deadline=None)
@given(amp=st.floats(-0.4, 0.4), a=st.floats(-1, 1))
def test_mass_conserved_delta0(amp, a):
    g = make_grid(2 * np.pi, 32, 17)
    s0 = perturbed_state(g, amp, a=a)
    m0 = mean(g, s0.phi)
    tr = Trajectory()
    advance(s0, 5, StepConfig(dt=2e-3), [tr])
    assert max(abs(e.mass_mean - m0) for e in tr.events) <= 1e-13


@settings(max_examples=6, deadline=None)
@given(amp=st.floats(0.05, 0.4))
def test_ch_relaxation_energy_decreases(amp):
    g = make_grid(2 * np.pi, 32, 17)
    s0 = perturbed_state(g, amp, a=0.0)
    tr = Trajectory()
    advance(s0, 5, StepConfig(dt=1e-3, solve_flow=False), [tr])
    e = [energy_report(g, s0).total] + [ev.energy.total for ev in tr.events]
    assert np.all(np.diff(e) <= 1e-8)


def _mirror_x(F):
    return np.roll(F[::-1], 1, axis=0)


def test_x_reflection_equivariance():
    g = make_grid(2 * np.pi, 32, 17)
    s0 = perturbed_state(g, a=0.7)
    s0.u = VectorField(0.05 * np.sin(g.mesh[0]) * (1 - g.mesh[1] ** 2), np.zeros(g.shape))
    m0 = s0.copy()
    m0.phi = _mirror_x(s0.phi)
    m0.mu = _mirror_x(s0.mu)
    m0.u = VectorField(-_mirror_x(s0.u.u1), _mirror_x(s0.u.u2))
    m0.psi_bottom, m0.psi_top = m0.phi[:, 0].copy(), m0.phi[:, -1].copy()
    cfg = StepConfig(dt=2e-3, picard_tol=1e-13)
    a, b = advance(s0, 3, cfg), advance(m0, 3, cfg)
    assert np.max(np.abs(_mirror_x(a.phi) - b.phi)) <= 1e-10
    assert np.max(np.abs(-_mirror_x(a.u.u1) - b.u.u1)) <= 1e-10


def test_y_reflection_equivariance():
    g = make_grid(2 * np.pi, 32, 17)
    u, phi = build_initial(g, TiltedInterface(angle=75.0))
    s0 = make_state(g, u, phi, PhysParams(a=0.5))
    m0 = make_state(g, u, phi[:, ::-1].copy(), PhysParams(a=0.5))
    cfg = StepConfig(dt=2e-3, picard_tol=1e-13)
    a, b = advance(s0, 3, cfg), advance(m0, 3, cfg)
    assert np.max(np.abs(a.phi[:, ::-1] - b.phi)) <= 1e-10
    assert np.max(np.abs(a.u.u1[:, ::-1] - b.u.u1)) <= 1e-10
    assert np.max(np.abs(-a.u.u2[:, ::-1] - b.u.u2)) <= 1e-10


def test_continuation_validates_ladder():
    g = make_grid(2 * np.pi, 8, 9)
    s0 = perturbed_state(g)
    cfg = StepConfig(dt=1e-3)
    with pytest.raises(ValueError):
        delta_continuation(s0, cfg, [1e-2, 2e-2], 1e-3)
    with pytest.raises(ValueError):
        delta_continuation(s0, cfg, [1e-2], 1e-3)
    with pytest.raises(ValueError):
        delta_continuation(s0, cfg, [2e-2, 1e-2], 1.5e-3)


def test_continuation_report_shape():
    g = make_grid(2 * np.pi, 8, 9)
    rep = delta_continuation(perturbed_state(g), StepConfig(dt=1e-3, picard_max=200), [0.2, 0.1], 2e-3)
    assert len(rep.states) == 2 and len(rep.cauchy_phi) == 1 and len(rep.native_phi) == 2
    assert rep.native is not None and rep.native.params.delta == 0.0


@pytest.mark.slow
def test_full_step_first_order_in_time():
    t = mms_convergence(MMSCase.FULL_STEP)
    assert min(t.orders) >= 0.9
