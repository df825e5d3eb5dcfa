import math

import numpy as np
import pytest

from jumpguard.linalg import make_layout, normalized, product_basis_state
from jumpguard.models import (
    CascadeSpec,
    DecayChannel,
    OpenSystemModel,
    build_qubit_pair,
    build_qutrit_cascade,
    build_qutrit_pair,
    evolve_master,
)
from jumpguard.trajectories import (
    FeedbackPolicy,
    TruncationError,
    UnravelingConfig,
    apply_feedback,
    enumerate_trajectories,
    jump_step,
    kraus_defect,
    no_jump_step,
    run_density_grid,
    run_sampled_grid,
    sample_density_trajectories,
    sample_trajectories,
)

LAY2 = make_layout((2, 2))
LAY3 = make_layout((3, 3))


def bell2():
    return normalized(product_basis_state(LAY2, (1, 0)) + product_basis_state(LAY2, (0, 1)))


def code_bell3():
    return normalized(product_basis_state(LAY3, (1, 2)) + product_basis_state(LAY3, (2, 1)))


def trace_distance(a, b):
    return 0.5 * np.abs(np.linalg.eigvalsh(a - b)).sum()


def average_projector(records):
    out = 0.0
    for r in records:
        out = out + r.probability * np.outer(r.state, r.state.conj())
    return out


# -- single-step operations -------------------------------------------------


def test_no_jump_probability_composes_to_exponential():
    model = build_qubit_pair(1.0)
    psi = bell2()
    dt, steps = 1e-2, 100
    total = 1.0
    for _ in range(steps):
        out, p = no_jump_step(model, psi, dt)
        total *= p
        psi = normalized(out)
    assert abs(total - math.exp(-1.0)) < 1e-12
    assert abs(abs(np.vdot(psi, bell2())) ** 2 - 1.0) < 1e-12


def test_no_jump_dark_state():
    model = build_qubit_pair(1.0)
    g = product_basis_state(LAY2, (0, 0))
    out, p = no_jump_step(model, g, 1e-3)
    assert abs(p - 1.0) < 1e-15
    assert np.allclose(out, g)


def test_no_jump_code_subspace_is_decoherence_free():
    # merged cascade: L+L acts as identity on span{|1>,|2>}^x2, so the
    # normalized no-jump state never moves
    model = build_qutrit_pair(CascadeSpec.degenerate(1.0))
    rng = np.random.default_rng(2)
    amp = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    amp /= np.linalg.norm(amp)
    psi = (
        amp[0] * product_basis_state(LAY3, (1, 1))
        + amp[1] * product_basis_state(LAY3, (1, 2))
        + amp[2] * product_basis_state(LAY3, (2, 1))
        + amp[3] * product_basis_state(LAY3, (2, 2))
    )
    out, p = no_jump_step(model, psi, 1e-3)
    assert abs(abs(np.vdot(normalized(out), psi)) - 1.0) < 1e-12
    assert abs(p - math.exp(-2e-3)) < 1e-12


def test_first_order_no_jump_flag():
    model = build_qubit_pair(1.0)
    psi = bell2()
    out, p = no_jump_step(model, psi, 1e-3, first_order=True)
    expected = (np.eye(4) - 0.5e-3 * model.decay_generator) @ psi
    assert np.allclose(out, expected)


def test_jump_step_degenerate_mapping():
    model = build_qutrit_pair(CascadeSpec.degenerate(1.0))
    out, p = jump_step(model, code_bell3(), 0, 1e-3)
    target = normalized(product_basis_state(LAY3, (0, 2)) + product_basis_state(LAY3, (1, 1)))
    assert abs(abs(np.vdot(normalized(out), target)) ** 2 - 1.0) < 1e-12
    assert abs(p - 1e-3) < 1e-15  # <L+L> = 1 on the code state


def test_jump_step_harmonic_oscillator_mapping():
    model = build_qutrit_pair(CascadeSpec.harmonic_oscillator(1.0))
    out, p = jump_step(model, code_bell3(), 0, 1e-3)
    target = normalized(
        product_basis_state(LAY3, (0, 2)) + math.sqrt(2.0) * product_basis_state(LAY3, (1, 1))
    )
    assert abs(abs(np.vdot(normalized(out), target)) ** 2 - 1.0) < 1e-12


def test_jump_step_on_ground_state_is_null():
    model = build_qubit_pair(1.0)
    out, p = jump_step(model, product_basis_state(LAY2, (0, 0)), 0, 1e-3)
    assert p == 0.0


def test_apply_feedback_restores_code_state():
    policy = FeedbackPolicy.qutrit_cyclic()
    jumped = normalized(product_basis_state(LAY3, (0, 2)) + product_basis_state(LAY3, (1, 1)))
    out = apply_feedback(policy, jumped, 0, LAY3)
    assert abs(abs(np.vdot(out, code_bell3())) ** 2 - 1.0) < 1e-12


def test_apply_feedback_identity_and_norm():
    policy = FeedbackPolicy(unitaries={0: np.eye(3), 1: np.eye(3)})
    psi = code_bell3()
    assert np.allclose(apply_feedback(policy, psi, 1, LAY3), psi)


def test_feedback_cannot_fix_double_decay():
    model = build_qutrit_pair(CascadeSpec.degenerate(1.0))
    policy = FeedbackPolicy.qutrit_cyclic()
    once, _ = jump_step(model, code_bell3(), 0, 1e-3)
    twice, _ = jump_step(model, normalized(once), 0, 1e-3)
    repaired = apply_feedback(policy, normalized(twice), 0, LAY3)
    assert abs(np.vdot(repaired, code_bell3())) ** 2 < 0.6


def test_feedback_policy_rejects_non_unitary():
    with pytest.raises(ValueError):
        FeedbackPolicy(unitaries={0: np.array([[1.0, 0.0], [0.0, 0.5]])})
    with pytest.raises(ValueError):
        FeedbackPolicy(unitaries={}, efficiency=1.5)


def test_kraus_completeness_quadratic_scaling():
    model = build_qubit_pair(1.0)
    dts = np.array([1e-2, 1e-3, 1e-4])
    devs = np.array([kraus_defect(model, dt) for dt in dts])
    slope = np.polyfit(np.log(dts), np.log(devs), 1)[0]
    assert abs(slope - 2.0) < 0.1


# -- exact enumeration ------------------------------------------------------


def test_enumerate_zero_rate_single_record():
    model = build_qubit_pair(0.0)
    res = enumerate_trajectories(model, bell2(), UnravelingConfig(dt=1e-2, t_max=1.0))
    assert len(res.records) == 1
    rec = res.records[0]
    assert rec.probability == 1.0 and rec.n_jumps == 0
    assert np.allclose(rec.state, bell2())


def test_enumerate_bell_no_jump_record():
    model = build_qubit_pair(1.0)
    res = enumerate_trajectories(model, bell2(), UnravelingConfig(dt=1e-3, t_max=1.0))
    nj = next(r for r in res.records if r.n_jumps == 0)
    assert abs(nj.probability - math.exp(-1.0)) < 1e-9
    assert abs(abs(np.vdot(nj.state, bell2())) ** 2 - 1.0) < 1e-12


def test_enumerate_completeness():
    model = build_qutrit_pair(CascadeSpec.degenerate(1.0))
    res = enumerate_trajectories(model, code_bell3(), UnravelingConfig(dt=2e-3, t_max=1.0))
    total = res.total_probability + res.truncation_mass + res.culled_mass
    assert abs(total - 1.0) < 1e-9


def test_enumerate_truncation_error_advises_depth():
    model = build_qutrit_pair(CascadeSpec.degenerate(1.0))
    cfg = UnravelingConfig(dt=2e-3, t_max=1.0, max_jumps=0)
    with pytest.raises(TruncationError, match="max_jumps"):
        enumerate_trajectories(model, code_bell3(), cfg)


def test_enumerate_rejects_inefficient_policy():
    model = build_qutrit_pair(CascadeSpec.degenerate(1.0))
    policy = FeedbackPolicy.qutrit_cyclic(efficiency=0.9)
    with pytest.raises(ValueError, match="efficiency"):
        enumerate_trajectories(model, code_bell3(), UnravelingConfig(dt=1e-3, t_max=0.1), policy)


def test_rate_resolution_guard():
    model = build_qubit_pair(1.0)
    with pytest.raises(ValueError, match="gamma_max"):
        enumerate_trajectories(model, bell2(), UnravelingConfig(dt=0.1, t_max=1.0))


@pytest.mark.parametrize(
    "spec",
    [None, CascadeSpec.degenerate(1.0), CascadeSpec.harmonic_oscillator(1.0)],
)
def test_unraveling_matches_master_equation(spec):
    if spec is None:
        model, psi0 = build_qubit_pair(1.0), bell2()
    else:
        model, psi0 = build_qutrit_pair(spec), code_bell3()
    for t in (0.5, 1.0, 2.0):
        res = enumerate_trajectories(model, psi0, UnravelingConfig(dt=4e-3, t_max=t))
        rho = average_projector(res.records)
        rho_m = evolve_master(model, np.outer(psi0, psi0.conj()), [0.0, t])[-1]
        assert trace_distance(rho, rho_m) < 1e-4


def test_full_protection_any_code_state():
    """Degenerate cascade plus ideal feedback pins every record to the
    initial state, whatever superposition the code subspace holds."""
    model = build_qutrit_pair(CascadeSpec.degenerate(1.0))
    policy = FeedbackPolicy.qutrit_cyclic()
    rng = np.random.default_rng(4)
    dt = 1e-3
    for _ in range(3):
        amp = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        amp /= np.linalg.norm(amp)
        psi0 = (
            amp[0] * product_basis_state(LAY3, (1, 1))
            + amp[1] * product_basis_state(LAY3, (1, 2))
            + amp[2] * product_basis_state(LAY3, (2, 1))
            + amp[3] * product_basis_state(LAY3, (2, 2))
        )
        res = enumerate_trajectories(
            model, psi0, UnravelingConfig(dt=dt, t_max=1.0, max_jumps=12), policy
        )
        for rec in res.records:
            fid = abs(np.vdot(rec.state, psi0)) ** 2
            assert fid >= 1.0 - 10.0 * dt


def test_three_party_code_protection():
    ops = build_qutrit_cascade(CascadeSpec.degenerate(1.0))
    lay = make_layout((3, 3, 3))
    channels = tuple(DecayChannel(s, op, r) for s in range(3) for op, r in ops)
    model = OpenSystemModel(layout=lay, channels=channels)
    ghz = normalized(product_basis_state(lay, (1, 1, 1)) + product_basis_state(lay, (2, 2, 2)))
    policy = FeedbackPolicy.qutrit_cyclic(slots=(0, 1, 2))
    dt = 1e-3
    cfg = UnravelingConfig(dt=dt, t_max=1.0, n_samples=200, rng_seed=5)
    res = sample_trajectories(model, ghz, cfg, policy)
    for rec in res.records:
        assert abs(np.vdot(rec.state, ghz)) ** 2 >= 1.0 - 10.0 * dt


# -- Monte Carlo sampling ---------------------------------------------------


def test_sample_zero_rate_is_constant():
    model = build_qubit_pair(0.0)
    res = sample_trajectories(model, bell2(), UnravelingConfig(dt=1e-2, t_max=0.5, n_samples=20))
    for rec in res.records:
        assert np.allclose(rec.state, bell2())
        assert rec.n_jumps == 0


def test_sample_no_jump_fraction_binomial():
    model = build_qubit_pair(1.0)
    n = 20_000
    cfg = UnravelingConfig(dt=5e-3, t_max=1.0, n_samples=n, rng_seed=17)
    res = sample_trajectories(model, bell2(), cfg)
    frac = sum(1 for r in res.records if r.n_jumps == 0) / n
    p = math.exp(-1.0)
    sigma = math.sqrt(p * (1 - p) / n)
    assert abs(frac - p) < 3 * sigma


def test_sample_average_projector_matches_master():
    model = build_qubit_pair(1.0)
    n = 100_000
    cfg = UnravelingConfig(dt=5e-3, t_max=1.0, n_samples=n, rng_seed=23)
    res = sample_trajectories(model, bell2(), cfg)
    states = np.stack([r.state for r in res.records])
    rho = np.einsum("ni,nj->ij", states, states.conj()) / n
    rho_m = evolve_master(model, np.outer(bell2(), bell2().conj()), [0.0, 1.0])[-1]
    assert trace_distance(rho, rho_m) < 5e-3


def test_sample_determinism_bit_identical_events():
    model = build_qutrit_pair(CascadeSpec.degenerate(1.0))
    cfg = UnravelingConfig(dt=2e-3, t_max=1.0, n_samples=500, rng_seed=99)
    a = sample_trajectories(model, code_bell3(), cfg)
    b = sample_trajectories(model, code_bell3(), cfg)
    assert [r.events for r in a.records] == [r.events for r in b.records]
    for ra, rb in zip(a.records, b.records):
        assert np.array_equal(ra.state, rb.state)


def test_sample_trajectory_stream_independent_of_batch_size():
    # trajectory i depends only on (seed, i), not on how many others ran
    model = build_qubit_pair(1.0)
    cfg_small = UnravelingConfig(dt=5e-3, t_max=1.0, n_samples=10, rng_seed=31)
    cfg_large = UnravelingConfig(dt=5e-3, t_max=1.0, n_samples=40, rng_seed=31)
    small = sample_trajectories(model, bell2(), cfg_small)
    large = sample_trajectories(model, bell2(), cfg_large)
    for ra, rb in zip(small.records, large.records[:10]):
        assert ra.events == rb.events


# -- inefficiency and delay -------------------------------------------------


def test_eta_one_density_matches_pure_driver():
    model = build_qutrit_pair(CascadeSpec.degenerate(1.0))
    psi0 = code_bell3()
    policy = FeedbackPolicy.qutrit_cyclic(efficiency=1.0)
    cfg = UnravelingConfig(dt=2e-3, t_max=0.5, n_samples=50, rng_seed=13)
    pure = sample_trajectories(model, psi0, cfg, policy)
    dens = sample_density_trajectories(model, np.outer(psi0, psi0.conj()), cfg, policy)
    for rp, rd in zip(pure.records, dens.records):
        assert rp.events == rd.events
        proj = np.outer(rp.state, rp.state.conj())
        assert np.max(np.abs(proj - rd.state)) < 1e-10


def test_eta_zero_reduces_to_master_equation():
    model = build_qutrit_pair(CascadeSpec.degenerate(1.0))
    psi0 = code_bell3()
    policy = FeedbackPolicy.qutrit_cyclic(efficiency=0.0)
    cfg = UnravelingConfig(dt=1e-3, t_max=1.0, n_samples=2, rng_seed=1)
    res = sample_density_trajectories(model, np.outer(psi0, psi0.conj()), cfg, policy)
    rho_m = evolve_master(model, np.outer(psi0, psi0.conj()), [0.0, 1.0])[-1]
    for rec in res.records:
        assert rec.n_jumps == 0  # nothing is ever recorded
        assert trace_distance(rec.state, rho_m) < 1e-3


def test_partial_efficiency_curve_sits_between_limits():
    model = build_qutrit_pair(CascadeSpec.degenerate(1.0))
    psi0 = code_bell3()
    rho0 = np.outer(psi0, psi0.conj())
    lay = LAY3
    from jumpguard import entanglement as ent

    gsteps = [0, 250, 500]
    cfg = UnravelingConfig(dt=4e-3, t_max=2.0, n_samples=400, rng_seed=21)
    obs = {"neg": lambda r, c: ent.negativity_batch_density(r, lay)}
    mid = run_density_grid(model, rho0, cfg, FeedbackPolicy.qutrit_cyclic(efficiency=0.92), gsteps, obs)
    rho_m = evolve_master(model, rho0, [0.0, 1.0, 2.0])
    for i, t in enumerate((1.0, 2.0)):
        lower = ent.negativity(rho_m[i + 1], lay)
        val = mid.mean["neg"][i + 1]
        assert lower < val < 0.5


def test_delayed_feedback_keeps_states_pure_and_entangled():
    model = build_qutrit_pair(CascadeSpec.degenerate(1.0))
    psi0 = code_bell3()
    policy = FeedbackPolicy.qutrit_cyclic(delay=0.08)
    cfg = UnravelingConfig(dt=2e-3, t_max=2.0, n_samples=300, rng_seed=8)
    from jumpguard import entanglement as ent

    out = run_sampled_grid(model, psi0, cfg, policy, [1000], {
        "neg": lambda s, c: ent.negativity_batch_pure(s, LAY3),
    })
    # protection with a small delay is still close to maximal at gamma t = 2
    assert 0.3 < out.mean["neg"][0] <= 0.5 + 1e-12


def test_pure_sampler_rejects_inefficiency():
    model = build_qubit_pair(1.0)
    policy = FeedbackPolicy(unitaries={0: np.eye(2), 1: np.eye(2)}, efficiency=0.5)
    with pytest.raises(ValueError, match="efficiency"):
        sample_trajectories(model, bell2(), UnravelingConfig(dt=1e-3, t_max=0.1), policy)
