import numpy as np
import pytest

from coisac import hbf_solver as hs
from coisac import runtime as rt
from coisac.panda_core import PenaltyConfig, Termination
from coisac.scene import generate_channels

from .conftest import crandn, desk_scene, desk_specs


def _setup(n_aps=2, seed=0, n_tx=8):
    sc = desk_scene(n_aps, n_tx=n_tx, n_rx=n_tx)
    return sc, generate_channels(sc, seed), desk_specs(sc)


def _same_reports(r1, r2):
    assert len(r1.reports) == len(r2.reports)
    for a, b in zip(r1.reports, r2.reports):
        assert a.augmented_lagrangian == b.augmented_lagrangian
        np.testing.assert_array_equal(a.primal_residuals, b.primal_residuals)
        assert a.extras["wsr"] == b.extras["wsr"]
    for s1, s2 in zip(r1.states, r2.states):
        np.testing.assert_array_equal(s1.F_A, s2.F_A)
        np.testing.assert_array_equal(s1.F_D, s2.F_D)


def test_single_ap_matches_prox_reference():
    sc, ch, specs = _setup(1)
    pen = PenaltyConfig(max_outer_iters=60)
    p = rt.run_panda_distributed(sc, ch, specs, pen, rng=3)
    c = rt.run_centralized_admm(sc, ch, specs, pen, rng=3, s1_mode="prox")
    assert p.iterations == c.iterations
    diff = max(abs(a.augmented_lagrangian - b.augmented_lagrangian) for a, b in zip(p.reports, c.reports))
    assert diff < 1e-10


def test_exact_block_equals_linearized_step_on_isotropic_quadratic(rng):
    # N_T = U = 2 with a scaled-unitary channel and equal |eta|: the linearized
    # model is exact, so one proximal step is the exact block minimizer.
    Q, _ = np.linalg.qr(crandn(rng, 2, 2))
    H = 0.8 * Q
    spec = desk_specs(desk_scene(1, n_tx=2, n_rx=2, n_rf=2))[0]
    st_ = hs.init_state(H, spec, 2, 1.0, rng)
    st_.T = crandn(rng, 2, 2)
    st_.T /= np.linalg.norm(st_.T)
    st_.Omega = 0.1 * crandn(rng, 2, 2)
    aux = hs.AuxScalars(np.array([0.3, 0.9]), 0.7 * np.exp(1j * np.array([0.2, -1.1])), np.ones(2))
    pen = PenaltyConfig()
    problem = rt.Problem(rt.ChannelSet([H]), [spec], np.ones(2), np.ones(2), 1.0, 2)
    alpha = rt._alpha(aux, H.conj().T @ H)
    Xi = H.conj().T @ st_.T
    T_prox = hs.update_T(st_, hs.coupled_gradient(H, aux, Xi), hs.linear_term(aux, H), alpha, pen.rho, 1.0)
    rt._exact_t_block([st_], problem, aux, pen)
    np.testing.assert_allclose(st_.T, T_prox, atol=1e-10)


def test_determinism_and_thread_count():
    sc, ch, specs = _setup(3)
    pen = PenaltyConfig(max_outer_iters=25)
    a = rt.run_panda_distributed(sc, ch, specs, pen, rng=11, threads=1)
    b = rt.run_panda_distributed(sc, ch, specs, pen, rng=11, threads=1)
    c = rt.run_panda_distributed(sc, ch, specs, pen, rng=11, threads=3)
    _same_reports(a, b)
    _same_reports(a, c)


def test_message_payload_and_report_length():
    sc, ch, specs = _setup(3)
    res = rt.run_panda_distributed(sc, ch, specs, PenaltyConfig(max_outer_iters=7), rng=0)
    assert res.iterations == len(res.reports) == len(res.wall_ms) == 7
    assert res.termination == Termination.ITERATION_CAP
    assert res.message_payloads == [3 * 2 * 2] * 7


def test_centralized_al_monotone_per_iteration():
    sc, ch, specs = _setup(2)
    res = rt.run_centralized_admm(sc, ch, specs, PenaltyConfig(max_outer_iters=40), rng=1)
    for rep in res.reports:
        assert rep.augmented_lagrangian <= rep.al_before_sweep + 1e-6 * abs(rep.al_before_sweep)


def test_infeasibility_carries_ap_and_iteration(monkeypatch):
    sc, ch, specs = _setup(2)
    real = hs.update_U
    calls = {"n": 0}

    def flaky(state, info=None):
        calls["n"] += 1
        if calls["n"] == 4:
            raise hs.InfeasibleSubproblem("budget", min_mse=9.0)
        return real(state, info)

    monkeypatch.setattr(hs, "update_U", flaky)
    with pytest.raises(hs.InfeasibleSubproblem) as exc:
        rt.run_panda_distributed(sc, ch, specs, PenaltyConfig(max_outer_iters=5), rng=0, threads=1)
    assert exc.value.ap == 1 and exc.value.iteration == 2 and exc.value.min_mse == 9.0


def test_spec_count_mismatch():
    sc, ch, specs = _setup(2)
    with pytest.raises(ValueError):
        rt.run_panda_distributed(sc, ch, specs[:1], PenaltyConfig(max_outer_iters=2))
    with pytest.raises(ValueError):
        rt.run_centralized_admm(sc, ch, specs, s1_mode="bogus")
