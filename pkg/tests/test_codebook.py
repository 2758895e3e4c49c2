import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from beamtrack.array import ArrayGeometry, array_pattern, normalized_steering, resteer
from beamtrack.channel import los_channel, path_gain
from beamtrack.codebook import (Codebook, CodebookEntry, EvolutionParams, FitnessEvaluator,
                                FitnessParams, codebook_from_dict, codebook_to_dict,
                                evolve_awv, fitness, load_codebook, pencil_codebook,
                                save_codebook, svd_beamformer, wide_centers, wide_codebook)

G64 = ArrayGeometry(64)
BW15 = np.deg2rad(15.0)


def random_awv(rng, n):
    w = rng.normal(size=n) + 1j * rng.normal(size=n)
    return w / np.linalg.norm(w)


# -- pencil codebook ----------------------------------------------------------

def test_pencil_gram_identity():
    cb = pencil_codebook(ArrayGeometry(4), 4)
    w = cb.weights
    np.testing.assert_allclose(w.conj() @ w.T, np.eye(4), atol=1e-10)
    assert all(e.beamwidth == 0 for e in cb)


def test_pencil_on_grid_full_gain():
    cb = pencil_codebook(G64, 64)
    for k in (0, 17, 40, 63):
        gains = array_pattern(G64, cb.weights, cb.centers[k])
        assert np.argmax(gains) == k
        assert gains[k] == pytest.approx(64, rel=1e-12)


def test_pencil_straddle_bound():
    cb = pencil_codebook(G64, 64)
    u = np.sin(cb.centers)
    mid = np.arcsin((u[:-1] + u[1:]) / 2)
    best = array_pattern(G64, cb.weights, mid).max(axis=0)
    # Dirichlet kernel half a bin off peak: |sin(pi/2) / (N sin(pi/2N))|^2 * N
    oracle = 64 * (1 / (64 * np.sin(np.pi / 128))) ** 2
    np.testing.assert_allclose(best, oracle, rtol=1e-9)
    assert np.all(best >= 64 * (2 / np.pi) ** 2)


def test_pencil_rejects_zero_beams():
    with pytest.raises(ValueError):
        pencil_codebook(G64, 0)


# -- containers ---------------------------------------------------------------

def test_entry_validation():
    with pytest.raises(ValueError):
        CodebookEntry(np.ones(4) / 2, 2.0)
    with pytest.raises(ValueError):
        CodebookEntry(np.ones(4), 0.0)


def test_codebook_validation():
    g = ArrayGeometry(4)
    a = CodebookEntry(normalized_steering(g, 0.1), 0.1)
    b = CodebookEntry(normalized_steering(g, -0.1), -0.1)
    with pytest.raises(ValueError):
        Codebook([], g)
    with pytest.raises(ValueError):
        Codebook([a, b], g)
    with pytest.raises(ValueError):
        Codebook([b, b], g)
    with pytest.raises(ValueError):
        Codebook([CodebookEntry(normalized_steering(ArrayGeometry(8), 0.0), 0.0)], g)
    assert len(Codebook([b, a], g)) == 2


# -- fitness ------------------------------------------------------------------

def test_fitness_ideal_sector_construction():
    params = FitnessParams(BW15)
    ev = FitnessEvaluator(G64, params)
    lo, hi = params.window
    a_m = 3.0
    mag = np.where((ev.angles >= lo - 1e-9) & (ev.angles <= hi + 1e-9), a_m, 0.0)
    f1, f2, f3 = ev.terms_from_magnitude(mag)
    assert f1 == pytest.approx(0.0, abs=1e-12)
    assert f2 == pytest.approx(0.0, abs=1e-12)
    assert f3 == pytest.approx(a_m ** 2, rel=1e-12)
    assert ev.combine(np.array([f1, f2, f3])) == pytest.approx(-params.beta2 * a_m ** 2)


def test_fitness_terms_match_direct_trapezoid():
    params = FitnessParams(BW15, 0.2, 1.5, 0.7)
    awv = random_awv(np.random.default_rng(3), 64)
    ev = FitnessEvaluator(G64, params)
    phi = ev.angles
    mag = np.sqrt(array_pattern(G64, awv, phi))
    lo, hi = params.window
    inb = (phi >= lo - 1e-9) & (phi <= hi + 1e-9)
    x_in, m_in = phi[inb], mag[inb]
    width = x_in[-1] - x_in[0]
    a_m = np.trapezoid(m_in, x_in) / width
    f1 = np.trapezoid((a_m - m_in) ** 2, x_in) / width
    f3 = np.trapezoid(m_in ** 2, x_in) / width
    left, right = phi < lo - 1e-9, phi > hi + 1e-9
    out = np.trapezoid(mag[left] ** 2, phi[left]) + np.trapezoid(mag[right] ** 2, phi[right])
    f2 = out / ((phi[left][-1] - phi[0]) + (phi[-1] - phi[right][0]))
    np.testing.assert_allclose(ev.terms(awv), [f1, f2, f3], rtol=1e-10)
    assert fitness(G64, awv, params) == pytest.approx(f1 + 1.5 * f2 - 0.7 * f3, rel=1e-10)


def test_pencil_beam_not_flat_and_leaks():
    f1, f2, f3 = FitnessEvaluator(G64, FitnessParams(BW15)).terms(normalized_steering(G64, 0.0))
    assert f1 > 0 and f2 > 0 and f3 > 0


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 2 * np.pi), st.integers(0, 2 ** 32 - 1))
def test_fitness_global_phase_invariance(psi, seed):
    params = FitnessParams(BW15)
    awv = random_awv(np.random.default_rng(seed), 64)
    assert fitness(G64, awv * np.exp(1j * psi), params) == pytest.approx(fitness(G64, awv, params),
                                                                         rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("kwargs", [
    dict(beamwidth=0.0), dict(beamwidth=np.pi), dict(beamwidth=BW15, beta1=-1),
    dict(beamwidth=BW15, grid_step=BW15 / 5), dict(beamwidth=BW15, target_center=1.5),
])
def test_fitness_params_validation(kwargs):
    with pytest.raises(ValueError):
        FitnessParams(**kwargs)


@pytest.mark.parametrize("kwargs", [dict(population_size=1), dict(stagnation_limit=0), dict(eta_max=1.0)])
def test_evolution_params_validation(kwargs):
    with pytest.raises(ValueError):
        EvolutionParams(**kwargs)


# -- evolutionary designer ----------------------------------------------------

SMALL_EVO = EvolutionParams(population_size=20, stagnation_limit=10, eta_max=64, rng_seed=5)
G16 = ArrayGeometry(16)
P16 = FitnessParams(np.deg2rad(30.0))


def test_evolution_trace_non_increasing_and_terminates():
    res = evolve_awv(G16, P16, SMALL_EVO)
    trace = np.array(res.trace)
    assert np.all(np.diff(trace) <= 0)
    assert res.eta >= SMALL_EVO.eta_max
    assert res.iterations == len(trace)
    assert res.fitness == trace[-1]
    assert res.fitness == pytest.approx(fitness(G16, res.awv, P16), rel=1e-9)


def test_evolution_output_is_phase_only_unit_norm():
    awv = evolve_awv(G16, P16, SMALL_EVO).awv
    assert np.linalg.norm(awv) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(np.abs(awv), 1 / 4, atol=1e-12)


def test_evolution_deterministic_per_seed():
    a = evolve_awv(G16, P16, SMALL_EVO)
    b = evolve_awv(G16, P16, SMALL_EVO)
    assert np.array_equal(a.awv, b.awv)
    assert a.trace == b.trace
    c = evolve_awv(G16, P16, EvolutionParams(20, 10, 64, rng_seed=6))
    assert not np.array_equal(a.awv, c.awv)


def test_evolution_beats_pencil_objective():
    res = evolve_awv(G16, P16, SMALL_EVO)
    assert res.fitness < fitness(G16, normalized_steering(G16, 0.0), P16)


# -- wide codebook ------------------------------------------------------------

def test_wide_centers_counts():
    assert len(wide_centers(BW15)) == 12
    for bw, n in [(5, 36), (10, 18), (20, 9), (30, 6)]:
        c = wide_centers(np.deg2rad(bw))
        assert len(c) == n
        np.testing.assert_allclose(np.diff(c), np.deg2rad(bw))
        assert c[0] == pytest.approx(-np.pi / 2 + np.deg2rad(bw) / 2)


def test_wide_codebook_from_prototype():
    proto = random_awv(np.random.default_rng(0), 64)
    cb = wide_codebook(G64, BW15, prototype=proto)
    assert len(cb) == 12
    for e in cb:
        assert np.linalg.norm(e.awv) == pytest.approx(1.0, abs=1e-12)
        assert e.beamwidth == pytest.approx(BW15)


def test_resteered_entry_is_shift_in_sine_space():
    proto = np.exp(1j * np.random.default_rng(1).uniform(0, 2 * np.pi, 64)) / 8
    cb = wide_codebook(G64, BW15, prototype=proto)
    k = 3
    u0 = np.sin(cb.centers[k])
    u = np.linspace(-0.5, 0.5, 401)
    shifted = array_pattern(G64, cb[k].awv, np.arcsin(np.clip(u + u0, -1, 1)))
    base = array_pattern(G64, proto, np.arcsin(u))
    ok = np.abs(u + u0) <= 1
    np.testing.assert_allclose(shifted[ok], base[ok], rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(np.abs(cb[k].awv), 1 / 8, atol=1e-12)


def test_wide_codebook_designs_once():
    evo = EvolutionParams(10, 3, 8, rng_seed=2)
    params = FitnessParams(np.deg2rad(30.0))
    cb = wide_codebook(G16, np.deg2rad(30.0), params, evo)
    proto = evolve_awv(G16, params, evo).awv
    np.testing.assert_allclose(cb[0].awv, resteer(G16, proto, cb.centers[0]), atol=1e-12)


def test_wide_codebook_per_center():
    evo = EvolutionParams(10, 3, 8, rng_seed=2)
    cb = wide_codebook(G16, np.deg2rad(30.0), FitnessParams(np.deg2rad(30.0)), evo, per_center=True)
    assert len(cb) == 6
    assert all(np.linalg.norm(e.awv) == pytest.approx(1.0, abs=1e-12) for e in cb)


def test_wide_codebook_rejects_nonpositive_width():
    with pytest.raises(ValueError):
        wide_codebook(G64, 0.0)


# -- SVD beamformer -----------------------------------------------------------

@pytest.mark.parametrize("m, n, aoa, aod", [(1, 64, 0.0, 0.3), (4, 8, -0.7, 1.1), (3, 3, 0.2, -0.2)])
def test_svd_is_steering(m, n, aoa, aod):
    g_rx, g_tx = ArrayGeometry(m), ArrayGeometry(n)
    alpha = path_gain(4.0, 0.005)
    ch = los_channel(g_rx, g_tx, alpha, aoa, aod)
    f_ap, f_sta = svd_beamformer(ch)
    assert abs(np.vdot(normalized_steering(g_tx, aod), f_ap)) == pytest.approx(1.0, abs=1e-9)
    assert abs(np.vdot(normalized_steering(g_rx, aoa), f_sta)) == pytest.approx(1.0, abs=1e-9)
    achieved = abs(f_sta.conj() @ ch.matrix @ f_ap)
    assert achieved == pytest.approx(np.sqrt(m * n) * abs(alpha), rel=1e-9)


def test_svd_scalar_channel():
    ch = los_channel(ArrayGeometry(1), ArrayGeometry(1), 1.0, 0.0, 0.0)
    f_ap, f_sta = svd_beamformer(ch)
    np.testing.assert_allclose(f_ap, [1.0], atol=1e-15)
    np.testing.assert_allclose(f_sta, [1.0], atol=1e-15)


# -- file format --------------------------------------------------------------

def test_json_round_trip(tmp_path):
    proto = random_awv(np.random.default_rng(7), 64)
    cb = wide_codebook(G64, BW15, prototype=proto)
    path = tmp_path / "cb.json"
    save_codebook(cb, path)
    back = load_codebook(path)
    assert back.geometry == cb.geometry
    assert np.array_equal(back.weights, cb.weights)
    assert np.array_equal(back.centers, cb.centers)
    data = json.loads(path.read_text())
    assert data["entries"][0]["center_deg"] == pytest.approx(-82.5)
    assert data["entries"][0]["beamwidth_deg"] == pytest.approx(15.0)
    assert codebook_to_dict(codebook_from_dict(data)) == data
