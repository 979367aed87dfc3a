from dataclasses import replace
import json
import math

import numpy as np
import pytest

from jointshaping._validation import ValidationError
from jointshaping.constellation import make_qam, sample_sequence
from jointshaping.dsp import effective_snr, align, evm, matched_filter_downsample, receive
from jointshaping.nlin import LinkParams
from jointshaping.ssfm import (
    FieldGrid,
    SsfmConfig,
    StepSizeError,
    back_propagate,
    count_steps,
    load_waveform,
    rrc_modulate,
    save_waveform,
    ssfm_propagate,
)

LINK = LinkParams()
CFG = SsfmConfig(n_symbols=1 << 12)
# Without the Kerr term the split-step solution is exact for any step length.
ONE_STEP = SsfmConfig(n_symbols=1 << 12, step_km=LINK.span_length)
ENERGY_RTOL = 1e-9
PHASE_RTOL = 1e-6
ROUND_TRIP_L2 = 1e-6


def qam_field(power, cfg=CFG, seed=0, order=16, link=LINK):
    c = make_qam(order)
    ss = np.random.SeedSequence(seed).spawn(2)
    sx = c.points[sample_sequence(c, cfg.n_symbols, ss[0])]
    sy = c.points[sample_sequence(c, cfg.n_symbols, ss[1])]
    return sx, sy, rrc_modulate(sx, sy, link, power, cfg)


def energy(f):
    return float(np.sum(np.abs(f.pol_x) ** 2 + np.abs(f.pol_y) ** 2))


def cw(power, n=1024, fs=512.0):
    x = np.full(n, math.sqrt(power / 2), dtype=complex)
    return FieldGrid(x, x.copy(), fs)


class TestModulation:
    def test_average_power(self):
        cfg = SsfmConfig(n_symbols=1 << 14)
        sx, sy, f = qam_field(5e-3, cfg)
        # The waveform carries the realized symbol energy; divide it out to remove
        # the sampling spread of a finite random sequence.
        realized = 0.5 * (np.mean(np.abs(sx) ** 2) + np.mean(np.abs(sy) ** 2))
        assert f.power / realized == pytest.approx(5e-3, rel=0.005)
        assert f.power == pytest.approx(5e-3, rel=0.02)

    def test_back_to_back(self):
        sx, sy, f = qam_field(1e-3)
        rx, ry = matched_filter_downsample(f, LINK)
        scale = math.sqrt(1e-3 / 2)
        assert evm(rx / scale, sx) < 1e-3
        assert evm(ry / scale, sy) < 1e-3

    def test_band_limit(self):
        _, _, f = qam_field(1e-3)
        power_spectrum = np.abs(np.fft.fft(f.pol_x)) ** 2
        freqs = np.fft.fftfreq(f.n_samples, 1.0 / f.sample_rate)
        out = np.abs(freqs) > (1 + LINK.rolloff) * LINK.symbol_rate / 2
        assert 10 * np.log10(power_spectrum[out].max() / power_spectrum.max() + 1e-300) < -60

    def test_aliasing_rejected(self):
        with pytest.raises(ValidationError, match="alias"):
            qam_field(1e-3, SsfmConfig(samples_per_symbol=1, n_symbols=1 << 12))

    def test_length_must_be_power_of_two(self):
        with pytest.raises(ValidationError):
            rrc_modulate(np.ones(1000), np.ones(1000), LINK, 1e-3, CFG)


class TestPropagation:
    def test_dispersion_only_is_unitary(self):
        link = replace(LINK, gamma=0.0, alpha_db=0.0)
        _, _, f = qam_field(1e-3)
        out = ssfm_propagate(f, link, CFG, ase=False)
        for a, b in ((f.pol_x, out.pol_x), (f.pol_y, out.pol_y)):
            fa, fb = np.abs(np.fft.fft(a)), np.abs(np.fft.fft(b))
            assert np.max(np.abs(fa - fb)) <= 1e-9 * fa.max()

    def test_lossless_energy_conservation(self):
        link = replace(LINK, alpha_db=0.0)
        _, _, f = qam_field(2e-2)
        out = ssfm_propagate(f, link, CFG, ase=False)
        assert abs(energy(out) - energy(f)) / energy(f) < ENERGY_RTOL

    def test_cw_phase_lossless(self):
        p = 1e-2
        link = replace(LINK, D=0.0, alpha_db=0.0)
        f = cw(p)
        out = ssfm_propagate(f, link, CFG, ase=False)
        np.testing.assert_allclose(np.abs(out.pol_x), np.abs(f.pol_x), rtol=1e-9)
        expected = 8 / 9 * link.gamma * p * link.span_length
        phase = np.angle(out.pol_x[0] / f.pol_x[0])
        phase += 2 * np.pi * round((expected - phase) / (2 * np.pi))
        assert abs(phase - expected) / expected < PHASE_RTOL

    def test_cw_phase_with_loss(self):
        p = 1e-2
        link = replace(LINK, D=0.0)
        f = cw(p)
        out = ssfm_propagate(f, link, CFG, ase=False)
        l_eff = (1 - math.exp(-link.alpha_lin * link.span_length)) / link.alpha_lin
        assert l_eff == pytest.approx(20.7, abs=0.05)
        expected = 8 / 9 * link.gamma * p * l_eff
        phase = np.angle(out.pol_y[5] / f.pol_y[5])
        assert abs(phase - expected) / expected < PHASE_RTOL
        # The amplifier restores the launch power.
        assert out.power == pytest.approx(p, rel=1e-12)

    def test_back_propagation_round_trip(self):
        link = replace(LINK, alpha_db=0.0)
        _, _, f = qam_field(1e-2)
        out = ssfm_propagate(f, link, CFG, ase=False)
        back = back_propagate(out, link, CFG)
        err = math.sqrt(energy(back.replace(back.pol_x - f.pol_x, back.pol_y - f.pol_y)) / energy(f))
        assert err < ROUND_TRIP_L2

    def test_fixed_step_phase_cap(self):
        _, _, f = qam_field(1.0)
        with pytest.raises(StepSizeError, match="adaptive"):
            ssfm_propagate(f, LINK, CFG, ase=False)

    def test_adaptive_step_counts(self):
        cfg = replace(CFG, adaptive=True)
        low = count_steps(qam_field(1e-3, cfg)[2], LINK, cfg)
        high = count_steps(qam_field(2.5e-2, cfg)[2], LINK, cfg)
        assert low >= LINK.span_length / cfg.max_step_km
        assert high > low

    def test_linear_in_input_without_nonlinearity(self):
        link = replace(LINK, gamma=0.0)
        _, _, f = qam_field(1e-3)
        a = ssfm_propagate(f, link, ONE_STEP, ase=False)
        b = ssfm_propagate(f.replace(3 * f.pol_x, 3 * f.pol_y), link, ONE_STEP, ase=False)
        np.testing.assert_allclose(b.pol_x, 3 * a.pol_x, atol=1e-12)

    def test_ase_variance_after_matched_filter(self):
        from jointshaping.nlin import ase_variance

        link = replace(LINK, gamma=0.0)
        cfg = replace(ONE_STEP, n_symbols=1 << 14)
        sx, sy, f = qam_field(1e-3, cfg)
        clean = receive(ssfm_propagate(f, link, cfg, ase=False), link)
        noisy = receive(ssfm_propagate(f, link, cfg, noise_seed=5), link)
        noise = np.concatenate([noisy[0] - clean[0], noisy[1] - clean[1]])
        assert np.mean(np.abs(noise) ** 2) == pytest.approx(ase_variance(link), rel=0.02)

    def test_noise_seed_determinism(self):
        link = replace(LINK, gamma=0.0)
        _, _, f = qam_field(1e-3)
        a = ssfm_propagate(f, link, ONE_STEP, noise_seed=3)
        b = ssfm_propagate(f, link, ONE_STEP, noise_seed=3)
        np.testing.assert_array_equal(a.pol_x, b.pol_x)


@pytest.mark.parametrize("dbm", [10.0, 14.0])
def test_step_halving_changes_snr_little(dbm):
    power = 1e-3 * 10 ** (dbm / 10)
    cfg = SsfmConfig(n_symbols=1 << 12, adaptive=True)
    half = replace(cfg, max_nonlinear_phase=cfg.max_nonlinear_phase / 2, max_step_km=cfg.max_step_km / 2)
    sx, sy, f = qam_field(power, cfg, order=64)
    snrs = []
    for c in (cfg, half):
        rx, ry = receive(ssfm_propagate(f, LINK, c, ase=False), LINK)
        snrs.append(effective_snr(np.concatenate([align(rx, sx), align(ry, sy)]), np.concatenate([sx, sy])))
    assert abs(snrs[0] - snrs[1]) < 0.05


def test_waveform_dump_layout(tmp_path):
    _, _, f = qam_field(1e-3, SsfmConfig(n_symbols=1 << 8, discard_symbols=16))
    sidecar = save_waveform(f, tmp_path / "w.bin")
    raw = np.fromfile(tmp_path / "w.bin", dtype="<f8").reshape(-1, 4)
    np.testing.assert_array_equal(raw[:, 0], f.pol_x.real)
    np.testing.assert_array_equal(raw[:, 3], f.pol_y.imag)
    meta = json.loads(sidecar.read_text())
    assert meta["n_samples"] == f.n_samples
    assert meta["sample_rate_ghz"] == f.sample_rate
    back = load_waveform(tmp_path / "w.bin")
    np.testing.assert_array_equal(back.pol_x, f.pol_x)
    np.testing.assert_array_equal(back.pol_y, f.pol_y)


def test_field_grid_validation():
    with pytest.raises(ValidationError):
        FieldGrid(np.ones(6), np.ones(6), 512.0)
    with pytest.raises(ValidationError):
        FieldGrid(np.ones(8), np.ones(4), 512.0)
    with pytest.raises(ValidationError):
        SsfmConfig(n_symbols=512, discard_symbols=256)
