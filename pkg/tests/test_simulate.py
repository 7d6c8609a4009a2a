import math

import numpy as np
import pytest

from tremorkit.dsp import (FilterSpec, TimeSeries, design_filter,
                           dominant_frequency, periodogram, psd_from_rms,
                           rms_detrended)
from tremorkit.session import FN, HM, PP, RP
from tremorkit.simulate import (ACCEL_SENSITIVITY, GYRO_SENSITIVITY,
                                MAG_SENSITIVITY, Recording, ReachMotion,
                                RollMotion, SensorConfig, TaskScenario,
                                TremorSpec, _reach_profile, default_scenario,
                                dequantize, gen_noise, quantize, synth_task,
                                vibration_scenario)

CFG = SensorConfig()


# --------------------------------------------------------------------------
# Sensor config
# --------------------------------------------------------------------------

def test_sensitivities_follow_range():
    assert SensorConfig(accel_range_g=2).accel_sensitivity == 15.0
    assert SensorConfig(accel_range_g=16).accel_sensitivity == 1.875
    assert SensorConfig(gyro_range_dps=2000).gyro_sensitivity == 15.0
    assert SensorConfig(mag_range_gauss=4).mag_sensitivity == 6842.0
    with pytest.raises(ValueError):
        SensorConfig(accel_range_g=3)


def test_full_scale_fits_16_bits():
    for rng_g, sens in ACCEL_SENSITIVITY.items():
        assert sens * rng_g * 1000 <= 32768
    for rng_d, sens in GYRO_SENSITIVITY.items():
        assert sens * rng_d <= 32768
    for rng_G, sens in MAG_SENSITIVITY.items():
        assert sens * rng_G <= 32768


def test_config_doc_round_trip():
    cfg = SensorConfig(accel_range_g=4, gyro_range_dps=1000)
    assert SensorConfig.from_doc(cfg.to_doc()) == cfg


# --------------------------------------------------------------------------
# Noise generator
# --------------------------------------------------------------------------

def test_noise_rms_matches_psd_times_sqrt_bw():
    ns = gen_noise(CFG, "accel", 100_000, seed=1)
    rms_mg = rms_detrended(ns)
    assert rms_mg == pytest.approx(3.7, rel=0.03)
    assert psd_from_rms(rms_mg * 1000.0, CFG.noise_bandwidth) == pytest.approx(260.0, rel=0.03)


def test_noise_zero_psd_all_zero():
    cfg = SensorConfig(accel_noise_psd_ug=0.0)
    ns = gen_noise(cfg, "accel", 1000, seed=0)
    assert np.all(ns.samples == 0.0)


def test_noise_reproducible_per_seed():
    a = gen_noise(CFG, "gyro", 512, seed=9).samples
    b = gen_noise(CFG, "gyro", 512, seed=9).samples
    c = gen_noise(CFG, "gyro", 512, seed=10).samples
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_noise_white_autocorr_bound_monte_carlo():
    from tremorkit.dsp import autocorr_normalized
    n = 20_000
    bound = 4.0 / math.sqrt(n)
    for seed in range(20):
        ns = gen_noise(CFG, "accel", n, seed=1000 + seed)
        r = autocorr_normalized(ns, max_lag=50)
        assert np.all(np.abs(r[1:]) < bound)


def test_noise_gaussian_shape():
    # skewness ~ N(0, 6/n), excess kurtosis ~ N(0, 24/n): check 5-sigma bounds
    n = 200_000
    ns = gen_noise(CFG, "accel", n, seed=3).samples
    z = (ns - ns.mean()) / ns.std()
    skew = np.mean(z ** 3)
    kurt = np.mean(z ** 4) - 3.0
    assert abs(skew) < 5 * math.sqrt(6.0 / n)
    assert abs(kurt) < 5 * math.sqrt(24.0 / n)


def test_mag_noise_uses_per_axis_rms():
    ns = gen_noise(CFG, "mag", 100_000, seed=4, axis=2)
    assert rms_detrended(ns) == pytest.approx(4.1e-3, rel=0.03)


# --------------------------------------------------------------------------
# Task synthesis
# --------------------------------------------------------------------------

def test_rp_gravity_only_norm():
    scenario = TaskScenario(task=RP, duration_s=10.0, tremor=None, seed=0)
    cfg = SensorConfig(accel_noise_psd_ug=0.0, gyro_noise_psd_dps=0.0,
                       mag_rms_noise_mgauss=(0.0, 0.0, 0.0))
    rec = synth_task(scenario, cfg)
    norm = np.linalg.norm(rec.accel_mg, axis=1)
    assert np.allclose(norm, 1000.0, atol=1e-9)


def test_rp_with_noise_norm_near_1g():
    rec = synth_task(default_scenario(RP, seed=1), CFG)
    norm = np.linalg.norm(rec.accel_mg, axis=1)
    assert abs(norm.mean() - 1000.0) < 10.0


def test_pp_periodogram_peak_near_center():
    rec = synth_task(default_scenario(PP, seed=2), CFG)
    y = rec.accel_mg[:, 1]
    spec = periodogram(TimeSeries(y - y.mean(), CFG.fs))
    assert dominant_frequency(spec, min_freq=0.5) == pytest.approx(12.7, abs=0.5)


def test_fn_band_rms_and_cycles():
    scenario = default_scenario(FN, seed=3)
    rec = synth_task(scenario, CFG)
    bp = design_filter(FilterSpec("butterworth", 3, "bandpass", (0.25, 2.25)), CFG.fs)
    y = rec.accel_mg[:, 1]
    band = bp.process(y - y.mean())
    rms = float(np.sqrt(np.mean(band ** 2)))
    assert 250.0 <= rms <= 400.0


def test_reach_profile_one_cycle_per_repetition():
    """Oracle: integrate the acceleration twice; displacement must rise to a
    single peak and return once per repetition, ending near zero."""
    motion = ReachMotion(repetitions=3, rep_duration_s=3.0, peak_accel_mg=580.0)
    fs = 200.0
    n = round(12.0 * fs)
    acc = _reach_profile(motion, n, fs)
    vel = np.cumsum(acc) / fs
    disp = np.cumsum(vel) / fs
    assert abs(vel[-1]) < 1e-6 * np.abs(vel).max()       # momentum returns to zero
    assert abs(disp[-1]) < 1e-3 * np.abs(disp).max()
    peak = np.abs(disp).max()
    crossings = np.nonzero(np.diff((disp > 0.5 * peak).astype(int)) == 1)[0]
    assert crossings.size == motion.repetitions           # one excursion per rep


def test_hm_gyro_roll_amplitude():
    scenario = default_scenario(HM, seed=4)
    rec = synth_task(scenario, CFG)
    m = scenario.macro
    expected_peak = m.amplitude_deg * 2 * math.pi * m.freq_hz
    assert np.abs(rec.gyro_dps[:, 0]).max() == pytest.approx(expected_peak, rel=0.05)
    # accelerometer sees gravity rotating through the roll angle
    assert np.ptp(rec.accel_mg[:, 1]) > 500.0


def test_deterministic_with_stochastic_terms_zeroed():
    cfg = SensorConfig(accel_noise_psd_ug=0.0, gyro_noise_psd_dps=0.0,
                       mag_rms_noise_mgauss=(0.0, 0.0, 0.0))
    scenario = TaskScenario(task=HM, duration_s=5.0, tremor=None,
                            macro=RollMotion(), seed=123)
    a = synth_task(scenario, cfg)
    b = synth_task(scenario, cfg)
    assert np.array_equal(a.accel_mg, b.accel_mg)
    assert np.array_equal(a.gyro_dps, b.gyro_dps)
    assert np.array_equal(a.mag_gauss, b.mag_gauss)


def test_same_seed_reproducible_with_noise():
    a = synth_task(default_scenario(PP, seed=77), CFG)
    b = synth_task(default_scenario(PP, seed=77), CFG)
    assert np.array_equal(a.accel_mg, b.accel_mg)


def test_scenario_json_round_trip():
    for task in (RP, PP, FN, HM):
        scenario = default_scenario(task, seed=5)
        assert TaskScenario.from_json(scenario.to_json()) == scenario


def test_tremor_band_classification():
    assert TremorSpec(center_hz=12.7).band() == "physiological"
    assert TremorSpec(center_hz=4.0).band() == "pd_rest"
    assert TremorSpec(center_hz=40.0).band() is None


# --------------------------------------------------------------------------
# Vibration bench
# --------------------------------------------------------------------------

def test_vibration_rms_analytic():
    series = vibration_scenario(10.0, 10.0, 10.0, seed=0)
    expected = 10.0 / 2 / 9.80665 * 1000.0 / math.sqrt(2)   # 360.5 mg
    assert rms_detrended(series) == pytest.approx(expected, rel=0.02)


def test_vibration_peak_to_peak():
    series = vibration_scenario(10.0, 10.0, 10.0, seed=1)
    pkpk = series.samples.max() - series.samples.min()
    noise_allowance = 8 * CFG.noise_sigma("accel")
    assert abs(pkpk - 1019.7) < noise_allowance + 5.0


def test_vibration_zero_amplitude_is_noise_only():
    series = vibration_scenario(10.0, 0.0, 10.0, seed=2)
    ref = gen_noise(CFG, "accel", len(series), seed=99)
    assert rms_detrended(series) == pytest.approx(rms_detrended(ref), rel=0.1)


def test_vibration_argmax_at_drive_frequency():
    series = vibration_scenario(10.0, 10.0, 10.0, seed=3)
    spec = periodogram(TimeSeries(series.samples - series.samples.mean(), series.fs))
    assert dominant_frequency(spec) == pytest.approx(10.0, abs=spec.delta_f)


def test_vibration_rejects_supra_nyquist():
    with pytest.raises(ValueError):
        vibration_scenario(150.0, 1.0, 1.0)


# --------------------------------------------------------------------------
# Quantization
# --------------------------------------------------------------------------

def test_quantize_1g_at_2g_range():
    rec = Recording(accel_mg=np.full((4, 3), 1000.0), gyro_dps=np.zeros((4, 3)),
                    mag_gauss=np.zeros((4, 3)), fs=200.0)
    q = quantize(rec, CFG)
    assert np.all(q.counts[:, 0:3] == 15_000)


def test_quantize_zero_is_zero():
    rec = Recording(accel_mg=np.zeros((4, 3)), gyro_dps=np.zeros((4, 3)),
                    mag_gauss=np.zeros((4, 3)), fs=200.0)
    q = quantize(rec, CFG)
    assert np.all(q.counts == 0) and q.saturation_count == 0


def test_dequantize_within_half_lsb():
    rng = np.random.default_rng(2)
    n = 40_000
    rec = Recording(
        accel_mg=rng.uniform(-1999, 1999, (n, 3)),
        gyro_dps=rng.uniform(-499, 499, (n, 3)),
        mag_gauss=rng.uniform(-3.99, 3.99, (n, 3)),
        fs=200.0,
    )
    q = quantize(rec, CFG)
    d = dequantize(q, CFG)
    assert np.abs(d.accel_mg - rec.accel_mg).max() <= 0.5 / CFG.accel_sensitivity + 1e-12
    assert np.abs(d.gyro_dps - rec.gyro_dps).max() <= 0.5 / CFG.gyro_sensitivity + 1e-12
    assert np.abs(d.mag_gauss - rec.mag_gauss).max() <= 0.5 / CFG.mag_sensitivity + 1e-12
    assert q.saturation_count == 0


def test_quantize_clips_and_counts():
    rec = Recording(accel_mg=np.array([[2500.0, 0.0, 0.0]]),
                    gyro_dps=np.zeros((1, 3)), mag_gauss=np.zeros((1, 3)), fs=200.0)
    q = quantize(rec, CFG)
    assert q.counts[0, 0] == 30_000
    assert q.saturation_count == 1 and bool(q.saturated_rows[0])


def test_default_scenarios_never_saturate():
    for task in (RP, PP, FN, HM):
        for seed in (0, 1, 2):
            rec = synth_task(default_scenario(task, seed=seed), CFG)
            assert quantize(rec, CFG).saturation_count == 0
