import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tremorkit.dsp import (FilterSpec, TimeSeries, analytic_magnitude,
                           autocorr_normalized, design_filter,
                           dominant_frequency, hilbert_envelope, pca_scores,
                           peak_stats, periodogram, psd_from_rms,
                           rms_detrended, short_term_power, stft)

FS = 200.0


def sine(freq, amp=1.0, duration=10.0, fs=FS, phase=0.0):
    t = np.arange(round(duration * fs)) / fs
    return TimeSeries(amp * np.sin(2 * np.pi * freq * t + phase), fs)


# --------------------------------------------------------------------------
# Time-domain statistics
# --------------------------------------------------------------------------

def test_rms_constant_is_zero():
    assert rms_detrended(TimeSeries(np.full(100, 3.3), FS)) == 0.0


def test_rms_sine_analytic():
    # integer number of periods: RMS = A / sqrt(2) exactly
    x = sine(5.0, amp=2.5, duration=10.0)
    assert rms_detrended(x) == pytest.approx(2.5 / math.sqrt(2), rel=1e-9)


def test_rms_gaussian_sigma():
    rng = np.random.default_rng(11)
    x = TimeSeries(3.06 * rng.standard_normal(100_000), FS)
    assert rms_detrended(x) == pytest.approx(3.06, rel=0.03)


def test_rms_needs_two_samples():
    with pytest.raises(ValueError):
        rms_detrended(TimeSeries(np.array([1.0]), FS))


def test_peak_stats_constant():
    assert peak_stats(TimeSeries(np.full(10, 7.0), FS)) == (0.0, 0.0)


def test_peak_stats_sine():
    x = sine(10.0, amp=510.0, duration=10.0)
    pkpk, abs_peak = peak_stats(x)
    assert pkpk == pytest.approx(1020.0, rel=1e-3)
    assert abs_peak == pytest.approx(510.0, rel=1e-3)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=300))
def test_peak_stats_brute_force(values):
    x = TimeSeries(np.array(values), FS)
    pkpk, abs_peak = peak_stats(x)
    w = np.array(values) - np.mean(values)
    assert pkpk == pytest.approx(max(w) - min(w), abs=1e-9)
    assert abs_peak == pytest.approx(max(abs(v) for v in w), abs=1e-9)


def test_psd_from_rms_published_values():
    assert psd_from_rms(3060.0, 200.0) == pytest.approx(216.0, abs=0.5)   # ug in, ug/rtHz out
    assert psd_from_rms(3700.0, 200.0) == pytest.approx(261.6, abs=0.5)
    assert psd_from_rms(0.0, 50.0) == 0.0
    with pytest.raises(ValueError):
        psd_from_rms(1.0, 0.0)


# --------------------------------------------------------------------------
# Periodogram
# --------------------------------------------------------------------------

def test_periodogram_parseval():
    rng = np.random.default_rng(0)
    for n in (256, 1000, 777):
        x = TimeSeries(rng.standard_normal(n), FS)
        spec = periodogram(x)
        assert spec.power.sum() == pytest.approx(np.mean(x.samples ** 2), rel=1e-6)


def test_periodogram_parseval_zero_padded():
    rng = np.random.default_rng(1)
    x = TimeSeries(rng.standard_normal(300), FS)
    spec = periodogram(x, nfft=1024)
    assert spec.power.sum() == pytest.approx(np.mean(x.samples ** 2), rel=1e-6)
    assert spec.delta_f == pytest.approx(FS / 1024)


def test_periodogram_pure_sine_argmax():
    spec = periodogram(sine(10.0, duration=10.0))
    assert dominant_frequency(spec) == pytest.approx(10.0, abs=spec.delta_f)


def test_periodogram_dc_only():
    spec = periodogram(TimeSeries(np.full(500, 2.0), FS))
    assert int(np.argmax(spec.power)) == 0
    assert spec.power[1:].sum() == pytest.approx(0.0, abs=1e-12)


def test_periodogram_white_noise_flat():
    # averaged over 200 draws no bin may exceed the mean by the 5-sigma bound
    rng = np.random.default_rng(42)
    n, reps = 256, 200
    acc = np.zeros(n // 2 + 1)
    for _ in range(reps):
        acc += periodogram(TimeSeries(rng.standard_normal(n), FS)).power
    acc /= reps
    interior = acc[1:-1]
    mean = interior.mean()
    # each interior bin is chi^2_2-ish: relative sd = 1/sqrt(reps)
    assert np.all(interior < mean * (1 + 5.0 / math.sqrt(reps)))


def test_periodogram_empty_errors():
    with pytest.raises(ValueError):
        periodogram(TimeSeries(np.array([]), FS))


# --------------------------------------------------------------------------
# Autocorrelation
# --------------------------------------------------------------------------

def test_autocorr_lag0_is_one():
    rng = np.random.default_rng(3)
    r = autocorr_normalized(TimeSeries(rng.standard_normal(500), FS), max_lag=10)
    assert r[0] == 1.0


def test_autocorr_white_noise_bound():
    n = 100_000
    rng = np.random.default_rng(7)
    r = autocorr_normalized(TimeSeries(rng.standard_normal(n), FS), max_lag=100)
    assert np.all(np.abs(r[1:]) < 4.0 / math.sqrt(n))


def test_autocorr_sine_periodicity():
    fs = 200.0
    x = sine(10.0, duration=200.0, fs=fs)      # period = 20 samples, N = 40000
    r = autocorr_normalized(x, max_lag=25)
    n = len(x)
    # biased estimator at an exact-period lag is (N - k)/N
    assert r[20] == pytest.approx((n - 20) / n, abs=1e-9)
    assert r[20] == pytest.approx(1.0, abs=1e-3)


def test_autocorr_zero_variance_errors():
    with pytest.raises(ValueError):
        autocorr_normalized(TimeSeries(np.ones(50), FS), max_lag=5)


# --------------------------------------------------------------------------
# Filters
# --------------------------------------------------------------------------

BUTTER_BP = FilterSpec("butterworth", 3, "bandpass", (0.25, 20.0))


def test_cutoff_magnitudes_match_prototype():
    casc = design_filter(BUTTER_BP, FS)
    for edge in (0.25, 20.0):
        assert 20 * math.log10(abs(casc.response_at(edge))) == pytest.approx(
            20 * math.log10(1 / math.sqrt(2)), abs=0.1)
    cheb = FilterSpec("chebyshev1", 2, "lowpass", (5.0,), ripple_db=0.5)
    casc2 = design_filter(cheb, FS)
    assert 20 * math.log10(abs(casc2.response_at(5.0))) == pytest.approx(-0.5, abs=0.1)


def test_bandpass_response_against_analytic_20_points():
    casc = design_filter(BUTTER_BP, FS)
    freqs = np.concatenate([np.linspace(0.1, 30, 15), [0.25, 5, 20, 40, 80]])
    for f in freqs:
        mine = abs(casc.response_at(float(f)))
        ref = analytic_magnitude(BUTTER_BP, FS, float(f))
        db_err = abs(20 * math.log10(max(mine, 1e-300)) -
                     20 * math.log10(max(ref, 1e-300)))
        assert db_err < 0.1, f"{f} Hz: {mine} vs {ref}"


def test_chebyshev_response_against_analytic():
    for resp, cutoffs in [("lowpass", (4.0,)), ("highpass", (2.0,)),
                          ("bandpass", (1.0, 15.0))]:
        spec = FilterSpec("chebyshev1", 2, resp, cutoffs, ripple_db=0.5)
        casc = design_filter(spec, FS)
        for f in np.linspace(0.2, 90, 20):
            mine = abs(casc.response_at(float(f)))
            ref = analytic_magnitude(spec, FS, float(f))
            assert mine == pytest.approx(ref, rel=1e-6, abs=1e-12)


def test_matches_scipy_design():
    scipy_signal = pytest.importorskip("scipy.signal")
    sos = scipy_signal.butter(3, [0.25, 20.0], btype="bandpass", fs=FS, output="sos")
    casc = design_filter(BUTTER_BP, FS)
    for f in np.linspace(0.2, 60, 25):
        w, h = scipy_signal.sosfreqz(sos, worN=[2 * np.pi * f / FS])
        assert abs(casc.response_at(float(f))) == pytest.approx(abs(h[0]), rel=1e-6,
                                                                abs=1e-12)


def test_dc_blocked_by_highpass_and_bandpass():
    for spec in (BUTTER_BP, FilterSpec("chebyshev1", 2, "highpass", (1.0,))):
        casc = design_filter(spec, FS)
        y = casc.process(np.ones(6000))
        assert abs(y[-500:]).max() < 1e-4      # steady state settles to zero


def test_40hz_attenuation_order3():
    casc = design_filter(BUTTER_BP, FS)
    x = sine(40.0, duration=20.0).samples
    y = casc.process(x)
    atten_db = -20 * math.log10(np.abs(y[2000:]).max())
    assert atten_db >= 18.0


def test_chunked_equals_batch_bit_exact():
    rng = np.random.default_rng(17)
    x = rng.standard_normal(4096)
    batch = design_filter(BUTTER_BP, FS).process(x)
    chunked = design_filter(BUTTER_BP, FS)
    out = [chunked.process(x[i:i + 97]) for i in range(0, x.size, 97)]
    assert np.array_equal(np.concatenate(out), batch)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 400), min_size=1, max_size=12), st.integers(0, 10**6))
def test_chunked_equals_batch_any_chunking(sizes, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(1500)
    batch = design_filter(BUTTER_BP, FS).process(x)
    casc = design_filter(BUTTER_BP, FS)
    out, pos, i = [], 0, 0
    while pos < x.size:
        n = sizes[i % len(sizes)]
        out.append(casc.process(x[pos:pos + n]))
        pos += n
        i += 1
    assert np.array_equal(np.concatenate(out), batch)


def test_filter_spec_validation():
    with pytest.raises(ValueError):
        FilterSpec("butterworth", 3, "bandpass", (20.0, 0.25))
    with pytest.raises(ValueError):
        FilterSpec("butterworth", 5, "lowpass", (10.0,))
    with pytest.raises(ValueError):
        design_filter(FilterSpec("butterworth", 2, "lowpass", (120.0,)), FS)
    with pytest.raises(ValueError):
        FilterSpec("bessel", 2, "lowpass", (10.0,))


# --------------------------------------------------------------------------
# Envelope / short-term power
# --------------------------------------------------------------------------

def test_envelope_of_sine_is_amplitude():
    x = sine(12.0, amp=4.0, duration=10.0)
    env = hilbert_envelope(x).samples
    mid = env[len(env) // 10: -len(env) // 10]
    assert np.all(np.abs(mid - 4.0) < 0.08)    # within 2% away from the edges


def test_envelope_zero_signal():
    env = hilbert_envelope(TimeSeries(np.zeros(64), FS))
    assert np.all(env.samples == 0.0)


def test_envelope_am_modulation():
    t = np.arange(round(10 * FS)) / FS
    mod = 1.0 + 0.5 * np.cos(2 * np.pi * 1.0 * t)
    x = TimeSeries(mod * np.sin(2 * np.pi * 12.0 * t), FS)
    env = hilbert_envelope(x).samples
    sl = slice(200, -200)
    corr = np.corrcoef(env[sl], mod[sl])[0, 1]
    assert corr > 0.99


def test_envelope_min_length():
    with pytest.raises(ValueError):
        hilbert_envelope(TimeSeries(np.ones(4), FS))


def test_short_term_power_constant():
    out = short_term_power(TimeSeries(np.full(100, 3.0), FS), window_len=10)
    assert np.allclose(out.samples, 9.0)


def test_short_term_power_sine_integer_periods():
    x = sine(10.0, amp=2.0, duration=5.0)    # period 20 samples
    out = short_term_power(x, window_len=40)
    assert np.allclose(out.samples, 2.0, atol=1e-6)


@given(st.integers(1, 40), st.integers(0, 10**6))
def test_short_term_power_equals_brute_force(w, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(w + rng.integers(0, 120))
    got = short_term_power(TimeSeries(x, FS), w).samples
    brute = np.array([np.mean(x[i:i + w] ** 2) for i in range(x.size - w + 1)])
    assert got == pytest.approx(brute, rel=1e-9, abs=1e-12)


def test_short_term_power_window_too_long():
    with pytest.raises(ValueError):
        short_term_power(TimeSeries(np.ones(5), FS), window_len=6)


# --------------------------------------------------------------------------
# PCA
# --------------------------------------------------------------------------

def test_pca_collinear_first_component_explains_all():
    rng = np.random.default_rng(2)
    base = rng.standard_normal(300)
    X = np.column_stack([base, 2 * base, -0.5 * base])
    res = pca_scores(X)
    ratios = res.explained_variance / res.explained_variance.sum()
    assert ratios[0] == pytest.approx(1.0, abs=1e-9)


def test_pca_isotropic_variances_close():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((20_000, 3))
    res = pca_scores(X)
    assert np.all(np.abs(res.explained_variance - 1.0) < 0.05)


def test_pca_reconstruction_orthogonality():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((200, 5)) @ rng.standard_normal((5, 5))
    res = pca_scores(X)
    recon = res.scores @ res.components.T
    assert np.allclose(recon, X - X.mean(axis=0), atol=1e-9)
    assert np.all(res.explained_variance >= 0)
    total = np.var(X, axis=0, ddof=1).sum()
    assert res.explained_variance.sum() == pytest.approx(total, rel=1e-9)


def test_pca_zero_variance_gives_zero_scores():
    res = pca_scores(np.ones((10, 3)))
    assert np.allclose(res.scores, 0.0)


def test_pca_sign_convention():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((100, 4))
    res = pca_scores(X)
    for j in range(4):
        i = int(np.argmax(np.abs(res.components[:, j])))
        assert res.components[i, j] > 0


# --------------------------------------------------------------------------
# STFT
# --------------------------------------------------------------------------

def test_stft_5s_signal_3s_window_1s_hop():
    x = TimeSeries(np.random.default_rng(0).standard_normal(1000), FS)
    specs = stft(x, window_len_s=3.0, hop_s=1.0)
    assert len(specs) == 3                    # starts at 0, 1, 2 s


def test_stft_full_window_equals_periodogram():
    x = sine(7.0, duration=4.0)
    specs = stft(x, window_len_s=4.0, hop_s=1.0)
    assert len(specs) == 1
    assert np.allclose(specs[0].power, periodogram(x).power)


def test_stft_chirp_argmax_increases():
    fs = FS
    t = np.arange(round(5 * fs)) / fs
    f0, f1 = 2.0, 15.0
    phase = 2 * np.pi * (f0 * t + (f1 - f0) * t ** 2 / 10.0)
    x = TimeSeries(np.sin(phase), fs)
    specs = stft(x, window_len_s=1.0, hop_s=0.5)
    peaks = [dominant_frequency(s) for s in specs]
    assert all(b > a for a, b in zip(peaks, peaks[1:]))


def test_stft_invalid_window():
    x = TimeSeries(np.ones(100), FS)
    with pytest.raises(ValueError):
        stft(x, window_len_s=10.0, hop_s=1.0)
    with pytest.raises(ValueError):
        stft(x, window_len_s=0.0, hop_s=1.0)
