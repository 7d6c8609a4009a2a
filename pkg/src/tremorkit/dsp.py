"""Signal mathematics: detrended RMS, noise density, periodogram, normalized
autocorrelation, IIR filter design (Butterworth / Chebyshev-I biquad cascades
via the bilinear transform), Hilbert envelope, short-term power, PCA scores
and the short-time Fourier transform.

Conventions: time series are float64 arrays in physical units; spectra are
one-sided squared-magnitude power with 1/(N*nfft) scaling and doubled interior
bins, so the bin sum equals mean(x**2).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled signal in physical units."""

    samples: np.ndarray
    fs: float

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        if self.samples.ndim != 1:
            raise ValueError("TimeSeries holds a single channel")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.fs


@dataclass(frozen=True)
class Spectrum:
    """One-sided power spectrum with uniform bin spacing."""

    power: np.ndarray
    delta_f: float
    f0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "power", np.asarray(self.power, dtype=np.float64))
        if np.any(self.power < 0):
            raise ValueError("power must be nonnegative")

    @property
    def freqs(self) -> np.ndarray:
        return self.f0 + self.delta_f * np.arange(self.power.size)


# --------------------------------------------------------------------------
# Time-domain statistics
# --------------------------------------------------------------------------

def rms_detrended(x: TimeSeries) -> float:
    """RMS of the mean-detrended signal: sqrt(mean((x - mean(x))**2)).

    Equals the population standard deviation of the signal.
    """
    if len(x) < 2:
        raise ValueError("need at least 2 samples")
    w = x.samples - x.samples.mean()
    return float(np.sqrt(np.mean(w * w)))


def peak_stats(x: TimeSeries) -> tuple[float, float]:
    """(peak-to-peak, absolute peak) of the mean-detrended signal."""
    if len(x) == 0:
        raise ValueError("empty series")
    w = x.samples - x.samples.mean()
    return float(w.max() - w.min()), float(np.abs(w).max())


def psd_from_rms(rms: float, bw: float) -> float:
    """Noise density rms/sqrt(bw); with rms in ug the result is ug/sqrt(Hz)."""
    if bw <= 0:
        raise ValueError("bandwidth must be positive")
    return rms / math.sqrt(bw)


# --------------------------------------------------------------------------
# Spectra
# --------------------------------------------------------------------------

def periodogram(x: TimeSeries, nfft: Optional[int] = None) -> Spectrum:
    """Squared-magnitude FFT spectrum, one-sided.

    Scaling is 1/(N*nfft) with interior bins doubled, which makes
    sum(power) == mean(x**2) (Parseval). ``nfft`` >= len(x) zero-pads.
    """
    n = len(x)
    if n == 0:
        raise ValueError("empty series")
    if nfft is None:
        nfft = n
    if nfft < n:
        raise ValueError("nfft must be >= signal length")
    spec = np.fft.rfft(x.samples, nfft)
    power = (spec.real ** 2 + spec.imag ** 2) / (n * nfft)
    power[1:] *= 2.0
    if nfft % 2 == 0:
        power[-1] /= 2.0  # Nyquist bin is not mirrored
    return Spectrum(power=power, delta_f=x.fs / nfft)


def dominant_frequency(spec: Spectrum, min_freq: float = 0.0) -> Optional[float]:
    """Frequency of the strongest bin at or above ``min_freq``; None if the
    spectrum carries no power there."""
    freqs = spec.freqs
    mask = freqs >= min_freq
    if not mask.any():
        return None
    power = spec.power[mask]
    if power.max() <= 0.0:
        return None
    return float(freqs[mask][int(np.argmax(power))])


def autocorr_normalized(x: TimeSeries, max_lag: int) -> np.ndarray:
    """Biased autocorrelation of the detrended signal, normalized to r[0] = 1."""
    n = len(x)
    if n < 2:
        raise ValueError("need at least 2 samples")
    if not 0 <= max_lag < n:
        raise ValueError("max_lag must be in [0, len(x))")
    w = x.samples - x.samples.mean()
    denom = float(np.dot(w, w))
    if denom == 0.0:
        raise ValueError("zero-variance input")
    r = np.empty(max_lag + 1)
    r[0] = 1.0
    for k in range(1, max_lag + 1):
        r[k] = np.dot(w[:-k], w[k:]) / denom
    return r


# --------------------------------------------------------------------------
# IIR filter design: analog prototypes -> band transform -> bilinear -> SOS
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterSpec:
    """Design request for the streaming filters.

    ``family`` is "butterworth" or "chebyshev1"; ``response`` is "lowpass",
    "highpass" or "bandpass". Cutoffs are in Hz and must lie strictly inside
    (0, fs/2) at design time. ``ripple_db`` applies to Chebyshev only.
    """

    family: str
    order: int
    response: str
    cutoffs: tuple[float, ...]
    ripple_db: float = 0.5

    def __post_init__(self):
        if self.family not in ("butterworth", "chebyshev1"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.response not in ("lowpass", "highpass", "bandpass"):
            raise ValueError(f"unknown response {self.response!r}")
        if self.order not in (2, 3):
            raise ValueError("order must be 2 or 3")
        cutoffs = tuple(float(c) for c in self.cutoffs)
        object.__setattr__(self, "cutoffs", cutoffs)
        want = 2 if self.response == "bandpass" else 1
        if len(cutoffs) != want:
            raise ValueError(f"{self.response} takes {want} cutoff(s)")
        if want == 2 and not cutoffs[0] < cutoffs[1]:
            raise ValueError("bandpass needs low < high")
        if self.family == "chebyshev1" and self.ripple_db <= 0:
            raise ValueError("ripple_db must be positive")


def _butter_prototype(order: int):
    """Unit-cutoff analog Butterworth: poles on the left unit semicircle."""
    poles = [cmath.exp(1j * math.pi * (2 * k + order + 1) / (2 * order)) for k in range(order)]
    return [], poles, 1.0


def _cheby1_prototype(order: int, ripple_db: float):
    """Unit-edge analog Chebyshev type I with the given passband ripple."""
    eps = math.sqrt(10 ** (ripple_db / 10.0) - 1.0)
    mu = math.asinh(1.0 / eps) / order
    poles = []
    for k in range(order):
        theta = math.pi * (2 * k + 1) / (2 * order)
        poles.append(complex(-math.sinh(mu) * math.sin(theta), math.cosh(mu) * math.cos(theta)))
    k = np.real(np.prod([-p for p in poles]))
    if order % 2 == 0:
        k /= math.sqrt(1.0 + eps * eps)
    return [], poles, float(k)


def _lp_to_lp(z, p, k, wo):
    degree = len(p) - len(z)
    return [zi * wo for zi in z], [pi * wo for pi in p], k * wo ** degree


def _lp_to_hp(z, p, k, wo):
    degree = len(p) - len(z)
    z_hp = [wo / zi for zi in z] + [0.0] * degree
    p_hp = [wo / pi for pi in p]
    gain = k * np.real(np.prod([-zi for zi in z]) / np.prod([-pi for pi in p]))
    return z_hp, p_hp, float(gain)


def _lp_to_bp(z, p, k, wo, bw):
    degree = len(p) - len(z)
    z_s = [zi * bw / 2.0 for zi in z]
    p_s = [pi * bw / 2.0 for pi in p]
    z_bp, p_bp = [], []
    for zi in z_s:
        d = cmath.sqrt(zi * zi - wo * wo)
        z_bp += [zi + d, zi - d]
    for pi in p_s:
        d = cmath.sqrt(pi * pi - wo * wo)
        p_bp += [pi + d, pi - d]
    z_bp += [0.0] * degree
    return z_bp, p_bp, k * bw ** degree


def _bilinear(z, p, k, fs):
    fs2 = 2.0 * fs
    degree = len(p) - len(z)
    z_d = [(fs2 + zi) / (fs2 - zi) for zi in z]
    p_d = [(fs2 + pi) / (fs2 - pi) for pi in p]
    num = np.prod([fs2 - zi for zi in z]) if z else 1.0
    den = np.prod([fs2 - pi for pi in p]) if p else 1.0
    k_d = k * float(np.real(num / den))
    z_d += [-1.0] * degree
    return z_d, p_d, k_d


def _split_conjugates(roots, tol=1e-8):
    """Partition roots into conjugate pairs and (near-)real singles."""
    pool = list(roots)
    pairs, reals = [], []
    while pool:
        r = pool.pop(0)
        if abs(r.imag) <= tol * max(1.0, abs(r)):
            reals.append(complex(r.real, 0.0))
            continue
        match = min(range(len(pool)), key=lambda i: abs(pool[i] - r.conjugate()))
        pool.pop(match)
        pairs.append(r)
    return pairs, reals


def _zpk_to_sos(z, p, k):
    """Group a digital zpk filter into real-coefficient biquad sections.

    Pole sections are formed from conjugate pairs plus paired reals; each
    section is then assigned the remaining zeros nearest its poles, which
    keeps the near-DC sections of narrow low-edge bandpass designs tame.
    """
    p_pairs, p_reals = _split_conjugates(p)
    p_reals.sort(key=lambda r: -abs(r))
    pole_sections = [[pp, pp.conjugate()] for pp in p_pairs]
    while len(p_reals) >= 2:
        pole_sections.append([p_reals.pop(0), p_reals.pop(0)])
    if p_reals:
        pole_sections.append([p_reals.pop(0)])

    zeros = [complex(zi) for zi in z]
    if any(abs(zi.imag) > 1e-8 for zi in zeros):
        raise ValueError("designs here only produce real zeros")
    zeros = [zi.real for zi in zeros]
    sections = []
    # sections whose poles sit closest to the unit circle pick zeros first
    order_idx = sorted(range(len(pole_sections)),
                       key=lambda i: min(abs(1.0 - abs(q)) for q in pole_sections[i]))
    assigned = {i: [] for i in range(len(pole_sections))}
    for i in order_idx:
        sec_p = pole_sections[i]
        for _ in range(min(len(sec_p), len(zeros))):
            j = min(range(len(zeros)), key=lambda m: min(abs(zeros[m] - q) for q in sec_p))
            assigned[i].append(zeros.pop(j))
    while zeros:  # leftovers (more zeros than poles) join the last section
        assigned[order_idx[-1]].append(zeros.pop())

    for i, sec_p in enumerate(pole_sections):
        b = np.real(np.poly(assigned[i])) if assigned[i] else np.array([1.0])
        a = np.real(np.poly(sec_p))
        b = np.concatenate([b, np.zeros(3 - len(b))])
        a = np.concatenate([a, np.zeros(3 - len(a))])
        sections.append(np.concatenate([b, a]))
    sos = np.array(sections)
    sos[0, :3] *= k
    return sos


class BiquadCascade:
    """Streaming cascade of second-order sections (direct form II transposed).

    Filtering is causal and stateful: feeding a signal in chunks of any size
    produces bit-identical output to feeding it whole.
    """

    def __init__(self, sos: np.ndarray, fs: float, spec: Optional[FilterSpec] = None):
        sos = np.asarray(sos, dtype=np.float64)
        if sos.ndim != 2 or sos.shape[1] != 6:
            raise ValueError("sos must be (n_sections, 6)")
        self.sos = sos
        self.fs = fs
        self.spec = spec
        self._state = np.zeros((sos.shape[0], 2))

    def reset(self):
        self._state[:] = 0.0

    def copy(self) -> "BiquadCascade":
        c = BiquadCascade(self.sos.copy(), self.fs, self.spec)
        c._state = self._state.copy()
        return c

    def process(self, x: np.ndarray) -> np.ndarray:
        y = np.array(x, dtype=np.float64, copy=True)
        st = self._state
        for s in range(self.sos.shape[0]):
            b0, b1, b2, _, a1, a2 = self.sos[s]
            s1, s2 = st[s]
            for n in range(y.size):
                xn = y[n]
                yn = b0 * xn + s1
                s1 = b1 * xn - a1 * yn + s2
                s2 = b2 * xn - a2 * yn
                y[n] = yn
            st[s, 0], st[s, 1] = s1, s2
        return y

    def response_at(self, f: float) -> complex:
        """Frequency response of the coefficient cascade at ``f`` Hz."""
        w = 2.0 * math.pi * f / self.fs
        z1 = cmath.exp(-1j * w)
        z2 = z1 * z1
        h = complex(1.0)
        for b0, b1, b2, a0, a1, a2 in self.sos:
            h *= (b0 + b1 * z1 + b2 * z2) / (a0 + a1 * z1 + a2 * z2)
        return h


def _warp(f: float, fs: float) -> float:
    return 2.0 * fs * math.tan(math.pi * f / fs)


def design_filter(spec: FilterSpec, fs: float) -> BiquadCascade:
    """Design the requested filter for sample rate ``fs``.

    The analog prototype is frequency pre-warped, band-transformed and
    bilinear-mapped, so the digital magnitude equals the analog prototype
    magnitude along the warped frequency axis exactly.
    """
    nyq = fs / 2.0
    if any(not 0.0 < c < nyq for c in spec.cutoffs):
        raise ValueError(f"cutoffs must lie strictly inside (0, {nyq})")
    if spec.family == "butterworth":
        z, p, k = _butter_prototype(spec.order)
    else:
        z, p, k = _cheby1_prototype(spec.order, spec.ripple_db)
    if spec.response == "lowpass":
        z, p, k = _lp_to_lp(z, p, k, _warp(spec.cutoffs[0], fs))
    elif spec.response == "highpass":
        z, p, k = _lp_to_hp(z, p, k, _warp(spec.cutoffs[0], fs))
    else:
        w1, w2 = (_warp(c, fs) for c in spec.cutoffs)
        z, p, k = _lp_to_bp(z, p, k, math.sqrt(w1 * w2), w2 - w1)
    z, p, k = _bilinear(z, p, k, fs)
    return BiquadCascade(_zpk_to_sos(z, p, k), fs, spec)


def analytic_magnitude(spec: FilterSpec, fs: float, f: float) -> float:
    """Closed-form magnitude of the bilinear-transformed design at ``f`` Hz.

    Derived from the prototype magnitude evaluated on the warped axis; it is
    the independent reference the coefficient cascade is checked against.
    """
    omega = _warp(f, fs)
    if spec.response == "lowpass":
        w = omega / _warp(spec.cutoffs[0], fs)
    elif spec.response == "highpass":
        wc = _warp(spec.cutoffs[0], fs)
        w = math.inf if omega == 0.0 else wc / omega
    else:
        w1, w2 = (_warp(c, fs) for c in spec.cutoffs)
        wo2, bw = w1 * w2, w2 - w1
        w = math.inf if omega == 0.0 else (omega * omega - wo2) / (bw * omega)
    aw = abs(w)
    if spec.family == "butterworth":
        if math.isinf(aw):
            return 0.0
        return 1.0 / math.sqrt(1.0 + aw ** (2 * spec.order))
    if math.isinf(aw):
        return 0.0
    eps = math.sqrt(10 ** (spec.ripple_db / 10.0) - 1.0)
    if aw <= 1.0:
        tn = math.cos(spec.order * math.acos(aw))
    else:
        tn = math.cosh(spec.order * math.acosh(aw))
    return 1.0 / math.sqrt(1.0 + eps * eps * tn * tn)


# --------------------------------------------------------------------------
# Envelope, short-term power, PCA, STFT
# --------------------------------------------------------------------------

def hilbert_envelope(x: TimeSeries) -> TimeSeries:
    """Magnitude of the analytic signal (FFT-based Hilbert transform)."""
    n = len(x)
    if n < 8:
        raise ValueError("need at least 8 samples")
    spec = np.fft.fft(x.samples)
    h = np.zeros(n)
    if n % 2 == 0:
        h[0] = h[n // 2] = 1.0
        h[1:n // 2] = 2.0
    else:
        h[0] = 1.0
        h[1:(n + 1) // 2] = 2.0
    analytic = np.fft.ifft(spec * h)
    return TimeSeries(np.abs(analytic), x.fs)


def short_term_power(x: TimeSeries, window_len: int) -> TimeSeries:
    """Sliding mean of x**2 over ``window_len`` samples, hop 1."""
    if window_len < 1:
        raise ValueError("window_len must be >= 1")
    if window_len > len(x):
        raise ValueError("window longer than signal")
    sq = x.samples * x.samples
    power = np.convolve(sq, np.ones(window_len), mode="valid") / window_len
    return TimeSeries(power, x.fs)


@dataclass(frozen=True)
class PcaResult:
    scores: np.ndarray            # (n, c), descending variance order
    explained_variance: np.ndarray
    components: np.ndarray        # (c, c), columns are loadings
    mean: np.ndarray = field(repr=False, default=None)


def pca_scores(X: np.ndarray) -> PcaResult:
    """Project centered multichannel data onto covariance eigenvectors.

    Components are ordered by descending eigenvalue; each component's sign is
    fixed so its largest-magnitude loading is positive. Zero-variance input
    yields zero scores rather than an error.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 2:
        raise ValueError("X must be (n>=2, channels>=2)")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / (X.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    for j in range(eigvecs.shape[1]):
        i = int(np.argmax(np.abs(eigvecs[:, j])))
        if eigvecs[i, j] < 0:
            eigvecs[:, j] = -eigvecs[:, j]
    return PcaResult(scores=Xc @ eigvecs, explained_variance=eigvals,
                     components=eigvecs, mean=mean)


def stft(x: TimeSeries, window_len_s: float, hop_s: float,
         taper: str = "rectangular") -> list[Spectrum]:
    """Per-window periodograms at starts 0, hop, 2*hop, ... while the window fits."""
    w = round(window_len_s * x.fs)
    hop = round(hop_s * x.fs)
    if w < 1 or hop < 1:
        raise ValueError("window and hop must be at least one sample")
    if w > len(x):
        raise ValueError("window longer than signal")
    if taper == "rectangular":
        win = None
    elif taper == "hann":
        win = np.hanning(w)
    else:
        raise ValueError(f"unknown taper {taper!r}")
    out = []
    for start in range(0, len(x) - w + 1, hop):
        seg = x.samples[start:start + w]
        if win is not None:
            seg = seg * win
        out.append(periodogram(TimeSeries(seg, x.fs)))
    return out
