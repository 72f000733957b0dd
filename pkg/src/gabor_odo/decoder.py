"""Signal conditioning and quadrature spectral speed decoding.

The differential pair is treated as one complex signal ``z = s_cos + i s_sin``.
Forward motion puts its energy at positive frequencies and reverse motion at
negative ones, so the signed spectral peak gives speed and direction at once:
``v = f_peak / xi_ground``.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy.ndimage import median_filter
from scipy.signal import butter, firwin, iirnotch, kaiserord, resample_poly, sosfilt, sosfilt_zi, tf2sos
from scipy.signal.windows import hann

from .sensor_sim import FourChannelTrace, SignalTrace


class DecoderError(ValueError):
    pass


# CSV traces store time with six decimals
TIMESTAMP_RESOLUTION_S = 1e-6


# ---------------------------------------------------------------------------
# conditioning


@dataclass(frozen=True)
class ConditioningConfig:
    input_rate_hz: float = 41600.0
    notch_hz: float = 60.0
    notch_q: float = 30.0
    lowpass_hz: float = 450.0
    lowpass_order: int = 4
    output_rate_hz: float = 1000.0
    # polyphase anti-alias FIR: flat to the low-pass corner, >= 80 dB from
    # output_rate - lowpass_hz up, so nothing folds back below the corner
    fir_atten_db: float = 80.0

    def __post_init__(self):
        if not self.lowpass_hz < self.output_rate_hz / 2 <= self.input_rate_hz / 2:
            raise DecoderError("need lowpass_hz < output_rate/2 <= input_rate/2")
        if not 0 < self.notch_hz < self.input_rate_hz / 2:
            raise DecoderError("notch frequency out of range")

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.output_rate_hz / self.input_rate_hz).limit_denominator(100000)

    def to_dict(self) -> dict:
        return {k: (int(v) if k == "lowpass_order" else float(v)) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> ConditioningConfig:
        return cls(**d)


def conditioning_sos(cfg: ConditioningConfig) -> np.ndarray:
    """Notch followed by the Butterworth low-pass, as cascaded biquads."""
    b, a = iirnotch(cfg.notch_hz, cfg.notch_q, fs=cfg.input_rate_hz)
    notch = tf2sos(b, a)
    lp = butter(cfg.lowpass_order, cfg.lowpass_hz, fs=cfg.input_rate_hz, output="sos")
    return np.vstack([notch, lp])


@lru_cache(maxsize=8)
def _decimation_fir(cfg: ConditioningConfig) -> np.ndarray:
    r = cfg.ratio
    fs_up = cfg.input_rate_hz * r.numerator
    stop = cfg.output_rate_hz - cfg.lowpass_hz
    width = stop - cfg.lowpass_hz
    numtaps, beta = kaiserord(cfg.fir_atten_db, width / (fs_up / 2))
    numtaps |= 1
    cutoff = 0.5 * (cfg.lowpass_hz + stop)
    return firwin(numtaps, cutoff, window=("kaiser", beta), fs=fs_up)


def condition_channels(x: np.ndarray, cfg: ConditioningConfig) -> np.ndarray:
    """Filter and decimate raw samples ``x`` (T,) or (T, C) at ``input_rate_hz``.

    Output sample ``n`` corresponds to input time ``n / output_rate_hz``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)):
        raise DecoderError("input contains NaN or infinite samples")
    sos = conditioning_sos(cfg)
    # start the IIR sections in steady state for the first sample
    zi = sosfilt_zi(sos)
    zi = zi[(...,) + (None,) * (x.ndim - 1)] * x[0]
    y, _ = sosfilt(sos, x, axis=0, zi=zi)
    r = cfg.ratio
    if r == 1:
        return y
    return resample_poly(y, r.numerator, r.denominator, axis=0, window=_decimation_fir(cfg), padtype="line")


def condition(trace: FourChannelTrace, cfg: ConditioningConfig | None = None) -> SignalTrace:
    """Raw DAQ record in, differential pair at ``output_rate_hz`` out."""
    cfg = cfg or ConditioningConfig()
    t = np.asarray(trace.t, dtype=float)
    if len(t) < 2:
        raise DecoderError("trace too short to condition")
    # timestamps may be rounded (CSV keeps microseconds), so judge the grid
    # against its mean step with that rounding allowed for
    step = (t[-1] - t[0]) / (len(t) - 1)
    if not step > 0:
        raise DecoderError("timestamps must increase")
    rate = 1.0 / step
    dev = np.abs(t - (t[0] + step * np.arange(len(t))))
    if np.max(dev) > 1e-3 * step + TIMESTAMP_RESOLUTION_S:
        raise DecoderError("input sampling is not uniform")
    if abs(rate - cfg.input_rate_hz) > 1e-3 * cfg.input_rate_hz:
        raise DecoderError(f"trace rate {rate:.1f} Hz does not match input_rate_hz={cfg.input_rate_hz}")
    y = condition_channels(trace.channels, cfg)
    t_out = t[0] + np.arange(y.shape[0]) / cfg.output_rate_hz
    return SignalTrace(t_out, y[:, 0] - y[:, 1], y[:, 2] - y[:, 3])


# ---------------------------------------------------------------------------
# decoding


@dataclass(frozen=True)
class DecoderConfig:
    window_len: int = 1000
    rate_hz: float = 1000.0
    pad_factor: int = 4
    # frequencies inside the Hann main lobe around DC are residual offset, not motion
    f_min_hz: float = 2.0
    threshold: float = 0.2
    # half-width, in unpadded bins, of the spectral lobe counted as peak power
    lobe_bins: float = 2.0
    median_len: int = 5

    def __post_init__(self):
        if self.window_len < 8 or self.pad_factor < 1 or self.median_len < 1:
            raise DecoderError("invalid decoder configuration")

    @property
    def bin_hz(self) -> float:
        """Resolution of the unpadded window spectrum."""
        return self.rate_hz / self.window_len

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("window_len", "pad_factor", "median_len"):
            d[k] = int(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> DecoderConfig:
        return cls(**d)


@dataclass(frozen=True)
class SpeedEstimate:
    t_s: float
    v_hat: float
    confidence: float
    f_peak_hz: float
    accepted: bool


@lru_cache(maxsize=8)
def _spectral_setup(n: int, pad: int, rate: float, f_min: float):
    m = n * pad
    freqs = sfft.fftfreq(m, d=1.0 / rate)
    valid = np.abs(freqs) >= f_min
    return hann(n, sym=True), freqs, valid


def _decode_batch(z: np.ndarray, xi_ground: float, cfg: DecoderConfig):
    """Vectorised core: z is (B, N) complex. Returns f_peak, confidence arrays."""
    n = z.shape[1]
    win, freqs, valid = _spectral_setup(n, cfg.pad_factor, float(cfg.rate_hz), float(cfg.f_min_hz))
    m = n * cfg.pad_factor
    z = z - z.mean(axis=1, keepdims=True)
    spec = sfft.fft(z * win, n=m, axis=1)
    power = spec.real**2 + spec.imag**2
    power_valid = np.where(valid, power, 0.0)
    total = power_valid.sum(axis=1)
    k = np.argmax(power_valid, axis=1)
    rows = np.arange(z.shape[0])

    tiny = np.finfo(float).tiny
    a = np.log(power[rows, (k - 1) % m] + tiny)
    b = np.log(power[rows, k] + tiny)
    c = np.log(power[rows, (k + 1) % m] + tiny)
    denom = a - 2.0 * b + c
    with np.errstate(invalid="ignore", divide="ignore"):
        delta = np.where(denom < 0, 0.5 * (a - c) / denom, 0.0)
    delta = np.clip(delta, -0.5, 0.5)
    f_peak = (freqs[k] * m / cfg.rate_hz + delta) * (cfg.rate_hz / m)

    half = int(round(cfg.lobe_bins * cfg.pad_factor))
    offs = np.arange(-half, half + 1)
    lobe = power_valid[rows[:, None], (k[:, None] + offs[None, :]) % m].sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        conf = np.where(total > 0, lobe / total, 0.0)
    f_peak = np.where(total > 0, f_peak, 0.0)
    return f_peak, np.clip(conf, 0.0, 1.0)


def decode_window(s_cos, s_sin, xi_ground: float, cfg: DecoderConfig | None = None,
                  t_s: float = 0.0) -> SpeedEstimate:
    """Signed speed from one window of the quadrature pair.

    Mean-removed, Hann-windowed, zero-padded complex FFT; the largest bin with
    ``|f| >= f_min_hz`` is refined by a parabola through the log-magnitudes.
    Confidence is the fraction of spectral power inside the peak's lobe.
    """
    cfg = cfg or DecoderConfig()
    s_cos = np.asarray(s_cos, dtype=float)
    s_sin = np.asarray(s_sin, dtype=float)
    if s_cos.shape != (cfg.window_len,) or s_sin.shape != (cfg.window_len,):
        raise DecoderError(f"window must hold exactly {cfg.window_len} samples per channel")
    if not xi_ground > 0:
        raise DecoderError("xi_ground must be positive")
    f, conf = _decode_batch((s_cos + 1j * s_sin)[None, :], xi_ground, cfg)
    f, conf = float(f[0]), float(conf[0])
    return SpeedEstimate(float(t_s), f / xi_ground, conf, f, bool(conf >= cfg.threshold and conf > 0))


def window_starts(n_samples: int, stride: int, window_len: int) -> np.ndarray:
    if n_samples < window_len:
        return np.zeros(0, dtype=int)
    return np.arange(0, n_samples - window_len + 1, stride)


def decode_stream(trace: SignalTrace, stride_ms: int, xi_ground: float, cfg: DecoderConfig | None = None,
                  keep_rejected: bool = False, chunk: int = 128) -> list[SpeedEstimate]:
    """Sliding-window decoding followed by confidence gating and a median filter.

    Rejected windows are dropped (or, with ``keep_rejected``, returned
    unfiltered with ``accepted=False``). The median filter runs over the
    accepted ``v_hat`` sequence only.
    """
    cfg = cfg or DecoderConfig()
    n = cfg.window_len
    s_cos = np.asarray(trace.s_cos, dtype=float)
    s_sin = np.asarray(trace.s_sin, dtype=float)
    if len(s_cos) < n:
        raise DecoderError(f"trace has {len(s_cos)} samples, need at least {n}")
    stride = int(round(stride_ms * cfg.rate_hz / 1000.0))
    if stride < 1:
        raise DecoderError("stride must be at least one sample")
    z = s_cos + 1j * s_sin
    starts = window_starts(len(z), stride, n)
    windows = np.lib.stride_tricks.sliding_window_view(z, n)
    f_all = np.empty(len(starts))
    c_all = np.empty(len(starts))
    for lo in range(0, len(starts), chunk):
        idx = starts[lo:lo + chunk]
        f_all[lo:lo + chunk], c_all[lo:lo + chunk] = _decode_batch(windows[idx], xi_ground, cfg)
    accepted = (c_all >= cfg.threshold) & (c_all > 0)
    t_end = np.asarray(trace.t)[starts + n - 1]
    v = f_all / xi_ground
    v_acc = v[accepted]
    if cfg.median_len > 1 and len(v_acc):
        v_acc = median_filter(v_acc, size=cfg.median_len, mode="nearest")
    v_out = v.copy()
    v_out[accepted] = v_acc
    out = []
    for i in range(len(starts)):
        if accepted[i] or keep_rejected:
            out.append(SpeedEstimate(float(t_end[i]), float(v_out[i]), float(c_all[i]), float(f_all[i]),
                                     bool(accepted[i])))
    return out


def instantaneous_frequency(s_cos, s_sin, rate_hz: float = 1000.0, min_rel_amplitude: float = 0.05) -> np.ndarray:
    """Phase-slope frequency between consecutive samples, Hz.

    Increments touching a sample whose amplitude is below
    ``min_rel_amplitude`` times the median amplitude are NaN.
    """
    s_cos = np.asarray(s_cos, dtype=float)
    s_sin = np.asarray(s_sin, dtype=float)
    z = (s_cos - s_cos.mean()) + 1j * (s_sin - s_sin.mean())
    amp = np.abs(z)
    phase = np.unwrap(np.angle(z))
    f = np.diff(phase) * rate_hz / (2.0 * np.pi)
    ok = amp > min_rel_amplitude * np.median(amp)
    return np.where(ok[1:] & ok[:-1], f, np.nan)


def median_frequency(s_cos, s_sin, rate_hz: float = 1000.0) -> float:
    f = instantaneous_frequency(s_cos, s_sin, rate_hz)
    return float(np.nanmedian(f)) if np.any(np.isfinite(f)) else 0.0


ESTIMATE_HEADER = ("t", "v_hat", "f_peak", "confidence", "accepted")


def write_estimates_csv(path, estimates: list[SpeedEstimate]):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(ESTIMATE_HEADER) + "\n")
        for e in estimates:
            fh.write(f"{e.t_s:.6f},{e.v_hat:.9f},{e.f_peak_hz:.9f},{e.confidence:.9f},{int(e.accepted)}\n")


def read_estimates_csv(path) -> list[SpeedEstimate]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ESTIMATE_HEADER:
            raise DecoderError(f"{path}: expected header {','.join(ESTIMATE_HEADER)}")
        return [SpeedEstimate(float(r["t"]), float(r["v_hat"]), float(r["confidence"]), float(r["f_peak"]),
                              r["accepted"].strip() in ("1", "true", "True")) for r in reader]
