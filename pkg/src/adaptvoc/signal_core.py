"""Deterministic DSP building blocks.

mu-law companding and 8-bit quantization, framing, autocorrelation,
Levinson-Durbin, LPC <-> LSF conversion and piecewise-constant LP
analysis / synthesis filtering.

Predictor convention throughout: ``x_hat[n] = sum_k a[k-1] * x[n-k]``, so the
inverse filter is ``A(z) = 1 - sum_k a_k z^-k``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.signal

MU = 255
N_CODES = 256

LSF_GRID = 2048
LSF_TOL = 1e-12
ROW_CHUNK = 1024
LAG_WINDOW_HZ = 60.0


class DegenerateFrameError(ValueError):
    """Autocorrelation with non-positive energy reached the LP solver."""


class LsfConversionError(ArithmeticError):
    """LPC -> LSF conversion failed (non minimum-phase input or lost roots)."""


class StabilityError(ValueError):
    """An LP synthesis filter is not stable."""


@dataclass(frozen=True)
class Waveform:
    """Unit-range samples plus their sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if s.ndim != 1:
            raise ValueError("Waveform is mono: samples must be 1-D")
        if np.any(~np.isfinite(s)) or np.any(np.abs(s) > 1.0):
            raise ValueError("samples must lie in [-1, 1]")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


# ---------------------------------------------------------------------------
# mu-law codec


def _check_unit_range(x, name):
    x = np.asarray(x, dtype=np.float64)
    if np.any(~np.isfinite(x)) or np.any(np.abs(x) > 1.0):
        raise ValueError(f"{name} must lie in [-1, 1]")
    return x


def _scalar_or_array(out, like):
    return float(out) if np.ndim(like) == 0 else out


def mulaw_compress(x, mu: int = MU):
    """sign(x) * ln(1 + mu|x|) / ln(1 + mu)."""
    xa = _check_unit_range(x, "mulaw_compress input")
    y = np.sign(xa) * np.log1p(mu * np.abs(xa)) / np.log1p(mu)
    return _scalar_or_array(y, x)


def mulaw_expand(y, mu: int = MU):
    """Inverse of :func:`mulaw_compress`."""
    ya = _check_unit_range(y, "mulaw_expand input")
    x = np.sign(ya) * np.expm1(np.abs(ya) * np.log1p(mu)) / mu
    return _scalar_or_array(x, y)


def quantize_256(y):
    """Uniform 256-bin code of a companded value; +1.0 clamps into bin 255."""
    ya = _check_unit_range(y, "quantize_256 input")
    codes = np.clip(np.floor((ya + 1.0) * 0.5 * N_CODES), 0, N_CODES - 1).astype(np.int64)
    return int(codes) if np.ndim(y) == 0 else codes


def dequantize_256(code):
    """Bin centre of a code in [0, 255]."""
    c = np.asarray(code)
    if np.any(c < 0) or np.any(c >= N_CODES):
        raise ValueError("codes must lie in [0, 255]")
    y = (c.astype(np.float64) + 0.5) / N_CODES * 2.0 - 1.0
    return _scalar_or_array(y, code)


def encode_mulaw(x, mu: int = MU):
    """Waveform -> code stream (compress then quantize)."""
    return quantize_256(mulaw_compress(np.asarray(x), mu))


def decode_mulaw(codes, mu: int = MU):
    """Code stream -> waveform (dequantize then expand)."""
    return mulaw_expand(dequantize_256(np.asarray(codes)), mu)


# ---------------------------------------------------------------------------
# framing


@dataclass(frozen=True)
class FrameSpec:
    frame_len: int
    hop: int
    window: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop <= self.frame_len:
            raise ValueError("need 0 < hop <= frame_len")
        if self.window not in ("hann", "rectangular"):
            raise ValueError(f"unknown window {self.window!r}")

    @classmethod
    def for_rate(cls, sample_rate: int, frame_ms: float = 20.0, hop_ms: float = 5.0,
                 window: str = "hann") -> "FrameSpec":
        return cls(int(round(sample_rate * frame_ms / 1000.0)),
                   int(round(sample_rate * hop_ms / 1000.0)), window)

    def with_window(self, window: str) -> "FrameSpec":
        return FrameSpec(self.frame_len, self.hop, window)

    def window_array(self) -> np.ndarray:
        if self.window == "rectangular":
            return np.ones(self.frame_len)
        return scipy.signal.get_window("hann", self.frame_len, fftbins=True)


def num_frames(length: int, spec: FrameSpec) -> int:
    if length <= 0:
        return 0
    if length < spec.frame_len:
        return 1
    return (length - spec.frame_len) // spec.hop + 1


def frame_signal(x, spec: FrameSpec) -> np.ndarray:
    """Split ``x`` into windowed frames of shape (n_frames, frame_len).

    Signals shorter than one frame yield a single zero-padded frame.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot frame an empty signal")
    n = num_frames(len(x), spec)
    if len(x) < spec.frame_len:
        x = np.pad(x, (0, spec.frame_len - len(x)))
    idx = np.arange(n)[:, None] * spec.hop + np.arange(spec.frame_len)[None, :]
    return x[idx] * spec.window_array()


# ---------------------------------------------------------------------------
# autocorrelation / Levinson-Durbin


def autocorrelation(frame, max_lag: int) -> np.ndarray:
    """Biased, unnormalised autocorrelation r[0..max_lag].

    Accepts a single frame or a stack of frames along the last axis.
    """
    f = np.asarray(frame, dtype=np.float64)
    n = f.shape[-1]
    if max_lag >= n:
        raise ValueError(f"max_lag={max_lag} must be smaller than the frame length {n}")
    r = np.empty(f.shape[:-1] + (max_lag + 1,))
    for k in range(max_lag + 1):
        r[..., k] = np.einsum("...i,...i->...", f[..., : n - k], f[..., k:])
    return r


def condition_autocorrelation(r, ridge: float = 1e-9, floor: float = 1e-12) -> np.ndarray:
    """Add a relative ridge and an absolute white-noise floor to r[0]."""
    r = np.array(r, dtype=np.float64, copy=True)
    r[..., 0] = r[..., 0] * (1.0 + ridge) + floor
    return r


@dataclass(frozen=True)
class LpcCoefficients:
    a: np.ndarray
    prediction_error_power: float
    reflection: np.ndarray

    @property
    def order(self) -> int:
        return len(self.a)

    @property
    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.reflection) < 1.0))

    def inverse_filter(self) -> np.ndarray:
        """Polynomial A(z) as [1, -a_1, ..., -a_p]."""
        return np.concatenate([[1.0], -self.a])


def levinson_batch(r, order: int):
    """Vectorised Levinson-Durbin over the leading axes of ``r``.

    Returns (a, error_power, reflection) with shapes (..., p), (...), (..., p).
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] < order + 1:
        raise ValueError("autocorrelation too short for the requested order")
    if np.any(r[..., 0] <= 0):
        raise DegenerateFrameError("r[0] <= 0: frame has no energy")
    batch = r.shape[:-1]
    a = np.zeros(batch + (order,))
    k = np.zeros(batch + (order,))
    err = r[..., 0].copy()
    for i in range(order):
        # r[i+1] - sum_j a_j r[i+1-j]
        acc = r[..., i + 1] - np.einsum("...j,...j->...", a[..., :i], r[..., i:0:-1])
        ki = acc / err
        k[..., i] = ki
        prev = a[..., :i].copy()
        a[..., :i] = prev - ki[..., None] * prev[..., ::-1]
        a[..., i] = ki
        err = err * (1.0 - ki * ki)
    return a, err, k


def levinson_durbin(r, order: int) -> LpcCoefficients:
    """Solve the order-``order`` normal equations for one autocorrelation."""
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 1:
        raise ValueError("levinson_durbin takes a single autocorrelation; see levinson_batch")
    a, err, k = levinson_batch(r, order)
    return LpcCoefficients(a=a, prediction_error_power=float(err), reflection=k)


def lag_window(order: int, sample_rate: int, bandwidth_hz: float = LAG_WINDOW_HZ) -> np.ndarray:
    """Gaussian lag window: smooths the spectrum by ~``bandwidth_hz`` so the
    predictor follows the envelope rather than individual pitch harmonics."""
    k = np.arange(order + 1)
    return np.exp(-0.5 * (2.0 * np.pi * bandwidth_hz * k / sample_rate) ** 2)


def lpc_from_frames(frames, order: int, sample_rate: int | None = None,
                    white_noise: float = 0.0) -> np.ndarray:
    """Windowed frames (n, L) -> predictor coefficients (n, order).

    With ``sample_rate`` the autocorrelation is lag-windowed first;
    ``white_noise`` adds that fraction of r[0] (a noise floor relative to the
    frame energy).
    """
    r = autocorrelation(frames, order)
    if sample_rate is not None:
        r = r * lag_window(order, sample_rate)
    r = condition_autocorrelation(r, ridge=1e-9 + white_noise)
    a, _, _ = levinson_batch(r, order)
    return a


def reflection_coefficients(a) -> np.ndarray:
    """Step-down recursion: predictor coefficients -> reflection coefficients."""
    a = np.array(a, dtype=np.float64, copy=True)
    p = a.shape[-1]
    k = np.zeros_like(a)
    for i in range(p - 1, -1, -1):
        ki = a[..., i].copy()
        k[..., i] = ki
        if i == 0:
            break
        denom = 1.0 - ki * ki
        with np.errstate(divide="ignore", invalid="ignore"):
            a[..., :i] = (a[..., :i] + ki[..., None] * a[..., i - 1::-1]) / denom[..., None]
    return k


def is_minimum_phase(a) -> np.ndarray:
    k = reflection_coefficients(a)
    return np.all(np.isfinite(k) & (np.abs(k) < 1.0), axis=-1)


# ---------------------------------------------------------------------------
# LPC <-> LSF


def _sum_difference_polys(a):
    """P and Q polynomials (coefficients in z^-1) for predictor rows ``a``."""
    a = np.atleast_2d(a)
    n, p = a.shape
    A = np.concatenate([np.ones((n, 1)), -a, np.zeros((n, 1))], axis=1)
    rev = A[:, ::-1]
    return A + rev, A - rev


def _deflate(poly, root_sign):
    """Divide rows of ``poly`` by (1 - root_sign * z^-1)."""
    n, m = poly.shape
    out = np.zeros((n, m - 1))
    out[:, 0] = poly[:, 0]
    for i in range(1, m - 1):
        out[:, i] = poly[:, i] + root_sign * out[:, i - 1]
    return out


def _cos_series(sym):
    """Symmetric degree-2m polynomial rows -> Chebyshev coefficients of
    G(w) = z^m P(z) evaluated on the unit circle, as a series in cos(w)."""
    m = (sym.shape[1] - 1) // 2
    g = np.empty((sym.shape[0], m + 1))
    g[:, 0] = sym[:, m]
    g[:, 1:] = 2.0 * sym[:, m - 1::-1] if m > 0 else 0.0
    return g


def _cheb_eval(g, x):
    """Evaluate Chebyshev series rows ``g`` (n, m+1) at points x (n, k)."""
    # Clenshaw recurrence, vectorised over rows and points
    b1 = np.zeros_like(x)
    b2 = np.zeros_like(x)
    for j in range(g.shape[1] - 1, 0, -1):
        b1, b2 = 2.0 * x * b1 - b2 + g[:, j:j + 1], b1
    return x * b1 - b2 + g[:, :1]


def _roots_on_grid(g, n_roots, grid):
    """Bracket then bisect the ``n_roots`` zeros of each cos series in (0, pi)."""
    n = g.shape[0]
    if n_roots == 0:
        return np.zeros((n, 0))
    w = np.linspace(0.0, np.pi, grid + 1)
    vals = _cheb_eval(g, np.broadcast_to(np.cos(w), (n, w.size)).copy())
    sign = np.sign(vals)
    change = sign[:, :-1] * sign[:, 1:] <= 0
    # exact zeros at the endpoints are trivial roots already deflated away
    change[:, 0] &= sign[:, 0] != 0
    counts = change.sum(axis=1)
    if np.any(counts != n_roots):
        return None
    rows, cols = np.nonzero(change)
    lo = w[cols].reshape(n, n_roots)
    hi = w[cols + 1].reshape(n, n_roots)
    f_lo = _cheb_eval(g, np.cos(lo))
    while np.max(hi - lo) > LSF_TOL:
        mid = 0.5 * (lo + hi)
        f_mid = _cheb_eval(g, np.cos(mid))
        left = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(left, mid, lo)
        f_lo = np.where(left, f_mid, f_lo)
        hi = np.where(left, hi, mid)
    return 0.5 * (lo + hi)


def _find_roots(g, n_roots):
    for grid in (LSF_GRID, 8 * LSF_GRID, 64 * LSF_GRID):
        roots = _roots_on_grid(g, n_roots, grid)
        if roots is not None:
            return roots
    raise LsfConversionError("LSF root search lost roots; filter too close to instability")


def lpc_to_lsf(a) -> np.ndarray:
    """Predictor coefficients (p,) or (n, p) -> ascending LSFs in (0, pi)."""
    if isinstance(a, LpcCoefficients):
        a = a.a
    a = np.asarray(a, dtype=np.float64)
    single = a.ndim == 1
    a2 = np.atleast_2d(a)
    p = a2.shape[1]
    if not np.all(is_minimum_phase(a2)):
        raise LsfConversionError("LPC filter is not minimum phase")
    if len(a2) > ROW_CHUNK:
        lsf = np.concatenate([lpc_to_lsf(a2[i:i + ROW_CHUNK])
                              for i in range(0, len(a2), ROW_CHUNK)])
        return lsf[0] if single else lsf
    P, Q = _sum_difference_polys(a2)
    if p % 2 == 0:
        Pd = _deflate(P, -1.0)                  # root at z = -1
        Qd = _deflate(Q, 1.0)                   # root at z = +1
    else:
        Pd = P
        Qd = _deflate(_deflate(Q, 1.0), -1.0)   # roots at z = +-1
    n_p = (Pd.shape[1] - 1) // 2
    n_q = (Qd.shape[1] - 1) // 2
    wp = _find_roots(_cos_series(Pd), n_p)
    wq = _find_roots(_cos_series(Qd), n_q)
    lsf = np.sort(np.concatenate([wp, wq], axis=1), axis=1)
    return lsf[0] if single else lsf


def check_lsf(lsf) -> None:
    lsf = np.atleast_2d(lsf)
    ok = (np.all(np.diff(lsf, axis=1) > 0, axis=1)
          & (lsf[:, 0] > 0) & (lsf[:, -1] < np.pi))
    if not np.all(ok):
        bad = int(np.flatnonzero(~ok)[0])
        raise StabilityError(f"LSF vector {bad} is not strictly ascending inside (0, pi)")


def _unit_circle_product(w_roots, cos_grid):
    """prod_i 2(cos w - cos w_i) on the grid, rows = LSF sets."""
    out = np.ones((w_roots.shape[0], cos_grid.size))
    for i in range(w_roots.shape[1]):
        out *= 2.0 * (cos_grid[None, :] - np.cos(w_roots[:, i:i + 1]))
    return out


def lsf_to_lpc(lsf) -> np.ndarray:
    """Inverse of :func:`lpc_to_lsf`; raises StabilityError on bad ordering.

    P and Q are evaluated on an FFT grid of the unit circle as products of
    bounded real factors and A = (P + Q) / 2 is recovered by inverse FFT,
    which keeps high orders accurate where expanding the quadratic factors
    coefficient-wise would not.
    """
    lsf = np.asarray(lsf, dtype=np.float64)
    single = lsf.ndim == 1
    w = np.atleast_2d(lsf)
    check_lsf(w)
    p = w.shape[1]
    n_fft = 1 << int(np.ceil(np.log2(2 * (p + 2))))
    omega = 2.0 * np.pi * np.arange(n_fft) / n_fft
    z1 = np.exp(-1j * omega)            # z^-1 on the circle
    wp, wq = w[:, 0::2], w[:, 1::2]
    # (1 - 2 cos(w_i) z^-1 + z^-2) = z^-1 * 2 (cos w - cos w_i)
    P = _unit_circle_product(wp, np.cos(omega)) * z1 ** wp.shape[1]
    Q = _unit_circle_product(wq, np.cos(omega)) * z1 ** wq.shape[1]
    if p % 2 == 0:
        P = P * (1.0 + z1)
        Q = Q * (1.0 - z1)
    else:
        Q = Q * (1.0 - z1 * z1)
    A = np.fft.ifft(0.5 * (P + Q), axis=1).real
    a = -A[:, 1:p + 1]
    return a[0] if single else a


# ---------------------------------------------------------------------------
# LP filtering with per-hop coefficients


def _coefficient_schedule(n_samples, lpc, spec):
    lpc = np.atleast_2d(np.asarray(lpc, dtype=np.float64))
    # analysis framing, or one row per hop (the frames*hop synthesis length)
    allowed = {max(num_frames(n_samples, spec), 1), max(-(-n_samples // spec.hop), 1)}
    if lpc.shape[0] not in allowed:
        raise ValueError(f"expected {' or '.join(map(str, sorted(allowed)))} coefficient "
                         f"frames, got {lpc.shape[0]}")
    starts = np.arange(lpc.shape[0]) * spec.hop
    ends = np.append(starts[1:], n_samples)
    ends[-1] = max(ends[-1], n_samples)
    return lpc, starts, ends


def lp_analysis_filter(x, lpc, spec: FrameSpec) -> np.ndarray:
    """Residual e[n] = x[n] - sum_k a_k x[n-k].

    Frame ``j``'s coefficients apply to samples [j*hop, (j+1)*hop); the last
    frame also covers the tail past n_frames*hop.
    """
    x = np.asarray(x, dtype=np.float64)
    lpc, starts, ends = _coefficient_schedule(len(x), lpc, spec)
    p = lpc.shape[1]
    e = np.empty_like(x)
    for j in range(len(starts)):
        s, t = starts[j], min(ends[j], len(x))
        if s >= t:
            continue
        b = np.concatenate([[1.0], -lpc[j]])
        past = x[max(s - p, 0):s][::-1]
        zi = scipy.signal.lfiltic(b, [1.0], y=np.zeros(p), x=past)
        e[s:t], _ = scipy.signal.lfilter(b, [1.0], x[s:t], zi=zi)
    return e


def lp_synthesis_filter(e, lpc, spec: FrameSpec, check_stability: bool = True) -> np.ndarray:
    """Recursive inverse of :func:`lp_analysis_filter` under the same schedule."""
    e = np.asarray(e, dtype=np.float64)
    lpc, starts, ends = _coefficient_schedule(len(e), lpc, spec)
    if check_stability and not np.all(is_minimum_phase(lpc)):
        raise StabilityError("LP synthesis filter is unstable")
    p = lpc.shape[1]
    x = np.empty_like(e)
    for j in range(len(starts)):
        s, t = starts[j], min(ends[j], len(e))
        if s >= t:
            continue
        A = np.concatenate([[1.0], -lpc[j]])
        past = x[max(s - p, 0):s][::-1]
        zi = scipy.signal.lfiltic([1.0], A, y=past)
        x[s:t], _ = scipy.signal.lfilter([1.0], A, e[s:t], zi=zi)
    return x
