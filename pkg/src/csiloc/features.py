"""Impairment-robust features from raw channel snapshots.

The pipeline is delay-domain transform, instantaneous autocorrelation over
the delay and receive-antenna axes, and unit-norm stacking of real and
imaginary parts. Products of the form t * conj(t) cancel both a global phase
rotation and (for shifts that keep the tap support inside the window) an
integer timing offset, and the final normalization removes any scalar gain,
so the three per-packet transceiver impairments leave the features unchanged
and only thermal noise survives.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .simulate import CsiMeasurement


class ZeroFeatureError(ValueError):
    """The channel tensor is identically zero, so no feature direction exists."""


@dataclass(frozen=True)
class FeatureVector:
    """Unit-norm real feature vector for one measurement (or one TX antenna).

    Layout: the underlying complex autocorrelation entries are ordered
    TX-antenna-major, then delay lag (2C values), then antenna lag (2*M_R
    values); ``values`` holds the real parts of all entries followed by the
    imaginary parts.
    """

    values: np.ndarray
    tx_count: int
    delay_taps: int
    rx_count: int
    tx_index: int | None = None

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        expect = 2 * self.tx_count * (2 * self.delay_taps) * (2 * self.rx_count)
        if vals.shape != (expect,):
            raise ValueError(f"feature vector has {vals.size} entries, expected {expect}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("feature vector must be finite")
        norm = float(np.linalg.norm(vals))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"feature vector norm is {norm!r}, expected 1")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)


@lru_cache(maxsize=32)
def _delay_pinv(w: int, used: tuple[int, ...], c: int) -> np.ndarray:
    """Pseudo-inverse of the DFT submatrix (used rows, first C tap columns)."""
    rows = np.asarray(used, dtype=np.int64)
    dft_sub = np.exp(-2j * np.pi * np.outer(rows, np.arange(c)) / w)
    pinv = np.linalg.pinv(dft_sub)
    if np.linalg.matrix_rank(dft_sub) < c:
        raise np.linalg.LinAlgError("DFT submatrix is rank deficient")
    pinv.flags.writeable = False
    return pinv


def _as_tensor(h) -> np.ndarray:
    if isinstance(h, CsiMeasurement):
        h = h.h
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim != 3:
        raise ValueError("channel must be a (W, M_R, M_T) tensor")
    return h


def delay_transform(h, used, c: int, method: str = "pinv") -> np.ndarray:
    """Estimate the first ``c`` delay-domain taps of each antenna pair.

    ``pinv`` solves the least-squares system restricted to the used
    subcarriers, which reproduces the taps exactly whenever the true delay
    support fits inside the window. ``ifft`` is the cheaper approximation:
    the first ``c`` taps of the inverse DFT of the zero-filled spectrum.
    Returns a (c, M_R, M_T) complex tensor.
    """
    h = _as_tensor(h)
    used = np.asarray(used, dtype=np.int64)
    if c > used.size:
        raise ValueError("tap window exceeds the number of used subcarriers")
    if method == "pinv":
        pinv = _delay_pinv(h.shape[0], tuple(int(i) for i in used), c)
        flat = h[used].reshape(used.size, -1)
        return (pinv @ flat).reshape(c, h.shape[1], h.shape[2])
    if method == "ifft":
        return np.fft.ifft(h, axis=0)[:c]
    raise ValueError(f"unknown delay transform method {method!r}")


def autocorr_features(t: np.ndarray, m: int) -> np.ndarray:
    """Instantaneous autocorrelation over delay and antenna lags for TX ``m``.

    For delay lags 1..2C and antenna lags 1..2*M_R, sums
    ``t[k, n] * conj(t[k + tau - 1, n + kappa - 1])`` over the in-range
    (k, n); out-of-range indices contribute zero. No averaging over packets
    is involved, which is what cancels per-packet phase and timing offsets.
    Returned vector is delay-lag-major.
    """
    t = np.asarray(t, dtype=np.complex128)
    if t.ndim != 3:
        raise ValueError("delay tensor must have shape (C, M_R, M_T)")
    c, m_r, _ = t.shape
    slab = t[:, :, m]
    padded = np.zeros((3 * c - 1, 3 * m_r - 1), dtype=np.complex128)
    padded[:c, :m_r] = slab
    windows = np.lib.stride_tricks.sliding_window_view(padded, (c, m_r))
    r = np.einsum("kn,tckn->tc", slab, np.conj(windows[: 2 * c, : 2 * m_r]))
    return r.reshape(-1)


def feature_vector(h, used, c: int, per_tx: bool = False,
                   method: str = "pinv"):
    """Extract the normalized feature vector(s) of one measurement.

    With ``per_tx`` False the autocorrelations of all TX antennas are
    concatenated into a single vector; with ``per_tx`` True a list with one
    independently normalized vector per TX antenna is returned.
    """
    h = _as_tensor(h)
    taps = delay_transform(h, used, c, method=method)
    _, m_r, m_t = taps.shape
    per_antenna = [autocorr_features(taps, m) for m in range(m_t)]
    if per_tx:
        out = []
        for m, r in enumerate(per_antenna):
            vals = np.concatenate([r.real, r.imag])
            norm = float(np.linalg.norm(vals))
            if norm == 0.0:
                raise ZeroFeatureError("all-zero channel tensor")
            out.append(FeatureVector(vals / norm, 1, c, m_r, tx_index=m))
        return out
    r = np.concatenate(per_antenna)
    vals = np.concatenate([r.real, r.imag])
    norm = float(np.linalg.norm(vals))
    if norm == 0.0:
        raise ZeroFeatureError("all-zero channel tensor")
    return FeatureVector(vals / norm, m_t, c, m_r)


def feature_length(m_t: int, c: int, m_r: int) -> int:
    """Length of the stacked real feature vector for the given geometry."""
    return 2 * m_t * (2 * c) * (2 * m_r)
