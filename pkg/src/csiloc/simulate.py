"""Synthetic MIMO-OFDM channel measurements for positioning experiments.

The propagation model is a deliberately simple geometric one: each link sees
a direct path plus a fixed set of room scatterers (drawn once per seed, so
nearby transmitter positions produce similar channels). Every path
contributes a delay-tap phase ramp across subcarriers, uniform-linear-array
steering phases at both ends, a 1/distance amplitude, and a propagation
phase. On top of the clean channel, each packet suffers the impairments of
a real transceiver chain: an integer timing offset applied as a linear phase
ramp, a global phase rotation, a scalar gain, and additive white Gaussian
noise at a configured SNR on the used subcarriers.

Generation is a pure function of the configuration and seed: every packet
derives its own random stream from (seed, position index, access point), so
datasets are reproducible regardless of evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def default_used_subcarriers(w: int = 64) -> np.ndarray:
    """Used-tone layout of a 64-subcarrier WLAN symbol: 52 data/pilot tones,
    skipping DC (bin 0) and the guard band around the band edges."""
    if w != 64:
        raise ValueError("the default layout is defined for 64 subcarriers")
    return np.concatenate([np.arange(1, 27), np.arange(38, 64)])


@dataclass(frozen=True)
class Impairments:
    """Per-packet impairment magnitudes.

    ``delay_range`` is the largest timing offset in whole taps (the offset is
    drawn uniformly from 0..delay_range), ``phase_range`` the width of the
    uniform global-phase draw in radians, and ``gain_range_db`` the half-width
    of the uniform gain draw in dB.
    """

    delay_range: int = 3
    phase_range: float = 2.0 * math.pi
    gain_range_db: float = 6.0

    def __post_init__(self):
        if self.delay_range < 0:
            raise ValueError("delay_range must be nonnegative")
        if self.phase_range < 0.0 or self.gain_range_db < 0.0:
            raise ValueError("impairment ranges must be nonnegative")


@dataclass(frozen=True)
class Room:
    """Axis-aligned rectangular area with its corner at the origin."""

    width: float = 4.0
    height: float = 4.0

    def __post_init__(self):
        if self.width <= 0.0 or self.height <= 0.0:
            raise ValueError("room sides must be positive")

    def contains(self, x, slack: float = 1e-9) -> bool:
        return bool(-slack <= x[0] <= self.width + slack
                    and -slack <= x[1] <= self.height + slack)

    def corners(self) -> np.ndarray:
        return np.array([[0.0, 0.0], [self.width, 0.0],
                         [0.0, self.height], [self.width, self.height]])


@dataclass(frozen=True)
class SimConfig:
    """Full description of the synthetic measurement campaign."""

    W: int = 64
    used_set: tuple[int, ...] | None = None
    C: int = 16
    M_T: int = 2
    M_R: int = 4
    B: int = 2
    ap_positions: tuple[tuple[float, float], ...] = ((0.0, 2.0), (4.0, 2.0))
    array_spacing: float = 0.25
    paths_per_link: int = 6
    noise_snr_db: float = 20.0
    impairments: Impairments = field(default_factory=Impairments)
    seed: int = 1234
    room: Room = field(default_factory=Room)
    wavelength: float = 0.5
    meters_per_tap: float = 1.0

    def __post_init__(self):
        if self.W < 2 or self.C < 1 or self.M_T < 1 or self.M_R < 1 or self.B < 1:
            raise ValueError("W, C, M_T, M_R and B must all be positive")
        used = (default_used_subcarriers(self.W) if self.used_set is None
                else np.asarray(sorted(self.used_set), dtype=np.int64))
        if used.size == 0 or used[0] < 0 or used[-1] >= self.W:
            raise ValueError("used subcarrier indices must lie in [0, W)")
        if np.unique(used).size != used.size:
            raise ValueError("used subcarrier indices must be unique")
        if self.C > used.size:
            raise ValueError("cyclic-prefix length exceeds the number of used subcarriers")
        if len(self.ap_positions) != self.B:
            raise ValueError("ap_positions must list one position per access point")
        if self.paths_per_link < 1:
            raise ValueError("paths_per_link must be at least 1")
        if self.array_spacing <= 0.0 or self.wavelength <= 0.0 or self.meters_per_tap <= 0.0:
            raise ValueError("array_spacing, wavelength and meters_per_tap must be positive")
        object.__setattr__(self, "used_set", tuple(int(i) for i in used))

    @property
    def used(self) -> np.ndarray:
        return np.asarray(self.used_set, dtype=np.int64)

    @property
    def zero(self) -> np.ndarray:
        mask = np.ones(self.W, dtype=bool)
        mask[self.used] = False
        return np.flatnonzero(mask)


@dataclass(frozen=True)
class CsiMeasurement:
    """One channel snapshot: subcarrier x RX antenna x TX antenna tensor."""

    h: np.ndarray
    ap_index: int
    true_position: np.ndarray
    timestamp: int

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.complex128)
        if h.ndim != 3:
            raise ValueError("CSI tensor must have shape (W, M_R, M_T)")
        if not np.all(np.isfinite(h.view(np.float64))):
            raise ValueError("CSI tensor must be finite")
        pos = np.asarray(self.true_position, dtype=np.float64)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "true_position", pos)


@dataclass(frozen=True)
class ScattererLayout:
    """Fixed room scatterers shared by every link of one campaign."""

    positions: np.ndarray  # (n, 2)
    albedo: np.ndarray     # (n,)
    phase: np.ndarray      # (n,)


def scatterer_layout(cfg: SimConfig) -> ScattererLayout:
    """Draw the per-seed scatterer set (one fewer than paths_per_link)."""
    n = cfg.paths_per_link - 1
    rng = np.random.default_rng([cfg.seed, 0x5CA7])
    pos = np.column_stack([rng.uniform(0.0, cfg.room.width, n),
                           rng.uniform(0.0, cfg.room.height, n)])
    albedo = rng.uniform(0.3, 0.7, n)
    phase = rng.uniform(0.0, 2.0 * math.pi, n)
    return ScattererLayout(pos, albedo, phase)


def _max_path_tap(cfg: SimConfig, layout: ScattererLayout) -> int:
    """Largest delay tap any geometry within the room can produce."""
    worst = 0.0
    corners = cfg.room.corners()
    for ap in np.asarray(cfg.ap_positions, dtype=np.float64):
        direct = np.linalg.norm(corners - ap, axis=1).max()
        worst = max(worst, direct)
        for s in layout.positions:
            d1 = np.linalg.norm(corners - s, axis=1).max()
            worst = max(worst, d1 + float(np.linalg.norm(s - ap)))
    return int(round(worst / cfg.meters_per_tap))


def _check_delay_budget(cfg: SimConfig, layout: ScattererLayout) -> None:
    max_tap = _max_path_tap(cfg, layout)
    if max_tap + cfg.impairments.delay_range >= cfg.C:
        raise ValueError(
            f"worst-case path delay ({max_tap} taps) plus timing offset "
            f"({cfg.impairments.delay_range}) must stay below the cyclic prefix ({cfg.C})")


def _steering(unit_direction: np.ndarray, n_antennas: int, spacing: float,
              wavelength: float) -> np.ndarray:
    # uniform linear array along the y axis
    proj = unit_direction[1]
    idx = np.arange(n_antennas)
    return np.exp(-2j * math.pi * idx * spacing * proj / wavelength)


def clean_channel(x, ap: int, cfg: SimConfig,
                  layout: ScattererLayout | None = None) -> np.ndarray:
    """Impairment-free channel tensor for a transmitter at ``x`` seen by AP ``ap``."""
    x = np.asarray(x, dtype=np.float64)
    if not cfg.room.contains(x):
        raise ValueError(f"position {x.tolist()} is outside the room")
    if not 0 <= ap < cfg.B:
        raise ValueError(f"ap index {ap} out of range")
    if layout is None:
        layout = scatterer_layout(cfg)
    ap_pos = np.asarray(cfg.ap_positions[ap], dtype=np.float64)

    amps, phases, taps, rx_dirs, tx_dirs = [], [], [], [], []

    def add_path(total_dist, amp, extra_phase, arrive_from, depart_to):
        amps.append(amp)
        phases.append(-2.0 * math.pi * total_dist / cfg.wavelength + extra_phase)
        taps.append(int(round(total_dist / cfg.meters_per_tap)))
        d_rx = arrive_from - ap_pos
        rx_dirs.append(d_rx / max(np.linalg.norm(d_rx), 1e-9))
        d_tx = depart_to - x
        tx_dirs.append(d_tx / max(np.linalg.norm(d_tx), 1e-9))

    d_los = float(np.linalg.norm(x - ap_pos))
    add_path(d_los, 1.0 / max(d_los, 0.25), 0.0, x, ap_pos)
    for s, albedo, sphase in zip(layout.positions, layout.albedo, layout.phase):
        d1 = float(np.linalg.norm(s - x))
        d2 = float(np.linalg.norm(ap_pos - s))
        add_path(d1 + d2, albedo / max(d1 * d2, 0.25), sphase, s, s)

    w_idx = np.arange(cfg.W)
    ramps = np.exp(-2j * math.pi * np.outer(taps, w_idx) / cfg.W)  # (P, W)
    rx = np.stack([_steering(d, cfg.M_R, cfg.array_spacing, cfg.wavelength)
                   for d in rx_dirs])                              # (P, M_R)
    tx = np.stack([_steering(d, cfg.M_T, cfg.array_spacing, cfg.wavelength)
                   for d in tx_dirs])                              # (P, M_T)
    gains = np.asarray(amps) * np.exp(1j * np.asarray(phases))
    h = np.einsum("p,pw,pn,pm->wnm", gains, ramps, rx, tx)
    h[cfg.zero] = 0.0
    return h


def apply_impairments(h: np.ndarray, delta: int, phase: float, gain: float,
                      cfg: SimConfig) -> np.ndarray:
    """Apply one packet's transceiver impairments to a clean channel tensor.

    The timing offset ``delta`` (whole taps) becomes a linear phase ramp
    across subcarriers, which matches a circular shift of the delay-domain
    taps; ``phase`` rotates the whole tensor and ``gain`` scales it.
    """
    out = h * (gain * np.exp(1j * phase))
    ramp = np.exp(-2j * math.pi * np.arange(cfg.W) * delta / cfg.W)
    return out * ramp[:, None, None]


def synth_csi(x, ap: int, cfg: SimConfig, rng: np.random.Generator,
              layout: ScattererLayout | None = None,
              timestamp: int = 0) -> CsiMeasurement:
    """One impaired, noisy channel measurement for UE position ``x`` at AP ``ap``."""
    if layout is None:
        layout = scatterer_layout(cfg)
    _check_delay_budget(cfg, layout)
    h = clean_channel(x, ap, cfg, layout)
    imp = cfg.impairments
    delta = int(rng.integers(0, imp.delay_range + 1))
    phase = float(rng.uniform(0.0, imp.phase_range)) if imp.phase_range > 0 else 0.0
    gain_db = float(rng.uniform(-imp.gain_range_db, imp.gain_range_db)) \
        if imp.gain_range_db > 0 else 0.0
    h = apply_impairments(h, delta, phase, 10.0 ** (gain_db / 20.0), cfg)
    if math.isfinite(cfg.noise_snr_db):
        used = cfg.used
        sig_power = float(np.mean(np.abs(h[used]) ** 2))
        sigma2 = sig_power * 10.0 ** (-cfg.noise_snr_db / 10.0)
        shape = (used.size, cfg.M_R, cfg.M_T)
        noise = rng.normal(0.0, math.sqrt(sigma2 / 2.0), shape) \
            + 1j * rng.normal(0.0, math.sqrt(sigma2 / 2.0), shape)
        h = h.copy()
        h[used] += noise
    return CsiMeasurement(h, ap, np.asarray(x, dtype=np.float64), timestamp)


def synth_dataset(trajectory, cfg: SimConfig) -> list[CsiMeasurement]:
    """One measurement per (position, AP) pair, position-major ordering.

    Each packet carries independently drawn impairments: the access points
    are not synchronized, so nothing is shared between the B measurements of
    one position beyond the position itself.
    """
    trajectory = np.asarray(trajectory, dtype=np.float64)
    if trajectory.ndim != 2 or trajectory.shape[0] < 1 or trajectory.shape[1] != 2:
        raise ValueError("trajectory must be a nonempty (n, 2) array")
    layout = scatterer_layout(cfg)
    _check_delay_budget(cfg, layout)
    out = []
    for t, x in enumerate(trajectory):
        for ap in range(cfg.B):
            rng = np.random.default_rng([cfg.seed, 1, t, ap])
            out.append(synth_csi(x, ap, cfg, rng, layout=layout, timestamp=t))
    return out


def make_trajectory(kind: str, room: Room, n: int, seed: int = 0,
                    margin: float = 0.0) -> np.ndarray:
    """Generate ``n`` positions inside ``room``.

    ``lawnmower`` sweeps a serpentine lattice covering the room, ``random_walk``
    is a reflected Gaussian walk from the room center, and ``vip_path`` traces
    the three letter strokes V, I, P scaled into the room, sampled evenly by
    arc length.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    x0, x1 = margin, room.width - margin
    y0, y1 = margin, room.height - margin
    if not (x1 > x0 and y1 > y0):
        raise ValueError("margin leaves no interior room area")

    if kind == "lawnmower":
        rows = max(1, int(round(math.sqrt(n))))
        cols = int(math.ceil(n / rows))
        xs = np.linspace(x0, x1, cols) if cols > 1 else np.array([(x0 + x1) / 2])
        ys = np.linspace(y0, y1, rows) if rows > 1 else np.array([(y0 + y1) / 2])
        pts = []
        for r, y in enumerate(ys):
            sweep = xs if r % 2 == 0 else xs[::-1]
            pts.extend((xv, y) for xv in sweep)
        return np.asarray(pts[:n], dtype=np.float64)

    if kind == "random_walk":
        rng = np.random.default_rng(seed)
        step = min(room.width, room.height) / 40.0
        pos = np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0])
        pts = np.empty((n, 2))
        for i in range(n):
            pos = pos + rng.normal(0.0, step, 2)
            pos[0] = _reflect(pos[0], x0, x1)
            pos[1] = _reflect(pos[1], y0, y1)
            pts[i] = pos
        return pts

    if kind == "vip_path":
        strokes = [
            [(0.05, 0.85), (0.175, 0.15), (0.30, 0.85)],                # V
            [(0.45, 0.15), (0.45, 0.85)],                               # I
            [(0.62, 0.15), (0.62, 0.85), (0.88, 0.70), (0.62, 0.50)],   # P
        ]
        segs = []
        for stroke in strokes:
            pts = np.asarray(stroke)
            for a, b in zip(pts[:-1], pts[1:]):
                segs.append((a, b, float(np.linalg.norm(b - a))))
        total = sum(s[2] for s in segs)
        ts = np.linspace(0.0, total, n, endpoint=True) if n > 1 else np.array([total / 2])
        pts = np.empty((n, 2))
        for i, t in enumerate(ts):
            acc = 0.0
            for si, (a, b, length) in enumerate(segs):
                if t <= acc + length or si == len(segs) - 1:
                    frac = 0.0 if length == 0 else min(max((t - acc) / length, 0.0), 1.0)
                    pts[i] = a + frac * (b - a)
                    break
                acc += length
        pts[:, 0] = x0 + pts[:, 0] * (x1 - x0)
        pts[:, 1] = y0 + pts[:, 1] * (y1 - y0)
        return pts

    raise ValueError(f"unknown trajectory kind {kind!r}")


def _reflect(val: float, lo: float, hi: float) -> float:
    span = hi - lo
    v = (val - lo) % (2.0 * span)
    return lo + (v if v <= span else 2.0 * span - v)
