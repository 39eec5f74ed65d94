"""Monte Carlo generator of cascade emission events and detector clicks.

Every random draw is a deterministic function of (seed, cycle_index,
draw_slot) through a counter-based Philox stream: cycle ``i`` owns uniforms
``[i*DRAWS_PER_CYCLE, (i+1)*DRAWS_PER_CYCLE)`` of the stream keyed by the
seed. Chunked and serial generation therefore agree bit-for-bit, whatever
the worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

from . import polarization as pol
from .errors import InvalidInputError
from .pttg import TagStream

# uniform slots per cycle; must stay a multiple of 4 (Philox emits 4 uint64
# per counter increment, so chunk boundaries then never split a counter)
DRAWS_PER_CYCLE = 12
_SLOT_WAIT = 0        # cw re-excitation wait
_SLOT_XX_DELAY = 1    # biexciton decay delay
_SLOT_TAU = 2         # exciton decay delay
_SLOT_INTERRUPT = 3   # electron capture race
_SLOT_OUTCOME = 4     # joint polarization outcome
_SLOT_LEAK = 5        # trion spectral leak
_SLOT_DET_XX = 6      # detector survival, XX photon
_SLOT_DET_X = 7       # detector survival, X photon
_SLOT_JIT_XX = 8      # timing jitter, XX photon
_SLOT_JIT_X = 9       # timing jitter, X photon
_SLOT_LEAK_OUT = 10   # leaked trion polarization outcome

_DARK_SUBKEY = 0xDA << 40

CHUNK_CYCLES = 1 << 16


@dataclass(frozen=True)
class EmitterConfig:
    """Source, charging and detection parameters of one simulated run."""

    fss_uev: float = 0.0
    t_xx_ns: float = 0.5          # biexciton lifetime
    t_x_ns: float = 1.0           # exciton lifetime
    rep_period_ns: float = 12.5   # pulse period (pulsed) / mean re-excitation wait (cw)
    pulsed: bool = True
    electron_capture_rate: float = 0.0  # 1/ns
    hole_capture_rate: float = 0.0      # 1/ns
    background_beta: float = 0.0
    detector_efficiency: tuple = (1.0, 1.0, 1.0, 1.0)
    dark_rate: tuple = (0.0, 0.0, 0.0, 0.0)  # counts/ns per channel
    jitter_sigma_ns: float = 0.0
    spectral_leak_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.t_xx_ns <= 0 or self.t_x_ns <= 0:
            raise InvalidInputError("lifetimes must be > 0")
        if self.rep_period_ns <= 0:
            raise InvalidInputError("repetition period must be > 0")
        if self.fss_uev < 0:
            raise InvalidInputError("FSS magnitude must be >= 0")
        if min(self.electron_capture_rate, self.hole_capture_rate) < 0:
            raise InvalidInputError("capture rates must be >= 0")
        if not 0.0 <= self.background_beta <= 1.0:
            raise InvalidInputError("background_beta must be in [0, 1]")
        if not 0.0 <= self.spectral_leak_prob <= 1.0:
            raise InvalidInputError("spectral_leak_prob must be in [0, 1]")
        eff = self.efficiency_array()
        if eff.min() < 0 or eff.max() > 1:
            raise InvalidInputError("detector efficiencies must be in [0, 1]")
        if self.dark_array().min() < 0:
            raise InvalidInputError("dark rates must be >= 0")
        if self.jitter_sigma_ns < 0:
            raise InvalidInputError("jitter sigma must be >= 0")

    def efficiency_array(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.detector_efficiency, dtype=float), (4,)).copy()

    def dark_array(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.dark_rate, dtype=float), (4,)).copy()

    @property
    def interruption_probability(self) -> float:
        """Chance the exciton captures an electron before it decays."""
        c = self.electron_capture_rate
        return c / (c + 1.0 / self.t_x_ns) if c > 0 else 0.0


@dataclass(frozen=True)
class AnalyzerSetting:
    """One analyzer configuration: a basis per arm and its channel map.

    Channels, in order: XX co-polarized, XX cross-polarized, X co-polarized,
    X cross-polarized outputs of the two polarizing beamsplitters.
    """

    xx_basis: str
    x_basis: str
    setting_id: int = 0
    channels: tuple = (0, 1, 2, 3)

    def __post_init__(self):
        for b in (self.xx_basis, self.x_basis):
            if b not in pol.ORTHOGONAL:
                raise InvalidInputError(f"unknown basis label {b!r}")
        if len(set(self.channels)) != 4:
            raise InvalidInputError("analyzer channels must be distinct")

    def outcome_labels(self):
        """The four (xx, x) outcome label pairs in channel-pair order."""
        xb, yb = self.xx_basis, self.x_basis
        return ((xb, yb), (xb, pol.ORTHOGONAL[yb]),
                (pol.ORTHOGONAL[xb], yb), (pol.ORTHOGONAL[xb], pol.ORTHOGONAL[yb]))


@dataclass(frozen=True)
class PairEvent:
    """One cascade emission: XX photon emission time (relative to the cycle
    start), XX->X delay tau, and whether charging interrupted the cascade."""

    cycle_index: int
    t_emit_xx_ns: float
    tau_ns: float
    interrupted: bool


def cycle_uniforms(seed: int, first_cycle: int, count: int) -> np.ndarray:
    """Uniform draws for cycles [first_cycle, first_cycle+count), shape (count, 12)."""
    bitgen = Philox(key=seed, counter=first_cycle * (DRAWS_PER_CYCLE // 4))
    return Generator(bitgen).random(count * DRAWS_PER_CYCLE).reshape(count, DRAWS_PER_CYCLE)


def _exponential(u: np.ndarray, mean: float) -> np.ndarray:
    return -mean * np.log1p(-u)


def sample_pair(config: EmitterConfig, cycle_index: int) -> PairEvent:
    """Draw the cascade event of one excitation cycle."""
    if cycle_index < 0:
        raise InvalidInputError("cycle_index must be >= 0")
    u = cycle_uniforms(config.seed, cycle_index, 1)[0]
    t_emit = float(_exponential(u[_SLOT_XX_DELAY], config.t_xx_ns))
    tau = float(_exponential(u[_SLOT_TAU], config.t_x_ns))
    interrupted = bool(u[_SLOT_INTERRUPT] < config.interruption_probability)
    return PairEvent(cycle_index, t_emit, tau, interrupted)


def _outcome_probabilities(config: EmitterConfig, setting: AnalyzerSetting,
                           tau: np.ndarray) -> np.ndarray:
    """Born-rule joint probabilities of the four channel-pair outcomes.

    Shape (n, 4); outcome order matches AnalyzerSetting.outcome_labels().
    Background mixing replaces a fraction beta of pairs by I/4.
    """
    phi = 2.0 * np.pi * config.fss_uev * tau / pol.PLANCK_H_UEV_NS
    e_phi = np.exp(1j * phi)
    probs = np.empty((len(tau), 4))
    for k, (la, lb) in enumerate(setting.outcome_labels()):
        a, b = pol.basis_ket(la), pol.basis_ket(lb)
        u_hh = a[0] * b[0]
        v_vv = a[1] * b[1]
        # |<ab|psi(tau)>|^2 with psi = (HH + e^{i phi} VV)/sqrt(2)
        born = 0.5 * (abs(u_hh) ** 2 + abs(v_vv) ** 2
                      + 2.0 * np.real(e_phi * np.conj(v_vv) * u_hh))
        probs[:, k] = (1.0 - config.background_beta) * born + config.background_beta / 4.0
    return probs


def detect(pair: PairEvent, setting: AnalyzerSetting, config: EmitterConfig,
           t0_ns: float | None = None):
    """Detector clicks of a single pair; returns a list of (timestamp_ps, channel).

    ``t0_ns`` is the absolute start time of the pair's cycle; defaults to
    cycle_index * rep_period for pulsed operation.
    """
    if t0_ns is None:
        t0_ns = pair.cycle_index * config.rep_period_ns
    u = cycle_uniforms(config.seed, pair.cycle_index, 1)
    tags = _detect_block(config, setting,
                         np.array([t0_ns + pair.t_emit_xx_ns]),
                         np.array([pair.tau_ns]),
                         np.array([pair.interrupted]), u)
    order = np.lexsort((tags[1], tags[0]))
    return [(int(tags[0][i]), int(tags[1][i])) for i in order]


def _detect_block(config: EmitterConfig, setting: AnalyzerSetting,
                  t_emit_abs: np.ndarray, tau: np.ndarray,
                  interrupted: np.ndarray, u: np.ndarray):
    """Vectorized detection of a block of pairs -> (timestamps_ps, channels)."""
    n = len(t_emit_abs)
    eff = config.efficiency_array()
    ch = np.asarray(setting.channels)

    probs = _outcome_probabilities(config, setting, tau)
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0
    outcome = (u[:, _SLOT_OUTCOME, None] >= cum).sum(axis=1)

    xx_co = outcome < 2
    x_co = (outcome % 2) == 0
    # interrupted cascades: the XX photon still exists; its marginal is 1/2-1/2
    xx_co = np.where(interrupted, u[:, _SLOT_OUTCOME] < 0.5, xx_co)

    ts_list, ch_list = [], []

    xx_ch = np.where(xx_co, ch[0], ch[1])
    xx_keep = u[:, _SLOT_DET_XX] < eff[xx_ch]
    if xx_keep.any():
        t = t_emit_abs[xx_keep]
        if config.jitter_sigma_ns > 0:
            t = t + config.jitter_sigma_ns * ndtri(
                np.clip(u[xx_keep, _SLOT_JIT_XX], 1e-12, 1 - 1e-12))
        ts_list.append(t)
        ch_list.append(xx_ch[xx_keep])

    # X photon of an uninterrupted cascade
    x_ch = np.where(x_co, ch[2], ch[3])
    x_keep = ~interrupted & (u[:, _SLOT_DET_X] < eff[x_ch])
    if x_keep.any():
        t = t_emit_abs[x_keep] + tau[x_keep]
        if config.jitter_sigma_ns > 0:
            t = t + config.jitter_sigma_ns * ndtri(
                np.clip(u[x_keep, _SLOT_JIT_X], 1e-12, 1 - 1e-12))
        ts_list.append(t)
        ch_list.append(x_ch[x_keep])

    # trion photon leaking into the X spectral window (unpolarized)
    if config.spectral_leak_prob > 0:
        leak_co = u[:, _SLOT_LEAK_OUT] < 0.5
        leak_ch = np.where(leak_co, ch[2], ch[3])
        leak = (interrupted & (u[:, _SLOT_LEAK] < config.spectral_leak_prob)
                & (u[:, _SLOT_DET_X] < eff[leak_ch]))
        if leak.any():
            t = t_emit_abs[leak] + tau[leak]
            if config.jitter_sigma_ns > 0:
                t = t + config.jitter_sigma_ns * ndtri(
                    np.clip(u[leak, _SLOT_JIT_X], 1e-12, 1 - 1e-12))
            ts_list.append(t)
            ch_list.append(leak_ch[leak])

    if not ts_list:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.uint8)
    ts = np.concatenate(ts_list)
    chs = np.concatenate(ch_list).astype(np.uint8)
    ts_ps = np.maximum(np.rint(ts * 1000.0), 0).astype(np.int64)
    return ts_ps, chs


def _cycle_starts(config: EmitterConfig, cycles: int) -> np.ndarray:
    """Absolute cycle start times in ns (pulsed clock or cw cumulative waits)."""
    if config.pulsed:
        return np.arange(cycles, dtype=float) * config.rep_period_ns
    waits = np.empty(cycles)
    for first in range(0, cycles, CHUNK_CYCLES):
        count = min(CHUNK_CYCLES, cycles - first)
        u = cycle_uniforms(config.seed, first, count)
        waits[first:first + count] = _exponential(u[:, _SLOT_WAIT], config.rep_period_ns)
    starts = np.cumsum(waits)
    starts[1:] = starts[:-1]
    starts[0] = 0.0
    return starts


def _dark_tags(config: EmitterConfig, setting_id: int, duration_ps: int):
    """Poisson dark counts per channel over [0, duration], keyed independently
    of the cycle stream so worker layout cannot affect them."""
    rates = config.dark_array()
    ts_list, ch_list = [], []
    for channel in range(4):
        if rates[channel] <= 0:
            continue
        subkey = _DARK_SUBKEY | (setting_id << 8) | channel
        rng = Generator(Philox(key=np.array([config.seed, subkey], dtype=np.uint64)))
        n = rng.poisson(rates[channel] * duration_ps / 1000.0)
        ts = np.sort(rng.integers(0, duration_ps, size=n, dtype=np.int64))
        ts_list.append(ts)
        ch_list.append(np.full(n, channel, dtype=np.uint8))
    if not ts_list:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.uint8)
    return np.concatenate(ts_list), np.concatenate(ch_list)


def simulate_setting(config: EmitterConfig, setting: AnalyzerSetting,
                     cycles: int, workers: int = 1) -> TagStream:
    """Simulate one analyzer setting over the given number of cycles."""
    if cycles < 1:
        raise InvalidInputError("cycles must be >= 1")
    starts = _cycle_starts(config, cycles)

    def do_chunk(first):
        count = min(CHUNK_CYCLES, cycles - first)
        u = cycle_uniforms(config.seed, first, count)
        t_emit = starts[first:first + count] + _exponential(u[:, _SLOT_XX_DELAY], config.t_xx_ns)
        tau = _exponential(u[:, _SLOT_TAU], config.t_x_ns)
        interrupted = u[:, _SLOT_INTERRUPT] < config.interruption_probability
        return _detect_block(config, setting, t_emit, tau, interrupted, u)

    firsts = list(range(0, cycles, CHUNK_CYCLES))
    if workers > 1 and len(firsts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(do_chunk, firsts))
    else:
        chunks = [do_chunk(f) for f in firsts]

    ts = np.concatenate([c[0] for c in chunks])
    chs = np.concatenate([c[1] for c in chunks])

    if config.pulsed:
        duration_ps = int(round(cycles * config.rep_period_ns * 1000))
    else:
        duration_ps = int(round((starts[-1] + config.rep_period_ns) * 1000))
    dts, dch = _dark_tags(config, setting.setting_id, max(duration_ps, 1))
    ts = np.concatenate([ts, dts])
    chs = np.concatenate([chs, dch])

    order = np.lexsort((chs, ts))
    return TagStream(ts[order].astype(np.uint64), chs[order],
                     np.full(len(ts), setting.setting_id, dtype=np.uint8))


def run_experiment(config: EmitterConfig, settings, cycles_per_setting: int,
                   workers: int = 1) -> dict:
    """Simulate every analyzer setting; returns {setting_id: TagStream}.

    Settings use statistically independent randomness: each gets its own
    sub-seed derived deterministically from (config.seed, setting_id).
    """
    if cycles_per_setting < 1:
        raise InvalidInputError("cycles_per_setting must be >= 1")
    streams = {}
    for setting in settings:
        sub = replace(config, seed=derive_seed(config.seed, setting.setting_id))
        streams[setting.setting_id] = simulate_setting(sub, setting, cycles_per_setting,
                                                       workers=workers)
    return streams


def derive_seed(seed: int, stream_id: int) -> int:
    """Stable 64-bit sub-seed for an independent stream of one run."""
    mix = (seed * 0x9E3779B97F4A7C15 + stream_id * 0xBF58476D1CE4E5B9 + 1) % (1 << 64)
    mix ^= mix >> 31
    return mix


def tomo36_settings():
    """The over-complete 6x6 analyzer set, one setting per basis-label pair."""
    labels = ("H", "V", "D", "A", "R", "L")
    return [AnalyzerSetting(a, b, setting_id=i * 6 + j)
            for i, a in enumerate(labels) for j, b in enumerate(labels)]


def bases3_settings():
    """Co-basis settings in the linear, diagonal and circular bases; the four
    channels of each already give the co- and cross-polarized counts."""
    return [AnalyzerSetting("H", "H", setting_id=0),
            AnalyzerSetting("D", "D", setting_id=1),
            AnalyzerSetting("R", "R", setting_id=2)]


SETTING_PRESETS = {
    "bases3": bases3_settings,
    "tomo36": tomo36_settings,
}
