"""Monte Carlo engine: pulsed and CW emission, optical chain, detection.

Pulsed runs are processed in fixed partitions of ``PARTITION_PULSES`` pulses.
Each partition consumes randomness only from its own substream
``rng_substream(seed, partition_index)``, so the output is a pure function of
(config, seed) and is independent of how partitions would be scheduled; the
implementation runs them in order because the dot carries occupancy across
partition boundaries.  CW runs use stream index 0; background merges use a
dedicated stream index block far above any partition index.

Model per pulse:

1. The pulse excites the dot with probability 1 - exp(-power_ratio), but
   only if the dot is empty (an earlier excitation that has not yet emitted
   blocks the pulse; this is what suppresses the count rate when slow spin
   flips pile up).
2. The excitation branches into a charge complex by relative intensity and,
   with probability dark_fraction, into a dark configuration that emits after
   an exponential spin-flip delay of mean tau_slow; bright paths emit after
   an exponential delay of mean tau_fast.  Emissions later than the pulse
   period keep their absolute time (wraparound), they are never discarded.
3. Each pulse leaves a carrier reservoir with an exponential lifetime of mean
   recapture_time anchored at the pulse arrival.  After every emission, if
   the reservoir is still alive, re-excitation occurs with the power-scaled
   recapture probability; the recaptured carriers take a further exponential
   recapture_time to re-excite the dot, which then branches and decays like a
   fresh excitation.  This may repeat while the reservoir survives.
4. Every photon independently survives the chain with probability
   beta * directionality * sideband_pass * transmission (after the spectral
   filter selects in-band complexes), is routed uniformly among detectors,
   survives detector efficiency, gets Gaussian timing jitter
   (sigma = fwhm / 2.3548), and per-detector streams are then sorted and the
   detector dead time is applied.
"""

from __future__ import annotations

import math

import numpy as np

from .model import (
    ExcitationMode,
    ExcitationSpec,
    ExperimentConfig,
    config_digest,
    energy_to_wavelength_nm,
    validate,
)
from .numerics import rng_substream
from .streams import ClickStream, PhotonStream

__all__ = [
    "PARTITION_PULSES",
    "recapture_probability",
    "simulate_pulsed",
    "simulate_cw",
    "merge_background",
]

PARTITION_PULSES = 1 << 16
_BACKGROUND_STREAM_BASE = 1 << 32
_GAUSS_FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
_CW_CHUNK = 1 << 18


def recapture_probability(excitation: ExcitationSpec) -> float:
    """Per-emission re-excitation probability at the configured power.

    Scales linearly with power_ratio and clamps at
    recapture_probability_at_sat for power_ratio >= 1.
    """
    return excitation.recapture_probability_at_sat * min(excitation.power_ratio, 1.0)


def _require_valid(config: ExperimentConfig, mode: ExcitationMode) -> None:
    violations = validate(config)
    if violations:
        raise ValueError("invalid config: " + "; ".join(str(v) for v in violations))
    if config.excitation.mode is not mode:
        raise ValueError(f"config excitation mode is {config.excitation.mode.value}, expected {mode.value}")


def _chain_product(config: ExperimentConfig) -> float:
    ch = config.chain
    return ch.beta * ch.directionality * ch.sideband_pass * ch.transmission


def _band_mask(config: ExperimentConfig) -> np.ndarray:
    """Which complexes pass the spectral filter (bandwidth 0 = no filter)."""
    ch = config.chain
    if ch.filter_bandwidth <= 0:
        return np.ones(len(config.emitter.complexes), dtype=bool)
    lam = np.array([energy_to_wavelength_nm(cx.emission_energy) for cx in config.emitter.complexes])
    return np.abs(lam - ch.filter_center) <= 0.5 * ch.filter_bandwidth


def _grow(arr: np.ndarray) -> np.ndarray:
    out = np.empty(arr.size * 2, dtype=arr.dtype)
    out[: arr.size] = arr
    return out


def _simulate_partition(gen, start_pulse, n, period_ps, p_exc, cum_weights,
                        dark_fraction, tau_fast_ps, tau_slow_ps, p_rc, rc_ps,
                        next_free):
    """One fixed partition of pulses.  Returns photon columns and the updated
    dot-free time.  Draw order: five pre-drawn arrays (excite, complex, dark,
    delay, reservoir), then per-chain scalar draws in pulse order."""
    u_exc = gen.uniform(n)
    u_cx = gen.uniform(n)
    u_dark = gen.uniform(n).tolist()
    e_delay = gen.exponential(1.0, n).tolist()
    e_res = gen.exponential(1.0, n).tolist()
    cx_first = np.searchsorted(cum_weights, u_cx, side="right").tolist()

    cand = np.nonzero(u_exc < p_exc)[0].tolist()
    cap = len(cand) + 64
    out_pulse = np.empty(cap, np.int64)
    out_rel = np.empty(cap, np.float64)
    out_cx = np.empty(cap, np.int16)
    out_re = np.empty(cap, bool)
    m = 0
    n_complexes = cum_weights.size
    uniform = gen.uniform
    exponential = gen.exponential

    for i in cand:
        t_p = (start_pulse + i) * period_ps
        if t_p < next_free:
            continue
        if u_dark[i] < dark_fraction:
            delay = e_delay[i] * tau_slow_ps
        else:
            delay = e_delay[i] * tau_fast_ps
        t_e = t_p + delay
        if m == cap:
            out_pulse, out_rel = _grow(out_pulse), _grow(out_rel)
            out_cx, out_re = _grow(out_cx), _grow(out_re)
            cap *= 2
        out_pulse[m] = start_pulse + i
        out_rel[m] = t_e - t_p
        out_cx[m] = cx_first[i]
        out_re[m] = False
        m += 1
        if p_rc > 0.0:
            res_death = t_p + e_res[i] * rc_ps
            while t_e < res_death and uniform() < p_rc:
                t_c = t_e + exponential(rc_ps)
                if uniform() < dark_fraction:
                    d2 = exponential(tau_slow_ps)
                else:
                    d2 = exponential(tau_fast_ps)
                cx2 = min(int(np.searchsorted(cum_weights, uniform(), side="right")), n_complexes - 1)
                t_e = t_c + d2
                if m == cap:
                    out_pulse, out_rel = _grow(out_pulse), _grow(out_rel)
                    out_cx, out_re = _grow(out_cx), _grow(out_re)
                    cap *= 2
                out_pulse[m] = start_pulse + i
                out_rel[m] = t_e - t_p
                out_cx[m] = cx2
                out_re[m] = True
                m += 1
        next_free = t_e
    return out_pulse[:m], out_rel[:m], out_cx[:m], out_re[:m], next_free


def _detect(gen, abs_times, cx_idx, in_band, p_chain, eff, sigma, n_det):
    """Chain thinning, routing, detector efficiency, jitter.  Returns
    (detector index, jittered float times) for the clicks of this batch."""
    n = abs_times.size
    u_chain = gen.uniform(n)
    keep = (u_chain < p_chain) & in_band[cx_idx]
    t1 = abs_times[keep]
    k = t1.size
    u_route = gen.uniform(k)
    det = np.minimum((u_route * n_det).astype(np.int64), n_det - 1)
    u_eff = gen.uniform(k)
    keep2 = u_eff < eff[det]
    t2 = t1[keep2]
    det2 = det[keep2]
    z = gen.normal(0.0, 1.0, t2.size)
    return det2, t2 + z * sigma[det2]


def _dead_time_filter(ts: np.ndarray, dead_ps: float) -> np.ndarray:
    if dead_ps <= 0 or ts.size == 0:
        return ts
    keep = np.empty(ts.size, dtype=bool)
    last = -np.inf
    tl = ts.tolist()
    for i, t in enumerate(tl):
        if t - last >= dead_ps:
            keep[i] = True
            last = t
        else:
            keep[i] = False
    return ts[keep]


def _assemble_clicks(config: ExperimentConfig, det_parts, time_parts) -> list[ClickStream]:
    digest = config_digest(config)
    if det_parts:
        det_all = np.concatenate(det_parts)
        t_all = np.concatenate(time_parts)
    else:
        det_all = np.empty(0, np.int64)
        t_all = np.empty(0, np.float64)
    streams = []
    for d, spec in enumerate(config.detectors):
        ts = t_all[det_all == d]
        ts = np.maximum(np.rint(ts), 0).astype(np.int64)
        ts.sort()
        ts = _dead_time_filter(ts, spec.dead_time * 1000.0)
        streams.append(ClickStream(detector_id=d, timestamps=ts, meta=digest))
    return streams


def simulate_pulsed(config: ExperimentConfig) -> tuple[PhotonStream, list[ClickStream]]:
    """Simulate a pulsed run.  Returns the emitted photons and one click
    stream per detector.  Bit-for-bit reproducible for a given config."""
    _require_valid(config, ExcitationMode.PULSED)
    n_pulses = int(round(config.duration))
    if n_pulses < 1:
        raise ValueError("pulsed duration is a pulse count and must be >= 1")

    em = config.emitter
    period_ps = 1e12 / config.excitation.rep_rate
    p_exc = 1.0 - math.exp(-config.excitation.power_ratio)
    weights = np.array([cx.relative_intensity for cx in em.complexes], dtype=float)
    cum_weights = np.cumsum(weights)
    cum_weights[-1] = max(cum_weights[-1], 1.0)  # guard the top edge for u -> 1
    p_rc = recapture_probability(config.excitation)
    in_band = _band_mask(config)
    p_chain = _chain_product(config)
    eff = np.array([d.efficiency for d in config.detectors])
    sigma = np.array([d.jitter_fwhm * _GAUSS_FWHM_TO_SIGMA for d in config.detectors])
    n_det = len(config.detectors)

    pulse_parts, rel_parts, cx_parts, re_parts = [], [], [], []
    det_parts, time_parts = [], []
    next_free = -np.inf
    for start in range(0, n_pulses, PARTITION_PULSES):
        n = min(PARTITION_PULSES, n_pulses - start)
        gen = rng_substream(config.rng_seed, start // PARTITION_PULSES)
        pulses, rel, cx, re, next_free = _simulate_partition(
            gen, start, n, period_ps, p_exc, cum_weights,
            em.dark_fraction, em.tau_fast * 1000.0, em.tau_slow * 1000.0,
            p_rc, config.excitation.recapture_time, next_free,
        )
        abs_times = pulses * period_ps + rel
        det, times = _detect(gen, abs_times, cx, in_band, p_chain, eff, sigma, n_det)
        pulse_parts.append(pulses)
        rel_parts.append(rel)
        cx_parts.append(cx)
        re_parts.append(re)
        det_parts.append(det)
        time_parts.append(times)

    photons = PhotonStream(
        pulse_index=np.concatenate(pulse_parts),
        emission_time=np.concatenate(rel_parts),
        complex_index=np.concatenate(cx_parts),
        is_reexcitation=np.concatenate(re_parts),
        complex_tags=tuple(cx.tag for cx in em.complexes),
    )
    return photons, _assemble_clicks(config, det_parts, time_parts)


def simulate_cw(config: ExperimentConfig) -> list[ClickStream]:
    """Simulate a CW run of config.duration seconds.

    Renewal loop: each emission cycle is an exponential refill wait followed
    by an exponential tau_fast emission delay.  The refill wait has mean
    tau_fast * exp(-r) / (1 - exp(-r)) at power ratio r, so the emission rate
    is exactly (1 - exp(-r)) / tau_fast: the same exponential saturation law
    the pulsed engine obeys per pulse, with ceiling 1 / tau_fast.
    """
    _require_valid(config, ExcitationMode.CW)
    duration_ps = config.duration * 1e12

    if config.excitation.power_ratio <= 0:
        return _assemble_clicks(config, [], [])

    em = config.emitter
    tau_fast_ps = em.tau_fast * 1000.0
    rho = config.excitation.power_ratio
    # mean cycle time = wait + tau_fast = tau_fast / (1 - exp(-rho))
    tau_wait_ps = tau_fast_ps * math.exp(-rho) / -math.expm1(-rho)
    weights = np.array([cx.relative_intensity for cx in em.complexes], dtype=float)
    cum_weights = np.cumsum(weights)
    cum_weights[-1] = max(cum_weights[-1], 1.0)
    in_band = _band_mask(config)
    p_chain = _chain_product(config)
    eff = np.array([d.efficiency for d in config.detectors])
    sigma = np.array([d.jitter_fwhm * _GAUSS_FWHM_TO_SIGMA for d in config.detectors])
    n_det = len(config.detectors)

    gen = rng_substream(config.rng_seed, 0)
    det_parts, time_parts = [], []
    t = 0.0
    while t < duration_ps:
        waits = gen.exponential(tau_wait_ps, _CW_CHUNK)
        lives = gen.exponential(tau_fast_ps, _CW_CHUNK)
        emit = t + np.cumsum(waits + lives)
        u_cx = gen.uniform(_CW_CHUNK)
        cx = np.minimum(np.searchsorted(cum_weights, u_cx, side="right"), cum_weights.size - 1)
        t = float(emit[-1])
        m = int(np.searchsorted(emit, duration_ps))
        if m == 0:
            break
        det, times = _detect(gen, emit[:m], cx[:m], in_band, p_chain, eff, sigma, n_det)
        det_parts.append(det)
        time_parts.append(times)
    return _assemble_clicks(config, det_parts, time_parts)


def merge_background(stream: ClickStream, dark_rate: float, config: ExperimentConfig) -> ClickStream:
    """Merge Poisson-distributed uncorrelated dark counts into a stream.

    The dark count total is Poisson(dark_rate * duration) with timestamps
    uniform over the run, drawn from the background substream for this
    detector, so the merge is reproducible and independent of the signal
    draws.  dark_rate is in counts/s.
    """
    if dark_rate < 0:
        raise ValueError("dark_rate must be >= 0")
    if dark_rate == 0:
        return stream
    if config.excitation.mode is ExcitationMode.PULSED:
        duration_s = round(config.duration) / config.excitation.rep_rate
    else:
        duration_s = config.duration
    duration_ps = duration_s * 1e12
    gen = rng_substream(config.rng_seed, _BACKGROUND_STREAM_BASE + stream.detector_id)
    n = int(gen.poisson(dark_rate * duration_s))
    bg = np.floor(gen.uniform(n) * duration_ps).astype(np.int64)
    merged = np.concatenate([stream.timestamps, bg])
    merged.sort()
    return ClickStream(detector_id=stream.detector_id, timestamps=merged, meta=stream.meta)
