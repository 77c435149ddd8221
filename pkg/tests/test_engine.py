"""Monte Carlo engine checks against closed-form expectations.

Every statistical assertion states its oracle: click counts are sums of
independent Bernoulli trials (pulsed) or thinned renewal counts (CW), so the
expected value is exact and the tolerance is set at 5-6 standard errors.
"""

import dataclasses
import re
from pathlib import Path

import numpy as np
import pytest

import photonstat
from photonstat.engine import (
    merge_background,
    recapture_probability,
    simulate_cw,
    simulate_pulsed,
)
from photonstat.model import (
    ChargeComplex,
    ChargeTag,
    DetectorSpec,
    ExcitationMode,
    paper_device_defaults,
)
from photonstat.streams import ClickStream, stream_digest


def _clean_config(**overrides):
    """Single line, lossless chain, one perfect detector, no dark states."""
    base = paper_device_defaults()
    cfg = dataclasses.replace(
        base,
        emitter=dataclasses.replace(
            base.emitter,
            dark_fraction=0.0,
            slow_branch_fraction=0.0,
            complexes=(
                ChargeComplex(tag=ChargeTag.XMINUS, emission_energy=1264.0, relative_intensity=1.0),
            ),
        ),
        excitation=dataclasses.replace(
            base.excitation,
            rep_rate=20e6,
            power_ratio=1.0,
            recapture_probability_at_sat=0.0,
        ),
        chain=dataclasses.replace(
            base.chain, beta=1.0, directionality=1.0, sideband_pass=1.0,
            transmission=1.0, filter_bandwidth=0.0,
        ),
        detectors=(DetectorSpec(efficiency=1.0, jitter_fwhm=0.0),),
        duration=200_000,
        rng_seed=99,
    )
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


class TestPulsedRates:
    def test_click_count_matches_bernoulli_oracle(self):
        # Each pulse excites with p = 1 - e^{-rho}; every photon survives the
        # unit chain and the unit-efficiency detector.  N = 2e5, rho = 1:
        # mean = N(1 - 1/e) = 126424, sigma = sqrt(N p (1-p)) ~ 216.
        cfg = _clean_config()
        _, clicks = simulate_pulsed(cfg)
        p = 1.0 - np.exp(-1.0)
        mean = cfg.duration * p
        sigma = np.sqrt(cfg.duration * p * (1 - p))
        assert abs(len(clicks[0]) - mean) < 5 * sigma

    def test_power_scaling(self):
        # p_exc(0.25) = 1 - e^{-0.25} = 0.2212
        cfg = _clean_config(
            excitation=dataclasses.replace(_clean_config().excitation, power_ratio=0.25)
        )
        _, clicks = simulate_pulsed(cfg)
        p = 1.0 - np.exp(-0.25)
        sigma = np.sqrt(cfg.duration * p * (1 - p))
        assert abs(len(clicks[0]) - cfg.duration * p) < 5 * sigma

    def test_dark_routing_blocks_following_pulses(self):
        # An excitation caught in the dark configuration still emits after
        # the slow spin flip, and the occupied dot ignores pulses that
        # arrive before it frees.  Renewal oracle: a cycle is B blocked
        # pulses plus Geometric(p) waits, with
        #   B_mean = d * q/(1-q),  q = e^{-T/tau_slow}
        # (the fast branch never outlasts the 50 ns period), so the
        # emission count is N / (B_mean + 1/p).
        base = _clean_config()
        cfg = dataclasses.replace(
            base,
            emitter=dataclasses.replace(
                base.emitter, dark_fraction=0.3, slow_branch_fraction=0.3
            ),
        )
        _, clicks = simulate_pulsed(cfg)
        p = 1.0 - np.exp(-1.0)
        q = np.exp(-50.0 / 30.0)
        b_mean = 0.3 * q / (1.0 - q)
        expect = cfg.duration / (b_mean + 1.0 / p)
        assert abs(len(clicks[0]) - expect) < 5 * np.sqrt(expect)

    def test_chain_and_detector_thinning(self):
        # Thinning composes multiplicatively:
        # p = (1-e^{-1}) * beta * dir * side * T * eta = 0.6321 * 0.9 * 0.5 * 0.8 * 0.7 * 0.6
        base = _clean_config()
        cfg = dataclasses.replace(
            base,
            chain=dataclasses.replace(
                base.chain, beta=0.9, directionality=0.5, sideband_pass=0.8, transmission=0.7
            ),
            detectors=(DetectorSpec(efficiency=0.6, jitter_fwhm=0.0),),
        )
        _, clicks = simulate_pulsed(cfg)
        p = (1.0 - np.exp(-1.0)) * 0.9 * 0.5 * 0.8 * 0.7 * 0.6
        sigma = np.sqrt(cfg.duration * p * (1 - p))
        assert abs(len(clicks[0]) - cfg.duration * p) < 5 * sigma

    def test_two_detectors_split_the_photons(self):
        # A photon reaches exactly one arm of the splitter, so per-arm counts
        # are Binomial(N_photons, eta/2) and the arms never share a photon.
        cfg = _clean_config(
            detectors=(
                DetectorSpec(efficiency=1.0, jitter_fwhm=0.0),
                DetectorSpec(efficiency=1.0, jitter_fwhm=0.0),
            )
        )
        photons, clicks = simulate_pulsed(cfg)
        total = len(clicks[0]) + len(clicks[1])
        assert total == len(photons)  # unit chain loses nothing
        p_arm = 0.5 * (1.0 - np.exp(-1.0))
        sigma = np.sqrt(cfg.duration * p_arm * (1 - p_arm))
        assert abs(len(clicks[0]) - cfg.duration * p_arm) < 5 * sigma


class TestEmissionStructure:
    def test_at_most_one_photon_per_pulse_without_recapture(self):
        photons, _ = simulate_pulsed(_clean_config())
        assert np.unique(photons.pulse_index).size == len(photons)
        assert not photons.is_reexcitation.any()

    def test_reexcitation_pairs_follow_their_primary(self):
        base = _clean_config()
        cfg = dataclasses.replace(
            base,
            excitation=dataclasses.replace(
                base.excitation, recapture_probability_at_sat=1.0, power_ratio=3.0
            ),
            duration=50_000,
        )
        photons, _ = simulate_pulsed(cfg)
        re_mask = photons.is_reexcitation
        assert re_mask.any()
        primaries = {int(p) for p in photons.pulse_index[~re_mask]}
        for pulse, t in zip(photons.pulse_index[re_mask], photons.emission_time[re_mask]):
            assert int(pulse) in primaries
            first = photons.emission_time[(photons.pulse_index == pulse) & ~re_mask]
            assert t > first[0]

    def test_recapture_probability_saturates(self):
        ex = _clean_config().excitation
        at_sat = dataclasses.replace(ex, power_ratio=1.0, recapture_probability_at_sat=0.4)
        above = dataclasses.replace(ex, power_ratio=7.0, recapture_probability_at_sat=0.4)
        below = dataclasses.replace(ex, power_ratio=0.25, recapture_probability_at_sat=0.4)
        assert recapture_probability(at_sat) == pytest.approx(0.4)
        assert recapture_probability(above) == pytest.approx(0.4)  # clamped at saturation
        assert recapture_probability(below) == pytest.approx(0.1)

    def test_dark_branch_fraction_sets_the_slow_tail(self):
        # Survival past t = 5 tau_fast: the slow branch keeps
        # e^{-5 tau_f/tau_s} = e^{-0.25}, the fast branch e^{-5}.
        # At branch fraction 0.5 the late fraction is their average, 0.393.
        base = _clean_config()
        cfg = dataclasses.replace(
            base,
            emitter=dataclasses.replace(
                base.emitter, dark_fraction=0.5, slow_branch_fraction=0.5
            ),
        )
        photons, _ = simulate_pulsed(cfg)
        frac_late = np.mean(photons.emission_time > 5 * 1500.0)
        expect = 0.5 * np.exp(-5 * 1.5 / 30.0) + 0.5 * np.exp(-5.0)
        assert frac_late == pytest.approx(expect, abs=0.01)

    def test_spectral_filter_drops_out_of_band_lines(self):
        # Two lines, 0.7/0.3; the 1268 meV line sits ~3 nm away from the
        # filter center, far outside a 0.1 nm window, so the detected count
        # tracks the 0.7 in-band weight alone.
        base = paper_device_defaults()
        cfg = dataclasses.replace(
            _clean_config(),
            emitter=dataclasses.replace(
                _clean_config().emitter, complexes=base.emitter.complexes
            ),
            chain=dataclasses.replace(
                _clean_config().chain,
                filter_bandwidth=0.1,
                filter_center=base.chain.filter_center,
            ),
        )
        _, clicks = simulate_pulsed(cfg)
        p = (1.0 - np.exp(-1.0)) * 0.7
        sigma = np.sqrt(cfg.duration * p)
        assert abs(len(clicks[0]) - cfg.duration * p) < 5 * sigma

    def test_jitter_lets_clicks_precede_their_pulse(self):
        # Emission delays pile up right at the pulse, so Gaussian timing
        # jitter pushes a percent-scale share of clicks to negative delay;
        # folded into the period they wrap to just under one full period.
        # Without jitter the folded times stay below ~20 tau_fast.
        cfg0 = _clean_config()
        cfg1 = _clean_config(detectors=(DetectorSpec(efficiency=1.0, jitter_fwhm=200.0),))
        period = 1e12 / 20e6
        _, c0 = simulate_pulsed(cfg0)
        _, c1 = simulate_pulsed(cfg1)
        folded0 = np.mod(c0[0].timestamps.astype(float), period)
        folded1 = np.mod(c1[0].timestamps.astype(float), period)
        assert folded0.max() < 0.6 * period
        wrapped = np.count_nonzero(folded1 > 0.9 * period)
        assert wrapped > 100
        # jitter reroutes clicks in time, never creates or destroys them
        assert abs(len(c1[0]) - len(c0[0])) < 5 * np.sqrt(len(c0[0]))

    def test_dead_time_enforces_minimum_spacing(self):
        cfg = _clean_config(
            detectors=(DetectorSpec(efficiency=1.0, jitter_fwhm=0.0, dead_time=80_000.0 / 1000.0),)
        )
        _, clicks = simulate_pulsed(cfg)
        gaps = np.diff(clicks[0].timestamps)
        assert gaps.min() >= 80_000  # 80 ns in ps
        assert len(clicks[0]) > 0


class TestCw:
    def test_rate_matches_renewal_oracle(self):
        # Renewal cycle = Exp(wait) + Exp(tau_fast) with wait chosen so the
        # event rate is exactly (1 - e^{-rho}) / tau_fast.
        for rho, seed in [(0.2, 5), (1.0, 6), (5.0, 7)]:
            cfg = _clean_config(
                excitation=dataclasses.replace(
                    _clean_config().excitation, mode=ExcitationMode.CW, power_ratio=rho
                ),
                duration=0.005,
                rng_seed=seed,
            )
            clicks = simulate_cw(cfg)
            rate = -np.expm1(-rho) / 1.5e-9
            mean = rate * cfg.duration
            assert abs(len(clicks[0]) - mean) < 6 * np.sqrt(mean), rho

    def test_zero_power_emits_nothing(self):
        cfg = _clean_config(
            excitation=dataclasses.replace(
                _clean_config().excitation, mode=ExcitationMode.CW, power_ratio=0.0
            ),
            duration=0.001,
        )
        assert len(simulate_cw(cfg)[0]) == 0

    def test_all_clicks_inside_duration(self):
        cfg = _clean_config(
            excitation=dataclasses.replace(
                _clean_config().excitation, mode=ExcitationMode.CW
            ),
            duration=0.001,
        )
        ts = simulate_cw(cfg)[0].timestamps
        assert ts.min() >= 0
        assert ts.max() < 0.001 * 1e12 + 1  # jitter-free clean config


class TestModeGuards:
    def test_pulsed_engine_rejects_cw_config(self):
        cfg = _clean_config(
            excitation=dataclasses.replace(
                _clean_config().excitation, mode=ExcitationMode.CW
            )
        )
        with pytest.raises(ValueError, match="CW"):
            simulate_pulsed(cfg)

    def test_cw_engine_rejects_pulsed_config(self):
        with pytest.raises(ValueError, match="[Pp]ulsed"):
            simulate_cw(_clean_config())

    def test_invalid_config_rejected_with_violations(self):
        base = _clean_config()
        cfg = dataclasses.replace(
            base, emitter=dataclasses.replace(base.emitter, tau_fast=-1.0)
        )
        with pytest.raises(ValueError, match="tau_fast"):
            simulate_pulsed(cfg)


class TestDeterminism:
    def test_identical_reruns(self):
        cfg = _clean_config(duration=30_000)
        _, a = simulate_pulsed(cfg)
        _, b = simulate_pulsed(cfg)
        assert stream_digest(a[0]) == stream_digest(b[0])

    def test_seed_changes_output(self):
        cfg = _clean_config(duration=30_000)
        _, a = simulate_pulsed(cfg)
        _, b = simulate_pulsed(dataclasses.replace(cfg, rng_seed=100))
        assert stream_digest(a[0]) != stream_digest(b[0])

    def test_full_blocks_are_prefix_stable(self):
        # The generator is re-keyed per 2^16-pulse block, so a run one block
        # long reproduces the first block of a longer run exactly.
        cfg_small = _clean_config(duration=1 << 16)
        cfg_large = _clean_config(duration=2 << 16)
        small, _ = simulate_pulsed(cfg_small)
        large, _ = simulate_pulsed(cfg_large)
        n = len(small)
        np.testing.assert_array_equal(small.pulse_index, large.pulse_index[:n])
        np.testing.assert_array_equal(small.emission_time, large.emission_time[:n])


class TestBackground:
    def test_dark_count_total_is_poisson(self):
        # Poisson(rate * T) with rate 20 kcps over 0.05 s: mean 1000, 5 sigma ~ 158
        cfg = _clean_config(duration=1_000_000)
        empty = ClickStream(detector_id=0, timestamps=np.array([], dtype=np.int64))
        merged = merge_background(empty, 20_000.0, cfg)
        expect = 20_000.0 * cfg.duration / 20e6
        assert abs(len(merged) - expect) < 5 * np.sqrt(expect)
        assert merged.timestamps.min() >= 0
        assert merged.timestamps.max() < cfg.duration / 20e6 * 1e12

    def test_merge_keeps_signal_and_sorts(self):
        cfg = _clean_config(duration=100_000)
        sig = ClickStream(detector_id=0, timestamps=np.array([10, 20, 30], dtype=np.int64))
        merged = merge_background(sig, 5_000.0, cfg)
        assert len(merged) >= 3
        assert np.all(np.diff(merged.timestamps) >= 0)
        for t in (10, 20, 30):
            assert t in merged.timestamps

    def test_merge_is_deterministic(self):
        cfg = _clean_config(duration=100_000)
        empty = ClickStream(detector_id=0, timestamps=np.array([], dtype=np.int64))
        a = merge_background(empty, 10_000.0, cfg)
        b = merge_background(empty, 10_000.0, cfg)
        np.testing.assert_array_equal(a.timestamps, b.timestamps)


def test_no_unkeyed_rng_anywhere_in_package():
    """All randomness must flow through the keyed substreams so results are
    reproducible; default_rng/RandomState/random-module calls are banned
    outside the substream factory itself."""
    pkg_dir = Path(photonstat.__file__).parent
    banned = re.compile(r"default_rng|RandomState|^import random|np\.random\.(?!Generator)")
    offenders = []
    for py in sorted(pkg_dir.glob("*.py")):
        if py.name == "numerics.py":
            continue
        for ln, line in enumerate(py.read_text().splitlines(), 1):
            if banned.search(line):
                offenders.append(f"{py.name}:{ln}: {line.strip()}")
    assert offenders == []
