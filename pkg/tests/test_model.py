"""Config model: validation rules, JSON round trips, digests, unit helpers."""

import dataclasses
import json

import pytest

from photonstat.model import (
    ChargeComplex,
    ChargeTag,
    DetectorSpec,
    ExcitationMode,
    config_digest,
    config_from_dict,
    config_from_json,
    config_to_dict,
    config_to_json,
    energy_to_wavelength_nm,
    paper_device_defaults,
    validate,
    wavelength_to_energy_mev,
)


@pytest.fixture
def config():
    return paper_device_defaults()


def _replace_emitter(config, **kw):
    return dataclasses.replace(config, emitter=dataclasses.replace(config.emitter, **kw))


class TestValidate:
    def test_defaults_are_valid(self, config):
        assert validate(config) == []

    @pytest.mark.parametrize(
        "mutate, field",
        [
            (lambda c: _replace_emitter(c, tau_fast=-1.0), "emitter.tau_fast"),
            (lambda c: _replace_emitter(c, tau_fast=40.0), "emitter.tau_slow"),
            (lambda c: _replace_emitter(c, slow_branch_fraction=1.5), "emitter.slow_branch_fraction"),
            (lambda c: _replace_emitter(c, dark_fraction=-0.2), "emitter.dark_fraction"),
            (lambda c: _replace_emitter(c, homogeneous_linewidth=-0.1), "emitter.homogeneous_linewidth"),
            (lambda c: _replace_emitter(c, complexes=()), "emitter.complexes"),
            (
                lambda c: dataclasses.replace(
                    c, excitation=dataclasses.replace(c.excitation, power_ratio=-1.0)
                ),
                "excitation.power_ratio",
            ),
            (
                lambda c: dataclasses.replace(
                    c, excitation=dataclasses.replace(c.excitation, recapture_time=0.0)
                ),
                "excitation.recapture_time",
            ),
            (
                lambda c: dataclasses.replace(
                    c, chain=dataclasses.replace(c.chain, transmission=1.2)
                ),
                "chain.transmission",
            ),
            (lambda c: dataclasses.replace(c, detectors=()), "detectors"),
            (
                lambda c: dataclasses.replace(
                    c, detectors=(DetectorSpec(efficiency=2.0, jitter_fwhm=0.0),)
                ),
                "detectors[0].efficiency",
            ),
            (lambda c: dataclasses.replace(c, duration=0.0), "duration"),
            (lambda c: dataclasses.replace(c, rng_seed=1.5), "rng_seed"),
        ],
    )
    def test_single_violation_names_the_field(self, config, mutate, field):
        violations = mutate(config)
        fields = [v.field for v in validate(violations)]
        assert field in fields

    def test_intensities_must_sum_to_one(self, config):
        cfg = _replace_emitter(
            config,
            complexes=(
                ChargeComplex(tag=ChargeTag.XMINUS, emission_energy=1264.0, relative_intensity=0.7),
                ChargeComplex(tag=ChargeTag.X, emission_energy=1268.0, relative_intensity=0.7),
            ),
        )
        assert any("sum to 1" in v.rule for v in validate(cfg))

    def test_duplicate_energies_rejected(self, config):
        cfg = _replace_emitter(
            config,
            complexes=(
                ChargeComplex(tag=ChargeTag.XMINUS, emission_energy=1264.0, relative_intensity=0.5),
                ChargeComplex(tag=ChargeTag.X, emission_energy=1264.0, relative_intensity=0.5),
            ),
        )
        assert any("distinct" in v.rule for v in validate(cfg))

    def test_nan_is_a_violation_not_a_crash(self, config):
        cfg = _replace_emitter(config, tau_fast=float("nan"))
        assert any(v.field == "emitter.tau_fast" for v in validate(cfg))

    def test_multiple_violations_all_reported(self, config):
        cfg = dataclasses.replace(
            _replace_emitter(config, tau_fast=-1.0), duration=-5.0
        )
        fields = {v.field for v in validate(cfg)}
        assert {"emitter.tau_fast", "duration"} <= fields


class TestJsonRoundtrip:
    def test_roundtrip_identity(self, config):
        assert config_from_json(config_to_json(config)) == config

    def test_dict_roundtrip_identity(self, config):
        assert config_from_dict(config_to_dict(config)) == config

    def test_mode_serialized_as_string(self, config):
        data = config_to_dict(config)
        assert data["excitation"]["mode"] == "Pulsed"
        cw = config_from_dict({**data, "excitation": {**data["excitation"], "mode": "CW"}})
        assert cw.excitation.mode is ExcitationMode.CW

    def test_unknown_mode_rejected(self, config):
        data = config_to_dict(config)
        data["excitation"]["mode"] = "strobe"
        with pytest.raises(ValueError):
            config_from_dict(data)

    def test_unknown_top_level_key_rejected(self, config):
        data = config_to_dict(config)
        data["surplus"] = 1
        with pytest.raises(ValueError, match="surplus"):
            config_from_dict(data)

    def test_unknown_nested_key_rejected_with_path(self, config):
        data = config_to_dict(config)
        data["emitter"]["oops"] = 1
        with pytest.raises(ValueError, match="emitter"):
            config_from_dict(data)

    def test_missing_key_rejected_with_path(self, config):
        data = config_to_dict(config)
        del data["emitter"]["tau_fast"]
        with pytest.raises(ValueError, match="tau_fast"):
            config_from_dict(data)

    def test_wrong_type_rejected_with_path(self, config):
        data = config_to_dict(config)
        data["emitter"]["tau_fast"] = "fast"
        with pytest.raises(ValueError, match="emitter.tau_fast"):
            config_from_dict(data)

    def test_malformed_json_reports_location(self):
        with pytest.raises(ValueError, match="line"):
            config_from_json('{"emitter": }')


class TestDigest:
    def test_digest_is_key_order_independent(self, config):
        data = config_to_dict(config)
        scrambled = json.loads(json.dumps(data, sort_keys=True)[::1])
        # rebuild with reversed insertion order at the top level
        rebuilt = {k: scrambled[k] for k in reversed(list(scrambled))}
        assert config_digest(config_from_dict(rebuilt)) == config_digest(config)

    def test_digest_changes_with_any_field(self, config):
        other = dataclasses.replace(config, rng_seed=config.rng_seed + 1)
        assert config_digest(other) != config_digest(config)

    def test_digest_is_hex_sha256(self, config):
        d = config_digest(config)
        assert len(d) == 64
        int(d, 16)


class TestUnits:
    def test_energy_wavelength_inverse(self):
        # hc = 1239841.984 meV nm, so E(lambda(E)) is an exact float identity
        # and 1264 meV sits near 980.9 nm.
        assert wavelength_to_energy_mev(energy_to_wavelength_nm(1264.0)) == pytest.approx(
            1264.0, rel=1e-12
        )
        assert energy_to_wavelength_nm(1264.0) == pytest.approx(1239841.984 / 1264.0, rel=0)

    def test_defaults_place_trion_in_filter_band(self, config):
        lam = energy_to_wavelength_nm(1264.0)
        assert abs(lam - config.chain.filter_center) <= 0.5 * config.chain.filter_bandwidth
