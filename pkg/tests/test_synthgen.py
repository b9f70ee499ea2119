import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptrecon.kspace import zero_filled_recon
from adaptrecon.synthgen import (DEFAULT_PROTOCOLS, CenterProfile, Dataset, DatasetError,
                                 bias_field, check_forward_consistency, coil_maps, default_fleet,
                                 generate_case, generate_dataset, read_dataset, split_by_center,
                                 split_by_patient, stratified_sample, write_dataset)

FLEET = default_fleet()


def quiet(center_id="C001", **kw):
    return dataclasses.replace(FLEET[center_id], noise_sigma=0.0, **kw)


class TestProfiles:
    def test_noise_scales_inversely_with_field(self):
        assert FLEET["C004"].noise_sigma == pytest.approx(2 * FLEET["C001"].noise_sigma)
        assert FLEET["C003"].noise_sigma == pytest.approx(0.015 * 3 / 5)

    def test_fleet_diversity(self):
        assert len(FLEET) == 5
        assert len({c.vendor_tag for c in FLEET.values()}) >= 3
        assert {c.field_strength for c in FLEET.values()} == {1.5, 3.0, 5.0}

    @pytest.mark.parametrize("bad", [dict(vendor_tag="Acme"), dict(field_strength=7.0),
                                     dict(noise_sigma=-1.0), dict(bias_field_strength=0.9),
                                     dict(coil_count=3)])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            dataclasses.replace(FLEET["C001"], **bad)

    def test_coil_maps_unit_rss(self):
        for c in FLEET.values():
            m = coil_maps(c).maps
            assert m.shape == (c.coil_count, 64, 64)
            np.testing.assert_allclose(np.sum(np.abs(m) ** 2, axis=0), 1.0, atol=1e-12)

    def test_bias_field_zero_mean_perturbation(self):
        b = bias_field(FLEET["C004"])
        assert abs(b.mean() - 1.0) < 1e-12
        assert np.abs(b - 1).max() == pytest.approx(FLEET["C004"].bias_field_strength)


class TestGenerateCase:
    def test_deterministic(self):
        a = generate_case(FLEET["C002"], DEFAULT_PROTOCOLS["cine"], "P1", seed=4)
        b = generate_case(FLEET["C002"], DEFAULT_PROTOCOLS["cine"], "P1", seed=4)
        assert a.gt_image.tobytes() == b.gt_image.tobytes()
        assert a.y.data.tobytes() == b.y.data.tobytes()
        assert a.mask.pattern.tobytes() == b.mask.pattern.tobytes()

    def test_noiseless_full_sampling_recovers_image(self):
        case = generate_case(quiet(), DEFAULT_PROTOCOLS["mapping"], "P1", accel=1.0,
                             mask_kind="uniform", acs_lines=64)
        assert case.mask.pattern.all()
        np.testing.assert_allclose(zero_filled_recon(case.y), case.gt_image, atol=1e-10)

    def test_noiseless_forward_consistency(self):
        for pid in DEFAULT_PROTOCOLS:
            case = generate_case(quiet("C003"), DEFAULT_PROTOCOLS[pid], "P7")
            assert check_forward_consistency(case) == 0.0 or check_forward_consistency(case) < 1e-15

    def test_frame_counts_and_cine_motion(self):
        frames = {pid: generate_case(FLEET["C001"], p, "P2").frames for pid, p in DEFAULT_PROTOCOLS.items()}
        assert frames == {"cine": 5, "lge": 1, "mapping": 3, "perfusion": 5}
        gt = generate_case(quiet(), DEFAULT_PROTOCOLS["cine"], "P2").gt_image
        assert np.linalg.norm(gt[0] - gt[2]) > 1e-3

    def test_unknown_profiles(self):
        with pytest.raises(DatasetError):
            generate_case("C001", DEFAULT_PROTOCOLS["cine"], "P1")
        with pytest.raises(DatasetError):
            generate_case(FLEET["C001"], "flair", "P1")

    def test_masks_follow_center(self):
        for cid, c in FLEET.items():
            case = generate_case(c, DEFAULT_PROTOCOLS["cine"], "P3")
            assert case.mask.kind == c.mask_kind
            assert abs(case.mask.achieved_accel - c.accel) <= 0.1 * c.accel


class TestDatasetIO:
    def test_round_trip(self, tmp_path, small_dataset):
        sub = small_dataset.subset(small_dataset.cases[:3])
        write_dataset(sub, tmp_path)
        back = read_dataset(tmp_path)
        assert len(back) == 3
        for a, b in zip(sub, back):
            assert (a.case_id, a.center_id, a.protocol_id, a.patient_id) == \
                   (b.case_id, b.center_id, b.protocol_id, b.patient_id)
            np.testing.assert_array_equal(a.gt_image, b.gt_image)
            np.testing.assert_array_equal(a.y.data, b.y.data)
            np.testing.assert_array_equal(a.sens.maps, b.sens.maps)
            np.testing.assert_array_equal(a.mask.pattern, b.mask.pattern)
            assert a.mask.kind == b.mask.kind and a.mask.acs_lines == b.mask.acs_lines
        assert back.centers == sub.centers

    def test_truncated_tensor(self, tmp_path, small_dataset):
        sub = small_dataset.subset(small_dataset.cases[:1])
        write_dataset(sub, tmp_path)
        f = tmp_path / f"{sub[0].case_id}.y.bin"
        f.write_bytes(f.read_bytes()[:-16])
        with pytest.raises(DatasetError, match="byte count"):
            read_dataset(tmp_path)

    def test_checksum_flip_names_entry(self, tmp_path, small_dataset):
        sub = small_dataset.subset(small_dataset.cases[:1])
        write_dataset(sub, tmp_path)
        f = tmp_path / f"{sub[0].case_id}.gt.bin"
        blob = bytearray(f.read_bytes())
        blob[100] ^= 1
        f.write_bytes(bytes(blob))
        with pytest.raises(DatasetError, match=f"{sub[0].case_id}.*'gt'"):
            read_dataset(tmp_path)

    def test_bad_manifest(self, tmp_path, small_dataset):
        write_dataset(small_dataset.subset(small_dataset.cases[:1]), tmp_path)
        m = json.loads((tmp_path / "manifest.json").read_text())
        m["version"] = 99
        (tmp_path / "manifest.json").write_text(json.dumps(m))
        with pytest.raises(DatasetError, match="manifest.json"):
            read_dataset(tmp_path)
        (tmp_path / "manifest.json").write_text("{not json")
        with pytest.raises(DatasetError, match="manifest.json"):
            read_dataset(tmp_path)

    def test_write_is_byte_stable(self, tmp_path, small_dataset):
        sub = small_dataset.subset(small_dataset.cases[:2])
        write_dataset(sub, tmp_path / "a")
        write_dataset(sub, tmp_path / "b")
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def fake_dataset(counts: dict[str, int], protocols=("cine",), patients_per_case=1):
    """Metadata-only dataset for split arithmetic (arrays are placeholders)."""
    from adaptrecon.synthgen import Case

    cases = []
    for cid, n in counts.items():
        for i in range(n):
            proto = protocols[i % len(protocols)]
            cases.append(Case(f"{cid}_{i}", cid, proto, f"{cid}P{i // patients_per_case}",
                              np.zeros(1), None, None))
    centers = {cid: dataclasses.replace(FLEET["C001"], center_id=cid) for cid in counts}
    return Dataset(cases, centers, dict(DEFAULT_PROTOCOLS))


class TestSplits:
    def test_center_split_default_fleet_holds_out_c004(self):
        ds = generate_dataset()
        assert len(ds) == 42
        train, held = split_by_center(ds, 0.15)
        assert {c.center_id for c in held} == {"C004"}
        assert not {c.case_id for c in train} & {c.case_id for c in held}
        assert not {c.patient_id for c in train} & {c.patient_id for c in held}
        assert len(train) + len(held) == len(ds)

    def test_center_split_enumeration(self):
        ds = fake_dataset({"A": 30, "B": 30, "C": 30, "D": 30, "E": 15})
        _, held = split_by_center(ds, 0.15)
        assert {c.center_id for c in held} == {"E"}
        ds = fake_dataset({"A": 10, "B": 40, "C": 5})
        _, held = split_by_center(ds, 1.0)
        assert {c.center_id for c in held} == {"B"}

    def test_single_center_rejected(self):
        with pytest.raises(DatasetError):
            split_by_center(fake_dataset({"A": 4}))

    def test_stratified_examples(self):
        ds = fake_dataset({f"S{i}": 10 for i in range(10)})
        sub = stratified_sample(ds, 0.3, seed=1)
        assert len(sub) == 30
        assert all(sum(c.center_id == f"S{i}" for c in sub) == 3 for i in range(10))
        assert len(stratified_sample(ds, 1.0)) == len(ds)
        tiny = fake_dataset({"A": 1, "B": 10})
        assert any(c.center_id == "A" for c in stratified_sample(tiny, 0.1))

    @settings(max_examples=30, deadline=None)
    @given(st.dictionaries(st.sampled_from(["A", "B", "C", "D"]), st.integers(1, 12), min_size=1),
           st.floats(0.01, 1.0), st.integers(0, 1000))
    def test_stratified_never_empties_a_stratum(self, counts, frac, seed):
        ds = fake_dataset(counts, protocols=("cine", "lge"))
        sub = stratified_sample(ds, frac, seed)
        strata = {(c.center_id, c.protocol_id) for c in ds}
        assert {(c.center_id, c.protocol_id) for c in sub} == strata
        assert len({c.case_id for c in sub}) == len(sub)

    def test_patient_split_is_disjoint(self, small_dataset):
        train, val = split_by_patient(small_dataset, 1, seed=3)
        assert not {c.patient_id for c in train} & {c.patient_id for c in val}
        assert {c.center_id for c in val} == {c.center_id for c in small_dataset}
        assert len(train) + len(val) == len(small_dataset)
        with pytest.raises(DatasetError):
            split_by_patient(small_dataset, 2)
