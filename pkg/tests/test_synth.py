"""Gerador do benchmark sintético, validação suave e contêiner em disco."""

import json
import os

import numpy as np
import pytest
from pydantic import ValidationError

from src.errors import InfeasibleConfigError, MissingArtifactError
from src.seeding import derive_rng
from src.synth import (
    DatasetValidator,
    checksum,
    corrupt,
    generate,
    load_dataset,
    make_hard,
    save_dataset,
)
from src.iqa.tasks import dice
from src.synth.dataset import META_COLUMNS
from src.synth.generator import ARTEFACT_KINDS, bounding_region, disc_mask


def _disc_raster(h=16, w=16):
    mask = disc_mask(h, w, 8.0, 8.0, 3.0)
    raster = np.where(mask, 0.8, 0.3)[None].astype(np.float64)
    return raster, mask


class TestGenerate:
    def test_same_seed_same_checksum(self, make_generator_config, tiny_data):
        again = generate(make_generator_config())
        assert checksum(again) == checksum(tiny_data)

    def test_different_seed_different_checksum(self, make_generator_config, tiny_data):
        assert checksum(generate(make_generator_config(seed=1))) != checksum(tiny_data)

    def test_split_sizes_and_disjoint_ids(self, tiny_data):
        sizes = {name: len(part) for name, part in tiny_data.splits().items()}
        assert sizes == {"train": 64, "val": 16, "holdout": 32}
        ids = np.concatenate([p.ids for p in tiny_data.splits().values()])
        np.testing.assert_array_equal(ids, np.arange(112))

    def test_meta_schema(self, tiny_data):
        assert list(tiny_data.train.meta.columns) == META_COLUMNS
        assert set(tiny_data.holdout.meta["split"]) == {"holdout"}

    def test_rasters_in_unit_interval(self, tiny_data):
        for part in tiny_data.splits().values():
            assert part.images.shape[1:] == (1, 16, 16)
            assert part.images.min() >= 0.0 and part.images.max() <= 1.0

    def test_every_record_conforms(self, tiny_data):
        for part in tiny_data.splits().values():
            report = DatasetValidator.run_quality_checks(part)
            assert report["registro_conforme"].all()

    def test_all_quadrants_populated(self, tiny_data):
        for part in tiny_data.splits().values():
            counts = DatasetValidator.quadrant_counts(part.meta)
            assert min(counts.values()) >= 1

    def test_roi_fraction_splits_artefacts(self, tiny_data):
        meta = tiny_data.train.meta
        art = meta[meta["artefact_flag"]]
        n_roi = int(art["artefact_in_roi"].sum())
        assert n_roi == int(round(0.5 * len(art)))
        assert not meta.loc[~meta["artefact_flag"], "artefact_in_roi"].any()

    def test_hard_cases_only_with_target(self, tiny_data):
        meta = tiny_data.train.meta
        assert not meta.loc[~meta["target_present"], "hard_flag"].any()

    def test_infeasible_quadrants(self, make_generator_config):
        with pytest.raises(InfeasibleConfigError) as info:
            generate(make_generator_config(n_val=4))
        assert info.value.exit_code == 2

    def test_infeasible_allowed_when_not_required(self, make_generator_config):
        data = generate(make_generator_config(n_val=4, require_all_quadrants=False))
        assert len(data.val) == 4

    def test_radius_must_fit(self, make_generator_config):
        with pytest.raises(ValidationError):
            make_generator_config(radius_max=6.0)

    def test_rates_must_sum_below_one(self, make_generator_config):
        with pytest.raises(ValidationError):
            make_generator_config(hard_rates={"low_contrast": 0.7, "tiny_target": 0.5})


class TestCorrupt:
    @pytest.mark.parametrize("kind", ARTEFACT_KINDS)
    @pytest.mark.parametrize("in_roi", [True, False])
    def test_outside_area_is_untouched(self, kind, in_roi):
        raster, mask = _disc_raster()
        region = bounding_region(mask)
        out = corrupt(raster, kind, in_roi, 1.0, derive_rng(0, kind), region)
        outside = ~region if in_roi else region
        assert out[:, outside].tobytes() == raster[:, outside].tobytes()
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_artefact_changes_affected_area(self):
        raster, mask = _disc_raster()
        region = bounding_region(mask)
        out = corrupt(raster, "gaussian_noise", True, 1.0, derive_rng(0), region)
        assert not np.array_equal(out[:, region], raster[:, region])

    def test_full_severity_noise_is_visible(self):
        raster = np.full((1, 32, 32), 0.5)
        mask = disc_mask(32, 32, 16.0, 16.0, 5.0)
        region = bounding_region(mask)
        out = corrupt(raster, "gaussian_noise", False, 1.0, derive_rng(0, "noise"), region)
        assert out[0][~region].std() > 0.1

    @pytest.mark.parametrize("kind", ["blur", "channel_misalign"])
    def test_in_roi_artefact_erases_target(self, kind):
        raster, mask = _disc_raster()
        region = bounding_region(mask)
        out = corrupt(raster, kind, True, 1.0, derive_rng(0, kind), region, occlusion=1.0)
        gap_before = raster[0][mask].mean() - raster[0][~region].mean()
        gap_after = out[0][mask].mean() - out[0][~region].mean()
        assert abs(gap_after) < 0.05 * gap_before

    def test_in_roi_noise_hides_target(self):
        mask = disc_mask(32, 32, 16.0, 16.0, 6.0)
        raster = np.where(mask, 0.8, 0.3)[None].astype(np.float64)
        region = bounding_region(mask)
        ring = region & ~mask
        gaps = {0.0: [], 1.0: []}
        for seed in range(5):
            for occlusion in gaps:
                rng = derive_rng(seed)
                out = corrupt(raster, "gaussian_noise", True, 1.0, rng, region, occlusion=occlusion)
                gaps[occlusion].append(out[0][mask].mean() - out[0][ring].mean())
        assert abs(np.mean(gaps[1.0])) < 0.08
        assert np.mean(gaps[0.0]) > 0.25

    def test_occlusion_ignored_outside_roi(self):
        raster, mask = _disc_raster()
        region = bounding_region(mask)
        plain = corrupt(raster, "stripe", False, 0.8, derive_rng(3), region)
        occluded = corrupt(raster, "stripe", False, 0.8, derive_rng(3), region, occlusion=1.0)
        np.testing.assert_array_equal(plain, occluded)

    @pytest.mark.parametrize("severity", [0.0, -0.1, 1.5])
    def test_severity_range(self, severity):
        raster, mask = _disc_raster()
        with pytest.raises(ValueError):
            corrupt(raster, "blur", True, severity, derive_rng(0), bounding_region(mask))

    def test_unknown_kind(self):
        raster, mask = _disc_raster()
        with pytest.raises(ValueError):
            corrupt(raster, "jpeg", True, 0.5, derive_rng(0), bounding_region(mask))


class TestMakeHard:
    def test_low_contrast_reduces_gap(self):
        raster, mask = _disc_raster()
        out, label = make_hard(raster, mask[None].astype(float), "low_contrast", 0.8, derive_rng(0))
        gap_before = raster[0][mask].mean() - raster[0][~mask].mean()
        gap_after = out[0][mask].mean() - out[0][~mask].mean()
        assert gap_after == pytest.approx(0.2 * gap_before)
        np.testing.assert_array_equal(label[0], mask.astype(float))

    def test_tiny_target_shrinks_mask(self):
        raster, mask = _disc_raster()
        _, label = make_hard(raster, mask[None].astype(float), "tiny_target", 0.85, derive_rng(0))
        assert label.sum() == 1
        assert label[0][mask].sum() == 1

    @pytest.mark.parametrize("severity", [0.8, 0.9, 1.0])
    def test_tiny_target_overlaps_little_with_original(self, severity):
        raster, mask = _disc_raster(32, 32)
        assert mask.sum() >= 16
        _, label = make_hard(raster, mask[None].astype(float), "tiny_target", severity, derive_rng(0))
        assert label.sum() <= 4
        assert dice(mask, label[0]) < 0.5

    def test_absent_target(self):
        raster = np.full((1, 16, 16), 0.3)
        with pytest.raises(ValueError):
            make_hard(raster, np.zeros((1, 16, 16)), "low_contrast", 0.5, derive_rng(0))


class TestStorage:
    def test_round_trip(self, tiny_data, tmp_path):
        digest = save_dataset(tiny_data, str(tmp_path))
        loaded = load_dataset(str(tmp_path))
        assert checksum(loaded) == digest == checksum(tiny_data)
        for name, part in loaded.splits().items():
            original = tiny_data.splits()[name]
            assert part.images.tobytes() == original.images.tobytes()
            assert part.meta["artefact_flag"].tolist() == original.meta["artefact_flag"].tolist()

    def test_manifest_records_container_layout(self, tiny_data, tmp_path):
        save_dataset(tiny_data, str(tmp_path))
        with open(os.path.join(tmp_path, "manifest.json"), encoding="utf-8") as f:
            manifest = json.load(f)
        assert manifest["version"] == "data-v1"
        assert manifest["splits"] == {"holdout": 32, "train": 64, "val": 16}
        assert manifest["raster_shape"] == [1, 16, 16]
        assert os.path.getsize(os.path.join(tmp_path, "samples.bin")) == 112 * 16 * 16 * 4

    def test_missing_blob(self, tiny_data, tmp_path):
        save_dataset(tiny_data, str(tmp_path))
        os.remove(os.path.join(tmp_path, "labels.bin"))
        with pytest.raises(MissingArtifactError):
            load_dataset(str(tmp_path))

    def test_tampered_blob(self, tiny_data, tmp_path):
        save_dataset(tiny_data, str(tmp_path))
        path = os.path.join(tmp_path, "samples.bin")
        blob = bytearray(open(path, "rb").read())
        blob[0] ^= 0x01
        with open(path, "wb") as f:
            f.write(bytes(blob))
        with pytest.raises(ValueError):
            load_dataset(str(tmp_path))
