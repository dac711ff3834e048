import json
import os

import numpy as np
import pytest

from neosynth.labels import subdivide_label
from neosynth.pipeline import (ConfigError, GenerationConfig, Subject, dataT2_augment, draw_gates,
                               generate_dataset, generate_sample, load_config, read_manifest, replay,
                               sample_seed, subdivision_path)
from neosynth.volume import read_nifti, write_nifti


def cfg(**kw):
    return GenerationConfig.from_dict(kw)


@pytest.fixture
def subject_files(tmp_path, phantom32):
    labels, t2 = phantom32
    lp, ip = str(tmp_path / "sub-a.nii.gz"), str(tmp_path / "sub-a_t2.nii.gz")
    write_nifti(labels, lp)
    write_nifti(t2, ip)
    return Subject("sub-a", lp, ip)


class TestConfig:
    def test_defaults_resolve_by_recipe(self):
        c = cfg(recipe="SynthMot")
        assert c.motion.probability == 0.5 and c.inhomogeneity.probability == 0.0
        c = cfg(recipe="SynthMotInh")
        assert c.motion.probability == 0.5 and c.inhomogeneity.probability == 0.5

    @pytest.mark.parametrize("raw,match", [
        ({"recipe": "Synth", "motion": {"probability": 0.3}}, "does not allow motion"),
        ({"recipe": "SynthMot", "inhomogeneity": {"probability": 1.0}}, "does not allow inhomogeneity"),
        ({"recipe": "Nope"}, "recipe"),
        ({"colour": 1}, "unknown config keys"),
        ({"motion": {"speed": 1}}, "unknown keys"),
        ({"schema_version": 2}, "schema_version"),
        ({"recipe": "SynthMot", "motion": {"probability": 1.5}}, r"\[0, 1\]"),
        ({"inhomogeneity": {"n_set": [1, 2]}}, "n_set"),
        ({"affine": {"scale_range": [1.1, 0.9]}}, "affine"),
        ({"recipe": "SynthMot", "motion": {"model": "smooth"}}, "not registered"),
    ])
    def test_rejected(self, raw, match):
        with pytest.raises(ConfigError, match=match):
            GenerationConfig.from_dict(raw)

    def test_explicit_zero_allowed(self):
        assert cfg(recipe="Synth", motion={"probability": 0}).motion.probability == 0.0

    def test_yaml_and_dict_roundtrip(self, tmp_path):
        (tmp_path / "c.yaml").write_text("recipe: SynthInh\nseed: 7\ninhomogeneity:\n  n_set: [2, 3]\n")
        c = load_config(tmp_path / "c.yaml")
        assert c.seed == 7 and c.inhomogeneity.n_set == (2, 3)
        assert GenerationConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c

    def test_sample_seed(self):
        assert sample_seed(0, "a", 0) == sample_seed(0, "a", 0)
        seeds = {sample_seed(s, sid, i) for s in (0, 1) for sid in ("a", "b") for i in range(3)}
        assert len(seeds) == 12


class TestGenerateSample:
    def test_output_contract(self, phantom32):
        labels, t2 = phantom32
        c = cfg(recipe="SynthMotInh", motion={"probability": 1}, inhomogeneity={"probability": 1})
        img, lab, params = generate_sample(labels, c, 3, intensities=t2)
        assert img.values.min() == 0.0 and img.values.max() == 1.0
        assert set(lab.present_ids()) <= set(range(10))
        assert params["gates"] == {"motion": True, "inhomogeneity": True}
        assert "motion" in params and params["inhomogeneity"]["N"] in (2, 3, 4, 5, 6)

    def test_deterministic(self, phantom32):
        labels, t2 = phantom32
        c = cfg(recipe="SynthMotInh")
        a = generate_sample(labels, c, 11, intensities=t2)
        b = generate_sample(labels, c, 11, intensities=t2)
        np.testing.assert_array_equal(a[0].values, b[0].values)
        np.testing.assert_array_equal(a[1].labels, b[1].labels)
        assert a[2] == b[2]

    def test_stage_streams_are_independent(self, phantom32):
        labels, _ = phantom32
        _, lab_a, pa = generate_sample(labels, cfg(noise={"std_range": [0.01, 0.02]}), 5)
        _, lab_b, pb = generate_sample(labels, cfg(noise={"std_range": [0.05, 0.06]}), 5)
        assert pa["affine"] == pb["affine"] and pa["contrast"] == pb["contrast"]
        assert pa["noise"] != pb["noise"]
        np.testing.assert_array_equal(lab_a.labels, lab_b.labels)

    def test_precomputed_subdivision_is_used(self, phantom32):
        labels, t2 = phantom32
        c = cfg(recipe="SynthInh", inhomogeneity={"probability": 1, "n_set": [4]})
        pre = {4: subdivide_label(labels, t2, 3, 4)}
        a = generate_sample(labels, c, 1, subdivisions=pre)
        b = generate_sample(labels, c, 1, intensities=t2)
        np.testing.assert_array_equal(a[0].values, b[0].values)
        assert len(a[2]["contrast"]) > len(labels.present_ids())

    def test_custom_trajectory_model(self, phantom32):
        from neosynth.motion import TRAJECTORY_MODELS, MotionTrajectory, register_trajectory_model
        from neosynth.volume import RigidTransform

        def constant(spec, n, seed):
            return MotionTrajectory.static(n, RigidTransform((2.0, 0.0, 0.0)), spec.phase_axis)

        register_trajectory_model("constant", constant)
        try:
            c = cfg(recipe="SynthMot", motion={"probability": 1, "model": "constant"})
            _, _, params = generate_sample(phantom32[0], c, 0)
            assert params["motion"]["segments"][0]["translation"] == [2.0, 0.0, 0.0]
        finally:
            del TRAJECTORY_MODELS["constant"]

    def test_inhomogeneity_without_intensities(self, phantom32):
        c = cfg(recipe="SynthInh", inhomogeneity={"probability": 1})
        with pytest.raises(ValueError, match="intensities"):
            generate_sample(phantom32[0], c, 0)

    def test_gate_rates_follow_probability(self):
        c = cfg(recipe="SynthMotInh", motion={"probability": 0.2}, inhomogeneity={"probability": 0.9})
        g = [draw_gates(c, s) for s in range(2000)]
        assert np.mean([x["motion"] for x in g]) == pytest.approx(0.2, abs=0.04)
        assert np.mean([x["inhomogeneity"] for x in g]) == pytest.approx(0.9, abs=0.03)

    def test_dataT2_aug(self, phantom32):
        labels, t2 = phantom32
        c = cfg(recipe="DataT2-aug")
        img, lab, params = dataT2_augment(t2, labels, c, 4)
        assert img.values.min() == 0.0 and img.values.max() == 1.0
        assert set(lab.present_ids()) <= set(labels.present_ids())
        assert np.exp(-0.3) <= params["gamma"]["gamma"] <= np.exp(0.3)
        with pytest.raises(ConfigError):
            generate_sample(labels, c, 0)


class TestDataset:
    def test_records_and_files(self, tmp_path, subject_files):
        c = cfg(recipe="SynthMot", samples_per_subject=2, seed=3)
        manifest, failed = generate_dataset([subject_files], c, tmp_path / "out")
        recs = read_manifest(manifest)
        assert failed == 0 and [r["sample_id"] for r in recs] == ["sub-a_0000", "sub-a_0001"]
        for r in recs:
            assert r["status"] == "ok" and r["seed"] == sample_seed(3, "sub-a", r["index"])
            for name in r["outputs"].values():
                assert os.path.exists(tmp_path / "out" / name)
        first = (tmp_path / "out" / "manifest.jsonl").read_text().splitlines()[0]
        assert first == json.dumps(recs[0], sort_keys=True, separators=(",", ":"))

    def test_parallel_matches_serial(self, tmp_path, subject_files):
        c = cfg(recipe="SynthMotInh", samples_per_subject=3)
        generate_dataset([subject_files], c, tmp_path / "a", jobs=1)
        generate_dataset([subject_files], c, tmp_path / "b", jobs=2)
        for name in sorted(os.listdir(tmp_path / "a")):
            if name.endswith(".nii.gz"):
                assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        key = lambda r: r["sample_id"]
        assert sorted(read_manifest(tmp_path / "a" / "manifest.jsonl"), key=key) == \
            sorted(read_manifest(tmp_path / "b" / "manifest.jsonl"), key=key)

    def test_failure_is_recorded(self, tmp_path, subject_files):
        bad = Subject("missing", str(tmp_path / "nope.nii.gz"))
        manifest, failed = generate_dataset([bad, subject_files], cfg(), tmp_path / "out")
        recs = read_manifest(manifest)
        assert failed == 1
        assert recs[0]["status"] == "error" and recs[0]["error"]
        assert recs[1]["status"] == "ok"

    def test_replay(self, tmp_path, subject_files):
        manifest, _ = generate_dataset([subject_files], cfg(recipe="SynthMotInh", samples_per_subject=2),
                                       tmp_path / "out")
        rec = read_manifest(manifest)[1]
        img, lab, params = replay(rec, tmp_path / "re")
        assert params == rec["params"]
        for name in rec["outputs"].values():
            assert (tmp_path / "out" / name).read_bytes() == (tmp_path / "re" / name).read_bytes()

    def test_dataT2_needs_image(self, tmp_path, subject_files):
        s = Subject("x", subject_files.labels)
        _, failed = generate_dataset([s], cfg(recipe="DataT2-aug"), tmp_path / "o")
        assert failed == 1

    def test_subdivision_path(self):
        assert subdivision_path("/d/sub.nii.gz", 3) == "/d/sub_sub3.nii.gz"
        assert subdivision_path("/d/sub.nii", 2) == "/d/sub_sub2.nii"

    def test_loaded_subdivisions(self, tmp_path, subject_files, phantom32):
        labels, t2 = phantom32
        write_nifti(subdivide_label(labels, t2, 3, 2), subdivision_path(subject_files.labels, 2))
        s = Subject("sub-a", subject_files.labels)
        c = cfg(recipe="SynthInh", inhomogeneity={"probability": 1, "n_set": [2]})
        _, failed = generate_dataset([s], c, tmp_path / "o")
        assert failed == 0
        assert read_nifti(str(tmp_path / "o" / "sub-a_0000_labels.nii.gz")).present_ids() == \
            sorted(set(labels.present_ids()))
