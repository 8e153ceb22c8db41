import json
import math

import numpy as np
import pytest

from modalbridge import datasets as ds
from modalbridge import features as ft
from modalbridge import synth


def small_dataset(modality, n_classes=3, seed=0):
    specs = synth.default_class_library(n_classes)
    out = ds.GestureDataset(modality)
    for spec in specs:
        user = synth.default_user(1, noise=0.01)
        path = synth.gen_trajectory(spec, user, synth.instance_seed(seed, spec.class_id))
        iid = f"{spec.class_id}-u1-r0"
        if modality == "video":
            data = synth.render_video_modality(path, seed=1)
        elif modality == "wifi":
            data = synth.render_wifi_modality(path, pairs=3, seed=1)
        else:
            times, accel = synth.render_accel_modality(path, seed=1)
            data = ds.AccelTrace(times, accel)
        out.instances.append(ds.GestureInstance(iid, spec.class_id, 1, modality, data))
    return out


class TestRoundtrip:
    @pytest.mark.parametrize("modality", ["video", "wifi", "accel"])
    def test_roundtrip_identity(self, tmp_path, modality):
        original = small_dataset(modality)
        ds.save_dataset(original, tmp_path)
        loaded = ds.load_dataset(tmp_path, modality)
        assert len(loaded.instances) == len(original.instances)
        for a, b in zip(original.instances, loaded.instances):
            assert (a.instance_id, a.class_id, a.user_id) == (
                b.instance_id,
                b.class_id,
                b.user_id,
            )
            if modality == "video":
                for fa, fb in zip(a.data, b.data):
                    assert fa.points.keys() == fb.points.keys()
                    for name in fa.points:
                        assert fa.points[name] == fb.points[name]
            elif modality == "wifi":
                np.testing.assert_array_equal(a.data, b.data)
            else:
                np.testing.assert_array_equal(a.data.times, b.data.times)
                np.testing.assert_array_equal(a.data.accel, b.data.accel)

    def test_missing_keypoints_roundtrip(self, tmp_path):
        dataset = small_dataset("video", n_classes=1)
        del dataset.instances[0].data[5].points["left_elbow"]
        ds.save_dataset(dataset, tmp_path)
        loaded = ds.load_dataset(tmp_path, "video")
        assert loaded.instances[0].data[5].get("left_elbow") is None
        assert loaded.instances[0].data[4].get("left_elbow") is not None


class TestValidation:
    def test_missing_file_names_instance(self, tmp_path):
        dataset = small_dataset("wifi")
        ds.save_dataset(dataset, tmp_path)
        (tmp_path / dataset.instances[1].instance_id).with_suffix(".csv").unlink()
        with pytest.raises(ds.DatasetError, match=dataset.instances[1].instance_id):
            ds.load_dataset(tmp_path, "wifi")

    def test_wrong_modality_rejected(self, tmp_path):
        ds.save_dataset(small_dataset("wifi"), tmp_path)
        with pytest.raises(ds.DatasetError, match="manifest"):
            ds.load_dataset(tmp_path, "accel")

    def test_malformed_row_coordinates(self, tmp_path):
        dataset = small_dataset("accel", n_classes=1)
        ds.save_dataset(dataset, tmp_path)
        fname = tmp_path / f"{dataset.instances[0].instance_id}.csv"
        lines = fname.read_text().splitlines()
        lines[3] = "bogus,1,2"
        fname.write_text("\n".join(lines) + "\n")
        with pytest.raises(ds.DatasetError, match="row 4"):
            ds.load_dataset(tmp_path, "accel")

    def test_mixed_angle_units(self, tmp_path):
        dataset = small_dataset("wifi", n_classes=1)
        ds.save_dataset(dataset, tmp_path)
        iid = dataset.instances[0].instance_id
        fname = tmp_path / f"{iid}.csv"
        rows = fname.read_text().splitlines()
        # rewrite every other sample row in degrees
        out = [rows[0]]
        for i, line in enumerate(rows[1:]):
            cells = line.split(",")
            if i % 2 == 1:
                cells[3] = repr(math.degrees(float(cells[3])))
                cells[4] = repr(math.degrees(float(cells[4])))
                cells[5] = "deg"
            out.append(",".join(cells))
        fname.write_text("\n".join(out) + "\n")
        loaded = ds.load_dataset(tmp_path, "wifi")
        np.testing.assert_allclose(
            loaded.instances[0].data, dataset.instances[0].data, rtol=1e-12, atol=1e-15
        )

    def test_unknown_unit_rejected(self, tmp_path):
        dataset = small_dataset("wifi", n_classes=1)
        ds.save_dataset(dataset, tmp_path)
        iid = dataset.instances[0].instance_id
        fname = tmp_path / f"{iid}.csv"
        rows = fname.read_text().splitlines()
        cells = rows[1].split(",")
        cells[5] = "grad"
        rows[1] = ",".join(cells)
        fname.write_text("\n".join(rows) + "\n")
        with pytest.raises(ds.DatasetError, match="angle_unit"):
            ds.load_dataset(tmp_path, "wifi")

    def test_nonuniform_accel_sampling_rejected(self, tmp_path):
        dataset = small_dataset("accel", n_classes=1)
        ds.save_dataset(dataset, tmp_path)
        fname = tmp_path / f"{dataset.instances[0].instance_id}.csv"
        lines = fname.read_text().splitlines()
        cells = lines[2].split(",")
        cells[0] = repr(float(cells[0]) + 0.013)
        lines[2] = ",".join(cells)
        fname.write_text("\n".join(lines) + "\n")
        with pytest.raises(ds.DatasetError, match="uniform"):
            ds.load_dataset(tmp_path, "accel")
