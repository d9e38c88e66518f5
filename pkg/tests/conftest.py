import numpy as np
import pytest

from eds.manifest import DatasetManifest, ImageRecord, ScenarioTag


def make_record(rec_id, split="unlabeled", weather="sunny", time="day",
                road_type="urban", image=None, label=None):
    if image is None:
        image = f"images/{rec_id}.ppm"
    if label is None and split in ("labeled-train", "val", "test"):
        label = f"masks/{rec_id}.pgm"
    return ImageRecord(
        id=rec_id,
        image_path=image,
        label_path=label,
        scenario=ScenarioTag(weather=weather, time=time, road_type=road_type),
        split=split,
    )


def make_manifest(records, class_names=("background", "asphalt")):
    return DatasetManifest(records=tuple(records), class_names=tuple(class_names))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
