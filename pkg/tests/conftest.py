import pytest
import torch

from icontra.backbone import BuiltinBackbone
from icontra.inversion import invert_image
from icontra.masks import extract_object_mask
from icontra.sample_images import sample_photos

torch.set_num_threads(1)

PHOTO_CAPTIONS = [
    "a warm lamp on a desk",
    "a leather bag",
    "a sofa in a room",
]


@pytest.fixture(scope="session")
def backbone64():
    """Small backbone for unit-level contracts (fast)."""
    return BuiltinBackbone(working_resolution=64)


@pytest.fixture(scope="session")
def backbone512():
    return BuiltinBackbone(working_resolution=512)


@pytest.fixture(scope="session")
def photos():
    return sample_photos()


@pytest.fixture(scope="session")
def photo_records(backbone512, photos):
    """Full extraction on the three fixed test photos (50 steps, scale 7.5).

    This is the expensive fixture every reconstruction/edit test shares.
    """
    records = []
    for image, caption in zip(photos, PHOTO_CAPTIONS):
        record = invert_image(image, caption, backbone512)
        record.object_mask = extract_object_mask(image, None)
        records.append(record)
    return records
