import numpy as np
import pytest

from subtasknet.errors import FormatError
from subtasknet.model import ModelConfig, SegmentationModel


@pytest.mark.parametrize("fusion", [True, False])
@pytest.mark.parametrize("schedule", ["fibonacci", "exponential"])
def test_checkpoint_round_trip(tmp_path, rng, fusion, schedule):
    cfg = ModelConfig(num_classes=5, feature_dim=3, stages=2, layers=3, channels=6, schedule=schedule, fusion=fusion, dropout=0.25)
    model = SegmentationModel.init(cfg, rng)
    model.save(tmp_path / "m.ckpt")
    back = SegmentationModel.load(tmp_path / "m.ckpt")
    assert back.config == cfg
    for a, b in zip(model.state(), back.state()):
        assert np.array_equal(a, b)
    x = rng.standard_normal((11, model.input_dim))
    assert np.array_equal(model.predict(x), back.predict(x))


def test_checkpoint_corruption_is_reported(tmp_path, rng):
    model = SegmentationModel.init(ModelConfig(num_classes=3, feature_dim=2, stages=1, layers=2, channels=4), rng)
    model.save(tmp_path / "m.ckpt")
    blob = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(blob[:-8])
    with pytest.raises(FormatError, match="truncated"):
        SegmentationModel.load(tmp_path / "t.ckpt")
    (tmp_path / "x.ckpt").write_bytes(blob + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        SegmentationModel.load(tmp_path / "x.ckpt")
    (tmp_path / "m2.ckpt").write_bytes(b"NOTACKPT" + blob[8:])
    with pytest.raises(FormatError, match="magic"):
        SegmentationModel.load(tmp_path / "m2.ckpt")


def test_input_width_check(rng):
    model = SegmentationModel.init(ModelConfig(num_classes=3, feature_dim=2, stages=1, layers=1, channels=4), rng)
    assert model.input_dim == 4
    with pytest.raises(FormatError):
        model.predict(np.ones((5, 2)))


def test_stage_predictions_per_stage(rng):
    model = SegmentationModel.init(ModelConfig(num_classes=3, feature_dim=2, stages=3, layers=2, channels=4), rng)
    preds = model.stage_predictions(rng.standard_normal((9, 4)))
    assert len(preds) == 3 and all(p.shape == (9,) for p in preds)
