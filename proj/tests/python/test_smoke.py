import numpy as np
import pytest

import larar


@pytest.fixture(scope="module")
def splits():
    return larar.synthetic_splits(n=400, d=4, sep=3.0, seed=1)


@pytest.fixture(scope="module")
def model(splits):
    return larar.train("larar", splits.train.x, splits.train.y, epochs=2, seed=0)


def test_splits_shapes(splits):
    assert splits.total_rows == 400
    assert splits.train.x.shape == (splits.train.rows, 4)
    assert splits.train.rows + splits.calibration.rows + splits.test.rows == 400


def test_model_predicts_probabilities(model, splits):
    probs = np.asarray(model.predict_proba(splits.test.x))
    assert probs.shape == (splits.test.rows,)
    assert np.all((probs > 0) & (probs < 1))
    assert model.kind == "larar"
    assert model.has_aux
    assert all(w < 1.0 for w in model.layer_weights)


def test_attacks_stay_in_ball(model, splits):
    x, y = splits.test.x, splits.test.y
    for adv in (larar.fgsm(model, x, y, 0.2), larar.pgd(model, x, y, epsilon=0.2, alpha=0.05)):
        assert adv.shape == x.shape
        assert np.max(np.abs(adv - x)) <= 0.2


def test_lvs_zero_on_identical_inputs(model, splits):
    x = splits.test.x
    assert larar.layer_vulnerability(model, x, x) == [0.0, 0.0]


def test_detector_quiet_on_calibration_set(model, splits):
    cal = larar.calibrate(model, splits.calibration.x)
    assert len(cal.proxy_taus) == 2
    assert not any(larar.detect(model, splits.calibration.x, cal))


def test_early_exit_reports_macs(model, splits):
    r = larar.early_exit(model, splits.test.x, threshold=0.95)
    assert 0.0 <= r["fraction"] <= 1.0
    assert r["mean_macs"] <= r["full_macs"]


def test_checkpoint_round_trip(model, splits, tmp_path):
    path = tmp_path / "m.ckpt"
    larar.save_checkpoint(model, path, "note")
    loaded = larar.load_checkpoint(path)
    assert loaded.predict(splits.test.x) == model.predict(splits.test.x)


def test_corrupt_checkpoint_raises(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint at all, just bytes")
    with pytest.raises(larar.CheckpointError):
        larar.load_checkpoint(path)


def test_invalid_attack_raises(model, splits):
    with pytest.raises(larar.AttackError):
        larar.pgd(model, splits.test.x, splits.test.y, epsilon=-1.0)


def test_run_comparison_report(splits):
    report = larar.run_comparison(splits, seeds=[0], epochs=1)
    assert report["schema_version"] == 1
    assert report["rows"] == ["vanilla", "base-advnn", "larar"]
