import pytest
from marshmallow import ValidationError

from schemas.manifest import CorpusRecordSchema, TrackRecordSchema
from schemas.metrics import PredictionOutputSchema, RoundMetricsSchema, SummarySchema


def track(**changes):
    record = {
        "record": "track", "track_id": "blues.00001", "path": "blues/blues.00001.wav", "genre": "blues",
        "genre_index": 0, "duration_samples": 661794, "origin": "blues.00001",
    }
    record.update(changes)
    return record


class TestTrackRecordSchema:

    def test_original_defaults(self):
        loaded = TrackRecordSchema().load(track())
        assert loaded["transform"] == "original"
        assert loaded["parameter"] is None

    def test_augmented(self):
        loaded = TrackRecordSchema().load(track(track_id="blues.00001.gain", transform="gain", parameter=-3.0))
        assert loaded["origin"] == "blues.00001"

    @pytest.mark.parametrize("changes", [
        {"genre": "rock"},
        {"genre": "polka"},
        {"genre_index": 10},
        {"origin": "blues.00002"},
        {"transform": "gain"},
        {"transform": "reverse", "track_id": "x"},
        {"duration_samples": -1},
        {"record": "corpus"},
        {"track_id": ""},
    ])
    def test_rejected(self, changes):
        with pytest.raises(ValidationError):
            TrackRecordSchema().load(track(**changes))


class TestCorpusRecordSchema:

    def test_minimal(self):
        loaded = CorpusRecordSchema().load({"record": "corpus"})
        assert loaded == {"record": "corpus", "version": 1, "seed": None, "augmentation_digest": None}

    def test_future_version(self):
        with pytest.raises(ValidationError):
            CorpusRecordSchema().load({"record": "corpus", "version": 2})


class TestMetricsSchemas:

    def test_round_row(self):
        row = {"architecture": "dieleman", "augmentation": True, "round": 2, "segment_acc": 0.45,
               "track_acc_majority": 0.5, "track_acc_sum": 0.53, "epochs": 14, "best_epoch": 4}
        assert RoundMetricsSchema().load(row) == row
        with pytest.raises(ValidationError):
            RoundMetricsSchema().load({**row, "segment_acc": 45.2})

    def test_summary_std_non_negative(self):
        with pytest.raises(ValidationError):
            SummarySchema().load({m: {"mean": 0.5, "std": -0.1}
                                  for m in ("segment_acc", "track_acc_majority", "track_acc_sum")})

    def test_prediction_output_needs_21_rows(self):
        payload = {"track_id": "x", "genre_label": None, "predictions": {"sum": "jazz"},
                   "prediction_indices": {"sum": 5}, "probabilities": [[0.1] * 10] * 20}
        with pytest.raises(ValidationError):
            PredictionOutputSchema().load(payload)
        payload["probabilities"] = [[0.1] * 10] * 21
        assert PredictionOutputSchema().load(payload)["track_id"] == "x"
