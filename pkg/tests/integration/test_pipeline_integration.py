"""
End-to-end runs on synthetic audio. Deselected by default; run with ``pytest -m slow``.
"""
import json

import pytest

from controllers.cli_controller import main
from errors import EXIT_OK
from scripts.make_fixture import write_fixture
from services.manifest_service import read_manifest

pytestmark = pytest.mark.slow


@pytest.fixture
def prepared(tmp_path):
    write_fixture(tmp_path / "data", genres=("blues", "classical", "metal"), clips_per_genre=3)
    assert main(["prepare", "--data-dir", str(tmp_path / "data"), "--out-dir", str(tmp_path), "--no-strict"]) == \
        EXIT_OK
    return tmp_path


class TestPipeline:

    def test_augment_then_evaluate_all_rounds(self, prepared, capsys):
        aug_dir = prepared / "augmented"
        assert main(["augment", "--manifest", str(prepared / "manifest.jsonl"), "--out-dir", str(aug_dir),
                     "--seed", "1"]) == EXIT_OK

        manifest = read_manifest(aug_dir / "manifest.jsonl")
        assert len(manifest.tracks) == 9 * 6
        assert {t["transform"] for t in manifest.tracks} == {"original", "noise", "gain", "loudness", "pitch",
                                                              "stretch"}
        capsys.readouterr()

        out_dir = prepared / "evaluation"
        code = main(["evaluate", "--manifest", str(aug_dir / "manifest.jsonl"), "--arch", "dieleman", "--augment",
                     "--max-epochs", "2", "--batch-size", "42", "--no-strict", "--seed", "1",
                     "--out-dir", str(out_dir)])
        assert code == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        summary = payload["summary"]
        better = "majority" if summary["track_acc_majority"]["mean"] > summary["track_acc_sum"]["mean"] else "sum"
        assert payload["headline_rule"] == better
        assert payload["headline"] == summary[f"track_acc_{better}"]
        metrics = json.loads((out_dir / "metrics.json").read_text())
        assert [r["round_index"] for r in metrics["rounds"]] == [1, 2, 3]
        assert all(r["test_tracks"] == 3 for r in metrics["rounds"])
        assert sorted(p.name for p in out_dir.glob("*.w1dc")) == [
            "dieleman_round1.w1dc", "dieleman_round2.w1dc", "dieleman_round3.w1dc",
        ]

    def test_resnet_round_trains(self, prepared):
        out_dir = prepared / "resnet"
        code = main(["train", "--manifest", str(prepared / "manifest.jsonl"), "--arch", "resnet1d", "--rounds", "1",
                     "--max-epochs", "1", "--batch-size", "21", "--no-strict", "--out-dir", str(out_dir)])
        assert code == EXIT_OK
        metrics = json.loads((out_dir / "metrics.json").read_text())
        assert metrics["rounds"][0]["architecture"] == "resnet1d"
        assert 0.0 <= metrics["rounds"][0]["segment_accuracy"] <= 1.0


class TestLearningSanity:

    def test_resnet_fits_two_genres(self):
        import numpy as np

        from scripts.make_fixture import synth_clip
        from services.model_zoo import build_architecture
        from services.network import Network
        from services.segmentation_service import CANONICAL_CLIP_LENGTH, SAMPLE_RATE, AudioClip
        from services.training_service import SegmentDataset, TrainConfig, segment_accuracy, train

        rng = np.random.default_rng(0)
        clips = [AudioClip(synth_clip(genre, k, CANONICAL_CLIP_LENGTH, SAMPLE_RATE, rng), f"g{genre}.{k:05d}", genre)
                 for genre in (0, 6) for k in range(10)]
        dataset = SegmentDataset.from_clips(clips)
        network = Network(build_architecture("resnet1d"), seed=0)
        train(network, dataset, None, TrainConfig(arch="resnet1d", max_epochs=50, batch_size=80))
        assert segment_accuracy(network, dataset) >= 0.95
