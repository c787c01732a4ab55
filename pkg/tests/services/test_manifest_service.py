import json

import pytest

from scripts.make_fixture import write_fixture
from services.manifest_service import (
    Manifest, ManifestError, read_manifest, scan_dataset, validate_tracks, write_manifest,
)


def track(track_id, genre="jazz", genre_index=5, origin=None, transform="original", parameter=None):
    return {
        "record": "track", "track_id": track_id, "path": f"{track_id}.wav", "genre": genre,
        "genre_index": genre_index, "duration_samples": 2205, "origin": origin or track_id,
        "transform": transform, "parameter": parameter,
    }


class TestScanDataset:
    def setup_method(self):
        self.genres = ("jazz", "metal")

    def test_reads_genre_tree(self, tmp_path):
        write_fixture(tmp_path / "data", genres=self.genres, clips_per_genre=2, seconds=0.1)
        manifest, failures = scan_dataset(tmp_path / "data", manifest_dir=tmp_path)
        assert failures == []
        assert [t["track_id"] for t in manifest.tracks] == ["jazz.00000", "jazz.00001", "metal.00000", "metal.00001"]
        assert manifest.tracks[0]["path"] == "data/jazz/jazz.00000.wav"
        assert manifest.tracks[2]["genre_index"] == 6
        assert manifest.tracks[0]["duration_samples"] == 2205
        assert manifest.genre_counts()["jazz"] == 2
        assert manifest.genre_counts()["blues"] == 0

    def test_unreadable_files_reported(self, tmp_path):
        write_fixture(tmp_path, genres=self.genres, clips_per_genre=1, seconds=0.1)
        (tmp_path / "jazz" / "broken.wav").write_bytes(b"not audio")
        (tmp_path / "notes").mkdir()
        manifest, failures = scan_dataset(tmp_path)
        assert len(manifest.tracks) == 2
        assert [path.endswith("broken.wav") for path, _ in failures] == [True]

    def test_missing_directory(self, tmp_path):
        with pytest.raises(ManifestError):
            scan_dataset(tmp_path / "absent")


class TestManifestFile:
    def test_write_then_read(self, tmp_path):
        tracks = [track("jazz.00000"), track("jazz.00000.pitch", origin="jazz.00000", transform="pitch",
                                              parameter=2.0)]
        path = write_manifest(Manifest(tracks, seed=7, augmentation_digest="abc"), tmp_path / "manifest.jsonl")
        lines = path.read_text().splitlines()
        assert json.loads(lines[0]) == {"record": "corpus", "version": 1, "seed": 7, "augmentation_digest": "abc"}

        loaded = read_manifest(path)
        assert loaded.seed == 7
        assert loaded.tracks == tracks
        assert loaded.resolve(loaded.tracks[0]) == tmp_path.resolve() / "jazz.00000.wav"
        corpus = loaded.to_corpus_index()
        assert [e.track_id for e in corpus.augmented_for("jazz.00000")] == ["jazz.00000.pitch"]

    def test_schema_violation(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        bad = track("jazz.00000", genre="metal")
        path.write_text(json.dumps({"record": "corpus"}) + "\n" + json.dumps(bad) + "\n")
        with pytest.raises(ManifestError) as exc:
            read_manifest(path)
        assert "failed validation" in str(exc.value)

    def test_not_json(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text("{oops\n")
        with pytest.raises(ManifestError):
            read_manifest(path)

    @pytest.mark.parametrize("content", ["", "\n\n"])
    def test_empty(self, tmp_path, content):
        path = tmp_path / "manifest.jsonl"
        path.write_text(content)
        with pytest.raises(ManifestError):
            read_manifest(path)


class TestValidateTracks:
    def test_duplicate_ids(self):
        with pytest.raises(ManifestError):
            validate_tracks([track("a"), track("a")])

    def test_dangling_origin(self):
        with pytest.raises(ManifestError):
            validate_tracks([track("a.noise", origin="a", transform="noise", parameter=0.01)])

    def test_label_drift(self):
        with pytest.raises(ManifestError):
            validate_tracks([track("a"), track("a.noise", genre="rock", genre_index=9, origin="a",
                                                  transform="noise", parameter=0.01)])
