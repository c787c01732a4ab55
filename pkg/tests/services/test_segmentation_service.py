import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from services.segmentation_service import (
    CANONICAL_CLIP_LENGTH, GENRES, MIN_CLIP_LENGTH, SEGMENT_HOP, SEGMENT_LENGTH, SEGMENTS_PER_TRACK, AudioClip,
    SegmentationError, TrackTooShortError, canonicalize, genre_index, ingest, segment, segment_matrix,
)
from utils.wav_io import write_wav


def ramp_clip(length=CANONICAL_CLIP_LENGTH, label=3):
    return AudioClip(samples=np.arange(length, dtype=np.float64) / length, track_id="disco.00007", genre_label=label)


class TestConstants:
    def test_window_geometry(self):
        assert SEGMENT_LENGTH == 110_250
        assert SEGMENT_HOP == 27_562
        assert SEGMENTS_PER_TRACK == 21
        assert MIN_CLIP_LENGTH == 661_490
        assert (SEGMENTS_PER_TRACK - 1) * SEGMENT_HOP + SEGMENT_LENGTH <= CANONICAL_CLIP_LENGTH

    def test_genre_order(self):
        assert GENRES[0] == "blues" and GENRES[-1] == "rock"
        assert genre_index("hiphop") == 4


class TestSegment:
    def test_rows_are_hop_spaced_windows(self):
        clip = ramp_clip()
        matrix = segment_matrix(clip)
        assert matrix.shape == (21, 110_250)
        for k in (0, 1, 10, 20):
            np.testing.assert_array_equal(matrix[k], clip.samples[k * SEGMENT_HOP:k * SEGMENT_HOP + SEGMENT_LENGTH])

    def test_last_window_ends_before_canonical_end(self):
        clip = ramp_clip()
        assert segment_matrix(clip)[-1][-1] == clip.samples[MIN_CLIP_LENGTH - 1]

    def test_segments_inherit_track_metadata(self):
        segments = segment(ramp_clip())
        assert [s.segment_index for s in segments] == list(range(21))
        assert {s.genre_label for s in segments} == {3}
        assert {s.track_id for s in segments} == {"disco.00007"}

    def test_minimum_length_accepted(self):
        assert segment_matrix(ramp_clip(MIN_CLIP_LENGTH)).shape == (21, 110_250)

    def test_one_sample_short_rejected(self):
        with pytest.raises(TrackTooShortError) as exc:
            segment(ramp_clip(MIN_CLIP_LENGTH - 1))
        assert exc.value.length == MIN_CLIP_LENGTH - 1
        assert "661490" in str(exc.value)

    def test_longer_clip_truncated(self):
        long_clip = ramp_clip(700_000)
        np.testing.assert_array_equal(segment_matrix(long_clip)[0], long_clip.samples[:SEGMENT_LENGTH])

    @settings(max_examples=40, deadline=None)
    @given(length=st.integers(MIN_CLIP_LENGTH, 662_500))
    def test_any_valid_length_gives_hop_spaced_windows(self, length):
        clip = ramp_clip(length)
        canonical = canonicalize(clip.samples)
        assert canonical.shape == (CANONICAL_CLIP_LENGTH,)
        matrix = segment_matrix(clip)
        assert matrix.shape == (SEGMENTS_PER_TRACK, SEGMENT_LENGTH)
        # ramp samples encode their own index
        starts = [int(round(row[0] * length)) for row in matrix]
        assert np.diff(starts).tolist() == [SEGMENT_HOP] * (SEGMENTS_PER_TRACK - 1)
        assert starts[0] == 0
        # no window reaches into zero padding
        assert matrix[-1][-1] == clip.samples[MIN_CLIP_LENGTH - 1]


class TestCanonicalize:
    def test_pads_with_zeros(self):
        out = canonicalize(np.ones(661_495))
        assert out.shape == (CANONICAL_CLIP_LENGTH,)
        assert out[-5:].tolist() == [0.0] * 5

    def test_truncates(self):
        assert canonicalize(np.ones(700_000)).shape == (CANONICAL_CLIP_LENGTH,)


class TestAudioClip:
    def test_origin_defaults_to_track_id(self):
        clip = AudioClip(np.zeros(10), "rock.00001", 9)
        assert clip.origin == "rock.00001"
        assert clip.genre == "rock"

    def test_rejects_multichannel(self):
        with pytest.raises(SegmentationError):
            AudioClip(np.zeros((2, 10)), "x")

    def test_rejects_out_of_range_label(self):
        with pytest.raises(SegmentationError):
            AudioClip(np.zeros(10), "x", 10)

    def test_unknown_genre_name(self):
        with pytest.raises(SegmentationError):
            genre_index("polka")


class TestIngest:
    def test_label_and_id_from_path(self, tmp_path):
        path = write_wav(tmp_path / "jazz" / "jazz.00042.wav", np.zeros(2205))
        clip = ingest(path)
        assert clip.track_id == "jazz.00042"
        assert clip.genre_label == GENRES.index("jazz")
        assert clip.sample_rate == 22050

    def test_explicit_label_wins(self, tmp_path):
        path = write_wav(tmp_path / "jazz" / "a.wav", np.zeros(2205))
        clip = ingest(path, genre_label=0, track_id="custom")
        assert (clip.genre_label, clip.track_id) == (0, "custom")

    def test_unknown_parent_has_no_label(self, tmp_path):
        path = write_wav(tmp_path / "misc" / "a.wav", np.zeros(2205))
        assert ingest(path).genre_label is None

    def test_resamples_to_working_rate(self, tmp_path):
        path = write_wav(tmp_path / "blues" / "b.wav", np.zeros(44100), 44100)
        assert abs(ingest(path).duration_samples - 22050) <= 1
