#!/usr/bin/env python3
"""
Write a small synthetic genre/<genre>.<NNNNN>.wav tree for smoke runs and tests.

Each genre gets its own fundamental so that a network has something to learn;
clips are 30 s at 22,050 Hz unless told otherwise.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from services.segmentation_service import CANONICAL_CLIP_LENGTH, GENRES, SAMPLE_RATE  # noqa: E402
from utils.wav_io import write_wav  # noqa: E402


def synth_clip(genre_index: int, clip_index: int, num_samples: int, sample_rate: int,
               rng: np.random.Generator) -> np.ndarray:
    t = np.arange(num_samples) / sample_rate
    fundamental = 110.0 * 2 ** (genre_index / 4)
    tone = 0.3 * np.sin(2 * np.pi * fundamental * t + clip_index)
    tone += 0.1 * np.sin(2 * np.pi * 2 * fundamental * t)
    return tone + 0.02 * rng.standard_normal(num_samples)


def write_fixture(root, genres=GENRES, clips_per_genre: int = 3, seconds: float = None,
                  sample_rate: int = SAMPLE_RATE, seed: int = 0):
    """Returns the list of written paths."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    num_samples = CANONICAL_CLIP_LENGTH if seconds is None else int(round(seconds * sample_rate))
    written = []
    for genre in genres:
        genre_index = GENRES.index(genre)
        for k in range(clips_per_genre):
            path = root / genre / f"{genre}.{k:05d}.wav"
            write_wav(path, synth_clip(genre_index, k, num_samples, sample_rate, rng), sample_rate)
            written.append(path)
    return written


def main():
    parser = argparse.ArgumentParser(description="Write a synthetic genre dataset")
    parser.add_argument("root")
    parser.add_argument("--genres", nargs="+", default=list(GENRES), choices=GENRES)
    parser.add_argument("--clips-per-genre", type=int, default=3)
    parser.add_argument("--seconds", type=float)
    parser.add_argument("--sample-rate", type=int, default=SAMPLE_RATE)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    paths = write_fixture(args.root, args.genres, args.clips_per_genre, args.seconds, args.sample_rate, args.seed)
    print(f"Wrote {len(paths)} files under {args.root}")


if __name__ == "__main__":
    main()
