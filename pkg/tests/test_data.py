import hashlib
import logging

import numpy as np
import pytest

from m2l2.config import preset
from m2l2.data import ChunkPairDataset, DataError, ingest_dataset
from m2l2.spectral import WaveformSegment, write_wav
from m2l2.toy import make_toy_corpus, toy_clip

from conftest import tiny_cfg


@pytest.fixture
def corpus(tmp_path):
    cfg = tiny_cfg()
    make_toy_corpus(tmp_path, n_clips=2, seconds=1, sample_rate=cfg.spectral.sample_rate, seed=0)
    return tmp_path


def test_paper_crop_is_two_chunks():
    cfg = preset("paper")
    assert cfg.spectral.segment_length(2) == 67_072
    x = np.random.default_rng(0).standard_normal((1, 67_072))
    # one clip exactly one segment long
    ds = ChunkPairDataset.__new__(ChunkPairDataset)
    ds.cfg, ds.seed, ds.segment, ds.clips = cfg, 0, 67_072, [x]
    ex = ds.example(0, 0)
    assert ex.shape == (2, 2, 1024, 64)


def test_batch_shape_and_determinism(corpus):
    cfg = tiny_cfg()
    a = ChunkPairDataset(corpus, cfg).batch(3)
    b = ChunkPairDataset(corpus, cfg).batch(3)
    assert a.shape == (cfg.train.batch, 2, 2, cfg.spectral.n_freq, cfg.spectral.spec_length)
    digest = [hashlib.sha256(t.numpy().tobytes()).hexdigest() for t in (a, b)]
    assert digest[0] == digest[1]
    assert not np.array_equal(a.numpy(), ChunkPairDataset(corpus, cfg).batch(4).numpy())
    assert not np.array_equal(a.numpy(), ChunkPairDataset(corpus, cfg, seed=9).batch(3).numpy())


def test_pairs_are_adjacent(corpus):
    cfg = tiny_cfg()
    ds = ChunkPairDataset(corpus, cfg)
    s = cfg.spectral
    long = ds.example(0, 0)
    shifted = ds.example(0, s.chunk_samples)
    # the right chunk of one crop is the left chunk of the crop one chunk later
    assert np.allclose(long[1].numpy(), shifted[0].numpy(), atol=1e-5)


def test_crop_alignment(corpus):
    cfg = tiny_cfg(train={"crop_align": tiny_cfg().spectral.chunk_samples})
    ds = ChunkPairDataset(corpus, cfg)
    s = cfg.spectral
    rng = np.random.default_rng([ds.seed, 0])
    for _ in range(cfg.train.batch):
        clip = int(rng.integers(len(ds)))
        n = (ds.clips[clip].shape[1] - ds.segment) // s.chunk_samples + 1
        off = s.chunk_samples * int(rng.integers(n))
        assert off % s.chunk_samples == 0 and off + ds.segment <= ds.clips[clip].shape[1]


def test_short_files_skipped_then_error(tmp_path, caplog):
    cfg = tiny_cfg()
    sr = cfg.spectral.sample_rate
    write_wav(tmp_path / "short.wav", WaveformSegment(np.zeros((1, 10)), sr))
    with pytest.raises(DataError, match="no usable data"):
        ChunkPairDataset(tmp_path, cfg)
    write_wav(tmp_path / "long.wav", WaveformSegment(toy_clip(0, 1.0, sr), sr))
    with caplog.at_level(logging.WARNING):
        ds = ChunkPairDataset(tmp_path, cfg)
    assert len(ds) == 1 and "short.wav" in caplog.text


def test_empty_and_wrong_rate(tmp_path):
    cfg = tiny_cfg()
    with pytest.raises(DataError, match="no .wav"):
        ChunkPairDataset(tmp_path, cfg)
    write_wav(tmp_path / "a.wav", WaveformSegment(np.zeros((1, 4000)), 22050))
    with pytest.raises(DataError, match="sample rate"):
        ChunkPairDataset(tmp_path, cfg)


def test_stream_matches_batches(corpus):
    cfg = tiny_cfg()
    ds = ChunkPairDataset(corpus, cfg)
    it = ingest_dataset(corpus, cfg, start=5)
    assert np.array_equal(next(it).numpy(), ds.batch(5).numpy())
    assert np.array_equal(next(it).numpy(), ds.batch(6).numpy())


def test_toy_corpus(tmp_path):
    paths = make_toy_corpus(tmp_path, n_clips=3, seconds=0.5, sample_rate=8000)
    assert len(list(tmp_path.glob("*.wav"))) == 3
    clip = toy_clip(1, 0.5, 8000)
    assert clip.shape == (1, 4000) and np.abs(clip).max() <= 0.5 + 1e-9
    assert len(paths) == 3
