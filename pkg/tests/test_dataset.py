import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypafx import afx, dataset
from hypafx.audio_io import read_wav, write_wav
from hypafx.dataset import DrySource, Manifest, SampleRecord
from hypafx.errors import FormatError, UsageError

SR = 44100


def short_dry(n, seconds=0.5, seed=0):
    return [DrySource(f"d{i}", "synth", dataset.karplus_strong_clip(np.random.default_rng([seed, i]), SR, seconds)[0])
            for i in range(n)]


def fake_manifest(n_dry, n_chains=16):
    recs = [SampleRecord(f"{d:05d}-{k:02d}", f"ks{d:05d}", "", "", k, "", [])
            for d in range(n_dry) for k in range(n_chains)]
    return Manifest({"effects": list(afx.KINDS), "max_len": 3, "n_classes": n_chains}, recs)


@pytest.fixture(scope="module")
def small_build(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    m = dataset.build_dataset(short_dry(4), afx.enumerate_chains(afx.KINDS, 3), out, seed=3)
    dataset.assign_splits(m, "group", 3)
    return m, out


# ---- dry sources -----------------------------------------------------------

def test_synth_dry_count_and_determinism():
    a = dataset.synth_dry(533, seed=2)
    assert len(a) == 533
    b = dataset.synth_dry(3, seed=2)
    for x, y in zip(a[:3], b):
        assert x.id == y.id
        np.testing.assert_array_equal(x.audio, y.audio)
    assert all(s.audio.size == 441000 and np.max(np.abs(s.audio)) <= 1.0 for s in a)


def test_dominant_peak_matches_a_fundamental():
    # oracle: DFT magnitude peak of each clip against the sampled fundamentals
    misses = 0
    for src in dataset.synth_dry(300, seed=11):
        spec = np.abs(np.fft.rfft(src.audio))
        freqs = np.fft.rfftfreq(src.audio.size, 1 / SR)
        peak = freqs[np.argmax(spec)]
        f0s = np.array(src.meta["fundamentals"])
        misses += not np.any(np.abs(peak - f0s) <= 0.03 * f0s)
    assert misses == 0


def test_ingest_chunking(tmp_path, caplog):
    write_wav(tmp_path / "a.wav", 0.1 * np.ones(25 * SR), SR)
    chunks = dataset.ingest_wavs(tmp_path)
    assert len(chunks) == 2 and all(c.audio.size == 10 * SR for c in chunks)
    empty = tmp_path / "empty"
    empty.mkdir()
    with caplog.at_level(logging.WARNING):
        assert dataset.ingest_wavs(empty) == []
    assert "no WAV files" in caplog.text


def test_ingest_ninety_minutes(tmp_path):
    # 5400 s at a toy rate of 100 Hz keeps the file small; chunking is rate-independent
    write_wav(tmp_path / "long.wav", np.zeros(5400 * 100), 100)
    assert len(dataset.ingest_wavs(tmp_path, sr=100)) == 540


def test_ingest_skips_unreadable_files(tmp_path, caplog):
    write_wav(tmp_path / "ok.wav", np.zeros(10 * SR), SR)
    (tmp_path / "bad.wav").write_bytes(b"junk")
    with caplog.at_level(logging.WARNING):
        assert len(dataset.ingest_wavs(tmp_path)) == 1
    assert "bad.wav" in caplog.text


# ---- rendering ---------------------------------------------------------------

def test_build_counts_and_files(small_build):
    m, out = small_build
    assert len(m.records) == 4 * 16
    assert m.config["n_classes"] == 16
    for r in m.records:
        assert (out / r.wet_path).exists()
        assert r.chain_spec().kinds == afx.parse_key(r.chain)
        assert afx.ChainVocabulary().index(afx.parse_key(r.chain)) == r.label


def test_empty_chain_wet_is_dry_bit_exact(small_build):
    m, out = small_build
    for r in m.records:
        if r.chain == "":
            wet, _ = read_wav(out / r.wet_path)
            dry, _ = read_wav(out / r.dry_path)
            np.testing.assert_array_equal(wet, dry)


def test_build_is_deterministic(tmp_path, small_build):
    m, out = small_build
    again = dataset.build_dataset(short_dry(4), afx.enumerate_chains(afx.KINDS, 3), tmp_path, seed=3)
    for r1, r2 in zip(m.records, again.records):
        assert r1.effects == r2.effects
        assert (out / r1.wet_path).read_bytes() == (tmp_path / r2.wet_path).read_bytes()


def test_paper_record_count_arithmetic():
    assert len(fake_manifest(533).records) == 8528


# ---- splits ----------------------------------------------------------------

def test_split_sizes():
    assert dataset.split_sizes(8528) == [5970, 1279, 1279]
    assert dataset.split_sizes(64) == [45, 10, 9]
    assert dataset.split_sizes(0) == [0, 0, 0]


@settings(max_examples=200, deadline=None)
@given(n=st.integers(0, 20000))
def test_split_sizes_partition_and_ratio(n):
    sizes = dataset.split_sizes(n)
    assert sum(sizes) == n
    for s, r in zip(sizes, (0.7, 0.15, 0.15)):
        assert abs(s - r * n) < 1


def test_sample_mode_on_paper_scale():
    m = dataset.assign_splits(fake_manifest(533), "sample", 0)
    assert [len(m.split(s)) for s in dataset.SPLITS] == [5970, 1279, 1279]


@settings(max_examples=20, deadline=None)
@given(n_dry=st.integers(3, 80), seed=st.integers(0, 1000))
def test_group_mode_has_no_leakage(n_dry, seed):
    m = dataset.assign_splits(fake_manifest(n_dry, 4), "group", seed)
    ids = [{r.dry_id for r in m.split(s)} for s in dataset.SPLITS]
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])
    assert all(r.split in dataset.SPLITS for r in m.records)
    assert [len(i) for i in ids] == dataset.split_sizes(n_dry)


def test_split_assignment_is_seeded():
    a = [r.split for r in dataset.assign_splits(fake_manifest(64), "group", 5).records]
    b = [r.split for r in dataset.assign_splits(fake_manifest(64), "group", 5).records]
    c = [r.split for r in dataset.assign_splits(fake_manifest(64), "group", 6).records]
    assert a == b and a != c


def test_split_errors():
    with pytest.raises(UsageError):
        dataset.assign_splits(fake_manifest(2), "group", 0)
    with pytest.raises(UsageError):
        dataset.assign_splits(fake_manifest(5), "bogus", 0)


# ---- manifest persistence ----------------------------------------------------

def test_manifest_round_trip(small_build, tmp_path):
    m, _ = small_build
    dataset.write_manifest(m, tmp_path / "manifest.jsonl")
    back = dataset.read_manifest(tmp_path / "manifest.jsonl")
    assert back.config == json.loads(json.dumps(m.config))
    assert back.records == m.records
    assert not (tmp_path / "manifest.jsonl.part").exists()


def test_header_only_manifest_is_empty(tmp_path):
    dataset.write_manifest(Manifest({"effects": ["delay"], "max_len": 1}, []), tmp_path / "m.jsonl")
    assert dataset.read_manifest(tmp_path / "m.jsonl").records == []


def test_corrupted_line_is_named(small_build, tmp_path):
    m, _ = small_build
    path = tmp_path / "m.jsonl"
    dataset.write_manifest(m, path)
    lines = path.read_text().splitlines()
    lines[6] = lines[6][:-5]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="line 7"):
        dataset.read_manifest(path)


@pytest.mark.parametrize("header", ['{"format": "other", "version": 1}',
                                    '{"format": "hypafx-manifest", "version": 99}', "not json"])
def test_bad_headers_rejected(tmp_path, header):
    (tmp_path / "m.jsonl").write_text(header + "\n")
    with pytest.raises(FormatError, match="line 1"):
        dataset.read_manifest(tmp_path / "m.jsonl")
