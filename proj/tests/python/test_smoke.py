import json

import numpy as np
import pytest
from scipy import stats

import s3mprobe


def token(word="cats", onset=0.1):
    phones = ["K", "AE1", "T", "S"]
    return json.dumps({
        "utterance_id": "u1",
        "token_index": 0,
        "word": word,
        "pos_tag": "NNS",
        "onset_s": onset,
        "offset_s": 0.5,
        "phonemes": [
            {"label": p, "onset_s": 0.1 + 0.1 * i, "offset_s": 0.2 + 0.1 * i}
            for i, p in enumerate(phones)
        ],
    })


def test_import():
    assert issubclass(s3mprobe.FormatError, s3mprobe.Error)
    assert s3mprobe.default_data_dir().joinpath("phoneme_features.tsv").exists()


@pytest.mark.parametrize("phones,expected", [
    ("K AE1 T S", "s"),
    ("D AO1 G Z", "z"),
    ("B AH1 S IH0 Z", "Iz"),
])
def test_classify(phones, expected):
    allomorph, consistency = s3mprobe.classify_allomorph(phones)
    assert allomorph == expected
    assert consistency == "consistent"


def test_activation_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    frames = rng.standard_normal((17, 6)).astype(np.float32)
    path = tmp_path / "u1.s3ma"
    s3mprobe.write_activation(path, "u1", 3, frames)
    back = s3mprobe.read_activation(path)
    assert back["utterance_id"] == "u1"
    assert back["layer"] == 3
    assert back["hop_us"] == 20000
    np.testing.assert_array_equal(back["frames"], frames)
    assert path.read_bytes() == s3mprobe.encode_activation("u1", 3, frames)


def test_damaged_activation(tmp_path):
    frames = np.ones((4, 2), dtype=np.float32)
    raw = bytearray(s3mprobe.encode_activation("u1", 0, frames))
    with pytest.raises(s3mprobe.Error):
        s3mprobe.decode_activation(bytes(raw[:-1]))
    raw[0:4] = b"XXXX"
    with pytest.raises(s3mprobe.FormatError):
        s3mprobe.decode_activation(bytes(raw))


def test_frames_in_span():
    assert s3mprobe.frames_in_span(0.1, 0.3) == (5, 15)


def test_alignment_manifest(tmp_path):
    line = s3mprobe.normalize_word_token(token("Cats"))
    assert json.loads(line)["word"] == "cats"
    path = tmp_path / "align.jsonl"
    s3mprobe.write_alignment_manifest(path, [line])
    assert s3mprobe.read_alignment_manifest(path) == [line]


def test_bad_token():
    with pytest.raises(s3mprobe.DataError):
        s3mprobe.normalize_word_token(token(onset=0.6))
    with pytest.raises(s3mprobe.FormatError):
        s3mprobe.normalize_word_token("{}")


def test_welch_matches_scipy():
    rng = np.random.default_rng(1)
    a = rng.normal(0.0, 1.0, 30)
    b = rng.normal(0.4, 2.0, 45)
    ours = s3mprobe.welch_t(list(a), list(b))
    ref = stats.ttest_ind(a, b, equal_var=False)
    assert ours["t"] == pytest.approx(ref.statistic, rel=1e-10)
    assert ours["p"] == pytest.approx(ref.pvalue, rel=1e-8)


def test_sha256():
    assert s3mprobe.sha256_hex(b"abc").startswith("ba7816bf")
