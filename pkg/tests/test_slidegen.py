import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from concordia.slidegen import (
    Diagnosis,
    GenConfig,
    ManifestRecord,
    PanelReview,
    concordance_rate,
    decode_lesion_intensity,
    generate_dataset,
    generate_specimen,
    lesion_intensity,
    nearest_count,
    read_manifest,
    read_ppm,
    split_counts,
    split_dataset,
    write_manifest,
    write_ppm,
)

MEL = Diagnosis.MelanomaInSitu
INV = Diagnosis.InvasiveMelanoma
NEV = Diagnosis.ConventionalNevus
SMALL = GenConfig(width=256, height=256)


def panel(*dx):
    return [PanelReview(f"R{i}", d) for i, d in enumerate(dx)]


def test_concordance_one_third():
    lab = concordance_rate(panel(MEL, NEV, NEV))
    assert lab.value == Fraction(1, 3)
    assert lab.render() == "0.33"


def test_concordance_zero_of_five():
    lab = concordance_rate(panel(*[NEV] * 5))
    assert lab.value == 0 and lab.panel_size == 5


def test_concordance_three_quarters():
    lab = concordance_rate(panel(INV, INV, INV, Diagnosis.DysplasticNevus))
    assert lab.value == Fraction(3, 4)
    assert lab.render() == "0.75"


def test_empty_panel():
    with pytest.raises(ValueError, match="empty panel"):
        concordance_rate([])


def test_label_vocabulary():
    got = {concordance_rate(panel(*[MEL] * k + [NEV] * (p - k))).render() for p in (3, 4, 5) for k in range(p + 1)}
    # fifths add 0.20/0.40/0.60/0.80 on top of the usual label set
    assert {"0.00", "0.25", "0.33", "0.50", "0.67", "0.75", "1.00"} <= got


@given(st.lists(st.sampled_from(list(Diagnosis)), min_size=1, max_size=8), st.randoms())
def test_concordance_permutation_invariant(dx, rnd):
    revs = panel(*dx)
    shuffled = revs[:]
    rnd.shuffle(shuffled)
    assert concordance_rate(revs) == concordance_rate(shuffled)


@given(st.floats(0, 1), st.integers(1, 9))
def test_nearest_count_is_nearest(c, p):
    k = nearest_count(c, p)
    best = min(abs(Fraction(j, p) - Fraction(c)) for j in range(p + 1))
    assert abs(Fraction(k, p) - Fraction(c)) == best


def test_specimen_boundaries():
    _, revs = generate_specimen(0.0, SMALL, 1)
    assert concordance_rate(revs).melanoma_count == 0
    r, revs = generate_specimen(1.0, SMALL, 1)
    assert r.gen_meta.lesion_intensity == lesion_intensity(1.0) == 0.8


def test_point_six_with_five_reviewers():
    _, revs = generate_specimen(0.6, GenConfig(width=256, height=256, panel_size=5), 3)
    assert concordance_rate(revs).value == Fraction(3, 5)


def test_deterministic():
    a, ra = generate_specimen(0.4, SMALL, 77)
    b, rb = generate_specimen(0.4, SMALL, 77)
    assert np.array_equal(a.pixels, b.pixels) and ra == rb
    c, _ = generate_specimen(0.4, SMALL, 78)
    assert not np.array_equal(a.pixels, c.pixels)


@pytest.mark.parametrize("bad", [dict(width=200), dict(height=0), dict(noise=-0.1)])
def test_invalid_config(bad):
    with pytest.raises(ValueError):
        generate_specimen(0.5, GenConfig(**{**dict(width=256, height=256), **bad}), 0)


@pytest.mark.parametrize("c", [0.0, 0.25, 0.5, 0.75, 1.0])
def test_oracle_decoder_within_three_sigma(c):
    cfg = GenConfig(width=512, height=512, noise=0.05)
    for seed in range(3):
        r, _, truth = generate_specimen(c, cfg, seed, return_truth=True)
        assert abs(decode_lesion_intensity(r, truth) - lesion_intensity(c)) <= 3 * cfg.noise


def test_background_brightness_and_ink_flags():
    r, _, truth = generate_specimen(0.5, GenConfig(width=512, height=512, ink_prob=1.0, blur_prob=1.0), 5,
                                    return_truth=True)
    bg = r.pixels[~truth.tissue].astype(float)
    assert bg.mean() > 230
    assert truth.ink.any() and truth.blur.any()
    assert 0 < r.gen_meta.ink_fraction < 1 and 0 < r.gen_meta.blur_fraction < 1


def test_split_counts_120():
    ids = [f"S{i:04d}" for i in range(1412)]
    assert split_counts(1412, (0.7, 0.15, 0.15)) == [990, 211, 211]
    assert split_counts(120, (0.7, 0.15, 0.15)) == [84, 18, 18]
    s = split_dataset(ids, (0.7, 0.15, 0.15), 0)
    assert [list(s.values()).count(k) for k in ("train", "val", "test")] == [990, 211, 211]


def test_split_all_train_and_determinism():
    ids = [f"x{i}" for i in range(37)]
    assert set(split_dataset(ids, (1, 0, 0), 3).values()) == {"train"}
    assert split_dataset(ids, (0.7, 0.15, 0.15), 9) == split_dataset(ids[::-1], (0.7, 0.15, 0.15), 9)


@pytest.mark.parametrize("fr", [(1.2, -0.1, -0.1), (0.5, 0.5)])
def test_split_bad_fractions(fr):
    with pytest.raises(ValueError):
        split_dataset(["a", "b"], fr, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 400), st.integers(0, 10_000))
def test_split_partition(n, seed):
    ids = [f"s{i}" for i in range(n)]
    s = split_dataset(ids, (0.7, 0.15, 0.15), seed)
    assert sorted(s) == sorted(ids)
    counts = split_counts(n, (0.7, 0.15, 0.15))
    assert [list(s.values()).count(k) for k in ("train", "val", "test")] == list(counts)


def _records(n):
    out = []
    for i in range(n):
        revs = panel(*([MEL] * (i % 4) + [NEV] * (3 - i % 4)))
        out.append(ManifestRecord(f"S{i:04d}", [f"S{i:04d}_0.ppm"], revs, concordance_rate(revs),
                                  ("train", "val", "test")[i % 3], site="sïte" if i % 2 else None))
    return out


def test_manifest_round_trip(tmp_path):
    recs = _records(9)
    p = tmp_path / "m.jsonl"
    write_manifest(recs, p)
    back = read_manifest(p)
    assert back == recs
    write_manifest(back, tmp_path / "m2.jsonl")
    assert p.read_bytes() == (tmp_path / "m2.jsonl").read_bytes()
    first = json.loads(p.read_text(encoding="utf-8").splitlines()[0])
    assert list(first) == ["specimen_id", "site", "split", "slides", "reviews", "melanoma_count", "panel_size",
                           "gen_meta"]


def test_manifest_empty(tmp_path):
    write_manifest([], tmp_path / "e.jsonl")
    assert read_manifest(tmp_path / "e.jsonl") == []


def test_manifest_duplicate_rejected(tmp_path):
    recs = _records(2)
    recs[1].specimen_id = recs[0].specimen_id
    with pytest.raises(ValueError, match="duplicate"):
        write_manifest(recs, tmp_path / "d.jsonl")


def test_manifest_malformed_line_named(tmp_path):
    p = tmp_path / "bad.jsonl"
    write_manifest(_records(3), p)
    lines = p.read_text(encoding="utf-8").splitlines()
    lines[1] = lines[1][:-5]
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(ValueError, match="line 2"):
        read_manifest(p)


def test_ppm_round_trip(tmp_path):
    px = np.random.default_rng(0).integers(0, 256, (16, 24, 3), dtype=np.uint8)
    write_ppm(tmp_path / "a.ppm", px)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n24 16\n255\n")
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), px)


def test_generate_dataset_layout(tmp_path):
    recs = generate_dataset(tmp_path, 20, SMALL, seed=4, n_sites=2)
    assert [r.split for r in recs].count("train") == 14
    assert (tmp_path / "S0000_0.ppm").exists()
    back = read_manifest(tmp_path / "manifest.jsonl")
    assert back == recs
    for r in back:
        assert r.label.value == Fraction(nearest_count(r.gen_meta.true_concordance, 3), 3)
        assert r.site in ("site0", "site1")
