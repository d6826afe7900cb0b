from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from faceinteract.evaluation import EvalConfig, run_cv
from faceinteract.facedesc import extract
from faceinteract.learn import SvmParams
from faceinteract.synth import ArchetypeSpec, default_specs, generate

FIXED = {"facedesc": SvmParams(cost=10.0, gamma=2.0 ** -3)}


def cv_map(manifest):
    X = extract(manifest.records)["facedesc"]
    return run_cv(manifest, {"facedesc": X}, EvalConfig(params=FIXED)).map("facedesc")


def test_balanced_and_labelled():
    m = generate(default_specs(), per_class=12, seed=4)
    assert Counter(r.label for r in m.records) == {s.name: 12 for s in default_specs()}
    assert m.class_names == tuple(s.name for s in default_specs())


def test_deterministic():
    a = generate(default_specs(jitter=3, flip_prob=0.2, dropout=0.1), 10, seed=9)
    b = generate(default_specs(jitter=3, flip_prob=0.2, dropout=0.1), 10, seed=9)
    c = generate(default_specs(jitter=3, flip_prob=0.2, dropout=0.1), 10, seed=10)
    assert a.records == b.records
    assert a.records != c.records


def test_records_independent_of_count():
    small = generate(default_specs(), 5, seed=1)
    big = generate(default_specs(), 9, seed=1)
    ids = set(small.ids())
    assert [r for r in big.records if r.id in ids] == list(small.records)


def test_faces_inside_frame_and_snapped():
    m = generate(default_specs(jitter=40, flip_prob=0.5, dropout=0.3), 20, seed=2)
    for r in m.records:
        assert r.faces
        for f in r.faces:
            assert 0 <= f.cx <= r.width and 0 <= f.cy <= r.height
            assert f.orientation % 15 == 0 and -90 <= f.orientation <= 90


def test_converging_orientations_point_at_speaker():
    spec = default_specs()[0]
    assert spec.layout == "converging-orientations"
    m = generate([spec], 30, seed=5)
    for r in m.records:
        speaker, *audience = r.faces
        assert speaker.orientation != 0
        for f in audience:
            assert np.sign(f.orientation) == np.sign(speaker.cx - f.cx) == -np.sign(speaker.orientation)


def test_pairs_face_each_other():
    specs = {s.name: s for s in default_specs()}
    m = generate([specs["kissing"], specs["talking"]], 20, seed=3)
    for r in m.records:
        left, right = sorted(r.faces, key=lambda f: f.cx)
        assert left.orientation > 0 > right.orientation


def test_flip_mirrors_orientation():
    spec = default_specs()[2]
    clean = generate([spec], 10, seed=1)
    flipped = generate([replace(spec, flip_prob=1.0)], 10, seed=1)
    for a, b in zip(clean.records, flipped.records):
        assert [f.orientation for f in b.faces] == [-f.orientation for f in a.faces]
        assert [(f.cx, f.cy) for f in b.faces] == [(f.cx, f.cy) for f in a.faces]


@pytest.mark.parametrize("kw", [{"layout": "hexagonal"}, {"face_count": (3, 2)}, {"flip_prob": 1.5},
                                {"dropout": 1.0}, {"jitter": -1.0}])
def test_spec_validation(kw):
    base = dict(name="x", layout="circular")
    with pytest.raises(ValueError):
        ArchetypeSpec(**{**base, **kw})


def test_generate_validation():
    with pytest.raises(ValueError):
        generate(default_specs(), 4)
    with pytest.raises(ValueError):
        generate([default_specs()[0]] * 2, 5)


def test_speech_vs_boxing_separable():
    specs = {s.name: s for s in default_specs()}
    m = generate([specs["speech"], specs["boxing-punching"]], 40, seed=0)
    assert cv_map(m) >= 0.95


def test_flip_noise_degrades_monotonically():
    maps = [cv_map(generate(default_specs(flip_prob=p), 40, seed=0)) for p in (0.0, 0.3, 0.5)]
    for a, b in zip(maps, maps[1:]):
        assert b <= a + 0.05
    assert maps[-1] < maps[0]
