import math

import numpy as np
import pytest

from tripletlab.batch import Modality, Sample
from tripletlab.retrieval import RetrievalReport, cosine_distance, evaluate

V, T = Modality.VISIBLE, Modality.INFRARED


def at_distance(d):
    """Unit 2-D vector whose cosine distance from (1, 0) is d."""
    theta = math.acos(1 - d)
    return np.array([math.cos(theta), math.sin(theta)])


def gallery_from(distances, matches, query_id=0):
    out = []
    for k, (d, m) in enumerate(zip(distances, matches)):
        out.append(Sample(at_distance(d), query_id if m else 100 + k, V, k))
    return out


QUERY = [Sample(np.array([1.0, 0.0]), 0, T, 0)]


@pytest.mark.parametrize("x, y, d", [((1, 2), (1, 2), 0.0), ((1, 0), (0, 3), 1.0), ((1, 1), (-2, -2), 2.0)])
def test_cosine_distance(x, y, d):
    assert cosine_distance(x, y) == pytest.approx(d, abs=1e-15)


def test_perfect_retrieval():
    rng = np.random.default_rng(0)
    base = rng.normal(size=(5, 4))
    queries = [Sample(base[i], i, T, 0) for i in range(5)]
    gallery = [Sample(base[i] * 2, i, V, 0) for i in range(5)]
    for shot in ("single", "multi"):
        r = evaluate(queries, gallery, shot, 3, np.random.default_rng(1))
        assert r.rank(1) == 1.0 and r.map == 1.0


def test_two_matches_multi_shot():
    r = evaluate(QUERY, gallery_from([0.1, 0.2, 0.3], [True, False, True]), "multi")
    assert r.map == pytest.approx(5 / 6, abs=1e-12)
    assert r.rank(1) == 1.0


def test_match_ranked_last():
    r = evaluate(QUERY, gallery_from([0.1, 0.2, 0.3, 0.4, 0.5], [False] * 4 + [True]), "multi")
    assert r.map == pytest.approx(0.2, abs=1e-12)
    assert list(r.cmc) == [0, 0, 0, 0, 1]
    assert r.rank(20) == 1.0


def test_missing_identity_named():
    with pytest.raises(ValueError, match="identity 7"):
        evaluate([Sample(np.array([1.0, 0.0]), 7, T, 0)], gallery_from([0.1], [True]), "multi")


def test_modalities_must_differ():
    with pytest.raises(ValueError, match="modality"):
        evaluate([Sample(np.array([1.0, 0.0]), 0, V, 0)], gallery_from([0.1], [True]), "multi")


def test_gallery_permutation_invariance():
    rng = np.random.default_rng(2)
    queries = [Sample(rng.normal(size=3), i % 4, T, i) for i in range(8)]
    gallery = [Sample(rng.normal(size=3), i % 4, V, i) for i in range(12)]
    a = evaluate(queries, gallery, "multi")
    perm = rng.permutation(len(gallery))
    b = evaluate(queries, [gallery[i] for i in perm], "multi")
    assert b.map == pytest.approx(a.map, abs=1e-12)
    np.testing.assert_allclose(b.cmc, a.cmc, atol=1e-12)


def test_ties_follow_gallery_order():
    gallery = [Sample(np.array([1.0, 0.0]), 5, V, 0), Sample(np.array([2.0, 0.0]), 0, V, 1)]
    r = evaluate(QUERY, gallery, "multi")
    assert r.map == 0.5
    r2 = evaluate(QUERY, gallery[::-1], "multi")
    assert r2.map == 1.0


def test_single_shot_keeps_one_per_identity():
    rng = np.random.default_rng(3)
    queries = [Sample(rng.normal(size=3), i, T, 0) for i in range(6)]
    gallery = [Sample(rng.normal(size=3), i % 6, V, i) for i in range(30)]
    r = evaluate(queries, gallery, "single", 10, np.random.default_rng(0))
    assert len(r.cmc) == 6
    assert r.protocol["trials"] == 10 and r.protocol["gallery_draw"] == "identity-level"
    again = evaluate(queries, gallery, "single", 10, np.random.default_rng(0))
    assert again.map == r.map


def test_report_json_fields():
    r = RetrievalReport(np.array([0.5, 0.75, 1.0]), 0.6, {"shot": "multi", "trials": 1})
    doc = r.to_dict()
    assert doc["cmc"] == {"rank1": 0.5, "rank5": 1.0, "rank10": 1.0, "rank20": 1.0}
    assert doc["map"] == 0.6
