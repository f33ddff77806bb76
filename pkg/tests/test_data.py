import json

import numpy as np
import pytest
from scipy import stats

from conftest import small_spec
from mcadial.data import (
    DenseAnnotation, DialogDataset, FeatureFormatError, FeatureStore, SchemaError, SyntheticSpec, Vocabulary,
    align_dense, build_history, dense_for, filter_subset, gen_synthetic, load_corpus, load_dense, load_features,
    load_subset_list, parse_corpus, read_header, tokenize, write_corpus, write_dense, write_features,
)
from mcadial.data.synthetic import RELEVANCE_LEVELS


def _corpus_obj(n_opts=3, rounds=10):
    return {"data": {
        "questions": ["is it red?", "what color?"],
        "answers": ["yes", "no", "blue"],
        "dialogs": [{"image_id": 7, "caption": "A red bus.",
                     "dialog": [{"question": 0, "answer": 0, "answer_options": [1, 0, 2][:n_opts], "gt_index": 1}
                                for _ in range(rounds)]}],
    }}


def test_tokenize():
    assert tokenize("Is it RED?") == ["is", "it", "red", "?"]
    assert tokenize("a man's hat, maybe.") == ["a", "man", "'", "s", "hat", ",", "maybe", "."]
    assert tokenize("") == []


def test_vocabulary():
    v = Vocabulary.build(["b a", "a c", "c"], min_count=2)
    assert v.itos == ["<pad>", "<unk>", "a", "c"]
    assert v.encode(["a", "b", "c"]) == [2, 1, 3]
    assert v.decode([2, 3]) == ["a", "c"]
    with pytest.raises(ValueError, match="lowercase"):
        v.add("Hello")


def test_vocabulary_save_load(tmp_path):
    v = Vocabulary.build(["x y z"])
    v.save(tmp_path / "v.json")
    assert Vocabulary.load(tmp_path / "v.json").itos == v.itos


def test_build_history():
    rounds = [("Q1 a?", "A1"), ("Q2", "A2"), ("Q3", "A3")]
    assert build_history("Cap x", rounds, 1) == ["cap", "x"]
    assert build_history("Cap x", rounds, 1, include_caption=False) == []
    assert build_history("Cap", rounds, 3) == ["cap", "q1", "a", "?", "a1", "q2", "a2"]
    assert build_history("Cap", rounds, 3, max_len=3) == ["a1", "q2", "a2"]
    with pytest.raises(ValueError):
        build_history("c", rounds, 5)


def test_parse_corpus_ok():
    c = parse_corpus(_corpus_obj())
    assert c.num_rounds == 10 and c.num_options == 3
    assert c.round_keys()[0] == (7, 1)


@pytest.mark.parametrize("mutate, field", [
    (lambda o: o["data"].pop("answers"), "answers"),
    (lambda o: o["data"]["dialogs"][0].pop("caption"), "caption"),
    (lambda o: o["data"]["dialogs"][0]["dialog"][3].update(gt_index=5), "gt_index"),
    (lambda o: o["data"]["dialogs"][0]["dialog"][3].update(gt_index=0), "gt_index"),
    (lambda o: o["data"]["dialogs"][0]["dialog"][3].update(answer_options=[1, 0]), "answer_options"),
    (lambda o: o["data"]["dialogs"][0]["dialog"].pop(), "dialog"),
    (lambda o: o["data"]["dialogs"][0]["dialog"][0].update(question=9), "question"),
])
def test_parse_corpus_rejects(mutate, field):
    obj = _corpus_obj()
    mutate(obj)
    with pytest.raises(SchemaError, match=field):
        parse_corpus(obj)


def test_corpus_and_dense_round_trip(tmp_path, tiny):
    corpus, _, dense, _, _ = tiny
    write_corpus(corpus, tmp_path / "c.json")
    assert load_corpus(tmp_path / "c.json") == corpus
    write_corpus(load_corpus(tmp_path / "c.json"), tmp_path / "c2.json")
    assert (tmp_path / "c.json").read_bytes() == (tmp_path / "c2.json").read_bytes()
    write_dense(dense, tmp_path / "d.json")
    assert load_dense(tmp_path / "d.json") == dense


def test_invalid_json(tmp_path):
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(SchemaError, match="invalid JSON"):
        load_corpus(tmp_path / "bad.json")


def test_dense_validation(tiny):
    corpus = tiny[0]
    with pytest.raises(SchemaError, match="not in corpus"):
        align_dense([DenseAnnotation(999, 1, np.zeros(8))], corpus)
    with pytest.raises(SchemaError, match="relevance values"):
        align_dense([DenseAnnotation(1, 1, np.zeros(7))], corpus)
    with pytest.raises(SchemaError, match="outside"):
        from mcadial.data import parse_dense
        parse_dense([{"image_id": 1, "round_id": 1, "gt_relevance": [2.0]}])
    assert dense_for(tiny[2], corpus) == tiny[2]
    assert dense_for(None, corpus) is None


def test_features_round_trip(tmp_path, rng):
    store = FeatureStore(3, 4, {5: rng.standard_normal((3, 4)), -2: rng.standard_normal((3, 4))})
    write_features(store, tmp_path / "f.bin")
    back = load_features(tmp_path / "f.bin")
    assert back == store and read_header(tmp_path / "f.bin") == (2, 3, 4)
    write_features(back, tmp_path / "g.bin")
    assert (tmp_path / "f.bin").read_bytes() == (tmp_path / "g.bin").read_bytes()


def test_features_errors(tmp_path, rng):
    store = FeatureStore(3, 4, {1: rng.standard_normal((3, 4))})
    with pytest.raises(FeatureFormatError):
        store[2] = np.zeros((2, 4))
    with pytest.raises(FeatureFormatError, match="non-finite"):
        store[2] = np.full((3, 4), np.nan)
    write_features(store, tmp_path / "f.bin")
    raw = (tmp_path / "f.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-4])
    with pytest.raises(FeatureFormatError, match="size"):
        load_features(tmp_path / "t.bin")
    (tmp_path / "m.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FeatureFormatError, match="magic"):
        load_features(tmp_path / "m.bin")
    with pytest.raises(FeatureFormatError, match="expected"):
        load_features(tmp_path / "f.bin", expect_dim=5)
    with pytest.raises(KeyError):
        store[99]


def test_subset(tmp_path, tiny):
    corpus, _, dense, _, _ = tiny
    (tmp_path / "s.json").write_text(json.dumps([{"image_id": 1, "round_id": 3}, {"image_id": 42, "round_id": 1}]))
    pairs = load_subset_list(tmp_path / "s.json")
    sub, sub_dense, unknown = filter_subset(corpus, dense, pairs)
    assert unknown == [(42, 1)]
    assert sub.round_keys() == [(1, 3)] and len(sub.dialogs) == 1
    assert all((a.image_id, a.round_id) == (1, 3) for a in sub_dense)


def test_dataset_batch(tiny):
    corpus, _, dense, vocab, ds = tiny
    b = ds.batch([(1, 1), (1, 2), (2, 5)])
    assert b.q_ids.shape[0] == 3 and b.opt_ids.shape[:2] == (3, 8)
    assert b.image.shape == (3, 4, 6) and b.image.dtype == np.float32
    np.testing.assert_array_equal(b.q_mask, b.q_ids != 0)
    gt_tokens = [b.opt_ids[i, b.gt_index[i], 0] for i in range(3)]
    assert gt_tokens == [vocab.encode(tokenize(corpus.answers[corpus.dialogs[d].rounds[t].answer]))[0]
                         for d, t in [(0, 0), (0, 1), (1, 4)]]
    annotated = {(a.image_id, a.round_id) for a in dense}
    for i, k in enumerate(b.keys):
        assert np.isnan(b.relevance[i]).all() != (k in annotated)


def test_dataset_empty_history_is_unk(tiny):
    corpus, features, _, vocab, _ = tiny
    ds = DialogDataset(corpus, vocab, features, include_caption=False)
    assert ds.history_ids(1, 1) == [1]
    assert len(ds.history_ids(1, 3)) > 1


def test_dataset_history_corpus(tiny):
    corpus, features, _, vocab, ds = tiny
    other, _, _ = gen_synthetic(small_spec(seed=5))
    alt = DialogDataset(corpus, vocab, features, history_corpus=other)
    assert alt.history_ids(2, 4) != ds.history_ids(2, 4)
    short, _, _ = gen_synthetic(small_spec(n_dialogs=1))
    with pytest.raises(ValueError, match="history"):
        DialogDataset(corpus, vocab, features, history_corpus=short)


def test_synthetic_is_deterministic():
    a = gen_synthetic(small_spec(seed=3))
    b = gen_synthetic(small_spec(seed=3))
    assert a[0] == b[0] and a[1] == b[1] and a[2] == b[2]
    assert gen_synthetic(small_spec(seed=4))[0] != a[0]


@pytest.mark.parametrize("hd", [True, False])
def test_synthetic_structure(hd):
    spec = SyntheticSpec(n_dialogs=20, history_dependent=hd, dense_rounds_per_dialog=2)
    corpus, features, dense = gen_synthetic(spec)
    parse_corpus(corpus.to_json())
    assert corpus.num_options == 20 and len(features) == 20 and len(dense) == 40
    for d in corpus.dialogs:
        for r in d.rounds:
            groups = {o // 4 for o in r.answer_options}
            assert len(groups) == 5 and len(set(r.answer_options)) == 20
    for a in dense:
        r = corpus.dialogs[a.image_id - 1].rounds[a.round_id - 1]
        assert a.relevance[r.gt_index] == 1.0
        mates = [j for j, o in enumerate(r.answer_options) if o // 4 == r.answer // 4 and j != r.gt_index]
        assert set(a.relevance[mates]) <= set(RELEVANCE_LEVELS)
        assert np.count_nonzero(a.relevance) == 4


def test_synthetic_history_dependence():
    corpus, features, _ = gen_synthetic(SyntheticSpec(n_dialogs=10))
    images = [features[i] for i in features]
    assert all(np.array_equal(images[0], m) for m in images)
    for d in corpus.dialogs:
        assert len({r.answer for r in d.rounds}) == 1
        assert corpus.answers[d.rounds[0].answer] in d.caption


def test_synthetic_gt_position_uniform():
    corpus, _, _ = gen_synthetic(SyntheticSpec(n_dialogs=100, history_dependent=False))
    counts = np.bincount([r.gt_index for d in corpus.dialogs for r in d.rounds], minlength=20)
    assert counts.sum() == 1000
    assert stats.chisquare(counts).pvalue > 0.01


def test_synthetic_gt_noise():
    _, _, dense = gen_synthetic(SyntheticSpec(n_dialogs=200, gt_noise=0.5))
    corpus = gen_synthetic(SyntheticSpec(n_dialogs=200, gt_noise=0.5))[0]
    gt = np.array([a.relevance[corpus.dialogs[a.image_id - 1].rounds[a.round_id - 1].gt_index] for a in dense])
    assert set(gt) <= {0.0, 0.5, 1.0}
    assert 0.35 < np.mean(gt < 1) < 0.65


def test_synthetic_spec_validation():
    with pytest.raises(ValueError, match="multiples"):
        gen_synthetic(SyntheticSpec(num_options=10))
    with pytest.raises(ValueError, match="gt_noise"):
        gen_synthetic(SyntheticSpec(gt_noise=2.0))
