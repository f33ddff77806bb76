import json

import numpy as np
import pytest

from conftest import small_model, small_spec
from mcadial.data import DialogDataset, SyntheticSpec, Vocabulary, gen_synthetic
from mcadial.data.corpus import DenseAnnotation
from mcadial.diffcore import Tensor
from mcadial.model import loss_from_logits, one_hot
from mcadial.train import (
    DENSE, SPARSE, Checkpoint, OptimizerState, TrainConfig, TrainingDiverged, adam_step, clip_grad_norm,
    finetune_dense, fit, lr_at, set_dropout, split_dialogs, train_sparse,
)


def test_config_defaults():
    s, d = TrainConfig(), TrainConfig(phase=DENSE)
    assert (s.lr, s.epochs, s.dropout, s.clip_norm) == (5e-4, 12, 0.2, 5.0)
    assert (d.lr, d.epochs, d.early_stop_patience) == (1e-4, 15, 5)
    with pytest.raises(ValueError, match="phase"):
        TrainConfig(phase="both")
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.0)


@pytest.mark.parametrize("epoch, lr", [(0, 5e-4), (6, 5e-4), (7, 5e-5), (8, 5e-5), (9, 5e-5), (10, 5e-6), (11, 5e-6)])
def test_sparse_schedule(epoch, lr):
    assert lr_at(epoch, SPARSE) == pytest.approx(lr, rel=1e-12)


def test_dense_plateau_schedule():
    assert lr_at(0, DENSE) == 1e-4
    assert lr_at(3, DENSE, ndcg_history=[0.5, 0.5, 0.5]) == pytest.approx(2e-5)
    assert lr_at(3, DENSE, ndcg_history=[0.5, 0.6, 0.7]) == 1e-4
    # improvements below the threshold do not count
    assert lr_at(3, DENSE, ndcg_history=[0.5, 0.50005, 0.50009]) == pytest.approx(2e-5)
    assert lr_at(5, DENSE, ndcg_history=[0.5] * 5) == pytest.approx(4e-6)
    # only epochs before the requested one matter
    assert lr_at(1, DENSE, ndcg_history=[0.5, 0.5, 0.5]) == 1e-4


def test_adam_first_step():
    p = {"w": Tensor(np.array([1.0, -2.0]), dtype=np.float64)}
    state = OptimizerState()
    adam_step(p, {"w": np.ones(2)}, state, 0.1)
    np.testing.assert_allclose(p["w"].data, [0.9, -2.1], atol=1e-6)
    assert state.step == 1 and state.m["w"].shape == (2,)


def test_adam_zero_gradient_and_shape():
    p = {"w": Tensor(np.array([1.0, 2.0]))}
    adam_step(p, {"w": np.zeros(2)}, OptimizerState(), 0.1)
    np.testing.assert_array_equal(p["w"].data, [1.0, 2.0])
    with pytest.raises(ValueError, match="shape"):
        adam_step(p, {"w": np.zeros(3)}, OptimizerState(), 0.1)


def test_adam_deterministic(rng):
    g = [rng.standard_normal(4) for _ in range(5)]
    runs = []
    for _ in range(2):
        p, s = {"w": Tensor(np.arange(4.0))}, OptimizerState()
        for gi in g:
            adam_step(p, {"w": gi.copy()}, s, 0.01)
        runs.append((p["w"].data.copy(), s.m["w"].copy(), s.v["w"].copy()))
    for a, b in zip(*runs):
        np.testing.assert_array_equal(a, b)


def test_clip_grad_norm():
    g = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}
    assert clip_grad_norm(g, 1.0) == 5.0
    np.testing.assert_allclose(np.sqrt(sum((v ** 2).sum() for v in g.values())), 1.0)
    g = {"a": np.array([0.3])}
    clip_grad_norm(g, 1.0)
    assert g["a"][0] == 0.3


def test_split_dialogs(tiny):
    corpus, _, _ = gen_synthetic(small_spec(n_dialogs=200))
    train, val = split_dialogs(corpus, seed=0)
    assert len(train.dialogs) + len(val.dialogs) == 200 and 8 <= len(val.dialogs) <= 35
    assert not {d.image_id for d in train.dialogs} & {d.image_id for d in val.dialogs}
    again = split_dialogs(corpus, seed=0)[1]
    assert [d.image_id for d in again.dialogs] == [d.image_id for d in val.dialogs]
    assert [d.image_id for d in split_dialogs(corpus, seed=1)[1].dialogs] != [d.image_id for d in val.dialogs]


def test_set_dropout(tiny):
    model = small_model("MCA-I-H", len(tiny[3]))
    set_dropout(model, 0.3)
    assert model.cfg.dropout == 0.3
    assert all(m.p == 0.3 for m in model.modules() if hasattr(m, "p"))
    with pytest.raises(ValueError):
        set_dropout(model, 1.0)


def _quick(**kw):
    base = dict(lr=1e-3, epochs=2, dialogs_per_batch=2, dropout=0.1, decay_epochs=())
    base.update(kw)
    return TrainConfig(**base)


def test_zero_lr_leaves_parameters(tiny):
    _, _, _, vocab, ds = tiny
    model = small_model("MCA-I-H", len(vocab))
    before = {k: v.copy() for k, v in model.state_dict().items()}
    train_sparse(model, ds, _quick(lr=0.0))
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_same_seed_same_curve(tiny, tmp_path):
    _, _, _, vocab, ds = tiny
    curves, states = [], []
    for i in range(2):
        model = small_model("MCA-I-VGH", len(vocab))
        ck = train_sparse(model, ds, _quick(epochs=3), val_ds=ds, out_dir=tmp_path / str(i))
        curves.append([h["loss"] for h in ck.history])
        states.append(model.state_dict())
    assert curves[0] == curves[1]
    for k in states[0]:
        np.testing.assert_array_equal(states[0][k], states[1][k])
    assert (tmp_path / "0" / "best.ckpt").read_bytes() == (tmp_path / "1" / "best.ckpt").read_bytes()


def test_train_log_and_best_tracking(tiny, tmp_path):
    _, _, _, vocab, ds = tiny
    model = small_model("MCA-I-H", len(vocab))
    ck = train_sparse(model, ds, _quick(epochs=4), val_ds=ds, out_dir=tmp_path)
    lines = [json.loads(x) for x in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert [x["epoch"] for x in lines] == [0, 1, 2, 3]
    assert set(lines[0]) == {"epoch", "phase", "loss", "val_ndcg", "lr"}
    tracked = [h["tracked"] for h in ck.history]
    assert ck.best_ndcg == max(tracked) == tracked[ck.best_epoch]
    best, _ = Checkpoint.load(tmp_path / "best.ckpt")
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, best.model_state[k])


def test_resume_matches_uninterrupted(tiny, tmp_path):
    _, _, _, vocab, ds = tiny
    full = small_model("MCA-I-H", len(vocab))
    fit(full, ds, _quick(epochs=4), out_dir=tmp_path / "full")
    part = small_model("MCA-I-H", len(vocab))
    fit(part, ds, _quick(epochs=2), out_dir=tmp_path / "part")
    resumed = small_model("MCA-I-H", len(vocab))
    fit(resumed, ds, _quick(epochs=4), out_dir=tmp_path / "part", resume=True)
    for k, v in full.state_dict().items():
        np.testing.assert_array_equal(v, resumed.state_dict()[k])
    assert (tmp_path / "full" / "last.ckpt").read_bytes() == (tmp_path / "part" / "last.ckpt").read_bytes()


def test_one_hot_dense_equals_sparse(tiny):
    corpus, features, _, vocab, _ = tiny
    onehot = [DenseAnnotation(d.image_id, t + 1, one_hot(r.gt_index, 8))
              for d in corpus.dialogs for t, r in enumerate(d.rounds)]
    ds = DialogDataset(corpus, vocab, features, onehot)
    a, b = small_model("MCA-I-H", len(vocab)), small_model("MCA-I-H", len(vocab))
    common = dict(lr=1e-3, epochs=2, dialogs_per_batch=2, dropout=0.1, early_stop_patience=0, clip_norm=5.0)
    sa = train_sparse(a, ds, TrainConfig(phase=SPARSE, decay_epochs=(), **common))
    sb = finetune_dense(b, ds, TrainConfig(phase=DENSE, **common))
    assert [h["loss"] for h in sa.history] == [h["loss"] for h in sb.history]


def test_dense_needs_annotations(tiny):
    corpus, features, _, vocab, _ = tiny
    model = small_model("MCA-I-H", len(vocab))
    with pytest.raises(ValueError, match="annotated"):
        finetune_dense(model, DialogDataset(corpus, vocab, features), TrainConfig(phase=DENSE))
    with pytest.raises(ValueError, match="sparse"):
        train_sparse(model, DialogDataset(corpus, vocab, features), TrainConfig(phase=DENSE))


def test_dense_trains_on_annotated_rounds_only(tiny):
    _, _, dense, vocab, ds = tiny
    model = small_model("MCA-I-H", len(vocab))
    ck = finetune_dense(model, ds, TrainConfig(phase=DENSE, epochs=1, lr=1e-3), val_ds=ds)
    assert ck.phase == DENSE and ck.tracked == "ndcg" and ck.history[0]["val_ndcg"] is not None


def test_mrr_is_tracked_without_dense(tiny):
    corpus, features, _, vocab, _ = tiny
    ds = DialogDataset(corpus, vocab, features)
    ck = train_sparse(small_model("MCA-I", len(vocab)), ds, _quick(epochs=1), val_ds=ds)
    assert ck.tracked == "mrr" and ck.best_ndcg is None


def test_divergence_guard(tiny):
    _, _, _, vocab, ds = tiny
    model = small_model("MCA-I", len(vocab))
    next(iter(model.parameters())).data[...] = np.nan
    with pytest.raises(TrainingDiverged):
        train_sparse(model, ds, _quick(epochs=1))


def test_single_dialog_overfits():
    corpus, features, _ = gen_synthetic(SyntheticSpec(n_dialogs=1, feature_dim=16, n_boxes=8))
    vocab = Vocabulary.from_corpus(corpus)
    ds = DialogDataset(corpus, vocab, features)
    model = small_model("MCA-I-H", len(vocab), feature_dim=16, d=64, heads=2, layers=2, embed_dim=32)
    ck = train_sparse(model, ds, TrainConfig(lr=1e-3, epochs=50, dropout=0.0, decay_epochs=()))
    losses = [h["loss"] for h in ck.history]
    assert losses[-1] < 0.1 * losses[0]
