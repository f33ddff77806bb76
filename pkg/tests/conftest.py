import numpy as np
import pytest

from mcadial.data import DialogDataset, SyntheticSpec, Vocabulary, gen_synthetic
from mcadial.model import DialogModel, ModelConfig


def small_spec(**kw):
    base = dict(n_dialogs=3, vocab=8, num_options=8, feature_dim=6, n_boxes=4, seed=0)
    base.update(kw)
    return SyntheticSpec(**base)


def small_model(variant, vocab_size, feature_dim=6, d=8, heads=2, layers=1, dtype="float32", seed=0, dropout=0.0,
                embed_dim=6):
    cfg = ModelConfig(variant=variant, vocab_size=vocab_size, embed_dim=embed_dim, num_layers=layers,
                      num_heads=heads, d_model=d, dropout=dropout, feature_dim=feature_dim, seed=seed, dtype=dtype)
    return DialogModel(cfg)


@pytest.fixture
def tiny():
    corpus, features, dense = gen_synthetic(small_spec())
    vocab = Vocabulary.from_corpus(corpus)
    return corpus, features, dense, vocab, DialogDataset(corpus, vocab, features, dense)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def annotated_corpus(gt_values, num_options=4, seed=0):
    """Corpus of 10-round dialogs with one annotation per round whose ground
    truth gets ``gt_values[i]``; other candidates get random relevance."""
    from mcadial.data import DenseAnnotation, Dialog, DialogCorpus, DialogRound

    rng = np.random.default_rng(seed)
    n = len(gt_values)
    dialogs, dense = [], []
    for start in range(0, n, 10):
        rounds = []
        image_id = start // 10 + 1
        for t in range(10):
            gt = int(rng.integers(num_options))
            opts = [int(x) for x in rng.permutation(num_options)]
            rounds.append(DialogRound(0, opts[gt], opts, gt))
            if start + t < n:
                rel = rng.choice([0.0, 0.5, 1.0], num_options)
                rel[gt] = gt_values[start + t]
                dense.append(DenseAnnotation(image_id, t + 1, rel))
        dialogs.append(Dialog(image_id, "a caption", rounds))
    answers = [f"answer {i}" for i in range(num_options)]
    return DialogCorpus(["what is it ?"], answers, dialogs), dense


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion reported in the summary")
    config._criteria = {}


def pytest_runtest_logreport(report):
    # one verdict per criterion: a failure in any phase wins over a pass
    item_marks = getattr(report, "criterion", None)
    if item_marks is None:
        return
    n, title = item_marks
    table = report.config_criteria
    ok = report.passed if report.when == "call" else not report.failed
    detail = dict(report.user_properties).get("detail", "")
    prev = table.get(n)
    if prev is None or prev[1]:
        table[n] = (title, ok and (prev is None or prev[1]), detail or (prev[2] if prev else ""))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.criterion = tuple(mark.args)
        report.config_criteria = item.config._criteria


def pytest_terminal_summary(terminalreporter, config):
    table = getattr(config, "_criteria", {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(table):
        title, ok, detail = table[n]
        line = f"criterion {n} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
