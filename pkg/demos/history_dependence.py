"""Image-only vs image+history models on a corpus where only history tells the answer.

    python3 demos/history_dependence.py [--epochs 20]

Takes a few minutes on one core.
"""
import argparse
import logging

from mcadial.data import DialogCorpus, DialogDataset, SyntheticSpec, Vocabulary, gen_synthetic
from mcadial.metrics import evaluate
from mcadial.model import DialogModel, ModelConfig
from mcadial.train import TrainConfig, train_sparse


def held_out(variant, history_dependent, epochs, n=150):
    corpus, features, _ = gen_synthetic(SyntheticSpec(n_dialogs=n, vocab=24, history_dependent=history_dependent,
                                                      n_boxes=12))
    cut = int(0.8 * n)
    train = DialogCorpus(corpus.questions, corpus.answers, corpus.dialogs[:cut])
    test = DialogCorpus(corpus.questions, corpus.answers, corpus.dialogs[cut:])
    vocab = Vocabulary.from_corpus(corpus)
    model = DialogModel(ModelConfig(variant=variant, vocab_size=len(vocab), embed_dim=32, num_layers=2,
                                    num_heads=2, d_model=64, feature_dim=32, dropout=0.1))
    train_sparse(model, DialogDataset(train, vocab, features),
                 TrainConfig(lr=1e-3, epochs=epochs, dropout=0.1, decay_epochs=()))
    return evaluate(model, DialogDataset(test, vocab, features))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    for variant in ("MCA-I", "MCA-I-H"):
        rep = held_out(variant, True, args.epochs)
        print(f"{variant} on history-dependent corpus (chance R@1 = 0.05)")
        print(rep.table())


if __name__ == "__main__":
    main()
