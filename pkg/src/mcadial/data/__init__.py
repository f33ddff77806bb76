"""Corpus I/O, text processing, region features and synthetic data."""
from .batching import DialogDataset, RoundBatch, pad_ids
from .corpus import (
    DenseAnnotation, Dialog, DialogCorpus, DialogRound, SchemaError, align_dense, dense_for, filter_subset, load_corpus,
    load_dense, load_subset_list, parse_corpus, parse_dense, write_corpus, write_dense,
)
from .features import FeatureFormatError, FeatureStore, load_features, read_header, write_features
from .synthetic import SyntheticSpec, gen_synthetic
from .text import (
    MAX_HISTORY_LEN, MAX_OPTION_LEN, MAX_QUESTION_LEN, Vocabulary, build_history, history_tokens, tokenize,
)
