"""Turn corpus rounds into padded id/feature arrays for the model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffcore.layers import PAD_ID, UNK_ID
from .corpus import DenseAnnotation, DialogCorpus, align_dense
from .features import FeatureStore
from .text import MAX_HISTORY_LEN, MAX_OPTION_LEN, MAX_QUESTION_LEN, Vocabulary, history_tokens, tokenize


@dataclass
class RoundBatch:
    q_ids: np.ndarray          # (B, Tq) int64, right padded
    q_mask: np.ndarray         # (B, Tq) bool
    h_ids: np.ndarray          # (B, Th)
    h_mask: np.ndarray
    image: np.ndarray | None   # (B, rows, feature_dim) float32
    opt_ids: np.ndarray        # (B, N, Tc)
    opt_mask: np.ndarray
    gt_index: np.ndarray       # (B,)
    relevance: np.ndarray | None  # (B, N); NaN rows where a round has no annotation
    keys: list[tuple[int, int]]   # (image_id, round_id)

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def num_options(self) -> int:
        return self.opt_ids.shape[1]


def pad_ids(seqs: list[list[int]], min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    width = max([len(s) for s in seqs] + [min_len])
    ids = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
    return ids, ids != PAD_ID


class DialogDataset:
    """Pre-tokenised view of a corpus for batching.

    An empty history (first round without caption) is encoded as a single
    UNK token so attention over history always has a key.  ``history_corpus``
    optionally supplies captions and earlier turns from a separate dialog
    file covering the same images.
    """

    def __init__(self, corpus: DialogCorpus, vocab: Vocabulary, features: FeatureStore | None = None,
                 dense: list[DenseAnnotation] | None = None, include_caption: bool = True,
                 history_corpus: DialogCorpus | None = None):
        self.corpus = corpus
        self.vocab = vocab
        self.features = features
        self.include_caption = include_caption
        self.dense = align_dense(dense, corpus) if dense else {}
        self._q = [tokenize(q) for q in corpus.questions]
        self._a = [tokenize(a) for a in corpus.answers]
        self._q_ids = [vocab.encode(t) for t in self._q]
        self._a_ids = [vocab.encode(t) for t in self._a]
        self._index = corpus.dialog_index()
        hist = history_corpus if history_corpus is not None else corpus
        self._hist = hist
        self._hist_index = hist.dialog_index()
        missing = [d.image_id for d in corpus.dialogs if d.image_id not in self._hist_index]
        if missing:
            raise ValueError(f"history dialogs missing for images {missing[:5]}")
        self._hq_ids = [vocab.encode(tokenize(q)) for q in hist.questions]
        self._ha_ids = [vocab.encode(tokenize(a)) for a in hist.answers]
        self._cap_ids = [vocab.encode(tokenize(d.caption)) for d in hist.dialogs]

    def __len__(self) -> int:
        return len(self.corpus.dialogs)

    def round_keys(self, annotated_only: bool = False) -> list[tuple[int, int]]:
        keys = self.corpus.round_keys()
        if annotated_only:
            keys = [k for k in keys if k in self.dense]
        return keys

    def history_ids(self, image_id: int, round_id: int) -> list[int]:
        di = self._hist_index[image_id]
        d = self._hist.dialogs[di]
        qa = [(self._hq_ids[r.question], self._ha_ids[r.answer]) for r in d.rounds]
        ids = history_tokens(self._cap_ids[di], qa, round_id, self.include_caption, MAX_HISTORY_LEN)
        return ids or [UNK_ID]

    def batch(self, keys: list[tuple[int, int]]) -> RoundBatch:
        q, h, opts, gts, rels, imgs = [], [], [], [], [], []
        any_rel = False
        for image_id, round_id in keys:
            d = self.corpus.dialogs[self._index[image_id]]
            r = d.rounds[round_id - 1]
            q.append(self._q_ids[r.question][:MAX_QUESTION_LEN] or [UNK_ID])
            h.append(self.history_ids(image_id, round_id))
            opts.append([self._a_ids[o][:MAX_OPTION_LEN] or [UNK_ID] for o in r.answer_options])
            gts.append(r.gt_index)
            ann = self.dense.get((image_id, round_id))
            if ann is not None:
                any_rel = True
                rels.append(ann.relevance)
            else:
                rels.append(np.full(len(r.answer_options), np.nan))
            imgs.append(image_id)
        n = {len(o) for o in opts}
        if len(n) > 1:
            raise ValueError(f"rounds in a batch have different option counts: {sorted(n)}")
        q_ids, q_mask = pad_ids(q)
        h_ids, h_mask = pad_ids(h)
        flat, flat_mask = pad_ids([o for row in opts for o in row])
        N = n.pop() if n else 0
        image = None
        if self.features is not None:
            image = self.features.stack(imgs)
        return RoundBatch(
            q_ids, q_mask, h_ids, h_mask, image,
            flat.reshape(len(keys), N, -1), flat_mask.reshape(len(keys), N, -1),
            np.asarray(gts, dtype=np.int64),
            np.asarray(rels, dtype=np.float64) if any_rel else None,
            list(keys),
        )

    def dialog_batches(self, dialog_order: list[int], dialogs_per_batch: int, annotated_only: bool = False):
        """Yield batches holding every (selected) round of consecutive dialogs."""
        for start in range(0, len(dialog_order), dialogs_per_batch):
            keys = []
            for di in dialog_order[start:start + dialogs_per_batch]:
                d = self.corpus.dialogs[di]
                for t in range(len(d.rounds)):
                    k = (d.image_id, t + 1)
                    if self.corpus.eval_rounds is not None and k not in self.corpus.eval_rounds:
                        continue
                    if annotated_only and k not in self.dense:
                        continue
                    keys.append(k)
            if keys:
                yield self.batch(keys)
