"""Dense-annotation audit and pronoun/ellipsis statistics on toy inputs.

    python3 demos/annotation_tools.py
"""
import numpy as np

from mcadial.data import DenseAnnotation, Dialog, DialogCorpus, DialogRound, tokenize
from mcadial.tools import correct_gt_relevance, count_pronouns, parse_tree, phenomena_report, relevance_stats

rng = np.random.default_rng(0)
questions = ["is it sunny ?", "what about the other ?", "what color is the car ?", "any people ?"]
parses = [
    "(SQ (VBZ is) (NP (PRP it)) (ADJP (JJ sunny)))",
    "(FRAG (WHNP (WP what)) (PP (IN about) (NP (DT the) (JJ other))))",
    "(SBARQ (WHNP (WP what) (NN color)) (SQ (VBZ is) (NP (DT the) (NN car))))",
    "(NP (DT any) (NNS people))",
]
dialogs, dense = [], []
for image_id in range(1, 21):
    rounds = []
    for t in range(10):
        gt = int(rng.integers(5))
        rounds.append(DialogRound(int(rng.integers(len(questions))), gt, list(range(5)), gt))
    dialogs.append(Dialog(image_id, "a street", rounds))
    t = int(rng.integers(10))
    rel = rng.choice([0.0, 0.5, 1.0], 5)
    dense.append(DenseAnnotation(image_id, t + 1, rel))
corpus = DialogCorpus(questions, [f"answer {i}" for i in range(5)], dialogs)

for q in questions:
    total, non_pleonastic = count_pronouns(tokenize(q))
    print(f"{q!r:28} pronouns={total} non-pleonastic={non_pleonastic}")

print("\nground-truth relevance before correction")
print(relevance_stats(dense, corpus).table())
fix = correct_gt_relevance(dense, corpus)
print(f"\ncorrected {fix.modified_count} rounds")
print(relevance_stats(fix.dense, corpus).table())

print("\nper-dialog phenomena")
print(phenomena_report(corpus, [parse_tree(p) for p in parses]).table())
