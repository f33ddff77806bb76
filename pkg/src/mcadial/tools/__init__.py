"""Annotation auditing and dialog-phenomena analysis."""
from .audit import Correction, RelevanceHistogram, correct_gt_relevance, gt_relevance_array, relevance_stats
from .phenomena import (
    PRONOUNS, SENTENCE_LABELS, WEATHER_WORDS, ParseError, ParseTree, PhenomenaReport, QuestionRecord,
    count_pronouns, detect_ellipsis, load_parses, parse_tree, phenomena_report, root_label,
)
