"""Synthetic corpora shaped like the real movie-review distributions.

Used by the acceptance runs and the experiment scripts when the original
Cornell files are not on disk. Sentences mix class-marker lexicons into
neutral filler at a fixed rate, so the tasks are clearly learnable without
being bit-trivial; a few Latin-1 words exercise the transcoding path.
"""

import os

from .seeds import SYNTH, derive_rng

NEUTRAL = (
    "the a an and of to in that it this with for on as but film movie story "
    "plot scene scenes director actor screen time way world people life "
    "year city house night music sound end part work place man woman child "
    "café cliché señor naïve").split()

POSITIVE = ("wonderful brilliant delightful charming superb moving engaging "
            "fresh inventive gripping rewarding sharp warm luminous tender "
            "masterful vivid joyous stunning graceful").split()

NEGATIVE = ("dull tedious clumsy lifeless bland shallow messy tired flat "
            "hollow plodding stale grating leaden murky sour aimless "
            "dreary wooden").split()

SUBJECTIVE = ("i feel think believe gorgeous awful love hate thrilling "
              "boring amazing terrible enjoyable disappointing favorite "
              "worst best breathtaking").split()

OBJECTIVE = ("police report according officials company announced study "
             "professor measured system built located founded statistics "
             "records documents census engine aircraft").split()


def _sentence(rng, lexicon, neutral, lo, hi, signal=0.35):
    n = int(rng.integers(lo, hi + 1))
    words = []
    for _ in range(n):
        pool = lexicon if rng.random() < signal else neutral
        words.append(pool[int(rng.integers(len(pool)))])
    text = " ".join(words)
    if rng.random() < 0.6:
        text += " ."
    return text


def _write_lines(path, lines):
    with open(path, "w", encoding="latin-1") as fh:
        for line in lines:
            fh.write(line + "\n")


def write_corpus(out_dir, seed, pol_per_class=5331, subj_per_class=5000):
    """Write the four corpus files; returns {pol_pos, pol_neg, subj, obj}."""
    os.makedirs(out_dir, exist_ok=True)
    specs = {
        "pol_pos": ("rt-polarity.pos", POSITIVE, pol_per_class, 8, 22, 0),
        "pol_neg": ("rt-polarity.neg", NEGATIVE, pol_per_class, 8, 22, 1),
        "subj": ("quote.tok.gt9.5000", SUBJECTIVE, subj_per_class, 10, 24, 2),
        "obj": ("plot.tok.gt9.5000", OBJECTIVE, subj_per_class, 10, 24, 3),
    }
    paths = {}
    for key, (fname, lexicon, count, lo, hi, tag) in specs.items():
        rng = derive_rng(seed, SYNTH, tag)
        lines = [_sentence(rng, lexicon, NEUTRAL, lo, hi)
                 for _ in range(count)]
        path = os.path.join(out_dir, fname)
        _write_lines(path, lines)
        paths[key] = path
    return paths


def corpus_vocabulary():
    return sorted(set(NEUTRAL + POSITIVE + NEGATIVE + SUBJECTIVE + OBJECTIVE))


def write_vector_file(path, dim, seed, words=None):
    """GloVe-format text vectors (seeded) for the synthetic vocabulary."""
    words = list(words) if words is not None else corpus_vocabulary()
    rng = derive_rng(seed, SYNTH, 9)
    with open(path, "w", encoding="utf-8") as fh:
        for word in words:
            vec = rng.uniform(-0.5, 0.5, size=dim)
            fh.write(word + " " + " ".join(f"{v:.5f}" for v in vec) + "\n")
    return path


def write_marker_corpus(out_dir, seed, n_per_class=1000, filler_vocab=46,
                        lo=5, hi=9, tag=""):
    """Two files where the label is the presence of one marker token.

    Every class-1 sentence contains marker '{tag}sig' exactly once; class-0
    sentences never do. Vocabulary is the fillers plus the marker (~vocab 50
    with two tasks' markers and specials).
    """
    os.makedirs(out_dir, exist_ok=True)
    fillers = [f"w{i:02d}" for i in range(filler_vocab)]
    marker = f"{tag}sig"
    rng = derive_rng(seed, SYNTH, 20 + len(tag))
    pos_lines, neg_lines = [], []
    for _ in range(n_per_class):
        n = int(rng.integers(lo, hi + 1))
        words = [fillers[int(rng.integers(len(fillers)))] for _ in range(n)]
        neg_lines.append(" ".join(words))
        words = list(words)
        words[int(rng.integers(len(words)))] = marker
        pos_lines.append(" ".join(words))
    pos_path = os.path.join(out_dir, f"{tag}marked.txt")
    neg_path = os.path.join(out_dir, f"{tag}plain.txt")
    _write_lines(pos_path, pos_lines)
    _write_lines(neg_path, neg_lines)
    return pos_path, neg_path
