"""Maximum-matching segmentation against an n-gram lexicon.

Shows how the shortest-tiling dynamic program differs from naive
left-to-right greedy matching, and how boundaries are reported.

Run:  python3 demos/02_segmentation.py
"""

from ngramlm import enumerate_paths, extract_boundaries
from ngramlm.lexicon import NGramLexicon, ScoredNGram


def lexicon(entries):
    per_order = {}
    for words in sorted(entries, key=lambda w: (len(w), w)):
        per_order.setdefault(len(words), []).append(
            ScoredNGram(tuple(words), len(words), 0.0, 1))
    return NGramLexicon(per_order)


def show(words, lex):
    b = extract_boundaries(words, lex)
    rendered = " | ".join(" ".join(seg) for seg in b.segments())
    print(f"  {' '.join(words)}")
    print(f"    boundaries {b.boundaries}  ->  [{rendered}]")


lex = lexicon([("new", "york"), ("york", "city"), ("new", "york", "city"),
               ("machine", "learning"), ("ice", "cream")])

print("lexicon:", [" ".join(sg.words) for sg in lex.merged])
print("\nsegmentations (fewest segments, leftmost-longest on ties):")
show(("i", "love", "new", "york", "city", "ice", "cream"), lex)
show(("new", "york", "city", "machine", "learning"), lex)
show(("york", "city", "new", "york"), lex)

print("\nwhere greedy longest-first goes wrong:")
tricky = lexicon([("a", "b"), ("b", "c", "d")])
words = ("a", "b", "c", "d")
print(f"  words: {' '.join(words)}, lexicon: a b / b c d")
print("  greedy would grab [a b] first and end with 3 segments")
b = extract_boundaries(words, tricky)
print(f"  shortest path finds {b.num_segments} segments: "
      f"{[' '.join(s) for s in b.segments()]}")

print("\nall valid tilings of 'a b c d' (exhaustive enumeration):")
for path in enumerate_paths(words, tricky):
    print(f"  {path.boundaries}: {[' '.join(s) for s in path.segments()]}")
