"""Extract a collocation lexicon from a synthetic corpus.

Builds a topic/phrase corpus whose bigrams really co-occur far above
chance, scores every n-gram with the t-statistic against the
independence baseline, and prints the winners next to some losers.

Run:  python3 demos/01_extract_lexicon.py
"""

from ngramlm import count_ngrams, extract_lexicon, t_statistic
from ngramlm.synth import CollocationSpec, collocation_corpus

spec = CollocationSpec(n_topics=8, phrases_per_topic=4)
stream, _, phrases = collocation_corpus(800, seed=0, spec=spec)
print(f"corpus: {len(stream)} documents, {stream.total_words()} words")
print("sample document:", " ".join(stream.documents[0][:12]), "...")

counts = count_ngrams(stream, 3)
print(f"\ndistinct bigrams: {len(counts.counts[2])}, "
      f"trigrams: {len(counts.counts[3])}")

lex = extract_lexicon(counts, {2: 32, 3: 8}, min_count=5)
print(f"\ntop bigrams by t-statistic (of {len(lex)} selected):")
for sg in lex.per_order[2][:8]:
    print(f"  {' '.join(sg.words):24s} score {sg.score:8.2f}  count {sg.count}")

print("\nfor contrast, bigrams that merely co-occur by chance:")
shown = 0
for w, c in sorted(counts.counts[2].items(), key=lambda kv: -kv[1]):
    if w in lex or c < 5:
        continue
    print(f"  {' '.join(w):24s} score {t_statistic(counts, w):8.2f}  count {c}")
    shown += 1
    if shown == 5:
        break

planted = {p for p in phrases}
found = {sg.words for sg in lex.per_order[2]}
print(f"\nplanted phrases recovered in the top 32: "
      f"{len(planted & found)}/{len(planted)}")
