"""The three evaluation axes and the rule-based corruptions.

Coverage (ROUGE) measures overlap with a reference, personalization
measures similarity to the reader's clicked headlines, and the fact proxy
counts headline claims (capitalized spans, numerals, negations) supported
by the article body.
"""

from fpg.data import NewsArticle, negation_flip_candidate, number_perturb_candidates
from fpg.metrics import (
    TfidfEmbedder,
    fact_consistency_proxy,
    personalization_scores,
    rouge_l,
    rouge_n,
)

body = (
    "Justin Rose didn't just dominate the marquee pairing, he tied a record. "
    "With an opening 65, Rose matched the first round score at Pebble Beach."
)

print("== coverage ==")
reference = "Rose ties record with 65 at Pebble Beach"
for hyp in ("Rose ties record with 65 at Pebble Beach", "Rose shoots 65", "golf happened today"):
    print(
        f"  {hyp!r:45s} R1={rouge_n(hyp, reference, 1):.2f} "
        f"R2={rouge_n(hyp, reference, 2):.2f} RL={rouge_l(hyp, reference):.2f}"
    )

print("\n== personalization ==")
history = ["Tiger Woods finishes strong at Pebble Beach", "Woods shoots second round 72"]
embedder = TfidfEmbedder(history + [reference, body])
for hyp in ("Woods watches Rose tie record at Pebble Beach", "Rose ties record with opening 65"):
    p_max, p_avg = personalization_scores(hyp, history, embedder)
    print(f"  {hyp!r:50s} P(max)={p_max:.2f} P(avg)={p_avg:.2f}")

print("\n== factual consistency proxy ==")
for hyp in (
    "Rose shoots 65 at Pebble Beach",  # all claims supported
    "Rose shoots 66 at Pebble Beach",  # numeral unsupported
    "Woods shoots 65 at Pebble Beach",  # entity unsupported
    "a fine day of golf",  # no extractable claims
):
    print(f"  {hyp!r:40s} -> {fact_consistency_proxy(hyp, body):.2f}")

print("\n== rule-based corruptions used to build contrastive negatives ==")
headline = "Rose shoots 65 at Pebble Beach"
print("  numeral shifts:", number_perturb_candidates(headline)[:3], "...")
print("  negation flip of 'Rose is leading':", negation_flip_candidate("Rose is leading"))
article = NewsArticle("n1", headline, body, "golf")
print("  (entity swaps draw capitalized tokens from other same-category articles)")
