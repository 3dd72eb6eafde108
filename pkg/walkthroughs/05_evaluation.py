"""Diversity counts, sentence BLEU and rank-binned frequency cosine."""

from dpgan.evaluation import bleu, diversity_report, frequency_cosine

generated = ["the food was good", "the food was good", "the staff was kind"]
reference = ["the food was good", "the bread was stale", "the staff was kind", "we paid the bill"]

print(diversity_report(generated).as_row())
print("BLEU", round(bleu("the food was good", ["the food was very good"]), 4))
profile = frequency_cosine(reference, generated, bins=((1, 3), (4, 8), (9, 20)))
for (lo, hi), cos in zip(profile.bins, profile.cosines):
    print(f"ranks {lo}-{hi}: cosine {cos:.3f}")
