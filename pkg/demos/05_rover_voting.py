"""Combining disagreeing transcriptions by weighted voting.

Three imperfect readings of the same line are aligned into a confusion
network; each slot emits the weightiest candidate. A strong engine wins
ties, but two weaker engines that agree can override it.
"""

from ssmocr.rover import rover_combine

truth = "Subscription cost three francs."
readings = [
    "Subscriptlon cost three francs.",   # strong engine, one bad glyph
    "Subscription cost tbree francs.",   # weaker engine, different error
    "Subscription cost three francs,",   # weaker engine, bad punctuation
]
weights = [5.0, 3.0, 3.0]

print("readings:")
for r, w in zip(readings, weights):
    print(f"  (weight {w}) {r}")

combined = rover_combine(readings, weights)
print(f"\ncombined: {combined}")
print(f"truth:    {truth}")
print(f"exact match: {combined == truth}")

print("\noverride behaviour:")
print("  unanimous:", rover_combine(["abc", "abc"], [1, 9]))
print("  two light engines beat one heavy:",
      rover_combine(["abX", "abY", "abY"], [5, 3, 3]))
print("  heavy engine wins a pure tie:",
      rover_combine(["abX", "abY"], [5, 3]))
