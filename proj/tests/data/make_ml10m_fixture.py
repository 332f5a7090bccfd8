"""Writes ml10m_fixture.dat: 1,000 MovieLens-style `user::item::rating::ts` lines.

Layout (before filtering at min_interactions = 10):
  users 1..50    x items 101..118   900 lines   -> kept
  users 201..210 x items 101..109    90 lines   -> users have 9 each, dropped
  users 1..9     x item 999           9 lines   -> item has 9, dropped
  user 10        x item 998           1 line    -> dropped
Expected after filtering: 50 users, 18 items, 900 interactions.
"""
import random

rows = []
for u in range(1, 51):
    for i in range(101, 119):
        rows.append((u, i))
for u in range(201, 211):
    for i in range(101, 110):
        rows.append((u, i))
for u in range(1, 10):
    rows.append((u, 999))
rows.append((10, 998))
assert len(rows) == 1000

rng = random.Random(20240101)
rng.shuffle(rows)
with open("ml10m_fixture.dat", "w") as f:
    for n, (u, i) in enumerate(rows):
        rating = rng.choice([0.5, 1, 1.5, 2, 2.5, 3, 3.5, 4, 4.5, 5])
        f.write(f"{u}::{i}::{rating}::{978300000 + n}\n")
