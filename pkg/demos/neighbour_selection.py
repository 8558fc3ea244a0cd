"""Neighbour selection on a toy profile table.

Four variables with two attributes each. Variables 0 and 1 point the same
way, variable 3 is orthogonal to both, variable 2 sits halfway. With a
high lambda the selector prefers similar neighbours; at lambda = 0 the
second pick goes to whatever disagrees most with the first.
"""

import numpy as np

from dimignn import DnsmConfig, dnsm_select
from dimignn.tip import cosine_matrix

profiles = np.array(
    [
        [1.0, 0.0],
        [1.0, 0.0],
        [0.7071, 0.7071],
        [0.0, 1.0],
    ]
)

print("pairwise cosine")
print(np.round(cosine_matrix(profiles), 3))

for lam in (1.0, 0.7, 0.3, 0.0):
    nbrs = dnsm_select(profiles, DnsmConfig(lam=lam, k=2))
    # 1-based ids read more naturally next to the table above
    print(f"lambda={lam:.1f}: variable 1 -> {(nbrs[0] + 1).tolist()}")

# rescaling a row changes nothing, only directions matter
scaled = profiles * np.array([[3.0], [0.1], [7.0], [2.0]])
assert np.array_equal(dnsm_select(scaled, DnsmConfig(k=2)), dnsm_select(profiles, DnsmConfig(k=2)))
print("selection unchanged under per-row rescaling")
