"""
Packed codes and Hamming ranking
================================

Codes in {-1, +1} pack into 64-bit words; distances are popcounts of XOR.
"""

import numpy as np

from czhash.retrieval import HammingIndex, HashCodes, hamming_distance, pack_codes, retrieve

rng = np.random.default_rng(0)
db = np.where(rng.random((8, 70)) < 0.5, -1, 1)

###############################################################################
# 70 bits need two words per code; bit j lives in word j // 64.

packed = pack_codes(db)
print("packed shape:", packed.shape, packed.dtype)

###############################################################################
# Flip three bits of item 5 to make a query; item 5 ranks first at distance 3.

query = db[5].copy()
query[[0, 40, 69]] *= -1
index = HammingIndex(HashCodes.from_codes(db))
ranking = retrieve(index, query)
print("ranking:", ranking)
print("distances:", [hamming_distance(query, db[j]) for j in ranking])

###############################################################################
# Equal distances are broken by ascending id, whatever the storage order.

dup = HammingIndex(HashCodes.from_codes(np.vstack([db[5], db[5]])), ids=[9, 4])
print("tie order:", retrieve(dup, db[5]))
