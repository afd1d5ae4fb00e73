"""
The silent-video memory bank
============================

Silent videos are stored as key/value pairs: the key comes from the frozen
query encoder applied to the title, the values are the current text and
visual embeddings. Retrieval is an exact inner-product scan with ties broken
by entry id.

    python demos/04_memory_bank.py
"""

# %%
# Build and query
# ---------------

import tempfile
from pathlib import Path

import numpy as np

from hiervlp.data import SynthSpec, synthesize_dataset
from hiervlp.encoders import EncoderBundle, EncoderConfig
from hiervlp.memory_bank import MemoryBank, brute_force_retrieve, build_bank, load_bank, refresh_values, save_bank

ds = synthesize_dataset(SynthSpec(8, 4, 3, 4), seed=0)
enc = EncoderBundle(EncoderConfig(image_size=64, seed=0))
bank = build_bank(ds.silent_videos(), enc, ds)
print(len(bank), "entries:", bank.entry_ids)

title = ds.narrative_videos()[2].title
print("query:", title)
for entry_id, score in bank.retrieve(enc.encode_query(title), k=3).entries:
    print(f"  {entry_id}  {score:.4f}  {ds.videos[entry_id].title}")

# %%
# Exactness and ties
# ------------------
# The scan agrees with a naive oracle. Equal scores come back in id order.

tied = MemoryBank(dim=2, key_dim=2)
for eid in ["delta", "alpha", "charlie", "bravo"]:
    tied.insert(eid, [0.5, 0.5], [1.0, 0.0], [0.0, 1.0])
print("tied scores ->", tied.retrieve([1.0, 1.0], k=4).ids)

rng = np.random.default_rng(0)
keys = rng.normal(size=(1000, 32))
big = MemoryBank(dim=2, key_dim=32)
for i, k in enumerate(keys):
    big.insert(f"v{i:04d}", k, [1.0, 0.0], [0.0, 1.0])
q = rng.normal(size=32)
print("matches oracle:", big.retrieve(q, 5).ids == brute_force_retrieve(keys, big.entry_ids, q, 5).ids)

# %%
# Refreshing values leaves keys alone
# -----------------------------------
# During training the encoders move, so values are re-encoded at the start
# of each video-level stage. Keys never change.

keys_before = bank.keys.tobytes()
moved = enc.copy()
moved.params["visual.proj"] = moved.params["visual.proj"] + 0.05
refresh_values(bank, moved, ds)
print("keys unchanged:", bank.keys.tobytes() == keys_before, "| generation:", bank.generations.tolist())

with tempfile.TemporaryDirectory() as tmp:
    save_bank(bank, Path(tmp) / "bank.npz")
    print("saved/loaded equal:", load_bank(Path(tmp) / "bank.npz") == bank)
