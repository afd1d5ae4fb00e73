"""
Visual, text and query encoders
===============================

The encoders are deliberately small so that everything runs on a laptop CPU:
fixed pixel statistics or hashed token counts, followed by a linear projection
and L2 normalisation. Only the visual and text projections are trained; the
query projection that produces memory-bank keys stays frozen.

    python demos/02_encoders.py
"""

# %%
# One bundle, three encoders
# --------------------------

import numpy as np

from hiervlp.data import SynthSpec, sample_frames, synthesize_dataset
from hiervlp.encoders import EncoderBundle, EncoderConfig, aggregate_video, tokenize
from hiervlp.frames import load_frames

ds = synthesize_dataset(SynthSpec(8, 4, 3, 4), seed=0)
enc = EncoderBundle(EncoderConfig(image_size=64, seed=0))
print({name: p.shape for name, p in enc.params.items()}, "trainable:", sorted(enc.trainable()))

# %%
# Clip embeddings pool over frames
# --------------------------------
# Frame features are averaged before the projection, so frame order does not
# matter and a clip of identical frames encodes like a single frame.

clip = ds.narrative_clips()[0]
frames = load_frames(sample_frames(clip, 8), 64)
e = enc.encode_clip(frames)
shuffled = enc.encode_clip(frames[::-1])
print("norm", round(float(np.linalg.norm(e)), 6), "| reversed-order difference", float(np.abs(e - shuffled).max()))

# %%
# Text embeddings
# ---------------
# Narrations are lower-cased, tokenised and truncated to 77 tokens. Concept
# tokens get extra weight, so texts about the same concept sit close together.

print(tokenize("Step-0 of concept-2 lens: the surgeon continues.")[:6])
texts = ["concept-1 incision overview", "concept-1 capsulorhexis", "concept-3 incision overview"]
t = enc.encode_texts(texts)
print("cosine similarities\n", np.round(t @ t.T, 3))

# %%
# Video embeddings and query keys
# -------------------------------
# A video is the re-normalised mean of its clip embeddings. Titles also pass
# through the frozen query encoder; those vectors become memory-bank keys.

video = ds.silent_videos()[0]
v = enc.encode_video(video, ds)
clips = np.stack([enc.encode_record(c) for c in ds.clips_of(video)])
print("video == aggregate of clips:", np.allclose(v, aggregate_video(clips)))
q = enc.encode_query(video.title)
print("query key", q.shape, "writable:", enc.params["query.proj"].flags.writeable)
