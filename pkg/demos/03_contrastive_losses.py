"""
Contrastive objectives and their gradients
==========================================

All four objectives are InfoNCE variants over unit-norm embeddings with a
temperature of 0.1. Gradients are written out by hand, so this demo also
checks one of them against finite differences.

    python demos/03_contrastive_losses.py
"""

# %%
# Reference values
# ----------------

import math

import numpy as np

from hiervlp.losses import (
    LossConfig, clip_vl_loss, clip_vl_loss_and_grad, video_silent_loss, video_silent_loss_and_grad,
)

eye = np.eye(4)
print("orthonormal pairs, B=4:", clip_vl_loss(eye, eye), "vs", math.log1p(3 * math.exp(-10)))
same = np.tile([[0.6, 0.8]], (4, 1))
print("identical rows, B=4:   ", clip_vl_loss(same, same), "vs ln 4 =", math.log(4))

# %%
# Silent-video loss with retrieved neighbours
# -------------------------------------------
# Each narrated video is pulled towards the visual and text values of the
# silent videos retrieved for it, and pushed away from the values retrieved
# for the other videos in the batch. With only a video's own entries as
# candidates (``within_query_only``) the softmax has nothing to compete with
# and the loss is exactly zero.

rng = np.random.default_rng(0)
video = rng.normal(size=(3, 8))
video /= np.linalg.norm(video, axis=1, keepdims=True)
retrieved = video[:, None, :] + 0.1 * rng.normal(size=(3, 1, 8))
retrieved /= np.linalg.norm(retrieved, axis=-1, keepdims=True)
print("aligned neighbours:  ", round(video_silent_loss(video, retrieved, retrieved), 4))
print("shuffled neighbours: ", round(video_silent_loss(video, retrieved[[1, 2, 0]], retrieved[[1, 2, 0]]), 4))
print("own entries only:    ", video_silent_loss(video, retrieved, retrieved, LossConfig(within_query_only=True)))

# %%
# Gradient check
# --------------
# Central differences against the analytic gradient of the video input.

_, (g_video, _, _) = video_silent_loss_and_grad(video, retrieved, retrieved)
numeric = np.zeros_like(video)
h = 1e-5
for idx in np.ndindex(video.shape):
    up, down = video.copy(), video.copy()
    up[idx] += h
    down[idx] -= h
    numeric[idx] = (video_silent_loss(up, retrieved, retrieved) - video_silent_loss(down, retrieved, retrieved)) / (2 * h)
print("max |analytic - numeric| =", float(np.abs(g_video - numeric).max()))

loss, (ga, gb) = clip_vl_loss_and_grad(video, video[[1, 0, 2]])
print("clip loss", round(loss, 4), "grad shapes", ga.shape, gb.shape)
