"""Slow, loop-based reference implementations used as oracles.

Nothing here shares code with the production path beyond plain data types;
the verification harness and the tests compare the two.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def conv1d(x, weight, bias, dilation):
    c_out, c_in, k = weight.shape
    t_len = x.shape[1]
    pad = (k - 1) * dilation // 2
    out = np.zeros((c_out, t_len))
    for c in range(c_out):
        for t in range(t_len):
            acc = float(bias[c])
            for i in range(c_in):
                for j in range(k):
                    src = t + j * dilation - pad
                    if 0 <= src < t_len:
                        acc += float(weight[c, i, j]) * float(x[i, src])
            out[c, t] = acc
    return out


def forward(adj, gcn_weights, conv_weights, conv_biases, dilations, feats):
    """Per-frame graph convolution then the conv stack, written with explicit loops."""
    t_len, n_nodes, _ = feats.shape
    rows = []
    for t in range(t_len):
        x = np.asarray(feats[t], dtype=np.float64)
        for w in gcn_weights:
            d_out = w.shape[1]
            y = np.zeros((n_nodes, d_out))
            for n in range(n_nodes):
                for d in range(d_out):
                    acc = 0.0
                    for m in range(n_nodes):
                        for c in range(x.shape[1]):
                            acc += float(adj[n, m]) * float(x[m, c]) * float(w[c, d])
                    y[n, d] = max(acc, 0.0)
            x = y
        rows.append(x.reshape(-1))
    h = np.array(rows).T
    for i, (w, b, dil) in enumerate(zip(conv_weights, conv_biases, dilations)):
        h = _conv_vectorised_loop(h, w, b, dil)
        if i < len(conv_weights) - 1:
            h = np.maximum(h, 0.0)
    return h


def _conv_vectorised_loop(x, weight, bias, dilation):
    # loop over output positions and taps only; the channel sum is a dot product
    c_out, c_in, k = weight.shape
    t_len = x.shape[1]
    pad = (k - 1) * dilation // 2
    out = np.tile(np.asarray(bias, dtype=np.float64)[:, None], (1, t_len))
    for t in range(t_len):
        for j in range(k):
            src = t + j * dilation - pad
            if 0 <= src < t_len:
                out[:, t] += np.asarray(weight[:, :, j], dtype=np.float64) @ np.asarray(x[:, src], dtype=np.float64)
    return out


def cooccurrence(annotations, rois_of):
    """Triple loop over (instance, ordered AU pair, ROI pair)."""
    raw = [[0] * 12 for _ in range(12)]
    for inst in annotations:
        aus = [au for au in inst.aus if rois_of(au) is not None]
        for u, v in itertools.product(aus, aus):
            for a in rois_of(u):
                for b in rois_of(v):
                    raw[a][b] += 1
    return np.array(raw)


def proposals(p_s, p_ap, p_e, thr_ap, k_dis):
    """Candidate (start, end, score) triples, one per qualifying apex frame."""
    t_len = len(p_ap)
    out = []
    for i in range(t_len):
        if not p_ap[i] >= thr_ap:
            continue
        start_range = [t for t in range(i - 1, i - k_dis - 1, -1) if 0 <= t < t_len]
        end_range = [t for t in range(i + 1, i + k_dis + 1) if 0 <= t < t_len]
        if not start_range or not end_range:
            continue
        best_s = start_range[0]
        for t in start_range:
            if p_s[t] > p_s[best_s]:
                best_s = t
        best_e = end_range[0]
        for t in end_range:
            if p_e[t] > p_e[best_e]:
                best_e = t
        out.append((best_s, best_e, float(p_s[best_s]) * float(p_ap[i]) * float(p_e[best_e])))
    return out


def iou(a, b):
    fa = set(range(a[0], a[1] + 1))
    fb = set(range(b[0], b[1] + 1))
    return len(fa & fb) / len(fa | fb)


def nms(items, iou_thr):
    """``items`` are (start, end, score); returns the kept triples in keep order."""
    remaining = list(items)
    kept = []
    while remaining:
        best = remaining[0]
        for it in remaining[1:]:
            key_it = (-it[2], it[0], it[1] - it[0])
            key_best = (-best[2], best[0], best[1] - best[0])
            if key_it < key_best:
                best = it
        kept.append(best)
        remaining.remove(best)
        remaining = [it for it in remaining if iou(it[:2], best[:2]) < iou_thr]
    return kept


def match(items, gts, k_iou):
    """Greedy one-to-one matching; returns (tp, fp, fn)."""
    order = sorted(range(len(items)), key=lambda i: (-items[i][2], items[i][0]))
    free = set(range(len(gts)))
    tp = 0
    for i in order:
        scored = [(iou(items[i][:2], gts[j]), -j) for j in free]
        if not scored:
            continue
        best_iou, neg_j = max(scored)
        if best_iou >= k_iou:
            free.discard(-neg_j)
            tp += 1
    return tp, len(items) - tp, len(gts) - tp


def spectral_radius(m, iters=500):
    """Power iteration on M·Mᵀ (symmetric PSD), returning sqrt of its top eigenvalue."""
    m = np.asarray(m, dtype=np.float64)
    x = np.ones(m.shape[0]) / math.sqrt(m.shape[0])
    x = x + 1e-3 * np.arange(m.shape[0])
    lam = 0.0
    for _ in range(iters):
        y = m @ (m.T @ x)
        lam = float(np.linalg.norm(y))
        if lam == 0:
            return 0.0
        x = y / lam
    return math.sqrt(lam)
