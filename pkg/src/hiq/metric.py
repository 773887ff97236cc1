"""Masked L1 distances and metric-learning losses with hand-derived gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOSS_KINDS = ("triplet", "npairs")


@dataclass(frozen=True)
class LossOutput:
    """Scalar loss and its gradient with respect to the input activations.

    ``kink_gap`` is the smallest distance of any selection or hinge decision
    from its switching point; finite-difference checks need it well above the
    step size.
    """

    value: float
    grad: np.ndarray
    warnings: tuple = ()
    kink_gap: float = field(default=np.inf)


def masked_distance(f_i, f_j, h_i, h_j) -> float:
    """L1 distance over the dimensions active in either code."""
    f_i, f_j = np.asarray(f_i, dtype=np.float64), np.asarray(f_j, dtype=np.float64)
    h_i, h_j = np.asarray(h_i), np.asarray(h_j)
    if not f_i.shape == f_j.shape == h_i.shape == h_j.shape:
        raise ValueError(f"shape mismatch {f_i.shape}, {f_j.shape}, {h_i.shape}, {h_j.shape}")
    mask = (h_i != 0) | (h_j != 0)
    return float(np.abs(f_i - f_j)[mask].sum())


def pairwise_masked(f: np.ndarray, codes: np.ndarray):
    """All-pairs masked distances plus the per-pair masks and signs.

    Returns ``(dist, mask, sign)`` with ``mask[i, j, q]`` the OR of the two
    codes and ``sign[i, j, q] = sign(f[i, q] - f[j, q])`` (``sign(0) = 0``).
    """
    f = np.asarray(f, dtype=np.float64)
    h = np.asarray(codes) != 0
    if f.shape != h.shape:
        raise ValueError(f"activations {f.shape} and codes {h.shape} differ in shape")
    diff = f[:, None, :] - f[None, :, :]
    mask = h[:, None, :] | h[None, :, :]
    sign = np.sign(diff) * mask
    dist = (np.abs(diff) * mask).sum(axis=2)
    return dist, mask, sign


def _abs_kink(f: np.ndarray, mask: np.ndarray) -> float:
    diff = np.abs(f[:, None, :] - f[None, :, :])
    off = ~np.eye(f.shape[0], dtype=bool)[:, :, None] & mask
    return float(diff[off].min()) if off.any() else np.inf


def triplet_semihard_loss(f, codes, labels, margin: float = 1.0) -> LossOutput:
    """Mean hinge ``max(0, d_ap - d_an + margin)`` over anchor-positive pairs.

    For each ordered anchor-positive pair the negative is the one with the
    smallest distance strictly greater than ``d_ap``; when none exists the
    farthest negative is used. Ties go to the lowest item index.
    """
    f = np.asarray(f, dtype=np.float64)
    labels = np.asarray(labels)
    n = f.shape[0]
    dist, mask, sign = pairwise_masked(f, codes)
    same = labels[:, None] == labels[None, :]
    grad = np.zeros_like(f)
    if n == 0 or same.all():
        return LossOutput(0.0, grad, ("no negatives in batch",))
    anchors, positives = np.nonzero(same & ~np.eye(n, dtype=bool))
    if anchors.size == 0:
        return LossOutput(0.0, grad, ("no anchor-positive pairs in batch",))

    total = 0.0
    gap = np.inf
    for a, p in zip(anchors, positives):
        negs = np.flatnonzero(~same[a])
        d_an = dist[a, negs]
        d_ap = dist[a, p]
        harder = d_an > d_ap
        if harder.any():
            cand = np.where(harder, d_an, np.inf)
            k = int(np.argmin(cand))
        else:
            k = int(np.argmax(d_an))
        n_idx = int(negs[k])
        gap = min(gap, float(np.abs(d_an - d_ap).min()))
        if d_an.size > 1:
            others = np.delete(d_an, k)
            gap = min(gap, float(np.abs(others - d_an[k]).min()))
        hinge = d_ap - dist[a, n_idx] + margin
        gap = min(gap, abs(hinge))
        if hinge <= 0:
            continue
        total += hinge
        # d(d_ij)/d(f_i) = mask * sign(f_i - f_j); d/d(f_j) is its negative
        g_ap = sign[a, p]
        g_an = sign[a, n_idx]
        grad[a] += g_ap - g_an
        grad[p] -= g_ap
        grad[n_idx] += g_an

    count = anchors.size
    gap = min(gap, _abs_kink(f, mask))
    return LossOutput(total / count, grad / count, (), gap)


def npair_indices(labels, rotation: int = 0):
    """One (anchor, positive) pair per label with at least two items.

    With more than two items a label rotates its pair round-robin: anchor is
    item ``rotation % c`` and positive ``(rotation + 1) % c`` of its ``c`` items,
    in batch order. Labels are visited in first-appearance order.
    """
    labels = np.asarray(labels)
    _, first = np.unique(labels, return_index=True)
    anchors, positives, lonely = [], [], []
    for lab in labels[np.sort(first)]:
        items = np.flatnonzero(labels == lab)
        c = items.size
        if c < 2:
            lonely.append(lab)
            continue
        anchors.append(items[rotation % c])
        positives.append(items[(rotation + 1) % c])
    return np.array(anchors, dtype=np.int64), np.array(positives, dtype=np.int64), lonely


def npairs_loss(f, codes, labels, l2_reg: float = 0.0, rotation: int = 0) -> LossOutput:
    """Softmax cross-entropy over negated masked distances.

    Each anchor scores every selected positive with ``-d(anchor, positive)``
    and the target is its own positive. An activation penalty
    ``l2_reg * 0.25 * (mean |a|^2 + mean |p|^2)`` is added.
    """
    f = np.asarray(f, dtype=np.float64)
    codes = np.asarray(codes)
    grad = np.zeros_like(f)
    anc, pos, lonely = npair_indices(labels, rotation)
    warnings = tuple(f"label {lab} has a single example" for lab in lonely)
    if anc.size == 0:
        return LossOutput(0.0, grad, warnings + ("no pairs in batch",))

    diff = f[anc][:, None, :] - f[pos][None, :, :]  # (P, P, d)
    mask = (codes[anc][:, None, :] != 0) | (codes[pos][None, :, :] != 0)
    sign = np.sign(diff) * mask
    logits = -(np.abs(diff) * mask).sum(axis=2)
    shift = logits.max(axis=1, keepdims=True)
    expl = np.exp(logits - shift)
    probs = expl / expl.sum(axis=1, keepdims=True)
    n_p = anc.size
    logz = np.log(expl.sum(axis=1)) + shift[:, 0]
    ce = float(np.mean(logz - np.diag(logits)))

    # dCE/dlogits = (probs - onehot) / P ; dlogit[a, b]/df_anc[a] = -sign[a, b]
    dlog = (probs - np.eye(n_p)) / n_p
    g_anc = -(dlog[:, :, None] * sign).sum(axis=1)
    g_pos = (dlog[:, :, None] * sign).sum(axis=0)
    np.add.at(grad, anc, g_anc)
    np.add.at(grad, pos, g_pos)

    reg = 0.0
    if l2_reg:
        reg = l2_reg * 0.25 * (np.mean((f[anc] ** 2).sum(axis=1)) + np.mean((f[pos] ** 2).sum(axis=1)))
        np.add.at(grad, anc, l2_reg * 0.5 * f[anc] / n_p)
        np.add.at(grad, pos, l2_reg * 0.5 * f[pos] / n_p)

    diffs = np.abs(diff)[mask]
    gap = float(diffs.min()) if diffs.size else np.inf
    return LossOutput(ce + float(reg), grad, warnings, gap)


def total_embedding_loss(batch, assignments, loss_kind: str = "npairs", margin: float = 1.0,
                         l2_reg: float = 0.0, rotation: int = 0) -> LossOutput:
    """Sum of the per-level losses; the gradient is laid out like ``batch.features``."""
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss {loss_kind!r}; expected one of {LOSS_KINDS}")
    if len(assignments) != batch.k:
        raise ValueError(f"expected {batch.k} level assignments, got {len(assignments)}")
    value = 0.0
    grads, warnings, gap = [], [], np.inf
    for a in assignments:
        sl = batch.level_slice(a.level)
        if loss_kind == "triplet":
            out = triplet_semihard_loss(sl, a.item_codes, a.remapped_labels, margin)
        else:
            out = npairs_loss(sl, a.item_codes, a.remapped_labels, l2_reg, rotation)
        value += out.value
        grads.append(out.grad)
        warnings.extend(f"level {a.level}: {w}" for w in out.warnings)
        gap = min(gap, out.kink_gap)
    return LossOutput(value, np.concatenate(grads, axis=1), tuple(warnings), gap)
