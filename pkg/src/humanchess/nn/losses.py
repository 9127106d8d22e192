from __future__ import annotations

from typing import Optional, Tuple

import numpy as np


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray, mask: Optional[np.ndarray] = None,
                          ) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy of integer ``targets`` under row-wise softmax.

    With ``mask`` (bool, same shape as logits) the softmax runs over the
    masked-in entries only; masked-out entries get zero gradient.
    Returns (loss, d loss / d logits).
    """
    n = logits.shape[0]
    z = logits
    if mask is not None:
        z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    log_p = z - np.log(s)
    rows = np.arange(n)
    loss = float(-log_p[rows, targets].mean())
    grad = e / s
    grad[rows, targets] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype, copy=False)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    diff = pred - target.reshape(pred.shape).astype(pred.dtype)
    loss = float((diff * diff).mean())
    return loss, (2.0 / diff.size) * diff
