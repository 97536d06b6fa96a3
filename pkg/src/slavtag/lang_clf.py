"""Language-classification head: concat pooling over the attention output
(first position, masked max, masked mean) followed by a linear layer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


@dataclass
class LangClfParams:
    weight: np.ndarray   # (3 * encoder_width, C)
    bias: np.ndarray     # (C,)
    languages: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError(f"inconsistent shapes {self.weight.shape} / {self.bias.shape}")
        if self.languages and len(self.languages) != self.weight.shape[1]:
            raise ValueError("language inventory size must match the class count")


def init_lang_params(encoder_width: int, num_classes: int, rng,
                     languages=None) -> LangClfParams:
    bound = 1.0 / np.sqrt(3 * encoder_width)
    return LangClfParams(
        weight=rng.uniform(-bound, bound, (3 * encoder_width, num_classes)),
        bias=rng.uniform(-bound, bound, num_classes),
        languages=list(languages or []),
    )


def concat_pool_expr(h: ad.Expr, mask: ad.Expr) -> ad.Expr:
    return ad.concat([ad.select_row(h, 0), ad.masked_max(h, mask), ad.masked_mean(h, mask)])


def classify_expr(h: ad.Expr, mask: ad.Expr, w: ad.Expr, b: ad.Expr) -> ad.Expr:
    return ad.add(ad.matmul(concat_pool_expr(h, mask), w), b)


def cross_entropy_expr(logits: ad.Expr, target_hot: ad.Expr) -> ad.Expr:
    return ad.sub(ad.logsumexp(logits), ad.sum_all(ad.mul(logits, target_hot)))


def _checked_mask(mask, t_len) -> np.ndarray:
    m = np.ones(t_len) if mask is None else np.asarray(mask, dtype=np.float64)
    if m.sum() < 1:
        raise ValueError("all positions masked")
    if m[0] != 1:
        raise ValueError("position 0 must be unmasked")
    return m


def concat_pool(h, mask) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    m = _checked_mask(mask, h.shape[0])
    root = concat_pool_expr(ad.inp("h", h.shape), ad.inp("mask", m.shape))
    return ad.evaluate(root, {"h": h, "mask": m})


def classify(h, mask, params: LangClfParams) -> np.ndarray:
    """Logits over the language inventory."""
    h = np.asarray(h, dtype=np.float64)
    m = _checked_mask(mask, h.shape[0])
    root = classify_expr(ad.inp("h", h.shape), ad.inp("mask", m.shape),
                         ad.param("w", params.weight.shape), ad.param("b", params.bias.shape))
    return ad.evaluate(root, {"h": h, "mask": m, "w": params.weight, "b": params.bias})


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()
