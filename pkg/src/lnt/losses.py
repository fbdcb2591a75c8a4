"""Training objectives.

* ``cpc_loss`` — contrastive-predictive term: each context vector linearly
  predicts a future latent, contrasted (raw dot products, log-sum-exp
  softmax) against N-1 negatives drawn from the same mini-batch.
* ``ddcl_loss`` — the dynamic deterministic contrastive loss: every
  transformed view of z_t is pulled toward the prediction from c_{t-k}
  (numerator) and pushed away from the other views of the same z_t
  (denominator), with exponentiated cosine similarity h throughout.
* ``unified_loss`` — cpc_weight * CPC + lambda * DDCL.

Boundary terms are skipped (CPC needs t+k inside the sequence, DDCL needs
t-k >= first step) and each loss is the mean over its valid terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as mdl
from . import tensor as tn
from .model import ModelParams
from .tensor import Tensor


@dataclass(frozen=True)
class LossConfig:
    """K horizons, L transformations, balance lambda, contrast size N.

    ``cpc_weight`` scales the CPC part of the unified loss; zero gives the
    DDCL-only regime used to demonstrate manifold collapse.
    """

    K: int = 4
    L: int = 12
    lam: float = 1e-3
    N: int = 16
    cpc_weight: float = 1.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.L < 2:
            raise ValueError("L must be >= 2")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.N < 2:
            raise ValueError("N must be >= 2")


def _rows(seq: Tensor) -> tuple[Tensor, int, int]:
    """(B,T,D) or (T,D) -> (flattened (B*T,D), B, T)."""
    if seq.ndim == 2:
        return seq, 1, seq.shape[0]
    b, t, d = seq.shape
    return tn.reshape(seq, (b * t, d)), b, t


def sample_negatives(
    rng: np.random.Generator, n_anchors: int, n_positions: int,
    pos_idx: np.ndarray, n_negs: int,
) -> np.ndarray:
    """(n_anchors, n_negs) indices uniform over positions minus the positive.

    Drawn with replacement; the shift trick keeps the draw exactly uniform
    over the remaining n_positions-1 indices.
    """
    if n_positions < 2:
        raise ValueError("need at least two latent positions to draw negatives")
    draw = rng.integers(0, n_positions - 1, size=(n_anchors, n_negs))
    return draw + (draw >= pos_idx[:, None])


def cpc_loss(
    params: ModelParams, z: Tensor, c: Tensor, cfg: LossConfig,
    rng: np.random.Generator,
) -> Tensor:
    """Mean contrastive term over batch, valid t, and k = 1..K."""
    z_flat, batch, t_z = _rows(z)
    c_flat, _, _ = _rows(c)
    if t_z <= cfg.K:
        raise ValueError(f"sequence of {t_z} latent steps has no valid positives for K={cfg.K}")
    n_pos = batch * t_z

    acc = None
    total = 0
    for k in range(1, cfg.K + 1):
        tv = t_z - k
        c_idx = (np.arange(batch)[:, None] * t_z + np.arange(tv)[None, :]).ravel()
        pos_idx = c_idx + k
        pred = mdl.predict_rows(params, tn.take_rows(c_flat, c_idx), k)
        pos_logit = tn.sum_last(tn.mul(pred, tn.take_rows(z_flat, pos_idx)))
        neg_idx = sample_negatives(rng, len(pos_idx), n_pos, pos_idx, cfg.N - 1)
        negs = tn.take_rows(z_flat, neg_idx.ravel())
        pred_rep = tn.take_rows(pred, np.repeat(np.arange(len(pos_idx)), cfg.N - 1))
        neg_logit = tn.reshape(tn.sum_last(tn.mul(pred_rep, negs)), (len(pos_idx), cfg.N - 1))
        logits = tn.concat([pos_logit, neg_logit], axis=1)
        k_sum = tn.sum_all(tn.sub(tn.logsumexp_last(logits), pos_logit))
        acc = k_sum if acc is None else tn.add(acc, k_sum)
        total += len(pos_idx)
    return tn.scale(acc, 1.0 / total)


def _unit_cos(a: Tensor, b: Tensor) -> Tensor:
    """Rowwise cosine of two row matrices, (R,1); equals log h."""
    return tn.sum_last(tn.mul(tn.unit_rows(a), tn.unit_rows(b)))


def ddcl_term(params: ModelParams, views: list[Tensor], c_prev: Tensor, k: int, l: int) -> Tensor:
    """One DDCL term for view l of a single latent step, given c_{t-k}."""
    if len(views) < 2:
        raise ValueError("DDCL needs at least two views (L >= 2)")
    if not 0 <= l < len(views):
        raise ValueError(f"view index {l} out of range")
    pred = mdl.predict(params, c_prev, k, ddcl=True)
    anchor = tn.reshape(views[l], (1, -1))
    log_pos = tn.reshape(_unit_cos(anchor, tn.reshape(pred, (1, -1))), ())
    log_negs = [
        tn.reshape(_unit_cos(anchor, tn.reshape(v, (1, -1))), ())
        for m, v in enumerate(views)
        if m != l
    ]
    return tn.log_softmax_contrast(log_pos, log_negs)


def ddcl_loss(params: ModelParams, z: Tensor, c: Tensor, cfg: LossConfig) -> Tensor:
    """Mean DDCL term over batch, valid (t,k) pairs, and all L views."""
    z_flat, batch, t_z = _rows(z)
    c_flat, _, _ = _rows(c)
    if t_z < 2:
        raise ValueError("DDCL needs at least two latent steps (no valid (t,k) pair)")

    views = mdl.transform(params, z_flat)
    L = len(views)
    units = [tn.unit_rows(v) for v in views]
    # denominator sums: S[l] = sum_{m != l} h(view_l, view_m), rowwise
    pair = {}
    for l in range(L):
        for m in range(l + 1, L):
            pair[(l, m)] = tn.exp(tn.sum_last(tn.mul(units[l], units[m])))
    sums = []
    for l in range(L):
        terms = [pair[(min(l, m), max(l, m))] for m in range(L) if m != l]
        s = terms[0]
        for t in terms[1:]:
            s = tn.add(s, t)
        sums.append(s)

    acc = None
    count = 0
    for k in range(1, cfg.K + 1):
        tv = t_z - k
        if tv < 1:
            continue
        t_anchor = (np.arange(batch)[:, None] * t_z + np.arange(k, t_z)[None, :]).ravel()
        c_idx = t_anchor - k
        pred = mdl.predict_rows(params, tn.take_rows(c_flat, c_idx), k, ddcl=True)
        unit_pred = tn.unit_rows(pred)
        for l in range(L):
            cos_num = tn.sum_last(tn.mul(tn.take_rows(units[l], t_anchor), unit_pred))
            # h values live in [1/e, e]; the direct form is safe here
            den = tn.add(tn.exp(cos_num), tn.take_rows(sums[l], t_anchor))
            term_sum = tn.sum_all(tn.sub(tn.log(den), cos_num))
            acc = term_sum if acc is None else tn.add(acc, term_sum)
        count += len(t_anchor)
    return tn.scale(acc, 1.0 / (count * L))


def unified_loss(
    params: ModelParams, x: Tensor, cfg: LossConfig, rng: np.random.Generator,
) -> tuple[Tensor, Tensor, Tensor]:
    """(total, cpc_part, ddcl_part) on a raw batch; total = w*cpc + lam*ddcl."""
    z = mdl.encode(params, x)
    c = mdl.contextualize(params, z)
    cpc = cpc_loss(params, z, c, cfg, rng)
    ddcl = ddcl_loss(params, z, c, cfg)
    total = tn.add(tn.scale(cpc, cfg.cpc_weight), tn.scale(ddcl, cfg.lam))
    return total, cpc, ddcl
