"""Per-timestep anomaly scores from a trained model.

``score_ddcl`` evaluates the DDCL terms of every latent step (no negative
sampling involved, so scoring is fully deterministic) and ``score_cpc_approx``
is the negated positive-logit baseline.  Latent-rate scores are broadcast
back to the raw rate: each latent step covers its r raw frames and trailing
remainder frames inherit the last score.

Long series are walked in chunks aligned to the downsample factor with the
recurrent state carried across boundaries, plus enough raw lookahead that
every chunk's latent steps see their full receptive field, so chunking
introduces no boundary artifacts.  Repeated calls on identical inputs are
bitwise-identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from . import tensor as tn
from .model import ModelParams
from .tensor import Tensor


@dataclass
class ScoreSeries:
    """Raw-rate scores aligned with the input, plus the latent-rate source."""

    scores: np.ndarray
    latent_scores: np.ndarray
    r: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.scores)):
            raise FloatingPointError("non-finite anomaly scores")


def broadcast_scores(latent_scores: np.ndarray, r: int, raw_len: int) -> np.ndarray:
    """Repeat each latent score r times; remainder frames get the last one."""
    latent_scores = np.asarray(latent_scores)
    if latent_scores.size == 0:
        raise ValueError("cannot broadcast an empty latent score sequence")
    if raw_len < r:
        raise ValueError(f"raw length {raw_len} shorter than one latent stride {r}")
    if raw_len < latent_scores.size * r:
        raise ValueError(
            f"raw length {raw_len} cannot hold {latent_scores.size} latent steps of {r} frames"
        )
    out = np.empty(raw_len, dtype=latent_scores.dtype)
    covered = latent_scores.size * r
    out[:covered] = np.repeat(latent_scores, r)
    out[covered:] = latent_scores[-1]
    return out


def _check_series(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"expected a (channels, time) series, got shape {x.shape}")
    cfg = params.config
    if x.shape[0] != cfg.in_channels:
        raise ValueError(f"expected {cfg.in_channels} channels, got {x.shape[0]}")
    if cfg.latent_len(x.shape[1]) < 2:
        raise ValueError(
            "series yields fewer than two latent steps; nothing to score "
            f"(length {x.shape[1]}, downsample {cfg.downsample})"
        )
    return x


def _iter_chunks(params: ModelParams, x: np.ndarray, chunk_len: int | None):
    """Yield (z_chunk, ctx_all, tail_n, step) per chunk.

    ``z_chunk`` is the (m, dim_z) latent Tensor; ``ctx_all`` the numpy
    context rows including ``tail_n`` carried rows from previous chunks, so
    global context index g lives at row tail_n + (g - step).
    """
    cfg = params.config
    r, rf, K = cfg.downsample, cfg.receptive_field, cfg.K
    lookahead = rf - r
    m_total = cfg.latent_len(x.shape[1])
    chunk = chunk_len if chunk_len is not None else cfg.sub_seq
    chunk_m = max(chunk // r, 1)

    state = None
    tail = None
    step = 0
    while step < m_total:
        this_m = min(chunk_m, m_total - step)
        pos = step * r
        piece = x[:, pos : pos + this_m * r + lookahead]
        z = mdl.encode(params, Tensor(piece))
        c, state = mdl.contextualize_with_state(
            params, z, None if state is None else state.detach()
        )
        ctx_all = c.data if tail is None else np.concatenate([tail, c.data], axis=0)
        yield z, ctx_all, 0 if tail is None else tail.shape[0], step
        tail = ctx_all[-min(K, ctx_all.shape[0]) :]
        step += this_m


def _finish(latent: np.ndarray, counts: np.ndarray, raw_len: int, r: int,
            normalized: bool, meta: dict) -> ScoreSeries:
    if normalized:
        scored = counts > 0
        latent = latent.copy()
        latent[scored] /= counts[scored]
    # leading steps with no valid horizon inherit the first computed score
    first = int(np.argmax(counts > 0))
    latent[:first] = latent[first]
    return ScoreSeries(
        scores=broadcast_scores(latent, r, raw_len),
        latent_scores=latent,
        r=r,
        meta=meta,
    )


def score_ddcl(
    params: ModelParams, x: np.ndarray,
    normalized: bool = True, chunk_len: int | None = None,
) -> ScoreSeries:
    """DDCL anomaly score per raw timestep (higher = more anomalous).

    latent score(t) = sum over valid horizons k and all L transformations
    of the DDCL term, divided by the valid-term count unless
    ``normalized=False`` requests the raw sum.
    """
    x = _check_series(params, x)
    cfg = params.config
    L = cfg.L
    total = np.zeros(cfg.latent_len(x.shape[1]), dtype=np.float64)
    counts = np.zeros_like(total)

    for z, ctx_all, tail_n, step in _iter_chunks(params, x, chunk_len):
        this_m = z.shape[0]
        views = mdl.transform(params, z)
        units = [tn.unit_rows(v) for v in views]
        pair = {}
        for l in range(L):
            for m in range(l + 1, L):
                pair[(l, m)] = tn.exp(tn.sum_last(tn.mul(units[l], units[m])))
        sums = []
        for l in range(L):
            parts = [pair[(min(l, m), max(l, m))] for m in range(L) if m != l]
            s = parts[0]
            for p in parts[1:]:
                s = tn.add(s, p)
            sums.append(s)

        for k in range(1, cfg.K + 1):
            t0 = max(0, k - step)  # first chunk-local step with c_{t-k} available
            if t0 >= this_m:
                continue
            c_prev = Tensor(ctx_all[tail_n + t0 - k : tail_n + this_m - k])
            unit_pred = tn.unit_rows(mdl.predict_rows(params, c_prev, k, ddcl=True))
            rows = slice(step + t0, step + this_m)
            for l in range(L):
                anchor = tn.take_rows(units[l], np.arange(t0, this_m))
                cos_num = tn.sum_last(tn.mul(anchor, unit_pred))
                s_sel = tn.take_rows(sums[l], np.arange(t0, this_m))
                term = tn.sub(tn.log(tn.add(tn.exp(cos_num), s_sel)), cos_num)
                total[rows] += term.data[:, 0]
                counts[rows] += 1

    meta = {"method": "ddcl", "normalized": normalized, "K": cfg.K, "L": L}
    return _finish(total, counts, x.shape[1], cfg.downsample, normalized, meta)


def score_cpc_approx(
    params: ModelParams, x: np.ndarray, chunk_len: int | None = None,
) -> ScoreSeries:
    """Negated positive logit -z_t . W_k c_{t-k}, averaged over valid k.

    A sampling-free stand-in for the contrastive objective: poorly
    predicted steps score high.
    """
    x = _check_series(params, x)
    cfg = params.config
    total = np.zeros(cfg.latent_len(x.shape[1]), dtype=np.float64)
    counts = np.zeros_like(total)

    for z, ctx_all, tail_n, step in _iter_chunks(params, x, chunk_len):
        this_m = z.shape[0]
        for k in range(1, cfg.K + 1):
            t0 = max(0, k - step)
            if t0 >= this_m:
                continue
            c_prev = Tensor(ctx_all[tail_n + t0 - k : tail_n + this_m - k])
            pred = mdl.predict_rows(params, c_prev, k)
            anchor = tn.take_rows(z, np.arange(t0, this_m))
            logit = tn.sum_last(tn.mul(anchor, pred))
            rows = slice(step + t0, step + this_m)
            total[rows] -= logit.data[:, 0]
            counts[rows] += 1

    meta = {"method": "cpc-approx", "normalized": True, "K": cfg.K}
    return _finish(total, counts, x.shape[1], cfg.downsample, True, meta)


# ---------------------------------------------------------------------------
# score CSV round-trip


def save_scores_csv(path, series: ScoreSeries, labels: np.ndarray | None = None) -> None:
    """Write `index,score[,label]`, one row per raw timestep."""
    if labels is not None and len(labels) != len(series.scores):
        raise ValueError("labels length does not match score length")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if labels is None:
            writer.writerow(["index", "score"])
            for i, s in enumerate(series.scores):
                writer.writerow([i, f"{s:.9g}"])
        else:
            writer.writerow(["index", "score", "label"])
            for i, (s, y) in enumerate(zip(series.scores, labels)):
                writer.writerow([i, f"{s:.9g}", int(y)])


def load_scores_csv(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a score CSV; returns (scores, labels or None)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["index", "score"]:
            raise ValueError(f"not a score CSV (bad header) in {path}")
        has_labels = len(header) > 2 and header[2] == "label"
        scores, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                scores.append(float(row[1]))
                if has_labels:
                    labels.append(int(row[2]))
            except (IndexError, ValueError):
                raise ValueError(f"bad score row {lineno} in {path}") from None
    return np.asarray(scores), np.asarray(labels) if has_labels else None
