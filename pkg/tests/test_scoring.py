"""Scoring contracts: broadcast rules, determinism, causality, chunking,
constant-model degeneracy, and naive oracles for both score methods."""

import numpy as np
import pytest

from lnt import losses as ls
from lnt import model as mdl
from lnt import scoring as sc
from lnt.tensor import Tensor


def tiny_params(seed=0, **over):
    cfg = mdl.ModelConfig(
        in_channels=2, dim_z=8, dim_c=4, K=2, L=3,
        filters=(3, 2), strides=(3, 2), bank_layers=2, bank_width=5,
        sub_seq=48, **over,
    )
    return mdl.init_params(cfg, seed=seed)


def lookahead_params(seed=0):
    """Receptive field (6) wider than the stride product (4)."""
    cfg = mdl.ModelConfig(
        in_channels=1, dim_z=6, dim_c=3, K=2, L=3,
        filters=(4, 2), strides=(2, 2), bank_layers=2, bank_width=4,
        sub_seq=16,
    )
    return mdl.init_params(cfg, seed=seed)


# ---------------------------------------------------------------------------
# broadcast


def test_broadcast_exact():
    np.testing.assert_array_equal(
        sc.broadcast_scores(np.array([1.0, 2.0]), 3, 6), [1, 1, 1, 2, 2, 2]
    )


def test_broadcast_remainder_inherits_last():
    np.testing.assert_array_equal(
        sc.broadcast_scores(np.array([1.0, 2.0]), 3, 7), [1, 1, 1, 2, 2, 2, 2]
    )


def test_broadcast_errors():
    with pytest.raises(ValueError):
        sc.broadcast_scores(np.array([]), 3, 6)
    with pytest.raises(ValueError):
        sc.broadcast_scores(np.array([1.0]), 3, 2)
    with pytest.raises(ValueError):
        sc.broadcast_scores(np.array([1.0, 2.0, 3.0]), 3, 8)


# ---------------------------------------------------------------------------
# determinism / purity


def test_score_ddcl_deterministic():
    params = tiny_params(seed=1)
    x = np.random.default_rng(2).normal(size=(2, 300)).astype(np.float32)
    a = sc.score_ddcl(params, x)
    b = sc.score_ddcl(params, x)
    np.testing.assert_array_equal(a.scores, b.scores)
    np.testing.assert_array_equal(a.latent_scores, b.latent_scores)
    assert len(a.scores) == 300
    assert len(a.latent_scores) == 50


def test_score_cpc_approx_deterministic():
    params = tiny_params(seed=3)
    x = np.random.default_rng(4).normal(size=(2, 300)).astype(np.float32)
    a = sc.score_cpc_approx(params, x)
    b = sc.score_cpc_approx(params, x)
    np.testing.assert_array_equal(a.scores, b.scores)
    assert len(a.scores) == 300


@pytest.mark.parametrize("maker", [tiny_params, lookahead_params])
def test_score_chunk_invariance(maker):
    """Chunked scoring equals a single-chunk pass (state + context carry)."""
    params = maker(seed=5)
    channels = params.config.in_channels
    x = np.random.default_rng(6).normal(size=(channels, 240)).astype(np.float32)
    whole = sc.score_ddcl(params, x, chunk_len=10_000)
    small = sc.score_ddcl(params, x)  # default sub_seq chunks
    odd = sc.score_ddcl(params, x, chunk_len=36)
    np.testing.assert_allclose(small.scores, whole.scores, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(odd.scores, whole.scores, rtol=1e-5, atol=1e-6)
    whole_c = sc.score_cpc_approx(params, x, chunk_len=10_000)
    odd_c = sc.score_cpc_approx(params, x, chunk_len=36)
    np.testing.assert_allclose(odd_c.scores, whole_c.scores, rtol=1e-5, atol=1e-6)


def test_score_causality_small_config():
    """Scores up to latent step t ignore raw mutations beyond (t+1)*r."""
    params = mdl.init_params(mdl.small_config(), seed=7)
    rng = np.random.default_rng(8)
    x = rng.normal(size=(3, 1440)).astype(np.float32)
    base = sc.score_ddcl(params, x)
    cut = 13
    mutated = x.copy()
    mutated[:, cut * 72 :] += rng.normal(size=(3, 1440 - cut * 72)).astype(np.float32)
    after = sc.score_ddcl(params, mutated)
    np.testing.assert_array_equal(after.scores[: cut * 72], base.scores[: cut * 72])
    assert not np.array_equal(after.scores[cut * 72 :], base.scores[cut * 72 :])


# ---------------------------------------------------------------------------
# constant model


def test_constant_model_scores_constant():
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=8), rng.normal(size=4)
    params = mdl.constant_model(8, 4, a, b, channels=1, K=2, L=3)
    x = rng.normal(size=(1, 600))
    for series in (sc.score_ddcl(params, x), sc.score_cpc_approx(params, x)):
        assert len(np.unique(series.latent_scores)) == 1
        assert len(np.unique(series.scores)) == 1
        assert len(series.scores) == 600


# ---------------------------------------------------------------------------
# oracles


def test_score_cpc_approx_matches_naive():
    params = tiny_params(seed=10)
    cfg = params.config
    x = np.random.default_rng(11).normal(size=(2, 120)).astype(np.float32)
    series = sc.score_cpc_approx(params, x)

    z = mdl.encode(params, Tensor(x)).data
    c = mdl.contextualize(params, Tensor(z)).data
    m = len(z)
    expected = np.zeros(m)
    for t in range(m):
        logits = [
            -(z[t] @ (params.heads[k - 1].data @ c[t - k]))
            for k in range(1, cfg.K + 1)
            if t - k >= 0
        ]
        expected[t] = np.mean(logits) if logits else np.nan
    expected[0] = expected[1]
    np.testing.assert_allclose(series.latent_scores, expected, rtol=1e-5, atol=1e-6)


def test_score_ddcl_matches_term_loop():
    """Normalized latent score equals the mean of per-(k,l) DDCL terms."""
    params = tiny_params(seed=12)
    cfg = params.config
    x = np.random.default_rng(13).normal(size=(2, 120)).astype(np.float32)
    series = sc.score_ddcl(params, x)

    z = mdl.encode(params, Tensor(x)).data
    c = mdl.contextualize(params, Tensor(z)).data
    m = len(z)
    expected = np.zeros(m)
    for t in range(m):
        views = mdl.transform(params, Tensor(z[t]))
        terms = [
            ls.ddcl_term(params, views, Tensor(c[t - k]), k, l).item()
            for k in range(1, cfg.K + 1)
            if t - k >= 0
            for l in range(cfg.L)
        ]
        expected[t] = np.mean(terms) if terms else np.nan
    expected[0] = expected[1]
    np.testing.assert_allclose(series.latent_scores, expected, rtol=1e-5, atol=2e-6)


def test_score_ddcl_unnormalized_sum():
    params = tiny_params(seed=14)
    cfg = params.config
    x = np.random.default_rng(15).normal(size=(2, 120)).astype(np.float32)
    norm = sc.score_ddcl(params, x).latent_scores
    raw = sc.score_ddcl(params, x, normalized=False).latent_scores
    # steady state has K valid horizons: sum = mean * K * L
    steady = slice(cfg.K, len(norm))
    np.testing.assert_allclose(raw[steady], norm[steady] * cfg.K * cfg.L, rtol=1e-6)


# ---------------------------------------------------------------------------
# errors and CSV


def test_score_errors():
    params = tiny_params(seed=16)
    with pytest.raises(ValueError):
        sc.score_ddcl(params, np.zeros((5, 300)))  # wrong channels
    with pytest.raises(ValueError):
        sc.score_ddcl(params, np.zeros((2, 11)))  # only one latent step
    with pytest.raises(ValueError):
        sc.score_ddcl(params, np.zeros(300))  # not (C,T)


def test_scores_csv_roundtrip(tmp_path):
    params = tiny_params(seed=17)
    x = np.random.default_rng(18).normal(size=(2, 120)).astype(np.float32)
    series = sc.score_ddcl(params, x)
    labels = (np.random.default_rng(19).uniform(size=120) < 0.2).astype(int)

    plain = tmp_path / "scores.csv"
    sc.save_scores_csv(plain, series)
    scores, got_labels = sc.load_scores_csv(plain)
    assert got_labels is None
    np.testing.assert_allclose(scores, series.scores, rtol=1e-8)
    assert plain.read_text().splitlines()[0] == "index,score"

    labeled = tmp_path / "labeled.csv"
    sc.save_scores_csv(labeled, series, labels)
    scores2, labels2 = sc.load_scores_csv(labeled)
    np.testing.assert_array_equal(labels2, labels)
    np.testing.assert_allclose(scores2, series.scores, rtol=1e-8)

    again = tmp_path / "again.csv"
    sc.save_scores_csv(again, series, labels)
    assert again.read_bytes() == labeled.read_bytes()


def test_scores_csv_bad_inputs(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("time,value\n0,1\n")
    with pytest.raises(ValueError):
        sc.load_scores_csv(bad)
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("index,score\n0,1.0\n1\n")
    with pytest.raises(ValueError):
        sc.load_scores_csv(ragged)
    params = tiny_params(seed=20)
    x = np.random.default_rng(21).normal(size=(2, 60)).astype(np.float32)
    series = sc.score_ddcl(params, x)
    with pytest.raises(ValueError):
        sc.save_scores_csv(tmp_path / "x.csv", series, np.zeros(5))
