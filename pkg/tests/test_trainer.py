import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymseg import losses as L
from asymseg import trainer as T
from asymseg.diffcore import backward, forward, init_params, load_checkpoint, poly_lr, sgd_step
from asymseg.errors import ConfigError, EmptyDataset, NonFiniteLoss
from asymseg.geometry import validate_annotation
from asymseg.metrics import evaluate_pair
from asymseg.synthdata import SynthConfig, make_dataset

TINY = T.TrainConfig(iters=6, batch=2, crop=32, depth=1, base_channels=4, seed=3)


@pytest.fixture(scope="module")
def records():
    return make_dataset(SynthConfig(n=6, size=32, seed=1))


def test_config_validation():
    with pytest.raises(ConfigError):
        T.TrainConfig(crop=30, depth=2)
    with pytest.raises(ConfigError):
        T.TrainConfig(shape_con="ellipse")
    with pytest.raises(ConfigError):
        T.TrainConfig(shape_rad="quadrilateral")
    with pytest.raises(ConfigError):
        T.TrainConfig(eval_mode="vote")
    with pytest.raises(ConfigError):
        T.TrainConfig(alpha=0.9)
    with pytest.raises(ConfigError):
        T.TrainConfig(beta=2.0)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.integers(0, 3), st.booleans(), st.booleans())
def test_augment_preserves_area_and_nesting(seed, k, fh, fv):
    rng = np.random.default_rng(seed)
    inner = rng.random((9, 13)) < 0.3
    outer = inner | (rng.random((9, 13)) < 0.3)
    img = rng.random((9, 13))
    a_img, a_in, a_out = T.augment([img, inner, outer], k, fh, fv)
    assert a_in.sum() == inner.sum() and a_out.sum() == outer.sum()
    assert not (a_in & ~a_out).any()
    assert sorted(a_img.ravel()) == sorted(img.ravel())


def test_prepare_pairs_are_nested(records):
    data = T.prepare(records)
    assert data.images.shape == (6, 32, 32) and data.images.dtype == np.float32
    assert not (data.y_con & ~data.y_rad).any()
    assert np.allclose(data.images.mean(axis=(1, 2)), 0, atol=1e-5)
    with pytest.raises(EmptyDataset):
        T.prepare([])


def test_log_fields_finite_and_files(records, tmp_path):
    res = T.train(replace(TINY, ckpt_every=3), records, tmp_path)
    assert len(res.log) == TINY.iters
    for i, row in enumerate(res.log):
        assert set(row) == set(T.LOG_FIELDS) and row["iter"] == i
        assert all(np.isfinite(row[k]) for k in T.LOG_FIELDS[1:])
        assert row["lr"] == poly_lr(i, TINY.iters)
    lines = (tmp_path / "train_log.csv").read_text().splitlines()
    assert lines[0] == ",".join(T.LOG_FIELDS) and len(lines) == TINY.iters + 1
    assert {p.name for p in tmp_path.glob("*.ckpt")} == {"con.ckpt", "rad.ckpt"}
    assert load_checkpoint(tmp_path / "con.ckpt")[2] == TINY.iters


def test_bit_identical_reruns(records, tmp_path):
    T.train(TINY, records, tmp_path / "a")
    T.train(TINY, records, tmp_path / "b")
    for name in ("con.ckpt", "rad.ckpt", "train_log.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_ablation_log_zeros(records):
    res = T.train(replace(TINY, idmps=False, cap=False, crbs=False), records)
    assert all(r["l_idmps"] == 0 and r["l_cap"] == 0 for r in res.log)
    assert all(r["l_total"] == r["l_sup"] for r in res.log)


def test_gradients_independent_without_idmps(records):
    data = T.prepare(records)
    x = data.images[:2, None]
    con = init_params(TINY.net, 0, np.float64, tag="con")
    rad = init_params(TINY.net, 0, np.float64, tag="rad")

    def con_grads():
        pc, pr = forward(con, x), forward(rad, x)
        sup = L.crbs_sup_loss(pc, pr, data.y_rad[:2], data.y_con[:2], 3.0)
        cap = L.cap_total(pc, pr, data.cross[:2])
        return backward(L.total_loss(sup, 0.0, cap, 0.0, 0.3), con, rad)[0]

    before = con_grads()
    for v in rad.values.values():
        v += np.random.default_rng(0).standard_normal(v.shape)
    after = con_grads()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_degenerate_run_equals_two_plain_trainings(records):
    """lambda1 = lambda2 = 0 and alpha = 1: each net follows its own plain-CE training."""
    cfg = replace(TINY, idmps=False, cap=False, crbs=False)
    joint = T.train(cfg, records)
    data = T.prepare(records)
    rng = T._rng(cfg.seed, 1)
    con = init_params(cfg.net, cfg.seed, tag="con")
    rad = init_params(cfg.net, cfg.seed, tag="rad")
    for it in range(cfg.iters):
        x, y_con, y_rad, _ = T._batch(data, rng, cfg)
        lr = poly_lr(it, cfg.iters)
        lc = L.weighted_ce(forward(con, x), y_rad)
        sgd_step(con, backward(lc, con), lr)
        lr_ = L.weighted_ce(forward(rad, x), y_con)
        sgd_step(rad, backward(lr_, rad), lr)
        assert joint.log[it]["l_sup"] == pytest.approx(float(lc.data) + float(lr_.data), rel=1e-6)
    for k in con.names:
        assert np.allclose(joint.params_con.values[k], con.values[k], rtol=1e-5, atol=1e-7)
        assert np.allclose(joint.params_rad.values[k], rad.values[k], rtol=1e-5, atol=1e-7)


def test_checkpoint_then_eval_identical(records, tmp_path):
    res = T.train(TINY, records, tmp_path)
    con = load_checkpoint(tmp_path / "con.ckpt")[0]["con"]
    rad = load_checkpoint(tmp_path / "rad.ckpt")[0]["rad"]
    for mode in T.EVAL_MODES:
        a = T.evaluate(res.params_con, res.params_rad, records, mode)
        b = T.evaluate(con, rad, records, mode, report_path=tmp_path / f"{mode}.csv")
        assert a == b
    assert (tmp_path / "ensemble.csv").read_text().startswith("id,dsc,jaccard,asd,hd95,precision,recall\n")


def test_ensemble_of_identical_nets_is_single(records):
    p = init_params(TINY.net, 9)
    imgs = np.stack([r.image for r in records])
    assert np.array_equal(T.predict(p, p, imgs, "ensemble"), T.predict(p, None, imgs, "con"))
    with pytest.raises(ConfigError):
        T.predict(p, None, imgs, "rad")
    with pytest.raises(ConfigError):
        T.predict(p, p, imgs, "mean")


def test_gt_as_prediction_scores_one(records):
    for r in records:
        assert evaluate_pair(r.gt, r.gt).dsc == 1.0


def test_evaluate_empty():
    p = init_params(TINY.net, 0)
    with pytest.raises(EmptyDataset):
        T.evaluate(p, p, [])


def test_baseline_modes():
    assert T.baseline_modes("cross") == {"radical_only": "con", "conservative_only": "rad"}
    assert T.baseline_modes("direct") == {"radical_only": "rad", "conservative_only": "con"}


def test_perturb_dataset_alternates(records):
    for deg in (0, 3, 5, 7, 10):
        noisy = T.perturb_dataset(records, deg)
        for r in noisy:
            validate_annotation(r.ann)
    a, b = T.perturb_dataset(records[:2], 10)

    def ang(ann):
        (x0, y0), (x1, y1) = ann.major
        return math.atan2(y1 - y0, x1 - x0)

    d0 = (ang(a.ann) - ang(records[0].ann) + math.pi) % (2 * math.pi) - math.pi
    d1 = (ang(b.ann) - ang(records[1].ann) + math.pi) % (2 * math.pi) - math.pi
    assert d0 == pytest.approx(-d1, abs=1e-9) and abs(d0) == pytest.approx(math.radians(10), abs=1e-9)


def test_noise_zero_matches_unperturbed(records):
    cfg = replace(TINY, iters=3)
    sweep = T.noise_sweep(cfg, records, records, [0.0])
    res = T.train(cfg, records)
    assert sweep[0.0] == T.evaluate(res.params_con, res.params_rad, records)[1].dsc


def test_nonfinite_loss_aborts(records, tmp_path):
    bad = [replace(r) for r in records]
    bad[0] = replace(bad[0], image=np.full_like(bad[0].image, np.nan))
    cfg = replace(TINY, batch=6)
    with pytest.raises(NonFiniteLoss):
        T.train(cfg, bad, tmp_path)
    assert (tmp_path / "con_nonfinite.ckpt").exists() and (tmp_path / "train_log.csv").exists()
