import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymseg import metrics as M
from asymseg.errors import EmptyDataset, ShapeMismatch
from asymseg.geometry import ShapeKind
from asymseg.synthdata import SynthConfig, make_dataset


def count_oracle(a, b):
    inter = na = nb = 0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            na += int(a[i, j])
            nb += int(b[i, j])
            inter += int(a[i, j] and b[i, j])
    if na == 0 and nb == 0:
        return 1.0, 1.0, 1.0, 1.0
    if na == 0 or nb == 0:
        return 0.0, 0.0, 0.0, 0.0
    return 2 * inter / (na + nb), inter / (na + nb - inter), inter / na, inter / nb


def brute_edt(mask):
    pts = [(i, j) for i in range(mask.shape[0]) for j in range(mask.shape[1]) if mask[i, j]]
    out = np.full(mask.shape, np.inf)
    for i in range(mask.shape[0]):
        for j in range(mask.shape[1]):
            for y, x in pts:
                out[i, j] = min(out[i, j], dist(i, j, y, x))
    return out


def boundary_oracle(m):
    h, w = m.shape
    pts = []
    for i in range(h):
        for j in range(w):
            if not m[i, j]:
                continue
            nbrs = [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
            if any(not (0 <= y < h and 0 <= x < w) or not m[y, x] for y, x in nbrs):
                pts.append((i, j))
    return pts


def percentile_linear(values, q):
    v = sorted(values)
    pos = (len(v) - 1) * q / 100.0
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (v[hi] - v[lo]) * (pos - lo)


def dist(y, x, v, u):
    return math.sqrt((y - v) ** 2 + (x - u) ** 2)


def surface_oracle(a, b):
    pa, pb = boundary_oracle(a), boundary_oracle(b)
    if not pa and not pb:
        return 0.0, 0.0
    if not pa or not pb:
        d = math.hypot(*a.shape)
        return d, d
    dab = [min(dist(y, x, v, u) for v, u in pb) for y, x in pa]
    dba = [min(dist(y, x, v, u) for v, u in pa) for y, x in pb]
    return math.fsum(dab) / len(dab), percentile_linear(dab + dba, 95)


def random_pair(rng, h, w):
    kind = rng.integers(0, 4)
    if kind == 0:
        return rng.random((h, w)) < rng.uniform(0, 0.6), rng.random((h, w)) < rng.uniform(0, 0.6)
    ys, xs = np.mgrid[0:h, 0:w]
    out = []
    for _ in range(2):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(0.5, max(h, w) / 2)
        out.append((ys - cy) ** 2 + (xs - cx) ** 2 < r * r)
    if kind == 3:
        out[0] = np.zeros((h, w), bool)
    return out[0], out[1]


# overlap

def test_overlap_examples():
    a = np.zeros((20, 20), bool)
    a[:5] = True
    assert M.overlap_metrics(a, a) == (1.0, 1.0, 1.0, 1.0)
    # |A| = |B| = 100, |A & B| = 50
    a = np.zeros(400, bool)
    b = np.zeros(400, bool)
    a[:100] = True
    b[50:150] = True
    dsc, jac, prec, rec = M.overlap_metrics(a.reshape(20, 20), b.reshape(20, 20))
    assert dsc == 0.5 and jac == pytest.approx(1 / 3) and prec == 0.5 and rec == 0.5


def test_overlap_empty_conventions():
    z = np.zeros((4, 4), bool)
    o = z.copy()
    o[1, 1] = True
    assert M.overlap_metrics(z, z) == (1.0, 1.0, 1.0, 1.0)
    assert M.overlap_metrics(z, o) == (0.0, 0.0, 0.0, 0.0)
    assert M.overlap_metrics(o, z) == (0.0, 0.0, 0.0, 0.0)
    with pytest.raises(ShapeMismatch):
        M.overlap_metrics(z, np.zeros((4, 5), bool))


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1))
def test_overlap_matches_counting_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b = random_pair(rng, 16, 16)
    got = M.overlap_metrics(a, b)
    assert got == count_oracle(a, b)
    dsc, jac, _, _ = got
    assert abs(dsc - 2 * jac / (1 + jac)) <= 1e-12
    assert dsc >= jac
    assert M.overlap_metrics(b, a)[:2] == (dsc, jac)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_adding_true_positive_raises_dsc(seed):
    rng = np.random.default_rng(seed)
    a, b = random_pair(rng, 12, 12)
    cand = np.argwhere(b & ~a)
    if len(cand) == 0 or not a.any():
        return
    i, j = cand[rng.integers(len(cand))]
    a2 = a.copy()
    a2[i, j] = True
    assert M.overlap_metrics(a2, b)[0] > M.overlap_metrics(a, b)[0]


# distance transform

def test_edt_examples():
    m = np.zeros((6, 6), bool)
    m[0, 0] = True
    assert M.distance_transform(m)[3, 4] == 5.0
    assert (M.distance_transform(np.ones((5, 3), bool)) == 0).all()
    assert np.isinf(M.distance_transform(np.zeros((3, 3), bool))).all()


@pytest.mark.parametrize("seed", range(6))
def test_edt_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    m = rng.random((24, 24)) < [0.002, 0.01, 0.05, 0.2, 0.5, 0.9][seed]
    m[rng.integers(24), rng.integers(24)] = True
    assert np.array_equal(M.distance_transform(m), brute_edt(m))


# surface metrics

def test_surface_examples():
    a = np.zeros((10, 10), bool)
    a[2:6, 3:8] = True
    assert M.surface_metrics(a, a) == (0.0, 0.0)
    p = np.zeros((10, 10), bool)
    g = np.zeros((10, 10), bool)
    p[1, 1] = True
    g[4, 5] = True
    assert M.surface_metrics(p, g) == (5.0, 5.0)
    z = np.zeros((10, 10), bool)
    assert M.surface_metrics(z, z) == (0.0, 0.0)
    assert M.surface_metrics(z, g) == (math.hypot(10, 10),) * 2


def test_surface_asd_directed_and_symmetric_flag():
    a = np.zeros((20, 20), bool)
    a[5:8, 5:8] = True
    b = np.zeros((20, 20), bool)
    b[2:15, 2:15] = True
    assert M.surface_metrics(a, b)[0] != M.surface_metrics(b, a)[0]
    assert M.surface_metrics(a, b)[1] == M.surface_metrics(b, a)[1]
    assert M.surface_metrics(a, b, symmetric_asd=True)[0] == M.surface_metrics(b, a, symmetric_asd=True)[0]


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1))
def test_surface_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(1, 33, size=2)
    a, b = random_pair(rng, h, w)
    assert M.surface_metrics(a, b) == surface_oracle(a, b)


def test_percentile_rule():
    assert M.percentile_linear([3.0], 95) == 3.0
    assert M.percentile_linear([0.0, 10.0], 95) == 9.5
    assert M.percentile_linear(np.arange(21.0), 95) == 19.0
    rng = np.random.default_rng(0)
    v = rng.random(37)
    assert M.percentile_linear(v, 95) == pytest.approx(np.percentile(v, 95), rel=1e-14)
    with pytest.raises(EmptyDataset):
        M.percentile_linear([], 95)


# reports

def test_report_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    rows = [(f"s{i}", M.evaluate_pair(*random_pair(rng, 16, 16))) for i in range(5)]
    mean, std = M.write_report(tmp_path / "r.csv", rows)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "id,dsc,jaccard,asd,hd95,precision,recall"
    assert [l.split(",")[0] for l in lines[-2:]] == ["mean", "std"]
    back = M.read_report(tmp_path / "r.csv")
    assert back["mean"].dsc == pytest.approx(np.mean([r.dsc for _, r in rows]), rel=1e-9)
    assert back["std"].asd == pytest.approx(np.std([r.asd for _, r in rows]), rel=1e-9, abs=1e-12)
    with pytest.raises(EmptyDataset):
        M.summarize([])


# fidelity

def test_fidelity_directions_on_convex_phantoms():
    table = M.shape_fidelity_table(make_dataset(SynthConfig(n=40, seed=3, convex_only=True)))
    ell, quad, conc = table[ShapeKind.IRREGULAR_ELLIPSE], table[ShapeKind.QUADRILATERAL], table[ShapeKind.CONCAVITY]
    assert ell["recall"] >= 0.95 and ell["precision"] >= 0.90
    assert conc["precision"] >= 0.95 and conc["recall"] < quad["recall"]
    assert set(table) == set(ShapeKind)


def test_fidelity_empty():
    with pytest.raises(EmptyDataset):
        M.shape_fidelity_table([])
