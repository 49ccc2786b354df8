import math
import time
from dataclasses import replace

import numpy as np
import pytest

from capreg.core import (
    RANDOM_PROJECTION,
    CapConfig,
    Dataset,
    Hyperplane,
    PartitionModel,
    induced_partition,
    n_min,
)
from capreg.engine import (
    NoFeasibleSplit,
    fit,
    generate_candidates,
    global_mse,
    knots,
    random_directions,
    refit,
    run_cap,
    run_fast_cap,
    select_split,
)
from capreg.linfit import fit_ls
from capreg.synth import gen_problem1, gen_problem2, gen_quad2d, holdout_set

FAST = CapConfig(strategy=RANDOM_PROJECTION)


def single_piece(data):
    f = fit_ls(data)
    return PartitionModel.from_hyperplanes([f.hyperplane], [np.arange(data.n)])


def test_knots():
    assert knots(1).tolist() == [0.5]
    assert knots(3).tolist() == [0.25, 0.5, 0.75]
    k = knots(10)
    assert len(k) == 10 and k[0] == pytest.approx(1 / 11) and k[-1] == pytest.approx(10 / 11)
    assert np.all(np.diff(k) > 0)


def test_candidate_count_cardinal():
    rng = np.random.default_rng(0)
    data = Dataset(rng.uniform(size=(200, 2)), rng.normal(size=200))
    cands = generate_candidates(single_piece(data), data, CapConfig(L=3))
    assert len(cands) == 6
    assert [c.key for c in cands] == sorted(c.key for c in cands)


def test_constant_column_yields_no_candidates_for_that_direction():
    rng = np.random.default_rng(1)
    x = np.column_stack([rng.uniform(size=200), np.full(200, 2.0)])
    data = Dataset(x, rng.normal(size=200))
    cands = generate_candidates(single_piece(data), data, CapConfig(L=3))
    assert {c.direction_index for c in cands} == {0}
    assert len(cands) == 3


def test_single_knot_threshold_is_midrange():
    rng = np.random.default_rng(2)
    x = rng.uniform(size=100)
    data = Dataset(x, x ** 2)
    (cand,) = generate_candidates(single_piece(data), data, CapConfig(L=1))
    assert cand.threshold == 0.5 * x.min() + 0.5 * x.max()
    assert np.all(x[cand.left] <= cand.threshold) and np.all(x[cand.right] > cand.threshold)


def test_median_fallback_when_all_knots_infeasible():
    # n_min forced to half the subset: only the median split can be admissible
    x = np.arange(40.0) ** 3  # skewed, so every evenly spaced knot is unbalanced
    data = Dataset(x, np.abs(x - 20.0))
    cfg = CapConfig(L=3, min_obs_override=20)
    cands = generate_candidates(single_piece(data), data, cfg)
    assert len(cands) == 1
    assert cands[0].knot_index == 3
    assert len(cands[0].left) == len(cands[0].right) == 20


def test_global_mse_brute_force():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(200, 3))
    data = Dataset(x, rng.normal(size=200))
    model = PartitionModel(rng.normal(size=3), rng.normal(size=(3, 3)), ())
    naive = sum((data.y[i] - max(model.intercepts[k] + model.slopes[k] @ x[i] for k in range(3))) ** 2
                for i in range(200)) / 200
    assert global_mse(model, data) == pytest.approx(naive, rel=1e-12)


def test_global_mse_single_piece_is_ols():
    rng = np.random.default_rng(4)
    data = Dataset(rng.normal(size=(60, 2)), rng.normal(size=60))
    f = fit_ls(data)
    assert global_mse(single_piece(data), data) == pytest.approx(f.sse / 60, rel=1e-12)


def test_global_mse_zero_on_generating_model():
    rng = np.random.default_rng(5)
    model = PartitionModel(rng.normal(size=4), rng.normal(size=(4, 2)), ())
    x = rng.normal(size=(100, 2))
    assert global_mse(model, Dataset(x, model.predict(x))) == 0.0


def test_select_split_rules():
    rng = np.random.default_rng(6)
    data = Dataset(rng.uniform(size=(100, 2)), rng.normal(size=100))
    cands = generate_candidates(single_piece(data), data, CapConfig(L=2))
    assert select_split(cands[:1]) is cands[0]
    a, b = cands[2], cands[0]
    a.train_mse = b.train_mse = 0.0
    assert select_split([a, b]) is b
    with pytest.raises(NoFeasibleSplit):
        select_split([])


def test_v_shape_prefers_central_knot():
    x = np.linspace(-1, 1, 201)
    data = Dataset(x, np.abs(x))
    cands = generate_candidates(single_piece(data), data, CapConfig(L=9))
    brute = [global_mse(c.model, data) for c in cands]
    best = select_split(cands)
    assert best is cands[int(np.argmin(brute))]
    assert abs(best.threshold) == min(abs(c.threshold) for c in cands)
    assert abs(best.threshold) < 1e-12


def test_selected_candidate_minimizes_global_mse_brute_force():
    data, _ = gen_quad2d(300, 7)
    model = single_piece(data)
    cfg = CapConfig()
    for _ in range(3):
        cands = generate_candidates(model, data, cfg)
        brute = np.array([global_mse(c.model, data) for c in cands])
        assert np.allclose(brute, [c.train_mse for c in cands], rtol=1e-10, atol=1e-14)
        best = select_split(cands)
        assert global_mse(best.model, data) <= brute.min() * (1 + 1e-10)
        model = best.model


def test_local_objective_scores_child_sse():
    data, _ = gen_quad2d(300, 8)
    cands = generate_candidates(single_piece(data), data, CapConfig())
    for c in cands[:5]:
        sse = fit_ls(data.subset(c.left)).sse + fit_ls(data.subset(c.right)).sse
        assert c.local_sse == pytest.approx(sse, rel=1e-10)
    best = select_split(cands, "local")
    assert best.local_sse == min(c.local_sse for c in cands)


def test_refit_fixed_point():
    x = np.linspace(-1, 1, 101)
    data = Dataset(x, np.abs(x))
    planes = [Hyperplane(0.0, [-1.0]), Hyperplane(0.0, [1.0])]
    parts = induced_partition(planes, data)
    model = PartitionModel.from_hyperplanes(planes, parts)
    out = refit(model, data, 5)
    assert np.allclose(out.intercepts, model.intercepts, atol=1e-12)
    assert np.allclose(out.slopes, model.slopes, atol=1e-12)
    assert [s.tolist() for s in out.subsets] == [s.tolist() for s in parts]


def test_refit_rejected_when_induced_subset_too_small():
    x = np.linspace(0, 1, 50)
    data = Dataset(x, x)
    # second plane only wins for x > 0.98
    planes = [Hyperplane(0.0, [1.0]), Hyperplane(-49.0, [51.0])]
    half = (np.arange(25), np.arange(25, 50))
    model = PartitionModel.from_hyperplanes(planes, half)
    assert refit(model, data, 10) is model


def assert_valid(model, n, nmin):
    allidx = np.sort(np.concatenate(model.subsets))
    assert allidx.tolist() == list(range(n))
    assert all(len(s) >= nmin for s in model.subsets) or model.k == 1


def test_run_cap_models_valid_and_bounded():
    data, _ = gen_problem1(800, 0)
    cfg = CapConfig()
    seq = run_cap(data, cfg)
    nmin = n_min(800, 5, 3.0)
    for i, m in enumerate(seq.models):
        assert m.k == i + 1
        assert_valid(m, 800, nmin)
    assert len(seq) <= math.ceil(3 * math.log(800)) + 1
    assert seq.selected == int(np.argmin(seq.gcv))


def test_run_cap_affine_selects_one_piece():
    rng = np.random.default_rng(9)
    for n in (50, 400):
        x = rng.normal(size=(n, 3))
        data = Dataset(x, 1.0 + x @ [0.5, -1.0, 2.0])
        seq = run_cap(data)
        assert seq.selected_k == 1
        assert global_mse(seq.best, data) < 1e-20


def test_run_cap_quad2d_accuracy():
    xt, ft = holdout_set("quad2d")
    for seed in range(5):
        data, _ = gen_quad2d(500, seed)
        seq = run_cap(data)
        assert seq.selected_k > 1
        assert np.mean((seq.best.predict(xt) - ft) ** 2) < 0.05


def test_ablation_worse_than_full_cap():
    xt, ft = holdout_set("1")
    data, _ = gen_problem1(1000, 0)
    full = run_cap(data).best
    base = run_cap(data, CapConfig(split_objective="local", refit_enabled=False)).best
    assert np.mean((full.predict(xt) - ft) ** 2) < np.mean((base.predict(xt) - ft) ** 2)


def test_run_cap_deterministic():
    data, _ = gen_problem2(500, 1)
    a, b = run_cap(data), run_cap(data)
    assert len(a) == len(b) and a.selected == b.selected
    for ma, mb in zip(a.models, b.models):
        assert np.array_equal(ma.intercepts, mb.intercepts) and np.array_equal(ma.slopes, mb.slopes)
    fa, fb = run_fast_cap(data, replace(FAST, seed=4)), run_fast_cap(data, replace(FAST, seed=4))
    assert np.array_equal(fa.best.slopes, fb.best.slopes)


def test_concave_fit_is_negated_convex_fit():
    data, _ = gen_quad2d(400, 2)
    convex = run_cap(data)
    concave = run_cap(Dataset(data.x, -data.y), CapConfig(orientation="concave"))
    assert concave.best.orientation == "concave"
    assert np.array_equal(concave.gcv, convex.gcv)
    xt = np.random.default_rng(0).uniform(-1, 1, size=(500, 2))
    assert np.array_equal(concave.best.predict(xt), -convex.best.predict(xt))


def test_random_directions():
    a = random_directions(3, 5, 11)
    assert a.shape == (3, 5)
    assert np.array_equal(a, random_directions(3, 5, 11))
    z = random_directions(2000, 5, 12).ravel()
    assert abs(z.mean()) < 0.05 and abs(z.var() - 1) < 0.05


def test_fast_cap_requires_random_projection():
    data, _ = gen_quad2d(100, 0)
    with pytest.raises(ValueError):
        run_fast_cap(data, CapConfig())


def test_fast_cap_affine():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(500, 4))
    data = Dataset(x, x @ [1.0, 2.0, 3.0, 4.0] - 2.0)
    seq = run_fast_cap(data, FAST)
    assert seq.selected_k == 1
    assert len(seq) <= len(run_cap(data))


def test_fast_cap_stopping_rule():
    data, _ = gen_problem1(2000, 3)
    seq = run_fast_cap(data, FAST)
    g = seq.gcv
    # growth stops at the first double increase, never later
    for k in range(2, len(g) - 1):
        assert not (g[k] > g[k - 1] > g[k - 2])


def test_fast_cap_accuracy_close_to_cap():
    xt, ft = holdout_set("1")
    data, _ = gen_problem1(1000, 0)
    cap = np.mean((run_cap(data).best.predict(xt) - ft) ** 2)
    fast = np.mean((run_fast_cap(data, FAST).best.predict(xt) - ft) ** 2)
    assert fast <= 2 * cap


def test_fast_cap_faster_on_problem2():
    data, _ = gen_problem2(5000, 0)
    t = time.perf_counter(); run_cap(data); t_cap = time.perf_counter() - t
    t = time.perf_counter(); run_fast_cap(data, FAST); t_fast = time.perf_counter() - t
    assert t_fast < t_cap


def test_fit_helper_switches_strategy():
    data, _ = gen_quad2d(300, 1)
    seq = fit(data, CapConfig(), fast=True)
    assert seq.best.k >= 1
