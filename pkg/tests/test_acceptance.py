"""Acceptance suite: one test per release criterion, at the stated tolerance.

Run with `pytest tests/test_acceptance.py -v` for one pass/fail line per
criterion; each test also prints its own `ACCEPTANCE <n> ... PASS` line.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy.optimize import nnls

from chase import autodiff as ad
from chase import cli
from chase.discrepancy import avg_kld, bd, entity_point_sets, hd, jsd, mmd_sq, mpmmd_loss, report
from chase.shift import all_pairs, ichas_fixed, jacobian_fixed_w, sample_pairs
from chase.skeleton import GraphPrior, SkeletonSequence, khop_bones
from chase.synth import SynthConfig, synth_generate
from chase.training import TrainConfig, build_normalize_fn, corruption_table, evaluate, train


def announce(number, name):
    print(f"ACCEPTANCE {number:02d} {name}: PASS")


# --- shared training fixtures (criterion 7 budget shared with 10) -------------

BENCH_SYNTH = dict(samples_per_class=500, test_samples_per_class=125, seed=7)
BENCH_TRAIN = dict(epochs=30, batch_size=32, seed=1, c1=16, c2=4)


@pytest.fixture(scope="session")
def benchmark_data():
    cfg = SynthConfig(**BENCH_SYNTH)
    return synth_generate(cfg)


@pytest.fixture(scope="session")
def benchmark_models(benchmark_data):
    train_seqs, test_seqs = benchmark_data
    started = time.monotonic()
    models, accs = {}, {}
    for norm in ("vanilla", "s2com", "chase"):
        cfg = TrainConfig(normalizer=norm, lambda_=0.1 if norm == "chase" else 0.0,
                          **BENCH_TRAIN)
        model, metrics, _ = train(train_seqs, cfg, test_seqs)
        models[norm] = model
        accs[norm] = metrics[-1]["eval_acc"]
    return models, accs, time.monotonic() - started


def test_criterion_01_parameter_count_reproduction(capsys):
    started = time.monotonic()
    code = cli.main(["params", "--c", "3", "--t", "64", "--j", "25", "--e", "2",
                     "--c1", "64", "--c2", "8", "--quiet"])
    elapsed = time.monotonic() - started
    out = capsys.readouterr().out
    assert code == 0
    assert "params=26368" in out
    assert elapsed < 1.0
    with capsys.disabled():
        announce(1, "parameter count 26368 in <1s")


def test_criterion_02_hull_constraint_suite(capsys):
    started = time.monotonic()
    g = np.random.default_rng(42)
    oracle_checked = 0
    for _ in range(1000):
        u = int(g.integers(2, 65))
        c = int(g.integers(1, 4))
        x = g.uniform(-5.0, 5.0, size=(c, u))
        w = g.uniform(-6.0, 6.0, size=(u, 1))
        _, p_star = ichas_fixed(x, w)
        alpha = ad.softmax(ad.as_value(w.ravel()), axis=0).data
        assert np.all(alpha > 0.0)
        assert abs(alpha.sum() - 1.0) < 1e-9
        recon = (x * alpha[None, :]).sum(axis=1)
        np.testing.assert_allclose(p_star.ravel(), recon, atol=1e-12)
        assert np.all(p_star.ravel() >= x.min(axis=1) - 1e-12)
        assert np.all(p_star.ravel() <= x.max(axis=1) + 1e-12)
        if u <= 8:
            a = np.vstack([x, np.ones(u)])
            b = np.concatenate([p_star.ravel(), [1.0]])
            _, residual = nnls(a, b)
            assert residual <= 1e-7
            oracle_checked += 1
    elapsed = time.monotonic() - started
    assert oracle_checked >= 50
    assert elapsed < 30.0
    with capsys.disabled():
        announce(2, f"1000 hull-constraint instances ({oracle_checked} oracle-checked) in {elapsed:.1f}s")


def test_criterion_03_analytic_jacobian(capsys):
    g = np.random.default_rng(11)
    for _ in range(100):
        u = int(g.integers(2, 33))
        w = g.standard_normal((u, 1))
        x0 = g.standard_normal((1, u))
        analytic = jacobian_fixed_w(u, w)
        alpha = ad.softmax(ad.as_value(w.reshape(1, u, 1)), axis=1)
        auto = np.zeros((u, u))
        for i in range(u):
            leaf = ad.Value(x0.copy(), requires_grad=True)
            flat = ad.reshape(leaf, (1, 1, u))
            shifted = flat + ad.scale(ad.matmul(flat, alpha), -1.0)
            ad.backward(ad.vsum(ad.take(ad.reshape(shifted, (u, 1)), [i], axis=0)))
            auto[i] = leaf.grad.ravel()
        assert np.max(np.abs(analytic - auto)) < 1e-8
    with capsys.disabled():
        announce(3, "analytic vs autodiff Jacobian within 1e-8 on 100 instances")


def test_criterion_04_gradient_gate(capsys):
    code = cli.main(["gradcheck"])
    out = capsys.readouterr().out
    assert code == 0, out
    assert "end_to_end_loss" in out
    with capsys.disabled():
        announce(4, "gradcheck passes every op and the full objective at 1e-4")


def test_criterion_05_estimator_exactness_and_unbiasedness(capsys):
    g = np.random.default_rng(6)
    x = g.standard_normal((3, 2, 4, 2, 3))
    x[..., 1] += 1.5
    x[..., 2] -= 0.75
    pairs = all_pairs(3)
    sets = entity_point_sets(x, seed=0)
    per_pair = np.array([float(mmd_sq(sets[p.i].data, sets[p.j].data)) for p in pairs])
    exact = per_pair.mean()

    enumerated = mpmmd_loss(x, pairs, seed=0)
    assert abs(enumerated - exact) <= 1e-12

    index = {(p.i, p.j): k for k, p in enumerate(pairs)}
    draws = np.array([
        per_pair[index[(q.i, q.j)]]
        for seed in range(10_000)
        for q in sample_pairs(3, 1, seed=seed)
    ])
    se = per_pair.std() / math.sqrt(draws.size)
    assert abs(draws.mean() - exact) <= 3.0 * se
    with capsys.disabled():
        announce(5, "pair enumeration exact to 1e-12; M=1 sampling within 3 SE")


def test_criterion_06_metric_closed_forms(capsys):
    p, q = [0.5, 0.5], [0.9, 0.1]
    # independent direct evaluation of each formula
    kl_pq = sum(pi * math.log(pi / qi) for pi, qi in zip(p, q))
    kl_qp = sum(qi * math.log(qi / pi) for pi, qi in zip(p, q))
    want_kld = 0.5 * (kl_pq + kl_qp)
    m = [(pi + qi) / 2 for pi, qi in zip(p, q)]
    want_jsd = 0.5 * sum(pi * math.log(pi / mi) for pi, mi in zip(p, m)) \
        + 0.5 * sum(qi * math.log(qi / mi) for qi, mi in zip(q, m))
    want_bd = -math.log(sum(math.sqrt(pi * qi) for pi, qi in zip(p, q)))
    want_hd = math.sqrt(sum((math.sqrt(pi) - math.sqrt(qi)) ** 2 for pi, qi in zip(p, q)) / 2)

    assert abs(avg_kld(p, q) - want_kld) < 1e-6 and abs(want_kld - 0.4394) < 1e-3
    assert abs(jsd(p, q) - want_jsd) < 1e-6 and abs(want_jsd - 0.1017) < 1e-3
    assert abs(bd(p, q) - want_bd) < 1e-6 and abs(want_bd - 0.1116) < 1e-3
    assert abs(hd(p, q) - want_hd) < 1e-6 and abs(want_hd - 0.3249) < 1e-3

    for f in (avg_kld, jsd, bd, hd):
        assert abs(f(p, p)) < 1e-9
        assert abs(f(q, q)) < 1e-9

    g = np.random.default_rng(1)
    for _ in range(1000):
        k = int(g.integers(2, 10))
        a = g.random(k) + 1e-9
        b = g.random(k) + 1e-9
        a, b = a / a.sum(), b / b.sum()
        assert jsd(a, b) <= math.log(2.0) + 1e-12
        assert hd(a, b) <= 1.0 + 1e-12
    with capsys.disabled():
        announce(6, "metric closed forms at 1e-6; zero cases at 1e-9; bounds on 1000 pairs")


def test_criterion_07_benchmark_ordering(benchmark_data, benchmark_models, capsys):
    _, test_seqs = benchmark_data
    models, accs, train_time = benchmark_models

    started = time.monotonic()
    rep_vanilla = report(test_seqs, build_normalize_fn(models["vanilla"]),
                         repetitions=30, seed=3)
    rep_chase = report(test_seqs, build_normalize_fn(models["chase"]),
                       repetitions=30, seed=3)
    elapsed = train_time + (time.monotonic() - started)

    mmd_vanilla = rep_vanilla.mean((0, 1), "mmd")
    mmd_chase = rep_chase.mean((0, 1), "mmd")
    assert mmd_chase <= 0.5 * mmd_vanilla, (mmd_chase, mmd_vanilla)
    assert accs["chase"] > accs["s2com"]
    assert abs(accs["s2com"] - 0.25) <= 0.05
    assert accs["chase"] >= accs["vanilla"]
    for metric in ("avg_kld", "jsd", "bd", "hd", "mmd"):
        assert rep_chase.mean((0, 1), metric) < rep_vanilla.mean((0, 1), metric)
    assert elapsed < 300.0
    with capsys.disabled():
        announce(7, (f"benchmark ordering: mmd {mmd_vanilla:.3f}->{mmd_chase:.3f}, acc "
                     f"v/s/c {accs['vanilla']:.3f}/{accs['s2com']:.3f}/{accs['chase']:.3f} "
                     f"in {elapsed:.0f}s"))


@pytest.fixture(scope="session")
def cli_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_cli")
    synth_cfg = root / "synth.json"
    synth_cfg.write_text(json.dumps({
        "samples_per_class": 10, "test_samples_per_class": 5,
        "frames": 4, "joints": 3, "seed": 21,
    }))
    data = root / "data"
    assert cli.main(["synth", "--config", str(synth_cfg), "--out", str(data), "--quiet"]) == 0
    return root, data


def _train_config(root, data, name, **overrides):
    cfg = {
        "train_data": str(data / "train.chsk"),
        "test_data": str(data / "test.chsk"),
        "normalizer": "chase",
        "epochs": 4,
        "batch_size": 8,
        "c1": 8,
        "c2": 2,
        "seed": 9,
        "backbone": {"hidden_widths": [16], "feature_dim": 8},
    }
    cfg.update(overrides)
    path = root / name
    path.write_text(json.dumps(cfg))
    return path


def test_criterion_08_determinism_and_resume(cli_workspace, capsys):
    root, data = cli_workspace
    cfg = _train_config(root, data, "det.json")

    for out in ("runA", "runB"):
        assert cli.main(["train", "--config", str(cfg), "--out", str(root / out),
                         "--quiet"]) == 0
    log_a = (root / "runA" / "metrics.jsonl").read_bytes()
    log_b = (root / "runB" / "metrics.jsonl").read_bytes()
    assert log_a == log_b

    half_cfg = _train_config(root, data, "half.json", epochs=2)
    assert cli.main(["train", "--config", str(half_cfg), "--out", str(root / "half"),
                     "--quiet"]) == 0
    assert cli.main(["train", "--config", str(cfg), "--out", str(root / "resumed"),
                     "--resume", str(root / "half" / "model.chck"), "--quiet"]) == 0
    full_lines = log_a.decode().splitlines()
    half_lines = (root / "half" / "metrics.jsonl").read_text().splitlines()
    resumed_lines = (root / "resumed" / "metrics.jsonl").read_text().splitlines()
    assert half_lines + resumed_lines == full_lines
    capsys.readouterr()
    with capsys.disabled():
        announce(8, "byte-identical logs across reruns; resume matches uninterrupted")


def test_criterion_09_khop_bones(capsys):
    prior = GraphPrior.chain(3)
    coords = np.array([0.0, 1.0, 3.0]).reshape(1, 1, 3, 1)
    out = khop_bones(SkeletonSequence(coords, 0), prior, 1)
    np.testing.assert_array_equal(out.coords.ravel(), [0.0, 1.0, 2.0])

    g = np.random.default_rng(2)
    seq = SkeletonSequence(g.standard_normal((2, 3, 3, 2)), 0)
    beyond = khop_bones(seq, prior, prior.depth + 1)
    np.testing.assert_array_equal(beyond.coords, seq.coords)
    with capsys.disabled():
        announce(9, "chain first-difference and beyond-depth identity, both exact")


def test_criterion_10_corruption_protocol(cli_workspace, capsys):
    root, data = cli_workspace
    from chase.synth import load_dataset

    train_seqs, _ = load_dataset(data / "train.chsk")
    test_seqs, _ = load_dataset(data / "test.chsk")
    for normalizer in ("vanilla", "s2com", "s2com_global", "s2com_global_std",
                       "batchnorm", "aug", "chase"):
        cfg = TrainConfig(normalizer=normalizer, epochs=1, batch_size=8, seed=4,
                          lambda_=0.1 if normalizer == "chase" else 0.0,
                          c1=8, c2=2, backbone={"hidden_widths": [16], "feature_dim": 8})
        model, _, _ = train(train_seqs, cfg, test_seqs)
        table = corruption_table(model, test_seqs, seed=13)
        assert set(table["noise"]) == {repr(1e-3), repr(1e-2)}
        assert set(table["mask"]) == {repr(1e-2), repr(1e-1)}
        for grid in (table["noise"], table["mask"]):
            for acc in grid.values():
                assert 0.0 <= acc <= 1.0
        from chase.skeleton import CorruptionConfig

        noop = evaluate(model, test_seqs, CorruptionConfig(0.0, 0.0, seed=13))
        assert noop == table["clean"]
    with capsys.disabled():
        announce(10, "2x2 noise/mask accuracy grid per normalizer; no-op corruption exact")
