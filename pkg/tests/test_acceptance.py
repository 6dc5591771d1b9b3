"""Acceptance criteria 1-10, one PASS/FAIL line each (see the terminal summary)."""

import time

import numpy as np
import pytest

from hetcl import autodiff as ad
from hetcl.autodiff import ParamSet, gradient_check
from hetcl.cli import cmd_run
from hetcl.distill import (DistillConfig, TeacherRegistry, logit_distillation_loss,
                           semantic_distillation_loss, soft_predictions)
from hetcl.hgraph import build_neighbor_index
from hetcl.metrics import average_forgetting, average_performance, forgetting_aware_gap, forgetting_magnitude
from hetcl.model import ModelConfig, forward, init_params
from hetcl.replay import MemoryState, collect_candidates, coverage_maximization, select_topk, update_memory
from hetcl.taskstream import BENCHMARK_STREAM, SyntheticConfig, generate_synthetic, partition_by_classes
from hetcl.trainer import BufferConfig, TrainConfig, evaluate, joint_loss_fn, model_config, run_sequence, teacher_targets

from conftest import ACCEPTANCE, tiny_two_metapath_graph
from test_replay import cm_oracle

SEEDS = range(5)


def report(n, ok, detail):
    ACCEPTANCE[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, ACCEPTANCE[n]


# ---------------------------------------------------------------- 1

@pytest.mark.parametrize("mode", ["metapath", "pairwise"])
def test_c01_joint_loss_gradient(mode):
    t0 = time.time()
    g = tiny_two_metapath_graph(seed=5)
    seq = partition_by_classes(g, 2, 0.6, seed=5)
    cfg = TrainConfig(lambda_er=1.0, lambda_kd=1.0, hidden=4,
                      distill=DistillConfig(semantic_mode=mode, temperature=2.0))
    mcfg = model_config(seq, cfg)
    params = init_params(mcfg, g.schema, [f.shape[1] for f in g.features], 5)
    memory = update_memory(MemoryState.empty(g), g, seq.tasks[0].train, 2, 0)
    teachers = TeacherRegistry(3)
    teachers.register(params.map(lambda k, a: a + 0.3 * np.sin(7 * a + 1)), 0)
    view = seq.view(1)
    rec = {}
    fn = joint_loss_fn(view, memory, teacher_targets(view, teachers, mcfg, cfg.distill), cfg, mcfg, rec)
    err = gradient_check(fn, params, 1e-5)
    dt = time.time() - t0
    active = all(rec[k] > 0 for k in ("task", "er", "logit", "sem"))
    if mode == "metapath":
        report(1, err < 1e-4 and dt < 30 and active,
               f"max rel err {err:.2e} (< 1e-4), {dt:.1f}s (< 30s), all terms active={active}")
    else:
        assert err < 1e-4 and active


# ---------------------------------------------------------------- 2

def test_c02_sampling_oracles():
    rng = np.random.default_rng(2024)
    bad = 0
    for _ in range(200):
        n = int(rng.integers(1, 101))
        x = rng.integers(0, 5, size=(n, int(rng.integers(1, 4)))).astype(float)
        y = rng.integers(0, int(rng.integers(1, 5)), size=n)
        d, e = float(rng.choice([0.5, 1.0, 1.5, 2.5])), int(rng.integers(1, 8))
        if coverage_maximization(x, y, d, e).tolist() != cm_oracle(x, y, d, e):
            bad += 1
        scores = {int(i): int(s) for i, s in enumerate(rng.integers(0, 6, size=n))}
        cands = list(rng.permutation(n)[: int(rng.integers(0, n + 1))])
        k = int(rng.integers(0, n + 2))
        if select_topk(cands, scores, k).tolist() != sorted(map(int, cands), key=lambda v: (-scores[v], v))[:k]:
            bad += 1
    report(2, bad == 0, f"{200 - bad}/200 instances match both oracles exactly" if bad == 0 else f"{bad} mismatches")


# ---------------------------------------------------------------- 3

def test_c03_distillation_identities():
    rng = np.random.default_rng(3)
    p = soft_predictions(rng.normal(size=(20, 4)), 1.0)
    s = rng.dirichlet([1, 1], size=20)
    l_same = logit_distillation_loss([p], p, 1.0).item()
    s_same = semantic_distillation_loss(s, s).item()
    hand = logit_distillation_loss([soft_predictions(np.array([[2.0, 0.0]]), 1.0)],
                                   np.array([[0.5, 0.5]]), 1.0).item()
    report(3, l_same < 1e-12 and s_same < 1e-12 and abs(hand - 0.3279) <= 1e-3,
           f"L_logit(same)={l_same:.1e}, L_sem(same)={s_same:.1e}, hand case {hand:.4f} (0.3279 +- 1e-3)")


# ---------------------------------------------------------------- 4

def test_c04_attention_normalization():
    worst = 0.0
    rng = np.random.default_rng(4)
    graphs = [tiny_two_metapath_graph(seed=s) for s in range(4)]
    indexes = [build_neighbor_index(g) for g in graphs]
    for i in range(1000):
        g, idx = graphs[i % 4], indexes[i % 4]
        act = "elu" if i % 2 else "none"
        cfg = ModelConfig(hidden=int(rng.integers(1, 9)), num_classes=6, num_metapaths=2, activation=act)
        p = init_params(cfg, g.schema, [f.shape[1] for f in g.features], int(rng.integers(1 << 30)))
        p = p.map(lambda k, a: a * rng.uniform(0.1, 20.0))
        nodes = rng.choice(30, size=int(rng.integers(1, 31)), replace=False)
        out = forward(g, idx, nodes, p, cfg)
        worst = max(worst, np.abs(out.semantic.data.sum(1) - 1).max())
        for seg, _, w in out.node_attention:
            worst = max(worst, np.abs(np.bincount(seg, w, minlength=nodes.size) - 1).max())
    report(4, worst <= 1e-8, f"max |sum - 1| over 1000 passes = {worst:.1e} (<= 1e-8)")


# --------------------------------------------------------------- 5, 6, 10

VARIANTS = {
    "finetune": dict(strategy="finetune"),
    "hero": dict(strategy="hero"),
    "no_kd": dict(strategy="hero", lambda_kd=0.0),
    "no_replay": dict(strategy="hero", lambda_er=0.0, replay_enabled=False),
    "jointtrain": dict(strategy="jointtrain"),
}


@pytest.fixture(scope="session")
def stream_runs():
    """AP, AF magnitude and wall time per (variant, seed) on the benchmark stream."""
    out = {}
    for seed in SEEDS:
        g = generate_synthetic(SyntheticConfig(seed=seed, **BENCHMARK_STREAM))
        for name, kw in VARIANTS.items():
            t0 = time.time()
            m = run_sequence(partition_by_classes(g, 2, 0.6, seed), TrainConfig(seed=seed, **kw)).matrix
            out[name, seed] = (average_performance(m), forgetting_magnitude(m), time.time() - t0)
    return out


def _mean(runs, name, k):
    return float(np.mean([runs[name, s][k] for s in SEEDS]))


def test_c05_trend(stream_runs):
    r = stream_runs
    ap_h, ap_f = _mean(r, "hero", 0), _mean(r, "finetune", 0)
    af_h, af_f = _mean(r, "hero", 1), _mean(r, "finetune", 1)
    per_seed = sum(r["hero", s][0] > r["finetune", s][0] and r["hero", s][1] < r["finetune", s][1]
                   for s in SEEDS)
    secs = sum(r[n, s][2] for n in ("hero", "finetune") for s in SEEDS)
    report(5, ap_h > ap_f and af_h < af_f and per_seed >= 4 and secs < 600,
           f"AP hero {ap_h:.4f} > finetune {ap_f:.4f}; AF-mag hero {af_h:.4f} < finetune {af_f:.4f}; "
           f"both orderings in {per_seed}/5 seeds (>= 4); {secs:.0f}s (< 600s)")


def test_c06_ablation(stream_runs):
    r = stream_runs
    af_h, af_nokd = _mean(r, "hero", 1), _mean(r, "no_kd", 1)
    ap_h, ap_noer = _mean(r, "hero", 0), _mean(r, "no_replay", 0)
    report(6, af_nokd > af_h and ap_noer < ap_h,
           f"AF-mag no_kd {af_nokd:.4f} > hero {af_h:.4f}; AP no_replay {ap_noer:.4f} < hero {ap_h:.4f}")


# ---------------------------------------------------------------- 7

def test_c07_protocol_invariants():
    g = generate_synthetic(SyntheticConfig(nodes_per_type=(400, 40, 40), num_classes=10, seed=7,
                                           **{k: v for k, v in BENCHMARK_STREAM.items() if k != "informative_aux"}))
    seq = partition_by_classes(g, 2, 0.6, seed=7)
    res = run_sequence(seq, TrainConfig(epochs=5, seed=7, buffer=BufferConfig(per_class=4, other_capacity=15)))
    window_ok = max(res.registry_sizes) <= 3 and res.teachers.tasks == [2, 3, 4]
    # training at clock t may only open task t; evaluation of earlier tasks is allowed
    leaks = [(c, t) for c, t, p in seq.access_log if c is not None and p == "train" and t != (c,)]
    target_ok = [b[0] for b in res.buffer_sizes] == [8 * (t + 1) for t in range(5)]
    supply = {tau: set() for tau in (1, 2)}
    for r in range(2):
        for tau, ids in collect_candidates(g, res.memory.buffers[0].ids, r).items():
            supply[tau] |= set(ids.tolist())
    other_ok = all(len(res.memory.buffers[tau]) == min(15, len(supply[tau])) for tau in (1, 2))
    report(7, window_ok and not leaks and target_ok and other_ok,
           f"registry sizes {res.registry_sizes} (<= 3); prior-task raw reads {len(leaks)}; "
           f"target buffer {[b[0] for b in res.buffer_sizes]}; aux buffers = min(15, supply): {other_ok}")


# ---------------------------------------------------------------- 8

def test_c08_metric_arithmetic():
    rng = np.random.default_rng(8)
    bad = 0
    for _ in range(20):
        T = int(rng.integers(2, 7))
        m = rng.integers(0, 17, size=(T, T)) / 16.0
        m[np.triu_indices(T, 1)] = np.nan
        ap = sum(m[T - 1, j] for j in range(T)) / T
        af = sum(m[T - 1, j] - m[j, j] for j in range(T - 1)) / (T - 1)
        ft_final = float(rng.integers(0, 17) / 16.0)
        bad += (average_performance(m) != ap) + (average_forgetting(m) != af)
        bad += forgetting_aware_gap(ft_final, m[-1, -1]) != ft_final - m[-1, -1]
    worked = np.array([[0.9, np.nan], [0.8, 0.7]])
    ap_w, af_w = average_performance(worked), forgetting_magnitude(worked)
    ok = bad == 0 and abs(ap_w - 0.75) < 1e-12 and abs(af_w - 0.1) < 1e-12
    report(8, ok, f"20 random matrices: {bad} mismatches; worked example AP={ap_w:.4f}, AF-mag={af_w:.4f}")


# ---------------------------------------------------------------- 9

def test_c09_determinism(tmp_path):
    text = "strategies = hero\nseeds = 3\nsynthetic.nodes_per_type = 150,15,15\ntrain.epochs = 20\n"
    outs = []
    for k in range(2):
        cfg = tmp_path / f"c{k}.cfg"
        cfg.write_text(text + f"out = {tmp_path / f'run{k}'}\n")
        outs.append(cmd_run(cfg)[0])
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
               for f in ("matrix.csv", "checkpoint_final"))
    report(9, same, "matrix.csv and checkpoint_final byte-identical across two runs" if same else "files differ")


# ---------------------------------------------------------------- 10

def test_c10_baseline_sanity(stream_runs):
    ap_j, ap_h = _mean(stream_runs, "jointtrain", 0), _mean(stream_runs, "hero", 0)
    chance = []
    for seed in SEEDS:
        seq = partition_by_classes(generate_synthetic(SyntheticConfig(seed=seed, **BENCHMARK_STREAM)), 2, 0.6, seed)
        mcfg = model_config(seq, TrainConfig())
        p = init_params(mcfg, seq.graph.schema, [f.shape[1] for f in seq.graph.features], seed)
        chance.append(np.mean([evaluate(p, seq, t, mcfg) for t in range(len(seq))]))
    c = float(np.mean(chance))
    report(10, ap_j >= ap_h and 0.3 <= c <= 0.7,
           f"AP jointtrain {ap_j:.4f} >= hero {ap_h:.4f}; untrained 2-way accuracy {c:.4f} in [0.3, 0.7]")
