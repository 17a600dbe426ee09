"""End-to-end acceptance gate.

Each test records a one-line verdict that conftest prints in the terminal
summary, so a full run ends with one pass/fail line per criterion. The
end-to-end criteria train real models and are marked slow.
"""

import itertools
import time

import numpy as np
import pytest
import torch

import oracles
from conftest import record_criterion
from mmant.attention import MultiHeadAttention
from mmant.config import ModelConfig, ProtocolSpec, TrainConfig, default_corpus_spec
from mmant.data import generate_corpus
from mmant.evaluation import (chance_levels, mean_moc, moc_accuracy, recompute_summary,
                              run_protocol, segmentation_accuracy, variant_config)
from mmant.finegrained import (TclWeights, form_clusters, generator_total_loss,
                               inter_loss, intra_loss, tcl_loss)
from mmant.gradcheck import LOSS_TOL, STACK_TOL, run_scope, scope_tolerance
from mmant.model import AnticipationModel
from mmant.segmentation import SegmentationModule, TransformerLayer
from mmant.training import lr_schedule, train_two_stage


def rel_err(got, want):
    got, want = np.asarray(got, dtype=np.float64), np.asarray(want, dtype=np.float64)
    denom = np.maximum(np.abs(want), 1.0)
    return float(np.max(np.abs(got - want) / denom))


# --------------------------------------------------------------------------
# Criterion 1: formula oracles on >= 20 random tiny instances each, < 1e-9.
# --------------------------------------------------------------------------

def test_criterion_1_formula_oracles():
    t0 = time.time()
    worst = {}

    def track(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for trial in range(20):
        rng = np.random.default_rng(trial)
        T, d, k = 4, 8, 3
        x = rng.normal(size=(T, d))
        labels = rng.integers(0, 2, size=T)
        clusters = form_clusters(labels)
        xt = torch.as_tensor(x)

        track("intra", rel_err(intra_loss(xt, clusters).item(),
                               oracles.intra(x, labels)))
        track("inter", rel_err(inter_loss(xt, clusters).item(),
                               oracles.inter(x, labels)))
        w = TclWeights(float(rng.uniform(0, 2)), float(rng.uniform(0, 1)))
        track("tcl", rel_err(
            tcl_loss(xt, clusters, w).item(),
            w.lambda1 * oracles.intra(x, labels) + w.lambda2 * oracles.inter(x, labels)))

        logits = rng.normal(size=(T, k))
        targets = rng.integers(0, k, size=T)
        track("generator_total", rel_err(
            generator_total_loss(torch.as_tensor(logits), torch.as_tensor(targets),
                                 xt, clusters, w).item(),
            oracles.cross_entropy(logits, targets)
            + w.lambda1 * oracles.intra(x, labels)
            + w.lambda2 * oracles.inter(x, labels)))

        gen = torch.Generator().manual_seed(trial)
        attn = MultiHeadAttention(d, 2, generator=gen)
        ws = [t.detach().numpy() for t in (attn.W_q, attn.W_k, attn.W_v, attn.W_o)]
        track("mhsa", rel_err(attn(xt).detach().numpy(), oracles.mhsa(x, *ws)))

        kv = rng.normal(size=(T, d))
        track("cross_attend", rel_err(
            attn(xt, torch.as_tensor(kv)).detach().numpy(),
            oracles.mhsa(x, *ws, kv=kv)))

        layer = TransformerLayer(d, 2, 2 * d, generator=gen)
        pos = rng.normal(size=(T, d))
        track("seg_layer", rel_err(
            layer(xt, torch.as_tensor(pos)).detach().numpy(),
            oracles.transformer_layer(x, pos, layer)))

        module = SegmentationModule(d, 1, k, 2, 2 * d, max_len=8, generator=gen)
        probs, _ = module(xt)
        exp_probs, _ = oracles.segmentation_forward(x, module)
        track("seg_head", rel_err(probs.detach().numpy(), exp_probs))

        pred = rng.integers(0, k, size=6)
        truth = rng.integers(0, k, size=6)
        track("moc", rel_err(moc_accuracy(pred, truth), oracles.moc(pred, truth)))

    elapsed = time.time() - t0
    ok = all(v < 1e-9 for v in worst.values()) and elapsed < 30
    record_criterion(1, ok, f"formula oracles: max rel err "
                            f"{max(worst.values()):.2e} over {len(worst)} ops x 20 "
                            f"trials in {elapsed:.1f}s (tol 1e-9, budget 30s)")
    assert ok, worst


# --------------------------------------------------------------------------
# Criterion 2: finite-difference gradient suite, < 2 min.
# --------------------------------------------------------------------------

def test_criterion_2_gradient_suite():
    t0 = time.time()
    checks = run_scope("all", seed=0)
    elapsed = time.time() - t0
    failures = {k: v for k, v in checks.items() if v >= scope_tolerance(k)}
    ok = not failures and elapsed < 120
    record_criterion(2, ok, f"gradient suite: {len(checks)} scopes, max rel err "
                            f"{max(checks.values()):.2e} (loss tol {LOSS_TOL:.0e}, "
                            f"stack tol {STACK_TOL:.0e}) in {elapsed:.1f}s")
    assert ok, (failures, elapsed)


# --------------------------------------------------------------------------
# Criterion 3: loss laws over >= 100 randomized cases each.
# --------------------------------------------------------------------------

def test_criterion_3_loss_laws():
    rng = np.random.default_rng(7)
    n_cases = 100
    ok = True
    for _ in range(n_cases):
        x = rng.normal(size=(6, 3))
        labels = rng.integers(0, 2, size=6)
        clusters = form_clusters(labels)
        shift = rng.normal(size=3)
        s = float(rng.uniform(0.25, 4.0))

        a = intra_loss(torch.as_tensor(x), clusters).item()
        b = intra_loss(torch.as_tensor(x + shift), clusters).item()
        ok &= abs(a - b) <= 1e-9 * max(1.0, abs(a))

        ia = inter_loss(torch.as_tensor(x), clusters).item()
        ib = inter_loss(torch.as_tensor(s * x), clusters).item()
        ok &= abs(ib - ia / s) <= 1e-9 * max(1.0, ia / s)

        # rigid separation of the last cluster along the centroid difference
        two = np.array([0, 0, 0, 1, 1, 1])
        ctwo = form_clusters(two)
        mu0, mu1 = x[:3].mean(0), x[3:].mean(0)
        direction = (mu1 - mu0) / np.linalg.norm(mu1 - mu0)
        moved = x.copy()
        moved[3:] += float(rng.uniform(0.1, 1.0)) * direction
        ok &= inter_loss(torch.as_tensor(moved), ctwo).item() < \
            inter_loss(torch.as_tensor(x), ctwo).item()
        ok &= abs(intra_loss(torch.as_tensor(moved), ctwo).item()
                  - intra_loss(torch.as_tensor(x), ctwo).item()) <= 1e-9 * max(
                      1.0, intra_loss(torch.as_tensor(x), ctwo).item())

        # intra = 0 iff every cluster is a single point (up to the rounding of
        # the centroid mean: (x - mean(x,x,x))^2 is ~1e-31, not exactly 0)
        ok &= intra_loss(torch.as_tensor(x), ctwo).item() > 1e-12
        collapsed = np.vstack([np.tile(x[0], (3, 1)), np.tile(x[3], (3, 1))])
        ok &= intra_loss(torch.as_tensor(collapsed), ctwo).item() < 1e-20

    record_criterion(3, ok, f"loss laws: translation invariance, 1/s homogeneity, "
                            f"monotone separation, intra=0 iff degenerate — "
                            f"{n_cases} randomized cases each")
    assert ok


# --------------------------------------------------------------------------
# Criterion 4: exhaustive cluster formation, all 2-class sequences len <= 8.
# --------------------------------------------------------------------------

def test_criterion_4_exhaustive_clusters():
    n_cases = 0
    ok = True
    for length in range(1, 9):
        for labels in itertools.product([0, 1], repeat=length):
            got = form_clusters(list(labels))
            runs = oracles.run_members(list(labels))
            ok &= got.n_clusters == len(runs)
            for k, members in enumerate(runs):
                ok &= got.cluster_members[k] == members
                ok &= got.cluster_class[k] == labels[members[0]]
            n_cases += 1
    record_criterion(4, ok, f"cluster formation matches maximal-run brute force on "
                            f"all {n_cases} binary sequences of length <= 8")
    assert ok and n_cases == 510  # 2 + 4 + ... + 256


# --------------------------------------------------------------------------
# Criterion 5: protocol integrity — byte-identical CSVs, offline recompute.
# --------------------------------------------------------------------------

def test_criterion_5_protocol_integrity(tiny_corpus, tmp_path):
    spec = ProtocolSpec()  # alphas {0.1,0.2,0.3}, betas {...}, seeds {1,10,13452}
    cfg = ModelConfig(C=5, d=8, n_coarse=2, n_fine=4, tau=2, heads=2,
                      l_seg=1, n_queries=3, max_len=64)
    models = {s: AnticipationModel(cfg, torch.Generator().manual_seed(s))
              for s in spec.seeds}
    summary = run_protocol(models, tiny_corpus, spec, tmp_path / "a", cfg.n_fine)
    run_protocol(models, tiny_corpus, spec, tmp_path / "b", cfg.n_fine)

    identical = all(
        (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        for name in ("protocol.csv", "summary.csv"))
    recomputed = recompute_summary(tmp_path / "a" / "protocol.csv")
    cells_match = set(summary) == set(recomputed) and all(
        abs(summary[k] - recomputed[k]) <= 1e-12 * max(1.0, abs(summary[k]))
        for k in summary)
    ok = identical and cells_match
    record_criterion(5, ok, f"protocol integrity: {len(summary)} cells equal offline "
                            f"recomputation; CSVs byte-identical across invocations "
                            f"(seeds {list(spec.seeds)})")
    assert ok


# --------------------------------------------------------------------------
# Criteria 6 and 7 share fully trained models on the default corpus.
# --------------------------------------------------------------------------

ABLATION_SEEDS = (1, 10, 13452)


@pytest.fixture(scope="session")
def trained_runs():
    """Train multimodal and unimodal variants for each protocol seed."""
    corpus = generate_corpus(default_corpus_spec(seed=0))
    base = ModelConfig()
    runs, timings = {}, {}
    for variant in ("multimodal", "unimodal"):
        cfg = variant_config(base, variant)
        for seed in ABLATION_SEEDS:
            t0 = time.time()
            runs[(variant, seed)] = train_two_stage(corpus, cfg, TrainConfig(seed=seed))
            timings[(variant, seed)] = time.time() - t0
    return runs, timings, base


@pytest.mark.slow
def test_criterion_6_desk_scale_end_to_end(trained_runs):
    runs, timings, cfg = trained_runs
    run = runs[("multimodal", 1)]
    elapsed = timings[("multimodal", 1)]
    chance = chance_levels(run.holdout_split, cfg.n_coarse, cfg.n_fine)

    seg = segmentation_accuracy(run.model, run.holdout_split)
    moc = mean_moc(run.model, run.holdout_split, 0.2, 0.5, cfg.n_fine)
    ok = elapsed < 600 and seg >= 2 * chance["seg_acc"] and moc >= 3 * chance["moc"]
    record_criterion(6, ok, f"desk-scale end-to-end: train {elapsed:.0f}s (<600s), "
                            f"holdout seg acc {seg:.3f} (>= {2 * chance['seg_acc']:.3f}), "
                            f"holdout MoC(0.2, 0.5) {moc:.3f} (>= {3 * chance['moc']:.3f})")
    assert ok, (elapsed, seg, moc)


@pytest.mark.slow
def test_criterion_7_directional_ablations(trained_runs):
    runs, _, cfg = trained_runs
    means = {}
    for variant in ("multimodal", "unimodal"):
        mocs = []
        for seed in ABLATION_SEEDS:
            run = runs[(variant, seed)]
            for alpha in (0.1, 0.2):
                mocs.append(mean_moc(run.model, run.holdout_split, alpha, 0.5,
                                     cfg.n_fine))
        means[variant] = float(np.mean(mocs))
    # the multilevel arms reuse the same trained models: disabling the fine
    # branch is the single mechanism behind both ablation tables
    multi, uni = means["multimodal"], means["unimodal"]
    ok = multi >= uni
    record_criterion(7, ok, f"directional ablations over seeds {list(ABLATION_SEEDS)}, "
                            f"alpha in {{0.1, 0.2}}: multimodal/multilevel "
                            f"{multi:.3f} vs unimodal/no_multilevel {uni:.3f} "
                            f"(delta {multi - uni:+.3f})")
    assert ok, means


# --------------------------------------------------------------------------
# Criterion 8: learning-rate schedule checkpoints.
# --------------------------------------------------------------------------

def test_criterion_8_lr_schedule():
    cfg = TrainConfig(epochs=60, warmup_epochs=10, lr_peak=1e-3)
    eps = 1e-9
    checks = {
        "lr(0)=0": lr_schedule(0, cfg) == 0.0,
        "lr(10)=1e-3": abs(lr_schedule(10, cfg) - 1e-3) < 1e-18,
        "lr(35)=5e-4": abs(lr_schedule(35, cfg) - 5e-4) < 1e-15,
        "lr(60-eps)->0": lr_schedule(60 - eps, cfg) < 1e-9,
        "continuity": abs(lr_schedule(10 - eps, cfg) - lr_schedule(10 + eps, cfg)) < 1e-12,
    }
    ok = all(checks.values())
    record_criterion(8, ok, "lr schedule: 0 at epoch 0, 1e-3 at warmup end, 5e-4 at "
                            "cosine midpoint, ->0 at the end, continuous at the "
                            "warmup boundary (1e-12)")
    assert ok, checks
