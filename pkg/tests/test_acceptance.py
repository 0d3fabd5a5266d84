"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (see ``conftest.criterion``) that is
repeated in the terminal summary. The desk-scale run (criteria 3, 6, 7) is
trained once per session and shared.

Run only these with ``pytest -m acceptance -s``.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pytest
import torch

from fgdiff import cli
from fgdiff.diffusion import diffusion_loss, make_schedule
from fgdiff.evaluation import InferenceConfig, evaluate, evaluate_sweep, score_windows
from fgdiff.frequency import build_masks, dct2, default_k, fuse, idct2
from fgdiff.motion_data import SynthConfig, stack_windows, synth_corpus
from fgdiff.networks import SkeletonGraph, build_generator, build_predictor, count_parameters
from fgdiff.perturbation import generate_perturbed, generator_objective, record_perturbations
from fgdiff.training import AdversarialTrainer, TrainConfig

from stubs import TinyPredictor

pytestmark = pytest.mark.acceptance

LAMBDA_PIS = (0.0, 0.02, 0.05, 0.10, 0.15)


def vectorized_brute_dct2(x: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II as the literal double sum, evaluated with one einsum."""
    n, m = x.shape
    i, u = np.arange(n), np.arange(n)
    j, v = np.arange(m), np.arange(m)
    cu = np.cos(np.pi * (2 * i[:, None] + 1) * u[None, :] / (2 * n))  # [i, u]
    cv = np.cos(np.pi * (2 * j[:, None] + 1) * v[None, :] / (2 * m))  # [j, v]
    au = np.where(u == 0, np.sqrt(1 / n), np.sqrt(2 / n))
    av = np.where(v == 0, np.sqrt(1 / m), np.sqrt(2 / m))
    return au[:, None] * av[None, :] * np.einsum("ij,iu,jv->uv", x, cu, cv)


# --------------------------------------------------------------------------- desk-scale run


@dataclass
class DeskRun:
    seed: int
    test: object
    test_windows: np.ndarray
    predictor: torch.nn.Module
    generator: torch.nn.Module | None
    base: InferenceConfig
    train_seconds: float


def desk_run(seed: int, lambda_p: float, iters: int, eval_stride: int) -> DeskRun:
    """Train on 200 normal videos, prepare a 250-video test split (50 anomalous)."""
    train_corpus = synth_corpus(SynthConfig(n_videos=200, anomaly_ratio=0.0, seed=seed + 1))
    test = synth_corpus(SynthConfig(n_videos=250, anomaly_ratio=0.2, seed=seed), stride=eval_stride)
    data = torch.as_tensor(stack_windows(train_corpus), dtype=torch.float32)
    tc = TrainConfig(max_iters=iters, seed=seed, lambda_p=lambda_p)
    t0 = time.perf_counter()
    trainer = AdversarialTrainer(data, tc, use_generator=lambda_p > 0)
    trainer.run()
    seconds = time.perf_counter() - t0
    N, C, J = test.shape
    base = InferenceConfig(schedule=tc.schedule(), k=default_k(N, C, J), lambda_dct=0.1, seed=seed)
    gen = trainer.generator.eval() if trainer.generator is not None else None
    return DeskRun(seed, test, stack_windows(test), trainer.predictor.eval(), gen, base, seconds)


@pytest.fixture(scope="session")
def desk():
    """Criterion-6 run: full iteration budget, stride-1 evaluation, perturbations recorded."""
    with record_perturbations() as rec:
        run = desk_run(seed=0, lambda_p=0.1, iters=2000, eval_stride=1)
        t0 = time.perf_counter()
        report = evaluate(run.test, run.predictor, run.generator, run.base, run.test_windows)
        eval_seconds = time.perf_counter() - t0
    return run, report, eval_seconds, rec


# --------------------------------------------------------------------------- criteria


def test_c1_dct_correctness(criterion):
    rng = np.random.default_rng(0)
    shapes = [(int(rng.integers(1, 17)), int(rng.integers(1, 65))) for _ in range(98)] + [(16, 64), (1, 1)]
    mats = [rng.normal(size=s) * rng.uniform(0.1, 10) for s in shapes]
    t0 = time.perf_counter()
    ys = [dct2(x) for x in mats]
    backs = [idct2(y) for y in ys]
    elapsed = time.perf_counter() - t0
    oracle_err = max(float(np.abs(y - vectorized_brute_dct2(x)).max()) for x, y in zip(mats, ys))
    rt_err = max(float(np.abs(b - x).max() / np.abs(x).max()) for x, b in zip(mats, backs))
    pars_err = max(abs(float((y**2).sum()) / float((x**2).sum()) - 1) for x, y in zip(mats, ys))
    ok = oracle_err <= 1e-10 and rt_err <= 1e-6 and pars_err <= 1e-6 and elapsed < 5
    criterion(1, ok, f"oracle max abs err {oracle_err:.2e} (<=1e-10), roundtrip rel {rt_err:.2e}, "
                     f"Parseval rel {pars_err:.2e} (<=1e-6), {elapsed:.3f}s (<5s)")
    assert ok


def test_c2_mask_fusion_exactness(criterion):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(1000):
        N, C, J = int(rng.integers(1, 25)), int(rng.integers(2, 4)), int(rng.integers(1, 18))
        shape = (N, C * J)
        y_o = rng.normal(size=shape)
        if rng.random() < 0.3:  # ties at the threshold
            y_o = np.round(y_o, 1)
        y_g = rng.normal(size=shape)
        lam = float(rng.choice([0.0, 1.0, rng.uniform()]))
        m = build_masks(y_o, lam)
        fused = fuse(y_o, y_g, m)
        low = m.low.astype(bool)
        exact = np.array_equal(fused[low], y_g[low]) and np.array_equal(fused[~low], y_o[~low])
        count = int(low.sum()) == int(round(lam * N * C * J))
        bad += not (exact and count)
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 5
    criterion(2, ok, f"{1000 - bad}/1000 triples exact with popcount round(lambda*N*C*J), {elapsed:.2f}s (<5s)")
    assert ok


def test_c3_perturbation_bounds(desk, criterion):
    _, _, _, rec = desk
    # every call already asserted both bounds inline; the record shows they were exercised.
    # L-inf is exact in working precision; the L2 norm is a float64 reduction over d squares,
    # so it is compared with the same 1e-12 relative slack the inline check uses
    ok = rec.calls > 0 and rec.max_linf_ratio <= 1.0 and rec.max_l2_ratio <= 1.0 + 1e-12
    criterion(3, ok, f"{rec.calls} perturbation calls / {rec.samples} samples in training + evaluation; "
                     f"max |delta|_inf/lambda_p - 1 = {rec.max_linf_ratio - 1:.1e} (<= 0 exactly), "
                     f"max |delta|_2/(sqrt(d) lambda_p) - 1 = {rec.max_l2_ratio - 1:.1e} (<= 1e-12)")
    assert ok


def test_c4_perturbation_raises_reconstruction_error(desk, criterion):
    run, _, _, _ = desk
    pred = run.predictor
    for p in pred.parameters():
        p.requires_grad_(False)
    N, C, J = run.test.shape
    graph = SkeletonGraph.default(J)
    sched = run.base.schedule
    normal = synth_corpus(SynthConfig(n_videos=40, anomaly_ratio=0.0, seed=777))
    pool = torch.as_tensor(stack_windows(normal), dtype=torch.float32)
    t0 = time.perf_counter()
    wins = []
    gaps = []
    try:
        for rep in range(20):
            g = torch.Generator().manual_seed(rep)
            batch = pool[torch.randperm(len(pool), generator=g)[:16]]
            gen = build_generator(graph, N, C, seed=100 + rep)
            opt = torch.optim.Adam(gen.parameters(), lr=0.01)
            for step in range(500):
                obj = generator_objective(batch, pred, gen, 0.1, sched, torch.Generator().manual_seed(step))
                opt.zero_grad(set_to_none=True)
                (-obj).backward()
                opt.step()
            gen.eval()
            with torch.no_grad():
                x_hat = generate_perturbed(batch, 1, gen, 0.1)
            cfg = replace(run.base, seed=rep)
            s_clean = score_windows(batch.numpy(), pred, None, cfg).mean()
            s_pert = score_windows(x_hat.numpy(), pred, None, cfg).mean()
            gaps.append(s_pert - s_clean)
            wins.append(s_pert >= s_clean)
    finally:
        for p in pred.parameters():
            p.requires_grad_(True)
    elapsed = time.perf_counter() - t0
    ok = sum(wins) >= 19 and elapsed < 600
    criterion(4, ok, f"mean S(x_hat) >= mean S(x) in {sum(wins)}/20 repeats (need 19), "
                     f"median gap {np.median(gaps):+.3f}, {elapsed:.0f}s (<600s)")
    assert ok


def test_c5_gradient_fidelity(criterion):
    torch.manual_seed(0)
    sched = make_schedule(10, 1e-4, 0.5)
    pred = TinyPredictor(6, 2, 4)
    n_params = sum(p.numel() for p in pred.parameters())
    batch = torch.randn(4, 6, 2, 4, dtype=torch.float64)
    gen = build_generator(SkeletonGraph.chain(4), 6, 2, seed=0).double()

    def loss_fn():
        return diffusion_loss(batch, pred, gen, 0.1, sched, torch.Generator().manual_seed(3))

    t0 = time.perf_counter()
    grads = torch.autograd.grad(loss_fn(), list(pred.parameters()))
    worst = 0.0
    h = 1e-6
    with torch.no_grad():
        for p, g in zip(pred.parameters(), grads):
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                fd = (up - down) / (2 * h)
                an = g.view(-1)[i].item()
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-3 and n_params <= 500 and elapsed < 60
    criterion(5, ok, f"max relative error {worst:.2e} (<1e-3) over {n_params} parameters, {elapsed:.1f}s (<60s)")
    assert ok


def test_c6_desk_detection(desk, criterion):
    run, report, eval_seconds, _ = desk
    total = run.train_seconds + eval_seconds
    ok = report.auc >= 0.85 and total < 900
    criterion(6, ok, f"frame AUC {report.auc:.4f} (>=0.85) on {len(run.test)} test windows; "
                     f"train {run.train_seconds:.0f}s + eval {eval_seconds:.0f}s = {total:.0f}s (<900s)")
    assert ok


ABLATION_ITERS = int(os.environ.get("FGDIFF_ABLATION_ITERS", "2000"))
ABLATION_STRIDE = 4  # eval windows every 4 frames keeps 50 evaluations per run affordable


def _restride(run: DeskRun, stride: int) -> DeskRun:
    test = synth_corpus(SynthConfig(n_videos=250, anomaly_ratio=0.2, seed=run.seed), stride=stride)
    return replace(run, test=test, test_windows=stack_windows(test))


def test_c7_ablation_directions(desk, criterion):
    run0, _, _, _ = desk
    guided, spread_p, spread_0 = [], [], []
    for seed in range(5):
        if seed == 0:
            pert = _restride(run0, ABLATION_STRIDE)
        else:
            pert = desk_run(seed, 0.1, ABLATION_ITERS, eval_stride=ABLATION_STRIDE)
        plain = desk_run(seed, 0.0, ABLATION_ITERS, eval_stride=ABLATION_STRIDE)
        sweep_p = [r.auc for r in evaluate_sweep(pert.test, pert.predictor, pert.generator, pert.base,
                                                 LAMBDA_PIS)]
        # the plain model has no generator of its own: inference perturbations come from the
        # perturbation-trained generator so both models face identical perturbations
        sweep_0 = [r.auc for r in evaluate_sweep(plain.test, plain.predictor, pert.generator, plain.base,
                                                 LAMBDA_PIS)]
        auc_guided = sweep_p[0]  # lambda_PI = 0 is the plain frequency-guided evaluation
        auc_full = evaluate(pert.test, pert.predictor, pert.generator, replace(pert.base, lambda_dct=1.0),
                            pert.test_windows).auc
        guided.append(auc_guided >= auc_full)
        spread_p.append(max(sweep_p) - min(sweep_p))
        spread_0.append(max(sweep_0) - min(sweep_0))
        print(f"seed {seed}: guided {auc_guided:.4f} vs lambda_dct=1 {auc_full:.4f}; "
              f"spread lambda_p=0.1 {spread_p[-1]:.4f} {np.round(sweep_p, 4).tolist()} vs "
              f"lambda_p=0 {spread_0[-1]:.4f} {np.round(sweep_0, 4).tolist()}", flush=True)
    a_votes = sum(guided)
    b_votes = sum(p < z for p, z in zip(spread_p, spread_0))
    ok = a_votes >= 3 and b_votes >= 3
    criterion(7, ok, f"(a) guided >= unguided in {a_votes}/5 seeds, (b) smaller lambda_PI spread with "
                     f"perturbation training in {b_votes}/5 seeds (majority needed for both); "
                     f"{ABLATION_ITERS} iterations, eval stride {ABLATION_STRIDE}")
    assert ok


def test_c8_cli_determinism(tmp_path, criterion):
    small = ["--set", "n_videos=20", "--set", "n_train_videos=20", "--set", "max_iters=40",
             "--set", "eval_stride=2", "--set", "lambda_pi=0,0.05"]
    assert cli.main(["synth", "--out", str(tmp_path / "data"), *small]) == 0
    trees = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["train", "--data", str(tmp_path / "data" / "train"), "--out", str(out), *small]) == 0
        assert cli.main(["eval", "--data", str(tmp_path / "data" / "test"), "--out", str(out), *small]) == 0
        files = sorted(p for p in out.rglob("*") if p.is_file() and p.suffix in (".tsv", ".csv", ".json"))
        trees.append({str(p.relative_to(out)): p.read_bytes() for p in files})
    a, b = trees
    n_scores = sum(k.endswith(".csv") for k in a)
    ok = a == b and "metrics.tsv" in a and n_scores > 0
    criterion(8, ok, f"{len(a)} output files (metrics log, reports, {n_scores} score files) byte-identical "
                     f"across two train+eval runs")
    assert ok


def test_c9_parameter_budget(criterion):
    counts = {}
    for J in (8, 17):
        g = SkeletonGraph.default(J)
        counts[J] = (count_parameters(build_predictor(g, 24, 2)), count_parameters(build_generator(g, 24, 2)))
    worst = max(p + q for p, q in counts.values())
    ok = worst <= 1_000_000 and all(q <= 0.2 * p for p, q in counts.values())
    detail = "; ".join(f"J={J}: predictor {p:,} + generator {q:,} = {p + q:,}" for J, (p, q) in counts.items())
    criterion(9, ok, f"{detail} (<=1,000,000)")
    assert ok


def test_c10_hr_avenue(tmp_path, criterion):
    root = os.environ.get("FGDIFF_HR_AVENUE")
    if not root or not (Path(root) / "train").is_dir() or not (Path(root) / "test").is_dir():
        criterion(10, None, "HR-Avenue trajectories not supplied (set FGDIFF_HR_AVENUE=<dir with train/ test/>)")
        pytest.skip("HR-Avenue data absent")
    root = Path(root)
    common = ["--out", str(tmp_path), "--set", "graph=coco17"]
    assert cli.main(["train", "--data", str(root / "train"), *common]) == 0
    assert cli.main(["eval", "--data", str(root / "test"), *common]) == 0
    value = 100 * float((tmp_path / "eval_metrics.tsv").read_text().splitlines()[1].split("\t")[1])
    ok = abs(value - 90.7) <= 2.0
    criterion(10, ok, f"HR-Avenue frame AUC {value:.1f} (target 90.7 +- 2.0)")
    assert ok
