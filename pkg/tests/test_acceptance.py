"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The training criteria (7, 8, 9) run full 1500-step desk-scale trainings and
take about 20 minutes together on one CPU core.
"""

import time

import numpy as np
import pytest

from gcfs.cli import main
from gcfs.dataio import synthetic_pairs
from gcfs.gcfeat import GCStackConfig, NodeTensor, fmap_to_nodes, graph_conv, nodes_to_fmap, permute_nodes, resgcn_block
from gcfs.metrics import psnr, ssim
from gcfs.models import ModelConfig, forward
from gcfs.tensor import Tensor, no_grad
from gcfs.trainer import (
    TrainConfig,
    baseline_report,
    checkpoint_bytes,
    identity_gc,
    init_params,
    load_checkpoint,
    log_to_csv,
    save_checkpoint,
    train,
)
from gcfs.wsgraph import aggregator_matrix, concentration_experiment, relabel, spectral_radius, ws_generate

MINI_DEBLUR = ModelConfig(task="deblur", channels=32, enc_blocks=3, dec_blocks=3,
                          gc=GCStackConfig(f=8, blocks=2, degree=4))
MINI_SR = ModelConfig(task="sr", channels=32, sr_blocks=8, scale=2, gc=GCStackConfig(f=8, blocks=2, degree=4))
DESK_LR = 1e-3
STEPS = 1500


def verdict(report_line, n, ok, text):
    report_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {text}")
    return ok


# ---------------------------------------------------------------- 1

def test_criterion_01_gradient_fidelity(tmp_path, report_line):
    t0 = time.perf_counter()
    code = main(["gradcheck", "--all", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    rows = (tmp_path / "gradcheck.csv").read_text().splitlines()[1:]
    errs = [float(r.split(",")[2]) for r in rows]
    names = {r.split(",")[0] for r in rows}
    seeds = {r.split(",")[1] for r in rows}
    ok = code == 0 and max(errs) < 1e-5 and len(seeds) == 5 and elapsed < 120 \
        and {"gcresnet_tiny", "gcedsr_tiny", "conv2d"} <= names
    assert verdict(report_line, 1, ok, f"max rel err {max(errs):.2e} over {len(names)} checks x {len(seeds)} seeds, "
                                      f"{elapsed:.1f}s")


# ---------------------------------------------------------------- 2

def test_criterion_02_aggregator_spectrum(report_line):
    rng = np.random.default_rng(2024)
    worst_sym, worst_vec, worst_lam = 0.0, 0.0, 0.0
    for i in range(20):
        n = int(rng.integers(8, 129))
        k = 2 * int(rng.integers(1, min(4, (n - 1) // 2) + 1))
        g = ws_generate(n, k, float(rng.random()), int(rng.integers(0, 2**63)))
        t = aggregator_matrix(g).t
        s = np.sqrt((g.adjacency() + np.eye(n)).sum(axis=1))
        worst_sym = max(worst_sym, float(np.max(np.abs(t - t.T))))
        worst_vec = max(worst_vec, float(np.max(np.abs(t @ s - s))))
        worst_lam = max(worst_lam, abs(spectral_radius(t)[0] - 1.0))
    ok = worst_sym == 0.0 and worst_vec < 1e-10 and worst_lam <= 1e-8
    assert verdict(report_line, 2, ok, f"20 graphs: asymmetry {worst_sym}, |T s - s| {worst_vec:.1e}, "
                                      f"|rho(T) - 1| {worst_lam:.1e}")


# ---------------------------------------------------------------- 3

def test_criterion_03_ws_structure(report_line):
    t0 = time.perf_counter()
    counts = {len(ws_generate(96, 4, rho, 3 * 1_000_003 + gi).edges)
              for rho in (0.0, 0.9) for gi in range(100)}
    rows = concentration_experiment(96, 4, [0.0, 0.9], 100, seed=3)
    elapsed = time.perf_counter() - t0
    lattice, rewired = rows
    ok = (counts == {192} and all(r["all_means_equal_k"] for r in rows) and lattice["pooled_variance"] == 0.0
          and rewired["pooled_variance"] > 0.0 and elapsed < 10)
    assert verdict(report_line, 3, ok, f"edge counts {sorted(counts)}, pooled variance rho=0.0 "
                                      f"{lattice['pooled_variance']} vs rho=0.9 {rewired['pooled_variance']:.4f}, "
                                      f"{elapsed:.1f}s")


# ---------------------------------------------------------------- 4

def test_criterion_04_round_trip(report_line):
    rng = np.random.default_rng(4)
    exact = 0
    for _ in range(50):
        shape = tuple(int(v) for v in rng.integers(1, 9, size=4))
        x = rng.normal(size=shape).astype(np.float32)
        exact += nodes_to_fmap(fmap_to_nodes(Tensor(x))).data.tobytes() == x.tobytes()
    assert verdict(report_line, 4, exact == 50, f"{exact}/50 random shapes bit-exact")


# ---------------------------------------------------------------- 5

def _brute(t, x, theta):
    p_, n, f = x.shape
    out = np.zeros((p_, n, theta.shape[1]))
    for p in range(p_):
        for i in range(n):
            for j in range(n):
                for a in range(f):
                    out[p, i] += t[i, j] * x[p, j, a] * theta[a]
    return out


def test_criterion_05_permutation_equivariance(report_line):
    worst, worst_brute = 0.0, 0.0
    for n in (4, 6, 8):
        for trial in range(3):
            rng = np.random.default_rng([n, trial])
            g = ws_generate(n, 2, 0.8, trial)
            perm = rng.permutation(n)
            x = rng.normal(size=(4, n, 3)).astype(np.float32)
            theta = rng.normal(size=(3, 2)).astype(np.float32)
            agg, agg_p = aggregator_matrix(g), aggregator_matrix(relabel(g, perm))
            lhs = graph_conv(NodeTensor(Tensor(permute_nodes(x, perm)), (1, n, 1, 4)), agg_p, Tensor(theta)).data.data
            rhs = permute_nodes(graph_conv(NodeTensor(Tensor(x), (1, n, 1, 4)), agg, Tensor(theta)).data.data, perm)
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
            x64, th64 = x.astype(np.float64), theta.astype(np.float64)
            b_l = _brute(agg_p.t, permute_nodes(x64, perm), th64)
            b_r = permute_nodes(_brute(agg.t, x64, th64), perm)
            worst_brute = max(worst_brute, float(np.max(np.abs(lhs - b_l))), float(np.max(np.abs(rhs - b_r))))
    ok = worst < 1e-6 and worst_brute < 1e-5
    assert verdict(report_line, 5, ok, f"max |lhs - rhs| {worst:.1e} (32-bit), vs brute force {worst_brute:.1e}, "
                                      "n in {4,6,8} x 3 permutations")


# ---------------------------------------------------------------- 6

def test_criterion_06_identity_degeneracies(report_line):
    rng = np.random.default_rng(6)
    agg = aggregator_matrix(ws_generate(32, 4, 0.9, 0))
    x = rng.normal(size=(10, 32, 8)).astype(np.float32)
    zero = Tensor(np.zeros((8, 8), dtype=np.float32))
    res_ok = resgcn_block(NodeTensor(Tensor(x), (1, 32, 2, 5)), agg, zero, zero).data.data.tobytes() == x.tobytes()

    params = init_params(MINI_DEBLUR, 6)
    params["tail.w"].data[:] = 0
    params["tail.b"].data[:] = 0
    img = rng.random((2, 3, 32, 32)).astype(np.float32)
    with no_grad():
        net_ok = forward(Tensor(img), MINI_DEBLUR, params).data.tobytes() == img.tobytes()
    assert verdict(report_line, 6, res_ok and net_ok,
                   f"ResGCN zero weights identity {res_ok}, GCResNet zero tail identity {net_ok}")


# ---------------------------------------------------------------- 7 / 8

@pytest.fixture(scope="module")
def deblur_data():
    return synthetic_pairs("deblur", 64, 32, seed=1), synthetic_pairs("deblur", 16, 32, seed=2)


_RUNS: dict = {}


def _deblur_run(arm: str, seed: int, data) -> tuple[float, float]:
    """Final validation PSNR and CPU seconds for one training run (cached)."""
    if (arm, seed) not in _RUNS:
        cfg = MINI_DEBLUR if arm == "gc" else identity_gc(MINI_DEBLUR)
        pairs, val = data
        t0 = time.process_time()
        _, rows = train(cfg, pairs, TrainConfig(lr0=DESK_LR, total_steps=STEPS, batch=4, seed=seed,
                                                eval_every=STEPS), val)
        _RUNS[arm, seed] = (rows[-1]["eval_psnr"], time.process_time() - t0)
    return _RUNS[arm, seed]


@pytest.mark.slow
def test_criterion_07_desk_deblur(deblur_data, report_line):
    base = baseline_report(deblur_data[1]).mean_psnr
    final, cpu = _deblur_run("gc", 7, deblur_data)
    ok = final - base >= 1.0 and cpu < 1800
    assert verdict(report_line, 7, ok, f"validation PSNR {final:.3f} dB vs blurred baseline {base:.3f} dB "
                                      f"(gain {final - base:+.3f} dB), {cpu / 60:.1f} min CPU")


@pytest.mark.slow
def test_criterion_08_gc_contribution(deblur_data, report_line):
    seeds = (7, 8, 9)
    gc = [_deblur_run("gc", s, deblur_data)[0] for s in seeds]
    plain = [_deblur_run("identity", s, deblur_data)[0] for s in seeds]
    gap = float(np.mean(gc) - np.mean(plain))
    ok = gap >= -0.05
    detail = ", ".join(f"seed {s}: {a:.3f}/{b:.3f}" for s, a, b in zip(seeds, gc, plain))
    assert verdict(report_line, 8, ok, f"mean PSNR GC {np.mean(gc):.3f} dB vs identity {np.mean(plain):.3f} dB, "
                                      f"signed gap {gap:+.3f} dB (gate -0.05); {detail}")


# ---------------------------------------------------------------- 9

@pytest.mark.slow
def test_criterion_09_desk_sr(report_line):
    pairs, val = synthetic_pairs("sr", 64, 48, seed=1), synthetic_pairs("sr", 16, 48, seed=2)
    base = baseline_report(val).mean_psnr
    t0 = time.process_time()
    _, rows = train(MINI_SR, pairs, TrainConfig(lr0=DESK_LR, total_steps=STEPS, batch=4, loss="mse", seed=7,
                                                eval_every=STEPS), val)
    cpu = time.process_time() - t0
    final = rows[-1]["eval_psnr"]
    ok = final - base >= 0.3 and cpu < 1800
    assert verdict(report_line, 9, ok, f"x2 validation PSNR {final:.3f} dB vs bicubic {base:.3f} dB "
                                      f"(gain {final - base:+.3f} dB), {cpu / 60:.1f} min CPU")


# ---------------------------------------------------------------- 10

def test_criterion_10_metrics_sanity(report_line):
    rng = np.random.default_rng(10)
    a = rng.uniform(0.1, 0.9, size=(3, 24, 24))
    b = rng.uniform(0.0, 1.0, size=(3, 24, 24))
    p = psnr(a, a + 1 / 255)
    s_self = ssim(a, a)
    sym = psnr(a, b) == psnr(b, a) and abs(ssim(a, b) - ssim(b, a)) < 1e-12
    ok = abs(p - 48.1308) < 1e-3 and abs(s_self - 1.0) < 1e-9 and sym
    assert verdict(report_line, 10, ok, f"uniform 1/255 PSNR {p:.4f} dB, SSIM(x,x) {s_self!r}, symmetric {sym}")


# ---------------------------------------------------------------- 11

def test_criterion_11_reproducibility(tmp_path, report_line):
    assert main(["make-data", "--task", "deblur", "--count", "6", "--size", "16", "--out", str(tmp_path / "d")]) == 0
    flags = ["train", "--data", str(tmp_path / "d" / "manifest.txt"), "--val", str(tmp_path / "d" / "manifest.txt"),
             "--channels", "8", "--enc-blocks", "1", "--dec-blocks", "1", "--gc-features", "4", "--gc-blocks", "1",
             "--steps", "12", "--eval-every", "4", "--batch", "2", "--lr0", "1e-3"]
    for name in ("a", "b"):
        assert main([*flags, "--out", str(tmp_path / name)]) == 0
    same_run = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
                   for f in ("log.csv", "checkpoint.gcfs", "config.json"))

    ck = load_checkpoint(tmp_path / "a" / "checkpoint.gcfs")
    save_checkpoint(tmp_path / "again.gcfs", ck)
    round_trip = (tmp_path / "again.gcfs").read_bytes() == (tmp_path / "a" / "checkpoint.gcfs").read_bytes()

    pairs = synthetic_pairs("deblur", 6, 16, seed=1)
    cfg = ck.model_cfg
    tcfg = TrainConfig(lr0=1e-3, total_steps=12, batch=2, eval_every=4)
    full, full_rows = train(cfg, pairs, tcfg, pairs)
    half, first = train(cfg, pairs, tcfg, pairs, stop_at=5)
    save_checkpoint(tmp_path / "half.gcfs", half)
    rest_ck, rest = train(cfg, pairs, tcfg, pairs, resume=load_checkpoint(tmp_path / "half.gcfs"))
    resumed = checkpoint_bytes(rest_ck) == checkpoint_bytes(full) and log_to_csv(first + rest) == log_to_csv(full_rows)
    ok = same_run and round_trip and resumed
    assert verdict(report_line, 11, ok, f"rerun byte-identical {same_run}, save/load/save identical {round_trip}, "
                                       f"resume at step 5 bit-exact {resumed}")
