"""Acceptance suite, one test per criterion.

Each test records a single ``criterion N: PASS/FAIL ...`` line; the lines
are printed in the terminal summary (see conftest.py). The trained glyph
model is built once per session and shared by criteria 4 to 7; that run
alone takes roughly half an hour on one CPU core.
"""

import copy
import time
from dataclasses import replace

import numpy as np
import pytest

from midz.checkpoint import bundle_tensors, encode_tensors, load_checkpoint, save_checkpoint
from midz.cli import main
from midz.data import generate_dataset
from midz.estimator import train_gaussian_bound
from midz.evaluation import (ProbeConfig, ablation_suite, compute_representations, evaluate, distance_to_ideal,
                             knn_classify, lambda_sweep, retrieve)
from midz.gradcheck import CASES, TOLERANCE, run_gradcheck
from midz.objectives import make_negative_pairing
from midz.trainer import TrainConfig, train_exclusive, train_shared

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)


@pytest.fixture(scope="session")
def glyph_data():
    return generate_dataset("glyph", 6000, seed=0)


@pytest.fixture(scope="session")
def trained(glyph_data):
    """Default glyph run, 3000 + 3000 steps; keeps a copy of the stage-1 model."""
    cfg = TrainConfig()
    t0 = time.perf_counter()
    stage1 = train_shared(glyph_data, cfg)
    t1 = time.perf_counter()
    stage1_copy = copy.deepcopy(stage1)
    stage2 = train_exclusive(glyph_data, cfg, stage1)
    t2 = time.perf_counter()
    return {"config": cfg, "stage1": stage1_copy, "stage2": stage2,
            "seconds": (t1 - t0, t2 - t1)}


@pytest.fixture(scope="session")
def baseline_report(trained, glyph_data):
    return evaluate(trained["stage2"], glyph_data, ProbeConfig(), domains=("x",))


class TestAcceptance:
    def test_criterion_1_gaussian_estimator(self):
        t0 = time.perf_counter()
        bounds = {rho: train_gaussian_bound(rho) for rho in (0.0, 0.5, 0.9)}
        elapsed = time.perf_counter() - t0
        ok = (-1.45 <= bounds[0.0] <= -1.30
              and bounds[0.9] - bounds[0.0] >= 0.3
              and bounds[0.5] >= bounds[0.0] - 0.02
              and bounds[0.9] >= bounds[0.5] - 0.02
              and elapsed <= 120)
        record(1, ok, f"bounds {', '.join(f'rho={r}: {b:.4f}' for r, b in bounds.items())}; {elapsed:.0f} s")
        assert ok

    def test_criterion_2_gradient_suite(self):
        t0 = time.perf_counter()
        results = run_gradcheck(seeds=range(10))
        elapsed = time.perf_counter() - t0
        worst = max(results, key=lambda r: r.rel_error)
        ops_checked = {r.op for r in results}
        ok = all(r.passed for r in results) and ops_checked == set(CASES) and elapsed <= 60
        record(2, ok, f"{len(ops_checked)} ops x 10 seeds, worst {worst.op} {worst.rel_error:.2e} "
                      f"(< {TOLERANCE:g}); {elapsed:.1f} s")
        assert ok

    def test_criterion_3_metric_reproduction(self):
        d1 = distance_to_ideal((0.0822, 0.9448), (0.0833, 1.0))
        d2 = distance_to_ideal((0.0883, 0.9427), (0.0833, 1.0))
        d3 = distance_to_ideal((0.0996, 0.1008, 0.0995, 0.9999, 0.9999, 0.9999), (0.1, 0.1, 0.1, 1.0, 1.0, 1.0))
        got = tuple(round(d, 4) for d in (d1, d2, d3))
        ok = got == (0.0563, 0.0623, 0.0020)
        record(3, ok, f"distances {got[0]:.4f}, {got[1]:.4f}, {got[2]:.4f}")
        assert ok

    def test_criterion_4_disentanglement(self, trained, baseline_report):
        r = baseline_report
        s_glyph, s_color = r.accuracy("S_x", "glyph"), r.accuracy("S_x", "color")
        e_glyph, e_color = r.accuracy("E_x", "glyph"), r.accuracy("E_x", "color")
        minutes = sum(trained["seconds"]) / 60
        ok = (s_glyph >= 0.90 and abs(s_color - 1 / 12) <= 0.07
              and e_color >= 0.90 and abs(e_glyph - 1 / 10) <= 0.10
              and minutes <= 30)
        record(4, ok, f"S: glyph {s_glyph:.3f} color {s_color:.3f}; E: color {e_color:.3f} glyph {e_glyph:.3f}; "
                      f"training {minutes:.1f} min")
        assert ok

    def test_criterion_5_ablation_directions(self, trained, glyph_data):
        cache = {"baseline": copy.deepcopy(trained["stage1"])}
        rows = {r["variant"]: r["accuracies"] for r in
                ablation_suite(glyph_data, trained["config"], ("baseline", "non_ssr", "beta_sh0"),
                               ProbeConfig(), stage1_cache=cache)}
        color_gain = rows["non_ssr"]["color"] - rows["baseline"]["color"]
        glyph_drop = rows["baseline"]["glyph"] - rows["beta_sh0"]["glyph"]
        ok = color_gain >= 0.50 and glyph_drop >= 0.05
        record(5, ok, f"non-SSR color gain {color_gain:+.3f} (>= 0.50); beta_sh=0 glyph drop {glyph_drop:+.3f} "
                      f"(>= 0.05)")
        assert ok

    def test_criterion_6_lambda_sensitivity(self, trained, glyph_data):
        rows = lambda_sweep(glyph_data, trained["config"], copy.deepcopy(trained["stage1"]),
                            (0.0, 0.005, 0.01, 0.025, 0.05), ProbeConfig())
        glyph = {r["lambda"]: r["accuracy"] for r in rows if r["factor"] == "glyph"}
        chance = 1 / 10
        ok = (glyph[0.0] - chance >= 0.20 and abs(glyph[0.025] - chance) <= 0.10
              and glyph[0.025] <= glyph[0.0])
        record(6, ok, "E glyph accuracy " + ", ".join(f"lambda={k:g}: {v:.3f}" for k, v in glyph.items()))
        assert ok

    def test_criterion_7_knn_and_retrieval(self, trained, glyph_data):
        rng = np.random.default_rng(7)
        gallery = rng.standard_normal((500, 16)).astype(np.float32)
        labels = rng.integers(0, 10, 500)
        queries = rng.standard_normal((500, 16)).astype(np.float32)
        d2 = ((queries.astype(np.float64)[:, None, :] - gallery.astype(np.float64)[None]) ** 2).sum(-1)
        brute = labels[np.argmin(d2, axis=1)]
        knn_ok = np.array_equal(knn_classify(queries, gallery, labels, 1), brute)

        reps = compute_representations(trained["stage2"], glyph_data.images_x, "shared", "x")
        glyphs = glyph_data.labels_x[:, 0]
        hits = []
        for q in range(50):
            top = [i for i in retrieve(reps[q], reps, 11) if i != q][:10]
            hits.append(int((glyphs[top] == glyphs[q]).sum()))
        mean_hits = float(np.mean(hits))
        ok = knn_ok and mean_hits >= 8
        record(7, ok, f"kNN(N=1) == brute force on 500 points: {knn_ok}; "
                      f"same-glyph items in top-10 over 50 queries: mean {mean_hits:.2f}, min {min(hits)}")
        assert ok

    def test_criterion_8_reproducibility(self, tmp_path):
        small = ["--n-pairs", "128", "--batch-size", "16", "--steps-shared", "6", "--steps-exclusive", "6",
                 "--seed", "5"]
        digests = []
        for run in ("a", "b"):
            out = tmp_path / run
            assert main(["train", *small, "--out-dir", str(out)]) == 0
            ckpt = out / "train" / "stage2.midz"
            assert main(["probe", *small, "--out-dir", str(out), "--checkpoint", str(ckpt),
                         "--probe-steps", "50"]) == 0
            digests.append((ckpt.read_bytes(), (out / "train" / "train_log.csv").read_bytes(),
                            (out / "probe" / "report.json").read_bytes(),
                            (out / "probe" / "report.csv").read_bytes()))
        runs_equal = digests[0] == digests[1]

        data = generate_dataset("glyph", 128, seed=5)
        cfg = TrainConfig(n_pairs=128, batch_size=16, steps_shared=6, steps_exclusive=6, seed=5)
        straight = encode_tensors(bundle_tensors(train_exclusive(data, cfg, train_shared(data, cfg))))
        resumed_ok = True
        for mid_cfg, stage in ((replace(cfg, steps_shared=3), 1), (replace(cfg, steps_exclusive=3), 2)):
            if stage == 1:
                half = train_shared(data, mid_cfg)
            else:
                half = train_exclusive(data, mid_cfg, train_shared(data, cfg))
            path = tmp_path / f"mid{stage}.midz"
            save_checkpoint(half, path)
            bundle = load_checkpoint(path)
            if stage == 1:
                bundle = train_shared(data, cfg, bundle)
            bundle = train_exclusive(data, cfg, bundle)
            resumed_ok &= encode_tensors(bundle_tensors(bundle)) == straight
        ok = runs_equal and resumed_ok
        record(8, ok, f"identical checkpoints/logs/reports across runs: {runs_equal}; "
                      f"midpoint resume (stage 1 and stage 2) bit-exact: {resumed_ok}")
        assert ok

    def test_criterion_9_pairing_fixed_point_free(self):
        bad = [(b, s) for b in range(2, 257) for s in range(100)
               if np.any(make_negative_pairing(b, s) == np.arange(b))]
        perms = all(np.array_equal(np.sort(make_negative_pairing(b, 0)), np.arange(b)) for b in range(2, 257))
        ok = not bad and perms
        record(9, ok, f"255 batch sizes x 100 seeds, fixed points found: {len(bad)}")
        assert ok
