"""The eight acceptance criteria, each at its stated tolerance and runtime budget.

Every test records one PASS/FAIL line, printed in the terminal summary.
"""

import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from auwgcn import model as M
from auwgcn import spotting, synthdata, verify
from auwgcn.benchmark import run_loso_benchmark, synthetic_run_config
from auwgcn.training import train_fold

ABLATION_SEEDS = (0, 1, 2, 3, 4)


def record(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def checks_pass(number, results, budget):
    seconds = sum(r.seconds for r in results)
    ok = all(r.passed for r in results) and seconds <= budget
    summary = "; ".join(r.line() for r in results)
    return record(number, ok, f"{summary} [{seconds:.1f}s, budget {budget}s]")


@pytest.mark.slow
def test_1_gradient_correctness():
    results = [verify.run_grad_check(name, seeds=100) for name in verify.GRAD_CHECKS]
    assert checks_pass(1, results, budget=120)


def test_2_proposal_oracle():
    assert checks_pass(2, [verify.oracle_proposals(instances=200)], budget=10)


def test_3_nms_and_matching_oracles():
    assert checks_pass(3, [verify.oracle_nms(instances=200), verify.oracle_match(instances=200)], budget=10)


def test_4_adjacency():
    assert checks_pass(4, [verify.oracle_adjacency()], budget=5)


def test_5_receptive_field():
    assert checks_pass(5, [verify.receptive_field_check()], budget=5)


_benchmarks: dict = {}


def benchmark(seed, adjacency):
    key = (seed, adjacency)
    if key not in _benchmarks:
        ds = synthdata.generate_dataset(synthdata.SynthConfig(seed=seed))
        _benchmarks[key] = run_loso_benchmark(ds, synthetic_run_config(adjacency=adjacency))
    return _benchmarks[key]


@pytest.mark.slow
def test_6_synthetic_end_to_end():
    cfg = synthdata.SynthConfig()
    assert cfg.signal_amp == pytest.approx(5 * cfg.noise_sigma)
    assert (cfg.subjects, cfg.videos_per_subject, cfg.fps, cfg.video_seconds) == (4, 2, 30.0, 60.0)
    run = synthetic_run_config()
    assert (run.spot.thr_ap, run.spot.nms_iou) == (0.4, 0.5)
    res = benchmark(0, "prior")
    s = res.summary
    ok = s.overall.f1 >= 0.70 and s["macro"].f1 >= 0.80 and res.seconds <= 15 * 60
    detail = f"overall F1 {s.overall.f1:.4f} (>= 0.70), macro F1 {s['macro'].f1:.4f} (>= 0.80), {res.seconds:.0f}s"
    assert record(6, ok, detail)


@pytest.mark.slow
def test_7_prior_adjacency_not_worse_than_uniform():
    f1 = {
        mode: [benchmark(seed, mode).summary.overall.f1 for seed in ABLATION_SEEDS]
        for mode in ("prior", "uniform")
    }
    prior, uniform = np.mean(f1["prior"]), np.mean(f1["uniform"])
    detail = f"mean overall F1 prior {prior:.4f} vs uniform {uniform:.4f} over seeds {list(ABLATION_SEEDS)}"
    assert record(7, prior >= uniform, detail)


@pytest.mark.slow
def test_8_determinism(tmp_path):
    ds = synthdata.generate_dataset(synthdata.SynthConfig())
    run = synthetic_run_config()
    held = ds.subjects[0]
    blobs = []
    t0 = time.perf_counter()
    for attempt in ("a", "b"):
        fold = train_fold(ds, held, run.train, run.model)
        ckpt = tmp_path / f"{attempt}.ckpt"
        M.save_checkpoint(fold.checkpoint, ckpt)
        loaded = M.load_checkpoint(ckpt)
        props = []
        for v in ds.videos_of(held):
            props += spotting.spot_video(loaded.params, loaded.adjacency, v, run.train, run.spot)
        csv = tmp_path / f"{attempt}.csv"
        spotting.write_proposals(props, csv)
        blobs.append((ckpt.read_bytes(), csv.read_bytes()))
    ok = blobs[0] == blobs[1] and len(blobs[0][1].splitlines()) > 1
    detail = f"checkpoints and proposal CSVs byte-identical across two runs ({time.perf_counter() - t0:.0f}s)"
    assert record(8, ok, detail)

