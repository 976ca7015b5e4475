"""End-to-end acceptance suite; each test prints one PASS/FAIL line for its criterion."""

import itertools
import json
import math
import time

import numpy as np
import pytest

from vcsflow import harness
from vcsflow.dsp import design_butterworth_bandpass
from vcsflow.dtw import dtw_cost
from vcsflow.epmetrics import convergence_time, response_time
from vcsflow.models.cnn import CnnModel, cnn_forward, cnn_gradients, mse_loss
from vcsflow.models.pr import design_matrix, fit_pr
from vcsflow.segmentation import SegmentationConfig, match_annotations, precision_recall, segment
from vcsflow.synthgen import TRANSIENT_KINDS, GeneratorConfig, generate_recording, load_annotations
from vcsflow.signals import load_recording

pytestmark = pytest.mark.slow


def random_model(rng, **arch):
    model = CnnModel.initialize(**arch, seed=int(rng.integers(2**32)))
    for _, layer in model.layers():
        layer.bias[:] = 0.5 * rng.normal(size=layer.bias.shape)
        layer.g[:] *= rng.uniform(0.5, 2.0, size=layer.g.shape)
    return model


def test_causality(acceptance):
    acceptance(1, "causality suite (100 triples, bit-identical, < 10 s)")
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    for _ in range(100):
        model = random_model(rng)
        T = int(rng.integers(20, 200))
        x = rng.normal(size=(6, T))
        tp = int(rng.integers(1, T))
        x2 = x.copy()
        x2[:, tp:] = rng.normal(size=(6, T - tp)) * 5
        assert np.array_equal(cnn_forward(model, x)[:tp], cnn_forward(model, x2)[:tp])
    assert time.perf_counter() - t0 < 10.0


def test_translation_equivariance(acceptance):
    acceptance(2, "translation equivariance (100 triples, bit-identical)")
    rng = np.random.default_rng(2)
    for i in range(100):
        model = random_model(rng)
        rf = model.receptive_field
        tau = int(rng.integers(rf + 1, 60))
        T = int(rng.integers(30, 150))
        x = np.concatenate([np.zeros((6, int(rng.integers(1, 20)))), rng.normal(size=(6, T))], axis=1)
        shifted = np.concatenate([np.zeros((6, tau)), x], axis=1)
        y, ys = cnn_forward(model, x), cnn_forward(model, shifted)
        # every layer zero-pads its own input, so with biases the first RF-1 outputs differ by design
        assert np.array_equal(ys[tau + rf - 1:], y[rf - 1:])
        if i % 2 == 0:
            for _, layer in model.layers():
                layer.bias[:] = 0.0
            assert np.array_equal(cnn_forward(model, shifted)[tau:], cnn_forward(model, x))


def test_permutation_insensitivity(acceptance):
    acceptance(3, "permutation insensitivity (50 permutations, 1e-12 relative)")
    rng = np.random.default_rng(3)
    for _ in range(50):
        model = random_model(rng)
        perm = rng.permutation(6)
        x = rng.normal(size=(6, 80))
        permuted = model.copy()
        for layer in (permuted.blocks[0].conv, permuted.blocks[0].skip):
            layer.v = layer.v[:, perm, :].copy()
        y, yp = cnn_forward(model, x), cnn_forward(permuted, x[perm])
        assert np.max(np.abs(yp - y)) <= 1e-12 * np.max(np.abs(y))
        assert np.array_equal(cnn_forward(permuted, x[perm], channel_order=np.argsort(perm)), y)


def test_gradient_oracle(acceptance):
    acceptance(4, "analytic vs finite-difference gradients on 20 tiny models (< 1e-5)")
    rng = np.random.default_rng(4)
    step, worst, worst_elementwise = 1e-6, 0.0, 0.0
    for _ in range(20):
        model = random_model(rng, in_channels=3, channels=3, kernel_size=int(rng.integers(2, 4)), n_blocks=2)
        x, target = rng.normal(size=(3, 32)), rng.normal(size=32)
        _, grads = cnn_gradients(model, x, target)
        for name, p in model.parameters().items():
            fd = np.empty_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + step
                up = mse_loss(model, x, target)
                p[idx] = old - step
                down = mse_loss(model, x, target)
                p[idx] = old
                fd[idx] = (up - down) / (2 * step)
            an = grads[name]
            # relative to the gradient scale of the parameter tensor: elementwise ratios of
            # near-zero components only measure finite-difference roundoff (~eps * loss / step)
            worst = max(worst, np.max(np.abs(fd - an)) / max(np.max(np.abs(fd)), np.max(np.abs(an))))
            worst_elementwise = max(worst_elementwise, np.max(np.abs(fd - an) / np.maximum(
                np.maximum(np.abs(fd), np.abs(an)), 1e-6)))
    print(f"\nworst relative gradient error {worst:.2e} (elementwise with 1e-6 floor {worst_elementwise:.2e})")
    assert worst < 1e-5


def test_pr_recovery(acceptance):
    acceptance(5, "PR recovery (< 1e-6) and residual orthogonality (< 1e-8)")
    rng = np.random.default_rng(5)
    X = rng.uniform(-2, 2, size=(1000, 6))
    truth = np.concatenate([[1.5], rng.normal(size=6), rng.normal(size=6)])
    y = design_matrix(X) @ truth
    model = fit_pr(X, y)
    assert np.max(np.abs(model.coefficients - truth)) < 1e-6
    noisy = y + rng.normal(size=1000)
    A = design_matrix(X)
    r = noisy - A @ fit_pr(X, noisy).coefficients
    assert np.max(np.abs(A.T @ r)) / (np.linalg.norm(A) * np.linalg.norm(noisy)) < 1e-8


def _path_incidence(n, m):
    """Cell-incidence matrix (n*m, n_paths) of every monotone warping path."""
    paths = []

    def walk(i, j, cells):
        if (i, j) == (n - 1, m - 1):
            paths.append(cells)
            return
        for di, dj in ((1, 1), (0, 1), (1, 0)):
            if i + di < n and j + dj < m:
                walk(i + di, j + dj, cells + [(i + di) * m + j + dj])

    walk(0, 0, [0])
    P = np.zeros((n * m, len(paths)))
    for k, cells in enumerate(paths):
        P[cells, k] = 1.0
    return P


def test_dtw_exhaustive_oracle(acceptance):
    acceptance(6, "DTW cost = exhaustive path enumeration, lengths <= 6, 3-value alphabet")
    seqs = {n: np.array(list(itertools.product(range(3), repeat=n)), dtype=float) for n in range(1, 7)}
    checked = mismatches = 0
    for n, m in itertools.product(range(1, 7), repeat=2):
        A, B, P = seqs[n], seqs[m], _path_incidence(n, m)
        cost = np.abs(A[:, None, :, None] - B[None, :, None, :]).reshape(len(A) * len(B), n * m)
        oracle = np.concatenate([(cost[s:s + 20000] @ P).min(axis=1) for s in range(0, len(cost), 20000)])
        dp = np.array([dtw_cost(a, b) for a in A for b in B])
        mismatches += int(np.sum(dp != oracle))
        checked += len(dp)
    print(f"\n{checked} pairs checked, {mismatches} mismatches")
    assert checked == (3 + 9 + 27 + 81 + 243 + 729) ** 2 and mismatches == 0


def test_butterworth(acceptance):
    acceptance(7, "Butterworth: -3 dB at both cutoffs (0.05 dB), DC < 1e-9, stable poles")
    cfg = SegmentationConfig()
    filt = design_butterworth_bandpass(cfg.filter_order, cfg.f_lo_hz, cfg.f_hi_hz, 10.0)
    gains = filt.gain_db([cfg.f_lo_hz, cfg.f_hi_hz])
    assert np.all(np.abs(gains - 20 * np.log10(np.sqrt(0.5))) < 0.05)
    assert abs(filt.frequency_response([0.0])[0]) < 1e-9
    assert np.all(np.abs(filt.poles()) < 1.0)
    assert filt.order == 2 * cfg.filter_order


@pytest.mark.parametrize("fs", [10.0, 20.0])
def test_ep_closed_forms(acceptance, fs):
    acceptance(8, f"EP closed forms: t80 = 8.0 s and t_conv = 3.507 tau, one sample ({fs:g} Hz)")
    onset = 5.0
    t = np.arange(int(60 * fs)) / fs
    ramp = np.clip((t - onset) / 10.0, 0.0, 1.0)
    assert abs(response_time(ramp, 0.8, fs) - onset - 8.0) <= 1 / fs
    for tau in (0.5, 1.0, 2.0):
        x = np.where(t < onset, 0.0, 1.0 - np.exp(-(t - onset) / tau))
        assert abs(convergence_time(x, fs) - onset - (-math.log(0.03)) * tau) <= 1 / fs


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    """Two default pipeline runs with the same seed in separate directories."""
    runs = []
    for name in ("a", "b"):
        root = tmp_path_factory.mktemp(f"pipeline_{name}")
        cfg = harness.load_config(None, data_dir=str(root / "data"), out_dir=str(root / "out"))
        t0 = time.perf_counter()
        harness.cmd_pipeline(cfg)
        runs.append((cfg, time.perf_counter() - t0))
    return runs


def test_segmentation_quality(acceptance, pipeline_runs):
    acceptance(9, "segmentation P/R >= 0.8 at IoU 0.5, >= 100 transients, >= 5 per kind per split")
    cfg, _ = pipeline_runs[0]
    recording = load_recording(cfg.recording_path, id="synth")
    annotations = load_annotations(cfg.annotations_path)
    n_transients = sum(a.kind in TRANSIENT_KINDS for a in annotations)
    assert n_transients >= 100
    counts = match_annotations(segment(recording, cfg.segmentation), annotations, TRANSIENT_KINDS)
    p, r = precision_recall(counts)
    print(f"\nfull recording: {n_transients} transients, precision {p:.3f}, recall {r:.3f}")
    assert p >= 0.8 and r >= 0.8
    quality = json.loads((cfg.out_path / "segmentation_quality.json").read_text())["splits"]
    for split, q in quality.items():
        print(f"{split}: precision {q['precision']:.3f}, recall {q['recall']:.3f}")
        assert q["precision"] >= 0.8 and q["recall"] >= 0.8
    rows = (cfg.out_path / "pattern_counts.csv").read_text().splitlines()[2:]
    for row in rows:
        kind, *values = row.split(",")
        assert all(int(v) >= 5 for v in values), kind


def test_headline_comparison(acceptance, pipeline_runs):
    acceptance(10, "CNN test MSE < 0.5 x PR, CNN q90 E_abs/E_rel below PR, pipeline < 10 min")
    cfg, seconds = pipeline_runs[0]
    pr = json.loads((cfg.out_path / "report_PR_test.json").read_text())
    cnn = json.loads((cfg.out_path / "report_CNN_test.json").read_text())
    print(f"\nMSE PR {pr['mse']:.4g} CNN {cnn['mse']:.4g}; pipeline {seconds:.0f} s")
    assert cnn["mse"] < 0.5 * pr["mse"]
    for metric in ("E_abs", "E_rel"):
        assert cnn["quantile90"][metric] < pr["quantile90"][metric]
    assert seconds < 600


def test_determinism(acceptance, pipeline_runs):
    acceptance(11, "pipeline rerun with the same seed reproduces every report value")
    (a, _), (b, _) = pipeline_runs
    names = sorted(p.name for p in a.out_path.glob("report_*.json"))
    assert len(names) == 4
    for name in names:
        assert json.loads((a.out_path / name).read_text()) == json.loads((b.out_path / name).read_text())
    for pattern in ("comparison.csv", "metrics_*.csv", "prediction_*.csv"):
        for path in a.out_path.glob(pattern):
            assert path.read_bytes() == (b.out_path / path.name).read_bytes(), path.name
