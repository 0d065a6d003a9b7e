"""Self-check harness: finite-difference gradient checks and oracle equivalence.

Each check returns a :class:`CheckResult`; ``run_all`` drives them and the
``verify`` CLI command prints one line per check.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import model as M
from . import numerics as nx
from . import reference as ref
from .au_prior import AuRoiMap, count_cooccurrence, normalize
from .evaluation import match
from .feature_io import AnnotationInstance
from .numerics import Parameter, finite_diff_check
from .spotting import Proposal, generate_proposals, nms
from .training import KindTargets, focal_loss

OP_TOL = 1e-3
COMPOSITE_TOL = 1e-2
F32_MIN_GRAD = 1e-4
F32_EPS = 5e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_error: float | None = None
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        err = f" max_rel_err={self.max_error:.2e}" if self.max_error is not None else ""
        extra = f" ({self.detail})" if self.detail else ""
        return f"{status} {self.name}{err}{extra} [{self.seconds:.2f}s]"


def _fd(loss, params, eps=1e-5, **kw) -> float:
    return finite_diff_check(loss, params, eps=eps, **kw)


def _weighted(out: np.ndarray, r: np.ndarray) -> float:
    return float(np.sum(out * r, dtype=np.float64))


# ---------------------------------------------------------------------------
# per-op gradient checks, float64


def grad_matmul(rng: np.random.Generator) -> float:
    m, k, n = rng.integers(1, 7, size=3)
    a, b = Parameter(rng.normal(size=(m, k))), Parameter(rng.normal(size=(k, n)))
    r = rng.normal(size=(m, n))
    a.grad[...], b.grad[...] = nx.matmul_backward(a.value, b.value, r)
    return _fd(lambda: _weighted(nx.matmul(a.value, b.value), r), [a, b])


def grad_relu(rng: np.random.Generator) -> float:
    shape = tuple(rng.integers(1, 8, size=2))
    # keep every input clear of the kink at 0
    x = Parameter(rng.choice([-1, 1], size=shape) * rng.uniform(0.1, 2.0, size=shape))
    r = rng.normal(size=shape)
    x.grad[...] = nx.relu_backward(x.value, r)
    return _fd(lambda: _weighted(nx.relu(x.value), r), [x])


def grad_sigmoid(rng: np.random.Generator) -> float:
    x = Parameter(rng.normal(scale=3.0, size=tuple(rng.integers(1, 8, size=2))))
    r = rng.normal(size=x.shape)
    x.grad[...] = nx.sigmoid_backward(nx.sigmoid(x.value), r)
    return _fd(lambda: _weighted(nx.sigmoid(x.value), r), [x])


def grad_softmax(rng: np.random.Generator) -> float:
    x = Parameter(rng.normal(scale=3.0, size=(int(rng.integers(2, 6)), int(rng.integers(1, 8)))))
    r = rng.normal(size=x.shape)
    x.grad[...] = nx.softmax_backward(nx.softmax(x.value, axis=0), r, axis=0)
    return _fd(lambda: _weighted(nx.softmax(x.value, axis=0), r), [x])


def grad_conv1d(rng: np.random.Generator) -> float:
    c_in, c_out, t = int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 14))
    k = int(rng.choice([1, 3, 5]))
    d = int(rng.integers(1, 4))
    x = Parameter(rng.normal(size=(c_in, t)))
    w = Parameter(rng.normal(size=(c_out, c_in, k)))
    b = Parameter(rng.normal(size=c_out))
    r = rng.normal(size=(c_out, t))
    x.grad[...], w.grad[...], b.grad[...] = nx.conv1d_backward(x.value, w.value, d, r)
    return _fd(lambda: _weighted(nx.conv1d(x.value, w.value, b.value, d), r), [x, w, b])


def _small_model(rng: np.random.Generator, dtype, t: int, layers: int = 1, hidden: int = 4):
    cfg = M.ModelConfig(gcn_layers=layers, gcn_hidden=hidden, neck_channels=(6, 5), init_seed=int(rng.integers(1 << 30)))
    params = M.init_params(cfg).astype(dtype)
    for p in params.conv_biases:
        p.value[...] = rng.normal(scale=0.1, size=p.shape)
    adj = normalize(rng.integers(0, 4, size=(12, 12)) + rng.integers(0, 4, size=(12, 12)).T)
    feats = rng.normal(size=(t, 12, 2)).astype(dtype)
    return params, adj.astype(dtype), feats


def grad_gcn_stack(rng: np.random.Generator) -> float:
    """Two-layer GCN plus conv stack, float64, loss = Σ logits ⊙ R."""
    params, adj, feats = _small_model(rng, np.float64, t=int(rng.integers(1, 10)), layers=2)
    tape = M.forward_with_tape(params, adj, feats)
    r = rng.normal(size=tape.logits.shape)
    M.backward(params, tape, r)
    return _fd(
        lambda: _weighted(M.forward(params, adj, feats), r),
        params.parameters(),
        max_coords=24,
        rng=rng,
        signature_fn=lambda: M.relu_pattern(M.forward_with_tape(params, adj, feats)),
    )


def _random_targets(rng: np.random.Generator, t: int) -> dict[str, KindTargets]:
    return {
        k: KindTargets(rng.integers(0, 2, size=t).astype(np.int8), rng.integers(0, 4, size=t).astype(np.int8))
        for k in ("macro", "micro")
    }


def grad_focal_loss(rng: np.random.Generator) -> float:
    t = int(rng.integers(1, 12))
    z = Parameter(rng.normal(scale=2.0, size=(10, t)))
    targets = _random_targets(rng, t)
    mask = rng.random(t) < 0.8
    mask[0] = True
    alpha, gamma = float(rng.uniform(0.2, 0.9)), float(rng.choice([0.0, 0.5, 1.0, 2.0]))
    _, z.grad[...] = focal_loss(z.value, targets, mask, alpha, gamma)
    return _fd(lambda: focal_loss(z.value, targets, mask, alpha, gamma)[0], [z])


def grad_full_model_f32(rng: np.random.Generator) -> float:
    """Default architecture in float32, focal loss on top, sampled coordinates."""
    t = int(rng.integers(4, 16))
    cfg = M.ModelConfig(init_seed=int(rng.integers(1 << 30)))
    params = M.init_params(cfg)
    for p in params.conv_biases:
        p.value[...] = rng.normal(scale=0.1, size=p.shape)
    adj = normalize(rng.integers(0, 4, size=(12, 12)) + rng.integers(0, 4, size=(12, 12)).T).astype(np.float32)
    feats = rng.normal(size=(t, 12, 2)).astype(np.float32)
    targets = _random_targets(rng, t)
    tape = M.forward_with_tape(params, adj, feats)
    _, g = focal_loss(tape.logits, targets)
    M.backward(params, tape, g)

    def loss():
        return focal_loss(M.forward(params, adj, feats), targets)[0]

    # float32 storage of activations leaves ~1e-6 absolute noise in the
    # differences at eps 1e-3; a wider step trades that for small truncation
    # error, and gradients below F32_MIN_GRAD cannot be judged at 1e-2 relative
    return finite_diff_check(
        loss,
        params.parameters(),
        eps=F32_EPS,
        max_coords=8,
        rng=rng,
        signature_fn=lambda: M.relu_pattern(M.forward_with_tape(params, adj, feats)),
        min_abs_grad=F32_MIN_GRAD,
    )


GRAD_CHECKS: dict[str, tuple[Callable[[np.random.Generator], float], float]] = {
    "matmul": (grad_matmul, OP_TOL),
    "relu": (grad_relu, OP_TOL),
    "sigmoid": (grad_sigmoid, OP_TOL),
    "softmax": (grad_softmax, OP_TOL),
    "conv1d": (grad_conv1d, OP_TOL),
    "gcn_stack": (grad_gcn_stack, OP_TOL),
    "focal_loss": (grad_focal_loss, OP_TOL),
    "model+focal_f32": (grad_full_model_f32, COMPOSITE_TOL),
}


def run_grad_check(name: str, seeds: int = 100) -> CheckResult:
    fn, tol = GRAD_CHECKS[name]
    t0 = time.perf_counter()
    errors = [fn(np.random.default_rng([seed, 7919])) for seed in range(seeds)]
    worst = float(max(errors))
    bad = sum(e > tol for e in errors)
    detail = f"{seeds} seeds, tol {tol:g}" + (f", {bad} failing" if bad else "")
    return CheckResult(f"grad:{name}", bad == 0, worst, detail, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# oracle equivalence


def _random_maps(rng: np.random.Generator, t: int) -> M.KindMaps:
    cls = rng.dirichlet(np.ones(4), size=t).T
    # quantised values create argmax ties, exercising the tie-break
    if rng.random() < 0.5:
        cls = np.round(cls * 4) / 4
    return M.KindMaps(rng.random(t), *cls)


def oracle_proposals(instances: int = 200, seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(instances):
        t = int(rng.integers(1, 65))
        maps = _random_maps(rng, t)
        thr = float(rng.uniform(0.05, 0.95))
        k_dis = int(rng.integers(1, 20))
        got = [(p.start, p.end, p.score) for p in generate_proposals(maps, "macro", thr, k_dis)]
        want = ref.proposals(maps.p_s, maps.p_ap, maps.p_e, thr, k_dis)
        mismatches += got != want
    return CheckResult(
        "oracle:generate_proposals", mismatches == 0, None,
        f"{instances} instances, {mismatches} mismatches", time.perf_counter() - t0,
    )


def _random_intervals(rng: np.random.Generator, n: int, t: int = 60) -> list[tuple[int, int, float]]:
    out = []
    for _ in range(n):
        s = int(rng.integers(0, t - 1))
        e = int(rng.integers(s + 1, min(t, s + 20) + 1))
        out.append((s, e, float(rng.choice([rng.random(), 0.5]))))
    return out


def oracle_nms(instances: int = 200, seed: int = 1) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(instances):
        items = _random_intervals(rng, int(rng.integers(0, 21)))
        thr = float(rng.uniform(0.1, 0.9))
        got = [(p.start, p.end, p.score) for p in nms([Proposal(s, e, sc, "micro") for s, e, sc in items], thr)]
        mismatches += got != ref.nms(items, thr)
    return CheckResult("oracle:nms", mismatches == 0, None, f"{instances} instances, {mismatches} mismatches", time.perf_counter() - t0)


def oracle_match(instances: int = 200, seed: int = 2) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(instances):
        items = _random_intervals(rng, int(rng.integers(0, 21)))
        gts = [(s, e) for s, e, _ in _random_intervals(rng, int(rng.integers(0, 8)))]
        k = float(rng.choice([0.5, rng.uniform(0.1, 0.9)]))
        rep = match(
            [Proposal(s, e, sc, "macro") for s, e, sc in items],
            [AnnotationInstance(s, s, e, "macro") for s, e in gts],
            k, "macro",
        )
        mismatches += (rep.tp["macro"], rep.fp["macro"], rep.fn["macro"]) != ref.match(items, gts, k)
    return CheckResult("oracle:match", mismatches == 0, None, f"{instances} instances, {mismatches} mismatches", time.perf_counter() - t0)


def oracle_adjacency(instances: int = 50, seed: int = 3) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    failures = []
    worst_radius = 0.0
    for _ in range(instances):
        au_map = AuRoiMap({f"AU{i}": set(rng.choice(12, size=int(rng.integers(1, 4)), replace=False).tolist()) for i in range(1, 13)})
        anns = [
            AnnotationInstance(0, 0, 0, "micro", frozenset(f"AU{i}" for i in rng.choice(12, size=int(rng.integers(0, 4)), replace=False) + 1))
            for _ in range(50)
        ]
        raw = count_cooccurrence(anns, au_map)
        if not np.array_equal(raw, ref.cooccurrence(anns, au_map.rois)):
            failures.append("counts")
        a = normalize(raw)
        if not np.allclose(a, a.T, atol=0, rtol=0):
            failures.append("symmetry")
        worst_radius = max(worst_radius, ref.spectral_radius(a))
    if worst_radius > 1 + 1e-6:
        failures.append("spectral radius")
    if not np.allclose(normalize(np.zeros((12, 12))), np.eye(12)):
        failures.append("zero -> identity")
    return CheckResult(
        "oracle:adjacency", not failures, None,
        f"{instances} instances, max spectral radius {worst_radius:.6f}" + (f"; failed: {sorted(set(failures))}" if failures else ""),
        time.perf_counter() - t0,
    )


def receptive_field_check(t: int = 40, seed: int = 4) -> CheckResult:
    """Delta input at t' must change exactly the logits within radius 5."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    params = M.init_params(M.ModelConfig(init_seed=seed)).astype(np.float64)
    for p in params.conv_biases:
        p.value[...] = 0.5  # keep relus open so every in-range path is live
    adj = normalize(np.ones((12, 12)))
    base = np.abs(rng.normal(size=(t, 12, 2))) + 0.5
    ref_out = M.forward(params, adj, base)
    radius = (params.config.receptive_field - 1) // 2
    bad = []
    for tp in range(t):
        feats = base.copy()
        feats[tp] += 1.0
        changed = np.any(M.forward(params, adj, feats) != ref_out, axis=0)
        expected = np.abs(np.arange(t) - tp) <= radius
        if not np.array_equal(changed, expected):
            bad.append(tp)
    return CheckResult(
        "receptive_field", not bad, None, f"radius {radius}" + (f", wrong at {bad[:5]}" if bad else ""),
        time.perf_counter() - t0,
    )


def run_all(seeds: int = 100) -> list[CheckResult]:
    results = [run_grad_check(name, seeds) for name in GRAD_CHECKS]
    results += [oracle_proposals(), oracle_nms(), oracle_match(), oracle_adjacency(), receptive_field_check()]
    return results
