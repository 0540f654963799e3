"""Replayable verification suite behind the losscheck command: brute-force
loss equivalence, the soft-to-hard temperature limit, finite-difference
gradient checks, and matched-optimum stationarity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .contrastive import (
    ContrastiveBatch,
    LabelTable,
    Temperatures,
    grad_loss,
    init_head,
    soft_loss,
    sup_loss,
)
from .embedding import l2_normalize
from .seeding import substream


def brute_sup_loss(anchors, positives, labels, tau: float) -> float:
    """Direct double-loop reading of the supervised contrastive loss."""
    n = len(labels)
    total = 0.0
    for i in range(n):
        pos = [j for j in range(n) if labels[j] == labels[i]]
        denom = sum(math.exp(float(np.dot(anchors[i], positives[k])) / tau) for k in range(n))
        li = 0.0
        for j in pos:
            li -= math.log(math.exp(float(np.dot(anchors[i], positives[j])) / tau) / denom) / len(pos)
        total += li
    return total / n


def brute_soft_loss(anchors, positives, labels, delta, tau: float, tau_label: float) -> float:
    """Direct double-loop reading of the soft loss: softmax label targets
    times log-softmax similarities."""
    n = len(labels)
    total = 0.0
    for i in range(n):
        z = sum(math.exp(float(delta[labels[i], labels[k]]) / tau_label) for k in range(n))
        denom = sum(math.exp(float(np.dot(anchors[i], positives[k])) / tau) for k in range(n))
        li = 0.0
        for j in range(n):
            p = math.exp(float(delta[labels[i], labels[j]]) / tau_label) / z
            q = math.exp(float(np.dot(anchors[i], positives[j])) / tau) / denom
            li -= p * math.log(q)
        total += li
    return total / n


def random_unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_label_table(rng: np.random.Generator, n_labels: int, dim: int = 12) -> LabelTable:
    embs = random_unit_rows(rng, n_labels, dim)
    delta = embs @ embs.T
    delta = (delta + delta.T) / 2.0
    return LabelTable(texts=tuple(f"label-{i}" for i in range(n_labels)), embeddings=embs, delta=delta)


def orthogonal_label_table(n_labels: int) -> LabelTable:
    """delta is exactly 1 on the diagonal and 0 elsewhere: the geometry the
    soft-to-hard limit check requires."""
    embs = np.eye(n_labels)
    return LabelTable(
        texts=tuple(f"label-{i}" for i in range(n_labels)), embeddings=embs, delta=np.eye(n_labels)
    )


def finite_difference(f, arr: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar f() with respect to arr, in place."""
    grad = np.zeros_like(arr)
    flat = arr.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-8)
    return float(np.max(np.abs(a - b))) / scale


def gradient_check_case(
    rng: np.random.Generator,
    soft: bool,
    step: float = 1e-5,
    n_max: int = 8,
    enc_max: int = 16,
    d_max: int = 8,
    perturb: float = 0.0,
) -> float:
    """One random instance; returns the worst relative error across W1,
    W2, anchors, and positives. `perturb` injects a deliberate analytic
    gradient fault (test mode)."""
    n = int(rng.integers(2, n_max + 1))
    enc = int(rng.integers(4, enc_max + 1))
    d = int(rng.integers(2, d_max + 1))
    xa = random_unit_rows(rng, n, enc)
    xp = random_unit_rows(rng, n, enc)
    labels = rng.integers(0, max(2, n // 2), size=n)
    head = init_head(enc, d, seed=int(rng.integers(2**31)))
    table = random_label_table(rng, int(labels.max()) + 1) if soft else None
    temps = Temperatures()
    batch = ContrastiveBatch(anchors=xa, positives=xp, labels=labels, validate=False)
    _, grads = grad_loss(batch, table, temps, head)

    def loss_now() -> float:
        b = ContrastiveBatch(anchors=xa, positives=xp, labels=labels, validate=False)
        value, _ = grad_loss(b, table, temps, head)
        return value

    worst = 0.0
    pairs = [
        (grads.d_w1, head.w1),
        (grads.d_w2, head.w2),
        (grads.d_anchors, xa),
        (grads.d_positives, xp),
    ]
    for analytic, arr in pairs:
        fd = finite_difference(loss_now, arr, step=step)
        worst = max(worst, relative_error(analytic + perturb, fd))
    return worst


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    failing_case: dict | None = None


def run_losscheck(
    seed: int = 0,
    equivalence_cases: int = 50,
    limit_cases: int = 20,
    gradient_cases: int = 10,
    inject_fault: bool = False,
) -> list[CheckResult]:
    """The full check battery. Deterministic per seed; any failing case is
    attached as a JSON-serializable payload for replay."""
    results: list[CheckResult] = []
    temps = Temperatures()

    # 1. brute-force equivalence for both losses
    rng = substream(seed, "losscheck-equiv")
    worst_sup, worst_soft = 0.0, 0.0
    failing = None
    for case in range(equivalence_cases):
        n = int(rng.integers(2, 9))
        d = int(rng.integers(2, 9))
        za = random_unit_rows(rng, n, d)
        zp = random_unit_rows(rng, n, d)
        labels = rng.integers(0, max(2, n // 2), size=n)
        table = random_label_table(rng, int(labels.max()) + 1)
        batch = ContrastiveBatch(anchors=za, positives=zp, labels=labels)
        got_sup, _ = sup_loss(batch, temps)
        got_soft, _ = soft_loss(batch, table, temps)
        err_sup = abs(got_sup - brute_sup_loss(za, zp, labels, temps.tau))
        err_soft = abs(
            got_soft - brute_soft_loss(za, zp, labels, table.delta, temps.tau, temps.tau_label)
        )
        worst_sup = max(worst_sup, err_sup)
        worst_soft = max(worst_soft, err_soft)
        if max(err_sup, err_soft) >= 1e-10 and failing is None:
            failing = {
                "check": "equivalence",
                "case": case,
                "anchors": za.tolist(),
                "positives": zp.tolist(),
                "labels": labels.tolist(),
                "delta": table.delta.tolist(),
            }
    results.append(
        CheckResult(
            name="brute-force equivalence",
            passed=failing is None,
            detail=f"max |sup-brute|={worst_sup:.2e}, max |soft-brute|={worst_soft:.2e} over {equivalence_cases} batches",
            failing_case=failing,
        )
    )

    # 2. soft -> hard limit with exactly-orthogonal label embeddings
    rng = substream(seed, "losscheck-limit")
    worst = 0.0
    failing = None
    for case in range(limit_cases):
        n = int(rng.integers(2, 9))
        d = int(rng.integers(2, 9))
        za = random_unit_rows(rng, n, d)
        zp = random_unit_rows(rng, n, d)
        labels = rng.integers(0, max(2, n // 2), size=n)
        table = orthogonal_label_table(int(labels.max()) + 1)
        batch = ContrastiveBatch(anchors=za, positives=zp, labels=labels)
        hard, _ = sup_loss(batch, temps)
        soft, _ = soft_loss(batch, table, Temperatures(tau=temps.tau, tau_label=1e-4))
        err = abs(soft - hard)
        worst = max(worst, err)
        if err >= 1e-6 and failing is None:
            failing = {
                "check": "soft-hard-limit",
                "case": case,
                "anchors": za.tolist(),
                "positives": zp.tolist(),
                "labels": labels.tolist(),
            }
    results.append(
        CheckResult(
            name="soft-to-hard limit",
            passed=failing is None,
            detail=f"max |soft(tau'=1e-4) - sup|={worst:.2e} over {limit_cases} batches",
            failing_case=failing,
        )
    )

    # 3. finite-difference gradient check, both losses
    rng = substream(seed, "losscheck-grad")
    worst = 0.0
    failing = None
    perturb = 1e-3 if inject_fault else 0.0
    for case in range(gradient_cases):
        for soft_mode in (False, True):
            err = gradient_check_case(rng, soft=soft_mode, perturb=perturb)
            worst = max(worst, err)
            if err >= 1e-5 and failing is None:
                failing = {"check": "gradient", "case": case, "soft": soft_mode, "seed": seed}
    results.append(
        CheckResult(
            name="gradient vs central differences",
            passed=failing is None,
            detail=f"max relative error={worst:.2e} over {2 * gradient_cases} instances",
            failing_case=failing,
        )
    )

    # 4. stationarity when predictions equal targets exactly
    rng = substream(seed, "losscheck-stationary")
    n, enc, d = 4, 8, 4
    xp_row = l2_normalize(rng.standard_normal(enc))
    xa = random_unit_rows(rng, n, enc)
    xp = np.tile(xp_row, (n, 1))
    labels = np.zeros(n, dtype=int)
    head = init_head(enc, d, seed=seed)
    _, grads = grad_loss(ContrastiveBatch(anchors=xa, positives=xp, labels=labels), None, temps, head)
    gnorm = max(
        float(np.linalg.norm(grads.d_w1)),
        float(np.linalg.norm(grads.d_w2)),
        float(np.linalg.norm(grads.d_anchors)),
    )
    results.append(
        CheckResult(
            name="matched-optimum stationarity",
            passed=gnorm < 1e-8,
            detail=f"gradient norm at the symmetric optimum={gnorm:.2e}",
            failing_case=None if gnorm < 1e-8 else {"check": "stationarity", "seed": seed},
        )
    )
    return results


def serialize_failure(results: list[CheckResult]) -> str:
    cases = [r.failing_case for r in results if r.failing_case is not None]
    return json.dumps({"failures": cases}, indent=2, sort_keys=True)
