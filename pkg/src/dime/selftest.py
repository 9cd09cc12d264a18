"""Fast analytic invariant checks, runnable without pytest via ``dime selftest``."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .adapter_model import AdapterParams, BackboneSpec, ClassifierHead, ModelState
from .balanced_train import ClassPriors, class_priors, loss_and_gradients
from .linalg import orthonormality_error, reconstruct, relative_error, thin_svd
from .metrics import average_accuracy, weighted_average_accuracy
from .spectral_merge import MergeConfig, merge_matrix
from .stream_gen import allocate_classes, build_stream, step_proportions


def check_svd(n=20) -> float:
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(n):
        m, k = rng.integers(1, 40, size=2)
        a = rng.standard_normal((m, k))
        f = thin_svd(a)
        worst = max(worst, relative_error(reconstruct(f), a),
                    orthonormality_error(f.u), orthonormality_error(f.vt.T))
    return worst


def check_merge(n=10) -> float:
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(n):
        mb, mt = rng.standard_normal((2, 8, 24))
        worst = max(
            worst,
            relative_error(merge_matrix(mb, mb, MergeConfig(3, 2)), mb),
            relative_error(merge_matrix(mb, mt, MergeConfig(3, 2, 0.3, 0.0, 0.0)), mb),
            relative_error(merge_matrix(mb, mt, MergeConfig(3, 1, 0.3, 1.0, 1.0)), 0.75 * mb + 0.25 * mt),
        )
    return worst


def _toy(seed):
    rng = np.random.default_rng(seed)
    adapter = AdapterParams(rng.standard_normal((3, 6)), rng.standard_normal((6, 3)),
                            1 + 0.2 * rng.standard_normal(6), 0.2 * rng.standard_normal(6), 1.0)
    head = ClassifierHead(rng.standard_normal((3, 6)), rng.standard_normal(3), [0, 1, 2])
    batch = [(rng.standard_normal(4), int(c)) for c in (0, 0, 0, 1, 2, 2)]
    return ModelState(BackboneSpec.create(4, 6, seed), adapter, head), batch


def check_gradients(step=1e-6) -> float:
    state, batch = _toy(2)
    priors = class_priors([y for _, y in batch])
    _, g = loss_and_gradients(state, batch, priors, [0, 1, 2], True)
    pairs = [(state.adapter.w_down, g.w_down), (state.adapter.w_up, g.w_up),
             (state.adapter.ln_gain, g.ln_gain), (state.head.weight, g.head_weight)]
    worst = 0.0
    for arr, grad in pairs:
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + step
            up = loss_and_gradients(state, batch, priors, [0, 1, 2], True)[0]
            arr[idx] = old - step
            down = loss_and_gradients(state, batch, priors, [0, 1, 2], True)[0]
            arr[idx] = old
            fd = (up - down) / (2 * step)
            worst = max(worst, abs(fd - grad[idx]) / max(abs(fd), 1e-8))
    return worst


def check_bsm_uniform() -> float:
    state, batch = _toy(3)
    uniform = ClassPriors({c: 1 / 3 for c in range(3)})
    l1, g1 = loss_and_gradients(state, batch, uniform, [0, 1, 2], True)
    l0, g0 = loss_and_gradients(state, batch, uniform, [0, 1, 2], False)
    return max([abs(l1 - l0)] + [float(np.max(np.abs(getattr(g1, k) - getattr(g0, k)))) for k in vars(g0)])


def check_metrics() -> float:
    errs = [abs(weighted_average_accuracy([0.9, 0.5], [3, 1]) - 0.74)]
    acc = [0.2, 0.7, 0.4]
    errs.append(abs(weighted_average_accuracy(acc, [4, 4, 4]) - average_accuracy(acc)))
    return max(errs)


def check_protocol() -> float:
    bad = 0
    for rho in (1.0, 0.1, 0.01, 0.001):
        s = step_proportions(rho, 10)
        bad += abs(s[0] - 1) > 1e-15 or abs(s[-1] - rho) > 1e-12 * rho
        counts = allocate_classes(s, 40)
        bad += counts.sum() != 40 or counts.min() < 1
        protocol, _ = build_stream(40, 10, rho, 0.01, 10, seeds=0)
        ids = [c for st in protocol.steps for c in st.class_ids]
        bad += sorted(ids) != list(range(40))
        bad += sorted(protocol.step_sizes) != sorted(counts.tolist())
    return float(bad)


CHECKS: list[tuple[str, Callable[[], float], float]] = [
    ("svd reconstruction/orthonormality", check_svd, 1e-10),
    ("merge identities", check_merge, 1e-8),
    ("gradient vs finite differences", check_gradients, 1e-4),
    ("balanced softmax with uniform priors", check_bsm_uniform, 1e-12),
    ("weighted average accuracy", check_metrics, 1e-12),
    ("stream protocol", check_protocol, 0.0),
]


def run_selftest(emit=print) -> bool:
    ok_all = True
    for name, fn, tol in CHECKS:
        try:
            value = fn()
            ok = value <= tol
            detail = f"{value:.3g} (tol {tol:g})"
        except Exception as exc:  # report and carry on with the other checks
            ok, detail = False, f"error: {exc}"
        ok_all &= ok
        emit(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return ok_all
