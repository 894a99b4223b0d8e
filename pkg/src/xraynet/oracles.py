"""Independent reference implementations and the built-in check suites.

The naive kernels here trade speed for obviousness (explicit loops over
every index) and exist solely to cross-check the fast paths. The check
suites wrap them, the finite-difference gradient checker, and the
structural/counting invariants into named pass/fail results consumed by
the CLI's gradcheck and selftest commands and by the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import data as dt
from . import metrics, models, ops
from .tensor import Tensor


def naive_conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation by explicit loops over every output and tap index."""
    xv, wv, bv = x.numpy(), weight.numpy(), bias.numpy()
    n, cin, h, w = xv.shape
    cout, _, kh, kw = wv.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow), dtype=np.float64)
    for ni in range(n):
        for co in range(cout):
            for oy in range(oh):
                for ox in range(ow):
                    acc = float(bv[co])
                    for ci in range(cin):
                        for ky in range(kh):
                            for kx in range(kw):
                                iy = oy * stride + ky - padding
                                ix = ox * stride + kx - padding
                                if 0 <= iy < h and 0 <= ix < w:
                                    acc += float(xv[ni, ci, iy, ix]) * float(wv[co, ci, ky, kx])
                    out[ni, co, oy, ox] = acc
    return Tensor(out.astype(xv.dtype))


def naive_linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map by explicit loops."""
    xv, wv, bv = x.numpy(), weight.numpy(), bias.numpy()
    n, f = xv.shape
    k = wv.shape[0]
    out = np.zeros((n, k), dtype=np.float64)
    for ni in range(n):
        for ki in range(k):
            acc = float(bv[ki])
            for fi in range(f):
                acc += float(xv[ni, fi]) * float(wv[ki, fi])
            out[ni, ki] = acc
    return Tensor(out.astype(xv.dtype))


# ---------------------------------------------------------------------------
# check plumbing


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _result(name: str, passed: bool, detail: str) -> CheckResult:
    return CheckResult(name, bool(passed), detail)


def random_conv_config(rng: np.random.Generator) -> dict:
    """One draw from the small-geometry grid the conv oracle sweeps."""
    k = int(rng.choice([1, 3, 5]))
    stride = int(rng.choice([1, 2]))
    padding = int(rng.choice([0, 1, 2]))
    h = int(rng.integers(k, 9))
    w = int(rng.integers(k, 9))
    return {
        "n": int(rng.integers(1, 3)),
        "cin": int(rng.integers(1, 5)),
        "cout": int(rng.integers(1, 5)),
        "h": h,
        "w": w,
        "k": k,
        "stride": stride,
        "padding": padding,
    }


def conv_oracle_check(configs: int = 200, seed: int = 0, tolerance: float = 1e-5) -> CheckResult:
    """Fast conv vs the naive loop kernel over random small geometries."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(configs):
        c = random_conv_config(rng)
        x = Tensor(rng.uniform(-1, 1, size=(c["n"], c["cin"], c["h"], c["w"])).astype(np.float32))
        w = Tensor(rng.uniform(-1, 1, size=(c["cout"], c["cin"], c["k"], c["k"])).astype(np.float32))
        b = Tensor(rng.uniform(-1, 1, size=(c["cout"],)).astype(np.float32))
        fast = ops.conv2d(x, w, b, c["stride"], c["padding"]).numpy()
        slow = naive_conv2d(x, w, b, c["stride"], c["padding"]).numpy()
        worst = max(worst, float(np.abs(fast - slow).max()))
    return _result("conv_oracle", worst < tolerance, f"configs={configs} max_abs_err={worst:.3e} tolerance={tolerance:g}")


def auc_oracle_check(sets: int = 100, seed: int = 0, tolerance: float = 1e-9) -> CheckResult:
    """Trapezoid AUC vs pair counting on random score sets plus the worked example."""
    example = metrics.auc(metrics.roc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]))
    if example != 0.75:
        return _result("auc_oracle", False, f"worked example gave {example!r}, expected 0.75")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(sets):
        n = int(rng.integers(2, 65))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = np.round(rng.uniform(0, 1, size=n), 2)  # rounding forces ties
        gap = abs(metrics.auc(metrics.roc(scores, labels)) - metrics.auc_pair_oracle(scores, labels))
        worst = max(worst, gap)
    return _result("auc_oracle", worst < tolerance, f"sets={sets} max_gap={worst:.3e} tolerance={tolerance:g}")


def layer_count_check() -> CheckResult:
    """DenseNet-121 weighted-layer accounting: 1 + 2*58 + 3 + 1."""
    n = models.count_layers(models.build_densenet121())
    return _result("layer_count", n == 121, f"count_layers(densenet121)={n} expected=121")


def split_count_check() -> CheckResult:
    """5824 paths at 0.88/0.08/0.04 land at exactly 5125/466/233."""
    rows = [
        dt.ManifestRow(path=f"img/{label.lower()}_{i:05d}.png", label=label)
        for label, count in (("NORMAL", 1583), ("PNEUMONIA", 4241))
        for i in range(count)
    ]
    manifest = dt.split(dt.DatasetManifest(rows=rows), (0.88, 0.08, 0.04), seed=7)
    counts = manifest.counts()
    got = (counts["train"], counts["val"], counts["test"])
    return _result("split_counts", got == (5125, 466, 233), f"got={got} expected=(5125, 466, 233)")


# ---------------------------------------------------------------------------
# gradient-check suite


def _weighted_sum(node: ad.Node, seed: int) -> ad.Node:
    # Project to a scalar through fixed random weights so sign errors
    # cannot cancel across coordinates.
    rng = np.random.default_rng(seed)
    w = ad.leaf(Tensor(rng.uniform(0.5, 1.5, size=node.value.shape), dtype=np.float64))
    return ad.sum_all(ad.mul(node, w))


def gradcheck_suite(seed: int = 0) -> list[tuple[str, float, float]]:
    """(name, max relative error, threshold) per differentiable op."""
    checks: list[tuple[str, float, float]] = []

    def run(name, threshold, build, shapes, min_abs=0.0):
        err = ad.grad_check(build, shapes, eps=1e-4, seed=seed, min_abs=min_abs)
        checks.append((name, err, threshold))

    run("linear", 1e-7, lambda xs: _weighted_sum(ad.linear(xs[0], xs[1], xs[2]), 1), [(3, 4), (2, 4), (2,)])
    run(
        "conv2d",
        1e-5,
        lambda xs: _weighted_sum(ad.conv2d(xs[0], xs[1], xs[2], 1, 1), 2),
        [(1, 2, 5, 5), (2, 2, 3, 3), (2,)],
    )
    run(
        "conv2d_strided",
        1e-5,
        lambda xs: _weighted_sum(ad.conv2d(xs[0], xs[1], xs[2], 2, 2), 3),
        [(2, 2, 6, 6), (3, 2, 3, 3), (3,)],
    )
    run(
        "conv2d_1x1",
        1e-5,
        lambda xs: _weighted_sum(ad.conv2d(xs[0], xs[1], xs[2], 1, 0), 4),
        [(2, 3, 4, 4), (2, 3, 1, 1), (2,)],
    )
    run("maxpool2d", 1e-4, lambda xs: _weighted_sum(ad.maxpool2d(xs[0], 2, 2), 5), [(2, 2, 6, 6)])
    run(
        "maxpool2d_padded",
        1e-4,
        lambda xs: _weighted_sum(ad.maxpool2d(xs[0], 3, 2, 1), 6),
        [(1, 2, 6, 6)],
    )
    run("avgpool2d", 1e-7, lambda xs: _weighted_sum(ad.avgpool2d(xs[0], 2, 2), 7), [(2, 2, 6, 6)])
    run("global_avg_pool", 1e-7, lambda xs: _weighted_sum(ad.global_avg_pool(xs[0]), 8), [(2, 3, 4, 4)])
    run(
        "batchnorm_train",
        1e-4,
        lambda xs: _weighted_sum(
            ad.batchnorm2d(xs[0], xs[1], xs[2], Tensor.zeros((3,), np.float64), Tensor.full((3,), 1.0, np.float64), "train")[0],
            9,
        ),
        [(2, 3, 4, 4), (3,), (3,)],
    )
    run(
        "batchnorm_eval",
        1e-5,
        lambda xs: _weighted_sum(
            ad.batchnorm2d(
                xs[0], xs[1], xs[2], Tensor.full((3,), 0.2, np.float64), Tensor.full((3,), 0.8, np.float64), "eval"
            )[0],
            10,
        ),
        [(2, 3, 4, 4), (3,), (3,)],
    )
    run("concat_channels", 1e-7, lambda xs: _weighted_sum(ad.concat_channels(xs), 11), [(2, 2, 3, 3), (2, 3, 3, 3)])
    run("flatten", 1e-7, lambda xs: _weighted_sum(ad.flatten(xs[0]), 12), [(2, 3, 2, 2)])
    for kind in ops.ACTIVATION_KINDS:
        kinked = kind in ("relu", "elu")
        run(
            f"activation_{kind}",
            1e-4 if kinked else 1e-5,
            lambda xs, k=kind: _weighted_sum(ad.activation(k, xs[0]), 13),
            [(2, 3, 4, 4)],
            min_abs=0.1 if kinked else 0.0,
        )

    from . import training  # deferred: training imports this module's siblings

    def ce_build(xs):
        return training.cross_entropy(ad.linear(xs[0], xs[1], xs[2]), [0, 1, 1])

    run("cross_entropy", 1e-6, ce_build, [(3, 4), (2, 4), (2,)])
    return checks


def gradcheck_results(seed: int = 0) -> list[CheckResult]:
    out = []
    for name, err, threshold in gradcheck_suite(seed):
        out.append(_result(f"grad_{name}", err < threshold, f"max_rel_err={err:.3e} threshold={threshold:g}"))
    return out


_SELFTEST_CHECKS = ("conv_oracle", "auc_oracle", "layer_count", "split_counts")


def run_selftest(inject_fault: str | None = None, quick: bool = True) -> list[CheckResult]:
    """The composite oracle suite behind `xraynet selftest`.

    ``inject_fault`` names a check whose verdict is flipped to failing,
    proving the harness can fail; it does not simulate a specific bug.
    """
    if inject_fault is not None and inject_fault not in _SELFTEST_CHECKS:
        raise ValueError(f"unknown check {inject_fault!r}; valid: {', '.join(_SELFTEST_CHECKS)}")
    results = [
        conv_oracle_check(configs=25 if quick else 200),
        auc_oracle_check(sets=25 if quick else 100),
        layer_count_check(),
        split_count_check(),
    ]
    if inject_fault is not None:
        results = [
            _result(r.name, False, f"injected fault: {r.detail}") if r.name == inject_fault else r
            for r in results
        ]
    return results
