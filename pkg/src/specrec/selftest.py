"""Quick numerical self-test battery used by ``specrec check``.

Each check returns a :class:`CheckResult`; the battery is seeded and runs in
a few seconds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from .spectral import decomposition_residual, henderson_searle_check, subspace_project
from .tinynet import autodiff as ad
from .tinynet import ops
from .tinynet.gradcheck import check_primitive, numeric_grad, rel_error, sample_coords
from .tinynet.net import AUXILIARY, PRIMARY, NetConfig, forward, fuse, init_params, loss_and_grad, output_module


@dataclass
class CheckResult:
    """``value`` must be at most ``threshold``, or above it when ``lower_bound`` is set."""

    name: str
    value: float
    threshold: float
    lower_bound: bool = False

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.value):
            return False
        return self.value > self.threshold if self.lower_bound else self.value <= self.threshold

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        op = ">" if self.lower_bound else "<="
        return f"{status} {self.name}: {self.value:.3e} (want {op} {self.threshold:.0e})"


def random_system(rng: np.random.Generator, m: int, bands: int = 31) -> np.ndarray:
    """Full-row-rank ``(3M, B)`` matrix with nonnegative entries."""
    return rng.uniform(0.0, 1.0, size=(3 * m, bands))


def subspace_suite(cases: int = 100, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst_res = worst_idem = 0.0
    for k in range(cases):
        H = random_system(rng, 1 + k % 3)
        R = rng.uniform(0.0, 1.0, size=(H.shape[1], 4, 4))
        worst_res = max(worst_res, decomposition_residual(H, R))
        I = np.einsum("rb,bhw->rhw", H, R)
        P1 = subspace_project(H, I, ridge=0.0)
        P2 = subspace_project(H, np.einsum("rb,bhw->rhw", H, P1), ridge=0.0)
        worst_idem = max(worst_idem, float(np.max(np.abs(P2 - P1))))
    return [
        CheckResult("subspace decomposition residual", worst_res, 1e-8),
        CheckResult("subspace projection idempotence", worst_idem, 1e-9),
    ]


def expansion_suite(cases: int = 50, seed: int = 1) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(cases):
        H = random_system(rng, 1 + k % 3)
        dH = rng.standard_normal(H.shape)
        dH *= rng.uniform(0.0, 0.01) * np.linalg.norm(H) / np.linalg.norm(dH)
        I = rng.uniform(0.0, 1.0, size=(H.shape[0], 3, 3))
        worst = max(worst, henderson_searle_check(H, dH, I))
    return [CheckResult("perturbed-inverse expansion", worst, 1e-7)]


def primitive_suite(seed: int = 2) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 4, 4))
    pairs = {
        "conv3x3": (ops.conv2d_forward, ops.conv2d_backward, [x, rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)]),
        "conv1x1": (ops.conv2d_forward, ops.conv2d_backward, [x, rng.standard_normal((4, 3, 1, 1)), rng.standard_normal(4)]),
        "leaky_relu": (ops.leaky_relu_forward, ops.leaky_relu_backward, [x + np.sign(x) * 0.1]),
        "softplus": (ops.softplus_forward, ops.softplus_backward, [x]),
        "avgpool2": (ops.avgpool2_forward, ops.avgpool2_backward, [x]),
        "upsample": (ops.upsample_bilinear_forward, ops.upsample_bilinear_backward, [x]),
        "dense": (ops.dense_forward, ops.dense_backward, [rng.standard_normal((2, 5)), rng.standard_normal((3, 5)), rng.standard_normal(3)]),
        "global_avg_pool": (ops.global_avg_pool_forward, ops.global_avg_pool_backward, [x]),
    }
    out = []
    for name, (f, b, inputs) in pairs.items():
        errs = check_primitive(f, b, inputs, rng)
        out.append(CheckResult(f"gradient {name}", max(errs.values()), 1e-5))
    return out


def _graph_error(build, arrays: list[np.ndarray], rng: np.random.Generator, coords: int = 40) -> float:
    """Relative error of ``build(*param_vars)`` gradients against central differences.

    The scalar probe is ``sum(build(...) * g)`` for a fixed random ``g``.
    """
    leaves = [ad.param(a) for a in arrays]
    out = build(*leaves)
    g = rng.standard_normal(out.shape)
    ad.backward(out, g)

    def probe():
        return float(np.sum(build(*[ad.const(a) for a in arrays]).value * g))

    ana, num = [], []
    for a, leaf in zip(arrays, leaves):
        idx = sample_coords(a.size, coords, rng)
        ana.append(leaf.grad.reshape(-1)[idx])
        num.append(numeric_grad(probe, a, idx))
    return rel_error(np.concatenate(ana), np.concatenate(num))


def module_suite(seed: int = 4) -> list[CheckResult]:
    """Output module (omega and delta paths) and FUSE against finite differences."""
    rng = np.random.default_rng(seed)
    net = NetConfig(base_channels=4)
    params = init_params(net, seed)
    sub = rng.uniform(0.0, 1.0, size=(2, net.bands, 4, 4))
    out_names = ["out1.delta.w", "out1.delta.b", "out1.omega.w", "out1.omega.b"]

    def out_build(d, *ps):
        out, _, _ = output_module(d, sub, dict(zip(out_names, ps)), 1, net)
        return out

    out_arrays = [rng.standard_normal((2, 4, 4, 4))] + [params[n].copy() for n in out_names]
    out_arrays[-1] += 0.3  # keep the softplus away from its flat region
    fuse_names = ["fuse1.m.w", "fuse1.m.b", "fuse1.out.w", "fuse1.out.b"]

    def fuse_build(e, r, *ps):
        return fuse(e, r, dict(zip(fuse_names, ps)), 1, net)

    fuse_arrays = [rng.standard_normal((2, 4, 4, 4)), rng.uniform(0.0, 1.0, (2, net.bands, 2, 2))]
    fuse_arrays += [params[n].copy() for n in fuse_names]
    return [
        CheckResult("gradient output module", _graph_error(out_build, out_arrays, rng), 1e-5),
        CheckResult("gradient FUSE", _graph_error(fuse_build, fuse_arrays, rng), 1e-5),
    ]


def network_suite(seed: int = 3, m_illums: int = 2, coords: int = 6) -> list[CheckResult]:
    """End-to-end losses on a 4x4 patch against finite differences, with the CSS term frozen."""
    rng = np.random.default_rng(seed)
    net = NetConfig(m_illums=m_illums, base_channels=4)
    params = init_params(net, seed)
    illums = rng.uniform(0.2, 1.0, size=(m_illums, net.bands))
    stack = rng.uniform(0.0, 1.0, size=(1, 3 * m_illums, 4, 4))
    truth = rng.uniform(0.0, 1.0, size=(1, net.bands, 4, 4))
    css = rng.uniform(0.0, 1.0, size=(1, 3, net.bands))
    frozen = forward(params, stack, illums, net).css.value
    out = []
    for kind in ("pri", "aux"):
        batch = (stack, truth, css)
        _, grads, _ = loss_and_grad(params, batch, illums, net, kind, css_override=frozen)
        ana, num = [], []
        for name in params.names():
            idx = sample_coords(params[name].size, coords, rng)
            ana.append(grads[name].reshape(-1)[idx])

            def f():
                return loss_and_grad(params, batch, illums, net, kind, css_override=frozen)[0]

            num.append(numeric_grad(f, params.tensors[name], idx))
        out.append(CheckResult(f"end-to-end gradient L_{kind}", rel_error(np.concatenate(ana), np.concatenate(num)), 1e-5))
        if kind == "pri":
            leak = max(float(np.max(np.abs(grads[n]))) for n in params.names(AUXILIARY))
            out.append(CheckResult("auxiliary weights untouched by L_pri", leak, 0.0))
        else:
            reach = max(float(np.max(np.abs(grads[n]))) for n in params.names(PRIMARY))
            out.append(CheckResult("primary weights reached by L_aux", reach, 0.0, lower_bound=True))
    return out


def metric_suite() -> list[CheckResult]:
    a = np.array([1.0, 2.0, 3.0, 4.0]).reshape(4, 1, 1)
    b = np.array([1.5, 2.5, 2.5, 4.5]).reshape(4, 1, 1)
    flat = np.full((1, 16, 16), 0.5)
    return [
        CheckResult("mae oracle", abs(metrics.mae(a, b) - 0.5), 1e-12),
        CheckResult("rmse oracle", abs(metrics.rmse(a, b) - 0.5), 1e-12),
        CheckResult("psnr oracle", abs(metrics.psnr(flat, flat + 0.1) - 20.0), 1e-9),
        CheckResult("ssim of identical images", abs(metrics.ssim(flat + 0.1, flat + 0.1) - 1.0), 1e-12),
    ]


def run_all() -> list[CheckResult]:
    return subspace_suite() + expansion_suite() + primitive_suite() + module_suite() + network_suite() + metric_suite()
