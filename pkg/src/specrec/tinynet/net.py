"""Compact recovery network with shared, primary and auxiliary parameters.

Data flow for ``scales = S``:

* shared: one 3x3 stem per illumination (concatenated), an encoder with one
  conv + resblock per scale (channels double after each 2x pooling), and a
  1x1 channel-mixing block at the coarsest scale.
* primary: a separate CSS encoder ending in a ``3B`` conv head, global
  average pooling and softplus; a decoder that emits a reflectance estimate
  at each scale through the output module, with FUSE guiding each upsampling
  step by the encoder feature of the finer scale.
* auxiliary: two convs mapping the upsampled mixing-block feature and the
  final reflectance back to the ``3M``-channel RGB stack.

The subspace term ``H^T (H H^T + ridge)^-1 I`` is computed from the current
CSS estimate but enters the graph as a constant.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..spectral import projection_operator, system_matrix
from . import autodiff as ad

SHARED, PRIMARY, AUXILIARY = "shared", "primary", "auxiliary"
PARTITIONS = (SHARED, PRIMARY, AUXILIARY)
FUSE_MODES = ("full", "zero_m", "none")


@dataclass(frozen=True)
class NetConfig:
    m_illums: int = 1
    scales: int = 2
    base_channels: int = 8
    bands: int = 31
    leaky_slope: float = 0.01
    patch: int = 16
    ridge: float = 1e-9
    relative_ridge: float = 1e-3
    white_normalized: bool = True
    use_omega: bool = True
    use_delta: bool = True
    use_subspace: bool = True
    pyramid: bool = True
    fuse: str = "full"

    def __post_init__(self):
        if self.m_illums not in (1, 2, 3):
            raise ValueError("m_illums must be 1, 2 or 3")
        if self.scales < 1:
            raise ValueError("scales must be >= 1")
        if self.base_channels < 4:
            raise ValueError("base_channels must be >= 4")
        if self.fuse not in FUSE_MODES:
            raise ValueError(f"fuse must be one of {FUSE_MODES}")
        if not (self.use_delta or self.use_subspace):
            raise ValueError("the output module needs the subspace term or the residual term")
        if self.ridge < 0 or self.relative_ridge < 0:
            raise ValueError("ridge must be nonnegative")

    def channels(self, scale: int) -> int:
        """Feature width at 1-based ``scale``."""
        return self.base_channels * 2 ** (scale - 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in known})


ABLATIONS = {
    "full": {},
    "no_omega": {"use_omega": False},
    "zero_m": {"fuse": "zero_m"},
    "no_fuse": {"fuse": "none"},
    "no_delta": {"use_delta": False},
    "no_subspace": {"use_subspace": False},
    "no_pyramid": {"pyramid": False},
}


def architecture(config: NetConfig) -> dict[str, tuple[tuple[int, ...], str]]:
    """Ordered ``name -> (shape, partition)`` for every tensor of the network."""
    c = config
    B, M, S = c.bands, c.m_illums, c.scales
    arch: dict[str, tuple[tuple[int, ...], str]] = {}

    def conv(name, cout, cin, part, k=3):
        arch[f"{name}.w"] = ((cout, cin, k, k), part)
        arch[f"{name}.b"] = ((cout,), part)

    def encoder(prefix, part):
        for m in range(M):
            conv(f"{prefix}stem{m}", c.base_channels, 3, part)
        for i in range(1, S + 1):
            cin = M * c.base_channels if i == 1 else c.channels(i - 1)
            conv(f"{prefix}enc{i}", c.channels(i), cin, part)
            conv(f"{prefix}enc{i}.res1", c.channels(i), c.channels(i), part)
            conv(f"{prefix}enc{i}.res2", c.channels(i), c.channels(i), part)

    def output_module(i):
        if c.use_delta:
            conv(f"out{i}.delta", B, c.channels(i), PRIMARY)
        if c.use_subspace and c.use_omega:
            n_in = B * (1 + int(c.use_delta))
            arch[f"out{i}.omega.w"] = ((1, n_in), PRIMARY)
            arch[f"out{i}.omega.b"] = ((1,), PRIMARY)

    encoder("", SHARED)
    cs = c.channels(S)
    conv("mix1", cs, cs, SHARED, k=1)
    conv("mix2", cs, cs, SHARED, k=1)

    encoder("css.", PRIMARY)
    conv("css.head", 3 * B, cs, PRIMARY)
    conv(f"dec{S}", cs, cs, PRIMARY)
    if c.pyramid or S == 1:
        output_module(S)
    for i in range(S - 1, 0, -1):
        ci = c.channels(i)
        conv(f"up{i}", ci, c.channels(i + 1), PRIMARY)
        if c.pyramid and c.fuse != "none":
            if c.fuse == "full":
                conv(f"fuse{i}.m", ci, 2 * ci + B, PRIMARY)
            conv(f"fuse{i}.out", ci, B + ci, PRIMARY)
        conv(f"dec{i}", ci, 2 * ci, PRIMARY)
        if c.pyramid or i == 1:
            output_module(i)

    conv("aux1", c.base_channels, cs + B, AUXILIARY)
    conv("aux2", 3 * M, c.base_channels, AUXILIARY)
    return arch


@dataclass
class ParamSet:
    """Named float64 tensors, each tagged with its partition."""

    tensors: dict[str, np.ndarray]
    partitions: dict[str, str]

    def __post_init__(self):
        if set(self.tensors) != set(self.partitions):
            raise ValueError("every tensor needs exactly one partition tag")
        bad = set(self.partitions.values()) - set(PARTITIONS)
        if bad:
            raise ValueError(f"unknown partitions {bad}")

    def names(self, *partitions: str) -> list[str]:
        parts = partitions or PARTITIONS
        return [n for n in self.tensors if self.partitions[n] in parts]

    def size(self, partition: str | None = None) -> int:
        return sum(self.tensors[n].size for n in self.names(*([partition] if partition else [])))

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self.tensors.items()}, dict(self.partitions))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __len__(self) -> int:
        return len(self.tensors)

    def equals(self, other: "ParamSet") -> bool:
        return (
            self.tensors.keys() == other.tensors.keys()
            and self.partitions == other.partitions
            and all(np.array_equal(v, other.tensors[k]) for k, v in self.tensors.items())
        )


def init_params(config: NetConfig, seed: int = 0) -> ParamSet:
    """Weights uniform in +-sqrt(6 / fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    tensors, parts = {}, {}
    for name, (shape, part) in architecture(config).items():
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        parts[name] = part
    return ParamSet(tensors, parts)


@dataclass
class ForwardTrace:
    """Graph outputs of one forward pass; ``recovered[1]`` is the final estimate."""

    recovered: dict[int, ad.Var]
    css: ad.Var
    omega: dict[int, ad.Var]
    delta: dict[int, ad.Var]
    subspace: dict[int, np.ndarray]
    aux: ad.Var
    params: dict[str, ad.Var] = field(repr=False)
    config: NetConfig = field(repr=False)

    @property
    def final(self) -> np.ndarray:
        return self.recovered[1].value


# building blocks


def _conv(x, p, name, act=False, slope=0.01):
    y = ad.conv2d(x, p[f"{name}.w"], p[f"{name}.b"])
    return ad.leaky_relu(y, slope) if act else y


def _resblock(x, p, name, slope):
    h = _conv(x, p, f"{name}.res1", act=True, slope=slope)
    return ad.add(x, _conv(h, p, f"{name}.res2"))


def encoder(x: ad.Var, p, config: NetConfig, prefix: str = "") -> list[ad.Var]:
    """Per-scale encoder features ``e^1 ... e^S`` (finest first)."""
    M, slope = config.m_illums, config.leaky_slope
    if x.shape[1] != 3 * M:
        raise ValueError(f"input has {x.shape[1]} channels, config expects {3 * M}")
    stems = []
    for m in range(M):
        xm = ad.const(x.value[:, 3 * m : 3 * m + 3])
        stems.append(_conv(xm, p, f"{prefix}stem{m}"))
    h = stems[0] if M == 1 else ad.concat(*stems)
    feats = []
    for i in range(1, config.scales + 1):
        if i > 1:
            h = ad.avgpool2(h)
        h = _conv(h, p, f"{prefix}enc{i}", act=True, slope=slope)
        h = _resblock(h, p, f"{prefix}enc{i}", slope)
        feats.append(h)
    return feats


def output_module(d: ad.Var, subspace: np.ndarray, p, scale: int, config: NetConfig):
    """Reflectance at one scale: ``omega * R_H + delta``.

    ``subspace`` is the constant ``R_H`` at this resolution. Returns
    ``(R, omega, delta)`` where absent terms are None.
    """
    delta = _conv(d, p, f"out{scale}.delta") if config.use_delta else None
    omega = None
    if not config.use_subspace:
        return delta, omega, delta
    r_h = ad.const(subspace)
    if config.use_omega:
        pooled = ad.global_avg_pool(ad.concat(r_h, delta) if config.use_delta else r_h)
        omega = ad.softplus(ad.dense(pooled, p[f"out{scale}.omega.w"], p[f"out{scale}.omega.b"]))
        base = ad.scale_per_image(omega, r_h)
    else:
        base = r_h
    out = ad.add(base, delta) if config.use_delta else base
    return out, omega, delta


def fuse(e_prev: ad.Var, r_coarse: ad.Var, p, scale: int, config: NetConfig) -> ad.Var:
    """Feature-guided upsampling of ``r_coarse`` using the finer encoder feature ``e_prev``.

    ``low = up(pool(e))``, ``high = e - low``,
    ``m = conv(low | e | up(R))``, output ``conv(up(R) | low) + m * high``.
    """
    if e_prev.shape[2] != 2 * r_coarse.shape[2] or e_prev.shape[3] != 2 * r_coarse.shape[3]:
        raise ValueError("FUSE expects the encoder feature at twice the reflectance resolution")
    low = ad.upsample(ad.avgpool2(e_prev))
    r_up = ad.upsample(r_coarse)
    out = _conv(ad.concat(r_up, low), p, f"fuse{scale}.out")
    if config.fuse == "zero_m":
        return out
    high = ad.sub(e_prev, low)
    m = _conv(ad.concat(low, e_prev, r_up), p, f"fuse{scale}.m")
    return ad.add(out, ad.mul(m, high))


def image_pyramid(x: np.ndarray, scales: int) -> list[np.ndarray]:
    """``x`` at scales 1..S, each level a 2x2 mean of the previous."""
    levels = [np.asarray(x, dtype=np.float64)]
    for _ in range(scales - 1):
        n, c, h, w = levels[-1].shape
        levels.append(levels[-1].reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5)))
    return levels


def subspace_terms(css: np.ndarray, illums: np.ndarray, stack: np.ndarray, config: NetConfig) -> list[np.ndarray]:
    """Constant ``R_H^i`` per scale from a CSS estimate ``(N, 3, B)``.

    The ridge added to ``H H^T`` is ``ridge + relative_ridge * mean eigenvalue``,
    which keeps the estimate bounded when the CSS estimate is poor and a
    light leaves some channel nearly dark.
    """
    H = system_matrix(css, illums)
    if config.white_normalized:
        # inputs are scaled so a white reflector reads 1.0 in the brightest channel
        white = np.max(H.sum(axis=-1), axis=-1)
        H = H / white[:, None, None]
    gram_trace = np.einsum("nij,nij->n", H, H)
    ridge = config.ridge + config.relative_ridge * gram_trace / H.shape[-2]
    P = projection_operator(H, ridge)
    return [np.einsum("nbr,nrhw->nbhw", P, level) for level in image_pyramid(stack, config.scales)]


def forward(params: ParamSet, stack, illums, config: NetConfig, css_override=None) -> ForwardTrace:
    """Run the network on ``stack`` (N, 3M, H, W) under lights ``illums`` (M, B).

    ``css_override`` (N, 3, B) replaces the estimated CSS inside the subspace
    term only; the CSS head output is still returned and supervised.
    """
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim == 3:
        stack = stack[None]
    illums = np.atleast_2d(np.asarray(illums, dtype=np.float64))
    c = config
    S, B, slope = c.scales, c.bands, c.leaky_slope
    if illums.shape != (c.m_illums, B):
        raise ValueError(f"illuminations must be ({c.m_illums}, {B}), got {illums.shape}")
    h, w = stack.shape[2:]
    if h % 2 ** (S - 1) or w % 2 ** (S - 1):
        raise ValueError(f"spatial size {h}x{w} not divisible by {2 ** (S - 1)}")
    expected = architecture(config)
    if set(expected) != set(params.tensors) or any(params[k].shape != v[0] for k, v in expected.items()):
        raise ValueError("parameters do not match the network configuration")

    p = {name: ad.param(value, name) for name, value in params.tensors.items()}
    x = ad.const(stack)

    feats = encoder(x, p, c)
    e = feats[-1]
    bottleneck = ad.add(e, _conv(_conv(e, p, "mix1", act=True, slope=slope), p, "mix2"))

    css_feat = encoder(x, p, c, prefix="css.")[-1]
    head = ad.global_avg_pool(_conv(css_feat, p, "css.head"))
    css = ad.reshape(ad.softplus(head), (stack.shape[0], 3, B))

    proj_css = css.value if css_override is None else np.asarray(css_override, dtype=np.float64)
    sub = subspace_terms(proj_css, illums, stack, c) if c.use_subspace else [None] * S

    recovered, omegas, deltas = {}, {}, {}
    d = _conv(bottleneck, p, f"dec{S}", act=True, slope=slope)
    if c.pyramid or S == 1:
        recovered[S], omegas[S], deltas[S] = output_module(d, sub[S - 1], p, S, c)
    for i in range(S - 1, 0, -1):
        u = _conv(ad.upsample(d), p, f"up{i}", act=True, slope=slope)
        skip = feats[i - 1]
        if c.pyramid and c.fuse != "none":
            skip = fuse(skip, recovered[i + 1], p, i, c)
        d = _conv(ad.concat(u, skip), p, f"dec{i}", act=True, slope=slope)
        if c.pyramid or i == 1:
            recovered[i], omegas[i], deltas[i] = output_module(d, sub[i - 1], p, i, c)

    z = bottleneck
    for _ in range(S - 1):
        z = ad.upsample(z)
    a = _conv(ad.concat(z, recovered[1]), p, "aux1", act=True, slope=slope)
    aux = _conv(a, p, "aux2")

    return ForwardTrace(
        recovered=recovered,
        css=css,
        omega=omegas,
        delta=deltas,
        subspace={i + 1: s for i, s in enumerate(sub) if s is not None},
        aux=aux,
        params=p,
        config=c,
    )


# losses


def loss_primary(trace: ForwardTrace, truth, css_true) -> ad.Var:
    """CSS L1 plus the per-scale reflectance L1 terms (mean absolute errors)."""
    truth = np.asarray(truth, dtype=np.float64)
    if truth.ndim == 3:
        truth = truth[None]
    targets = image_pyramid(truth, trace.config.scales)
    css_true = np.asarray(css_true, dtype=np.float64).reshape(trace.css.shape)
    terms = [ad.l1_mean(trace.css, css_true)]
    for i in sorted(trace.recovered):
        terms.append(ad.l1_mean(trace.recovered[i], targets[i - 1]))
    return ad.total(*terms)


def loss_auxiliary(trace: ForwardTrace, stack) -> ad.Var:
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim == 3:
        stack = stack[None]
    return ad.l1_mean(trace.aux, stack)


def gradients(loss: ad.Var, trace: ForwardTrace) -> dict[str, np.ndarray]:
    """Backpropagate ``loss`` and return one gradient array per parameter (zeros if unreached)."""
    for v in trace.params.values():
        v.grad = None
    ad.backward(loss)
    return {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in trace.params.items()}


def loss_and_grad(params: ParamSet, batch, illums, config: NetConfig, kind: str = "pre", css_override=None):
    """Loss value and gradients for ``kind`` in {'pri', 'aux', 'pre'}.

    ``batch`` is ``(stack, truth, css)``; truth and css may be None for 'aux'.
    Returns ``(loss_value, grads, parts)`` where ``parts`` maps 'pri'/'aux' to
    the component values that were evaluated.
    """
    stack, truth, css = batch
    trace = forward(params, stack, illums, config, css_override=css_override)
    parts, terms = {}, []
    if kind in ("pri", "pre"):
        lp = loss_primary(trace, truth, css)
        parts["pri"] = float(lp.value)
        terms.append(lp)
    if kind in ("aux", "pre"):
        la = loss_auxiliary(trace, stack)
        parts["aux"] = float(la.value)
        terms.append(la)
    if not terms:
        raise ValueError(f"unknown loss kind {kind!r}")
    loss = terms[0] if len(terms) == 1 else ad.total(*terms)
    return float(loss.value), gradients(loss, trace), parts
