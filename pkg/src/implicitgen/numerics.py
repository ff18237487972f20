"""Dense MLP forward/backward passes, Adam, and a finite-difference harness.

Everything here operates on plain numpy arrays. The two network families used
elsewhere (the SDF decoder and the latent denoiser) are both describable by
:class:`MlpArch`: a stack of fully-connected layers with optional skip
concatenations and optional per-layer time-embedding injection. Reverse-mode
gradients are computed by hand from a tape recorded during the forward pass;
no general-purpose autodiff is involved, which keeps runs deterministic and
lets the gradient checker work on f64 copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "MlpArch",
    "MlpParams",
    "Tape",
    "AdamState",
    "ShapeError",
    "mlp_forward",
    "mlp_forward_batch",
    "mlp_backward",
    "mlp_backward_batch",
    "init_params",
    "adam_step",
    "grad_check",
    "softplus",
    "sigmoid",
    "silu",
    "make_rng",
    "spawn_rng",
]

SKIP_INPUT = "input"
SKIP_LAYER1 = "layer1"


class ShapeError(ValueError):
    """Raised when an array does not match the declared architecture."""


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def spawn_rng(seed: int, *stream: int) -> np.random.Generator:
    """Deterministic per-stream generator derived from (seed, *stream)."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(seed, spawn_key=stream))
    )


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x):
    return x * sigmoid(x)


def _silu_grad(x):
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


@dataclass(frozen=True)
class MlpArch:
    """Architecture descriptor for a fully-connected stack.

    ``skips`` lists (source, target_layer) pairs with 1-based target layers;
    the source output is concatenated onto the target layer's input. When
    ``time_embed_dim`` > 0, every layer except the first owns a linear
    projection of the time embedding (followed by SiLU) that is added to the
    layer's concatenated input.
    """

    input_dim: int
    hidden_dim: int
    num_layers: int
    output_dim: int
    activation: str = "softplus"  # relu | softplus
    skips: tuple = ()  # of (source, target_layer)
    time_embed_dim: int = 0

    def __post_init__(self):
        if self.num_layers < 1:
            raise ShapeError("num_layers must be >= 1")
        for src, tgt in self.skips:
            if src not in (SKIP_INPUT, SKIP_LAYER1):
                raise ShapeError(f"unknown skip source {src!r}")
            if not (1 <= tgt <= self.num_layers):
                raise ShapeError(f"skip target {tgt} outside [1, {self.num_layers}]")
            if src == SKIP_INPUT and tgt < 1:
                raise ShapeError("input skip must target a layer")
            if src == SKIP_LAYER1 and tgt <= 1:
                raise ShapeError("layer-1 skip must target a later layer")
        if self.activation not in ("relu", "softplus"):
            raise ShapeError(f"unknown activation {self.activation!r}")

    def skip_width(self, source: str) -> int:
        return self.input_dim if source == SKIP_INPUT else self.hidden_dim

    def layer_in_width(self, layer: int) -> int:
        """Input width of 1-based layer index, including skip concatenations."""
        base = self.input_dim if layer == 1 else self.hidden_dim
        extra = sum(self.skip_width(s) for s, t in self.skips if t == layer)
        return base + extra

    def layer_out_width(self, layer: int) -> int:
        return self.output_dim if layer == self.num_layers else self.hidden_dim

    def has_time_proj(self, layer: int) -> bool:
        return self.time_embed_dim > 0 and layer >= 2

    def param_shapes(self) -> dict:
        shapes = {}
        for i in range(1, self.num_layers + 1):
            shapes[f"W{i}"] = (self.layer_out_width(i), self.layer_in_width(i))
            shapes[f"b{i}"] = (self.layer_out_width(i),)
            if self.has_time_proj(i):
                shapes[f"TW{i}"] = (self.layer_in_width(i), self.time_embed_dim)
                shapes[f"Tb{i}"] = (self.layer_in_width(i),)
        return shapes


@dataclass
class MlpParams:
    """Weights keyed by name (W1/b1..Wn/bn plus TW{i}/Tb{i} projections)."""

    arrays: dict

    def __getitem__(self, key):
        return self.arrays[key]

    def keys(self):
        return sorted(self.arrays.keys())

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype

    def astype(self, dtype) -> "MlpParams":
        return MlpParams({k: v.astype(dtype) for k, v in self.arrays.items()})

    def copy(self) -> "MlpParams":
        return MlpParams({k: v.copy() for k, v in self.arrays.items()})

    def map(self, fn) -> "MlpParams":
        return MlpParams({k: fn(v) for k, v in self.arrays.items()})

    def validate(self, arch: MlpArch):
        expected = arch.param_shapes()
        if set(expected) != set(self.arrays):
            missing = set(expected) ^ set(self.arrays)
            raise ShapeError(f"parameter keys mismatch: {sorted(missing)}")
        for k, shp in expected.items():
            if self.arrays[k].shape != shp:
                raise ShapeError(f"{k}: expected shape {shp}, got {self.arrays[k].shape}")
            if not np.all(np.isfinite(self.arrays[k])):
                raise ShapeError(f"{k}: non-finite entries")


def init_params(
    arch: MlpArch, rng: np.random.Generator, dtype=np.float32,
    final_scale: float = 1.0,
) -> MlpParams:
    """Uniform fan-in initialization: entries in +-1/sqrt(fan_in), zero biases.

    ``final_scale`` shrinks the last layer's weights so initial outputs start
    near zero; training under a clamped loss cannot move at all when the
    initial predictions land outside the clamp band, so the trainers pass a
    small value here.
    """
    arrays = {}
    last = f"W{arch.num_layers}"
    for k, shp in arch.param_shapes().items():
        if k.startswith("W") or k.startswith("TW"):
            bound = 1.0 / math.sqrt(shp[1])
            if k == last:
                bound *= final_scale
            arrays[k] = rng.uniform(-bound, bound, size=shp).astype(dtype)
        else:
            arrays[k] = np.zeros(shp, dtype=dtype)
    return MlpParams(arrays)


@dataclass
class Tape:
    """Activation record from a forward pass, consumed by the backward pass."""

    arch: MlpArch
    params: MlpParams
    x: np.ndarray  # (B, input_dim)
    time_embed: np.ndarray | None
    layer_inputs: list = field(default_factory=list)  # u_i: post-concat, pre-time-add
    layer_pre: list = field(default_factory=list)  # a_i = v_i W^T + b
    layer_out: list = field(default_factory=list)  # h_i = act(a_i)
    time_pre: list = field(default_factory=list)  # TW temb + Tb (None when absent)


def _activate(arch: MlpArch, a):
    return np.maximum(a, 0.0) if arch.activation == "relu" else softplus(a)


def _activate_grad(arch: MlpArch, a):
    if arch.activation == "relu":
        return (a > 0.0).astype(a.dtype)
    return sigmoid(a)


def mlp_forward_batch(
    params: MlpParams,
    arch: MlpArch,
    x: np.ndarray,
    time_embed: np.ndarray | None = None,
    want_tape: bool = True,
):
    """Batched forward pass. ``x`` is (B, input_dim); ``time_embed`` is
    (B, time_embed_dim) or (time_embed_dim,) when the arch declares one.

    Returns (output (B, output_dim), Tape or None).
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise ShapeError(
            f"input: expected (B, {arch.input_dim}), got {x.shape} (layer 1)"
        )
    if (time_embed is None) != (arch.time_embed_dim == 0):
        raise ShapeError("time_embed presence must match arch.time_embed_dim")
    if time_embed is not None:
        time_embed = np.asarray(time_embed)
        if time_embed.ndim == 1:
            time_embed = np.broadcast_to(time_embed, (x.shape[0], time_embed.size))
        if time_embed.shape != (x.shape[0], arch.time_embed_dim):
            raise ShapeError(
                f"time_embed: expected (B, {arch.time_embed_dim}), got {time_embed.shape}"
            )

    tape = Tape(arch, params, x, time_embed) if want_tape else None
    h = x
    layer1_out = None
    for i in range(1, arch.num_layers + 1):
        pieces = [h]
        for src, tgt in arch.skips:
            if tgt == i:
                pieces.append(x if src == SKIP_INPUT else layer1_out)
        u = pieces[0] if len(pieces) == 1 else np.concatenate(pieces, axis=1)
        if u.shape[1] != arch.layer_in_width(i):
            raise ShapeError(
                f"layer {i}: input width {u.shape[1]} != {arch.layer_in_width(i)}"
            )
        if arch.has_time_proj(i):
            tpre = time_embed @ params[f"TW{i}"].T + params[f"Tb{i}"]
            v = u + silu(tpre)
        else:
            tpre = None
            v = u
        W, b = params[f"W{i}"], params[f"b{i}"]
        if W.shape != (arch.layer_out_width(i), arch.layer_in_width(i)):
            raise ShapeError(f"layer {i}: weight shape {W.shape} mismatch")
        a = v @ W.T + b
        h = a if i == arch.num_layers else _activate(arch, a)
        if i == 1:
            layer1_out = h
        if want_tape:
            tape.layer_inputs.append(v)
            tape.layer_pre.append(a)
            tape.layer_out.append(h)
            tape.time_pre.append(tpre)
    return h, tape


def mlp_forward(params, arch, x, time_embed=None):
    """Single-vector forward pass; returns (output vector, tape)."""
    out, tape = mlp_forward_batch(
        params, arch, np.asarray(x)[None, :],
        None if time_embed is None else np.asarray(time_embed)[None, :],
    )
    return out[0], tape


def mlp_backward_batch(tape: Tape, upstream: np.ndarray):
    """Reverse-mode pass. ``upstream`` is dL/d(output), shape (B, output_dim).

    Returns (grads: MlpParams-shaped dict wrapper, input_grad (B, input_dim)).
    """
    arch, params = tape.arch, tape.params
    upstream = np.asarray(upstream)
    grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    dh = upstream
    dlayer1 = None  # accumulated gradient on layer-1 output from skips
    for i in range(arch.num_layers, 0, -1):
        if i == 1 and dlayer1 is not None:
            dh = dh + dlayer1
        a = tape.layer_pre[i - 1]
        da = dh if i == arch.num_layers else dh * _activate_grad(arch, a)
        v = tape.layer_inputs[i - 1]
        grads[f"W{i}"] += da.T @ v
        grads[f"b{i}"] += da.sum(axis=0)
        dv = da @ params[f"W{i}"]
        if arch.has_time_proj(i):
            tpre = tape.time_pre[i - 1]
            dtpre = dv * _silu_grad(tpre)
            grads[f"TW{i}"] += dtpre.T @ tape.time_embed
            grads[f"Tb{i}"] += dtpre.sum(axis=0)
        du = dv
        # split the concatenated input back into trunk and skip pieces
        base = arch.input_dim if i == 1 else arch.hidden_dim
        dh = du[:, :base]
        off = base
        for src, tgt in arch.skips:
            if tgt != i:
                continue
            w = arch.skip_width(src)
            piece = du[:, off : off + w]
            off += w
            if src == SKIP_INPUT:
                grads.setdefault("_input", np.zeros_like(tape.x))
                grads["_input"] += piece
            else:
                dlayer1 = piece if dlayer1 is None else dlayer1 + piece
    dinput = dh + grads.pop("_input", 0.0)
    return MlpParams(grads), dinput


def mlp_backward(tape: Tape, upstream: np.ndarray):
    """Single-vector variant of :func:`mlp_backward_batch`."""
    grads, dinput = mlp_backward_batch(tape, np.asarray(upstream)[None, :])
    return grads, dinput[0]


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: MlpParams, **kw) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in params.arrays.items()},
            v={k: np.zeros_like(a) for k, a in params.arrays.items()},
            **kw,
        )


class NonFiniteGradient(RuntimeError):
    """Gradient blow-up; message carries the offending key and max |g|."""


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, lr: float):
    """One Adam update with bias correction. Mutates ``state`` and returns new params."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    for k in sorted(grads.arrays):
        g = grads.arrays[k]
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(
                f"non-finite gradient in {k}: max |g| = {np.nanmax(np.abs(g))}"
            )
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    out = {}
    for k in sorted(params.arrays):
        g = grads.arrays[k]
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        mhat = state.m[k] / c1
        vhat = state.v[k] / c2
        out[k] = params.arrays[k] - lr * mhat / (np.sqrt(vhat) + state.eps)
    return MlpParams(out), state


def grad_check(params: MlpParams, arch: MlpArch, loss_fn, tolerance=1e-4, step=1e-3):
    """Compare analytic gradients against central finite differences.

    ``loss_fn(params)`` must return (scalar loss, MlpParams-shaped gradients).
    Everything is evaluated on f64 copies. The relative error is computed per
    parameter group as max|analytic - numeric| / max(|analytic|, |numeric|)
    over the group; an elementwise ratio would amplify finite-difference
    truncation noise on entries whose true gradient happens to be near zero.

    Central differences are only a valid oracle where the loss is
    differentiable across the whole probe interval. With piecewise-linear
    components (ReLU, L1, clamps) a probe that straddles a kink measures a
    blend of one-sided slopes, not the gradient at the centre. Such entries
    are detected by the gradient jump between the probe points and re-probed
    with a progressively smaller step: a kink at distance d from the centre
    stops being straddled once the step drops below d, whereas a genuinely
    wrong analytic gradient shows no jump and keeps failing at every step.

    Returns a dict with per-key relative error, the number of kink
    refinement probes taken, and an overall ``ok`` flag.
    """
    p64 = params.astype(np.float64)
    _, analytic = loss_fn(p64)
    report = {"per_key": {}, "max_rel_err": 0.0, "kink_refinements": 0}

    def probe(arr, idx, h):
        orig = arr[idx]
        arr[idx] = orig + h
        lp, _ = loss_fn(p64)
        arr[idx] = orig - h
        lm, _ = loss_fn(p64)
        arr[idx] = orig
        return (lp - lm) / (2.0 * h)

    for k in sorted(p64.arrays):
        arr = p64.arrays[k]
        a = analytic.arrays[k]
        thr = tolerance * max(np.max(np.abs(a), initial=0.0), 1e-12)
        num = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            h = step
            best = probe(arr, idx, h)
            # a probe straddling a kink measures a blend of one-sided slopes,
            # not the gradient at the centre; shrinking the step eventually
            # avoids the kink, while a wrong analytic gradient keeps failing
            # at every step.
            while abs(best - a[idx]) > thr and h > step * 16.0**-4:
                h /= 16.0
                report["kink_refinements"] += 1
                n = probe(arr, idx, h)
                if abs(n - a[idx]) < abs(best - a[idx]):
                    best = n
            num[idx] = best
        denom = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(num), initial=0.0), 1e-12)
        rel = float(np.max(np.abs(a - num), initial=0.0) / denom)
        report["per_key"][k] = rel
        report["max_rel_err"] = max(report["max_rel_err"], rel)
    report["ok"] = report["max_rel_err"] < tolerance
    return report
