"""Reverse-mode differentiation for the illumination/matching pipeline.

A :class:`Tape` records primitive applications in execution order; each node
stores an adjoint closure built from the analytic vector-Jacobian rules in
:mod:`diffstereo.kernels`. ``backward`` replays the closures in reverse to
obtain gradients for the requested leaves.

Primitives are ordinary functions (``add``, ``dft2``, ``cost_volume``, ...)
that accept either :class:`DiffValue` or plain arrays. With no active tape, or
with only untraced inputs, they compute the forward value and return an
untraced :class:`DiffValue`; the same composition code therefore serves both
inference and optimization.

The engine is deliberately narrow: only the primitives the pipeline needs, no
broadcasting cleverness, no higher-order derivatives. One tape per worker
thread; tapes are not shared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NumericError, ShapeError, TapeError

_TAPE_STACK: list["Tape"] = []


class DiffValue:
    """A forward value plus (optionally) its node on the recording tape."""

    __slots__ = ("value", "node")

    def __init__(self, value, node=None):
        self.value = np.asarray(value) if not np.isscalar(value) else value
        self.node = node

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        tag = "traced" if self.node is not None else "const"
        return f"DiffValue({tag}, shape={np.shape(self.value)})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)


class _Node:
    __slots__ = ("idx", "parents", "vjp", "value", "tape")

    def __init__(self, idx, parents, vjp, value, tape):
        self.idx = idx
        self.parents = parents  # tuple of node indices or None for untraced slots
        self.vjp = vjp  # cot -> tuple of grads aligned with parents
        self.value = value
        self.tape = tape


class Tape:
    """Recording context. Use as ``with Tape() as tape: ...``."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._finished = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        if _TAPE_STACK and _TAPE_STACK[-1] is self:
            _TAPE_STACK.pop()
        return False

    @staticmethod
    def active():
        return _TAPE_STACK[-1] if _TAPE_STACK else None

    def leaf(self, value) -> DiffValue:
        """Register an optimization leaf (gradient target)."""
        if self._finished:
            raise TapeError("cannot add a leaf to a finished tape")
        arr = np.asarray(value, dtype=float)
        node = _Node(len(self._nodes), (), None, arr, self)
        self._nodes.append(node)
        return DiffValue(arr, node)

    def _record(self, parents, vjp, value) -> _Node:
        if self._finished:
            raise TapeError("recording against a finished tape")
        node = _Node(len(self._nodes), parents, vjp, value, self)
        self._nodes.append(node)
        return node


def value_of(x):
    """Peek at the ndarray/scalar behind a DiffValue or pass plain values through."""
    return x.value if isinstance(x, DiffValue) else x


def _as_input(x):
    return x if isinstance(x, DiffValue) else DiffValue(x)


def backward(loss: DiffValue, leaves) -> list[np.ndarray]:
    """Gradients of a scalar loss for each leaf; consumes the tape."""
    if loss.node is None:
        raise TapeError("loss was not recorded on a tape")
    if np.size(loss.value) != 1:
        raise TapeError("backward requires a scalar loss")
    tape = loss.node.tape
    if tape._finished:
        raise TapeError("tape already consumed by a previous backward pass")
    tape._finished = True

    cots: dict[int, np.ndarray] = {loss.node.idx: np.float64(1.0)}
    for node in reversed(tape._nodes[: loss.node.idx + 1]):
        if node.vjp is None:
            continue  # leaves keep their accumulated cotangent
        cot = cots.pop(node.idx, None)
        if cot is None:
            continue
        grads = node.vjp(cot)
        for parent, grad in zip(node.parents, grads):
            if parent is None or grad is None:
                continue
            if parent in cots:
                cots[parent] = cots[parent] + grad
            else:
                cots[parent] = grad

    out = []
    for leaf in leaves:
        if leaf.node is None:
            raise TapeError("requested gradient for an untraced value")
        g = cots.get(leaf.node.idx)
        if g is None:
            g = np.zeros_like(np.asarray(leaf.node.value, dtype=float))
        out.append(np.asarray(g))
    return out


# ---------------------------------------------------------------------------
# primitive registry
# ---------------------------------------------------------------------------

@dataclass
class Primitive:
    name: str
    fn: object


PRIMITIVES: dict[str, Primitive] = {}


def _primitive(name):
    def deco(fn):
        PRIMITIVES[name] = Primitive(name, fn)
        fn.primitive_name = name
        return fn

    return deco


def record(name: str, *inputs, **params) -> DiffValue:
    """Apply a registered primitive by name (same as calling it directly)."""
    try:
        prim = PRIMITIVES[name]
    except KeyError:
        raise KeyError(f"unknown primitive {name!r}; known: {sorted(PRIMITIVES)}") from None
    return prim.fn(*inputs, **params)


def _emit(value, parent_dvs, vjp):
    """Attach a node when a tape is active and any input is traced."""
    tape = Tape.active()
    parents = tuple(dv.node.idx if (dv.node is not None) else None for dv in parent_dvs)
    if tape is None or all(p is None for p in parents):
        return DiffValue(value)
    node = tape._record(parents, vjp, value)
    return DiffValue(value, node)


# -- elementwise glue --------------------------------------------------------

@_primitive("add")
def add(a, b) -> DiffValue:
    a, b = _as_input(a), _as_input(b)
    out = value_of(a) + value_of(b)

    def vjp(cot):
        return cot, cot

    return _emit(out, (a, b), vjp)


@_primitive("sub")
def sub(a, b) -> DiffValue:
    a, b = _as_input(a), _as_input(b)
    out = value_of(a) - value_of(b)

    def vjp(cot):
        return cot, -cot

    return _emit(out, (a, b), vjp)


@_primitive("mul")
def mul(a, b) -> DiffValue:
    a, b = _as_input(a), _as_input(b)
    av, bv = value_of(a), value_of(b)
    out = av * bv

    def vjp(cot):
        # conjugation makes this the true adjoint under the interleaved-real
        # inner product; a no-op for real operands
        return cot * np.conj(bv), cot * np.conj(av)

    return _emit(out, (a, b), vjp)


@_primitive("scale")
def scale(a, c: float) -> DiffValue:
    a = _as_input(a)
    out = value_of(a) * c

    def vjp(cot):
        return (cot * np.conj(c),)

    return _emit(out, (a,), vjp)


@_primitive("square")
def square(a) -> DiffValue:
    a = _as_input(a)
    av = value_of(a)
    out = av * av

    def vjp(cot):
        return (2.0 * np.conj(av) * cot,)

    return _emit(out, (a,), vjp)


@_primitive("reshape")
def reshape(a, shape) -> DiffValue:
    a = _as_input(a)
    av = value_of(a)
    out = np.reshape(av, shape)

    def vjp(cot):
        return (np.reshape(cot, np.shape(av)),)

    return _emit(out, (a,), vjp)


@_primitive("asum")
def asum(a) -> DiffValue:
    a = _as_input(a)
    av = value_of(a)
    out = np.sum(av)

    def vjp(cot):
        return (np.full(np.shape(av), cot, dtype=float),)

    return _emit(out, (a,), vjp)


@_primitive("amean")
def amean(a) -> DiffValue:
    a = _as_input(a)
    av = value_of(a)
    n = np.size(av)
    out = np.sum(av) / n

    def vjp(cot):
        return (np.full(np.shape(av), cot / n, dtype=float),)

    return _emit(out, (a,), vjp)


# -- wave optics --------------------------------------------------------------

@_primitive("phase_from_height")
def phase_from_height(h, coeff: float) -> DiffValue:
    """Phase delay = coeff * height, with coeff = 2*pi*(eta - 1) / wavelength."""
    h = _as_input(h)
    out = value_of(h) * coeff

    def vjp(cot):
        return (np.real(cot) * coeff,)

    return _emit(out, (h,), vjp)


@_primitive("phase_to_field")
def phase_to_field(phi, amplitude=1.0) -> DiffValue:
    phi = _as_input(phi)
    out = kernels.phase_to_field(value_of(phi), amplitude)

    def vjp(cot):
        return (kernels.phase_to_field_vjp(out, cot),)

    return _emit(out, (phi,), vjp)


@_primitive("dft2")
def dft2(u) -> DiffValue:
    u = _as_input(u)
    out = kernels.dft2_unitary(value_of(u))

    def vjp(cot):
        return (kernels.idft2_unitary(cot),)

    return _emit(out, (u,), vjp)


@_primitive("idft2")
def idft2(v) -> DiffValue:
    v = _as_input(v)
    out = kernels.idft2_unitary(value_of(v))

    def vjp(cot):
        return (kernels.dft2_unitary(cot),)

    return _emit(out, (v,), vjp)


@_primitive("magnitude_sq")
def magnitude_sq(u) -> DiffValue:
    u = _as_input(u)
    uv = value_of(u)
    out = kernels.magnitude_sq(uv)

    def vjp(cot):
        return (kernels.magnitude_sq_vjp(uv, np.real(cot)),)

    return _emit(out, (u,), vjp)


@_primitive("resample_bicubic")
def resample_bicubic(p, scale_factor: float) -> DiffValue:
    p = _as_input(p)
    out = kernels.resample_bicubic(value_of(p), scale_factor)

    def vjp(cot):
        return (kernels.resample_bicubic_vjp(cot, scale_factor),)

    return _emit(out, (p,), vjp)


# -- scene synthesis ----------------------------------------------------------

@_primitive("warp_horizontal")
def warp_horizontal(p, disp) -> DiffValue:
    p, disp = _as_input(p), _as_input(disp)
    pv, dv = value_of(p), value_of(disp)
    out = kernels.warp_horizontal(pv, dv)

    def vjp(cot):
        return kernels.warp_horizontal_vjp(pv, dv, cot)

    return _emit(out, (p, disp), vjp)


@_primitive("radiometry_clamp")
def radiometry_clamp(
    p_view, refl, noise, gamma: float, alpha: float, beta: float,
    clip_lo: float = 0.0, clip_hi: float = 1.0,
) -> DiffValue:
    p_view = _as_input(p_view)
    pv = value_of(p_view)
    refl = np.asarray(refl, dtype=float)
    noise = np.asarray(noise, dtype=float)
    out = kernels.radiometry_clamp(pv, refl, noise, gamma, alpha, beta, clip_lo, clip_hi)

    def vjp(cot):
        g = kernels.radiometry_clamp_vjp(
            pv, refl, noise, gamma, alpha, beta, clip_lo, clip_hi, cot
        )
        return (g,)

    return _emit(out, (p_view,), vjp)


# -- matching -----------------------------------------------------------------

@_primitive("cost_volume")
def cost_volume(f_ref, f_other, d_max: int, window: int) -> DiffValue:
    f_ref, f_other = _as_input(f_ref), _as_input(f_other)
    rv, ov = value_of(f_ref), value_of(f_other)
    out = kernels.cost_volume(rv, ov, d_max, window)

    def vjp(cot):
        return kernels.cost_volume_vjp(rv, ov, d_max, window, cot)

    return _emit(out, (f_ref, f_other), vjp)


@_primitive("fuse_cost_volumes")
def fuse_cost_volumes(wide, narrow, ratio: float) -> DiffValue:
    wide, narrow = _as_input(wide), _as_input(narrow)
    wv, nv = value_of(wide), value_of(narrow)
    out = kernels.fuse_cost_volumes(wv, nv, ratio)

    def vjp(cot):
        return kernels.fuse_cost_volumes_vjp(wv.shape, nv.shape, ratio, cot)

    return _emit(out, (wide, narrow), vjp)


@_primitive("soft_argmin")
def soft_argmin(cost, temperature: float) -> DiffValue:
    cost = _as_input(cost)
    cv = value_of(cost)
    out = kernels.soft_argmin(cv, temperature)

    def vjp(cot):
        return (kernels.soft_argmin_vjp(cv, temperature, cot),)

    return _emit(out, (cost,), vjp)


@_primitive("conv2d")
def conv2d(x, k, b) -> DiffValue:
    x, k, b = _as_input(x), _as_input(k), _as_input(b)
    xv, kv, bv = value_of(x), value_of(k), value_of(b)
    out = kernels.conv2d(xv, kv, bv)

    def vjp(cot):
        return kernels.conv2d_vjp(xv, kv, cot)

    return _emit(out, (x, k, b), vjp)


@_primitive("patch_features")
def patch_features(x, window: int) -> DiffValue:
    x = _as_input(x)
    xv = value_of(x)
    out = kernels.patch_features(xv, window)

    def vjp(cot):
        return (kernels.patch_features_vjp(xv.shape, window, cot),)

    return _emit(out, (x,), vjp)


# -- loss ---------------------------------------------------------------------

@_primitive("masked_mae")
def masked_mae(est, gt, mask) -> DiffValue:
    est = _as_input(est)
    ev = value_of(est)
    gt = np.asarray(value_of(gt), dtype=float)
    mask = np.asarray(value_of(mask), dtype=float)
    out = kernels.masked_mae(ev, gt, mask)

    def vjp(cot):
        return (kernels.masked_mae_vjp(ev, gt, mask, float(np.real(cot))),)

    return _emit(out, (est,), vjp)


# ---------------------------------------------------------------------------
# finite-difference validation
# ---------------------------------------------------------------------------

@dataclass
class GradProbe:
    index: tuple
    adjoint: float
    finite_diff: float
    rel_err: float


@dataclass
class GradCheckReport:
    name: str
    max_rel_err: float
    mean_rel_err: float
    probes: list[GradProbe] = field(default_factory=list)

    def __str__(self):
        lines = [
            f"[gradcheck] {self.name}: max_rel={self.max_rel_err:.3e} "
            f"mean_rel={self.mean_rel_err:.3e} probes={len(self.probes)}"
        ]
        return "\n".join(lines)


def _rel_err(a: float, b: float) -> float:
    diff = abs(a - b)
    if diff < 1e-9:
        return 0.0
    return diff / max(abs(a), abs(b))


def check_gradients(
    composite,
    leaf_value: np.ndarray,
    num_probes: int = 8,
    step: float = 1e-5,
    seed: int = 0,
    name: str = "composite",
) -> GradCheckReport:
    """Compare the taped gradient of a scalar composite against central differences.

    ``composite`` maps one DiffValue to a scalar DiffValue and must be
    deterministic (same bits on repeated evaluation); otherwise the comparison
    is meaningless and a :class:`NumericError` is raised.
    """
    leaf_value = np.asarray(leaf_value, dtype=float)

    def evaluate(arr) -> float:
        out = composite(DiffValue(np.asarray(arr, dtype=float)))
        return float(np.real(value_of(out)))

    if evaluate(leaf_value) != evaluate(leaf_value):
        raise NumericError(f"{name}: composite is not deterministic; gradient check invalid")
    base_a = evaluate(leaf_value)
    base_b = evaluate(leaf_value.copy())
    if base_a != base_b:
        raise NumericError(f"{name}: composite is not deterministic; gradient check invalid")

    with Tape() as tape:
        x = tape.leaf(leaf_value)
        loss = composite(x)
        (grad,) = backward(loss, [x])
    grad = np.asarray(np.real(grad), dtype=float)
    if grad.shape != leaf_value.shape:
        raise ShapeError(f"{name}: gradient shape {grad.shape} != leaf shape {leaf_value.shape}")

    rng = np.random.default_rng(seed)
    flat = leaf_value.size
    count = min(num_probes, flat)
    picks = rng.choice(flat, size=count, replace=False)

    probes = []
    for p in picks:
        idx = np.unravel_index(int(p), leaf_value.shape)
        e = np.zeros_like(leaf_value)
        e[idx] = step
        fd = (evaluate(leaf_value + e) - evaluate(leaf_value - e)) / (2.0 * step)
        ad = float(grad[idx])
        probes.append(GradProbe(idx, ad, fd, _rel_err(ad, fd)))

    errs = [p.rel_err for p in probes]
    return GradCheckReport(name, max(errs), sum(errs) / len(errs), probes)
