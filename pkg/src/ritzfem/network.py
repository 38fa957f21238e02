"""Residual tanh network u(x): R^2 -> R and its derivative machinery.

Architecture: u = C_out . bl_m . ... . bl_1 . tanh . C_in with block
bl(z) = tanh( W2 tanh(W1 z + b1) + b2 + z ).

Exactly three differentiation paths are implemented by hand, and nothing
else: forward-mode input gradients, reverse-mode parameter gradients of
weighted sums of point values, and a tangent-augmented reverse pass for
collocation losses that involve the input gradient.  Tangent states are kept
as (2, P, N) arrays so every heavy contraction is a plain BLAS matmul.

Module-level ``op_counts`` tracks how often each path runs; the finite
element training loop can be audited to be free of input-gradient work.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

CHECKPOINT_MAGIC = 0x52495446  # "RITF"
CHECKPOINT_VERSION = 1


@dataclass
class OpCounts:
    forward_batch: int = 0
    input_gradient: int = 0
    param_vjp: int = 0
    collocation_loss_grad: int = 0

    def reset(self) -> None:
        self.forward_batch = 0
        self.input_gradient = 0
        self.param_vjp = 0
        self.collocation_loss_grad = 0


op_counts = OpCounts()


@dataclass
class ResNet:
    """Parameters of the residual network; arrays share a canonical order."""

    width: int
    blocks: int
    w_in: np.ndarray  # (N, 2)
    b_in: np.ndarray  # (N,)
    w1: list[np.ndarray]  # blocks x (N, N)
    b1: list[np.ndarray]
    w2: list[np.ndarray]
    b2: list[np.ndarray]
    w_out: np.ndarray  # (N,)
    b_out: np.ndarray  # (1,)

    @property
    def dtype(self) -> np.dtype:
        return self.w_in.dtype

    def arrays(self) -> list[np.ndarray]:
        out = [self.w_in, self.b_in]
        for k in range(self.blocks):
            out += [self.w1[k], self.b1[k], self.w2[k], self.b2[k]]
        out += [self.w_out, self.b_out]
        return out

    @property
    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "ResNet":
        return ResNet(
            width=self.width,
            blocks=self.blocks,
            w_in=self.w_in.copy(),
            b_in=self.b_in.copy(),
            w1=[a.copy() for a in self.w1],
            b1=[a.copy() for a in self.b1],
            w2=[a.copy() for a in self.w2],
            b2=[a.copy() for a in self.b2],
            w_out=self.w_out.copy(),
            b_out=self.b_out.copy(),
        )

    def astype(self, dtype) -> "ResNet":
        net = self.copy()
        for i, a in enumerate(net.arrays()):
            a_cast = a.astype(dtype)
            _assign_by_index(net, i, a_cast)
        return net


@dataclass
class ParamGradient:
    """Same array layout as ResNet.arrays(); plain container for gradients."""

    arrays: list[np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    def __add__(self, other: "ParamGradient") -> "ParamGradient":
        return ParamGradient([a + b for a, b in zip(self.arrays, other.arrays)])

    def scaled(self, factor: float) -> "ParamGradient":
        return ParamGradient([factor * a for a in self.arrays])


def _assign_by_index(net: ResNet, index: int, value: np.ndarray) -> None:
    names = ["w_in", "b_in"]
    for k in range(net.blocks):
        names += [("w1", k), ("b1", k), ("w2", k), ("b2", k)]
    names += ["w_out", "b_out"]
    key = names[index]
    if isinstance(key, tuple):
        getattr(net, key[0])[key[1]] = value
    else:
        setattr(net, key, value)


def parameter_count(width: int, blocks: int) -> int:
    """3N + m(2N^2 + 2N) + (N + 1): both affine maps carry biases."""
    return 3 * width + blocks * (2 * width * width + 2 * width) + width + 1


def init(width: int, blocks: int, seed: int, scheme: str = "glorot", dtype=np.float64) -> ResNet:
    """Deterministic initialisation.

    ``glorot``: all weights Glorot-uniform with tanh gain 5/3, biases zero.
    ``ridge``: first layer set to tanh ridge features (random directions with
    hinges spread over the unit square, one quarter axis-aligned and hinged on
    the walls), hidden blocks Glorot, output map zero.  The zero output map
    makes the network start at u == 0, which keeps the first boundary-penalty
    gradients small; Adam's second-moment state otherwise remembers the huge
    initial penalty gradient for thousands of steps and stalls the run.
    """
    if width < 1 or blocks < 1:
        raise ValueError(f"width and blocks must be >= 1, got {width}, {blocks}")
    rng = np.random.default_rng(seed)
    gain = 5.0 / 3.0

    def glorot(fan_in: int, fan_out: int, shape: tuple) -> np.ndarray:
        bound = gain * np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)

    w_in = glorot(2, width, (width, 2))
    b_in = np.zeros(width)
    w1 = [glorot(width, width, (width, width)) for _ in range(blocks)]
    b1 = [np.zeros(width) for _ in range(blocks)]
    w2 = [glorot(width, width, (width, width)) for _ in range(blocks)]
    b2 = [np.zeros(width) for _ in range(blocks)]
    w_out = glorot(width, 1, (width,))
    b_out = np.zeros(1)

    if scheme == "ridge":
        n_wall = width // 4
        n_free = width - n_wall
        theta = rng.uniform(0.0, 2.0 * np.pi, n_free)
        mag = rng.uniform(0.3, 1.0, n_free) * 4.0
        rows = [np.column_stack([mag * np.cos(theta), mag * np.sin(theta)])]
        centers = rng.uniform(0.0, 1.0, (n_free, 2))
        offs = [-np.sum(rows[0] * centers, axis=1)]
        walls = [((1.0, 0.0), 0.0), ((-1.0, 0.0), 1.0), ((0.0, 1.0), 0.0), ((0.0, -1.0), 1.0)]
        for i in range(n_wall):
            (dx, dy), off = walls[i % 4]
            s = rng.uniform(0.5, 1.0) * 4.0
            w_row = np.array([dx * s, dy * s])
            rows.append(w_row[None, :])
            offs.append(np.array([-w_row @ np.array([off, off])]))
        w_in = np.vstack(rows)
        b_in = np.concatenate(offs)
        w_out = np.zeros(width)
    elif scheme != "glorot":
        raise ValueError(f"unknown init scheme {scheme!r} (use 'glorot' or 'ridge')")

    net = ResNet(
        width=width,
        blocks=blocks,
        w_in=w_in,
        b_in=b_in,
        w1=w1,
        b1=b1,
        w2=w2,
        b2=b2,
        w_out=w_out,
        b_out=b_out,
    )
    if np.dtype(dtype) != np.float64:
        net = net.astype(dtype)
    assert net.num_parameters == parameter_count(width, blocks)
    return net


def _as_batch(net: ResNet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=net.dtype)
    return x[None, :] if x.ndim == 1 else x


def forward_batch(net: ResNet, points: np.ndarray) -> np.ndarray:
    """u at each of the (P, 2) points; returns (P,)."""
    op_counts.forward_batch += 1
    x = _as_batch(net, points)
    z = np.tanh(x @ net.w_in.T + net.b_in)
    for k in range(net.blocks):
        t = np.tanh(z @ net.w1[k].T + net.b1[k])
        z = np.tanh(t @ net.w2[k].T + net.b2[k] + z)
    return z @ net.w_out + net.b_out[0]


def forward(net: ResNet, x: np.ndarray) -> float:
    return float(forward_batch(net, np.asarray(x))[0])


def _lin_tan(j: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Apply a linear map to both tangent channels: (2,P,n) @ w.T -> (2,P,n')."""
    d, p, n = j.shape
    return (j.reshape(d * p, n) @ w.T).reshape(d, p, -1)


def input_gradient_batch(net: ResNet, points: np.ndarray) -> np.ndarray:
    """grad_x u at each point by forward-mode propagation; returns (P, 2)."""
    op_counts.input_gradient += 1
    x = _as_batch(net, points)
    p = x.shape[0]
    z = np.tanh(x @ net.w_in.T + net.b_in)
    j = (1.0 - z * z)[None, :, :] * net.w_in.T[:, None, :]
    for k in range(net.blocks):
        t = np.tanh(z @ net.w1[k].T + net.b1[k])
        jt = (1.0 - t * t)[None] * _lin_tan(j, net.w1[k])
        zn = np.tanh(t @ net.w2[k].T + net.b2[k] + z)
        j = (1.0 - zn * zn)[None] * (_lin_tan(jt, net.w2[k]) + j)
        z = zn
    return (j.reshape(2 * p, net.width) @ net.w_out).reshape(2, p).T


def input_gradient(net: ResNet, x: np.ndarray) -> np.ndarray:
    return input_gradient_batch(net, np.asarray(x))[0]


def param_vjp(net: ResNet, points: np.ndarray, cotangents: np.ndarray) -> ParamGradient:
    """grad_theta of sum_i c_i u(x_i) by reverse mode.

    This is the only parameter derivative finite element training needs: the
    chain rule passes the nodal energy gradient in as the cotangent vector.
    """
    op_counts.param_vjp += 1
    x = _as_batch(net, points)
    c = np.asarray(cotangents, dtype=net.dtype)
    if c.shape != (x.shape[0],):
        raise ValueError("one cotangent per point required")

    zs = [np.tanh(x @ net.w_in.T + net.b_in)]
    ts = []
    for k in range(net.blocks):
        t = np.tanh(zs[-1] @ net.w1[k].T + net.b1[k])
        zs.append(np.tanh(t @ net.w2[k].T + net.b2[k] + zs[-1]))
        ts.append(t)

    g_w_out = c @ zs[-1]
    g_b_out = np.array([np.sum(c)], dtype=net.dtype)
    zb = c[:, None] * net.w_out[None, :]
    g_blocks: list[tuple[np.ndarray, ...]] = [None] * net.blocks  # type: ignore[list-item]
    for k in range(net.blocks - 1, -1, -1):
        z_in, t, z_out = zs[k], ts[k], zs[k + 1]
        qb = zb * (1.0 - z_out * z_out)
        g_w2 = qb.T @ t
        g_b2 = qb.sum(axis=0)
        pb = (qb @ net.w2[k]) * (1.0 - t * t)
        g_w1 = pb.T @ z_in
        g_b1 = pb.sum(axis=0)
        g_blocks[k] = (g_w1, g_b1, g_w2, g_b2)
        zb = pb @ net.w1[k] + qb
    ab = zb * (1.0 - zs[0] * zs[0])
    arrays = [ab.T @ x, ab.sum(axis=0)]
    for k in range(net.blocks):
        arrays.extend(g_blocks[k])
    arrays += [g_w_out, g_b_out]
    return ParamGradient(arrays)


def collocation_loss_grad(
    net: ResNet,
    points: np.ndarray,
    weights: np.ndarray,
    f_values: np.ndarray,
    boundary_points: np.ndarray | None = None,
    boundary_weights: np.ndarray | None = None,
) -> tuple[float, ParamGradient]:
    """Collocation energy and its parameter gradient.

    loss = sum_z w_z ( 1/2 |grad u(z)|^2 - f(z) u(z) )
         + sum_b bw_b u(y_b)^2                      (optional boundary term)

    The quadratic gradient term makes this the one loss that needs mixed
    derivatives; it runs a forward pass augmented with input tangents and
    differentiates the whole augmented computation in reverse.
    """
    op_counts.collocation_loss_grad += 1
    x = _as_batch(net, points)
    p = x.shape[0]
    n = net.width
    w = np.asarray(weights, dtype=net.dtype)
    fv = np.asarray(f_values, dtype=net.dtype)
    if w.shape != (p,) or fv.shape != (p,):
        raise ValueError("weights and f_values must match the number of points")

    # forward pass with tangent channels, keeping every intermediate
    z0 = np.tanh(x @ net.w_in.T + net.b_in)
    j0 = (1.0 - z0 * z0)[None, :, :] * net.w_in.T[:, None, :]
    zs, js, ts, taus = [z0], [j0], [], []
    z, j = z0, j0
    for k in range(net.blocks):
        t = np.tanh(z @ net.w1[k].T + net.b1[k])
        jp = _lin_tan(j, net.w1[k])
        jt = (1.0 - t * t)[None] * jp
        zn = np.tanh(t @ net.w2[k].T + net.b2[k] + z)
        jq = _lin_tan(jt, net.w2[k]) + j
        jn = (1.0 - zn * zn)[None] * jq
        ts.append(t)
        taus.append((jp, jt, jq))
        zs.append(zn)
        js.append(jn)
        z, j = zn, jn
    u = z @ net.w_out + net.b_out[0]
    gxy = (j.reshape(2 * p, n) @ net.w_out).reshape(2, p).T
    loss = float(np.sum(w * (0.5 * np.sum(gxy * gxy, axis=1) - fv * u)))

    # reverse pass through the tangent-augmented graph
    ub = -w * fv
    gb = (w[:, None] * gxy).T[:, :, None]  # (2, P, 1)
    g_w_out = ub @ zs[-1] + gb.reshape(2 * p) @ js[-1].reshape(2 * p, n)
    g_b_out = np.array([np.sum(ub)], dtype=net.dtype)
    zb = ub[:, None] * net.w_out[None, :]
    jb = gb * net.w_out[None, None, :]
    g_blocks: list[tuple[np.ndarray, ...]] = [None] * net.blocks  # type: ignore[list-item]
    for k in range(net.blocks - 1, -1, -1):
        z_in, j_in = zs[k], js[k]
        t, z_out = ts[k], zs[k + 1]
        jp, jt, jq = taus[k]
        s = 1.0 - z_out * z_out
        qb = zb * s + (jb[0] * jq[0] + jb[1] * jq[1]) * (-2.0 * z_out * s)
        jqb = s[None] * jb
        g_w2 = qb.T @ t + jqb.reshape(2 * p, n).T @ jt.reshape(2 * p, n)
        g_b2 = qb.sum(axis=0)
        tb = qb @ net.w2[k]
        jtb = _lin_tan(jqb, net.w2[k].T)
        st = 1.0 - t * t
        tpb = tb * st + (jtb[0] * jp[0] + jtb[1] * jp[1]) * (-2.0 * t * st)
        jpb = st[None] * jtb
        g_w1 = tpb.T @ z_in + jpb.reshape(2 * p, n).T @ j_in.reshape(2 * p, n)
        g_b1 = tpb.sum(axis=0)
        g_blocks[k] = (g_w1, g_b1, g_w2, g_b2)
        zb = qb + tpb @ net.w1[k]
        jb = jqb + _lin_tan(jpb, net.w1[k].T)
    s0 = 1.0 - z0 * z0
    w_in_t = net.w_in.T[:, None, :]
    ab = zb * s0 + (jb[0] * w_in_t[0] + jb[1] * w_in_t[1]) * (-2.0 * z0 * s0)
    g_w_in = ab.T @ x + (s0[None] * jb).sum(axis=1).T
    g_b_in = ab.sum(axis=0)

    arrays = [g_w_in, g_b_in]
    for k in range(net.blocks):
        arrays.extend(g_blocks[k])
    arrays += [g_w_out, g_b_out]
    grad = ParamGradient(arrays)

    if boundary_points is not None:
        yb = _as_batch(net, boundary_points)
        bw = np.asarray(boundary_weights, dtype=net.dtype)
        if bw.shape != (yb.shape[0],):
            raise ValueError("one weight per boundary point required")
        uv = forward_batch(net, yb)
        loss += float(np.sum(bw * uv * uv))
        grad = grad + param_vjp(net, yb, 2.0 * bw * uv)
    return loss, grad


def save_checkpoint(net: ResNet, path: str) -> None:
    """Flat f64 parameter dump with a 5-integer header (magic, version, N, m, precision)."""
    precision = 0 if net.dtype == np.float64 else 1
    header = np.array(
        [CHECKPOINT_MAGIC, CHECKPOINT_VERSION, net.width, net.blocks, precision], dtype=np.int64
    )
    flat = np.concatenate([a.ravel().astype(np.float64) for a in net.arrays()])
    with open(path, "wb") as fh:
        header.tofile(fh)
        flat.tofile(fh)


def load_checkpoint(path: str) -> ResNet:
    with open(path, "rb") as fh:
        header = np.fromfile(fh, dtype=np.int64, count=5)
        if len(header) != 5 or header[0] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a network checkpoint")
        if header[1] != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header[1]}")
        width, blocks, precision = int(header[2]), int(header[3]), int(header[4])
        flat = np.fromfile(fh, dtype=np.float64)
    expected = parameter_count(width, blocks)
    if flat.size != expected:
        raise ValueError(f"{path}: expected {expected} parameters, found {flat.size}")
    dtype = np.float64 if precision == 0 else np.float32
    net = init(width, blocks, seed=0, scheme="glorot", dtype=dtype)
    offset = 0
    for i, a in enumerate(net.arrays()):
        chunk = flat[offset : offset + a.size].reshape(a.shape).astype(dtype)
        _assign_by_index(net, i, chunk)
        offset += a.size
    return net


def set_from_flat(net: ResNet, flat: np.ndarray) -> None:
    """Load parameters from a flat vector in canonical order (testing helper)."""
    offset = 0
    for i, a in enumerate(net.arrays()):
        _assign_by_index(net, i, flat[offset : offset + a.size].reshape(a.shape).astype(net.dtype))
        offset += a.size
