"""Numpy sequence policy: Bi-LSTM, LSTM and MLP scorers with exact gradients.

Every position of a neighbor sequence gets a scalar score and a softmax over
the valid positions turns scores into selection probabilities. Batches of
variable-length sequences are right-padded and carried through the
recurrences under a mask, so a padded batch gives exactly the same numbers as
running each sequence alone.

Gate layout per direction is ``[input, forget, candidate, output]``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .config import ARCH_KINDS, Architecture

ArrayLike = Union[np.ndarray, Sequence[Sequence[float]]]


class PolicyFormatError(ValueError):
    """Raised for malformed or incompatible policy files."""


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def _directions(arch: Architecture) -> tuple[str, ...]:
    return ("fw", "bw") if arch.kind == "BiLSTM" else ("fw",)


def param_manifest(arch: Architecture) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered ``(name, shape)`` list of every tensor of ``arch``."""
    H = arch.hdim
    out: list[tuple[str, tuple[int, ...]]] = []
    if arch.kind == "MLP":
        in_dim = arch.sdim
        for layer in range(arch.hlays):
            out.append((f"mlp{layer}.W", (H, in_dim)))
            out.append((f"mlp{layer}.b", (H,)))
            in_dim = H
        top = H
    else:
        dirs = _directions(arch)
        in_dim = arch.sdim
        for layer in range(arch.hlays):
            for d in dirs:
                out.append((f"l{layer}.{d}.W_ih", (4 * H, in_dim)))
                out.append((f"l{layer}.{d}.W_hh", (4 * H, H)))
                out.append((f"l{layer}.{d}.b", (4 * H,)))
            in_dim = H * len(dirs)
        top = in_dim
    out.append(("out.w", (arch.adim, top)))
    out.append(("out.b", (arch.adim,)))
    return out


def param_count(arch: Architecture) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_manifest(arch))


@dataclass
class PolicyParams:
    """Flat parameter vector plus the manifest that slices it into tensors."""

    arch: Architecture
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.ndim != 1 or self.flat.size != param_count(self.arch):
            raise ValueError(f"flat vector has {self.flat.size} entries, manifest needs {param_count(self.arch)}")

    @property
    def manifest(self) -> list[tuple[str, tuple[int, ...]]]:
        return param_manifest(self.arch)

    def tensors(self, flat: Optional[np.ndarray] = None) -> dict[str, np.ndarray]:
        """Views into ``flat`` (default: own parameters), keyed by tensor name."""
        flat = self.flat if flat is None else flat
        views, offset = {}, 0
        for name, shape in self.manifest:
            size = int(np.prod(shape))
            views[name] = flat[offset : offset + size].reshape(shape)
            offset += size
        return views

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.arch, self.flat.copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return self.arch == other.arch and np.array_equal(self.flat, other.flat)


@dataclass
class GradientBuffer:
    arch: Architecture
    flat: np.ndarray
    count: int = 0

    @classmethod
    def zeros(cls, arch: Architecture) -> "GradientBuffer":
        return cls(arch, np.zeros(param_count(arch)), 0)

    def add(self, flat: np.ndarray, n: int = 1) -> None:
        if flat.shape != self.flat.shape:
            raise ValueError("gradient shape mismatch")
        self.flat += flat
        self.count += n

    def merge(self, other: "GradientBuffer") -> "GradientBuffer":
        if other.arch != self.arch:
            raise ValueError("cannot merge gradients of different architectures")
        return GradientBuffer(self.arch, self.flat + other.flat, self.count + other.count)

    def tensors(self) -> dict[str, np.ndarray]:
        return PolicyParams(self.arch, self.flat).tensors()


@dataclass(frozen=True)
class SequenceSample:
    """Rows ``(o_j, u_j, d_local, d_global)``, one per neighbor position."""

    rows: np.ndarray = field(repr=False)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ValueError("sequence must have at least one row")
        if rows.shape[1] >= 4 and not (np.all(rows[:, 2] == rows[0, 2]) and np.all(rows[:, 3] == rows[0, 3])):
            raise ValueError("agent-level features must be identical on every row")
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return self.rows.shape[0]


def init_params(arch: Architecture, rng: np.random.Generator) -> PolicyParams:
    """Uniform(-1/sqrt(hdim), 1/sqrt(hdim)) weights, zero biases, forget bias 1."""
    bound = 1.0 / np.sqrt(arch.hdim)
    params = PolicyParams(arch, np.zeros(param_count(arch)))
    H = arch.hdim
    for name, view in params.tensors().items():
        if name.endswith(".b"):
            if name.startswith("l"):
                view[H : 2 * H] = 1.0
        else:
            view[...] = rng.uniform(-bound, bound, size=view.shape)
    return params


def apply_update(params: PolicyParams, grads: Union[GradientBuffer, np.ndarray], lr: float) -> PolicyParams:
    """Gradient ascent step ``theta + lr * g``."""
    g = grads.flat if isinstance(grads, GradientBuffer) else np.asarray(grads, dtype=np.float64)
    if isinstance(grads, GradientBuffer) and grads.arch != params.arch:
        raise ValueError("gradient architecture does not match parameters")
    if g.shape != params.flat.shape:
        raise ValueError(f"gradient shape {g.shape} != parameter shape {params.flat.shape}")
    return PolicyParams(params.arch, params.flat + lr * g)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


def _as_rows(seq) -> np.ndarray:
    if isinstance(seq, SequenceSample):
        return seq.rows
    rows = np.asarray(seq, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("sequence must be a non-empty 2-D array")
    return rows


def pad_batch(seqs: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad sequences into ``(B, L, D)`` inputs and a ``(B, L)`` mask."""
    rows = [_as_rows(s) for s in seqs]
    if not rows:
        raise ValueError("empty batch")
    L = max(r.shape[0] for r in rows)
    D = rows[0].shape[1]
    X = np.zeros((len(rows), L, D))
    mask = np.zeros((len(rows), L), dtype=bool)
    for b, r in enumerate(rows):
        if r.shape[1] != D:
            raise ValueError("inconsistent row width in batch")
        X[b, : r.shape[0]] = r
        mask[b, : r.shape[0]] = True
    return X, mask


# ---------------------------------------------------------------------------
# Recurrences
# ---------------------------------------------------------------------------


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _lstm_forward(X, mask, W_ih, W_hh, b, reverse):
    B, L, _ = X.shape
    H = W_hh.shape[1]
    Zin = X @ W_ih.T + b
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    out = np.zeros((B, L, H))
    acts = np.zeros((B, L, 4 * H))
    c_prev = np.zeros((B, L, H))
    h_prev = np.zeros((B, L, H))
    tanh_c = np.zeros((B, L, H))
    W_hh_T = W_hh.T
    order = range(L - 1, -1, -1) if reverse else range(L)
    for t in order:
        z = Zin[:, t] + h @ W_hh_T
        a = np.empty_like(z)
        a[:, : 2 * H] = _sigmoid(z[:, : 2 * H])
        a[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        a[:, 3 * H :] = _sigmoid(z[:, 3 * H :])
        c_new = a[:, H : 2 * H] * c + a[:, :H] * a[:, 2 * H : 3 * H]
        tc = np.tanh(c_new)
        h_new = a[:, 3 * H :] * tc
        m = mask[:, t, None]
        acts[:, t], c_prev[:, t], h_prev[:, t], tanh_c[:, t] = a, c, h, tc
        out[:, t] = np.where(m, h_new, 0.0)
        c = np.where(m, c_new, c)
        h = np.where(m, h_new, h)
    return out, (X, mask, acts, c_prev, h_prev, tanh_c, reverse)


def _lstm_backward(dout, cache, W_ih, W_hh):
    X, mask, acts, c_prev, h_prev, tanh_c, reverse = cache
    B, L, _ = X.shape
    H = W_hh.shape[1]
    dZ = np.zeros((B, L, 4 * H))
    dW_hh = np.zeros_like(W_hh)
    dh = np.zeros((B, H))
    dc = np.zeros((B, H))
    order = range(L) if reverse else range(L - 1, -1, -1)
    for t in order:
        m = mask[:, t, None]
        a = acts[:, t]
        i, f, g, o = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        tc = tanh_c[:, t]
        dh_new = np.where(m, dh + dout[:, t], 0.0)
        dc_new = np.where(m, dc, 0.0) + dh_new * o * (1.0 - tc * tc)
        dz = np.empty((B, 4 * H))
        dz[:, :H] = dc_new * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc_new * c_prev[:, t] * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dc_new * i * (1.0 - g * g)
        dz[:, 3 * H :] = dh_new * tc * o * (1.0 - o)
        dZ[:, t] = dz
        dW_hh += dz.T @ h_prev[:, t]
        dc = np.where(m, dc_new * f, dc)
        dh = np.where(m, 0.0, dh) + dz @ W_hh
    dW_ih = np.einsum("blg,bld->gd", dZ, X)
    db = dZ.sum(axis=(0, 1))
    dX = dZ @ W_ih
    return dX, dW_ih, dW_hh, db


def _scores_forward(params: PolicyParams, X: np.ndarray, mask: np.ndarray, flat=None):
    arch = params.arch
    P = params.tensors(flat)
    caches = []
    h = X
    if arch.kind == "MLP":
        for layer in range(arch.hlays):
            a = np.tanh(h @ P[f"mlp{layer}.W"].T + P[f"mlp{layer}.b"])
            caches.append((h, a))
            h = a
    else:
        for layer in range(arch.hlays):
            outs = []
            layer_caches = []
            for d in _directions(arch):
                o, c = _lstm_forward(
                    h, mask, P[f"l{layer}.{d}.W_ih"], P[f"l{layer}.{d}.W_hh"], P[f"l{layer}.{d}.b"], reverse=d == "bw"
                )
                outs.append(o)
                layer_caches.append(c)
            caches.append(layer_caches)
            h = np.concatenate(outs, axis=-1) if len(outs) > 1 else outs[0]
    scores = h @ P["out.w"][0] + P["out.b"][0]
    return scores, (h, caches)


def _scores_backward(params: PolicyParams, dscores: np.ndarray, cache) -> np.ndarray:
    arch = params.arch
    P = params.tensors()
    G = {name: np.zeros(shape) for name, shape in params.manifest}
    top, caches = cache
    G["out.w"][0] = np.einsum("bl,blh->h", dscores, top)
    G["out.b"][0] = dscores.sum()
    dh = dscores[:, :, None] * P["out.w"][0]
    if arch.kind == "MLP":
        for layer in reversed(range(arch.hlays)):
            inp, a = caches[layer]
            dz = dh * (1.0 - a * a)
            G[f"mlp{layer}.W"] = np.einsum("blh,bld->hd", dz, inp)
            G[f"mlp{layer}.b"] = dz.sum(axis=(0, 1))
            dh = dz @ P[f"mlp{layer}.W"]
    else:
        H = arch.hdim
        for layer in reversed(range(arch.hlays)):
            dX = None
            for k, d in enumerate(_directions(arch)):
                dX_d, dW_ih, dW_hh, db = _lstm_backward(
                    dh[:, :, k * H : (k + 1) * H], caches[layer][k], P[f"l{layer}.{d}.W_ih"], P[f"l{layer}.{d}.W_hh"]
                )
                G[f"l{layer}.{d}.W_ih"] = dW_ih
                G[f"l{layer}.{d}.W_hh"] = dW_hh
                G[f"l{layer}.{d}.b"] = db
                dX = dX_d if dX is None else dX + dX_d
            dh = dX
    return np.concatenate([G[name].ravel() for name, _ in params.manifest])


def _masked_log_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    s = np.where(mask, scores, -np.inf)
    mx = s.max(axis=1, keepdims=True)
    lse = mx + np.log(np.exp(s - mx).sum(axis=1, keepdims=True))
    return np.where(mask, s - lse, -np.inf)


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def batch_scores(params: PolicyParams, seqs: Sequence, flat=None) -> tuple[np.ndarray, np.ndarray]:
    X, mask = pad_batch(seqs)
    scores, _ = _scores_forward(params, X, mask, flat)
    return scores, mask


def batch_forward(params: PolicyParams, seqs: Sequence) -> list[np.ndarray]:
    """Per-position selection probabilities for each sequence of a batch."""
    scores, mask = batch_scores(params, seqs)
    probs = np.exp(_masked_log_softmax(scores, mask))
    return [probs[b, : mask[b].sum()] for b in range(len(probs))]


def forward(params: PolicyParams, seq) -> np.ndarray:
    return batch_forward(params, [seq])[0]


def _logprob_terms(scores, mask, kept, mode):
    """Log-probabilities per sequence and their derivative w.r.t. the scores."""
    if mode == "softmax":
        logp_pos = _masked_log_softmax(scores, mask)
        probs = np.where(mask, np.exp(logp_pos), 0.0)
        n_kept = kept.sum(axis=1, keepdims=True)
        logp = np.where(kept, logp_pos, 0.0).sum(axis=1)
        dlogp = kept.astype(float) - n_kept * probs
    elif mode == "bernoulli":
        sig = _sigmoid(scores)
        # log(sigmoid(s)) = -logaddexp(0, -s), log(1 - sigmoid(s)) = -logaddexp(0, s)
        terms = np.where(kept, -np.logaddexp(0.0, -scores), -np.logaddexp(0.0, scores))
        logp = np.where(mask, terms, 0.0).sum(axis=1)
        dlogp = np.where(mask, kept.astype(float) - sig, 0.0)
    else:
        raise ValueError(f"unknown log-prob mode {mode!r}")
    return logp, dlogp


def _padded_masks(kept_masks: Sequence, mask: np.ndarray) -> np.ndarray:
    kept = np.zeros(mask.shape, dtype=bool)
    for b, km in enumerate(kept_masks):
        km = np.asarray(km, dtype=bool)
        n = int(mask[b].sum())
        if km.shape != (n,):
            raise ValueError(f"kept mask length {km.shape} does not match sequence length {n}")
        if not km.any():
            raise ValueError("kept mask must keep at least one position")
        kept[b, :n] = km
    return kept


def batch_logprob(params: PolicyParams, seqs: Sequence, kept_masks: Sequence, mode: str = "softmax", flat=None) -> np.ndarray:
    X, mask = pad_batch(seqs)
    kept = _padded_masks(kept_masks, mask)
    scores, _ = _scores_forward(params, X, mask, flat)
    return _logprob_terms(scores, mask, kept, mode)[0]


def batch_logprob_grad(
    params: PolicyParams,
    seqs: Sequence,
    kept_masks: Sequence,
    weights: Optional[Sequence[float]] = None,
    mode: str = "softmax",
) -> tuple[np.ndarray, np.ndarray]:
    """Log-probabilities of a batch and the gradient of ``sum_b w_b * logp_b``."""
    X, mask = pad_batch(seqs)
    kept = _padded_masks(kept_masks, mask)
    w = np.ones(len(seqs)) if weights is None else np.asarray(weights, dtype=float)
    scores, cache = _scores_forward(params, X, mask)
    logp, dlogp = _logprob_terms(scores, mask, kept, mode)
    grad = _scores_backward(params, dlogp * w[:, None], cache)
    return logp, grad


def logprob_and_grad(params: PolicyParams, seq, kept_mask, mode: str = "softmax") -> tuple[float, GradientBuffer]:
    """Log-probability of the kept set and its exact gradient."""
    logp, grad = batch_logprob_grad(params, [seq], [kept_mask], mode=mode)
    return float(logp[0]), GradientBuffer(params.arch, grad, 1)


def finite_diff_grad(params: PolicyParams, loss: Callable[[PolicyParams], float], h: float = 1e-5, coords=None) -> GradientBuffer:
    """Central-difference gradient of ``loss`` at ``params``.

    ``coords`` restricts the evaluation to a subset of flat indices; the other
    entries are left at zero.
    """
    if not h > 0:
        raise ValueError("finite-difference step must be > 0")
    grad = np.zeros_like(params.flat)
    idx = range(params.flat.size) if coords is None else coords
    probe = params.copy()
    for j in idx:
        orig = probe.flat[j]
        probe.flat[j] = orig + h
        up = loss(probe)
        probe.flat[j] = orig - h
        down = loss(probe)
        probe.flat[j] = orig
        grad[j] = (up - down) / (2.0 * h)
    return GradientBuffer(params.arch, grad, 1)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

MAGIC = b"NEIFIPOL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHBIIIIQ")


def serialize(params: PolicyParams) -> bytes:
    a = params.arch
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, ARCH_KINDS.index(a.kind), a.sdim, a.adim, a.hdim, a.hlays, params.flat.size
    )
    return header + params.flat.astype("<f8").tobytes()


def deserialize(data: bytes, expect: Optional[Architecture] = None) -> PolicyParams:
    if len(data) < _HEADER.size:
        raise PolicyFormatError("truncated policy stream: header incomplete")
    magic, version, kind, sdim, adim, hdim, hlays, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise PolicyFormatError("bad magic: not a policy file")
    if version != FORMAT_VERSION:
        raise PolicyFormatError(f"unsupported policy format version {version}")
    if kind >= len(ARCH_KINDS):
        raise PolicyFormatError(f"unknown architecture code {kind}")
    arch = Architecture(ARCH_KINDS[kind], sdim, adim, hdim, hlays)
    if count != param_count(arch):
        raise PolicyFormatError("parameter count does not match architecture")
    body = data[_HEADER.size :]
    if len(body) != 8 * count:
        raise PolicyFormatError(f"truncated policy stream: expected {8 * count} bytes, got {len(body)}")
    if expect is not None and expect != arch:
        raise PolicyFormatError(f"architecture mismatch: file has {arch}, expected {expect}")
    return PolicyParams(arch, np.frombuffer(body, dtype="<f8").astype(np.float64))


def save(params: PolicyParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(params))


def load(path, expect: Optional[Architecture] = None) -> PolicyParams:
    with open(path, "rb") as fh:
        return deserialize(fh.read(), expect)
