"""Shared-trunk compound-action actor, critic, and their exact gradients.

Everything is plain numpy.  Parameters flatten into one canonical vector
(trunk layers in order, each weight then bias; discrete head; continuous
head; log-std) and `flatten`/`unflatten` round-trip losslessly.  Besides
reverse-mode gradients, the module provides forward-mode directional
derivatives of the distribution parameters, which combine with closed-form
distribution Fishers into exact Fisher-vector products for the
KL-constrained updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)
MASKED_LOGIT = -1e30  # additive offset for invalid discrete actions


class UnknownLossError(ValueError):
    """A loss form not in the registry was requested."""


class NonFiniteGradientError(RuntimeError):
    """A gradient came back with NaN/inf; the update was aborted."""


# ---------------------------------------------------------------------------
# architectures and parameters


@dataclass(frozen=True)
class ActorArch:
    input_dim: int
    n_actions: int
    hidden: tuple = (256, 256, 256)
    n_continuous: int = 2


@dataclass(frozen=True)
class CriticArch:
    input_dim: int
    hidden: tuple = (256, 256)


@dataclass
class ActorParams:
    arch: ActorArch
    weights: list = field(default_factory=list)  # trunk, (out, in) each
    biases: list = field(default_factory=list)
    w_disc: np.ndarray = None
    b_disc: np.ndarray = None
    w_cont: np.ndarray = None
    b_cont: np.ndarray = None
    log_std: np.ndarray = None

    def copy(self) -> "ActorParams":
        return unflatten_actor(flatten_actor(self), self.arch)


@dataclass
class CriticParams:
    arch: CriticArch
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    w_out: np.ndarray = None
    b_out: np.ndarray = None

    def copy(self) -> "CriticParams":
        return unflatten_critic(flatten_critic(self), self.arch)


def _orthogonal(rng: np.random.Generator, shape: tuple, gain: float) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_actor(arch: ActorArch, rng: np.random.Generator,
               head_scale: float = 0.01) -> ActorParams:
    """Orthogonal trunk (ReLU gain), near-zero heads, zero log-std."""
    p = ActorParams(arch=arch)
    dims = (arch.input_dim,) + tuple(arch.hidden)
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        p.weights.append(_orthogonal(rng, (d_out, d_in), math.sqrt(2.0)))
        p.biases.append(np.zeros(d_out))
    width = dims[-1]
    p.w_disc = _orthogonal(rng, (arch.n_actions, width), head_scale)
    p.b_disc = np.zeros(arch.n_actions)
    p.w_cont = _orthogonal(rng, (arch.n_continuous, width), head_scale)
    p.b_cont = np.zeros(arch.n_continuous)
    p.log_std = np.zeros(arch.n_continuous)
    return p


def init_critic(arch: CriticArch, rng: np.random.Generator) -> CriticParams:
    p = CriticParams(arch=arch)
    dims = (arch.input_dim,) + tuple(arch.hidden)
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        p.weights.append(_orthogonal(rng, (d_out, d_in), math.sqrt(2.0)))
        p.biases.append(np.zeros(d_out))
    p.w_out = np.zeros((1, dims[-1]))
    p.b_out = np.zeros(1)
    return p


# ---------------------------------------------------------------------------
# canonical flattening


def _actor_pieces(p: ActorParams) -> list:
    pieces = []
    for w, b in zip(p.weights, p.biases):
        pieces.extend([w, b])
    pieces.extend([p.w_disc, p.b_disc, p.w_cont, p.b_cont, p.log_std])
    return pieces


def flatten_actor(p: ActorParams) -> np.ndarray:
    return np.concatenate([piece.ravel() for piece in _actor_pieces(p)])


def actor_param_count(arch: ActorArch) -> int:
    dims = (arch.input_dim,) + tuple(arch.hidden)
    n = sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))
    width = dims[-1]
    n += arch.n_actions * width + arch.n_actions
    n += arch.n_continuous * width + arch.n_continuous
    n += arch.n_continuous
    return n


def unflatten_actor(vec: np.ndarray, arch: ActorArch) -> ActorParams:
    if vec.shape != (actor_param_count(arch),):
        raise ValueError("flat vector length does not match the architecture")
    p = ActorParams(arch=arch)
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        out = vec[pos:pos + size].reshape(shape).copy()
        pos += size
        return out

    dims = (arch.input_dim,) + tuple(arch.hidden)
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        p.weights.append(take((d_out, d_in)))
        p.biases.append(take((d_out,)))
    width = dims[-1]
    p.w_disc = take((arch.n_actions, width))
    p.b_disc = take((arch.n_actions,))
    p.w_cont = take((arch.n_continuous, width))
    p.b_cont = take((arch.n_continuous,))
    p.log_std = take((arch.n_continuous,))
    return p


def actor_subset_mask(arch: ActorArch, which: str) -> np.ndarray:
    """Boolean mask over the flat vector selecting one head plus the trunk.

    'discrete' covers trunk + discrete head; 'continuous' covers trunk +
    continuous head + log-std; 'all' covers everything.
    """
    dims = (arch.input_dim,) + tuple(arch.hidden)
    trunk = sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))
    width = dims[-1]
    n_d = arch.n_actions * width + arch.n_actions
    n_c = arch.n_continuous * width + arch.n_continuous + arch.n_continuous
    mask = np.zeros(trunk + n_d + n_c, dtype=bool)
    mask[:trunk] = True
    if which == "discrete":
        mask[trunk:trunk + n_d] = True
    elif which == "continuous":
        mask[trunk + n_d:] = True
    elif which == "all":
        mask[:] = True
    else:
        raise ValueError(f"unknown parameter subset {which!r}")
    return mask


def flatten_critic(p: CriticParams) -> np.ndarray:
    pieces = []
    for w, b in zip(p.weights, p.biases):
        pieces.extend([w, b])
    pieces.extend([p.w_out, p.b_out])
    return np.concatenate([piece.ravel() for piece in pieces])


def critic_param_count(arch: CriticArch) -> int:
    dims = (arch.input_dim,) + tuple(arch.hidden)
    n = sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))
    return n + dims[-1] + 1


def unflatten_critic(vec: np.ndarray, arch: CriticArch) -> CriticParams:
    if vec.shape != (critic_param_count(arch),):
        raise ValueError("flat vector length does not match the architecture")
    p = CriticParams(arch=arch)
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        out = vec[pos:pos + size].reshape(shape).copy()
        pos += size
        return out

    dims = (arch.input_dim,) + tuple(arch.hidden)
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        p.weights.append(take((d_out, d_in)))
        p.biases.append(take((d_out,)))
    p.w_out = take((1, dims[-1]))
    p.b_out = take((1,))
    return p


# ---------------------------------------------------------------------------
# forward / backward / forward-mode


def actor_forward(p: ActorParams, x: np.ndarray, mask: np.ndarray | None = None):
    """Evaluate the actor on (B, input_dim) states.

    Returns (logits, mean, log_std, cache).  `mask`, when given, marks valid
    discrete actions; invalid logits are pushed to an effective -inf.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[1] != p.arch.input_dim:
        raise ValueError(f"state dim {X.shape[1]} != input dim {p.arch.input_dim}")
    pre, acts = [], [X]
    h = X
    for w, b in zip(p.weights, p.biases):
        a = h @ w.T + b
        pre.append(a)
        h = np.maximum(a, 0.0)
        acts.append(h)
    logits = h @ p.w_disc.T + p.b_disc
    if mask is not None:
        # mask may be one row (A,) shared by the batch or per-row (B, A)
        logits = np.where(np.atleast_2d(np.asarray(mask, dtype=bool)),
                          logits, logits + MASKED_LOGIT)
    mean = h @ p.w_cont.T + p.b_cont
    cache = (X, pre, acts)
    return logits, mean, p.log_std.copy(), cache


def actor_backward(p: ActorParams, cache, dlogits: np.ndarray | None,
                   dmean: np.ndarray | None,
                   dlog_std: np.ndarray | None) -> np.ndarray:
    """Exact reverse-mode gradient; any output-side gradient may be None (zero)."""
    X, pre, acts = cache
    B = X.shape[0]
    h_last = acts[-1]
    if dlogits is None:
        dlogits = np.zeros((B, p.arch.n_actions))
    if dmean is None:
        dmean = np.zeros((B, p.arch.n_continuous))

    g_w_disc = dlogits.T @ h_last
    g_b_disc = dlogits.sum(axis=0)
    g_w_cont = dmean.T @ h_last
    g_b_cont = dmean.sum(axis=0)
    dh = dlogits @ p.w_disc + dmean @ p.w_cont

    g_weights, g_biases = [], []
    for layer in reversed(range(len(p.weights))):
        da = dh * (pre[layer] > 0.0)
        g_weights.append(da.T @ acts[layer])
        g_biases.append(da.sum(axis=0))
        dh = da @ p.weights[layer]
    g_weights.reverse()
    g_biases.reverse()

    g_log_std = np.zeros(p.arch.n_continuous) if dlog_std is None else dlog_std
    pieces = []
    for gw, gb in zip(g_weights, g_biases):
        pieces.extend([gw.ravel(), gb])
    pieces.extend([g_w_disc.ravel(), g_b_disc, g_w_cont.ravel(), g_b_cont, g_log_std])
    return np.concatenate(pieces)


def actor_jvp(p: ActorParams, cache, v: np.ndarray):
    """Directional derivative of (logits, mean, log_std) along flat direction v."""
    X, pre, acts = cache
    d = unflatten_actor(v, p.arch)
    t = np.zeros_like(X)
    for layer, (w, b) in enumerate(zip(p.weights, p.biases)):
        t = acts[layer] @ d.weights[layer].T + t @ w.T + d.biases[layer]
        t = t * (pre[layer] > 0.0)
    h_last = acts[-1]
    t_logits = h_last @ d.w_disc.T + t @ p.w_disc.T + d.b_disc
    t_mean = h_last @ d.w_cont.T + t @ p.w_cont.T + d.b_cont
    return t_logits, t_mean, d.log_std


def critic_forward(p: CriticParams, x: np.ndarray):
    """Evaluate the critic on (B, input_dim) states; returns (values, cache)."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[1] != p.arch.input_dim:
        raise ValueError(f"state dim {X.shape[1]} != input dim {p.arch.input_dim}")
    pre, acts = [], [X]
    h = X
    for w, b in zip(p.weights, p.biases):
        a = h @ w.T + b
        pre.append(a)
        h = np.maximum(a, 0.0)
        acts.append(h)
    values = (h @ p.w_out.T + p.b_out)[:, 0]
    return values, (X, pre, acts)


def critic_backward(p: CriticParams, cache, dvalues: np.ndarray) -> np.ndarray:
    X, pre, acts = cache
    dv = dvalues[:, None]
    g_w_out = dv.T @ acts[-1]
    g_b_out = dv.sum(axis=0)
    dh = dv @ p.w_out
    g_weights, g_biases = [], []
    for layer in reversed(range(len(p.weights))):
        da = dh * (pre[layer] > 0.0)
        g_weights.append(da.T @ acts[layer])
        g_biases.append(da.sum(axis=0))
        dh = da @ p.weights[layer]
    g_weights.reverse()
    g_biases.reverse()
    pieces = []
    for gw, gb in zip(g_weights, g_biases):
        pieces.extend([gw.ravel(), gb])
    pieces.extend([g_w_out.ravel(), g_b_out])
    return np.concatenate(pieces)


# ---------------------------------------------------------------------------
# distributions


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def discrete_log_prob(logits: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return log_softmax(logits)[np.arange(logits.shape[0]), idx]


def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray,
                      action: np.ndarray) -> np.ndarray:
    z = (action - mean) / np.exp(log_std)
    return -0.5 * (z * z).sum(axis=1) - log_std.sum() - 0.5 * mean.shape[1] * LOG_2PI


def categorical_entropy(logits: np.ndarray) -> np.ndarray:
    logp = log_softmax(logits)
    p = np.exp(logp)
    return -np.where(p > 0.0, p * logp, 0.0).sum(axis=1)


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(log_std.sum() + 0.5 * log_std.shape[0] * (1.0 + LOG_2PI))


def categorical_kl(logits_old: np.ndarray, logits_new: np.ndarray) -> float:
    """Mean KL(old || new) over the batch; zero-probability entries contribute 0."""
    lpo, lpn = log_softmax(logits_old), log_softmax(logits_new)
    p = np.exp(lpo)
    per_state = np.where(p > 0.0, p * (lpo - lpn), 0.0).sum(axis=1)
    return float(per_state.mean())


def gaussian_kl(mean_old: np.ndarray, log_std_old: np.ndarray,
                mean_new: np.ndarray, log_std_new: np.ndarray) -> float:
    """Mean KL(old || new) over the batch for diagonal Gaussians."""
    var_old = np.exp(2.0 * log_std_old)
    var_new = np.exp(2.0 * log_std_new)
    per_dim = (log_std_new - log_std_old
               + (var_old + (mean_old - mean_new) ** 2) / (2.0 * var_new) - 0.5)
    return float(per_dim.sum(axis=1).mean())


@dataclass(frozen=True)
class SampledAction:
    discrete: int
    continuous: np.ndarray  # raw, pre-squash
    log_prob_discrete: float
    log_prob_continuous: float


def sample_action(p: ActorParams, state_vec: np.ndarray, rng: np.random.Generator,
                  mask: np.ndarray | None = None) -> SampledAction:
    """Draw one compound action and cache its log-probabilities."""
    logits, mean, log_std, _ = actor_forward(p, state_vec, mask)
    probs = softmax(logits)[0]
    cum = np.cumsum(probs)
    # scaling by the total keeps the draw strictly below it, so the selected
    # index always carries positive probability even under masking
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    idx = min(idx, probs.shape[0] - 1)
    std = np.exp(log_std)
    cont = mean[0] + std * rng.standard_normal(p.arch.n_continuous)
    return SampledAction(
        discrete=idx,
        continuous=cont,
        log_prob_discrete=float(discrete_log_prob(logits, np.array([idx]))[0]),
        log_prob_continuous=float(gaussian_log_prob(mean, log_std, cont[None, :])[0]),
    )


# ---------------------------------------------------------------------------
# Fisher-vector products (Gauss-Newton form: J^T H_dist J v)


def fvp_discrete(p: ActorParams, cache, probs: np.ndarray, v: np.ndarray,
                 active: np.ndarray | None = None) -> np.ndarray:
    """Exact product of the mean-KL Fisher of the categorical head with v."""
    direction = v if active is None else v * active
    t_logits, _, _ = actor_jvp(p, cache, direction)
    u = probs * t_logits
    ft = (u - probs * u.sum(axis=1, keepdims=True)) / probs.shape[0]
    out = actor_backward(p, cache, ft, None, None)
    return out if active is None else out * active


def fvp_gaussian(p: ActorParams, cache, log_std: np.ndarray, v: np.ndarray,
                 active: np.ndarray | None = None) -> np.ndarray:
    """Exact product of the mean-KL Fisher of the Gaussian head with v."""
    direction = v if active is None else v * active
    _, t_mean, t_log_std = actor_jvp(p, cache, direction)
    var = np.exp(2.0 * log_std)
    d_mean = t_mean / var / t_mean.shape[0]
    d_log_std = 2.0 * t_log_std
    out = actor_backward(p, cache, None, d_mean, d_log_std)
    return out if active is None else out * active


# ---------------------------------------------------------------------------
# registered loss forms


def surrogate_discrete(p: ActorParams, batch: dict) -> tuple[float, np.ndarray]:
    """Importance-ratio surrogate for the categorical head (to be maximized)."""
    logits, _, _, cache = actor_forward(p, batch["obs"], batch.get("mask"))
    idx = batch["discrete"]
    adv = batch["advantages"]
    logp = discrete_log_prob(logits, idx)
    ratio = np.exp(logp - batch["old_log_prob_discrete"])
    B = logits.shape[0]
    value = float((ratio * adv).mean())
    probs = softmax(logits)
    coeff = (ratio * adv / B)[:, None]
    dlogits = -coeff * probs
    dlogits[np.arange(B), idx] += coeff[:, 0]
    grad = actor_backward(p, cache, dlogits, None, None)
    return value, grad


def surrogate_continuous(p: ActorParams, batch: dict) -> tuple[float, np.ndarray]:
    """Importance-ratio surrogate for the Gaussian head (to be maximized)."""
    _, mean, log_std, cache = actor_forward(p, batch["obs"], batch.get("mask"))
    act = batch["continuous"]
    adv = batch["advantages"]
    logp = gaussian_log_prob(mean, log_std, act)
    ratio = np.exp(logp - batch["old_log_prob_continuous"])
    B = mean.shape[0]
    value = float((ratio * adv).mean())
    var = np.exp(2.0 * log_std)
    coeff = (ratio * adv / B)[:, None]
    diff = act - mean
    dmean = coeff * diff / var
    dlog_std = (coeff * (diff * diff / var - 1.0)).sum(axis=0)
    grad = actor_backward(p, cache, None, dmean, dlog_std)
    return value, grad


def reinforce_discrete(p: ActorParams, batch: dict) -> tuple[float, np.ndarray]:
    """Score-function loss -mean(log pi * advantage) for the categorical head."""
    logits, _, _, cache = actor_forward(p, batch["obs"], batch.get("mask"))
    idx = batch["discrete"]
    adv = batch["advantages"]
    B = logits.shape[0]
    value = float(-(discrete_log_prob(logits, idx) * adv).mean())
    probs = softmax(logits)
    coeff = (adv / B)[:, None]
    dlogits = coeff * probs
    dlogits[np.arange(B), idx] -= coeff[:, 0]
    grad = actor_backward(p, cache, dlogits, None, None)
    return value, grad


def reinforce_continuous(p: ActorParams, batch: dict) -> tuple[float, np.ndarray]:
    """Score-function loss -mean(log pi * advantage) for the Gaussian head."""
    _, mean, log_std, cache = actor_forward(p, batch["obs"], batch.get("mask"))
    act = batch["continuous"]
    adv = batch["advantages"]
    B = mean.shape[0]
    value = float(-(gaussian_log_prob(mean, log_std, act) * adv).mean())
    var = np.exp(2.0 * log_std)
    coeff = (adv / B)[:, None]
    diff = act - mean
    dmean = -coeff * diff / var
    dlog_std = -(coeff * (diff * diff / var - 1.0)).sum(axis=0)
    grad = actor_backward(p, cache, None, dmean, dlog_std)
    return value, grad


def critic_mse(p: CriticParams, batch: dict) -> tuple[float, np.ndarray]:
    """Mean squared error of the critic against the value targets."""
    values, cache = critic_forward(p, batch["obs"])
    err = values - batch["targets"]
    value = float((err * err).mean())
    grad = critic_backward(p, cache, 2.0 * err / err.shape[0])
    return value, grad


def _constant_loss(p, batch):
    value = float(batch.get("value", 0.0))
    flat = flatten_actor(p) if isinstance(p, ActorParams) else flatten_critic(p)
    return value, np.zeros_like(flat)


def _quadratic_probe(p, batch):
    flat = flatten_actor(p) if isinstance(p, ActorParams) else flatten_critic(p)
    return 0.5 * float(flat @ flat), flat.copy()


LOSS_REGISTRY = {
    "surrogate_discrete": surrogate_discrete,
    "surrogate_continuous": surrogate_continuous,
    "reinforce_discrete": reinforce_discrete,
    "reinforce_continuous": reinforce_continuous,
    "critic_mse": critic_mse,
    "constant": _constant_loss,
    "quadratic_probe": _quadratic_probe,
}


def gradient(loss: str, params, batch: dict) -> tuple[float, np.ndarray]:
    """Evaluate a registered loss form and its exact flat gradient."""
    try:
        fn = LOSS_REGISTRY[loss]
    except KeyError:
        raise UnknownLossError(f"loss form {loss!r} is not registered") from None
    value, grad = fn(params, batch)
    if not np.isfinite(grad).all() or not math.isfinite(value):
        raise NonFiniteGradientError(f"loss {loss!r} produced a non-finite gradient")
    return value, grad


def clamp_log_std(p: ActorParams) -> None:
    """Keep the Gaussian spread inside its bounds; applied after updates."""
    np.clip(p.log_std, LOG_STD_MIN, LOG_STD_MAX, out=p.log_std)
