"""Weakly supervised training at desk scale.

Forward: per object class, build importance weights from the similarity
fields, pool a grounded pair query, decode per-action scores, and gate them by
the pairwise interactiveness raised to ``gamma``. Loss: binary focal loss over
the object x action score grid against image-level labels.

Backward is written by hand (no autodiff) and is verified coordinate by
coordinate against the central finite-difference oracle in
:mod:`hoiground.numerics`. The optimizer is plain gradient descent with a
cosine learning-rate schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .decoder import TextEmbeddingBank
from .errors import ArgumentError, NumericalError
from .grounding import FeatureMap
from .numerics import COSINE_EPS, cosine_rows, masked_softmax, relative_error, softmax_grad
from .params import (
    LAYER_NORM_EPS,
    ModelParams,
    _map_leaves,
    pack_params,
    unpack_params,
)

SCORE_CLAMP = 1e-7


@dataclass
class ImageSample:
    """One training image: its feature map and the set of (action, object) labels."""

    fm: FeatureMap
    labels: set[tuple[int, int]]


@dataclass
class TrainConfig:
    lr: float = 2e-4
    epochs: int = 5
    batch_size: int = 8
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ArgumentError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ArgumentError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class _Trace:
    """Every intermediate of one forward pass, kept for the backward pass."""

    X: np.ndarray
    A_h: np.ndarray
    A_o: np.ndarray
    t_h: np.ndarray
    t_o: np.ndarray
    s_h: np.ndarray
    s_o: np.ndarray
    alpha_h: np.ndarray
    alpha_o: np.ndarray
    q_h: np.ndarray
    q_o: np.ndarray
    cat: np.ndarray
    q_ho: np.ndarray
    K: np.ndarray
    V: np.ndarray
    q_proj: np.ndarray
    attn_w: np.ndarray
    ctx: np.ndarray
    yhat: np.ndarray
    inv_std: np.ndarray
    qbar: np.ndarray
    z: np.ndarray
    cos_a: np.ndarray
    s_a: np.ndarray
    sh_hat: np.ndarray
    so_hat: np.ndarray
    r_h: float
    r_o: np.ndarray
    r_ho: np.ndarray
    scores: np.ndarray


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _forward(fm: FeatureMap, bank: TextEmbeddingBank, params: ModelParams) -> _Trace:
    X = fm.patches
    n_obj = bank.n_objects
    d = params.d

    # grounding
    A_h = X @ params.proj_patch_h
    A_o = X @ params.proj_patch_o
    t_h = bank.human @ params.proj_text_h
    t_o = bank.objects @ params.proj_text_o
    s_h = cosine_rows(A_h, t_h)
    s_o = np.stack([cosine_rows(A_o, t_o[k]) for k in range(n_obj)])
    alpha_h = masked_softmax(s_h, params.tau_p)
    alpha_o = np.stack([masked_softmax(s_o[k], params.tau_p) for k in range(n_obj)])
    q_h = alpha_h @ X
    q_o = alpha_o @ X
    cat = np.concatenate([np.tile(q_h, (n_obj, 1)), q_o], axis=1)
    q_ho = cat @ params.proj_query

    # decoding
    K = X @ params.attn.w_k
    V = X @ params.attn.w_v
    q_proj = q_ho @ params.attn.w_q
    attn_w = np.stack(
        [masked_softmax(K @ q_proj[k] / np.sqrt(d), 1.0) for k in range(n_obj)]
    )
    ctx = attn_w @ V
    y = q_ho + ctx @ params.attn.w_o
    mean = y.mean(axis=1, keepdims=True)
    var = ((y - mean) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var[:, 0] + LAYER_NORM_EPS)
    yhat = (y - mean) * inv_std[:, None]
    qbar = params.attn.ln_scale * yhat + params.attn.ln_shift
    z = qbar @ params.proj_action
    cos_a = np.stack([cosine_rows(bank.actions, z[k]) for k in range(n_obj)])
    tt_a = np.exp(params.sig_action.log_temp)
    s_a = _sigmoid(tt_a * cos_a + params.sig_action.bias)

    # interactiveness gate
    tt_h = np.exp(params.sig_inter_h.log_temp)
    tt_o = np.exp(params.sig_inter_o.log_temp)
    sh_hat = _sigmoid(tt_h * s_h + params.sig_inter_h.bias)
    so_hat = _sigmoid(tt_o * s_o + params.sig_inter_o.bias)
    r_h = float(alpha_h @ sh_hat)
    r_o = (alpha_o * so_hat).sum(axis=1)
    r_ho = np.sqrt(r_h * r_o)
    scores = s_a * r_ho[:, None] ** params.gamma

    return _Trace(
        X=X, A_h=A_h, A_o=A_o, t_h=t_h, t_o=t_o, s_h=s_h, s_o=s_o,
        alpha_h=alpha_h, alpha_o=alpha_o, q_h=q_h, q_o=q_o, cat=cat, q_ho=q_ho,
        K=K, V=V, q_proj=q_proj, attn_w=attn_w, ctx=ctx, yhat=yhat,
        inv_std=inv_std, qbar=qbar, z=z, cos_a=cos_a, s_a=s_a,
        sh_hat=sh_hat, so_hat=so_hat, r_h=r_h, r_o=r_o, r_ho=r_ho, scores=scores,
    )


def classification_forward(
    fm: FeatureMap, bank: TextEmbeddingBank, params: ModelParams
) -> np.ndarray:
    """Image-level triplet scores, shape (n_objects, n_actions), each in (0, 1)."""
    scores = _forward(fm, bank, params).scores
    if not np.all(np.isfinite(scores)):
        raise NumericalError("classification forward produced non-finite scores")
    return scores


def _positive_mask(shape: tuple[int, int], labels: set[tuple[int, int]]) -> np.ndarray:
    pos = np.zeros(shape, dtype=bool)
    for action, obj in labels:
        if not (0 <= obj < shape[0] and 0 <= action < shape[1]):
            raise ArgumentError(f"label ({action}, {obj}) out of range for grid {shape}")
        pos[obj, action] = True
    return pos


def focal_loss(
    scores: np.ndarray,
    labels: set[tuple[int, int]],
    focal_gamma: float = 2.0,
    focal_alpha: float = 0.25,
) -> float:
    """Mean binary focal loss over every (object, action) cell.

    Positives contribute ``-alpha * (1 - s)^gamma * log(s)``, negatives
    ``-(1 - alpha) * s^gamma * log(1 - s)``; scores are clamped away from the
    exact endpoints for log stability.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = _positive_mask(scores.shape, labels)
    s = np.clip(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    loss = np.where(
        pos,
        -focal_alpha * (1.0 - s) ** focal_gamma * np.log(s),
        -(1.0 - focal_alpha) * s ** focal_gamma * np.log(1.0 - s),
    )
    return float(loss.mean())


def _focal_backward(
    scores: np.ndarray,
    labels: set[tuple[int, int]],
    focal_gamma: float,
    focal_alpha: float,
) -> np.ndarray:
    pos = _positive_mask(scores.shape, labels)
    s = np.clip(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    g, a = focal_gamma, focal_alpha
    if g == 0.0:
        dpos = -a / s
        dneg = (1.0 - a) / (1.0 - s)
    else:
        dpos = a * g * (1.0 - s) ** (g - 1.0) * np.log(s) - a * (1.0 - s) ** g / s
        dneg = (1.0 - a) * s ** g / (1.0 - s) - (1.0 - a) * g * s ** (g - 1.0) * np.log(1.0 - s)
    grad = np.where(pos, dpos, dneg) / scores.size
    # clamped cells sit on a constant plateau
    grad[scores != s] = 0.0
    return grad


def zero_grads(params: ModelParams) -> ModelParams:
    """A params-shaped container of zeros, used to accumulate gradients."""
    return _map_leaves(params, lambda x: np.zeros_like(x) if isinstance(x, np.ndarray) else 0.0)


def backward(
    fm: FeatureMap,
    bank: TextEmbeddingBank,
    params: ModelParams,
    labels: set[tuple[int, int]],
    focal_gamma: float = 2.0,
    focal_alpha: float = 0.25,
) -> tuple[float, ModelParams]:
    """Focal loss of one sample and its analytic gradients for every learnable.

    Returns ``(loss, grads)`` where ``grads`` mirrors the parameter structure.

    Raises:
        NumericalError: a non-finite value appeared, named by pipeline stage.
    """
    tr = _forward(fm, bank, params)
    if not np.all(np.isfinite(tr.scores)):
        raise NumericalError("non-finite value in classification forward")
    loss = focal_loss(tr.scores, labels, focal_gamma, focal_alpha)
    g = zero_grads(params)
    X, d = tr.X, params.d
    gamma = params.gamma

    dscores = _focal_backward(tr.scores, labels, focal_gamma, focal_alpha)

    # gate: scores = s_a * r_ho^gamma
    gate = tr.r_ho[:, None] ** gamma
    ds_a = dscores * gate
    if gamma == 0.0:
        dr_ho = np.zeros_like(tr.r_ho)
    else:
        dr_ho = (dscores * tr.s_a).sum(axis=1) * gamma * tr.r_ho ** (gamma - 1.0)
    dr_h = float((dr_ho * tr.r_ho / (2.0 * tr.r_h)).sum())
    dr_o = dr_ho * tr.r_ho / (2.0 * tr.r_o)

    # action head: s_a = sigmoid(tt_a * cos_a + bias)
    tt_a = np.exp(params.sig_action.log_temp)
    du = ds_a * tr.s_a * (1.0 - tr.s_a)
    g.sig_action.bias += float(du.sum())
    g.sig_action.log_temp += float((du * tr.cos_a).sum() * tt_a)
    dcos = du * tt_a
    norm_z = np.linalg.norm(tr.z, axis=1)
    norm_e = np.linalg.norm(bank.actions, axis=1)
    prod = norm_z[:, None] * norm_e[None, :]
    denom = np.maximum(prod, COSINE_EPS)
    good = prod > COSINE_EPS
    dz = (dcos / denom) @ bank.actions
    dz -= ((dcos * tr.cos_a * good).sum(axis=1) / norm_z**2)[:, None] * tr.z
    g.proj_action += tr.qbar.T @ dz
    dqbar = dz @ params.proj_action.T

    # layer norm
    dyhat = dqbar * params.attn.ln_scale[None, :]
    g.attn.ln_scale += (dqbar * tr.yhat).sum(axis=0)
    g.attn.ln_shift += dqbar.sum(axis=0)
    dy = tr.inv_std[:, None] * (
        dyhat
        - dyhat.mean(axis=1, keepdims=True)
        - tr.yhat * (dyhat * tr.yhat).mean(axis=1, keepdims=True)
    )

    # attention block (residual first)
    dq_ho = dy.copy()
    g.attn.w_o += tr.ctx.T @ dy
    dctx = dy @ params.attn.w_o.T
    dV = tr.attn_w.T @ dctx
    dw = dctx @ tr.V.T
    dlogit = tr.attn_w * (dw - (tr.attn_w * dw).sum(axis=1, keepdims=True))
    dq_proj = dlogit @ tr.K / np.sqrt(d)
    dK = dlogit.T @ tr.q_proj / np.sqrt(d)
    g.attn.w_q += tr.q_ho.T @ dq_proj
    dq_ho += dq_proj @ params.attn.w_q.T
    g.attn.w_k += X.T @ dK
    g.attn.w_v += X.T @ dV

    # pair-query fusion
    g.proj_query += tr.cat.T @ dq_ho
    dcat = dq_ho @ params.proj_query.T
    dq_h = dcat[:, :d].sum(axis=0)
    dq_o = dcat[:, d:]

    # object branch
    dalpha_o = dq_o @ X.T + dr_o[:, None] * tr.so_hat
    dso_hat = dr_o[:, None] * tr.alpha_o
    tt_o = np.exp(params.sig_inter_o.log_temp)
    du_o = dso_hat * tr.so_hat * (1.0 - tr.so_hat)
    g.sig_inter_o.bias += float(du_o.sum())
    g.sig_inter_o.log_temp += float((du_o * tr.s_o).sum() * tt_o)
    ds_o = du_o * tt_o
    ds_o += tr.alpha_o * (
        dalpha_o - (tr.alpha_o * dalpha_o).sum(axis=1, keepdims=True)
    ) / params.tau_p
    nA_o = np.linalg.norm(tr.A_o, axis=1)
    nt_o = np.linalg.norm(tr.t_o, axis=1)
    prod_o = nt_o[:, None] * nA_o[None, :]
    denom_o = np.maximum(prod_o, COSINE_EPS)
    good_o = prod_o > COSINE_EPS
    w1 = ds_o / denom_o
    dA_o = w1.T @ tr.t_o
    dA_o -= ((ds_o * tr.s_o * good_o).sum(axis=0) / nA_o**2)[:, None] * tr.A_o
    dt_o = w1 @ tr.A_o
    dt_o -= ((ds_o * tr.s_o * good_o).sum(axis=1) / nt_o**2)[:, None] * tr.t_o
    g.proj_text_o += bank.objects.T @ dt_o
    g.proj_patch_o += X.T @ dA_o

    # human branch (shared across classes)
    dalpha_h = X @ dq_h + dr_h * tr.sh_hat
    dsh_hat = dr_h * tr.alpha_h
    tt_h = np.exp(params.sig_inter_h.log_temp)
    du_h = dsh_hat * tr.sh_hat * (1.0 - tr.sh_hat)
    g.sig_inter_h.bias += float(du_h.sum())
    g.sig_inter_h.log_temp += float((du_h * tr.s_h).sum() * tt_h)
    ds_h = du_h * tt_h
    ds_h += softmax_grad(tr.alpha_h, dalpha_h, params.tau_p)
    nA_h = np.linalg.norm(tr.A_h, axis=1)
    nt_h = float(np.linalg.norm(tr.t_h))
    prod_h = nA_h * nt_h
    denom_h = np.maximum(prod_h, COSINE_EPS)
    good_h = prod_h > COSINE_EPS
    dA_h = (ds_h / denom_h)[:, None] * tr.t_h[None, :]
    dA_h -= (ds_h * tr.s_h * good_h / nA_h**2)[:, None] * tr.A_h
    dt_h = (ds_h / denom_h) @ tr.A_h
    if nt_h > 0:
        dt_h -= (ds_h * tr.s_h * good_h).sum() / nt_h**2 * tr.t_h
    g.proj_text_h += np.outer(bank.human, dt_h)
    g.proj_patch_h += X.T @ dA_h

    gvec = pack_params(g)
    if not np.all(np.isfinite(gvec)):
        raise NumericalError("non-finite value in analytic backward")
    return loss, g


def gradient_check(
    fm: FeatureMap,
    bank: TextEmbeddingBank,
    params: ModelParams,
    labels: set[tuple[int, int]],
    focal_gamma: float = 2.0,
    focal_alpha: float = 0.25,
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    from .numerics import finite_diff_grad

    def loss_of(vec: np.ndarray) -> float:
        p = unpack_params(vec, params)
        return focal_loss(_forward(fm, bank, p).scores, labels, focal_gamma, focal_alpha)

    _, grads = backward(fm, bank, params, labels, focal_gamma, focal_alpha)
    numeric = finite_diff_grad(loss_of, pack_params(params), h)
    return float(relative_error(pack_params(grads), numeric).max())


@dataclass
class TrainResult:
    params: ModelParams
    epoch_losses: list[float] = field(default_factory=list)


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def train(
    dataset: list[ImageSample],
    bank: TextEmbeddingBank,
    config: TrainConfig,
    params: ModelParams | None = None,
) -> TrainResult:
    """Gradient descent over the dataset with a cosine learning-rate schedule.

    Deterministic under ``config.seed`` (which drives both the fresh
    initialization, when ``params`` is not given, and the epoch shuffling).
    The loss trace holds the mean batch loss of each epoch.
    """
    from .params import init_params

    if not dataset:
        raise ArgumentError("training dataset is empty")
    if params is None:
        dims = {"d_v": dataset[0].fm.dim, "d_t": bank.dim}
        params = init_params(dims, seed=config.seed)
    else:
        params = params.copy()

    rng = np.random.default_rng(config.seed)
    n = len(dataset)
    n_batches = (n + config.batch_size - 1) // config.batch_size
    total_steps = config.epochs * n_batches
    vec = pack_params(params)
    step = 0
    epoch_losses: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for b in range(n_batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            grad_sum = np.zeros_like(vec)
            loss_sum = 0.0
            current = unpack_params(vec, params)
            for i in idx:
                loss_i, grads_i = backward(
                    dataset[i].fm, bank, current, dataset[i].labels,
                    config.focal_gamma, config.focal_alpha,
                )
                loss_sum += loss_i
                grad_sum += pack_params(grads_i)
            lr_t = cosine_lr(config.lr, step, total_steps)
            vec = vec - lr_t * grad_sum / len(idx)
            batch_losses.append(loss_sum / len(idx))
            step += 1
        epoch_losses.append(float(np.mean(batch_losses)))
    return TrainResult(params=unpack_params(vec, params), epoch_losses=epoch_losses)
