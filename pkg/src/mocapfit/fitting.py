"""Direct parameter fitting, the toy learned predictor, and 3D error metrics."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff
from .autodiff import LossWeights, Problem, evaluate, segmentation_points, unpack
from .camera import project
from .errors import ConfigurationError, DepthViolation, DivergenceError
from .mesh import joints3d, mesh_vertices
from .scenegen import rng_for

DIVERGENCE_LOSS = 1e12
PATIENCE = 20
MAX_HALVINGS = 30
GROWTH = 1.5


# -- metrics --------------------------------------------------------------------

def _paired(pred, gt, what):
    pred = np.asarray(pred, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    if pred.shape != gt.shape:
        raise ConfigurationError(f"{what} count mismatch: {pred.shape[0]} vs {gt.shape[0]}")
    return pred, gt


def per_joint_error(pred, gt):
    """Mean Euclidean joint distance, in millimetres (inputs in metres)."""
    pred, gt = _paired(pred, gt, "joint")
    return 1000.0 * float(np.mean(np.linalg.norm(pred - gt, axis=1)))


def reconstruction_error(pred, gt, iters=200):
    """Per-joint error after the best translation of the prediction.

    The mean distance over translations is minimised by Weiszfeld iterations
    on the joint offsets, started from the centroid shift. The zero shift is
    also scored and the smaller error kept, so the result never exceeds
    ``per_joint_error``. Rotation errors still count.
    """
    pred, gt = _paired(pred, gt, "joint")
    d = gt - pred
    shift = d.mean(axis=0)
    for _ in range(iters):
        r = np.linalg.norm(d - shift, axis=1)
        if r.min() < 1e-12:
            break
        w = 1.0 / r
        new = (w[:, None] * d).sum(axis=0) / w.sum()
        done = np.linalg.norm(new - shift) < 1e-12
        shift = new
        if done:
            break
    return min(per_joint_error(pred + shift, gt), per_joint_error(pred, gt))


def surface_error(pred, gt):
    pred, gt = _paired(pred, gt, "vertex")
    return 1000.0 * float(np.mean(np.linalg.norm(pred - gt, axis=1)))


def scene_metrics(model, layout, pv, true_pv):
    """The three metrics averaged over frames, comparing model-space meshes."""
    out = {"surface": 0.0, "per_joint": 0.0, "reconstruction": 0.0}
    frames = unpack(layout, pv)
    truth = unpack(layout, true_pv)
    for (body, _), (tbody, _) in zip(frames, truth):
        X, Xt = mesh_vertices(model, body), mesh_vertices(model, tbody)
        Jp, Jt = joints3d(X, model.joint_regressor), joints3d(Xt, model.joint_regressor)
        out["surface"] += surface_error(X, Xt)
        out["per_joint"] += per_joint_error(Jp, Jt)
        out["reconstruction"] += reconstruction_error(Jp, Jt)
    return {k: v / len(frames) for k, v in out.items()}


# -- preconditioning ----------------------------------------------------------------

def _point_jacobians(problem, pv, h=1e-6):
    """Forward-difference Jacobians of projected vertices and keypoints.

    Returns per-frame arrays of shape (P, n, 2) and (P, K, 2) for P parameters.
    """
    model, geom, layout = problem.model, problem.obs.geom, problem.layout

    def image_points(p):
        out = []
        for body, cam in unpack(layout, p):
            X = mesh_vertices(model, body)
            out.append((project(X, cam, geom), project(joints3d(X, model.joint_regressor), cam, geom)))
        return out

    base = image_points(pv)
    Juv = [np.empty((layout.size,) + b[0].shape) for b in base]
    Jk = [np.empty((layout.size,) + b[1].shape) for b in base]
    p = np.array(pv, dtype=float)
    for i in range(layout.size):
        old = p[i]
        p[i] = old + h
        moved = image_points(p)
        p[i] = old
        for fr, ((uv0, k0), (uv1, k1)) in enumerate(zip(base, moved)):
            Juv[fr][i] = (uv1 - uv0) / h
            Jk[fr][i] = (k1 - k0) / h
    return Juv, Jk


def curvature_matrix(problem, pv, motion_scale=1.0):
    """Gauss-Newton approximation of the Hessian of the weighted total loss.

    Keypoint and segmentation terms are sums of squared pixel residuals, so
    each contributes ``2 * J^T J`` over the residuals active at ``pv`` (with
    the frozen segmentation assignments deciding how often each point is
    used). The L1 motion term has no such curvature; it is treated as
    quadratic with unit scale ``motion_scale`` in pixels.
    """
    w = problem.weights
    layout = problem.layout
    ev = evaluate(pv, problem, need_grad=False)
    Juv, Jk = _point_jacobians(problem, pv)
    H = np.zeros((layout.size, layout.size))
    frames = unpack(layout, pv)
    for fr, obs in enumerate(problem.obs.frames):
        if w.keypoint > 0:
            scale = 1.0 / obs.present.sum() if w.keypoint_mean else 1.0
            jk = Jk[fr][:, obs.present].reshape(layout.size, -1)
            H += 2.0 * w.keypoint * scale * (jk @ jk.T)
        vis = ev.state.visibility[fr]
        if w.seg > 0 and vis.any():
            body, cam = frames[fr]
            uv = project(mesh_vertices(problem.model, body), cam, problem.obs.geom)
            _, W = segmentation_points(problem, uv, vis, ev.state.facet_visibility[fr])
            Jpts = np.einsum("qn,pnc->pqc", W, Juv[fr])
            mult = np.ones(W.shape[0])
            assign = ev.state.seg_assign[fr]
            if w.seg_mode == "proj":
                mult += np.bincount(assign[1], minlength=W.shape[0])
            else:
                mult += np.bincount(assign, minlength=W.shape[0])
            # segmentation works at half resolution: d(point_half) = 0.5 d(point)
            Jw = (Jpts * np.sqrt(mult)[None, :, None]).reshape(layout.size, -1)
            H += 2.0 * w.seg * 0.25 * (Jw @ Jw.T)
    if problem.uses_motion and ev.state.motion_mask is not None and ev.state.motion_mask.any():
        m = ev.state.motion_mask
        Jflow = (Juv[1][:, m] - Juv[0][:, m]).reshape(layout.size, -1)
        H += w.motion * (Jflow @ Jflow.T) / m.sum() / motion_scale
    return H


def curvature_diagonal(problem, pv, motion_scale=1.0):
    """Diagonal of ``curvature_matrix``, floored to stay positive."""
    diag = np.diag(curvature_matrix(problem, pv, motion_scale)).copy()
    return np.maximum(diag, 1e-9 * max(diag.max(), 1e-12))


PRECONDITIONERS = ("none", "diagonal", "gauss_newton")


def preconditioner(problem, pv, kind, damping=1e-3):
    """Fixed linear map ``P`` with steps ``p <- p - eta * P g``.

    ``gauss_newton`` inverts the damped curvature ``H + damping * diag(H)``;
    ``diagonal`` inverts its diagonal only; ``none`` is the identity.
    """
    n = problem.layout.size
    if kind == "none":
        return np.eye(n)
    if kind == "diagonal":
        return np.diag(1.0 / curvature_diagonal(problem, pv))
    if kind != "gauss_newton":
        raise ConfigurationError(f"preconditioner must be one of {PRECONDITIONERS}")
    H = curvature_matrix(problem, pv)
    d = np.maximum(np.diag(H), 1e-9 * max(np.diag(H).max(), 1e-12))
    A = H + damping * np.diag(d)
    A = 0.5 * (A + A.T)
    return np.linalg.inv(A)


# -- direct fitting ----------------------------------------------------------------

INIT_MODES = ("random", "provided", "truth", "truth_rotation", "truth_rotation_translation")


@dataclass
class FitConfig:
    lr: float = 1e-2
    iters: int = 500
    weights: LossWeights = field(default_factory=LossWeights)
    init: str = "provided"
    tol: float = 1e-10
    seed: int = 0
    precondition: str = "gauss_newton"
    damping: float = 1e-3
    backtrack: bool = True
    refresh: int = 0
    log_every: int = 1

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigurationError("learning rate must be positive")
        if self.iters < 0:
            raise ConfigurationError("iteration budget must be nonnegative")
        if self.precondition not in PRECONDITIONERS:
            raise ConfigurationError(f"precondition must be one of {PRECONDITIONERS}")
        if not self.damping >= 0:
            raise ConfigurationError("damping must be nonnegative")
        if self.init not in INIT_MODES:
            raise ConfigurationError(f"init must be one of {INIT_MODES}")

    def as_dict(self):
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d


@dataclass
class FitReport:
    params: np.ndarray
    losses: list
    metrics: list
    wall_time: float
    stopped: str
    config: dict = field(default_factory=dict)

    @property
    def final_loss(self):
        return self.losses[-1] if self.losses else float("nan")


def random_init(model, layout, geom, rng, focal_range=(320.0, 400.0)):
    """Parameters drawn broadly: random pose and orientation, body roughly centred."""
    from .scenegen import _centered_camera
    from .mesh import BodyParams

    shape = rng.uniform(-1.0, 1.0, layout.n_shape)
    focal = rng.uniform(*focal_range)
    frames = []
    for _ in range(layout.n_frames):
        body = BodyParams(shape, rng.uniform(-0.35, 0.35, (layout.n_joints, 3)))
        euler = rng.uniform(-1.0, 1.0, 3) * np.array([0.15, 0.5, 0.15])
        cam = _centered_camera(mesh_vertices(model, body), euler, (0.0, 0.0), focal)
        frames.append((body, cam))
    return autodiff.pack(layout, frames)


def initial_params(model, layout, geom, cfg, provided=None, truth=None):
    """Start vector for ``fit_direct`` according to ``cfg.init``."""
    if cfg.init == "provided":
        if provided is None:
            raise ConfigurationError("init 'provided' needs a parameter vector")
        return np.array(provided, dtype=float)
    if cfg.init == "truth":
        if truth is None:
            raise ConfigurationError("init 'truth' needs the true parameters")
        return np.array(truth, dtype=float)
    rng = rng_for(cfg.seed, stream=2)
    pv = random_init(model, layout, geom, rng)
    if cfg.init.startswith("truth_"):
        if truth is None:
            raise ConfigurationError(f"init {cfg.init!r} needs the true parameters")
        for fr in range(layout.n_frames):
            sl = layout.slices(fr)
            pv[sl["euler"]] = truth[sl["euler"]]
            if cfg.init == "truth_rotation_translation":
                pv[sl["translation"]] = truth[sl["translation"]]
    return pv


def perturb(layout, pv, sigma, rng, relative_focal=False):
    """Gaussian perturbation of every block with the same ``sigma``.

    Entries are treated alike (radians, metres and focal pixels); with
    ``relative_focal`` the focal length is scaled by ``1 + N(0, sigma)`` instead.
    """
    out = np.array(pv, dtype=float)
    for fr in range(layout.n_frames):
        sl = layout.slices(fr)
        names = ("pose", "euler", "translation") if (layout.shared_shape and fr > 0) else ("shape", "pose", "euler", "translation")
        for name in names:
            out[sl[name]] += rng.normal(0.0, sigma, out[sl[name]].shape)
        if relative_focal:
            out[sl["focal"]] *= 1.0 + rng.normal(0.0, sigma)
        else:
            out[sl["focal"]] += rng.normal(0.0, sigma)
    return out


def _try_evaluate(p, problem, state=None, need_grad=True):
    try:
        ev = evaluate(p, problem, state=state, need_grad=need_grad)
    except (DepthViolation, ConfigurationError) as exc:
        return None, str(exc)
    bad_grad = need_grad and not np.all(np.isfinite(ev.grad))
    if not np.isfinite(ev.loss) or ev.loss > DIVERGENCE_LOSS or bad_grad:
        return None, f"loss diverged: {ev.loss}"
    return ev, ""


def fit_direct(model, obs, init, cfg=None, truth=None, problem=None):
    """Gradient descent on the total loss directly over the parameter vector.

    Each step recomputes visibility and assignments, takes the gradient, and
    updates ``p <- p - eta * P g`` with the fixed matrix ``P`` from
    ``preconditioner`` at the start point (rebuilt every ``cfg.refresh``
    accepted steps when that is positive). With ``cfg.backtrack`` a step that
    would raise the loss (with visibility and assignments frozen at the
    current iterate) or leave the valid domain is retried with ``eta``
    halved; after an accepted step ``eta``
    grows back towards ``cfg.lr``. Without it ``eta = cfg.lr`` throughout and
    an invalid iterate raises ``DivergenceError``. Stops at the budget, after
    ``PATIENCE`` consecutive steps whose loss decrease is below ``cfg.tol``,
    or when no step size down to ``lr * 2**-MAX_HALVINGS`` decreases the loss.
    """
    cfg = cfg or FitConfig()
    problem = problem or Problem(model, obs, cfg.weights)
    layout = problem.layout
    p = np.array(init, dtype=float)
    if p.shape != (layout.size,) or not np.all(np.isfinite(p)):
        raise ConfigurationError("initial parameters must be finite and match the layout")
    unpack(layout, p)
    P = preconditioner(problem, p, cfg.precondition, cfg.damping)
    t0 = time.perf_counter()
    ev, why = _try_evaluate(p, problem)
    if ev is None:
        raise DivergenceError(f"iteration 0: {why}", p.copy())
    losses, metrics = [ev.loss], []
    if truth is not None:
        metrics.append((0, scene_metrics(model, layout, p, truth)))
    eta = cfg.lr
    stall = 0
    stopped = "budget"
    for it in range(1, cfg.iters + 1):
        if cfg.refresh and it > 1 and (it - 1) % cfg.refresh == 0:
            P = preconditioner(problem, p, cfg.precondition, cfg.damping)
        step = P @ ev.grad
        for _ in range(MAX_HALVINGS + 1):
            trial = p - eta * step
            if not cfg.backtrack:
                new, why = _try_evaluate(trial, problem)
                if new is None:
                    raise DivergenceError(f"iteration {it}: {why}", p.copy())
                break
            # accept on the loss with this iterate's visibility and assignments
            frozen, _ = _try_evaluate(trial, problem, state=ev.state, need_grad=False)
            if frozen is not None and frozen.loss <= ev.loss:
                new, why = _try_evaluate(trial, problem)
                if new is not None:
                    break
            eta *= 0.5
        else:
            stopped = "converged"
            break
        p, ev = trial, new
        losses.append(ev.loss)
        if cfg.backtrack:
            eta = min(cfg.lr, eta * GROWTH)
        if truth is not None and (it % cfg.log_every == 0 or it == cfg.iters):
            metrics.append((it, scene_metrics(model, layout, p, truth)))
        stall = stall + 1 if losses[-2] - losses[-1] < cfg.tol else 0
        if stall >= PATIENCE:
            stopped = "converged"
            break
    if truth is not None and metrics[-1][0] != len(losses) - 1:
        metrics.append((len(losses) - 1, scene_metrics(model, layout, p, truth)))
    return FitReport(p, losses, metrics, time.perf_counter() - t0, stopped, cfg.as_dict())


# -- toy learned predictor ------------------------------------------------------------

def observation_features(obs):
    """Fixed-length feature vector for one scene's observations.

    Per frame: keypoints normalised to [-1, 1] by the half image size (absent
    ones zeroed), then mask area fraction, centroid (2) and second central
    moments (uu, uv, vv) in the same normalised units. Two-frame scenes
    append the mean flow over the frame-1 foreground, in normalised units.
    Length: frames * (2K + 6) + (2 if two frames else 0).
    """
    geom = obs.geom
    half = np.array([geom.width / 2.0, geom.height / 2.0])
    center = np.array([geom.cx, geom.cy])
    parts = []
    for fr in obs.frames:
        kp = np.where(fr.present[:, None], (fr.keypoints - center) / half, 0.0)
        parts.append(kp.ravel())
        rows, cols = np.nonzero(fr.segmentation)
        if rows.size:
            pts = (np.stack([cols, rows], axis=1) - center) / half
            c = pts.mean(axis=0)
            d = pts - c
            mom = [np.mean(d[:, 0] ** 2), np.mean(d[:, 0] * d[:, 1]), np.mean(d[:, 1] ** 2)]
            parts.append(np.concatenate([[rows.size / (geom.width * geom.height)], c, mom]))
        else:
            parts.append(np.zeros(6))
    if len(obs.frames) == 2:
        fg = obs.frames[0].segmentation
        mean_flow = obs.flow[fg].mean(axis=0) / half if fg.any() else np.zeros(2)
        parts.append(mean_flow)
    return np.concatenate(parts)


class ToyRegressor:
    """One-hidden-layer predictor from observation features to a ParamVector.

    ``q = W_skip x + W_out tanh(W_in x + b_in) + b_out`` on standardised
    features ``x``; parameters are ``p = p_mean + p_scale * q``. The linear
    skip path lets the model represent affine maps exactly.
    """

    def __init__(self, n_in, n_out, hidden=32, rng=None):
        rng = rng or np.random.default_rng(0)
        self.x_mean = np.zeros(n_in)
        self.x_scale = np.ones(n_in)
        self.p_mean = np.zeros(n_out)
        self.p_scale = np.ones(n_out)
        self.W_skip = np.zeros((n_out, n_in))
        self.W_in = rng.normal(0.0, 1.0 / np.sqrt(n_in), (hidden, n_in))
        self.b_in = np.zeros(hidden)
        self.W_out = np.zeros((n_out, hidden))
        self.b_out = np.zeros(n_out)

    WEIGHTS = ("W_skip", "W_in", "b_in", "W_out", "b_out")

    @property
    def hidden(self):
        return self.W_in.shape[0]

    def copy(self):
        other = ToyRegressor.__new__(ToyRegressor)
        other.__dict__ = {k: np.array(v, copy=True) for k, v in self.__dict__.items()}
        return other

    def weights(self):
        return {k: getattr(self, k) for k in self.WEIGHTS}

    def _forward(self, features):
        X = (np.atleast_2d(features) - self.x_mean) / self.x_scale
        H = np.tanh(X @ self.W_in.T + self.b_in)
        Q = X @ self.W_skip.T + H @ self.W_out.T + self.b_out
        return X, H, Q

    def predict(self, features):
        _, _, Q = self._forward(features)
        P = self.p_mean + self.p_scale * Q
        return P[0] if np.ndim(features) == 1 else P

    def backward(self, features, grad_q):
        """Weight gradients for a loss whose gradient w.r.t. the normalised
        outputs ``q`` is ``grad_q`` (one row per sample)."""
        X, H, _ = self._forward(features)
        G = np.atleast_2d(grad_q)
        gH = (G @ self.W_out) * (1.0 - H * H)
        return {
            "W_skip": G.T @ X,
            "W_out": G.T @ H,
            "b_out": G.sum(axis=0),
            "W_in": gH.T @ X,
            "b_in": gH.sum(axis=0),
        }

    def step(self, grads, lr):
        for k, g in grads.items():
            setattr(self, k, getattr(self, k) - lr * g)

    def check_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.weights().values())


@dataclass
class RegressorConfig:
    hidden: int = 32
    epochs: int = 200
    lr: float = 0.05
    holdout: float = 0.2
    seed: int = 0


def pretrain_regressor(features, targets, cfg=None):
    """Supervised regression of parameters from features.

    The skip path starts at the least-squares affine solution, the hidden
    path at zero output; full-batch gradient descent on the mean squared
    normalised parameter error then trains all weights. Returns
    ``(regressor, held-out parameter MSE)``.
    """
    cfg = cfg or RegressorConfig()
    Xf = np.asarray(features, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if Xf.ndim != 2 or Y.ndim != 2 or len(Xf) != len(Y):
        raise ConfigurationError("features and targets must be 2D with matching rows")
    if len(Xf) < 100:
        raise ConfigurationError(f"pretraining needs at least 100 pairs, got {len(Xf)}")
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(Xf))
    n_hold = int(round(cfg.holdout * len(Xf)))
    hold, train = order[:n_hold], order[n_hold:]
    x_scale = Xf[train].std(axis=0)
    if not np.any(x_scale > 1e-12):
        raise ConfigurationError("degenerate dataset: features are constant")
    reg = ToyRegressor(Xf.shape[1], Y.shape[1], cfg.hidden, rng)
    reg.x_mean = Xf[train].mean(axis=0)
    reg.x_scale = np.where(x_scale > 1e-12, x_scale, 1.0)
    reg.p_mean = Y[train].mean(axis=0)
    p_scale = Y[train].std(axis=0)
    reg.p_scale = np.where(p_scale > 1e-12, p_scale, 1.0)

    Xn = (Xf[train] - reg.x_mean) / reg.x_scale
    Q = (Y[train] - reg.p_mean) / reg.p_scale
    design = np.hstack([Xn, np.ones((len(Xn), 1))])
    coef, *_ = np.linalg.lstsq(design, Q, rcond=None)
    reg.W_skip = coef[:-1].T.copy()
    reg.b_out = coef[-1].copy()

    n = len(train)
    for _ in range(cfg.epochs):
        _, _, Qhat = reg._forward(Xf[train])
        G = 2.0 * (Qhat - Q) / n / Q.shape[1]
        reg.step(reg.backward(Xf[train], G), cfg.lr)
    mse = parameter_mse(reg, Xf[hold], Y[hold]) if n_hold else float("nan")
    return reg, mse


def parameter_mse(reg, features, targets):
    pred = reg.predict(np.asarray(features, dtype=float))
    return float(np.mean((np.atleast_2d(pred) - np.asarray(targets)) ** 2))


@dataclass
class FinetuneConfig:
    lr: float = 1e-4
    steps: int = 200
    weights: LossWeights = field(default_factory=LossWeights)
    precondition: str = "gauss_newton"
    damping: float = 1e-3
    backtrack: bool = True


def _mean_loss(reg, problems, feats, scales):
    """Mean total loss over scenes and its gradient w.r.t. the normalised outputs."""
    P = reg.predict(feats)
    grads_q = np.zeros_like(P)
    total = 0.0
    for s, (pr, p) in enumerate(zip(problems, P)):
        ev = evaluate(p, pr)
        total += ev.loss
        grads_q[s] = (scales[s] @ ev.grad) / reg.p_scale
    return total / len(problems), grads_q / len(problems)


def selfsup_finetune(reg, model, observations, cfg=None, shared_shape=True):
    """Adapt regressor weights to unlabeled scenes using only the reprojection losses.

    Each step evaluates the mean total loss over all scenes at the current
    predictions, backpropagates through the predicted parameters into the
    weights, and takes one gradient step. Gradients with respect to each
    scene's parameters are mapped through that scene's ``preconditioner``
    (built once at the initial predictions) before entering the network, as
    in ``fit_direct``. With ``cfg.backtrack`` a step that raises the mean
    loss or produces invalid parameters is retried with the rate halved,
    and the rate grows back towards ``cfg.lr`` after accepted steps. No 3D
    labels are used.

    Returns ``(regressor, list of mean losses)``.
    """
    cfg = cfg or FinetuneConfig()
    reg = reg.copy()
    problems = [Problem(model, obs, cfg.weights, shared_shape=shared_shape) for obs in observations]
    feats = np.stack([observation_features(obs) for obs in observations])
    try:
        P = reg.predict(feats)
        scales = [preconditioner(pr, p, cfg.precondition, cfg.damping) for pr, p in zip(problems, P)]
        loss, grads_q = _mean_loss(reg, problems, feats, scales)
    except (DepthViolation, ConfigurationError) as exc:
        raise DivergenceError(f"finetune step 0: {exc}", reg) from exc
    history = [loss]
    eta = cfg.lr
    for step in range(1, cfg.steps + 1):
        grads = reg.backward(feats, grads_q)
        for _ in range(MAX_HALVINGS + 1):
            trial = reg.copy()
            trial.step(grads, eta)
            why = None
            if not trial.check_finite():
                why = "non-finite weights"
            else:
                try:
                    new_loss, new_grads = _mean_loss(trial, problems, feats, scales)
                    if not np.isfinite(new_loss) or new_loss > DIVERGENCE_LOSS:
                        why = "loss diverged"
                except (DepthViolation, ConfigurationError) as exc:
                    why = str(exc)
            if not cfg.backtrack:
                if why:
                    raise DivergenceError(f"finetune step {step}: {why}", reg)
                break
            if why is None and new_loss <= loss:
                break
            eta *= 0.5
        else:
            break
        reg, loss, grads_q = trial, new_loss, new_grads
        history.append(loss)
        if cfg.backtrack:
            eta = min(cfg.lr, eta * GROWTH)
    return reg, history
