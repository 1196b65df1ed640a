"""Learning for patch depth: stagewise non-linear ridge regression, budgeted
greedy selection of feature groups, and the over/under-prediction lookup
table used to expand a point depth estimate into near/far interpretations.

The stagewise model starts from plain ridge regression; every later stage
refits ridge on the original features augmented with a small fixed basis of
the previous stage's prediction. Training RMSE is non-increasing by
construction: a stage that fails to improve is replaced by a passthrough.
"""

from dataclasses import dataclass, replace

import numpy as np

from .features import GROUP_ORDER, layout_for

MODEL_FORMAT_VERSION = 3


def _basis(p, hi):
    """Fixed scalar basis of a previous prediction: p, p^2, relu(p)*p,
    log1p(|p|). The input is clamped to [0, hi] first; without this the
    quadratic terms compound across stages and a single out-of-range
    prediction diverges double-exponentially on unseen data."""
    p = np.clip(np.asarray(p, dtype=np.float64), 0.0, hi)
    return np.column_stack([p, p * p, np.maximum(p, 0.0) * p,
                            np.log1p(np.abs(p))])


N_BASIS = 4


def _solve_ridge(x, y, lam):
    """Ridge with unpenalized intercept via normal equations.

    Singular systems retry with lam * 10 up to three times, then raise.
    Returns (weights, bias).
    """
    n, d = x.shape
    a = np.empty((d + 1, d + 1))
    xs = x.sum(axis=0)
    a[0, 0] = n
    a[0, 1:] = xs
    a[1:, 0] = xs
    a[1:, 1:] = x.T @ x
    b = np.empty(d + 1)
    b[0] = y.sum()
    b[1:] = x.T @ y
    for attempt in range(4):
        m = a.copy()
        m[1:, 1:] += lam * np.eye(d)
        try:
            sol = np.linalg.solve(m, b)
        except np.linalg.LinAlgError:
            sol = None
        if sol is not None and np.all(np.isfinite(sol)):
            return sol[1:], float(sol[0])
        if attempt == 3:
            break
        lam = lam * 10.0 if lam > 0 else 1e-8
    raise np.linalg.LinAlgError(
        "ridge system singular even after increasing regularization")


@dataclass
class StagewiseRegressor:
    """Stagewise ridge regressor.

    stages holds (weights, bias) pairs; stage 0 acts on the raw features,
    later stages on features extended with the prediction basis. mu/sigma
    standardize inputs when fitted with standardize=True. clip_hi bounds
    the basis input (the training target maximum).
    """

    stages: list
    ridge_lambda: float
    mu: np.ndarray
    sigma: np.ndarray
    clip_hi: float = np.inf

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def n_features(self) -> int:
        return len(self.stages[0][0])

    def _prep(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.n_features:
            raise ValueError(
                f"expected {self.n_features} features, got {x.shape[1]}")
        return (x - self.mu) / self.sigma

    def predict(self, x, n_stages=None):
        """Predict depths; optionally stop after the first n_stages."""
        xs = self._prep(x)
        limit = self.n_stages if n_stages is None else n_stages
        if not (1 <= limit <= self.n_stages):
            raise ValueError("n_stages out of range")
        w, b = self.stages[0]
        pred = xs @ w + b
        for w, b in self.stages[1:limit]:
            aug = np.column_stack([xs, _basis(pred, self.clip_hi)])
            pred = aug @ w + b
        return pred


def _rmse(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2)))


def train_stagewise(x, y, n_stages=4, ridge_lambda=1e-2, standardize=True):
    """Fit a stagewise ridge regressor.

    Requires at least 10 samples per feature dimension and strictly
    positive targets. With n_stages=1 and standardize=False this is exactly
    ridge regression on the raw features.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("x must be (n, d) with matching targets")
    n, d = x.shape
    if n < 10 * max(d, 1):
        raise ValueError(
            f"need >= {10 * d} samples for {d} features, got {n}")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise ValueError("non-finite training data")
    if np.any(y <= 0):
        raise ValueError("depth targets must be positive")
    if n_stages < 1:
        raise ValueError("n_stages must be >= 1")

    if standardize:
        mu = x.mean(axis=0)
        sigma = x.std(axis=0)
        sigma = np.where(sigma > 1e-12, sigma, 1.0)
    else:
        mu = np.zeros(d)
        sigma = np.ones(d)
    xs = (x - mu) / sigma

    clip_hi = float(y.max())
    stages = []
    w, b = _solve_ridge(xs, y, ridge_lambda)
    pred = xs @ w + b
    stages.append((w, b))
    best = _rmse(pred, y)
    for _ in range(1, n_stages):
        aug = np.column_stack([xs, _basis(pred, clip_hi)])
        w, b = _solve_ridge(aug, y, ridge_lambda)
        cand = aug @ w + b
        err = _rmse(cand, y)
        if err <= best + 1e-12:
            stages.append((w, b))
            pred = cand
            best = min(best, err)
        else:
            # Passthrough stage: copy the previous (clamped) prediction so
            # training error never increases; targets are positive and at
            # most clip_hi, so the clamp cannot raise pointwise error.
            w = np.zeros(d + N_BASIS)
            w[d] = 1.0
            stages.append((w, 0.0))
            pred = np.clip(pred, 0.0, clip_hi)
    return StagewiseRegressor(stages=stages, ridge_lambda=ridge_lambda,
                              mu=mu, sigma=sigma, clip_hi=clip_hi)


# ---------------------------------------------------------------------------
# Budgeted greedy selection of feature groups.

@dataclass(frozen=True)
class PlanEntry:
    name: str
    cost_ms: float
    cumulative_ms: float
    validation_rmse: float


@dataclass
class BudgetPlan:
    """Greedy selection order truncated at a budget.

    Plans for different budgets over the same inputs are nested: the
    smaller plan is a prefix of the larger.
    """

    entries: tuple
    budget_ms: float
    warning: str = ""

    @property
    def group_names(self):
        return tuple(e.name for e in self.entries)

    @property
    def total_cost_ms(self) -> float:
        return self.entries[-1].cumulative_ms if self.entries else 0.0


def _orthonormal_residual(block, basis, tol=1e-10):
    """Orthonormal basis of block's component outside span(basis)."""
    resid = block - basis @ (basis.T @ block)
    q, r = np.linalg.qr(resid)
    diag = np.abs(np.diag(r))
    keep = diag > tol * max(1.0, diag.max() if diag.size else 1.0)
    return q[:, keep]


def select_budgeted_groups(grouped_x, y, costs, budget_ms, ridge_lambda=1e-2,
                           val_fraction=0.2, seed=0):
    """Greedy forward selection of feature groups under a time budget.

    grouped_x maps group name to its (n, d_g) matrix; costs maps name to
    per-frame extraction cost in ms. Each step whitens the remaining
    candidates against the selected span and picks the group with the best
    explained-variance gain per unit cost (ties to the lower group index).
    The full greedy order is computed, then truncated at the budget; the
    recorded validation RMSE per prefix comes from a ridge refit on a held
    out fraction of rows.
    """
    names = list(grouped_x.keys())
    if not names:
        raise ValueError("no feature groups given")
    y = np.asarray(y, dtype=np.float64).ravel()
    n = y.shape[0]
    mats = []
    for nm in names:
        m = np.asarray(grouped_x[nm], dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != n:
            raise ValueError(f"group {nm} rows do not match targets")
        if nm not in costs:
            raise ValueError(f"missing cost for group {nm}")
        if costs[nm] <= 0:
            raise ValueError(f"cost for group {nm} must be positive")
        mats.append(m)

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(val_fraction * n))) if n > 1 else 0
    val_idx = perm[:n_val]
    tr_idx = perm[n_val:]
    if tr_idx.size == 0:
        raise ValueError("not enough rows for a train/validation split")

    # Whitening workspace on the training rows; the intercept direction is
    # in the basis from the start.
    basis = np.full((tr_idx.size, 1), 1.0 / np.sqrt(tr_idx.size))
    resid = y[tr_idx] - y[tr_idx].mean()

    remaining = list(range(len(names)))
    order = []
    while remaining:
        best_rate = -np.inf
        best_i = None
        best_q = None
        for i in remaining:
            q = _orthonormal_residual(mats[i][tr_idx], basis)
            if q.shape[1] == 0:
                gain = 0.0
            else:
                proj = q.T @ resid
                gain = float(proj @ proj)
            rate = gain / costs[names[i]]
            if rate > best_rate + 1e-15:
                best_rate = rate
                best_i = i
                best_q = q
        order.append(best_i)
        remaining.remove(best_i)
        if best_q is not None and best_q.shape[1]:
            resid = resid - best_q @ (best_q.T @ resid)
            basis = np.column_stack([basis, best_q])

    entries = []
    cum = 0.0
    chosen = []
    for i in order:
        cost = float(costs[names[i]])
        if cum + cost > budget_ms + 1e-9:
            break
        cum += cost
        chosen.append(i)
        xsel = np.column_stack([mats[j] for j in chosen])
        w, b = _solve_ridge(xsel[tr_idx], y[tr_idx], ridge_lambda)
        if val_idx.size:
            vr = _rmse(xsel[val_idx] @ w + b, y[val_idx])
        else:
            vr = _rmse(xsel[tr_idx] @ w + b, y[tr_idx])
        entries.append(PlanEntry(name=names[i], cost_ms=cost,
                                 cumulative_ms=cum, validation_rmse=vr))
    warning = ""
    if not entries:
        warning = (f"budget {budget_ms:g} ms is below the cheapest group "
                   f"cost {min(costs[nm] for nm in names):g} ms")
    return BudgetPlan(entries=tuple(entries), budget_ms=float(budget_ms),
                      warning=warning)


# ---------------------------------------------------------------------------
# Over/under-prediction lookup table.

@dataclass
class ErrorLUT:
    """Per-bin conditional truth means for a depth predictor.

    Arrays are indexed by integer bin d in [1, d_max]; index 0 is unused.
    d_near[d] is the mean true depth over holdout samples whose prediction
    rounded to d but whose truth was nearer than predicted; d_far[d] the
    mean where truth was at or beyond the prediction. Bins (or sides) with
    fewer than min_count samples fall back to identity. Values are clamped
    so d_near <= d <= d_far always holds.
    """

    d_near: np.ndarray
    d_far: np.ndarray
    n_near: np.ndarray
    n_far: np.ndarray
    d_max: float
    min_count: int

    @property
    def n_bins(self) -> int:
        return len(self.d_near) - 1

    def lookup(self, depth):
        """Map depths to (near, far) via nearest-integer binning."""
        bins = np.clip(np.rint(np.asarray(depth, dtype=np.float64)),
                       1, self.n_bins).astype(np.int64)
        return self.d_near[bins], self.d_far[bins]


def build_error_lut(predictor, x_holdout, y_holdout, d_max=20.0,
                    min_count=20, clamp_range=(0.5, None)):
    """Build the near/far error LUT from holdout predictions.

    The predictor's outputs are clamped into the deployed range before
    binning to the nearest integer depth.
    """
    y = np.asarray(y_holdout, dtype=np.float64).ravel()
    if y.size == 0:
        raise ValueError("empty holdout set")
    predict = getattr(predictor, "predict", predictor)
    preds = np.asarray(predict(x_holdout), dtype=np.float64).ravel()
    lo = clamp_range[0]
    hi = clamp_range[1] if clamp_range[1] is not None else d_max
    preds = np.clip(preds, lo, hi)

    n_bins = int(round(d_max))
    d_near = np.arange(n_bins + 1, dtype=np.float64)
    d_far = np.arange(n_bins + 1, dtype=np.float64)
    n_near = np.zeros(n_bins + 1, dtype=np.int64)
    n_far = np.zeros(n_bins + 1, dtype=np.int64)
    bins = np.clip(np.rint(preds), 1, n_bins).astype(np.int64)
    for d in range(1, n_bins + 1):
        in_bin = bins == d
        near = in_bin & (y < preds)
        far = in_bin & (y >= preds)
        n_near[d] = int(near.sum())
        n_far[d] = int(far.sum())
        if n_near[d] >= min_count:
            d_near[d] = min(float(y[near].mean()), float(d))
        if n_far[d] >= min_count:
            d_far[d] = max(float(y[far].mean()), float(d))
    return ErrorLUT(d_near=d_near, d_far=d_far, n_near=n_near, n_far=n_far,
                    d_max=float(d_max), min_count=int(min_count))


def apply_lut(lut, depth_grid):
    """Expand a point-estimate DepthGrid into (near, far) grids.

    Each cell keeps its value within +-0.5 m of the original after the
    integer binning: near <= depth + 0.5 and far >= depth - 0.5.
    """
    near_vals, far_vals = lut.lookup(depth_grid.depth)
    near = replace(depth_grid, depth=near_vals)
    far = replace(depth_grid, depth=far_vals)
    return near, far


# ---------------------------------------------------------------------------
# Model bundle and persistence.

@dataclass
class DepthModel:
    """Everything the runtime needs to turn a frame into depth grids."""

    regressor: StagewiseRegressor
    group_names: tuple
    patch_size: int
    d_max: float
    lut: ErrorLUT = None
    flow_sigma_px: float = 0.5

    @property
    def layout(self):
        return layout_for(self.group_names)


def save_model(path, model):
    """Versioned binary dump; load_model round-trips bit-exactly."""
    payload = {
        "format_version": np.int64(MODEL_FORMAT_VERSION),
        "group_names": np.array(model.group_names),
        "patch_size": np.int64(model.patch_size),
        "d_max": np.float64(model.d_max),
        "flow_sigma_px": np.float64(model.flow_sigma_px),
        "ridge_lambda": np.float64(model.regressor.ridge_lambda),
        "n_stages": np.int64(model.regressor.n_stages),
        "mu": model.regressor.mu,
        "sigma": model.regressor.sigma,
        "clip_hi": np.float64(model.regressor.clip_hi),
    }
    for i, (w, b) in enumerate(model.regressor.stages):
        payload[f"stage{i}_w"] = np.asarray(w, dtype=np.float64)
        payload[f"stage{i}_b"] = np.float64(b)
    if model.lut is not None:
        payload["lut_d_near"] = model.lut.d_near
        payload["lut_d_far"] = model.lut.d_far
        payload["lut_n_near"] = model.lut.n_near
        payload["lut_n_far"] = model.lut.n_far
        payload["lut_d_max"] = np.float64(model.lut.d_max)
        payload["lut_min_count"] = np.int64(model.lut.min_count)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_model(path):
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format_version"])
        if version > MODEL_FORMAT_VERSION:
            raise ValueError(f"model format {version} is newer than "
                             f"supported {MODEL_FORMAT_VERSION}")
        n_stages = int(z["n_stages"])
        stages = [(z[f"stage{i}_w"].copy(), float(z[f"stage{i}_b"]))
                  for i in range(n_stages)]
        reg = StagewiseRegressor(stages=stages,
                                 ridge_lambda=float(z["ridge_lambda"]),
                                 mu=z["mu"].copy(), sigma=z["sigma"].copy(),
                                 clip_hi=(float(z["clip_hi"])
                                          if "clip_hi" in z else np.inf))
        lut = None
        if "lut_d_near" in z:
            lut = ErrorLUT(d_near=z["lut_d_near"].copy(),
                           d_far=z["lut_d_far"].copy(),
                           n_near=z["lut_n_near"].copy(),
                           n_far=z["lut_n_far"].copy(),
                           d_max=float(z["lut_d_max"]),
                           min_count=int(z["lut_min_count"]))
        return DepthModel(regressor=reg,
                          group_names=tuple(str(g) for g in z["group_names"]),
                          patch_size=int(z["patch_size"]),
                          d_max=float(z["d_max"]), lut=lut,
                          flow_sigma_px=float(z["flow_sigma_px"]))
