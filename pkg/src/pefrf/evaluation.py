"""Score calibration, agreement metrics and significance testing."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import special, stats

MIN_EVAL_SAMPLES = 5


class UndefinedCorrelationError(ValueError):
    """A correlation was requested for a sequence with zero variance."""


@dataclass(frozen=True)
class LogisticParams:
    q1: float
    q2: float
    q3: float
    q4: float
    q5: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_array()):
            raise ValueError("logistic parameters must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.q1, self.q2, self.q3, self.q4, self.q5], dtype=np.float64)


@dataclass(frozen=True)
class EvalReport:
    srcc: float
    krcc: float
    plcc: float
    rmse: float
    logistic: LogisticParams
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SignificanceVerdict:
    f_statistic: float
    f_critical: float
    verdict: int


def _pair(q, s, min_len: int):
    q = np.asarray(q, dtype=np.float64).ravel()
    s = np.asarray(s, dtype=np.float64).ravel()
    if q.size != s.size:
        raise ValueError(f"length mismatch: {q.size} vs {s.size}")
    if q.size < min_len:
        raise ValueError(f"need at least {min_len} samples, got {q.size}")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(s))):
        raise ValueError("inputs must be finite")
    return q, s


def apply_logistic(p: LogisticParams, q):
    """Five-parameter logistic mapping; saturates instead of overflowing."""
    q = np.asarray(q, dtype=np.float64)
    # 1 / (1 + exp(z)) == expit(-z), which never overflows
    out = p.q1 * (0.5 - special.expit(-p.q2 * (q - p.q3))) + p.q4 * q + p.q5
    return float(out) if out.ndim == 0 else out


def _logistic_jacobian(x: np.ndarray, q: np.ndarray) -> np.ndarray:
    q1, q2, q3, _, _ = x
    z = q2 * (q - q3)
    sig = special.expit(z)
    dz = q1 * sig * (1.0 - sig)
    return np.column_stack([0.5 - special.expit(-z), dz * (q - q3), -dz * q2,
                            q, np.ones_like(q)])


def _residuals(x: np.ndarray, q: np.ndarray, s: np.ndarray) -> np.ndarray:
    q1, q2, q3, q4, q5 = x
    return q1 * (0.5 - special.expit(-q2 * (q - q3))) + q4 * q + q5 - s


def _levenberg_marquardt(x, q, s, max_iter, rtol):
    r = _residuals(x, q, s)
    sse = float(r @ r)
    lam = 1e-3
    for _ in range(max_iter):
        if sse == 0.0:
            break
        J = _logistic_jacobian(x, q)
        scale = np.sqrt(np.maximum(np.einsum("ij,ij->j", J, J), 1e-12))
        accepted = False
        while lam < 1e16:
            # damped normal equations solved as an augmented least-squares system
            A = np.vstack([J, np.diag(math.sqrt(lam) * scale)])
            b = np.concatenate([-r, np.zeros(5)])
            step = np.linalg.lstsq(A, b, rcond=None)[0]
            x_new = x + step
            r_new = _residuals(x_new, q, s)
            sse_new = float(r_new @ r_new)
            if np.isfinite(sse_new) and sse_new < sse:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        improvement = (sse - sse_new) / sse
        x, r, sse = x_new, r_new, sse_new
        lam = max(lam / 10.0, 1e-12)
        if improvement < rtol:
            break
    return x, sse


def fit_logistic(q_raw, s, max_iter: int = 1000, rtol: float = 1e-10) -> LogisticParams:
    """Least-squares fit of the five-parameter logistic by Levenberg-Marquardt.

    The primary start is ``q1 = range(s)``, ``q2 = 1 / std(q)``,
    ``q3 = mean(q)``, ``q4 = 1``, ``q5 = 0``. A second start from the affine
    least-squares fit (``q1 = 0``) covers near-linear data, where the first
    start creeps along the flat ``q1 -> inf, q2 -> 0`` valley. Each run stops
    once an accepted step improves the SSE by less than ``rtol`` relative, or
    after ``max_iter`` iterations; the lower-SSE result is returned.
    """
    q, s = _pair(q_raw, s, MIN_EVAL_SAMPLES)
    if np.all(s == s[0]):
        raise UndefinedCorrelationError("subjective scores are constant")
    sd = q.std()
    q2 = 1.0 / sd if sd > 0 else 1.0
    starts = [np.array([s.max() - s.min(), q2, q.mean(), 1.0, 0.0])]
    if sd > 0:
        slope, intercept = np.polyfit(q, s, 1)
        starts.append(np.array([0.0, q2, q.mean(), slope, intercept]))
    best_x, best_sse = None, math.inf
    for x0 in starts:
        x, sse = _levenberg_marquardt(x0, q, s, max_iter, rtol)
        if sse < best_sse:
            best_x, best_sse = x, sse
    return LogisticParams(*(float(v) for v in best_x))


def rank_average(x) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    return stats.rankdata(np.asarray(x, dtype=np.float64), method="average")


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant sequence")
    return float(np.clip((a @ b) / den, -1.0, 1.0))


def srcc(q, s) -> float:
    """Spearman correlation: Pearson correlation of average ranks."""
    q, s = _pair(q, s, 3)
    return _pearson(rank_average(q), rank_average(s))


def krcc(q, s, block: int = 2048) -> float:
    """Kendall tau-a, (concordant - discordant) / (n (n - 1) / 2).

    Pairs tied in either sequence count as neither.
    """
    q, s = _pair(q, s, 3)
    n = q.size
    net = 0
    for start in range(0, n, block):
        stop = min(start + block, n)
        dq = np.sign(q[start:stop, None] - q[None, :])
        ds = np.sign(s[start:stop, None] - s[None, :])
        net += int((dq * ds).sum())
    # every unordered pair was visited twice
    return (net / 2) / (0.5 * n * (n - 1))


def plcc(q_mapped, s) -> float:
    """Pearson correlation of mean-centered sequences."""
    q, s = _pair(q_mapped, s, 3)
    return _pearson(q, s)


def rmse(q_mapped, s) -> float:
    q, s = _pair(q_mapped, s, 1)
    d = q - s
    return math.sqrt(float(d @ d) / d.size)


def evaluate(q_raw, s) -> EvalReport:
    """Rank metrics on raw scores; PLCC and RMSE after logistic mapping."""
    q, s = _pair(q_raw, s, MIN_EVAL_SAMPLES)
    params = fit_logistic(q, s)
    mapped = apply_logistic(params, q)
    return EvalReport(srcc(q, s), krcc(q, s), plcc(mapped, s), rmse(mapped, s), params, q.size)


def logistic_residuals(q_raw, s) -> np.ndarray:
    """Residuals of subjective scores after per-method logistic mapping."""
    q, s = _pair(q_raw, s, MIN_EVAL_SAMPLES)
    return apply_logistic(fit_logistic(q, s), q) - s


def f_critical(alpha: float, dfn: float, dfd: float) -> float:
    """Upper-tail critical value of the F distribution.

    Inverts the regularized incomplete beta: if ``I_x(dfn/2, dfd/2) = 1 -
    alpha`` then ``F = dfd x / (dfn (1 - x))``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if dfn <= 0 or dfd <= 0:
        raise ValueError("degrees of freedom must be positive")
    x = special.betaincinv(dfn / 2.0, dfd / 2.0, 1.0 - alpha)
    return float(dfd * x / (dfn * (1.0 - x)))


def f_test(res_a, res_b, alpha: float = 0.05) -> SignificanceVerdict:
    """Variance-ratio test between two residual sequences.

    Verdict +1 means method a has significantly smaller residual variance
    than b, -1 the reverse, 0 neither.
    """
    a = np.asarray(res_a, dtype=np.float64).ravel()
    b = np.asarray(res_b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise ValueError("each residual sequence needs at least 2 values")
    if not 0 < alpha <= 0.5:
        raise ValueError("alpha must lie in (0, 0.5]")
    var_a = float(np.var(a, ddof=1))
    var_b = float(np.var(b, ddof=1))
    if var_a == 0.0 or var_b == 0.0:
        raise ValueError("residual variance is zero")
    crit = f_critical(alpha, a.size - 1, b.size - 1)
    if var_a * crit < var_b:
        verdict = 1
    elif var_b * crit < var_a:
        verdict = -1
    else:
        verdict = 0
    return SignificanceVerdict(var_a / var_b, crit, verdict)


def kfold_split(n: int, k: int, seed: int = 0) -> list[np.ndarray]:
    """Shuffle ``range(n)`` with ``seed`` and deal indices round-robin into k folds."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(perm[i::k]) for i in range(k)]


@dataclass
class CrossValidation:
    folds: list
    reports: list
    errors: list

    def summary(self) -> dict:
        ok = [r for r in self.reports if r is not None]
        out = {"n_folds": len(self.folds), "n_failed": sum(e is not None for e in self.errors)}
        for name in ("srcc", "krcc", "plcc", "rmse"):
            vals = np.array([getattr(r, name) for r in ok])
            out[f"{name}_mean"] = float(vals.mean()) if ok else math.nan
            out[f"{name}_std"] = float(vals.std()) if ok else math.nan
        return out

    def to_dict(self) -> dict:
        return {
            "folds": [
                {"fold": i, "n_test": int(len(f)),
                 "report": None if r is None else r.to_dict(), "error": e}
                for i, (f, r, e) in enumerate(zip(self.folds, self.reports, self.errors))
            ],
            "summary": self.summary(),
        }


def cross_validate(data, cfg=None, k: int = 5, seed: int = 0, folds=None,
                   workers: int = 1) -> CrossValidation:
    """Train on each fold's complement and evaluate on the fold.

    ``folds`` overrides the seeded split (e.g. reference-disjoint folds).
    A fold whose evaluation fails, for instance on constant targets, is
    recorded with its error message rather than aborting the run.
    """
    from .forest import ForestConfig, predict_many, train_forest

    cfg = cfg or ForestConfig(seed=seed)
    n = len(data)
    if folds is None:
        if n < max(k, 10):
            raise ValueError(f"need at least max(k, 10) = {max(k, 10)} samples, got {n}")
        folds = kfold_split(n, k, seed)
    small = [len(f) for f in folds if len(f) < MIN_EVAL_SAMPLES]
    if small:
        raise ValueError(f"every fold needs >= {MIN_EVAL_SAMPLES} samples to evaluate; got {small}")
    all_idx = np.arange(n)
    reports, errors = [], []
    for fold in folds:
        model = train_forest(data.subset(np.setdiff1d(all_idx, fold)), cfg, workers=workers)
        pred = predict_many(model, data.features[fold])
        try:
            reports.append(evaluate(pred, data.targets[fold]))
            errors.append(None)
        except ValueError as exc:
            reports.append(None)
            errors.append(f"{type(exc).__name__}: {exc}")
    return CrossValidation([np.asarray(f) for f in folds], reports, errors)


def cross_val_predict(data, cfg, folds, workers: int = 1) -> np.ndarray:
    """Out-of-fold predictions for every sample."""
    from .forest import predict_many, train_forest

    out = np.full(len(data), np.nan)
    all_idx = np.arange(len(data))
    for fold in folds:
        model = train_forest(data.subset(np.setdiff1d(all_idx, fold)), cfg, workers=workers)
        out[fold] = predict_many(model, data.features[fold])
    return out
