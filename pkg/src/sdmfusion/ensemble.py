"""Weighted-average combination of per-modality models and MAE-optimal
weights on the probability simplex."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

MODEL_NAMES = ("RGB", "LC", "NDVI")
INITIAL_WEIGHTS = (0.3, 0.3, 0.4)


@dataclass(frozen=True)
class EnsembleWeights:
    w: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(x) for x in self.w)
        object.__setattr__(self, "w", w)
        if any(not (0.0 <= x <= 1.0) for x in w):
            raise ValueError(f"weights must lie in [0, 1], got {w}")
        if abs(sum(w) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got sum {sum(w)!r}")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.w)


def ensemble_predict(w, preds):
    """Weighted average ``sum(w_i P_i) / sum(w_i)``.

    ``preds`` may be a single triple or an (N, 3) matrix. ``w`` may be any
    non-negative vector with a positive sum, not only a simplex point.
    """
    wa = np.asarray(w.w if isinstance(w, EnsembleWeights) else w, dtype=float)
    total = wa.sum()
    if total == 0:
        raise ValueError("ensemble weights are all zero")
    p = np.asarray(preds, dtype=float)
    out = p @ wa / total
    return float(out) if np.ndim(out) == 0 else out


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum w = 1} (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _mae(preds: np.ndarray, truth: np.ndarray, w: np.ndarray) -> float:
    return float(np.mean(np.abs(truth - preds @ w)))


def _clean(w: np.ndarray) -> np.ndarray:
    w = np.clip(w, 0.0, 1.0)
    return w / w.sum()


@dataclass
class OptimizationResult:
    weights: EnsembleWeights
    mae: float
    history: list[float] = field(default_factory=list)  # best MAE so far, per iteration
    n_iter: int = 0


def optimize_weights(preds, truth, seed: int | None = None, max_iter: int = 500,
                     step: float = 0.05, polish: bool = True) -> OptimizationResult:
    """Minimise MAE(truth, preds @ w) over the probability simplex.

    Projected subgradient descent from (0.3, 0.3, 0.4) with a normalised
    subgradient; the step halves whenever an iterate fails to improve on
    the best point so far, and the best point is kept. Because MAE is
    piecewise linear, subgradient steps can stall at a kink, so by default
    the result is polished with an exact linear program over the simplex
    and the better of the two points is returned.

    ``seed`` is accepted for interface symmetry; the procedure is
    deterministic.

    Raises:
        ValueError: on NaN predictions or mismatched shapes.
    """
    P = np.asarray(preds, dtype=float)
    y = np.asarray(truth, dtype=float).ravel()
    if P.ndim != 2 or len(P) != len(y) or len(y) == 0:
        raise ValueError(f"preds must be (N, m) with N = len(truth) >= 1, got {P.shape} and {y.shape}")
    if np.isnan(P).any() or np.isnan(y).any():
        raise ValueError("NaN in predictions or truth")
    m = P.shape[1]
    w = np.asarray(INITIAL_WEIGHTS if m == 3 else np.full(m, 1.0 / m), dtype=float)
    best_w, best = w.copy(), _mae(P, y, w)
    history = [best]
    it = 0
    for it in range(1, max_iter + 1):
        r = y - P @ w
        g = -(np.sign(r) @ P) / len(y)
        gn = np.linalg.norm(g)
        if gn == 0 or step < 1e-12:
            break
        cand = project_to_simplex(w - step * g / gn)
        f = _mae(P, y, cand)
        if f < best:
            best, best_w = f, cand
        else:
            step *= 0.5
        w = cand
        history.append(best)

    if polish:
        lp_w = _lp_mae_weights(P, y)
        if lp_w is not None:
            lp_w = _clean(lp_w)
            f = _mae(P, y, lp_w)
            if f < best:
                best, best_w = f, lp_w
                history.append(best)
    best_w = _clean(best_w)
    return OptimizationResult(EnsembleWeights(tuple(best_w)), _mae(P, y, best_w), history, it)


def _lp_mae_weights(P: np.ndarray, y: np.ndarray) -> np.ndarray | None:
    """Exact simplex-constrained L1 regression as an LP (HiGHS).

    Variables [w (m), e (N)]: minimise sum(e) subject to
    -e <= y - P w <= e, sum(w) = 1, w >= 0.
    """
    from scipy.optimize import linprog
    from scipy.sparse import eye, hstack, vstack, csr_matrix

    n, m = P.shape
    c = np.concatenate([np.zeros(m), np.ones(n) / n])
    Ps = csr_matrix(P)
    I = eye(n, format="csr")
    A_ub = vstack([hstack([-Ps, -I]), hstack([Ps, -I])], format="csr")
    b_ub = np.concatenate([-y, y])
    A_eq = csr_matrix(np.concatenate([np.ones(m), np.zeros(n)])[None])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, 1)] * m + [(0, None)] * n, method="highs")
    return res.x[:m] if res.success else None


def write_weights_csv(weights: EnsembleWeights, path, names=MODEL_NAMES) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "weight"])
        for name, x in zip(names, weights.w):
            w.writerow([name, repr(x)])


def read_weights_csv(path) -> tuple[tuple[str, ...], EnsembleWeights]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return tuple(r["model"] for r in rows), EnsembleWeights(tuple(float(r["weight"]) for r in rows))
