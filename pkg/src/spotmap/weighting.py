"""Two-step subject weighting: missingness IPW then post-stratification.

Step one models the probability that the outcome was observed (missing at
random given covariates) with a logistic regression and weights observed
subjects by the capped inverse of that probability.  Step two rescales each
stratum cell so the IPW-weighted cell proportions among observed subjects
match target population proportions.  The final weight is the product;
unobserved subjects are reported with zero usage since they never enter the
likelihood.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .core import Dataset
from .errors import DataError, SeparationError, StrataError

_COEF_DIVERGENCE = 1e3


@dataclass(frozen=True)
class StrataTargets:
    """Target population proportions per stratum cell.

    Cells are keyed by tuples of covariate values in the order of
    ``covariates`` (names resolved against the dataset's covariate names).
    """

    covariates: Tuple[str, ...]
    proportions: Dict[tuple, float]

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        props = {tuple(float(v) for v in k): float(p)
                 for k, p in self.proportions.items()}
        if not props:
            raise StrataError("no target cells given")
        if any(p <= 0 for p in props.values()):
            raise StrataError("target proportions must be positive")
        total = sum(props.values())
        if abs(total - 1.0) > 1e-9:
            raise StrataError(f"target proportions sum to {total!r}, not 1")
        object.__setattr__(self, "proportions", props)

    @classmethod
    def from_csv(cls, path) -> "StrataTargets":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "proportion" not in reader.fieldnames:
                raise StrataError("targets CSV needs a 'proportion' column")
            names = tuple(c for c in reader.fieldnames if c != "proportion")
            props = {}
            for row in reader:
                key = tuple(float(row[c]) for c in names)
                if key in props:
                    raise StrataError(f"duplicate target cell {key}")
                props[key] = float(row["proportion"])
        return cls(covariates=names, proportions=props)


@dataclass
class WeightReport:
    """Per-subject weights (input order) plus capping diagnostics."""

    ipw: np.ndarray
    post_strat_factor: np.ndarray
    final_weight: np.ndarray
    n_capped: int
    cap_value: float

    def diagnostics(self) -> dict:
        observed = self.final_weight > 0
        w = self.final_weight[observed]
        qs = np.quantile(w, [0.0, 0.25, 0.5, 0.75, 1.0])
        return {"min": float(qs[0]), "q25": float(qs[1]), "median": float(qs[2]),
                "q75": float(qs[3]), "max": float(qs[4]),
                "n_capped": self.n_capped, "cap_value": self.cap_value}

    def write_csv(self, path):
        lines = ["subject,ipw,post_strat_factor,final_weight"]
        for j in range(self.final_weight.shape[0]):
            lines.append(f"{j},{self.ipw[j]!r},{self.post_strat_factor[j]!r},"
                         f"{self.final_weight[j]!r}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Plain logistic regression (IRLS), shared with the residual baseline
# ---------------------------------------------------------------------------

def logistic_irls(design: np.ndarray, response: np.ndarray,
                  weights: np.ndarray = None, tol: float = 1e-10,
                  max_iter: int = 100) -> np.ndarray:
    """IRLS for a plain logistic regression; returns coefficients.

    Raises :class:`SeparationError` when the coefficients diverge, which is
    the practical signature of complete separation.
    """
    n, p = design.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    coef = np.zeros(p)
    for _ in range(max_iter):
        eta = design @ coef
        mu = expit(eta)
        grad = design.T @ (w * (mu - response))
        if np.max(np.abs(grad)) <= tol * max(1.0, float(np.sum(w))):
            break
        wdiag = w * mu * (1.0 - mu)
        hess = (design * wdiag[:, None]).T @ design
        hess[np.diag_indices(p)] += 1e-10
        coef = coef - np.linalg.solve(hess, grad)
        if np.max(np.abs(coef)) > _COEF_DIVERGENCE:
            raise SeparationError(
                "logistic coefficients diverged (complete separation); "
                "consider coarsening the covariates")
    return coef


def _missingness_design(ds: Dataset, interactions: bool) -> np.ndarray:
    x_sub = ds.x[ds.region_index]
    cols = [np.ones((ds.N, 1)), ds.z, x_sub]
    if interactions:
        base = np.hstack([ds.z, x_sub])
        prods = [base[:, i:i + 1] * base[:, j:j + 1]
                 for i in range(base.shape[1])
                 for j in range(i + 1, base.shape[1])]
        cols.extend(prods)
    return np.hstack(cols)


def fit_missingness_model(ds: Dataset, *, interactions: bool = False
                          ) -> np.ndarray:
    """Observation probabilities from a logistic fit of R on (Z, X)."""
    r = ds.observed
    if np.all(r == 1.0):
        raise DataError("all subjects observed: no missingness to model")
    if np.all(r == 0.0):
        raise DataError("no observed subjects")
    design = _missingness_design(ds, interactions)
    coef = logistic_irls(design, r)
    return expit(design @ coef)


def inverse_probability_weights(probs: np.ndarray, observed: np.ndarray,
                                cap_quantile: float = 0.99):
    """Capped 1/p weights for observed subjects; zero usage for the rest.

    The cap is the given quantile of the uncapped observed-subject weights.
    Returns (weights, n_capped, cap_value).
    """
    probs = np.asarray(probs, dtype=float)
    if np.any(probs <= 0) or np.any(probs >= 1):
        raise ValueError("observation probabilities must lie strictly in (0, 1)")
    if not 0 < cap_quantile <= 1:
        raise ValueError("cap_quantile must be in (0, 1]")
    mask = np.asarray(observed, dtype=float) == 1.0
    raw = 1.0 / probs[mask]
    cap = float(np.quantile(raw, cap_quantile))
    capped = np.minimum(raw, cap)
    out = np.zeros(probs.shape[0])
    out[mask] = capped
    return out, int(np.sum(raw > cap)), cap


def _cell_keys(ds: Dataset, covariates: Sequence[str]) -> list:
    columns = [ds.covariate_column(name) for name in covariates]
    return [tuple(float(col[j]) for col in columns) for j in range(ds.N)]


def post_stratification_factors(ds: Dataset, targets: StrataTargets,
                                ipw: np.ndarray = None) -> np.ndarray:
    """Per-subject factor: target proportion over IPW-weighted sample proportion.

    Proportions condition on observed subjects (the likelihood only sees
    them).  Errors name any cell with no target or no observed mass.
    """
    ipw = np.ones(ds.N) if ipw is None else np.asarray(ipw, dtype=float)
    keys = _cell_keys(ds, targets.covariates)
    observed = ds.observed == 1.0
    mass: Dict[tuple, float] = {}
    for j in np.where(observed)[0]:
        mass[keys[j]] = mass.get(keys[j], 0.0) + ipw[j]
    for cell in mass:
        if cell not in targets.proportions:
            raise StrataError(f"sample cell {cell} missing from targets")
    for cell in targets.proportions:
        if mass.get(cell, 0.0) <= 0.0:
            raise StrataError(f"target cell {cell} has no observed sample mass")
    total = sum(mass.values())
    factor_by_cell = {cell: targets.proportions[cell] / (mass[cell] / total)
                      for cell in mass}
    return np.asarray([factor_by_cell[k] for k in keys], dtype=float)


def build_final_weights(ds: Dataset, targets: StrataTargets,
                        cap_quantile: float = 0.99):
    """Compose IPW and post-stratification; returns (reweighted Dataset, report).

    With no missingness the IPW step is the identity.  The new dataset's
    weights are the old weights times the final factors for observed
    subjects; unobserved subjects keep their weight (it never enters any sum).
    """
    if np.all(ds.observed == 1.0):
        ipw = np.ones(ds.N)
        n_capped, cap = 0, float("inf")
    else:
        probs = fit_missingness_model(ds)
        ipw, n_capped, cap = inverse_probability_weights(
            probs, ds.observed, cap_quantile)
    factor = post_stratification_factors(ds, targets, ipw)
    final = ipw * factor
    report = WeightReport(ipw=ipw, post_strat_factor=factor,
                          final_weight=final, n_capped=n_capped, cap_value=cap)
    observed = ds.observed == 1.0
    new_weight = ds.weight.copy()
    new_weight[observed] = ds.weight[observed] * final[observed]
    return ds.with_weights(new_weight), report
