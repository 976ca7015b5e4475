"""Static second-order polynomial regression without cross terms."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from ..exceptions import ChannelMismatch, NonFiniteValue, RankDeficient, TooFewSamples

N_INPUTS = 6
N_COEFFICIENTS = 1 + 2 * N_INPUTS
FORMAT_VERSION = 1


@dataclass(frozen=True)
class PRModel:
    """``y = alpha + sum_i beta_i x_i + sum_i gamma_i x_i**2``."""

    alpha: float
    beta: tuple
    gamma: tuple
    #: 2-norm condition number of the design matrix used in the fit
    condition_number: float = float("nan")

    def __post_init__(self):
        beta = tuple(float(b) for b in self.beta)
        gamma = tuple(float(g) for g in self.gamma)
        if len(beta) != N_INPUTS or len(gamma) != N_INPUTS:
            raise ValueError(f"beta and gamma need {N_INPUTS} entries each")
        if not np.all(np.isfinite((self.alpha,) + beta + gamma)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    @property
    def coefficients(self) -> np.ndarray:
        """``[alpha, beta_1..beta_6, gamma_1..gamma_6]``."""
        return np.array((self.alpha,) + self.beta + self.gamma)

    @classmethod
    def from_coefficients(cls, coef, condition_number: float = float("nan")) -> "PRModel":
        coef = np.asarray(coef, dtype=np.float64).ravel()
        if coef.size != N_COEFFICIENTS:
            raise ValueError(f"expected {N_COEFFICIENTS} coefficients, got {coef.size}")
        return cls(coef[0], tuple(coef[1:1 + N_INPUTS]), tuple(coef[1 + N_INPUTS:]), condition_number)

    def predict(self, x) -> np.ndarray | float:
        return predict_pr(self, x)

    def to_dict(self) -> dict:
        return {"format": "vcsflow.pr", "version": FORMAT_VERSION, "alpha": self.alpha,
                "beta": list(self.beta), "gamma": list(self.gamma),
                "condition_number": self.condition_number}

    @classmethod
    def from_dict(cls, data: Mapping) -> "PRModel":
        if data.get("format") != "vcsflow.pr":
            raise ValueError("not a polynomial-regression model file")
        return cls(data["alpha"], tuple(data["beta"]), tuple(data["gamma"]),
                   float(data.get("condition_number", float("nan"))))

    def save(self, path, provenance: Mapping | None = None) -> None:
        payload = self.to_dict()
        if provenance:
            payload["provenance"] = dict(provenance)
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PRModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def design_matrix(inputs) -> np.ndarray:
    """Columns ``[1, x_1..x_6, x_1**2..x_6**2]``."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != N_INPUTS:
        raise ChannelMismatch(f"expected (N, {N_INPUTS}) inputs, got shape {x.shape}")
    return np.hstack([np.ones((x.shape[0], 1)), x, x * x])


def fit_pr(inputs, targets) -> PRModel:
    """Least-squares fit through a Householder QR factorization of the design matrix.

    Raises :class:`RankDeficient` (carrying the condition number) when the
    numerical rank of the design matrix is below 13.
    """
    A = design_matrix(inputs)
    y = np.asarray(targets, dtype=np.float64).ravel()
    if A.shape[0] != y.size:
        raise ValueError(f"{A.shape[0]} input rows but {y.size} targets")
    if A.shape[0] < N_COEFFICIENTS:
        raise TooFewSamples(f"need at least {N_COEFFICIENTS} samples, got {A.shape[0]}")
    for name, arr in (("inputs", A), ("targets", y)):
        bad = np.flatnonzero(~np.isfinite(arr).reshape(arr.shape[0], -1).all(axis=1))
        if bad.size:
            raise NonFiniteValue(name, int(bad[0]))
    Q, R = np.linalg.qr(A, mode="reduced")
    sv = np.linalg.svd(R, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    tol = sv[0] * max(A.shape) * np.finfo(np.float64).eps
    if sv[-1] <= tol:
        raise RankDeficient(cond)
    coef = np.linalg.solve(R, Q.T @ y)
    return PRModel.from_coefficients(coef, cond)


def predict_pr(model: PRModel, x) -> np.ndarray | float:
    """Evaluate the polynomial on one 6-vector (returns a float) or an ``(N, 6)`` array."""
    arr = np.asarray(x, dtype=np.float64)
    out = design_matrix(arr) @ model.coefficients
    return float(out[0]) if arr.ndim == 1 else out
