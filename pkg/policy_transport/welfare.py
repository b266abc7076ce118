"""Tobit conditional-mean welfare and its robust (maxmin) variant.

For a latent outcome N(m, σ²) censored below at τ, the mean outcome is

    w = τ + σ·(φ(c) - c·Φ(-c)),   c = (τ - m)/σ,

which equals m + (τ - m)·Φ(c) + σ·φ(c) and is evaluated in the first form to avoid
cancellation when m is far below τ. The robust welfare of a treatment arm is

    w_R = λ·w + (1 - λ)·max(w - ε, y_ℓ(t)),

the worst-case mean over a Wasserstein ε-ball of outcome distributions supported
above y_ℓ(t).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtr

# |w - ε - floor| below this selects the kink branch of the directional derivative.
KINK_TOLERANCE = 1e-10

_SQRT_2PI = np.sqrt(2.0 * np.pi)

ArrayLike = Union[float, Sequence[float], np.ndarray]


def norm_pdf(z: ArrayLike) -> np.ndarray:
    """Standard normal density."""
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / _SQRT_2PI


def _squeeze(value: np.ndarray) -> Union[float, np.ndarray]:
    return float(value) if np.ndim(value) == 0 else value


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Tobit parameters θ = (β, α, σ), with an optional intercept.

    The flat array layout is (β..., α, [intercept], σ).
    """

    beta: np.ndarray
    alpha: float
    sigma: float
    intercept: Optional[float] = None

    def __post_init__(self):
        """Validate finiteness and σ > 0."""
        beta = np.atleast_1d(np.array(self.beta, dtype=float))
        if beta.ndim != 1:
            raise ValueError("beta must be a vector")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "sigma", float(self.sigma))
        if self.intercept is not None:
            object.__setattr__(self, "intercept", float(self.intercept))

        if not np.all(np.isfinite(self.as_array())):
            raise ValueError(f"Parameter entries must be finite: {self.as_array()}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def has_intercept(self) -> bool:
        """Whether the mean includes an intercept."""
        return self.intercept is not None

    @property
    def k(self) -> int:
        """Number of parameters."""
        return len(self.beta) + 2 + int(self.has_intercept)

    def as_array(self) -> np.ndarray:
        """Flatten to (β..., α, [intercept], σ)."""
        parts = [self.beta, [self.alpha]]
        if self.intercept is not None:
            parts.append([self.intercept])
        parts.append([self.sigma])
        return np.concatenate(parts)

    @classmethod
    def from_array(cls, values: ArrayLike, intercept: bool = False) -> ParamVector:
        """Inverse of as_array."""
        values = np.asarray(values, dtype=float)
        d = len(values) - 2 - int(intercept)
        if d < 0:
            raise ValueError(f"Too few parameter entries: {len(values)}")
        return cls(
            beta=values[:d],
            alpha=values[d],
            sigma=values[-1],
            intercept=values[d + 1] if intercept else None,
        )

    def names(
        self, covariate_names: Sequence[str] = (), treatment_name: str = "alpha"
    ) -> list[str]:
        """Labels for the flat array entries."""
        covariates = list(covariate_names) or [
            f"beta{i}" for i in range(len(self.beta))
        ]
        if len(covariates) != len(self.beta):
            raise ValueError("One covariate name is required per beta entry")
        names = covariates + [treatment_name]
        if self.has_intercept:
            names.append("const")
        return names + ["sigma"]

    def mean(self, x: ArrayLike, t: ArrayLike) -> Union[float, np.ndarray]:
        """Latent mean m = x'β + αt (+ intercept), broadcasting over x rows and t."""
        x = np.asarray(x, dtype=float)
        m = x @ self.beta + self.alpha * np.asarray(t, dtype=float)
        if self.intercept is not None:
            m = m + self.intercept
        return _squeeze(np.asarray(m))

    def shifted(self, delta: float) -> ParamVector:
        """Add delta to every component."""
        return ParamVector.from_array(self.as_array() + delta, self.has_intercept)

    def to_dict(self) -> dict[str, Any]:
        """A JSON-serializable representation."""
        d: dict[str, Any] = {
            "beta": self.beta.tolist(),
            "alpha": self.alpha,
            "sigma": self.sigma,
        }
        if self.intercept is not None:
            d["intercept"] = self.intercept
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ParamVector:
        """Inverse of to_dict."""
        return cls(
            beta=d["beta"],
            alpha=d["alpha"],
            sigma=d["sigma"],
            intercept=d.get("intercept"),
        )


@dataclass(frozen=True)
class WelfareSpec:
    """Configuration of the robust utility.

    Attributes:
        lam: Weight λ ∈ [0, 1] on the mean outcome.
        eps_robust: Neighborhood radius ε > 0.
        tau: Censor point of the outcome.
        floor: Lower support bound y_ℓ(t) used in the max term. None means τ for
            every arm; a sequence gives one floor per treatment level.
    """

    lam: float = 1.0
    eps_robust: float = 0.8
    tau: float = 0.0
    floor: Optional[Union[float, tuple[float, ...]]] = None

    def __post_init__(self):
        """Validate λ and ε."""
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if not self.eps_robust > 0:
            raise ValueError(f"eps_robust must be positive, got {self.eps_robust}")
        if self.floor is not None and not np.isscalar(self.floor):
            object.__setattr__(self, "floor", tuple(float(f) for f in self.floor))

    def floor_for(self, t: Optional[ArrayLike] = None) -> Union[float, np.ndarray]:
        """y_ℓ(t); t is the treatment level, used as an index for per-arm floors."""
        if self.floor is None:
            return self.tau
        if np.isscalar(self.floor):
            return float(self.floor)  # type: ignore
        if t is None:
            raise ValueError("Per-arm floors require a treatment level")
        floors = np.asarray(self.floor, dtype=float)
        return _squeeze(floors[np.asarray(t, dtype=int)])

    def to_dict(self) -> dict[str, Any]:
        """A JSON-serializable representation, with λ under the key 'lambda'."""
        floor = list(self.floor) if isinstance(self.floor, tuple) else self.floor
        return {
            "lambda": self.lam,
            "eps_robust": self.eps_robust,
            "tau": self.tau,
            "floor": floor,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> WelfareSpec:
        """Inverse of to_dict; accepts 'lam' as an alias of 'lambda'."""
        d = dict(d)
        lam = d.pop("lambda", d.pop("lam", 1.0))
        return cls(lam=lam, **d)


def tobit_mean_tau(
    theta: ParamVector, x: ArrayLike, t: ArrayLike, tau: float
) -> Union[float, np.ndarray]:
    """E[max(τ, N(m, σ²))] with m = x'β + αt."""
    m = np.asarray(theta.mean(x, t))
    c = (tau - m) / theta.sigma
    w = tau + theta.sigma * (norm_pdf(c) - c * ndtr(-c))
    return _squeeze(np.maximum(w, tau))


def tobit_mean_zero(
    theta: ParamVector, x: ArrayLike, t: ArrayLike
) -> Union[float, np.ndarray]:
    """E[max(0, N(m, σ²))], the zero-censored Tobit mean."""
    return tobit_mean_tau(theta, x, t, 0.0)


def tobit_mean_gradient(
    theta: ParamVector, x: ArrayLike, t: ArrayLike, tau: float
) -> np.ndarray:
    """∇_θ of the Tobit mean in the flat layout (β..., α, [intercept], σ).

    ∂w/∂m = Φ(-c) and ∂w/∂σ = φ(c).
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    m = np.asarray(theta.mean(x, t))
    c = (tau - m) / theta.sigma
    dm = ndtr(-c)[..., None]
    x, t = np.broadcast_arrays(x, t[..., None])
    parts = [dm * x, dm * t[..., :1]]
    if theta.has_intercept:
        parts.append(dm)
    parts.append(norm_pdf(c)[..., None])
    return np.concatenate(parts, axis=-1)


def robust_welfare(
    w_raw: ArrayLike, spec: WelfareSpec, t: Optional[ArrayLike] = None
) -> Union[float, np.ndarray]:
    """w_R = λ·w + (1 - λ)·max(w - ε, y_ℓ(t))."""
    w = np.asarray(w_raw, dtype=float)
    floor = spec.floor_for(t)
    robust = spec.lam * w + (1.0 - spec.lam) * np.maximum(w - spec.eps_robust, floor)
    return _squeeze(np.asarray(robust))


def arm_welfare(
    theta: ParamVector, x: ArrayLike, t: ArrayLike, spec: WelfareSpec
) -> Union[float, np.ndarray]:
    """w_R(θ, x, t) with the Tobit mean censored at spec.tau."""
    return robust_welfare(tobit_mean_tau(theta, x, t, spec.tau), spec, t)


def welfare_contrast(
    theta: ParamVector, x: ArrayLike, spec: WelfareSpec
) -> Union[float, np.ndarray]:
    """w_R(θ, x, 1) - w_R(θ, x, 0)."""
    treated = np.asarray(arm_welfare(theta, x, 1.0, spec))
    control = np.asarray(arm_welfare(theta, x, 0.0, spec))
    return _squeeze(treated - control)


def directional_derivative_wr(
    theta: ParamVector,
    x: ArrayLike,
    t: ArrayLike,
    h: ArrayLike,
    spec: WelfareSpec,
) -> Union[float, np.ndarray]:
    """One-sided derivative of w_R(θ, x, t) in direction h.

    The max term contributes ∇w·h above the kink, max(∇w·h, 0) at it and nothing
    below it.
    """
    h = np.asarray(h, dtype=float)
    if h.shape[-1] != theta.k:
        raise ValueError(f"Direction has {h.shape[-1]} entries, expected {theta.k}")
    w = np.asarray(tobit_mean_tau(theta, x, t, spec.tau))
    slope = np.sum(tobit_mean_gradient(theta, x, t, spec.tau) * h, axis=-1)
    excess = w - spec.eps_robust - spec.floor_for(t)

    max_term = np.where(
        excess > KINK_TOLERANCE,
        slope,
        np.where(np.abs(excess) <= KINK_TOLERANCE, np.maximum(slope, 0.0), 0.0),
    )
    return _squeeze(spec.lam * slope + (1.0 - spec.lam) * max_term)


def welfare_matrix(
    theta: ParamVector,
    coordinates: np.ndarray,
    levels: ArrayLike,
    spec: WelfareSpec,
) -> np.ndarray:
    """The bins × levels table of w_R(θ, x, t)."""
    x = np.asarray(coordinates, dtype=float)[:, None, :]
    t = np.asarray(levels, dtype=float).ravel()[None, :]
    return np.asarray(arm_welfare(theta, x, t, spec)).reshape(x.shape[0], t.shape[1])


def average_welfare_matrix(
    draws: np.ndarray,
    coordinates: np.ndarray,
    levels: ArrayLike,
    spec: WelfareSpec,
    intercept: bool = False,
) -> np.ndarray:
    """L⁻¹ Σ_ℓ w_R(θ_ℓ, x, t) over an (L, k) array of parameter draws."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    x = np.asarray(coordinates, dtype=float)
    t = np.asarray(levels, dtype=float).ravel()
    d = x.shape[1]

    beta, alpha, sigma = draws[:, :d], draws[:, d], draws[:, -1]
    m = (beta @ x.T)[:, :, None] + alpha[:, None, None] * t[None, None, :]
    if intercept:
        m = m + draws[:, d + 1][:, None, None]
    s = sigma[:, None, None]
    c = (spec.tau - m) / s
    w = np.maximum(spec.tau + s * (norm_pdf(c) - c * ndtr(-c)), spec.tau)

    floor = spec.floor_for(t)
    robust = spec.lam * w + (1.0 - spec.lam) * np.maximum(w - spec.eps_robust, floor)
    return robust.mean(axis=0)
