"""Output perturbation mechanisms for aggregate release.

Five mechanisms over per-ROI count time-series:

  LPA_user   Laplace noise scaled to the max per-user cell count (user-level)
  LPA_event  Laplace noise with scale 1/epsilon (event-level baseline)
  GSM        Gaussian noise at the (epsilon, delta) bound
  FPA        keep the first kappa DFT coefficients, Laplace-noise them,
             zero-pad, invert
  EFPAG      DCT instead of DFT, kappa chosen per row by the exponential
             mechanism against an estimated reconstruction error, Gaussian
             noise on the kept coefficients

Mechanisms apply per ROI row independently; the sensitivity is global over
the whole matrix. Rows use row-indexed sub-seeds, so perturbing rows in
parallel or serially yields identical output. Noise whose scale falls below
1e-12 is skipped entirely (the epsilon -> infinity limit).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.fft

from .core import Sensitivity
from .seeds import rng_for

__all__ = [
    "MechanismError",
    "MECHANISM_KINDS",
    "MechanismConfig",
    "NoisySeries",
    "laplace_from_uniform",
    "laplace_sample",
    "gaussian_sample",
    "gsm_sigma",
    "dft",
    "idft",
    "dct",
    "idct",
    "lpa_user",
    "lpa_event",
    "gaussian_mech",
    "fpa",
    "efpag",
    "perturb",
    "exp_mech_probs",
    "efpag_candidate_scores",
    "save_noisy_csv",
]

MECHANISM_KINDS = ("LPA_user", "LPA_event", "GSM", "FPA", "EFPAG")

_SCALE_FLOOR = 1e-12


class MechanismError(ValueError):
    pass


@dataclass(frozen=True)
class MechanismConfig:
    kind: str
    epsilon: float
    sensitivity: Sensitivity
    delta: float = 0.0
    kappa: int | None = None
    seed: int | None = None
    efpag_split: float = 0.1

    def __post_init__(self):
        if self.kind not in MECHANISM_KINDS:
            raise MechanismError(f"unknown mechanism kind: {self.kind}")
        if not (self.epsilon > 0):
            raise MechanismError("epsilon must be positive")
        if not (0.0 <= self.delta < 1.0):
            raise MechanismError("delta must be in [0, 1)")
        if self.kind in ("GSM", "EFPAG") and self.delta == 0.0:
            raise MechanismError(f"{self.kind} requires delta > 0")
        if self.kind == "FPA":
            if self.kappa is None or self.kappa < 1:
                raise MechanismError("FPA requires a positive kappa")
        if self.kappa is not None and self.kappa < 1:
            raise MechanismError("kappa must be positive")
        if not (0.0 < self.efpag_split < 1.0):
            raise MechanismError("efpag_split must be in (0, 1)")


@dataclass(frozen=True)
class NoisySeries:
    """Perturbed |S| x |T_w| matrix plus the config that produced it."""

    values: np.ndarray
    provenance: MechanismConfig

    def __post_init__(self):
        if not np.isfinite(self.values).all():
            raise MechanismError("non-finite noisy values")
        self.values.setflags(write=False)


def laplace_from_uniform(u, scale: float):
    """Inverse-CDF map from u in (-1/2, 1/2) to Laplace(0, scale)."""
    u = np.asarray(u, dtype=np.float64)
    inner = np.maximum(1.0 - 2.0 * np.abs(u), np.finfo(np.float64).tiny)
    return -scale * np.sign(u) * np.log(inner)


def laplace_sample(scale: float, seed=None, size=None, rng=None):
    """Laplace(0, scale) draws via the inverse CDF."""
    if scale <= 0:
        raise MechanismError("scale must be positive")
    if rng is None:
        rng = np.random.default_rng(seed)
    u = rng.random(size) - 0.5
    x = laplace_from_uniform(u, scale)
    return float(x) if size is None else x


def gaussian_sample(sigma: float, seed=None, size=None, rng=None):
    """Normal(0, sigma^2) draws via the Box-Muller polar transform of two
    uniforms (no rejection, so the stream is reproducible sample-for-sample)."""
    if sigma <= 0:
        raise MechanismError("sigma must be positive")
    if rng is None:
        rng = np.random.default_rng(seed)
    n = 1 if size is None else int(np.prod(size))
    pairs = (n + 1) // 2
    u1 = rng.random(pairs)
    u2 = rng.random(pairs)
    r = np.sqrt(-2.0 * np.log(1.0 - u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    z = sigma * z[:n]
    if size is None:
        return float(z[0])
    return z.reshape(size)


def gsm_sigma(epsilon: float, delta: float, l2: float) -> float:
    """Gaussian mechanism noise level at the bound (equality)."""
    if delta <= 0:
        raise MechanismError("delta must be positive")
    return math.sqrt(2.0 * math.log(2.0 / delta)) / epsilon * l2


# Spectral primitives. Forward DFT is unnormalized, the inverse carries 1/n;
# DCT is the orthonormal type-II / type-III pair.

def dft(row) -> np.ndarray:
    return np.fft.fft(np.asarray(row, dtype=np.float64))


def idft(coefficients) -> np.ndarray:
    return np.fft.ifft(np.asarray(coefficients, dtype=np.complex128))


def dct(row) -> np.ndarray:
    return scipy.fft.dct(np.asarray(row, dtype=np.float64), type=2, norm="ortho")


def idct(coefficients) -> np.ndarray:
    return scipy.fft.idct(np.asarray(coefficients, dtype=np.float64), type=2, norm="ortho")


def _materialized_seed(cfg: MechanismConfig) -> MechanismConfig:
    if cfg.seed is not None:
        return cfg
    fresh = int(np.random.SeedSequence().entropy) & ((1 << 64) - 1)
    return replace(cfg, seed=fresh)


def _expect(cfg: MechanismConfig, kind: str) -> MechanismConfig:
    if cfg.kind != kind:
        raise MechanismError(f"config kind {cfg.kind} does not match {kind}")
    return _materialized_seed(cfg)


def _series_values(series) -> np.ndarray:
    values = np.asarray(getattr(series, "values", series), dtype=np.float64)
    if values.ndim == 1:
        values = values[None, :]
    return values


def _row_rng(cfg: MechanismConfig, row: int) -> np.random.Generator:
    return rng_for(cfg.seed, "row", row)


def _additive_noise(series, cfg: MechanismConfig, scale: float, sampler) -> NoisySeries:
    values = _series_values(series)
    out = np.array(values)
    if scale >= _SCALE_FLOOR:
        for i in range(values.shape[0]):
            out[i] += sampler(scale, _row_rng(cfg, i), values.shape[1])
    return NoisySeries(values=out, provenance=cfg)


def lpa_user(series, cfg: MechanismConfig) -> NoisySeries:
    """Each cell += Laplace(l1 sensitivity / epsilon)."""
    cfg = _expect(cfg, "LPA_user")
    scale = cfg.sensitivity.l1 / cfg.epsilon
    return _additive_noise(
        series, cfg, scale, lambda s, rng, n: laplace_sample(s, rng=rng, size=n)
    )


def lpa_event(series, cfg: MechanismConfig) -> NoisySeries:
    """Each cell += Laplace(1 / epsilon), the event-level baseline."""
    cfg = _expect(cfg, "LPA_event")
    scale = 1.0 / cfg.epsilon
    return _additive_noise(
        series, cfg, scale, lambda s, rng, n: laplace_sample(s, rng=rng, size=n)
    )


def gaussian_mech(series, cfg: MechanismConfig) -> NoisySeries:
    """Each cell += Normal(0, sigma^2) with sigma at the (epsilon, delta) bound."""
    cfg = _expect(cfg, "GSM")
    sigma = gsm_sigma(cfg.epsilon, cfg.delta, cfg.sensitivity.l2)
    return _additive_noise(
        series, cfg, sigma, lambda s, rng, n: gaussian_sample(s, rng=rng, size=n)
    )


def fpa(series, cfg: MechanismConfig) -> NoisySeries:
    """Per row: DFT, keep the first kappa coefficients, add Laplace noise of
    scale sqrt(kappa) * l2 / epsilon to the real and imaginary part of each,
    zero-pad, inverse DFT, keep the real part."""
    cfg = _expect(cfg, "FPA")
    values = _series_values(series)
    n = values.shape[1]
    if cfg.kappa > n:
        raise MechanismError(f"kappa {cfg.kappa} exceeds window length {n}")
    kappa = cfg.kappa
    lam = math.sqrt(kappa) * cfg.sensitivity.l2 / cfg.epsilon
    out = np.empty_like(values)
    for i in range(values.shape[0]):
        coef = dft(values[i])
        kept = coef[:kappa].copy()
        if lam >= _SCALE_FLOOR:
            rng = _row_rng(cfg, i)
            noise = laplace_sample(lam, rng=rng, size=2 * kappa)
            kept += noise[:kappa] + 1j * noise[kappa:]
        padded = np.zeros(n, dtype=np.complex128)
        padded[:kappa] = kept
        out[i] = idft(padded).real
    return NoisySeries(values=out, provenance=cfg)


def exp_mech_probs(scores, epsilon: float, score_sensitivity: float) -> np.ndarray:
    """Exponential-mechanism selection probabilities, stabilized by
    subtracting the max score before exponentiation."""
    if score_sensitivity <= 0:
        raise MechanismError("score sensitivity must be positive")
    scores = np.asarray(scores, dtype=np.float64)
    w = epsilon * scores / (2.0 * score_sensitivity)
    w = w - w.max()
    p = np.exp(w)
    return p / p.sum()


def efpag_candidate_scores(row, cap: int, sigma: float):
    """Candidate kept-coefficient counts 1..cap and their scores: minus the
    estimated root-sum-squared reconstruction error (dropped DCT energy plus
    expected noise energy)."""
    coef = dct(row)
    n = coef.size
    cap = min(cap, n)
    sq = coef**2
    # tail[k] = energy dropped when keeping the first k coefficients
    tail = np.concatenate([np.cumsum(sq[::-1])[::-1], [0.0]])
    kappas = np.arange(1, cap + 1)
    est = np.sqrt(tail[kappas] + kappas * sigma**2)
    return kappas, -est


def efpag(series, cfg: MechanismConfig) -> NoisySeries:
    """Per row: pick the kept-coefficient count kappa with the exponential
    mechanism (budget epsilon_1), Gaussian-noise the kept orthonormal DCT
    coefficients at (epsilon_2, delta), zero-pad, inverse DCT."""
    cfg = _expect(cfg, "EFPAG")
    values = _series_values(series)
    n = values.shape[1]
    eps1 = cfg.efpag_split * cfg.epsilon
    eps2 = (1.0 - cfg.efpag_split) * cfg.epsilon
    sigma = gsm_sigma(eps2, cfg.delta, cfg.sensitivity.l2)
    cap = min(cfg.kappa, n) if cfg.kappa is not None else n
    out = np.empty_like(values)
    for i in range(values.shape[0]):
        rng = _row_rng(cfg, i)
        coef = dct(values[i])
        kappas, scores = efpag_candidate_scores(values[i], cap, sigma)
        probs = exp_mech_probs(scores, eps1, cfg.sensitivity.l2)
        pick = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
        kappa = int(kappas[min(pick, kappas.size - 1)])
        kept = coef[:kappa].copy()
        if sigma >= _SCALE_FLOOR:
            kept += gaussian_sample(sigma, rng=rng, size=kappa)
        padded = np.zeros(n)
        padded[:kappa] = kept
        out[i] = idct(padded)
    return NoisySeries(values=out, provenance=cfg)


_MECHANISMS = {
    "LPA_user": lpa_user,
    "LPA_event": lpa_event,
    "GSM": gaussian_mech,
    "FPA": fpa,
    "EFPAG": efpag,
}


def perturb(series, cfg: MechanismConfig) -> NoisySeries:
    """Dispatch to the configured mechanism.

    A config without a seed gets a fresh one drawn from OS entropy; the
    materialized seed is recorded in the output's provenance either way.
    """
    if cfg.kind not in _MECHANISMS:
        raise MechanismError(f"unknown mechanism kind: {cfg.kind}")
    cfg = _materialized_seed(cfg)
    return _MECHANISMS[cfg.kind](series, cfg)


def save_noisy_csv(series: NoisySeries, path) -> None:
    """Panel-adjacent CSV: one `roi,slot,value` line per cell."""
    values = series.values
    cfg = series.provenance
    with open(path, "w") as fh:
        fh.write(
            f"#noisy v1 rois={values.shape[0]} slots={values.shape[1]} "
            f"kind={cfg.kind} epsilon={cfg.epsilon}\n"
        )
        fh.write("roi,slot,value\n")
        for roi in range(values.shape[0]):
            for slot in range(values.shape[1]):
                fh.write(f"{roi},{slot},{float(values[roi, slot])!r}\n")
