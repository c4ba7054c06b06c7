"""Benchmark missingness: MCAR, MAR, and MNAR mask generation.

All three mechanisms share the same shape: a per-cell missingness
probability matrix ``pi`` is built, then the mask is drawn as
``M = (U >= pi)`` with one uniform draw per cell. Probabilities:

* MCAR: ``pi = rate`` everywhere in the column.
* MAR: the first feature is MCAR; feature ``i`` weights rows by a softmax
  over ``sum_{j<i} (w_j * D_kj if dep_j else b_j)``, so which cells go
  missing depends on *other*, observed features. ``w``, ``b`` uniform in
  [0, 1) and ``dep`` fair coin flips, drawn once per dataset.
* MNAR: feature ``i`` weights rows by a softmax over ``-w_i * D_ki``:
  larger values are more likely to stay observed, so missingness depends
  on the value itself.

Row weights are ``n * softmax``; multiplied by the column rate they can
exceed 1 on skewed data, in which case the column is clipped to [0, 1]
with a compensating rescale (bisection on a scalar multiplier) so the
post-clip column mean still equals the nominal rate — plain clipping
would silently drag the realized rate below nominal at high rates. The
count of clipped cells is logged. MAR/MNAR read a min-max-scaled copy of
the data and require it fully observed.

When the drawn parameters are degenerate (all ``dep_j`` zero for MAR, or
``w_i = 0`` for MNAR) the exponent is constant, every row weight is
exactly 1.0, and the mechanism reproduces MCAR bitwise given the same
seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

_log = logging.getLogger(__name__)

MECHANISMS = ("mcar", "mar", "mnar")


@dataclass
class MissSpec:
    """Everything drawn once per generated mask, for reproducibility."""

    mechanism: str
    rates: np.ndarray
    seed: int
    mar_weights: np.ndarray | None = None
    mar_offsets: np.ndarray | None = None
    mar_depends: np.ndarray | None = None
    mnar_weights: np.ndarray | None = None

    def to_json(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "mechanism": self.mechanism,
            "rates": arr(self.rates),
            "seed": self.seed,
            "mar_weights": arr(self.mar_weights),
            "mar_offsets": arr(self.mar_offsets),
            "mar_depends": arr(self.mar_depends),
            "mnar_weights": arr(self.mnar_weights),
        }

    @classmethod
    def from_json(cls, data: dict) -> "MissSpec":
        def arr(v, dtype=np.float64):
            return None if v is None else np.asarray(v, dtype=dtype)

        try:
            return cls(
                mechanism=str(data["mechanism"]),
                rates=np.asarray(data["rates"], dtype=np.float64),
                seed=int(data["seed"]),
                mar_weights=arr(data.get("mar_weights")),
                mar_offsets=arr(data.get("mar_offsets")),
                mar_depends=arr(data.get("mar_depends"), np.int8),
                mnar_weights=arr(data.get("mnar_weights")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed missingness spec: {exc}") from exc

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


def _as_rates(rates, m: int) -> np.ndarray:
    arr = np.asarray(rates, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(m, float(arr))
    if arr.shape != (m,):
        raise ConfigError(f"rates must be a scalar or length-{m}, got shape {arr.shape}")
    if ((arr < 0) | (arr > 1)).any():
        raise ConfigError("missingness rates must lie in [0, 1]")
    return arr


def _scaled_full(D: np.ndarray) -> np.ndarray:
    """Min-max scale each column of a fully observed matrix to [0, 1]."""
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2:
        raise DataError(f"data must be a matrix, got shape {D.shape}")
    if not np.isfinite(D).all():
        raise DataError("MAR/MNAR generation requires fully observed, finite data")
    lo = D.min(axis=0)
    span = D.max(axis=0) - lo
    out = np.zeros_like(D)
    nz = span > 0
    out[:, nz] = (D[:, nz] - lo[nz]) / span[nz]
    return out


def _row_weights(scores: np.ndarray) -> np.ndarray:
    """n * softmax(scores); exactly 1.0 per row for a constant score vector."""
    n = scores.shape[0]
    z = np.exp(scores - scores.max())
    return (n * z) / z.sum()


def _bernoulli_mask(pi: np.ndarray, u: np.ndarray) -> np.ndarray:
    return (u >= pi).astype(np.uint8)


def _calibrate_clip(col: np.ndarray, rate: float) -> tuple[np.ndarray, int]:
    """Clip a probability column to [0, 1] without losing mean mass.

    The raw column averages exactly ``rate`` (row weights average to 1), but
    entries above 1 must be clipped, which lowers the realized mean. Scaling
    the raw column by s >= 1 before the clip restores the mean: the post-clip
    mean is continuous and nondecreasing in s with limit 1 (every weight is
    strictly positive), so bisection finds s to machine precision. Columns
    that never clip are returned untouched, bit for bit.
    """
    clipped = int((col > 1.0).sum())
    if clipped == 0:
        return col, 0
    lo, hi = 1.0, 2.0
    while np.clip(hi * col, 0.0, 1.0).mean() < rate:
        hi *= 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if np.clip(mid * col, 0.0, 1.0).mean() < rate:
            lo = mid
        else:
            hi = mid
    return np.clip(hi * col, 0.0, 1.0), clipped


def mar_missing_probs(D: np.ndarray, spec: MissSpec) -> np.ndarray:
    """The per-cell missingness probability matrix the MAR mechanism uses."""
    scaled = _scaled_full(D)
    n, m = scaled.shape
    pi = np.empty((n, m))
    clipped = 0
    for i in range(m):
        if i == 0:
            pi[:, 0] = spec.rates[0]
            continue
        scores = np.zeros(n)
        for j in range(i):
            if spec.mar_depends[j]:
                scores += spec.mar_weights[j] * scaled[:, j]
            else:
                scores += spec.mar_offsets[j]
        col = spec.rates[i] * _row_weights(scores)
        pi[:, i], n_clip = _calibrate_clip(col, spec.rates[i])
        clipped += n_clip
    if clipped:
        _log.info("MAR probabilities clipped to [0, 1] for %d cells", clipped)
    return pi


def mnar_missing_probs(D: np.ndarray, spec: MissSpec) -> np.ndarray:
    """The per-cell missingness probability matrix the MNAR mechanism uses."""
    scaled = _scaled_full(D)
    n, m = scaled.shape
    pi = np.empty((n, m))
    clipped = 0
    for i in range(m):
        col = spec.rates[i] * _row_weights(-spec.mnar_weights[i] * scaled[:, i])
        pi[:, i], n_clip = _calibrate_clip(col, spec.rates[i])
        clipped += n_clip
    if clipped:
        _log.info("MNAR probabilities clipped to [0, 1] for %d cells", clipped)
    return pi


def gen_mcar(n: int, m: int, rate, seed: int) -> tuple[np.ndarray, MissSpec]:
    """MCAR mask: every cell observed independently with probability 1 - rate."""
    rates = _as_rates(rate, m)
    spec = MissSpec(mechanism="mcar", rates=rates, seed=int(seed))
    rng = np.random.Generator(np.random.PCG64(seed))
    u = rng.random((n, m))
    return _bernoulli_mask(np.broadcast_to(rates, (n, m)), u), spec


def gen_mar(D: np.ndarray, rate, seed: int, spec: MissSpec | None = None) -> tuple[np.ndarray, MissSpec]:
    """MAR mask over fully observed data; see the module docstring."""
    D = np.asarray(D, dtype=np.float64)
    n, m = D.shape
    rates = _as_rates(rate, m)
    rng = np.random.Generator(np.random.PCG64(seed))
    # Parameter draws happen unconditionally so the uniform stream below is
    # identical whether the spec is fresh or replayed from a sidecar file:
    # gen_mar(D, rate, seed, spec=saved) reproduces the original mask bitwise.
    drawn = MissSpec(
        mechanism="mar",
        rates=rates,
        seed=int(seed),
        mar_weights=rng.random(m),
        mar_offsets=rng.random(m),
        mar_depends=(rng.random(m) < 0.5).astype(np.int8),
    )
    if spec is None:
        spec = drawn
    elif spec.mechanism != "mar" or spec.mar_weights is None:
        raise DataError("gen_mar needs a spec from the MAR mechanism")
    pi = mar_missing_probs(D, spec)
    u = rng.random((n, m))
    return _bernoulli_mask(pi, u), spec


def gen_mnar(D: np.ndarray, rate, seed: int, spec: MissSpec | None = None) -> tuple[np.ndarray, MissSpec]:
    """MNAR mask over fully observed data; see the module docstring."""
    D = np.asarray(D, dtype=np.float64)
    n, m = D.shape
    rates = _as_rates(rate, m)
    rng = np.random.Generator(np.random.PCG64(seed))
    # Unconditional draw keeps the uniform stream replay-stable (see gen_mar).
    drawn = MissSpec(mechanism="mnar", rates=rates, seed=int(seed), mnar_weights=rng.random(m))
    if spec is None:
        spec = drawn
    elif spec.mechanism != "mnar" or spec.mnar_weights is None:
        raise DataError("gen_mnar needs a spec from the MNAR mechanism")
    pi = mnar_missing_probs(D, spec)
    u = rng.random((n, m))
    return _bernoulli_mask(pi, u), spec


def connectivity_problems(mask: np.ndarray) -> list[dict]:
    """Rows/columns with no observed cell, as repair descriptors."""
    mask = np.asarray(mask)
    problems = []
    for i in np.flatnonzero(mask.sum(axis=1) == 0):
        problems.append({"kind": "row", "index": int(i)})
    for j in np.flatnonzero(mask.sum(axis=0) == 0):
        problems.append({"kind": "column", "index": int(j)})
    return problems


def connectivity_guard(mask: np.ndarray, seed: int = 0) -> tuple[np.ndarray, list[dict]]:
    """Ensure every row and column keeps at least one observed cell.

    Each offending row (then column) gets one uniformly chosen cell
    revealed. Returns the repaired mask and the list of repairs.
    """
    out = np.array(mask, dtype=np.uint8, copy=True)
    n, m = out.shape
    rng = np.random.Generator(np.random.PCG64(seed))
    repairs = []
    for i in np.flatnonzero(out.sum(axis=1) == 0):
        j = int(rng.integers(0, m))
        out[i, j] = 1
        repairs.append({"kind": "row", "index": int(i), "revealed": [int(i), j]})
    for j in np.flatnonzero(out.sum(axis=0) == 0):
        i = int(rng.integers(0, n))
        out[i, j] = 1
        repairs.append({"kind": "column", "index": int(j), "revealed": [i, int(j)]})
    if repairs:
        _log.info("connectivity guard revealed %d cells", len(repairs))
    return out, repairs
