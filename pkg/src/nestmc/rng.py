"""Splittable counter-based random streams and primitive distributions.

The generator is Threefry2x64 (20 rounds): a keyed bijection from a 128-bit
counter to 128 random bits.  A stream is a (key, counter) pair; splitting a
stream derives a child key from (parent key, child index) without touching
the parent's counter, so every node in a split tree is a pure function of
``(base_seed, stream_path)``.  Keys and counters are held as numpy arrays,
which lets a whole batch of sibling streams be split and sampled at once.

Reproducibility is guaranteed within one build of this package only; the
floating-point transforms applied on top of the raw bits may differ across
library versions.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ParameterDomainError

# The default TBB probe warns on older TBB builds; OpenMP is always present
# on the supported platforms and behaves identically for these kernels.
nb.config.THREADING_LAYER = "omp"

__all__ = [
    "RandomStream",
    "DistributionSpec",
    "make_stream",
    "sample",
    "sample_batch",
    "log_density",
    "normal_cdf",
    "uniform",
    "normal",
    "gamma",
    "beta",
    "rayleigh",
    "bernoulli",
    "categorical",
    "parse_distribution",
    "format_distribution",
]

_PARITY = np.uint64(0x1BD11BDAA9FC1A22)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)

# Counter tags keep the draw space and the key-derivation space disjoint.
_TAG_DRAW = np.uint64(0)
_TAG_CHILD = np.uint64(1) << np.uint64(63)
_TAG_ROOT = (np.uint64(1) << np.uint64(63)) + np.uint64(1)

_U53 = 2.0**-53
_HALF_ULP = 2.0**-54


@nb.njit(cache=True, parallel=True)
def _threefry_kernel(k0, k1, c0, c1, x0out, x1out):  # pragma: no cover - jitted
    rot = np.array([16, 42, 12, 31, 16, 32, 24, 21], dtype=np.uint64)
    n = k0.shape[0]
    for i in nb.prange(n):
        ks0 = k0[i]
        ks1 = k1[i]
        ks2 = ks0 ^ ks1 ^ _PARITY
        x0 = c0[i] + ks0
        x1 = c1[i] + ks1
        for r in range(20):
            x0 = x0 + x1
            rr = rot[r % 8]
            x1 = ((x1 << rr) | (x1 >> (np.uint64(64) - rr))) ^ x0
            if r % 4 == 3:
                s = r // 4 + 1
                m = s % 3
                if m == 0:
                    x0 += ks0
                elif m == 1:
                    x0 += ks1
                else:
                    x0 += ks2
                m = (s + 1) % 3
                if m == 0:
                    x1 += ks0
                elif m == 1:
                    x1 += ks1
                else:
                    x1 += ks2
                x1 += np.uint64(s)
        x0out[i] = x0
        x1out[i] = x1


def _threefry(k0, k1, c0, c1):
    """Vectorized Threefry2x64-20 block function on uint64 inputs."""
    k0, k1, c0, c1 = np.broadcast_arrays(k0, k1, c0, c1)
    shape = k0.shape
    k0 = np.ascontiguousarray(k0, dtype=np.uint64).ravel()
    k1 = np.ascontiguousarray(k1, dtype=np.uint64).ravel()
    c0 = np.ascontiguousarray(c0, dtype=np.uint64).ravel()
    c1 = np.ascontiguousarray(c1, dtype=np.uint64).ravel()
    x0 = np.empty_like(k0)
    x1 = np.empty_like(k1)
    _threefry_kernel(k0, k1, c0, c1, x0, x1)
    return x0.reshape(shape), x1.reshape(shape)


def _to_unit(words: np.ndarray) -> np.ndarray:
    """Map uint64 words to doubles in the open interval (0, 1)."""
    return (words >> np.uint64(11)).astype(np.float64) * _U53 + _HALF_ULP


@dataclass
class RandomStream:
    """A splittable deterministic random stream (possibly a batch of them).

    ``base_seed`` and ``path`` identify how the stream was derived from its
    root; ``shape`` is the batch shape (scalar streams have shape ``()``).
    Drawing advances the per-element counters in place; splitting does not
    touch the parent, so child output never depends on how much the parent
    has already drawn.  A stream is single-owner: do not share one instance
    between concurrent workers (children are safe to hand out).
    """

    base_seed: int
    path: tuple[int, ...]
    _k0: np.ndarray = field(repr=False, default=None)
    _k1: np.ndarray = field(repr=False, default=None)
    _ctr: np.ndarray = field(repr=False, default=None)

    @property
    def shape(self) -> tuple[int, ...]:
        return self._k0.shape

    @property
    def size(self) -> int:
        return int(self._k0.size)

    # -- splitting -----------------------------------------------------------

    def child(self, index: int) -> "RandomStream":
        """The child stream at ``index``; equals extending the split path."""
        idx = np.broadcast_to(np.uint64(int(index)), self.shape)
        k0, k1 = _threefry(self._k0, self._k1, idx, _TAG_CHILD)
        return RandomStream(
            self.base_seed,
            self.path + (int(index),),
            np.asarray(k0),
            np.asarray(k1),
            np.zeros(self.shape, dtype=np.uint64),
        )

    def child_block(self, count: int) -> "RandomStream":
        """Children ``0..count-1`` of every element, as one batch stream.

        Lane ``i`` of the result is bit-identical to ``self.child(i)``.
        """
        idx = np.arange(count, dtype=np.uint64)
        c0 = np.broadcast_to(idx, self.shape + (count,))
        k0, k1 = _threefry(self._k0[..., None], self._k1[..., None], c0, _TAG_CHILD)
        return RandomStream(
            self.base_seed,
            self.path,
            np.asarray(k0),
            np.asarray(k1),
            np.zeros(self.shape + (count,), dtype=np.uint64),
        )

    # -- raw draws -----------------------------------------------------------

    def _blocks(self, n: int | None) -> tuple[np.ndarray, np.ndarray]:
        """The next ``n`` 128-bit blocks per element (``None`` means one)."""
        m = 1 if n is None else int(n)
        offs = np.arange(m, dtype=np.uint64)
        c0 = self._ctr[..., None] + offs
        x0, x1 = _threefry(self._k0[..., None], self._k1[..., None], c0, _TAG_DRAW)
        self._ctr = self._ctr + np.uint64(m)
        if n is None:
            return x0[..., 0], x1[..., 0]
        return x0, x1

    def _indexed_blocks(self, flat_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """One block for the flat elements in ``flat_idx`` only.

        Counters of unselected elements do not advance, so per-element
        consumption is independent of how elements are batched together.
        """
        k0 = np.broadcast_to(self._k0, self.shape).reshape(-1)[flat_idx]
        k1 = np.broadcast_to(self._k1, self.shape).reshape(-1)[flat_idx]
        ctr = np.ascontiguousarray(self._ctr).reshape(-1)
        x0, x1 = _threefry(k0, k1, ctr[flat_idx], _TAG_DRAW)
        ctr[flat_idx] += np.uint64(1)
        self._ctr = ctr.reshape(self.shape)
        return x0, x1

    # -- distribution draws ----------------------------------------------------

    def uniforms(self, n: int | None = None) -> np.ndarray:
        """Uniform(0,1) draws of shape ``self.shape`` (or ``+ (n,)``)."""
        x0, _ = self._blocks(n)
        return _to_unit(x0)

    def normals(self, n: int | None = None) -> np.ndarray:
        return ndtri(self.uniforms(n))

    def rayleighs(self, scale, n: int | None = None) -> np.ndarray:
        # Inverse CDF: scale * sqrt(-2 ln u); u is strictly inside (0, 1).
        return np.asarray(scale, dtype=np.float64) * np.sqrt(-2.0 * np.log(self.uniforms(n)))

    def bernoullis(self, p, n: int | None = None) -> np.ndarray:
        return (self.uniforms(n) < np.asarray(p, dtype=np.float64)).astype(np.int64)

    def categoricals(self, probabilities, n: int | None = None) -> np.ndarray:
        probs = np.asarray(probabilities, dtype=np.float64)
        cdf = np.cumsum(probs, axis=-1)
        u = self.uniforms(n)
        idx = np.sum(u[..., None] >= cdf, axis=-1)
        return np.minimum(idx, probs.shape[-1] - 1).astype(np.int64)

    def gammas(self, shape_param, rate) -> np.ndarray:
        """One Gamma(shape, rate) draw per element, exact for any shape > 0.

        Marsaglia-Tsang squeeze for shape >= 1; smaller shapes are boosted
        through Gamma(shape+1) * U^(1/shape).  Every element scans its own
        candidate sequence, so values do not depend on batching.
        """
        alpha = np.broadcast_to(np.asarray(shape_param, dtype=np.float64), self.shape)
        rate_b = np.broadcast_to(np.asarray(rate, dtype=np.float64), self.shape)
        if np.any(alpha <= 0) or np.any(rate_b <= 0):
            raise ParameterDomainError("gamma requires shape > 0 and rate > 0")
        flat_alpha = alpha.reshape(-1)
        boost = flat_alpha < 1.0
        a = np.where(boost, flat_alpha + 1.0, flat_alpha)
        d = a - 1.0 / 3.0
        cc = 1.0 / np.sqrt(9.0 * d)

        size = flat_alpha.size
        out = np.empty(size, dtype=np.float64)
        # Boost uniform is consumed first wherever needed so that each
        # element's candidate layout is fixed up front.
        ub = np.ones(size, dtype=np.float64)
        bidx = np.flatnonzero(boost)
        if bidx.size:
            x0, _ = self._indexed_blocks(bidx)
            ub[bidx] = _to_unit(x0)

        pending = np.arange(size)
        guard = 0
        while pending.size:
            x0, x1 = self._indexed_blocks(pending)
            x = ndtri(_to_unit(x0))
            u = _to_unit(x1)
            dp = d[pending]
            v = (1.0 + cc[pending] * x) ** 3
            pos = v > 0.0
            with np.errstate(invalid="ignore", divide="ignore"):
                accept = pos & (np.log(u) < 0.5 * x * x + dp - dp * v + dp * np.log(np.where(pos, v, 1.0)))
            out[pending[accept]] = dp[accept] * v[accept]
            pending = pending[~accept]
            guard += 1
            if guard > 1000:  # acceptance is ~96% per round; this cannot trip
                raise RuntimeError("gamma rejection failed to terminate")
        if bidx.size:
            out[bidx] *= ub[bidx] ** (1.0 / flat_alpha[bidx])
        return (out / rate_b.reshape(-1)).reshape(self.shape)

    def betas(self, a, b) -> np.ndarray:
        """One Beta(a, b) draw per element, built from two gamma draws."""
        x = self.gammas(a, 1.0)
        y = self.gammas(b, 1.0)
        return x / (x + y)

    def copy(self) -> "RandomStream":
        return RandomStream(self.base_seed, self.path, self._k0.copy(), self._k1.copy(), self._ctr.copy())


def make_stream(base_seed: int, stream_path=()) -> RandomStream:
    """Create the stream identified by ``(base_seed, stream_path)``."""
    seed = np.uint64(int(base_seed) & 0xFFFFFFFFFFFFFFFF)
    k0, k1 = _threefry(seed, _GOLDEN, np.uint64(0), _TAG_ROOT)
    stream = RandomStream(int(base_seed), (), np.asarray(k0), np.asarray(k1), np.zeros((), dtype=np.uint64))
    for p in stream_path:
        stream = stream.child(int(p))
    # Record the requested identity (child() already appended the indices).
    return stream


# ---------------------------------------------------------------------------
# Distribution specifications
# ---------------------------------------------------------------------------

_KINDS = ("uniform", "normal", "gamma", "beta", "rayleigh", "bernoulli", "categorical")


@dataclass(frozen=True)
class DistributionSpec:
    """A parameterized primitive distribution with sampling and log-density.

    ``kind`` is one of uniform(a,b), normal(mean,std), gamma(shape,rate),
    beta(a,b), rayleigh(scale), bernoulli(p), categorical(p1,...,pC).
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ParameterDomainError(f"unknown distribution kind {self.kind!r}")
        p = tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", p)
        if not all(math.isfinite(v) for v in p):
            raise ParameterDomainError(f"{self.kind} parameters must be finite: {p}")
        if self.kind == "uniform":
            if len(p) != 2 or not p[0] < p[1]:
                raise ParameterDomainError(f"uniform requires a < b, got {p}")
        elif self.kind == "normal":
            if len(p) != 2 or not p[1] > 0:
                raise ParameterDomainError(f"normal requires std > 0, got {p}")
        elif self.kind == "gamma":
            if len(p) != 2 or not (p[0] > 0 and p[1] > 0):
                raise ParameterDomainError(f"gamma requires shape > 0 and rate > 0, got {p}")
        elif self.kind == "beta":
            if len(p) != 2 or not (p[0] > 0 and p[1] > 0):
                raise ParameterDomainError(f"beta requires a > 0 and b > 0, got {p}")
        elif self.kind == "rayleigh":
            if len(p) != 1 or not p[0] > 0:
                raise ParameterDomainError(f"rayleigh requires scale > 0, got {p}")
        elif self.kind == "bernoulli":
            if len(p) != 1 or not 0.0 <= p[0] <= 1.0:
                raise ParameterDomainError(f"bernoulli requires 0 <= p <= 1, got {p}")
        elif self.kind == "categorical":
            if len(p) < 1 or any(v < 0 for v in p):
                raise ParameterDomainError("categorical probabilities must be nonnegative")
            if abs(sum(p) - 1.0) > 1e-12:
                raise ParameterDomainError(f"categorical probabilities must sum to 1, got sum {sum(p)!r}")

    @property
    def is_discrete(self) -> bool:
        return self.kind in ("bernoulli", "categorical")

    def support_size(self) -> int:
        if self.kind == "bernoulli":
            return 2
        if self.kind == "categorical":
            return len(self.params)
        raise ParameterDomainError(f"{self.kind} has no finite support")

    def outcome_probabilities(self) -> tuple[float, ...]:
        if self.kind == "bernoulli":
            return (1.0 - self.params[0], self.params[0])
        if self.kind == "categorical":
            return self.params
        raise ParameterDomainError(f"{self.kind} has no finite support")


def uniform(a: float, b: float) -> DistributionSpec:
    return DistributionSpec("uniform", (a, b))


def normal(mean: float, std: float) -> DistributionSpec:
    return DistributionSpec("normal", (mean, std))


def gamma(shape: float, rate: float) -> DistributionSpec:
    return DistributionSpec("gamma", (shape, rate))


def beta(a: float, b: float) -> DistributionSpec:
    return DistributionSpec("beta", (a, b))


def rayleigh(scale: float) -> DistributionSpec:
    return DistributionSpec("rayleigh", (scale,))


def bernoulli(p: float) -> DistributionSpec:
    return DistributionSpec("bernoulli", (p,))


def categorical(probabilities) -> DistributionSpec:
    return DistributionSpec("categorical", tuple(probabilities))


def sample_batch(dist: DistributionSpec, stream: RandomStream) -> np.ndarray:
    """One exact draw from ``dist`` per stream element."""
    p = dist.params
    if dist.kind == "uniform":
        return p[0] + (p[1] - p[0]) * stream.uniforms()
    if dist.kind == "normal":
        return p[0] + p[1] * stream.normals()
    if dist.kind == "gamma":
        return stream.gammas(p[0], p[1])
    if dist.kind == "beta":
        return stream.betas(p[0], p[1])
    if dist.kind == "rayleigh":
        return stream.rayleighs(p[0])
    if dist.kind == "bernoulli":
        return stream.bernoullis(p[0])
    if dist.kind == "categorical":
        return stream.categoricals(p)
    raise ParameterDomainError(f"unknown kind {dist.kind!r}")


def sample(dist: DistributionSpec, stream: RandomStream):
    """One exact draw from ``dist``, advancing the stream state.

    Returns a float for continuous kinds and an integer index for
    bernoulli/categorical.
    """
    value = sample_batch(dist, stream)
    if dist.is_discrete:
        return int(np.asarray(value).reshape(-1)[0]) if value.ndim else int(value)
    return float(np.asarray(value).reshape(-1)[0]) if value.ndim else float(value)


def log_density(dist: DistributionSpec, x) -> float | np.ndarray:
    """Natural-log density (or mass) of ``dist`` at ``x``.

    Points outside the support return -inf.
    """
    p = dist.params
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    with np.errstate(divide="ignore", invalid="ignore"):
        if dist.kind == "uniform":
            a, b = p
            out = np.where((arr >= a) & (arr <= b), -math.log(b - a), -np.inf)
        elif dist.kind == "normal":
            mean, std = p
            out = -0.5 * math.log(2.0 * math.pi * std * std) - (arr - mean) ** 2 / (2.0 * std * std)
        elif dist.kind == "gamma":
            k, r = p
            const = k * math.log(r) - math.lgamma(k)
            pos = arr > 0
            out = np.full(arr.shape, -np.inf)
            out[pos] = const + (k - 1.0) * np.log(arr[pos]) - r * arr[pos]
            if k == 1.0:
                out[arr == 0] = const
            elif k < 1.0:
                out[arr == 0] = np.inf
        elif dist.kind == "beta":
            a, b = p
            const = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
            inside = (arr > 0) & (arr < 1)
            out = np.full(arr.shape, -np.inf)
            out[inside] = const + (a - 1.0) * np.log(arr[inside]) + (b - 1.0) * np.log1p(-arr[inside])
            for edge, shp in ((0.0, a), (1.0, b)):
                at = arr == edge
                if np.any(at):
                    if shp < 1.0:
                        out[at] = np.inf
                    elif shp == 1.0:
                        out[at] = const
        elif dist.kind == "rayleigh":
            (scale,) = p
            pos = arr > 0
            out = np.full(arr.shape, -np.inf)
            out[pos] = np.log(arr[pos]) - 2.0 * math.log(scale) - arr[pos] ** 2 / (2.0 * scale * scale)
        elif dist.kind == "bernoulli":
            (pp,) = p
            out = np.full(arr.shape, -np.inf)
            out[arr == 1.0] = math.log(pp) if pp > 0 else -np.inf
            out[arr == 0.0] = math.log1p(-pp) if pp < 1 else -np.inf
        elif dist.kind == "categorical":
            probs = np.asarray(p)
            out = np.full(arr.shape, -np.inf)
            ints = np.rint(arr).astype(int)
            ok = (arr == ints) & (ints >= 0) & (ints < len(probs))
            vals = probs[ints[ok]]
            out[ok] = np.where(vals > 0, np.log(np.where(vals > 0, vals, 1.0)), -np.inf)
        else:  # pragma: no cover
            raise ParameterDomainError(f"unknown kind {dist.kind!r}")
    return float(out[0]) if scalar else out


def normal_cdf(x) -> float | np.ndarray:
    """Standard normal CDF, accurate to well below 1e-7 absolute error."""
    out = ndtr(np.asarray(x, dtype=np.float64))
    return float(out) if np.ndim(x) == 0 else out


# ---------------------------------------------------------------------------
# Canonical text form: kind(p1,p2,...)
# ---------------------------------------------------------------------------

_DIST_RE = re.compile(r"^\s*([a-z]+)\s*\(\s*([^()]*)\s*\)\s*$")


def format_distribution(dist: DistributionSpec) -> str:
    return f"{dist.kind}({','.join(repr(v) for v in dist.params)})"


def parse_distribution(text: str) -> DistributionSpec:
    """Parse the canonical text form, e.g. ``"normal(0,1)"``."""
    m = _DIST_RE.match(text)
    if not m:
        raise ParameterDomainError(f"cannot parse distribution {text!r}")
    kind, args = m.group(1), m.group(2)
    try:
        params = tuple(float(tok) for tok in args.split(",") if tok.strip())
    except ValueError as exc:
        raise ParameterDomainError(f"cannot parse distribution parameters in {text!r}") from exc
    return DistributionSpec(kind, params)
