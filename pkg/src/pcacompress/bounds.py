"""Closed-form distance bounds and their Monte-Carlo verification.

Every evaluator is a pure function of :class:`BoundParams`. Natural
logarithms throughout. A bound whose radicand or denominator is
non-positive carries no information; such values are flagged vacuous
and are never counted as passing.

Two of the published expressions are kept exactly as printed even
though they look like variants of each other: the intra ratio bound's
denominator uses sigma squared where the standalone post-projection
intra bound uses sigma times sigma_j, and the inter ratio bound's
denominator subtracts its spectral correction inside an already
subtracted parenthesis. Both sites are implemented verbatim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse.linalg

from .errors import InputError
from .linalg import SvdOptions, fit_uncentered_pca
from .metrics import extra_pc_split, pair_compression
from .models import RandomVectorModel, generate_dataset, model_stats


@dataclass
class BoundParams:
    """Model-level quantities every bound is written in terms of.

    ``sigma`` is the largest per-coordinate noise standard deviation in
    the model, ``sigma_j[j]`` the per-cluster value, ``separations`` the
    matrix of center distances, and ``s_k`` the k-th singular value of
    the mean matrix (or of the data matrix when calibrating against an
    instance). ``C0`` is the spectral-norm calibration constant and
    ``c0`` the random-projection tail exponent.
    """

    d: int
    n: int
    k: int
    sigma: float
    sigma_j: np.ndarray
    separations: np.ndarray
    s_k: float
    C0: float = 1.0
    c0: float = 4.0

    def __post_init__(self):
        self.sigma_j = np.asarray(self.sigma_j, dtype=np.float64)
        self.separations = np.asarray(self.separations, dtype=np.float64)
        if self.d < 1 or self.n < 2 or self.k < 1:
            raise InputError("need d >= 1, n >= 2, k >= 1")
        if self.sigma < 0 or np.any(self.sigma_j < 0) or self.s_k < 0:
            raise InputError("noise levels and singular values must be nonnegative")
        if self.sigma_j.shape != (self.k,):
            raise InputError(f"sigma_j must have one entry per cluster, got {self.sigma_j.shape}")
        if self.separations.shape != (self.k, self.k):
            raise InputError("separations must be a k x k matrix")
        if self.C0 <= 0 or self.c0 <= 1:
            raise InputError("need C0 > 0 and c0 > 1")

    @property
    def sigma_condition_met(self) -> bool:
        """Whether sigma clears C0 log(n)/n, the stated noise floor."""
        return self.sigma >= self.C0 * math.log(self.n) / self.n

    @classmethod
    def from_model(cls, model: RandomVectorModel, C0: float = 1.0, c0: float = 4.0,
                   s_k: Optional[float] = None) -> "BoundParams":
        stats = model_stats(model)
        return cls(
            d=model.d,
            n=model.n,
            k=model.k,
            sigma=math.sqrt(stats.sigma_sq),
            sigma_j=np.sqrt(stats.sigma_j_sq),
            separations=stats.separations,
            s_k=stats.s_k if s_k is None else float(s_k),
            C0=C0,
            c0=c0,
        )


def _log_slack(params: BoundParams) -> float:
    # the 12 sqrt(d) log(n) concentration slack shared by both pre bounds
    return 12.0 * math.sqrt(params.d) * math.log(params.n)


def _projected_noise(params: BoundParams) -> float:
    # sqrt(k) (sigma + sqrt(16 log(nk)))
    return math.sqrt(params.k) * (
        params.sigma + math.sqrt(16.0 * math.log(params.n * params.k))
    )


def _check_cluster(params: BoundParams, j: int) -> None:
    if not 0 <= j < params.k:
        raise InputError(f"cluster index {j} outside [0, {params.k})")


def pre_pca_intra_lower(params: BoundParams, j: int) -> float:
    """Lower bound on original-space distance within cluster j.

    Returns 0 when the radicand is negative, which makes the bound
    vacuous (any distance clears it).
    """
    _check_cluster(params, j)
    radicand = 2.0 * params.d * params.sigma_j[j] ** 2 - _log_slack(params)
    return math.sqrt(radicand) if radicand > 0 else 0.0


def pre_pca_inter_upper(params: BoundParams, j: int, jp: int) -> float:
    """Upper bound on original-space distance between clusters j and jp."""
    _check_cluster(params, j)
    _check_cluster(params, jp)
    if j == jp:
        raise InputError("inter bound needs two distinct clusters")
    sep = params.separations[j, jp]
    return math.sqrt(
        params.d * (params.sigma_j[j] ** 2 + params.sigma_j[jp] ** 2)
        + sep**2
        + _log_slack(params)
    )


def _require_spectrum(params: BoundParams) -> None:
    if params.s_k <= 0:
        raise InputError("s_k must be positive for post-projection bounds")


def post_pca_intra_upper(params: BoundParams, j: int) -> float:
    """Upper bound on projected distance within cluster j."""
    _check_cluster(params, j)
    _require_spectrum(params)
    spectral = (
        params.C0 * params.sigma * params.sigma_j[j]
        * math.sqrt(params.d * (params.d + params.n)) / params.s_k
    )
    return 2.0 * math.sqrt(2.0) * (_projected_noise(params) + spectral)


def post_pca_inter_lower(params: BoundParams, j: int, jp: int) -> float:
    """Lower bound on projected distance between clusters j and jp.

    May come out non-positive; callers should then flag it vacuous.
    """
    _check_cluster(params, j)
    _check_cluster(params, jp)
    if j == jp:
        raise InputError("inter bound needs two distinct clusters")
    _require_spectrum(params)
    sep = params.separations[j, jp]
    spectral = (
        2.0 * params.C0 * params.sigma**2
        * math.sqrt(
            2.0 * (params.d + params.n)
            * (sep**2 + params.d * (params.sigma_j[j] ** 2 + params.sigma_j[jp] ** 2))
        )
        / params.s_k
    )
    return sep - 2.0 * _projected_noise(params) - spectral


def intra_ratio_lower(params: BoundParams, j: int) -> float:
    """Lower bound on the compression ratio of pairs inside cluster j.

    A value of 0 means the underlying distance bound is vacuous. The
    denominator deliberately carries sigma squared rather than
    sigma times sigma_j; see the module docstring.
    """
    _check_cluster(params, j)
    _require_spectrum(params)
    spectral = (
        params.C0 * params.sigma**2
        * math.sqrt(params.d * (params.d + params.n)) / params.s_k
    )
    denominator = 2.0 * math.sqrt(2.0) * (_projected_noise(params) + spectral)
    return pre_pca_intra_lower(params, j) / denominator


def inter_ratio_upper(params: BoundParams, j: int, jp: int) -> Optional[float]:
    """Upper bound on the compression ratio of pairs across j and jp.

    Returns None when the denominator is non-positive (vacuous). The
    spectral correction is subtracted inside the subtracted parenthesis,
    which raises the denominator; kept verbatim, see module docstring.
    """
    _check_cluster(params, j)
    _check_cluster(params, jp)
    if j == jp:
        raise InputError("ratio bound needs two distinct clusters")
    _require_spectrum(params)
    sep = params.separations[j, jp]
    spectral = (
        params.C0 * params.sigma**2
        * math.sqrt(
            2.0 * (params.d + params.n)
            * (sep**2 + params.d * (params.sigma_j[j] ** 2 + params.sigma_j[jp] ** 2))
        )
        / params.s_k
    )
    inner = sep - 2.0 * (_projected_noise(params) - spectral)
    if inner <= 0:
        return None
    return pre_pca_inter_upper(params, j, jp) / (math.sqrt(2.0) * inner)


def random_projection_ub(kprime: int, sigma: float, n: int, c0: float = 4.0) -> float:
    """Bound on the projected norm of one noise vector.

    Holds with probability at least 1 - (n k')^(1 - c0) over draws of
    the noise and an independent projection.
    """
    if kprime < 1 or n < 1:
        raise InputError("need kprime >= 1 and n >= 1")
    if c0 <= 1:
        raise InputError("tail exponent c0 must exceed 1")
    return math.sqrt(kprime) * (sigma + math.sqrt(4.0 * c0 * math.log(n * kprime)))


@dataclass
class RandomProjectionCheck:
    bound: float
    violations: int
    trials: int
    predicted_rate: float

    @property
    def rate(self) -> float:
        return self.violations / self.trials


def random_projection_check(
    d: int,
    kprime: int,
    n: int,
    sigma: float,
    c0: float = 4.0,
    trials: int = 1000,
    seed: int = 0,
) -> RandomProjectionCheck:
    """Sample independent projections and noise, count bound violations.

    Noise coordinates are uniform with standard deviation sigma; the
    projection is a uniformly random orthonormal k'-frame in d
    dimensions, drawn fresh each trial.
    """
    if trials < 1:
        raise InputError("need at least one trial")
    bound = random_projection_ub(kprime, sigma, n, c0)
    rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
    half_width = math.sqrt(3.0) * sigma
    violations = 0
    block = 500
    for start in range(0, trials, block):
        m = min(block, trials - start)
        gauss = rng.standard_normal((m, d, kprime))
        q, _ = np.linalg.qr(gauss)
        noise = rng.uniform(-half_width, half_width, size=(m, d))
        projected = np.einsum("tdk,td->tk", q, noise)
        norms = np.sqrt(np.einsum("tk,tk->t", projected, projected))
        violations += int(np.sum(norms > bound))
    predicted = (n * kprime) ** (1.0 - c0)
    return RandomProjectionCheck(bound, violations, trials, predicted)


def extra_pc_pair_bound(params: BoundParams, c: int, f: float) -> Tuple[float, float]:
    """Per-pair threshold shift and pair budget for extra components.

    Keeping c components beyond the model's k, the projected distance
    of an intra pair should stay below sqrt(lead^2 + shift) where
    ``lead`` is its distance under the first k components and ``shift``
    is the returned first value. At most ``budget`` intra pairs may
    exceed this.
    """
    if not 0.0 < f < 1.0:
        raise InputError(f"f must lie in (0, 1), got {f}")
    if c < 0:
        raise InputError("component surplus c must be nonnegative")
    shift = (params.C0 * params.sigma * f * c) ** 2 * (params.d + params.n)
    budget = c**2 / f**4
    return shift, budget


@dataclass
class ExtraPcCheck:
    exceedances: int
    budget: float
    intra_pairs: int
    threshold_shift: float


def extra_pc_check(
    model: RandomVectorModel,
    c: int,
    f: float,
    C0: float = 1.0,
    seed: int = 0,
    opts: Optional[SvdOptions] = None,
) -> ExtraPcCheck:
    """Count intra pairs whose trailing components exceed the threshold."""
    params = BoundParams.from_model(model, C0=C0)
    shift, budget = extra_pc_pair_bound(params, c, f)
    A = generate_dataset(model, seed)
    P = fit_uncentered_pca(A, model.k + c, opts)
    split = extra_pc_split(A, P, model.k)
    intra = split.same
    trailing_sq = split.trailing[intra] ** 2
    exceed = int(np.sum(trailing_sq > shift * (1.0 + 1e-12)))
    return ExtraPcCheck(exceed, budget, int(intra.sum()), shift)


@dataclass
class NoiseNormCheck:
    estimate: float
    bound: float
    passed: bool


def _top_singular_value(E: np.ndarray, seed: int) -> float:
    # the symmetric embedding of E has operator norm equal to E's top
    # singular value; Lanczos handles the near-degenerate top edge of a
    # random matrix where plain power iteration stalls
    if not np.any(E):
        return 0.0
    if min(E.shape) < 3:
        return float(np.linalg.svd(E, compute_uv=False)[0])
    rng = np.random.Generator(np.random.Philox(key=[seed, 1]))
    v0 = rng.standard_normal(min(E.shape))
    values = scipy.sparse.linalg.svds(E, k=1, v0=v0, return_singular_vectors=False)
    return float(values[0])


def noise_norm_check(model: RandomVectorModel, seed: int, C0: float = 1.0) -> NoiseNormCheck:
    """Spectral norm of one instance's noise block versus C0 sigma sqrt(d+n)."""
    stats = model_stats(model)
    sigma = math.sqrt(stats.sigma_sq)
    A = generate_dataset(model, seed)
    E = A.toarray() - model.mean_matrix()
    estimate = _top_singular_value(E, seed)
    bound = C0 * sigma * math.sqrt(model.d + model.n)
    return NoiseNormCheck(estimate, bound, estimate <= bound)


@dataclass
class C0Calibration:
    value: float
    ratios: np.ndarray  # per-seed ||E|| / (sigma sqrt(d+n))


def calibrate_c0(model: RandomVectorModel, seeds: Union[int, Sequence[int]] = 100) -> C0Calibration:
    """Smallest C0 for which the noise-norm check passes on every seed."""
    stats = model_stats(model)
    if stats.sigma_sq == 0:
        raise InputError("cannot calibrate C0 on a noiseless model")
    seed_list = range(seeds) if isinstance(seeds, int) else seeds
    ratios = []
    for seed in seed_list:
        check = noise_norm_check(model, seed, C0=1.0)
        ratios.append(check.estimate / check.bound)
    ratios = np.array(ratios)
    return C0Calibration(float(ratios.max() * (1.0 + 1e-9)), ratios)


@dataclass
class BoundRecord:
    """One bound's aggregate outcome over all verification seeds."""

    bound: str
    clusters: Tuple[int, ...]
    analytic: Optional[float]
    empirical: Optional[float]
    violations: int
    trials: int
    vacuous: bool

    def to_dict(self) -> dict:
        return {
            "bound": self.bound,
            "clusters": list(self.clusters),
            "analytic": self.analytic,
            "empirical": self.empirical,
            "violations": self.violations,
            "trials": self.trials,
            "vacuous": self.vacuous,
        }


@dataclass
class BoundReport:
    records: List[BoundRecord]
    s_k_analytic: float
    s_k_empirical: float
    sigma_condition_met: bool
    trials: int = 0
    params: Optional[BoundParams] = field(default=None, repr=False)

    def record(self, bound: str, *clusters: int) -> BoundRecord:
        for rec in self.records:
            if rec.bound == bound and rec.clusters == clusters:
                return rec
        raise KeyError((bound, clusters))

    @property
    def total_violations(self) -> int:
        return sum(r.violations for r in self.records)

    @property
    def vacuous_records(self) -> int:
        return sum(r.vacuous for r in self.records)

    def to_dict(self) -> dict:
        return {
            "s_k_analytic": self.s_k_analytic,
            "s_k_empirical": self.s_k_empirical,
            "sigma_condition_met": self.sigma_condition_met,
            "trials": self.trials,
            "records": [r.to_dict() for r in self.records],
        }


class _Extremes:
    """Running worst-case tracker for one (bound, cluster-tuple) record."""

    def __init__(self, kind: str):
        self.kind = kind  # "lower": empirical min vs bound; "upper": max
        self.worst: Optional[float] = None
        self.violations = 0
        self.vacuous = False
        self.analytic: Optional[float] = None

    def update(self, analytic: Optional[float], empirical: Optional[float], vacuous: bool):
        self.analytic = analytic
        if vacuous:
            self.vacuous = True
        if empirical is None:
            return
        if self.worst is None:
            self.worst = empirical
        elif self.kind == "lower":
            self.worst = min(self.worst, empirical)
        else:
            self.worst = max(self.worst, empirical)
        if not vacuous and analytic is not None:
            if self.kind == "lower" and empirical < analytic:
                self.violations += 1
            if self.kind == "upper" and empirical > analytic:
                self.violations += 1


def verify_bounds(
    model: RandomVectorModel,
    seeds: Union[int, Sequence[int]],
    kprime: Optional[int] = None,
    C0: float = 1.0,
    use_empirical_sk: bool = False,
    opts: Optional[SvdOptions] = None,
    check_noise_norm: bool = True,
) -> BoundReport:
    """Generate instances and test every closed-form bound against them.

    For each seed: generate the dataset, fit top-k' uncentered PCA,
    compute all pair distances, and compare each bound with the
    matching empirical extreme (worst pair). ``kprime`` defaults to the
    model's k. With ``use_empirical_sk`` the bounds are re-evaluated
    per seed using the instance's own k-th singular value; the reported
    analytic value is then the last seed's.
    """
    k = model.k
    kprime = k if kprime is None else kprime
    if kprime < k:
        raise InputError("kprime below the model's cluster count leaves s_k unobserved")
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    if not seed_list:
        raise InputError("need at least one seed")

    base = BoundParams.from_model(model, C0=C0)
    trackers = {}
    for j in range(k):
        trackers[("pre-intra-lower", (j,))] = _Extremes("lower")
        trackers[("post-intra-upper", (j,))] = _Extremes("upper")
        trackers[("intra-ratio-lower", (j,))] = _Extremes("lower")
        for jp in range(j + 1, k):
            trackers[("pre-inter-upper", (j, jp))] = _Extremes("upper")
            trackers[("post-inter-lower", (j, jp))] = _Extremes("lower")
            trackers[("inter-ratio-upper", (j, jp))] = _Extremes("upper")
    if check_noise_norm:
        trackers[("noise-norm", ())] = _Extremes("upper")

    sk_empirical = []
    for seed in seed_list:
        A = generate_dataset(model, seed)
        P = fit_uncentered_pca(A, kprime, opts)
        sk_seed = float(P.singular_values[k - 1])
        sk_empirical.append(sk_seed)
        params = base
        if use_empirical_sk:
            params = BoundParams.from_model(model, C0=C0, s_k=sk_seed)
        pairs = pair_compression(A, P)
        la = A.labels[pairs.i]
        lb = A.labels[pairs.j]
        finite = ~pairs.degenerate
        for j in range(k):
            intra = (la == j) & (lb == j)
            if intra.any():
                lo_pre = float(pairs.pre[intra].min())
                hi_post = float(pairs.post[intra].max())
                fin = intra & finite
                lo_ratio = float(pairs.ratio[fin].min()) if fin.any() else None
                b = pre_pca_intra_lower(params, j)
                trackers[("pre-intra-lower", (j,))].update(b, lo_pre, vacuous=b == 0.0)
                b = post_pca_intra_upper(params, j)
                trackers[("post-intra-upper", (j,))].update(b, hi_post, vacuous=False)
                b = intra_ratio_lower(params, j)
                trackers[("intra-ratio-lower", (j,))].update(b, lo_ratio, vacuous=b == 0.0)
            for jp in range(j + 1, k):
                inter = ((la == j) & (lb == jp)) | ((la == jp) & (lb == j))
                if not inter.any():
                    continue
                hi_pre = float(pairs.pre[inter].max())
                lo_post = float(pairs.post[inter].min())
                # a degenerate cross pair has unbounded ratio
                hi_ratio = float(np.inf) if (inter & ~finite).any() else float(
                    pairs.ratio[inter & finite].max()
                )
                b = pre_pca_inter_upper(params, j, jp)
                trackers[("pre-inter-upper", (j, jp))].update(b, hi_pre, vacuous=False)
                b = post_pca_inter_lower(params, j, jp)
                trackers[("post-inter-lower", (j, jp))].update(b, lo_post, vacuous=b <= 0.0)
                b = inter_ratio_upper(params, j, jp)
                trackers[("inter-ratio-upper", (j, jp))].update(b, hi_ratio, vacuous=b is None)
        if check_noise_norm:
            check = noise_norm_check(model, seed, C0=C0)
            trackers[("noise-norm", ())].update(check.bound, check.estimate, vacuous=False)

    records = [
        BoundRecord(
            bound=name,
            clusters=clusters,
            analytic=t.analytic,
            empirical=t.worst,
            violations=t.violations,
            trials=len(seed_list),
            vacuous=t.vacuous,
        )
        for (name, clusters), t in trackers.items()
    ]
    return BoundReport(
        records=records,
        s_k_analytic=base.s_k,
        s_k_empirical=float(np.mean(sk_empirical)),
        sigma_condition_met=base.sigma_condition_met,
        trials=len(seed_list),
        params=base,
    )
