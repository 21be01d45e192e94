"""Dynamic temporal stereo: per-pixel candidate search driven by (mu, sigma).

Each pixel keeps a depth centre ``mu`` (metres) and a variance-like spread
``sigma`` (m^2) per depth-range split. One iteration places N candidates in
``mu +/- k*sqrt(sigma)``, warps them into the source frame, scores them by
feature inner product, moves ``mu`` to the probability-weighted mean and
rescales ``sigma`` by the confidence found at the new ``mu``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
import yaml
from sklearn.base import BaseEstimator

from .data import FeatureMap, FrameRecord, OffsetField
from .geometry import CameraIntrinsics, CameraModel, RigidTransform, bilinear_sample_many, relative_transform, warp_points


@dataclass(frozen=True)
class StereoConfig:
    num_splits: int = 2
    candidates_per_pixel: int = 8
    span_k: float = 2.0
    iterations: int = 3
    tau_s: float = 1.0
    tau_w: float = 1.0
    d_min: float = 2.0
    d_max: float = 58.0
    num_bins: int = 224
    sigma_min: float = 0.01
    sigma_max: float = 100.0
    offset_max: float = 8.0
    min_parallax: float = 0.5

    def __post_init__(self):
        problems = []
        if self.num_splits < 1:
            problems.append("num_splits >= 1")
        if self.candidates_per_pixel < 2:
            problems.append("candidates_per_pixel >= 2")
        if self.iterations < 0:
            problems.append("iterations >= 0")
        if not self.tau_s > 0:
            problems.append("tau_s > 0")
        if not self.tau_w > 0:
            problems.append("tau_w > 0")
        if not self.d_min > 0:
            problems.append("d_min > 0")
        if not self.d_max > self.d_min:
            problems.append("d_max > d_min")
        if self.num_bins < 2:
            problems.append("num_bins >= 2")
        if not 0 < self.sigma_min <= self.sigma_max:
            problems.append("0 < sigma_min <= sigma_max")
        if self.span_k <= 0:
            problems.append("span_k > 0")
        if problems:
            raise ValueError("invalid StereoConfig, require: " + ", ".join(problems))

    @property
    def split_edges(self) -> np.ndarray:
        return np.linspace(self.d_min, self.d_max, self.num_splits + 1)

    @property
    def bins(self) -> np.ndarray:
        step = (self.d_max - self.d_min) / self.num_bins
        return self.d_min + (np.arange(self.num_bins) + 0.5) * step

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> StereoConfig:
        d = dict(d or {})
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown StereoConfig keys: {sorted(unknown)}")
        defaults = cls()
        kwargs = {k: type(getattr(defaults, k))(v) for k, v in d.items()}
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> StereoConfig:
        data = yaml.safe_load(Path(path).read_text()) or {}
        return cls.from_dict(data.get("stereo", data))

    def save(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))


@dataclass
class DepthState:
    mu: np.ndarray
    sigma: np.ndarray
    split_index: int
    d_lo: float
    d_hi: float

    def copy(self) -> DepthState:
        return replace(self, mu=self.mu.copy(), sigma=self.sigma.copy())


@dataclass
class CandidateSet:
    depths: np.ndarray  # H x W x N
    probs: np.ndarray  # H x W x N
    valid: np.ndarray  # H x W x N
    pixel_valid: np.ndarray  # H x W
    logits: np.ndarray  # H x W x N, -inf where invalid


@dataclass
class DepthDistribution:
    bins: np.ndarray  # B
    probs: np.ndarray  # H x W x B

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.float64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape[-1] != self.bins.shape[0]:
            raise ValueError("last probs axis must match the bin count")


def _check_grid(name, a, positive=True):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be an H x W grid")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    if positive and np.any(a <= 0):
        raise ValueError(f"{name} must be positive")
    return a


def init_states(mono_mu, mono_sigma, cfg: StereoConfig) -> list[DepthState]:
    mono_mu = _check_grid("mono_mu", mono_mu)
    mono_sigma = _check_grid("mono_sigma", mono_sigma)
    if mono_mu.shape != mono_sigma.shape:
        raise ValueError("mono_mu and mono_sigma shapes differ")
    mu_all = np.clip(mono_mu, cfg.d_min, cfg.d_max)
    sigma = np.clip(mono_sigma, cfg.sigma_min, cfg.sigma_max)
    edges = cfg.split_edges
    states = []
    for r in range(cfg.num_splits):
        lo, hi = float(edges[r]), float(edges[r + 1])
        inside = (mu_all >= lo) & (mu_all <= hi)
        mu = np.where(inside, mu_all, 0.5 * (lo + hi))
        states.append(DepthState(mu, sigma.copy(), r, lo, hi))
    return states


def generate_candidates(state: DepthState, cfg: StereoConfig):
    """Equally spaced depths over ``mu +/- k*sqrt(sigma)`` clipped to the split.

    Returns ``(depths, degenerate)``; ``degenerate`` marks pixels whose clipped span
    collapsed to a point (all N candidates equal).
    """
    half = cfg.span_k * np.sqrt(state.sigma)
    lo = np.clip(state.mu - half, state.d_lo, state.d_hi)
    hi = np.clip(state.mu + half, state.d_lo, state.d_hi)
    t = np.linspace(0.0, 1.0, cfg.candidates_per_pixel)
    depths = lo[..., None] + (hi - lo)[..., None] * t
    degenerate = (hi - lo) <= 1e-12 * np.maximum(1.0, np.abs(hi))
    return depths, degenerate


def _pixel_grid(height, width):
    v, u = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    return u, v


def _sample_logits(ref_feat: FeatureMap, src_feat: FeatureMap, depths, K_ref, K_src, M, offsets, tau_s):
    """Inner-product logits for every (pixel, depth) pair; -inf where the warp is invalid."""
    if ref_feat.channels != src_feat.channels:
        raise ValueError(f"channel mismatch: ref {ref_feat.channels} vs src {src_feat.channels}")
    H, W = ref_feat.height, ref_feat.width
    u, v = _pixel_grid(H, W)
    du = offsets.du if offsets is not None else 0.0
    dv = offsets.dv if offsets is not None else 0.0
    n = depths.shape[-1]
    logits = np.full(depths.shape, -np.inf)
    valid = np.zeros(depths.shape, dtype=bool)
    ref_vals = ref_feat.values.astype(np.float64, copy=False)
    src_vals = src_feat.values.astype(np.float64, copy=False)
    for i in range(n):
        us, vs, _, ok = warp_points(u, v, depths[..., i], K_ref, K_src, M)
        sample, ok_s = bilinear_sample_many(src_vals, src_feat.valid_mask, us + du, vs + dv)
        ok = ok & ok_s & ref_feat.valid_mask
        score = np.einsum("hwc,hwc->hw", ref_vals, sample) / tau_s
        logits[..., i] = np.where(ok, score, -np.inf)
        valid[..., i] = ok
    return logits, valid


def _normalize_logits(logits, valid):
    any_valid = valid.any(axis=-1)
    peak = np.max(np.where(valid, logits, -np.inf), axis=-1, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    e = np.exp(np.where(valid, logits - peak, -np.inf))
    total = e.sum(axis=-1, keepdims=True)
    n = logits.shape[-1]
    probs = np.where(any_valid[..., None], e / np.where(total > 0, total, 1.0), 1.0 / n)
    return probs, any_valid


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def score_candidates(ref_feat: FeatureMap, src_feat, depths, K_ref: CameraIntrinsics, K_src,
                     M, offsets: OffsetField | None, cfg: StereoConfig,
                     pixel_mask=None) -> CandidateSet:
    """Warp, sample and softmax-normalize the candidate depths of every pixel.

    ``src_feat``/``K_src``/``M``/``offsets`` may be lists for several source frames;
    their logits are averaged over the sources where the warp is valid.
    ``pixel_mask`` (H x W) excludes pixels from stereo altogether.
    """
    srcs = _as_list(src_feat)
    Ks = _as_list(K_src) if isinstance(K_src, (list, tuple)) else [K_src] * len(srcs)
    Ms = _as_list(M)
    offs = offsets if isinstance(offsets, (list, tuple)) else [offsets] * len(srcs)
    if not (len(srcs) == len(Ks) == len(Ms) == len(offs)):
        raise ValueError("source features, intrinsics, transforms and offsets must align")
    for off in offs:
        if off is not None:
            off.check(cfg.offset_max)

    total = np.zeros(depths.shape)
    count = np.zeros(depths.shape)
    for feat, K, Mi, off in zip(srcs, Ks, Ms, offs):
        logits, valid = _sample_logits(ref_feat, feat, depths, K_ref, K, Mi, off, cfg.tau_s)
        total += np.where(valid, logits, 0.0)
        count += valid
    valid = count > 0
    if pixel_mask is not None:
        valid &= np.asarray(pixel_mask, dtype=bool)[..., None]
    logits = np.where(valid, total / np.maximum(count, 1), -np.inf)
    probs, pixel_valid = _normalize_logits(logits, valid)
    return CandidateSet(depths, probs, valid, pixel_valid, logits)


def update_mu(cands: CandidateSet, prior_mu=None) -> np.ndarray:
    mu = np.einsum("hwn,hwn->hw", cands.depths, cands.probs)
    # keep the weighted mean inside the candidate hull despite rounding
    mu = np.clip(mu, cands.depths.min(axis=-1), cands.depths.max(axis=-1))
    if prior_mu is not None:
        mu = np.where(cands.pixel_valid, mu, prior_mu)
    return mu


def confidence_at(cands: CandidateSet, mu) -> np.ndarray:
    """Candidate probability linearly interpolated at depth ``mu``, clamped at the ends."""
    D, P = cands.depths, cands.probs
    n = D.shape[-1]
    mu = np.asarray(mu, dtype=np.float64)
    # index of the segment [D_j, D_j+1] holding mu
    j = np.clip((D <= mu[..., None]).sum(axis=-1) - 1, 0, n - 2)
    d0 = np.take_along_axis(D, j[..., None], -1)[..., 0]
    d1 = np.take_along_axis(D, (j + 1)[..., None], -1)[..., 0]
    p0 = np.take_along_axis(P, j[..., None], -1)[..., 0]
    p1 = np.take_along_axis(P, (j + 1)[..., None], -1)[..., 0]
    span = d1 - d0
    t = np.clip(np.divide(mu - d0, span, out=np.zeros_like(span), where=span > 0), 0.0, 1.0)
    p_mu = p0 + t * (p1 - p0)
    collapsed = (D[..., -1] - D[..., 0]) <= 0
    return np.where(collapsed, P.sum(axis=-1), p_mu)


def update_sigma(state: DepthState, cands: CandidateSet, mu_new, cfg: StereoConfig) -> np.ndarray:
    p_mu = confidence_at(cands, mu_new)
    with np.errstate(divide="ignore"):
        sigma = np.where(p_mu > 0, state.sigma / (2.0 * np.where(p_mu > 0, p_mu, 1.0)), np.inf)
    sigma = np.clip(sigma, cfg.sigma_min, cfg.sigma_max)
    return np.where(cands.pixel_valid, sigma, state.sigma)


def parallax_mask(K_ref, K_src, M, d_lo, d_hi, min_parallax, height, width) -> np.ndarray:
    """Pixels whose warp moves by at least ``min_parallax`` px across ``[d_lo, d_hi]``.

    Without parallax the source lookup is the same for every depth, so the
    candidates cannot be told apart.
    """
    u, v = _pixel_grid(height, width)
    u0, v0, _, ok0 = warp_points(u, v, d_lo, K_ref, K_src, M)
    u1, v1, _, ok1 = warp_points(u, v, d_hi, K_ref, K_src, M)
    shift = np.hypot(u1 - u0, v1 - v0)
    return ok0 & ok1 & (shift >= min_parallax) | (ok0 ^ ok1)


@dataclass
class _Pair:
    ref_feat: FeatureMap
    src_feats: list
    K_ref: CameraIntrinsics
    K_srcs: list
    Ms: list
    offsets: list

    @classmethod
    def build(cls, ref_feat, src_feat, cameras, offsets):
        ref_cam, src_cams = cameras[0], _as_list(cameras[1])
        src_feats = _as_list(src_feat)
        if len(src_feats) != len(src_cams):
            raise ValueError("one camera per source feature map is required")
        offs = offsets if isinstance(offsets, (list, tuple)) else [offsets] * len(src_feats)
        Ms = [relative_transform(ref_cam, c) for c in src_cams]
        return cls(ref_feat, src_feats, ref_cam.intrinsics, [c.intrinsics for c in src_cams], Ms, offs)

    def score(self, depths, cfg, pixel_mask=None):
        return score_candidates(self.ref_feat, self.src_feats, depths, self.K_ref, self.K_srcs,
                                self.Ms, self.offsets, cfg, pixel_mask)

    def stereo_mask(self, state, cfg):
        H, W = self.ref_feat.height, self.ref_feat.width
        mask = np.zeros((H, W), dtype=bool)
        for K, M in zip(self.K_srcs, self.Ms):
            mask |= parallax_mask(self.K_ref, K, M, state.d_lo, state.d_hi, cfg.min_parallax, H, W)
        return mask


def _run(pair: _Pair, states, cfg: StereoConfig):
    """Iterate every split; returns the final states and each split's last CandidateSet."""
    out, last = [], []
    for st in states:
        st = st.copy()
        mask = pair.stereo_mask(st, cfg)
        cands = None
        for _ in range(cfg.iterations):
            depths, _ = generate_candidates(st, cfg)
            cands = pair.score(depths, cfg, mask)
            mu = update_mu(cands, st.mu)
            sigma = update_sigma(st, cands, mu, cfg)
            st = DepthState(mu, sigma, st.split_index, st.d_lo, st.d_hi)
        out.append(st)
        last.append(cands)
    return out, last


def iterate(ref_feat: FeatureMap, src_feat, states, cameras, offsets, cfg: StereoConfig) -> list[DepthState]:
    """Run ``cfg.iterations`` EM-style rounds on every split.

    ``cameras`` is ``(ref_camera, src_camera)``; the source side may be a list.
    """
    if cfg.iterations == 0:
        return [s.copy() for s in states]
    pair = _Pair.build(ref_feat, src_feat, cameras, offsets)
    return _run(pair, states, cfg)[0]


def _gaussian(bins, mu, sigma):
    return np.exp(-0.5 * (bins - mu[..., None]) ** 2 / sigma[..., None])


def emit_stereo_distribution(states, cfg: StereoConfig, split_weights=None) -> DepthDistribution:
    """Gaussian depth map from the per-split (mu, sigma).

    Without ``split_weights`` every split contributes its unnormalized Gaussian over
    the bins it owns and the pixel is normalized jointly. With ``split_weights``
    (H x W x R, summing to 1), each split's Gaussian is first normalized over its
    own bins and then scaled by its weight.
    """
    bins = cfg.bins
    edges = cfg.split_edges
    owner = np.clip(np.searchsorted(edges, bins, side="right") - 1, 0, cfg.num_splits - 1)
    if len(states) != cfg.num_splits:
        raise ValueError(f"expected {cfg.num_splits} states, got {len(states)}")
    H, W = states[0].mu.shape
    mass = np.zeros((H, W, bins.size))
    for st in states:
        sel = owner == st.split_index
        g = _gaussian(bins[sel], st.mu, st.sigma)
        if split_weights is not None:
            tot = g.sum(axis=-1, keepdims=True)
            g = np.where(tot > 0, g / np.where(tot > 0, tot, 1.0), 1.0 / max(sel.sum(), 1))
            g = g * split_weights[..., st.split_index, None]
        mass[..., sel] = g
    total = mass.sum(axis=-1, keepdims=True)
    probs = np.where(total > 0, mass / np.where(total > 0, total, 1.0), 1.0 / bins.size)
    return DepthDistribution(bins, probs)


def mono_distribution(mu, sigma, cfg: StereoConfig) -> DepthDistribution:
    """Single Gaussian over all bins, the mono branch's depth distribution."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.clip(np.asarray(sigma, dtype=np.float64), cfg.sigma_min, cfg.sigma_max)
    g = _gaussian(cfg.bins, mu, sigma)
    total = g.sum(axis=-1, keepdims=True)
    # mu far outside the bin range underflows; fall back to the nearest bin
    nearest = np.abs(cfg.bins - mu[..., None]).argmin(axis=-1)
    point = np.zeros_like(g)
    np.put_along_axis(point, nearest[..., None], 1.0, axis=-1)
    probs = np.where(total > 0, g / np.where(total > 0, total, 1.0), point)
    return DepthDistribution(cfg.bins, probs)


def fuse_mono_stereo(mono: DepthDistribution, stereo: DepthDistribution, weight) -> DepthDistribution:
    weight = np.asarray(weight, dtype=np.float64)
    if mono.probs.shape != stereo.probs.shape:
        raise ValueError(f"shape mismatch: mono {mono.probs.shape} vs stereo {stereo.probs.shape}")
    if not np.array_equal(mono.bins, stereo.bins):
        raise ValueError("mono and stereo bins differ")
    if weight.shape != mono.probs.shape[:-1]:
        raise ValueError(f"weight shape {weight.shape} != {mono.probs.shape[:-1]}")
    if np.any((weight < 0) | (weight > 1)):
        raise ValueError("weight must lie in [0, 1]")
    mass = mono.probs + weight[..., None] * stereo.probs
    return DepthDistribution(mono.bins, mass / mass.sum(axis=-1, keepdims=True))


def compute_weight_map(mu_final, mono_ref, mono_src, cameras, cfg: StereoConfig,
                       valid=None, offsets: OffsetField | None = None) -> np.ndarray:
    """Consistency weight ``exp(-|z_expected - mono_src| / tau_w)`` per reference pixel.

    ``z_expected`` is the source-frame depth of the pixel lifted at ``mu_final``;
    ``mono_src`` is sampled where that point lands. Invalid warps, and pixels
    outside ``valid``, get weight 0. ``mono_ref`` only fixes the output shape.
    """
    ref_cam, src_cam = cameras
    mu_final = _check_grid("mu_final", mu_final)
    mono_ref = np.asarray(mono_ref, dtype=np.float64)
    mono_src = np.asarray(mono_src, dtype=np.float64)
    if mono_ref.shape != mu_final.shape:
        raise ValueError("mono_ref and mu_final shapes differ")
    H, W = mu_final.shape
    u, v = _pixel_grid(H, W)
    M = relative_transform(ref_cam, src_cam)
    us, vs, zs, ok = warp_points(u, v, mu_final, ref_cam.intrinsics, src_cam.intrinsics, M)
    if offsets is not None:
        us, vs = us + offsets.du, vs + offsets.dv
    sampled, ok_s = bilinear_sample_many(mono_src[..., None], np.isfinite(mono_src), us, vs)
    ok = ok & ok_s
    resid = np.abs(zs - sampled[..., 0])
    w = np.where(ok, np.exp(-np.where(ok, resid, 0.0) / cfg.tau_w), 0.0)
    if valid is not None:
        w = np.where(valid, w, 0.0)
    return w


def expected_depth(dist: DepthDistribution) -> np.ndarray:
    return np.einsum("...b,b->...", dist.probs, dist.bins)


def split_prior(mono: DepthDistribution, cfg: StereoConfig) -> np.ndarray:
    """Mono probability mass falling in each split, H x W x R."""
    owner = np.clip(np.searchsorted(cfg.split_edges, mono.bins, side="right") - 1, 0, cfg.num_splits - 1)
    return np.stack([mono.probs[..., owner == r].sum(axis=-1) for r in range(cfg.num_splits)], axis=-1)


def split_confidence(pair: _Pair, states, cfg: StereoConfig, masks, prior, min_support: float = 0.5):
    """Posterior over splits: mono prior mass times the matching likelihood at each final mu.

    Returns ``(weights, supported)``. A pixel is supported when the splits whose
    final mu warps validly hold at least ``min_support`` of the prior mass;
    elsewhere a far-off split that merely happens to be visible would win.
    """
    logits = []
    for st, mask in zip(states, masks):
        c = pair.score(st.mu[..., None], cfg, mask)
        logits.append(c.logits[..., 0])
    logits = np.stack(logits, axis=-1)
    valid = np.isfinite(logits)
    with np.errstate(divide="ignore"):
        log_prior = np.log(prior)
    post = np.where(valid, logits + log_prior, -np.inf)
    weights, _ = _normalize_logits(post, valid & (prior > 0))
    supported = np.where(valid, prior, 0.0).sum(axis=-1) >= min_support
    weights = np.where(supported[..., None], weights, prior)
    return weights, supported


class DynamicTemporalStereo(BaseEstimator):
    """Estimator wrapper: fit on a reference/source frame pair, predict fused depth.

    After ``fit`` the estimator exposes ``states_``, ``split_weights_``,
    ``stereo_valid_``, ``weight_``, ``mono_``, ``stereo_`` and ``depth_``
    (the fused :class:`DepthDistribution`).

    Stereo contributes only where it was actually evaluated: with zero
    iterations, or where the frames give no parallax, ``weight_`` is 0 and the
    fused output equals the mono distribution.
    """

    def __init__(self, num_splits=2, candidates_per_pixel=8, span_k=2.0, iterations=3,
                 tau_s=1.0, tau_w=1.0, d_min=2.0, d_max=58.0, num_bins=224,
                 sigma_min=0.01, sigma_max=100.0, offset_max=8.0, min_parallax=0.5):
        self.num_splits = num_splits
        self.candidates_per_pixel = candidates_per_pixel
        self.span_k = span_k
        self.iterations = iterations
        self.tau_s = tau_s
        self.tau_w = tau_w
        self.d_min = d_min
        self.d_max = d_max
        self.num_bins = num_bins
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max
        self.offset_max = offset_max
        self.min_parallax = min_parallax

    @classmethod
    def from_config(cls, cfg: StereoConfig) -> DynamicTemporalStereo:
        return cls(**cfg.to_dict())

    @property
    def config(self) -> StereoConfig:
        return StereoConfig(**self.get_params())

    def fit(self, ref: FrameRecord, src, offsets=None):
        cfg = self.config
        srcs = _as_list(src)
        pair = _Pair.build(ref.features, [s.features for s in srcs], (ref.camera, [s.camera for s in srcs]), offsets)
        init = init_states(ref.mono_mu, ref.mono_sigma, cfg)
        masks = [pair.stereo_mask(st, cfg) for st in init]
        mono = mono_distribution(ref.mono_mu, ref.mono_sigma, cfg)
        prior = split_prior(mono, cfg)
        if cfg.iterations > 0:
            states, last = _run(pair, init, cfg)
            weights, scored = split_confidence(pair, states, cfg, masks, prior)
            # a search window cut by the image border is biased towards its visible side
            complete = np.stack([c.valid.all(axis=-1) for c in last], axis=-1)
            best = np.argmax(weights, axis=-1)
            stereo_valid = scored & np.take_along_axis(complete, best[..., None], -1)[..., 0]
        else:
            states = [s.copy() for s in init]
            H, W = ref.mono_mu.shape
            weights = prior
            stereo_valid = np.zeros((H, W), dtype=bool)

        best = np.argmax(weights, axis=-1)
        mu_final = np.take_along_axis(np.stack([s.mu for s in states], -1), best[..., None], -1)[..., 0]

        weight = np.zeros_like(mu_final)
        for s, off in zip(srcs, offsets if isinstance(offsets, (list, tuple)) else [offsets] * len(srcs)):
            w = compute_weight_map(mu_final, ref.mono_mu, s.mono_mu, (ref.camera, s.camera), cfg,
                                   valid=stereo_valid, offsets=off)
            weight = np.maximum(weight, w)

        self.init_states_ = init
        self.states_ = states
        self.split_weights_ = weights
        self.stereo_valid_ = stereo_valid
        self.mu_final_ = mu_final
        self.weight_ = weight
        self.mono_ = mono
        self.stereo_ = emit_stereo_distribution(states, cfg, split_weights=weights)
        self.depth_ = fuse_mono_stereo(self.mono_, self.stereo_, weight)
        return self

    def predict_distribution(self) -> DepthDistribution:
        return self.depth_

    def predict(self) -> np.ndarray:
        """Expected depth (H x W, metres) of the fused distribution."""
        return expected_depth(self.depth_)


def estimate_depth(ref: FrameRecord, src, cfg: StereoConfig | None = None, offsets=None) -> DynamicTemporalStereo:
    """Convenience: fit a :class:`DynamicTemporalStereo` with ``cfg``."""
    cfg = cfg or StereoConfig()
    return DynamicTemporalStereo.from_config(cfg).fit(ref, src, offsets)


__all__ = [
    "CameraModel", "CandidateSet", "DepthDistribution", "DepthState", "DynamicTemporalStereo",
    "RigidTransform", "StereoConfig", "compute_weight_map", "confidence_at", "emit_stereo_distribution",
    "estimate_depth", "expected_depth", "fuse_mono_stereo", "generate_candidates", "init_states",
    "iterate", "mono_distribution", "parallax_mask", "score_candidates", "update_mu", "update_sigma",
]
