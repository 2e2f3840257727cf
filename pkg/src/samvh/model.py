"""Multi-view harmonium with switch-gated connections.

Three structure modes share one parameterization:
  - DWH: every hidden unit connects to every view (gates fixed at 1).
  - MVH: connectivity frozen to a boolean mask; switch logits get no gradient.
  - SA:  switch logits are learned; the gate is their sigmoid.

The implemented unnormalized log-joint is

    sum_{k,i,j} sigma(s_kj) W^k_ij f(v^k_i) g(h_j)
      + sum_{k,i} xi^k_i f(v^k_i) + sum_j lam_j g(h_j)

with PLUS signs on both bias terms. This is the convention under which the
gradient statistics in `training` (positive phase f(v), B'(lam_hat), ...)
are the true gradients of the exact log-likelihood and under which the
hidden conditional's natural parameter equals the shifted parameter
lam_hat = lam + sum sigma(s) W f(v). A minus-bias variant would flip both,
breaking the finite-difference check, so the plus form is used throughout.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit, logsumexp

from .expfam import Family, log_partition, mean, sample, suff_stat

CHECKPOINT_FORMAT_VERSION = 1

# Exact enumeration is limited to models small enough to sum over all states.
MAX_ENUM_VISIBLE = 16
MAX_ENUM_HIDDEN = 12


class EnumerationBoundError(ValueError):
    """Model too large for exact enumeration."""


class ShapeMismatchError(ValueError):
    """Sample or vector incongruent with the model's shapes."""


@dataclass(frozen=True)
class ViewConfig:
    name: str
    dim: int
    family: Family

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"view {self.name!r}: dim must be >= 1")


class StructureKind(Enum):
    DWH = "dwh"
    MVH = "mvh"
    SA = "sa"


@dataclass
class StructureMode:
    kind: StructureKind
    mask: np.ndarray | None = None  # K x J booleans, MVH only

    def __post_init__(self):
        if self.kind is StructureKind.MVH:
            if self.mask is None:
                raise ValueError("MVH mode requires a connectivity mask")
            self.mask = np.asarray(self.mask, dtype=bool)
        elif self.mask is not None:
            raise ValueError("mask is only meaningful in MVH mode")


@dataclass
class MultiViewSample:
    values: list[np.ndarray]  # one vector per view
    label: int | None = None


@dataclass
class HarmoniumParams:
    views: list[ViewConfig]
    hidden_dim: int
    hidden_family: Family
    W: list[np.ndarray]  # per view, D_k x J
    xi: list[np.ndarray]  # per view, D_k
    lam: np.ndarray  # J
    s: np.ndarray  # K x J switch logits
    structure: StructureMode

    def __post_init__(self):
        K, J = len(self.views), self.hidden_dim
        if J < 1:
            raise ValueError("hidden_dim must be >= 1")
        names = [v.name for v in self.views]
        if len(set(names)) != K:
            raise ValueError("view names must be unique")
        self.W = [np.asarray(w, dtype=np.float64) for w in self.W]
        self.xi = [np.asarray(x, dtype=np.float64) for x in self.xi]
        self.lam = np.asarray(self.lam, dtype=np.float64)
        self.s = np.asarray(self.s, dtype=np.float64)
        if len(self.W) != K or len(self.xi) != K:
            raise ShapeMismatchError("need one W and one xi per view")
        for v, w, x in zip(self.views, self.W, self.xi):
            if w.shape != (v.dim, J):
                raise ShapeMismatchError(
                    f"W for view {v.name!r} has shape {w.shape}, want {(v.dim, J)}")
            if x.shape != (v.dim,):
                raise ShapeMismatchError(
                    f"xi for view {v.name!r} has shape {x.shape}, want {(v.dim,)}")
        if self.lam.shape != (J,):
            raise ShapeMismatchError(f"lam has shape {self.lam.shape}, want {(J,)}")
        if self.s.shape != (K, J):
            raise ShapeMismatchError(f"s has shape {self.s.shape}, want {(K, J)}")
        if self.structure.kind is StructureKind.MVH and self.structure.mask.shape != (K, J):
            raise ShapeMismatchError("MVH mask shape must be K x J")
        for arr in (*self.W, *self.xi, self.lam, self.s):
            if not np.all(np.isfinite(arr)):
                raise ValueError("all parameters must be finite")

    @property
    def num_views(self) -> int:
        return len(self.views)

    def copy(self) -> "HarmoniumParams":
        return HarmoniumParams(
            views=list(self.views),
            hidden_dim=self.hidden_dim,
            hidden_family=self.hidden_family,
            W=[w.copy() for w in self.W],
            xi=[x.copy() for x in self.xi],
            lam=self.lam.copy(),
            s=self.s.copy(),
            structure=StructureMode(self.structure.kind,
                                    None if self.structure.mask is None
                                    else self.structure.mask.copy()),
        )


def init_params(views: list[ViewConfig], hidden_dim: int, hidden_family: Family,
                structure: StructureMode, rng: np.random.Generator,
                weight_scale: float = 0.01) -> HarmoniumParams:
    """Fresh parameters: small random weights, zero biases, zero switch logits."""
    return HarmoniumParams(
        views=views,
        hidden_dim=hidden_dim,
        hidden_family=hidden_family,
        W=[weight_scale * rng.standard_normal((v.dim, hidden_dim)) for v in views],
        xi=[np.zeros(v.dim) for v in views],
        lam=np.zeros(hidden_dim),
        s=np.zeros((len(views), hidden_dim)),
        structure=structure,
    )


# ---------------------------------------------------------------------------
# Gates and shifted parameters
# ---------------------------------------------------------------------------

def gates(params: HarmoniumParams) -> np.ndarray:
    """Effective gate matrix, K x J."""
    kind = params.structure.kind
    if kind is StructureKind.DWH:
        return np.ones_like(params.s)
    if kind is StructureKind.MVH:
        return params.structure.mask.astype(np.float64)
    return expit(params.s)


def gate(params: HarmoniumParams, k: int, j: int) -> float:
    if not (0 <= k < params.num_views and 0 <= j < params.hidden_dim):
        raise IndexError(f"gate index ({k}, {j}) out of range")
    return float(gates(params)[k, j])


def _check_sample(params: HarmoniumParams, v: MultiViewSample) -> list[np.ndarray]:
    if len(v.values) != params.num_views:
        raise ShapeMismatchError("sample has wrong number of views")
    out = []
    for cfg, val in zip(params.views, v.values):
        val = np.asarray(val, dtype=np.float64)
        if val.shape != (cfg.dim,):
            raise ShapeMismatchError(
                f"view {cfg.name!r} value has shape {val.shape}, want {(cfg.dim,)}")
        out.append(val)
    return out


def hidden_shifted_batch(params: HarmoniumParams, fv: list[np.ndarray]) -> np.ndarray:
    """lam_hat for a batch: (B, J). fv[k] is f(v) for view k, shape (B, D_k)."""
    g = gates(params)
    out = np.broadcast_to(params.lam, (fv[0].shape[0], params.hidden_dim)).copy()
    for k in range(params.num_views):
        out += fv[k] @ (params.W[k] * g[k][None, :])
    return out


def hidden_shifted_params(params: HarmoniumParams, v: MultiViewSample) -> np.ndarray:
    """Natural parameter of p(h | v): lam + sum_k sigma(s) W^k f(v^k)."""
    values = _check_sample(params, v)
    fv = [suff_stat(cfg.family, val)[None, :]
          for cfg, val in zip(params.views, values)]
    return hidden_shifted_batch(params, fv)[0]


def visible_shifted_batch(params: HarmoniumParams, gh: np.ndarray, k: int) -> np.ndarray:
    """xi_hat for view k over a batch of hidden statistics gh, shape (B, J)."""
    g = gates(params)
    return params.xi[k][None, :] + gh @ (params.W[k] * g[k][None, :]).T


def visible_shifted_params(params: HarmoniumParams, h: np.ndarray, k: int) -> np.ndarray:
    """Natural parameter of p(v^k | h): xi^k + sigma(s) W^k g(h)."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (params.hidden_dim,):
        raise ShapeMismatchError(f"h has shape {h.shape}, want {(params.hidden_dim,)}")
    if not 0 <= k < params.num_views:
        raise IndexError(f"view index {k} out of range")
    gh = suff_stat(params.hidden_family, h)
    return visible_shifted_batch(params, gh[None, :], k)[0]


def posterior_hidden_mean_batch(params: HarmoniumParams, fv: list[np.ndarray]) -> np.ndarray:
    return mean(params.hidden_family, hidden_shifted_batch(params, fv))


def posterior_hidden_mean(params: HarmoniumParams, v: MultiViewSample) -> np.ndarray:
    """B'(lam_hat): the per-unit conditional mean, used as the feature vector."""
    return mean(params.hidden_family, hidden_shifted_params(params, v))


# ---------------------------------------------------------------------------
# Joint, likelihood, sampling
# ---------------------------------------------------------------------------

def unnormalized_log_joint(params: HarmoniumParams, v: MultiViewSample,
                           h: np.ndarray) -> float:
    """Log of the unnormalized joint; see the module docstring for the sign
    convention (plus on both bias terms)."""
    values = _check_sample(params, v)
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (params.hidden_dim,):
        raise ShapeMismatchError(f"h has shape {h.shape}, want {(params.hidden_dim,)}")
    g = gates(params)
    gh = suff_stat(params.hidden_family, h)
    total = float(params.lam @ gh)
    for k, (cfg, val) in enumerate(zip(params.views, values)):
        f = suff_stat(cfg.family, val)
        total += float(f @ (params.W[k] * g[k][None, :]) @ gh)
        total += float(params.xi[k] @ f)
    return total


def _check_enum_bounds(params: HarmoniumParams):
    total_visible = sum(v.dim for v in params.views)
    if total_visible > MAX_ENUM_VISIBLE or params.hidden_dim > MAX_ENUM_HIDDEN:
        raise EnumerationBoundError(
            f"enumeration limited to {MAX_ENUM_VISIBLE} visible / "
            f"{MAX_ENUM_HIDDEN} hidden units "
            f"(got {total_visible} / {params.hidden_dim})")
    if params.hidden_family is not Family.BERNOULLI or any(
            v.family is not Family.BERNOULLI for v in params.views):
        raise ValueError("exact enumeration requires all-Bernoulli families")


def enumerate_binary_states(n: int) -> np.ndarray:
    """All 2^n binary vectors as a (2^n, n) float array."""
    idx = np.arange(2 ** n, dtype=np.uint32)
    bits = (idx[:, None] >> np.arange(n)[None, :]) & 1
    return bits.astype(np.float64)


def _split_views(params: HarmoniumParams, flat: np.ndarray) -> list[np.ndarray]:
    out, pos = [], 0
    for cfg in params.views:
        out.append(flat[:, pos:pos + cfg.dim])
        pos += cfg.dim
    return out


def log_unnorm_marginal_batch(params: HarmoniumParams, fv: list[np.ndarray]) -> np.ndarray:
    """log sum_h p_tilde(v, h) for Bernoulli hidden units, shape (B,).

    The hidden sum factorizes: each unit contributes log(1 + exp(lam_hat_j)).
    """
    lam_hat = hidden_shifted_batch(params, fv)
    total = np.sum(np.logaddexp(0.0, lam_hat), axis=1)
    for k in range(params.num_views):
        total += fv[k] @ params.xi[k]
    return total


def exact_log_partition(params: HarmoniumParams) -> float:
    """log Z by enumerating every visible state (tiny Bernoulli models only)."""
    _check_enum_bounds(params)
    total_visible = sum(v.dim for v in params.views)
    states = enumerate_binary_states(total_visible)
    fv = _split_views(params, states)
    return float(logsumexp(log_unnorm_marginal_batch(params, fv)))


def exact_log_likelihood(params: HarmoniumParams, data: list[MultiViewSample]) -> float:
    """Mean over data of log p(v), by exact enumeration."""
    _check_enum_bounds(params)
    if not data:
        raise ValueError("data must be nonempty")
    fv = [np.stack([_check_sample(params, smp)[k] for smp in data])
          for k in range(params.num_views)]
    log_z = exact_log_partition(params)
    return float(np.mean(log_unnorm_marginal_batch(params, fv))) - log_z


def exact_visible_distribution(params: HarmoniumParams) -> tuple[np.ndarray, np.ndarray]:
    """All visible states and their exact probabilities p(v)."""
    _check_enum_bounds(params)
    total_visible = sum(v.dim for v in params.views)
    states = enumerate_binary_states(total_visible)
    fv = _split_views(params, states)
    logp = log_unnorm_marginal_batch(params, fv)
    logp -= logsumexp(logp)
    return states, np.exp(logp)


def gibbs_step_batch(params: HarmoniumParams, fv: list[np.ndarray],
                     rng: np.random.Generator) -> tuple[np.ndarray, list[np.ndarray]]:
    """One block Gibbs sweep for a batch: h ~ p(h|v), then v' ~ p(v|h)."""
    h = sample(params.hidden_family, hidden_shifted_batch(params, fv), rng)
    gh = suff_stat(params.hidden_family, h)
    fv_next = []
    for k, cfg in enumerate(params.views):
        eta = visible_shifted_batch(params, gh, k)
        fv_next.append(sample(cfg.family, eta, rng))
    return h, fv_next


def gibbs_step(params: HarmoniumParams, v: MultiViewSample,
               rng: np.random.Generator) -> tuple[np.ndarray, MultiViewSample]:
    values = _check_sample(params, v)
    fv = [suff_stat(cfg.family, val)[None, :]
          for cfg, val in zip(params.views, values)]
    h, fv_next = gibbs_step_batch(params, fv, rng)
    return h[0], MultiViewSample(values=[a[0] for a in fv_next], label=v.label)


# ---------------------------------------------------------------------------
# Structure report
# ---------------------------------------------------------------------------

@dataclass
class SwitchReport:
    threshold: float
    connected: np.ndarray  # K x J booleans
    shared_units: list[int]
    specific_units: list[list[int]]  # per view
    dead_units: list[int]

    @property
    def num_shared(self) -> int:
        return len(self.shared_units)

    @property
    def num_specific(self) -> list[int]:
        return [len(u) for u in self.specific_units]

    @property
    def num_dead(self) -> int:
        return len(self.dead_units)

    def summary_line(self) -> str:
        parts = [f"shared={self.num_shared}"]
        parts += [f"specific_view{k}={n}" for k, n in enumerate(self.num_specific)]
        parts.append(f"dead={self.num_dead}")
        return " ".join(parts)


def structure_report(params: HarmoniumParams, threshold: float = 0.5) -> SwitchReport:
    """Classify hidden units by gated connectivity.

    A unit is connected to a view iff its gate is strictly greater than the
    threshold, so untrained switches (gate exactly 0.5) count as unconnected.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    connected = gates(params) > threshold
    counts = connected.sum(axis=0)
    shared = [j for j in range(params.hidden_dim) if counts[j] >= 2]
    dead = [j for j in range(params.hidden_dim) if counts[j] == 0]
    specific = [[j for j in range(params.hidden_dim)
                 if counts[j] == 1 and connected[k, j]]
                for k in range(params.num_views)]
    return SwitchReport(threshold=threshold, connected=connected,
                        shared_units=shared, specific_units=specific,
                        dead_units=dead)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _params_to_dict(params: HarmoniumParams) -> dict:
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "structure": {"kind": params.structure.kind.value},
        "views": [{"name": v.name, "dim": v.dim, "family": v.family.value}
                  for v in params.views],
        "hidden": {"dim": params.hidden_dim, "family": params.hidden_family.value},
        "arrays": {},
    }
    if params.structure.mask is not None:
        doc["structure"]["mask"] = params.structure.mask.astype(int).tolist()

    def put(name, arr):
        doc["arrays"][name] = {"shape": list(arr.shape),
                               "data": arr.ravel(order="C").tolist()}

    for k in range(params.num_views):
        put(f"W{k}", params.W[k])
        put(f"xi{k}", params.xi[k])
    put("lam", params.lam)
    put("s", params.s)
    return doc


def _params_from_dict(doc: dict) -> HarmoniumParams:
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {version}")
    views = [ViewConfig(v["name"], v["dim"], Family(v["family"]))
             for v in doc["views"]]
    kind = StructureKind(doc["structure"]["kind"])
    mask = doc["structure"].get("mask")
    structure = StructureMode(kind, None if mask is None else np.asarray(mask, dtype=bool))

    def get(name):
        entry = doc["arrays"][name]
        return np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])

    return HarmoniumParams(
        views=views,
        hidden_dim=doc["hidden"]["dim"],
        hidden_family=Family(doc["hidden"]["family"]),
        W=[get(f"W{k}") for k in range(len(views))],
        xi=[get(f"xi{k}") for k in range(len(views))],
        lam=get("lam"),
        s=get("s"),
        structure=structure,
    )


def save_checkpoint(params: HarmoniumParams, path: str) -> None:
    """Write a checkpoint atomically (temp file + rename).

    JSON float serialization uses shortest round-trip repr, so finite doubles
    survive save/load bit-exactly.
    """
    doc = _params_to_dict(params)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> HarmoniumParams:
    with open(path) as fh:
        return _params_from_dict(json.load(fh))
