"""Synthetic data from an anti-causal structural model with style latents.

The sampling order is Y -> ID -> (core, style) -> X. Core latents are a
deterministic function of (Y, ID); style latents get fresh noise per
observation, so observations sharing (Y, ID) differ only in style. Latents
are retained so features can be re-rendered under shifted style, which is
what every robustness probe in this package consumes.

Two 2-d teaching generators are included: one where style acts along a
fixed linear direction, and one where style is the polar angle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Sample

__all__ = [
    "LinearScmSpec",
    "InterventionSpec",
    "StyleAwareDataset",
    "sample_linear_scm",
    "gen_example1",
    "gen_example2",
    "rerender",
    "expand_assignment",
    "save_latents",
    "load_style_dataset",
    "EXAMPLE1_STYLE_DIRECTION",
]

# style direction of the linear teaching example, normalized (1, -0.75)
EXAMPLE1_STYLE_DIRECTION = np.array([0.8, -0.6])
_EXAMPLE1_CORE_DIRECTION = np.array([0.6, 0.8])


@dataclass(frozen=True)
class LinearScmSpec:
    """Partially linear model: X = C core + W style.

    p, q, r          feature, style and core dimensions (r + q <= p)
    class_balance    P(Y = +1); Y takes values in {-1, +1}
    id_count         ids per class; the id sampler draws from this pool
    id_sampler       'uniform' (collisions create groups) or 'round_robin'
                     (equal group sizes n / (2 id_count) per class)
    core_class_mean  core latent mean is  y * core_class_mean * e_1
    core_id_scale    sd of the per-(y, id) deterministic core offset
    style_class_mean style latent mean is y * style_class_mean (length q)
    style_cov        within-(Y, ID) style noise covariance, q x q SPD
    structure_seed   seeds the jointly orthonormal C (p x r) and W (p x q)
    """

    p: int
    q: int
    r: int
    class_balance: float = 0.5
    id_count: int = 1000
    id_sampler: str = "uniform"
    core_class_mean: float = 1.5
    core_id_scale: float = 0.25
    style_class_mean: tuple = (1.0,)
    style_cov: tuple = ((1.0,),)
    structure_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "style_class_mean",
                           tuple(float(v) for v in self.style_class_mean))
        object.__setattr__(self, "style_cov",
                           tuple(tuple(float(v) for v in row) for row in self.style_cov))
        if self.r + self.q > self.p:
            raise ValueError("core and style dimensions exceed the feature dimension")
        if self.q < 1 or self.r < 1:
            raise ValueError("q and r must be positive")
        if len(self.style_class_mean) != self.q:
            raise ValueError("style_class_mean must have length q")
        cov = np.asarray(self.style_cov)
        if cov.shape != (self.q, self.q):
            raise ValueError("style_cov must be q x q")
        if not np.allclose(cov, cov.T):
            raise ValueError("style_cov must be symmetric")
        if np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ValueError("style_cov must be positive definite")
        if self.id_sampler not in ("uniform", "round_robin"):
            raise ValueError(f"unknown id sampler {self.id_sampler!r}")
        if not 0.0 < self.class_balance < 1.0:
            raise ValueError("class_balance must lie strictly between 0 and 1")

    def matrices(self):
        """Jointly orthonormal embeddings (C, W); W has full column rank q."""
        rng = np.random.default_rng(self.structure_seed)
        a = rng.standard_normal((self.p, self.r + self.q))
        q_mat, _ = np.linalg.qr(a)
        return q_mat[:, :self.r], q_mat[:, self.r:self.r + self.q]

    def core_latent(self, y_pm: int, ident: int) -> np.ndarray:
        """Deterministic k_core(y, id): class mean plus a hash-seeded offset."""
        base = np.zeros(self.r)
        base[0] = self.core_class_mean * y_pm
        rng = np.random.default_rng(
            [self.structure_seed & 0xFFFFFFFF, 7919, int(y_pm) + 2, int(ident)]
        )
        return base + self.core_id_scale * rng.standard_normal(self.r)

    def to_dict(self) -> dict:
        return {
            "p": self.p, "q": self.q, "r": self.r,
            "class_balance": self.class_balance,
            "id_count": self.id_count,
            "id_sampler": self.id_sampler,
            "core_class_mean": self.core_class_mean,
            "core_id_scale": self.core_id_scale,
            "style_class_mean": list(self.style_class_mean),
            "style_cov": [list(row) for row in self.style_cov],
            "structure_seed": self.structure_seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "LinearScmSpec":
        return LinearScmSpec(
            int(d["p"]), int(d["q"]), int(d["r"]),
            float(d["class_balance"]), int(d["id_count"]), d["id_sampler"],
            float(d["core_class_mean"]), float(d["core_id_scale"]),
            tuple(d["style_class_mean"]),
            tuple(tuple(row) for row in d["style_cov"]),
            int(d["structure_seed"]),
        )


@dataclass(frozen=True)
class InterventionSpec:
    """Shift applied to style latents at sampling time.

    kind 'none', 'mean_shift' (delta added to every sample),
    'per_class_shift' (delta_by_class[label] added), or 'random_shift'
    (Gaussian shift with the given mean and sd drawn per sample).
    """

    kind: str = "none"
    delta: tuple = ()
    delta_by_class: tuple = ()   # (delta_for_label0, delta_for_label1, ...)
    random_sd: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "mean_shift", "per_class_shift", "random_shift"):
            raise ValueError(f"unknown intervention kind {self.kind!r}")
        object.__setattr__(self, "delta", tuple(float(v) for v in self.delta))
        object.__setattr__(
            self, "delta_by_class",
            tuple(tuple(float(v) for v in d) for d in self.delta_by_class),
        )

    def draw(self, labels: np.ndarray, q: int, rng) -> np.ndarray:
        n = len(labels)
        if self.kind == "none":
            return np.zeros((n, q))
        if self.kind == "mean_shift":
            d = np.asarray(self.delta)
            if d.shape != (q,):
                raise ValueError("mean_shift delta must have length q")
            return np.tile(d, (n, 1))
        if self.kind == "per_class_shift":
            table = np.asarray(self.delta_by_class)
            if table.ndim != 2 or table.shape[1] != q:
                raise ValueError("per_class_shift needs one length-q delta per class")
            return table[labels]
        shift = np.asarray(self.delta) if self.delta else np.zeros(q)
        return shift + self.random_sd * rng.standard_normal((n, q))


@dataclass
class StyleAwareDataset:
    """A Dataset plus the latents and render map needed to re-render it."""

    dataset: Dataset
    core: np.ndarray        # (n, r) core latents (radius for the polar render)
    style: np.ndarray       # (n, q) style latents as rendered
    render_kind: str        # 'linear' or 'polar'
    core_matrix: np.ndarray | None = None   # C for the linear render
    style_matrix: np.ndarray | None = None  # W for the linear render
    scm: LinearScmSpec | None = None
    generator: str = "custom"
    generator_params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.core = np.atleast_2d(np.asarray(self.core, dtype=float))
        self.style = np.atleast_2d(np.asarray(self.style, dtype=float))
        if self.core.shape[0] != len(self.dataset) or self.style.shape[0] != len(self.dataset):
            raise ValueError("latents must cover every sample")
        if self.render_kind not in ("linear", "polar"):
            raise ValueError(f"unknown render kind {self.render_kind!r}")
        if self.render_kind == "linear" and (self.core_matrix is None or self.style_matrix is None):
            raise ValueError("linear renders need core and style matrices")

    @property
    def q(self) -> int:
        return self.style.shape[1]

    def render(self, style: np.ndarray) -> np.ndarray:
        """Features for the stored cores under the given style latents."""
        return _render(self.render_kind, self.core, style,
                       self.core_matrix, self.style_matrix)


def _render(kind, core, style, core_matrix, style_matrix) -> np.ndarray:
    if kind == "linear":
        return core @ core_matrix.T + style @ style_matrix.T
    radius = core[:, 0]
    angle = style[:, 0]
    return np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])


def expand_assignment(assignment, n: int, q: int, group_index=None) -> np.ndarray:
    """Normalize a shift assignment to per-sample shape (n, q).

    Accepts a single length-q shift, an (n, q) per-sample array, or an
    (m, q) per-group array together with ``group_index``. When m == n the
    per-sample reading wins.
    """
    arr = np.asarray(assignment, dtype=float)
    if arr.ndim == 1:
        if arr.shape != (q,):
            raise ValueError(f"shift must have style dimension {q}")
        return np.tile(arr, (n, 1))
    if arr.shape == (n, q):
        return arr
    if group_index is not None and arr.shape == (group_index.m, q):
        out = np.empty((n, q))
        for j, g in enumerate(group_index.groups):
            out[g] = arr[j]
        return out
    raise ValueError(f"cannot interpret assignment of shape {arr.shape}")


def rerender(style_dataset: StyleAwareDataset, assignment, group_index=None) -> Dataset:
    """Re-render features with style latents shifted by ``assignment``;
    labels and ids are unchanged."""
    n = len(style_dataset.dataset)
    delta = expand_assignment(assignment, n, style_dataset.q, group_index)
    feats = style_dataset.render(style_dataset.style + delta)
    samples = [
        Sample(feats[i], s.label, s.id)
        for i, s in enumerate(style_dataset.dataset.samples)
    ]
    return Dataset(samples, style_dataset.dataset.p, style_dataset.dataset.n_classes)


def _finalize(features, labels, ids, n_classes=2) -> Dataset:
    samples = [Sample(features[i], int(labels[i]), ids[i]) for i in range(len(labels))]
    return Dataset(samples, features.shape[1], n_classes)


def sample_linear_scm(spec: LinearScmSpec, n: int, intervention: InterventionSpec,
                      seed: int) -> StyleAwareDataset:
    """Ancestral sampling from the partially linear model. Groups arise when
    the same (Y, ID) pair is drawn more than once."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = np.random.default_rng(seed)
    c_mat, w_mat = spec.matrices()
    y_pm = np.where(rng.random(n) < spec.class_balance, 1, -1)
    labels = ((y_pm + 1) // 2).astype(int)
    if spec.id_sampler == "uniform":
        idents = rng.integers(0, spec.id_count, size=n)
    else:
        idents = np.empty(n, dtype=int)
        counters = [0, 0]
        for i in range(n):
            cls = labels[i]
            idents[i] = counters[cls] % spec.id_count
            counters[cls] += 1
    core = np.empty((n, spec.r))
    cache: dict = {}
    for i in range(n):
        key = (int(y_pm[i]), int(idents[i]))
        if key not in cache:
            cache[key] = spec.core_latent(*key)
        core[i] = cache[key]
    mean = np.outer(y_pm, np.asarray(spec.style_class_mean))
    chol = np.linalg.cholesky(np.asarray(spec.style_cov))
    noise = rng.standard_normal((n, spec.q)) @ chol.T
    style = mean + noise + intervention.draw(labels, spec.q, rng)
    ids = [f"i{int(ident)}" for ident in idents]
    feats = _render("linear", core, style, c_mat, w_mat)
    return StyleAwareDataset(
        dataset=_finalize(feats, labels, ids),
        core=core,
        style=style,
        render_kind="linear",
        core_matrix=c_mat,
        style_matrix=w_mat,
        scm=spec,
        generator="linear_scm",
        generator_params={"n": n, "seed": seed, "intervention": intervention.kind},
    )


# ---- teaching example 1: style along a fixed linear direction -------------

def _example1_spec() -> dict:
    # class centers at (0, +/-1.2); isotropic sd 0.25 split between the core
    # direction (0.6, 0.8) and the style direction (0.8, -0.6); isotropy makes
    # the pooled boundary horizontal, i.e. reliant on the style coordinate
    return {
        "center": 1.2,
        "core_sd": 0.25,
        "style_sd": 0.25,
    }


def gen_example1(n: int, c: int, test_shift: float = 4.0, seed: int = 0):
    """Two 2-d Gaussian classes whose style direction is (1, -0.75)/|.|.

    Returns (train, test). The training classes are separated along the
    vertical axis, which mixes the core and style directions, so a pooled
    fit leans on style. In the test split the style coordinate of class 1
    is shifted by ``test_shift``, carrying that class across any boundary
    with a style component. c sample pairs share (Y, ID): same core
    coordinate, independently redrawn style.
    """
    params = _example1_spec()
    train = _sample_example1(n, c, 0.0, seed, params)
    test = _sample_example1(n, c, float(test_shift), seed + 1, params)
    extra = {"n": n, "c": c, "test_shift": float(test_shift), "seed": seed}
    for part, shifted in ((train, 0.0), (test, float(test_shift))):
        part.generator = "example1"
        part.generator_params = dict(extra, applied_shift=shifted, **params)
    return train, test


def _sample_example1(n, c, class1_style_shift, seed, params):
    if not 0 <= 2 * c <= n:
        raise ValueError("need 0 <= c <= n / 2")
    rng = np.random.default_rng(seed)
    center, core_sd, style_sd = params["center"], params["core_sd"], params["style_sd"]
    core_mu = 0.8 * center   # projection of (0, center) on the core direction
    style_mu = -0.6 * center  # projection on the style direction
    n_single = n - 2 * c
    y_pm = np.concatenate([
        np.where(rng.random(n_single) < 0.5, 1, -1),
        np.repeat(np.where(rng.random(c) < 0.5, 1, -1), 2),
    ])
    ids = [None] * n_single + [f"g{j}" for j in range(c) for _ in range(2)]
    core_vals = np.concatenate([
        y_pm[:n_single] * core_mu + core_sd * rng.standard_normal(n_single),
        np.repeat(y_pm[n_single::2] * core_mu + core_sd * rng.standard_normal(c), 2),
    ])
    style_vals = y_pm * style_mu + style_sd * rng.standard_normal(n)
    style_vals = style_vals + np.where(y_pm == 1, class1_style_shift, 0.0)
    labels = ((y_pm + 1) // 2).astype(int)
    core = core_vals[:, None]
    style = style_vals[:, None]
    c_mat = _EXAMPLE1_CORE_DIRECTION[:, None]
    w_mat = EXAMPLE1_STYLE_DIRECTION[:, None]
    feats = _render("linear", core, style, c_mat, w_mat)
    return StyleAwareDataset(
        dataset=_finalize(feats, labels, ids),
        core=core,
        style=style,
        render_kind="linear",
        core_matrix=c_mat,
        style_matrix=w_mat,
    )


# ---- teaching example 2: radius is core, polar angle is style -------------

def _example2_params() -> dict:
    return {
        "radius0": 1.0,
        "radius1": 2.0,
        "radius_sd": 0.1,
        # class 0 angles fill the lower half circle, class 1 the upper half
        "angle0_low": -np.pi, "angle0_high": 0.0,
        "angle1_low": 0.0, "angle1_high": np.pi,
    }


def gen_example2(n: int, c: int, test_shift: float = np.pi, seed: int = 0):
    """Concentric classes: radius separates them, the polar angle is style.

    Training angles live on class-specific half circles, so the sign of the
    vertical coordinate is the easy (style) feature. The test split rotates
    class-1 angles by ``test_shift`` (default pi). c pairs share (Y, ID) and
    radius while their angles are drawn independently.
    """
    params = _example2_params()
    train = _sample_example2(n, c, 0.0, seed, params)
    test = _sample_example2(n, c, float(test_shift), seed + 1, params)
    extra = {"n": n, "c": c, "test_shift": float(test_shift), "seed": seed}
    for part, shifted in ((train, 0.0), (test, float(test_shift))):
        part.generator = "example2"
        part.generator_params = dict(extra, applied_shift=shifted, **params)
    return train, test


def _sample_example2(n, c, class1_angle_shift, seed, params):
    if not 0 <= 2 * c <= n:
        raise ValueError("need 0 <= c <= n / 2")
    rng = np.random.default_rng(seed)
    n_single = n - 2 * c
    y_pm = np.concatenate([
        np.where(rng.random(n_single) < 0.5, 1, -1),
        np.repeat(np.where(rng.random(c) < 0.5, 1, -1), 2),
    ])
    labels = ((y_pm + 1) // 2).astype(int)
    ids = [None] * n_single + [f"g{j}" for j in range(c) for _ in range(2)]
    mu_r = np.where(labels == 1, params["radius1"], params["radius0"])
    radius = np.empty(n)
    radius[:n_single] = mu_r[:n_single] + params["radius_sd"] * rng.standard_normal(n_single)
    paired = mu_r[n_single::2] + params["radius_sd"] * rng.standard_normal(c)
    radius[n_single:] = np.repeat(paired, 2)
    low = np.where(labels == 1, params["angle1_low"], params["angle0_low"])
    high = np.where(labels == 1, params["angle1_high"], params["angle0_high"])
    angle = rng.uniform(low, high)
    angle = angle + np.where(y_pm == 1, class1_angle_shift, 0.0)
    core = radius[:, None]
    style = angle[:, None]
    feats = _render("polar", core, style, None, None)
    return StyleAwareDataset(
        dataset=_finalize(feats, labels, ids),
        core=core,
        style=style,
        render_kind="polar",
    )


# ---- latent sidecar ---------------------------------------------------------

def save_latents(style_dataset: StyleAwareDataset, path) -> None:
    payload = {
        "generator": style_dataset.generator,
        "generator_params": style_dataset.generator_params,
        "render_kind": style_dataset.render_kind,
        "core": [[float(v) for v in row] for row in style_dataset.core],
        "style": [[float(v) for v in row] for row in style_dataset.style],
    }
    if style_dataset.render_kind == "linear":
        payload["core_matrix"] = [[float(v) for v in row] for row in style_dataset.core_matrix]
        payload["style_matrix"] = [[float(v) for v in row] for row in style_dataset.style_matrix]
    if style_dataset.scm is not None:
        payload["scm"] = style_dataset.scm.to_dict()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_style_dataset(dataset: Dataset, path) -> StyleAwareDataset:
    """Reattach latents from a sidecar file to a loaded Dataset."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    kind = payload["render_kind"]
    ds = StyleAwareDataset(
        dataset=dataset,
        core=np.asarray(payload["core"], dtype=float),
        style=np.asarray(payload["style"], dtype=float),
        render_kind=kind,
        core_matrix=np.asarray(payload["core_matrix"]) if kind == "linear" else None,
        style_matrix=np.asarray(payload["style_matrix"]) if kind == "linear" else None,
        scm=LinearScmSpec.from_dict(payload["scm"]) if "scm" in payload else None,
        generator=payload.get("generator", "custom"),
        generator_params=payload.get("generator_params", {}),
    )
    recon = ds.render(ds.style)
    if not np.allclose(recon, dataset.features, rtol=0, atol=1e-9):
        raise ValueError("latent sidecar does not reproduce the dataset features")
    return ds
