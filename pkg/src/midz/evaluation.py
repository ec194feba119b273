"""Measuring what trained representations contain.

Probes are small classifiers trained on frozen representations; the
distance to ideal compares their per-factor accuracies with the profile a
perfectly disentangled code would give (perfect on its own factors, chance
on the others). Also here: nearest-neighbor classification and retrieval,
the lambda_adv sweep, the ablation suite and pixel-level MI maps.
"""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import networks as nn
from .autodiff import DTYPE, Tensor, adam_step, backward, ops
from .autodiff.adam import AdamState
from .data import FactorSchema, PairDataset
from .model import ModelBundle
from .trainer import TrainConfig, train_exclusive, train_shared

DEFAULT_LAMBDAS = (0.0, 0.005, 0.01, 0.025, 0.05)


# ------------------------------------------------------------ representations

def compute_representations(bundle: ModelBundle, images: np.ndarray, kind: str, domain: str,
                            batch_size: int = 512) -> np.ndarray:
    """S or E for every image, computed without recording gradients."""
    role = {"shared": "shared_encoder", "exclusive": "exclusive_encoder"}.get(kind)
    if role is None:
        raise ValueError(f"kind must be 'shared' or 'exclusive', got {kind!r}")
    params = nn.detached(bundle.net(role, domain))
    out = [nn.encode(Tensor(images[i:i + batch_size]), params)[1].data
           for i in range(0, len(images), batch_size)]
    if not out:
        dim = bundle.shared_dim if kind == "shared" else bundle.exclusive_dim
        return np.zeros((0, dim), DTYPE)
    return np.concatenate(out)


# ---------------------------------------------------------------- probes

@dataclass(frozen=True)
class ProbeConfig:
    hidden_width: int = 64
    lr: float = 1e-3
    steps: int = 3000
    batch_size: int = 128
    seed: int = 0
    test_fraction: float = 0.2

    @property
    def hidden_layers(self) -> int:
        return 2


@dataclass
class ProbeResult:
    params: dict[str, Tensor]
    mean: np.ndarray
    std: np.ndarray
    n_classes: int
    accuracy: float

    def predict(self, reps: np.ndarray) -> np.ndarray:
        return np.argmax(_probe_logits(self.params, (reps - self.mean) / self.std).data, axis=1)


def split_indices(n: int, seed: int, test_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic disjoint train/test index sets."""
    if n < 2:
        raise ValueError("need at least 2 samples to split")
    perm = np.random.default_rng([seed, 80_20]).permutation(n)
    n_test = min(n - 1, max(1, int(round(n * test_fraction))))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def _probe_logits(params, x) -> Tensor:
    h = Tensor(np.asarray(x, DTYPE))
    for layer in ("l1", "l2"):
        h = ops.relu(ops.bias_add(ops.matmul(h, params[f"{layer}.w"]), params[f"{layer}.b"]))
    return ops.bias_add(ops.matmul(h, params["l3.w"]), params["l3.b"])


def train_probe(reps: np.ndarray, labels: np.ndarray, config: ProbeConfig = ProbeConfig(),
                n_classes: int | None = None) -> ProbeResult:
    """Fit a 2-hidden-layer classifier on the train split; report held-out accuracy."""
    reps = np.asarray(reps, DTYPE)
    labels = np.asarray(labels, np.int64)
    if reps.ndim != 2 or len(reps) != len(labels):
        raise ValueError(f"train_probe: reps {reps.shape} and labels {labels.shape} disagree")
    if np.unique(labels).size < 2:
        raise ValueError("train_probe: labels contain a single class")
    n_classes = int(n_classes if n_classes is not None else labels.max() + 1)
    tr, te = split_indices(len(reps), config.seed, config.test_fraction)
    mean = reps[tr].mean(axis=0, dtype=np.float64).astype(DTYPE)
    std = np.maximum(reps[tr].std(axis=0, dtype=np.float64), 1e-6).astype(DTYPE)
    x = (reps - mean) / std

    rng = np.random.default_rng([config.seed, 0x9B0E])
    params: dict[str, Tensor] = {}
    w = config.hidden_width
    nn._dense(params, "l1", rng, reps.shape[1], w)
    nn._dense(params, "l2", rng, w, w)
    nn._dense(params, "l3", rng, w, n_classes)
    state = AdamState(lr=config.lr)
    xtr, ytr = x[tr], labels[tr]
    bs = min(config.batch_size, len(tr))
    for _ in range(config.steps):
        idx = rng.integers(0, len(tr), size=bs)
        loss = ops.cross_entropy(_probe_logits(params, xtr[idx]), ytr[idx])
        adam_step(params, backward(loss, params), state)
    for t in params.values():
        t.requires_grad = False
    result = ProbeResult(params, mean, std, n_classes, 0.0)
    result.accuracy = float((result.predict(reps[te]) == labels[te]).mean())
    return result


# ------------------------------------------------------------ ideal profiles

def distance_to_ideal(accuracies: Sequence[float], ideal: Sequence[float]) -> float:
    """L1 distance between accuracy vectors."""
    a = np.asarray(accuracies, np.float64)
    b = np.asarray(ideal, np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"distance_to_ideal: length mismatch {a.shape} vs {b.shape}")
    if ((a < 0) | (a > 1) | (b < 0) | (b > 1)).any():
        raise ValueError("distance_to_ideal: accuracies must lie in [0, 1]")
    return float(np.abs(a - b).sum())


def chance_levels(schema: FactorSchema) -> list[float]:
    return [1.0 / c for c in schema.cardinalities]


def ideal_accuracies(schema: FactorSchema, kind: str) -> list[float]:
    """Perfect on the factors a representation should hold, chance on the rest."""
    if kind not in ("shared", "exclusive"):
        raise ValueError(f"kind must be 'shared' or 'exclusive', got {kind!r}")
    want_shared = kind == "shared"
    return [1.0 if sh == want_shared else 1.0 / c for c, sh in zip(schema.cardinalities, schema.shared)]


# ------------------------------------------------------- neighbours

def _sq_distances(query: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    q = np.asarray(query, np.float64)
    g = np.asarray(gallery, np.float64)
    return ((q[:, None, :] - g[None, :, :]) ** 2).sum(axis=2)


def _ranked(query: np.ndarray, gallery: np.ndarray, k: int, chunk: int = 256) -> np.ndarray:
    out = np.empty((len(query), k), np.int64)
    for i in range(0, len(query), chunk):
        d = _sq_distances(query[i:i + chunk], gallery)
        out[i:i + chunk] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def knn_classify(query_reps, gallery_reps, gallery_labels, n_neighbors: int) -> np.ndarray:
    """Majority vote over the N nearest gallery items (Euclidean).

    Equal distances rank the lower gallery index first; a tied vote goes to
    the tied label held by the nearest neighbour.
    """
    query = np.atleast_2d(np.asarray(query_reps))
    gallery = np.atleast_2d(np.asarray(gallery_reps))
    labels = np.asarray(gallery_labels)
    if len(gallery) == 0:
        raise ValueError("knn_classify: empty gallery")
    if len(labels) != len(gallery):
        raise ValueError("knn_classify: gallery labels and reps differ in length")
    if not 1 <= n_neighbors <= len(gallery):
        raise ValueError(f"knn_classify: N={n_neighbors} must be in [1, {len(gallery)}]")
    nearest = labels[_ranked(query, gallery, n_neighbors)]
    preds = np.empty(len(query), labels.dtype)
    for i, row in enumerate(nearest):
        values, counts = np.unique(row, return_counts=True)
        tied = set(values[counts == counts.max()].tolist())
        preds[i] = next(v for v in row if v in tied)
    return preds


def retrieve(query_rep, gallery_reps, k: int) -> np.ndarray:
    """Indices of the k nearest gallery items, ascending distance, stable on ties."""
    gallery = np.atleast_2d(np.asarray(gallery_reps))
    if k < 0 or k > len(gallery):
        raise ValueError(f"retrieve: k={k} must be in [0, {len(gallery)}]")
    if k == 0:
        return np.zeros(0, np.int64)
    return _ranked(np.asarray(query_rep).reshape(1, -1), gallery, k)[0]


# ---------------------------------------------------------------- reports

@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    distances: dict[str, float] = field(default_factory=dict)
    knn: list[dict] = field(default_factory=list)
    sweep: list[dict] = field(default_factory=list)

    def accuracy(self, representation: str, factor: str) -> float:
        for r in self.rows:
            if r["representation"] == representation and r["factor"] == factor:
                return r["accuracy"]
        raise KeyError((representation, factor))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["representation", "factor", "accuracy", "chance", "ideal"])
            for r in self.rows:
                w.writerow([r["representation"], r["factor"], repr(r["accuracy"]), repr(r["chance"]), repr(r["ideal"])])

    def format_table(self) -> str:
        lines = [f"{'representation':<16}{'factor':<16}{'accuracy':>10}{'chance':>10}{'ideal':>8}"]
        for r in self.rows:
            lines.append(f"{r['representation']:<16}{r['factor']:<16}{r['accuracy']:>10.4f}"
                         f"{r['chance']:>10.4f}{r['ideal']:>8.4f}")
        for name, d in self.distances.items():
            lines.append(f"distance to ideal [{name}]: {d:.4f}")
        for k in self.knn:
            lines.append(f"kNN [{k['representation']}] {k['factor']} N={k['n']}: {k['accuracy']:.4f}")
        return "\n".join(lines)


def probe_representation(report: EvalReport, name: str, kind: str, reps: np.ndarray,
                         labels: np.ndarray, schema: FactorSchema, probe: ProbeConfig) -> None:
    ideal = ideal_accuracies(schema, kind)
    accs = []
    for j, factor in enumerate(schema.names):
        acc = train_probe(reps, labels[:, j], probe, n_classes=schema.cardinalities[j]).accuracy
        accs.append(acc)
        report.rows.append({"representation": name, "factor": factor, "accuracy": acc,
                            "chance": 1.0 / schema.cardinalities[j], "ideal": ideal[j]})
    report.distances[name] = distance_to_ideal(accs, ideal)


def evaluate(bundle: ModelBundle, data: PairDataset, probe: ProbeConfig = ProbeConfig(),
             domains: Sequence[str] = ("x", "y"), kinds: Sequence[str] = ("shared", "exclusive"),
             knn_neighbors: Sequence[int] = ()) -> EvalReport:
    """Probe every (representation, factor); optionally add kNN accuracies on the same split."""
    report = EvalReport()
    for d in domains:
        images = data.images_x if d == "x" else data.images_y
        labels = data.labels_x if d == "x" else data.labels_y
        for kind in kinds:
            if kind == "exclusive" and bundle.stage < 2:
                continue
            name = f"{'S' if kind == 'shared' else 'E'}_{d}"
            reps = compute_representations(bundle, images, kind, d)
            probe_representation(report, name, kind, reps, labels, data.schema, probe)
            if knn_neighbors:
                tr, te = split_indices(len(reps), probe.seed, probe.test_fraction)
                for j, factor in enumerate(data.schema.names):
                    for n in knn_neighbors:
                        pred = knn_classify(reps[te], reps[tr], labels[tr, j], n)
                        report.knn.append({"representation": name, "factor": factor, "n": int(n),
                                           "accuracy": float((pred == labels[te, j]).mean())})
    return report


# -------------------------------------------------------- sweeps/ablation

def _clone(bundle: ModelBundle) -> ModelBundle:
    return copy.deepcopy(bundle)


def lambda_sweep(data: PairDataset, config: TrainConfig, stage1: ModelBundle,
                 values: Sequence[float] = DEFAULT_LAMBDAS, probe: ProbeConfig = ProbeConfig(),
                 domain: str = "x", bundles_out: dict | None = None) -> list[dict]:
    """Train stage 2 once per lambda_adv from the same stage-1 model; probe E on every factor.

    Returns one row per (lambda, factor).
    """
    if stage1.stage != 1:
        raise ValueError("lambda_sweep needs a stage-1 bundle")
    rows = []
    labels = data.labels_x if domain == "x" else data.labels_y
    images = data.images_x if domain == "x" else data.images_y
    for lam in values:
        cfg = replace(config, coeffs=replace(config.coeffs, lambda_adv=float(lam)))
        bundle = train_exclusive(data, cfg, _clone(stage1))
        if bundles_out is not None:
            bundles_out[float(lam)] = bundle
        reps = compute_representations(bundle, images, "exclusive", domain)
        for j, factor in enumerate(data.schema.names):
            acc = train_probe(reps, labels[:, j], probe, n_classes=data.schema.cardinalities[j]).accuracy
            rows.append({"lambda": float(lam), "factor": factor, "accuracy": acc})
    return rows


def write_sweep_csv(rows: Sequence[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "factor", "accuracy"])
        for r in rows:
            w.writerow([repr(r["lambda"]), r["factor"], repr(r["accuracy"])])


# name -> (coefficient overrides, non_ssr, stage the variant changes)
ABLATION_VARIANTS = {
    "baseline": ({}, False, 1),
    "non_ssr": ({}, True, 1),
    "gamma0": ({"gamma": 0.0}, False, 1),
    "alpha_sh0": ({"alpha_sh": 0.0}, False, 1),
    "beta_sh0": ({"beta_sh": 0.0}, False, 1),
    "alpha_ex0": ({"alpha_ex": 0.0}, False, 2),
    "beta_ex0": ({"beta_ex": 0.0}, False, 2),
}


def ablation_suite(data: PairDataset, config: TrainConfig, variants: Sequence[str] = tuple(ABLATION_VARIANTS),
                   probe: ProbeConfig = ProbeConfig(), domain: str = "x",
                   stage1_cache: dict | None = None) -> list[dict]:
    """Per-variant probe accuracies and distance to ideal, same seeds everywhere.

    Stage-1 variants report the shared representation; stage-2 variants
    train stage 2 on the baseline stage-1 model and report the exclusive
    one. ``stage1_cache`` maps variant name to an already trained stage-1
    bundle and is filled as variants are trained.
    """
    cache = stage1_cache if stage1_cache is not None else {}
    images = data.images_x if domain == "x" else data.images_y
    labels = data.labels_x if domain == "x" else data.labels_y
    out = []
    for name in variants:
        if name not in ABLATION_VARIANTS:
            raise ValueError(f"unknown ablation variant {name!r}; known: {', '.join(ABLATION_VARIANTS)}")
        overrides, non_ssr, stage = ABLATION_VARIANTS[name]
        cfg = replace(config, coeffs=replace(config.coeffs, **overrides), non_ssr=non_ssr)
        s1_key = name if stage == 1 else "baseline"
        if s1_key not in cache:
            s1_cfg = cfg if stage == 1 else replace(config, non_ssr=False)
            cache[s1_key] = train_shared(data, s1_cfg)
        if stage == 1:
            bundle, kind = cache[s1_key], "shared"
        else:
            bundle, kind = train_exclusive(data, cfg, _clone(cache[s1_key])), "exclusive"
        report = EvalReport()
        rep_name = f"{'S' if kind == 'shared' else 'E'}_{domain}"
        reps = compute_representations(bundle, images, kind, domain)
        probe_representation(report, rep_name, kind, reps, labels, data.schema, probe)
        out.append({"variant": name, "representation": rep_name,
                    "accuracies": {r["factor"]: r["accuracy"] for r in report.rows},
                    "distance": report.distances[rep_name]})
    return out


def format_ablation(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    factors = list(rows[0]["accuracies"])
    lines = [f"{'variant':<12}{'rep':<6}" + "".join(f"{f:>14}" for f in factors) + f"{'distance':>10}"]
    for r in rows:
        lines.append(f"{r['variant']:<12}{r['representation']:<6}"
                     + "".join(f"{r['accuracies'][f]:>14.4f}" for f in factors) + f"{r['distance']:>10.4f}")
    return "\n".join(lines)


# ---------------------------------------------------------------- MI maps

def _patches(image: np.ndarray, centers: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    ph, pw = size
    H, W, C = image.shape
    top, left = ph // 2, pw // 2
    padded = np.zeros((H + ph, W + pw, C), DTYPE)
    padded[top:top + H, left:left + W] = image
    return np.stack([padded[r:r + ph, c:c + pw] for r, c in centers])


def mi_distance_map(bundle: ModelBundle, image: np.ndarray, reference_pixel: tuple[int, int],
                    domain: str = "x", batch_size: int = 256) -> np.ndarray:
    """Global-scorer agreement between the patch at ``reference_pixel`` and the patch at every pixel.

    Patches have the encoder's input size, are centred on the pixel and
    zero-padded outside the image. Scores are min-max normalized to [0, 1].
    """
    image = np.asarray(image, DTYPE)
    if image.ndim != 3:
        raise ValueError(f"mi_distance_map: expected (H, W, C) image, got {image.shape}")
    H, W, _ = image.shape
    r0, c0 = reference_pixel
    if not (0 <= r0 < H and 0 <= c0 < W):
        raise ValueError(f"mi_distance_map: reference pixel {reference_pixel} outside {H}x{W} image")
    size = bundle.image_shape[:2]
    enc = nn.detached(bundle.net("shared_encoder", domain))
    scorer = nn.detached(bundle.net("shared_global", domain))
    ref_fmap = nn.feature_map(Tensor(_patches(image, np.array([[r0, c0]]), size)), enc)
    ref_summary = nn.global_summary(ref_fmap, scorer).data

    centers = np.array([(r, c) for r in range(H) for c in range(W)])
    scores = np.empty(len(centers), np.float64)
    for i in range(0, len(centers), batch_size):
        chunk = _patches(image, centers[i:i + batch_size], size)
        _, s = nn.encode(Tensor(chunk), enc)
        summary = Tensor(np.repeat(ref_summary, len(chunk), axis=0))
        scores[i:i + len(chunk)] = nn.global_head(summary, s, scorer).data
    lo, hi = scores.min(), scores.max()
    norm = (scores - lo) / (hi - lo) if hi > lo else np.ones_like(scores)
    return norm.reshape(H, W)


__all__ = ["DEFAULT_LAMBDAS", "ABLATION_VARIANTS", "EvalReport", "ProbeConfig", "ProbeResult",
           "ablation_suite", "chance_levels", "compute_representations", "distance_to_ideal", "evaluate",
           "format_ablation", "ideal_accuracies", "knn_classify", "lambda_sweep", "mi_distance_map",
           "retrieve", "split_indices", "train_probe", "write_sweep_csv"]
