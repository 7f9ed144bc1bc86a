"""Model-parameter and data randomization checks for saliency methods.

Maps are compared numerically: Spearman correlation of absolute scores (ties
get average ranks) and the fraction of nonzero elements. A map with no rank
information (constant, e.g. blank) correlates 0 with any map that has some,
and 1 with another constant map (all elements tied in both).
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from .attribution import DEFAULT_EPSILON, Method, SaliencyMap, cgi, grad_input_stack, lrp_stack
from .data_io import LabeledDataset, permute_labels
from .nn import Network, TrainConfig, build_network, cascading_randomize, randomize_layer, train

NONZERO_THRESHOLD = 1e-12
DEFAULT_EVAL_IMAGES = 64


class Mode(str, enum.Enum):
    LAYERWISE = "layerwise"
    CASCADING = "cascading"


@dataclass
class RandomizationPlan:
    """``targets`` are layer indices (layerwise) or top-k depths (cascading)."""

    mode: Mode
    targets: List[int]
    seed: int = 0

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.targets = [int(t) for t in self.targets]
        if not self.targets:
            raise ValueError("randomization plan has no targets")

    @classmethod
    def full(cls, net: Network, mode, seed: int = 0) -> "RandomizationPlan":
        """Every parameterized layer (layerwise) or every depth 1..L (cascading)."""
        idx = net.param_layer_indices
        targets = idx if Mode(mode) is Mode.LAYERWISE else list(range(1, len(idx) + 1))
        return cls(mode, targets, seed)

    def validate(self, net: Network):
        idx = net.param_layer_indices
        for t in self.targets:
            if self.mode is Mode.LAYERWISE and t not in idx:
                raise ValueError(f"layer {t} is not a parameterized layer (have {idx})")
            if self.mode is Mode.CASCADING and not 1 <= t <= len(idx):
                raise ValueError(f"cascade depth {t} outside [1, {len(idx)}]")

    def conditions(self, net: Network):
        """(label, randomized network) pairs, in plan order."""
        self.validate(net)
        for t in self.targets:
            if self.mode is Mode.LAYERWISE:
                yield f"layer{t}", randomize_layer(net, t, self.seed)
            else:
                yield f"cascade_top{t}", cascading_randomize(net, t, self.seed)


@dataclass
class SanityRow:
    condition: str
    method: str
    nonzero_fraction: float
    spearman_vs_trained: float
    spearman_abs_vs_input: float


@dataclass
class SanityReport:
    rows: List[SanityRow] = field(default_factory=list)
    info: Dict[str, float] = field(default_factory=dict)

    def row(self, condition: str, method) -> SanityRow:
        method = Method(method).value
        for r in self.rows:
            if r.condition == condition and r.method == method:
                return r
        raise KeyError((condition, method))

    @property
    def conditions(self) -> List[str]:
        return list(dict.fromkeys(r.condition for r in self.rows))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["condition", "method", "nonzero_fraction", "spearman_vs_trained", "spearman_abs_vs_input"])
        for r in self.rows:
            w.writerow([r.condition, r.method, f"{r.nonzero_fraction:.6f}",
                        f"{r.spearman_vs_trained:.6f}", f"{r.spearman_abs_vs_input:.6f}"])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def summary(self) -> str:
        lines = [f"{'condition':<18}{'method':<11}{'nonzero':>9}{'rho_trained':>13}{'rho_input':>11}"]
        for r in self.rows:
            lines.append(f"{r.condition:<18}{r.method:<11}{r.nonzero_fraction:>9.4f}"
                         f"{r.spearman_vs_trained:>13.4f}{r.spearman_abs_vs_input:>11.4f}")
        for key in sorted(self.info):
            lines.append(f"{key}: {self.info[key]:.4f}")
        return "\n".join(lines) + "\n"


def spearman_abs(a, b) -> float:
    """Spearman correlation of |a| and |b| with average ranks for ties."""
    a = np.abs(np.ravel(a))
    b = np.abs(np.ravel(b))
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    flat_a, flat_b = np.ptp(a) == 0, np.ptp(b) == 0
    if flat_a or flat_b:
        return 1.0 if flat_a and flat_b else 0.0
    return float(np.clip(spearmanr(a, b).statistic, -1.0, 1.0))


def nonzero_fraction(scores) -> float:
    return float(np.mean(np.abs(scores) > NONZERO_THRESHOLD))


def map_similarity(a: SaliencyMap, b: SaliencyMap) -> dict:
    sa, sb = np.asarray(getattr(a, "scores", a)), np.asarray(getattr(b, "scores", b))
    if sa.shape != sb.shape:
        raise ValueError(f"shape mismatch: {sa.shape} vs {sb.shape}")
    return {"spearman_abs": spearman_abs(sa, sb),
            "nonzero_a": nonzero_fraction(sa),
            "nonzero_b": nonzero_fraction(sb)}


def compute_maps(net: Network, x, methods: Sequence, chosen: int,
                 epsilon: float = DEFAULT_EPSILON) -> Dict[str, np.ndarray]:
    """Maps for several methods, sharing the per-node stacks."""
    methods = [Method(m) for m in methods]
    out = {}
    if Method.GRAD_INPUT in methods or Method.CGI in methods:
        st = grad_input_stack(net, x, chosen)
        out[Method.GRAD_INPUT.value] = st.scores[chosen]
        out[Method.CGI.value] = cgi(st).scores
    if Method.LRP in methods or Method.CLRP in methods:
        st = lrp_stack(net, x, epsilon, chosen)
        out[Method.LRP.value] = st.scores[chosen]
        out[Method.CLRP.value] = cgi(st).scores
    return {m.value: out[m.value] for m in methods}


def _targets(net, images, target):
    if target == "label":
        return images.labels
    if target == "predicted":
        return net.predict(images.images)
    raise ValueError(f"target must be 'label' or 'predicted', got {target!r}")


def _evaluate(net, images, methods, target, epsilon):
    chosen = _targets(net, images, target)
    return [compute_maps(net, x, methods, int(c), epsilon) for x, c in zip(images.images, chosen)]


def _rows(condition, maps, reference, images, methods):
    rows = []
    for m in (Method(m).value for m in methods):
        nz = [nonzero_fraction(mp[m]) for mp in maps]
        vs_trained = [spearman_abs(mp[m], ref[m]) for mp, ref in zip(maps, reference)]
        vs_input = [spearman_abs(mp[m], x) for mp, x in zip(maps, images.images)]
        rows.append(SanityRow(condition, m, float(np.mean(nz)), float(np.mean(vs_trained)),
                              float(np.mean(vs_input))))
    return rows


def _write_heatmaps(directory, condition, maps, methods):
    from .render import Style, render_heatmap
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, mp in enumerate(maps):
        for m in (Method(m).value for m in methods):
            render_heatmap(SaliencyMap(mp[m], m, 0), Style.DIVERGING, d / f"{condition}_{m}_{i:03d}.ppm")


def run_parameter_randomization(net: Network, images: LabeledDataset, plan: RandomizationPlan,
                                methods: Sequence = ("gradinput", "cgi"), *,
                                n_images: int = DEFAULT_EVAL_IMAGES, target: str = "label",
                                epsilon: float = DEFAULT_EPSILON,
                                heatmap_dir=None) -> SanityReport:
    """Compare maps of the trained net with maps of each randomized condition.

    ``target`` picks the explained node per image: its true label (default)
    or whatever the evaluated network predicts.
    """
    if len(images) == 0:
        raise ValueError("no images to evaluate")
    images = images.subset(slice(0, n_images))
    plan.validate(net)
    reference = _evaluate(net, images, methods, target, epsilon)
    report = SanityReport()
    report.rows += _rows("trained", reference, reference, images, methods)
    if heatmap_dir is not None:
        _write_heatmaps(heatmap_dir, "trained", reference, methods)
    for label, rnet in plan.conditions(net):
        maps = _evaluate(rnet, images, methods, target, epsilon)
        report.rows += _rows(label, maps, reference, images, methods)
        report.info[f"accuracy_{label}"] = rnet.accuracy(images.images, images.labels)
        if heatmap_dir is not None:
            _write_heatmaps(heatmap_dir, label, maps, methods)
    report.info["accuracy_trained"] = net.accuracy(images.images, images.labels)
    return report


def run_data_randomization(arch: str, train_set: LabeledDataset, cfg: TrainConfig,
                           methods: Sequence = ("gradinput", "cgi"), *,
                           eval_images: Optional[LabeledDataset] = None,
                           n_images: int = DEFAULT_EVAL_IMAGES, init_seed: int = 0,
                           permute_seed: int = 1, bias: bool = True, target: str = "label",
                           epsilon: float = DEFAULT_EPSILON, heatmap_dir=None) -> SanityReport:
    """Train the same architecture on true and on permuted labels; compare maps.

    Both runs start from the same initialization and shuffling seed. Maps are
    computed on ``eval_images`` (held out) and compared against the true-label
    model. ``info`` carries both training accuracies.
    """
    if eval_images is None or len(eval_images) == 0:
        raise ValueError("held-out evaluation images are required")
    input_shape = train_set.images.shape[1:]
    eval_images = eval_images.subset(slice(0, n_images))
    permuted = permute_labels(train_set, permute_seed)
    report = SanityReport()
    reference = None
    for label, ds in (("true_labels", train_set), ("permuted_labels", permuted)):
        net = build_network(arch, input_shape, seed=init_seed, bias=bias)
        tr = train(net, ds.images, ds.labels, cfg)
        report.info[f"train_accuracy_{label}"] = tr.train_accuracy if tr.train_accuracy is not None else float("nan")
        report.info[f"heldout_accuracy_{label}"] = net.accuracy(eval_images.images, eval_images.labels)
        maps = _evaluate(net, eval_images, methods, target, epsilon)
        if reference is None:
            reference = maps
        report.rows += _rows(label, maps, reference, eval_images, methods)
        if heatmap_dir is not None:
            _write_heatmaps(heatmap_dir, label, maps, methods)
    return report
