"""End-to-end orchestration: data generation, staged training, evaluation and reports."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .decompose import DecompositionReport, HcdConfig, evaluate_decomposition, train_hcd
from .halftone import VirtualPrinter, make_printers, render
from .nn import save_checkpoint
from .printer_id import (
    BLOCK,
    REGION,
    AugmentPolicy,
    PiConfig,
    block_accuracy,
    identify_image,
    tile_blocks,
    train_phase1,
    train_phase2,
    transfer_init,
)
from .refiner import GanConfig, RefinementReport, evaluate_refinement, refine, train_refiner

log = logging.getLogger(__name__)

ROTATION_GRID = (-10.0, -5.0, 0.0, 5.0, 10.0)
SCALING_GRID = (0.8, 0.9, 1.0, 1.1, 1.2)


# -- configuration --------------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).split(",") if v.strip())


@dataclass
class RunConfig:
    """Flat settings for a full run. Every field can be set from a key=value file."""

    seed: int = 0
    out_dir: str = "runs"
    # virtual printers and their default camera
    n_printers: int = 4
    base_pitch: float = 3.0
    pitch_step: float = 0.5
    angle_step: float = 20.0
    printer_blur: float = 0.8
    printer_noise: float = 0.02
    printer_slope: float = 0.05
    # the heavier "real" capture used as the refinement target and for documents
    real_blur: float = 1.4
    real_noise: float = 0.02
    real_slope: float = 0.05
    # adversarial refinement
    gan_synth: int = 512
    gan_real: int = 512
    gan_lambda: float = 0.3
    gan_batch: int = 32
    gan_iters: int = 1000
    gan_refiner_lr: float = 1e-3
    gan_disc_lr: float = 1e-3
    gan_buffer: int = 640
    gan_width: float = 0.25
    gan_disc_width: float = 0.125
    gan_pretrain: int = 200
    gan_holdout: int = 128
    probe_steps: int = 300
    skip_refine: bool = False
    # decomposition network
    hcd_train: int = 1024
    hcd_eval: int = 128
    hcd_lr: float = 1e-3
    hcd_batch: int = 32
    hcd_epochs: int = 40
    hcd_patience: int = 4
    hcd_width: float = 0.125
    # printer identification
    image_size: int = 512
    images_per_printer: int = 48
    blocks_per_printer: int = 1024
    pi_lr: float = 1e-3
    pi_batch: int = 32
    pi_epochs: int = 8
    pi_patience: int = 2
    pi_width: float = 0.125
    pi_fc_units: int = 128
    phase2_lr: float = 3e-4
    phase2_epochs: int = 8
    aug_scales: str = "0.8,1.0,1.2"
    aug_angles: str = "-10,0,10"
    cv_config: int = 0

    DOCS = {
        "seed": "global seed; every stage derives its own seed from it",
        "out_dir": "parent directory for timestamped run directories",
        "n_printers": "number of virtual printers",
        "base_pitch": "screen pitch in pixels of printer 0",
        "pitch_step": "pitch increment between consecutive printers",
        "angle_step": "screen angle offset in degrees between consecutive printers",
        "printer_blur": "camera blur sigma of the synthetic renders",
        "printer_noise": "camera noise sigma of the synthetic renders",
        "printer_slope": "illumination ramp slope of the synthetic renders",
        "real_blur": "camera blur sigma of the real-domain captures",
        "real_noise": "camera noise sigma of the real-domain captures",
        "real_slope": "illumination ramp slope of the real-domain captures",
        "gan_synth": "synthetic 64x64 samples for refiner training",
        "gan_real": "real-domain 64x64 samples for refiner training",
        "gan_lambda": "weight of the self-regularization term",
        "gan_batch": "refiner and discriminator mini-batch size (even)",
        "gan_iters": "outer adversarial iterations",
        "gan_refiner_lr": "refiner Adam step size",
        "gan_disc_lr": "discriminator Adam step size",
        "gan_buffer": "history buffer capacity",
        "gan_width": "channel multiplier of the refiner",
        "gan_disc_width": "channel multiplier of the discriminator and the separability probe",
        "gan_pretrain": "refiner steps on the self-regularization term before adversarial training",
        "gan_holdout": "held-out synthetic and real samples for the refinement report (0 skips it)",
        "probe_steps": "training steps of each separability probe",
        "skip_refine": "train the decomposition net on raw synthetic samples",
        "hcd_train": "synthetic samples for decomposition training",
        "hcd_eval": "held-out samples for the decomposition report",
        "hcd_lr": "decomposition Adam step size",
        "hcd_batch": "decomposition mini-batch size",
        "hcd_epochs": "maximum decomposition epochs",
        "hcd_patience": "epochs without validation-loss improvement before stopping",
        "hcd_width": "channel multiplier of the decomposition net (and classifier)",
        "image_size": "side of the square document images",
        "images_per_printer": "documents rendered per printer before the cross-validation split",
        "blocks_per_printer": "training blocks drawn per printer",
        "pi_lr": "phase-1 classifier Adam step size",
        "pi_batch": "classifier mini-batch size",
        "pi_epochs": "maximum phase-1 epochs",
        "pi_patience": "epochs without validation-accuracy improvement before stopping",
        "pi_width": "channel multiplier of the classifier; must equal hcd_width for transfer",
        "pi_fc_units": "width of the two hidden fully connected layers",
        "phase2_lr": "phase-2 Adam step size",
        "phase2_epochs": "maximum phase-2 epochs",
        "aug_scales": "comma-separated phase-2 scale set",
        "aug_angles": "comma-separated phase-2 rotation set in degrees",
        "cv_config": "which of the four cross-validation configurations to run (0-3)",
    }

    def __post_init__(self):
        if self.pi_width != self.hcd_width:
            raise ValueError("pi_width must equal hcd_width so the first seven layers transfer")
        if not 0 <= self.cv_config < 4:
            raise ValueError("cv_config must be in 0..3")
        if self.image_size < BLOCK + 2 * ((REGION - BLOCK) // 2):
            raise ValueError("image_size too small to cut training regions")
        AugmentPolicy(_floats(self.aug_scales), _floats(self.aug_angles))

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def updated(self, pairs: dict[str, str]) -> "RunConfig":
        """Copy with string values coerced to each field's type; unknown keys are rejected."""
        known = {f.name: f for f in dataclasses.fields(self)}
        changes = {}
        for key, raw in pairs.items():
            if key not in known:
                raise KeyError(f"unknown config key {key!r}")
            default = getattr(self, key)
            changes[key] = _coerce(raw, type(default), key)
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_file(cls, path, overrides=None) -> "RunConfig":
        return cls().updated(parse_config_text(Path(path).read_text(encoding="utf-8"))).updated(overrides or {})

    def to_text(self) -> str:
        lines = []
        for key in self.keys():
            lines.append(f"# {self.DOCS[key]}")
            lines.append(f"{key} = {getattr(self, key)}")
        return "\n".join(lines) + "\n"

    def policy(self) -> AugmentPolicy:
        return AugmentPolicy(_floats(self.aug_scales), _floats(self.aug_angles))

    def printers(self) -> list[VirtualPrinter]:
        return make_printers(
            self.n_printers,
            blur_sigma=self.printer_blur,
            noise_sigma=self.printer_noise,
            illumination_slope=self.printer_slope,
            base_pitch=self.base_pitch,
            pitch_step=self.pitch_step,
            angle_step=self.angle_step,
        )

    def real_printers(self) -> list[VirtualPrinter]:
        return [p.with_camera(self.real_blur, self.real_noise, self.real_slope) for p in self.printers()]

    def gan_config(self) -> GanConfig:
        return GanConfig(self.gan_lambda, self.gan_batch, self.gan_iters, self.gan_refiner_lr,
                         self.gan_disc_lr, self.gan_buffer, self.gan_width, self.gan_disc_width, self.gan_pretrain)

    def hcd_config(self) -> HcdConfig:
        return HcdConfig(self.hcd_lr, self.hcd_batch, self.hcd_epochs, self.hcd_patience, self.hcd_width)

    def pi_config(self, phase: int = 1) -> PiConfig:
        lr, epochs = (self.pi_lr, self.pi_epochs) if phase == 1 else (self.phase2_lr, self.phase2_epochs)
        return PiConfig(lr, self.pi_batch, self.pi_patience, epochs, self.n_printers, self.pi_width, self.pi_fc_units)


def _coerce(raw, kind, key):
    if not isinstance(raw, str):
        return kind(raw)
    text = raw.strip()
    try:
        if kind is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot read {raw!r} as {kind.__name__}") from None


def parse_config_text(text: str) -> dict[str, str]:
    """key=value lines; blank lines and lines starting with # are skipped."""
    out = {}
    for num, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {num}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_overrides(items) -> dict[str, str]:
    return parse_config_text("\n".join(items or []))


# -- document images --------------------------------------------------------------

@dataclass
class DocumentSet:
    """Rendered document images with labels; ``seeds`` are (content, noise) pairs."""

    images: np.ndarray  # (N, 3, S, S)
    labels: np.ndarray
    seeds: list[tuple[int, int]] = field(default_factory=list)

    def subset(self, idx) -> "DocumentSet":
        idx = np.asarray(idx, int)
        return DocumentSet(self.images[idx], self.labels[idx], [self.seeds[i] for i in idx])


def render_documents(printers, per_printer: int, size: int, seed: int) -> DocumentSet:
    images, labels, seeds = [], [], []
    for p in printers:
        for k in range(per_printer):
            cs = seed * 1_000_003 + p.id * 10_007 + k
            ns = cs + 500_009
            images.append(render(p, size, size, cs, ns).rgb[0])
            labels.append(p.id)
            seeds.append((cs, ns))
    return DocumentSet(np.stack(images), np.array(labels), seeds)


def cut_regions(images: np.ndarray, labels: np.ndarray, per_class: int, seed: int, stride: int = BLOCK // 2):
    """Sample ``per_class`` 96x96 regions per label from a ``stride`` grid over the documents."""
    size = images.shape[-1]
    starts = range(0, size - REGION + 1, stride)
    grid = [(i, r, c) for i in range(len(images)) for r in starts for c in starts]
    rng = np.random.default_rng(seed)
    regions, out_labels = [], []
    for label in np.unique(labels):
        cells = [g for g in grid if labels[g[0]] == label]
        pick = rng.choice(len(cells), size=per_class, replace=per_class > len(cells))
        for j in np.sort(pick):
            i, r, c = cells[j]
            regions.append(images[i, :, r:r + REGION, c:c + REGION])
            out_labels.append(label)
    return np.stack(regions), np.array(out_labels)


def source_size(image_size: int) -> int:
    """Side of a rendered document so every sweep transform of its centre crop stays inside it."""
    half = image_size / 2
    need = max(half / min(SCALING_GRID), half * (np.cos(np.deg2rad(10)) + np.sin(np.deg2rad(10))))
    side = int(np.ceil(2 * need)) + 4
    return side + side % 2


def crossval_split(labels, seed: int, folds: int = 2):
    """Four (train, val, test) index configurations from stratified 2-fold splits.

    Each fold trains on one half; the other half is cut into two quarters that
    take turns as validation and test set.
    """
    if folds != 2:
        raise ValueError("only 2-fold cross-validation is supported")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    quarters = [[], [], [], []]
    for label in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == label))
        if len(idx) < 4:
            raise ValueError(f"printer {label} has {len(idx)} images; need at least 4")
        for q, part in enumerate(np.array_split(idx, 4)):
            quarters[q].extend(part.tolist())
    a = sorted(quarters[0] + quarters[1])
    b = sorted(quarters[2] + quarters[3])
    qa, qb = [sorted(q) for q in quarters[:2]], [sorted(q) for q in quarters[2:]]
    return [
        (a, qb[0], qb[1]),
        (a, qb[1], qb[0]),
        (b, qa[0], qa[1]),
        (b, qa[1], qa[0]),
    ]


def transform_image(image: np.ndarray, s: float = 1.0, theta: float = 0.0, out_size: int | None = None) -> np.ndarray:
    """Scale by ``s`` and rotate by ``theta`` degrees about the centre, then centre-crop ``out_size``.

    Bilinear resampling; the identity returns the exact centre crop.
    """
    image = image[0] if image.ndim == 4 else image
    c, h, w = image.shape
    out_size = out_size or h
    if s == 1.0 and theta == 0.0:
        top, left = (h - out_size) // 2, (w - out_size) // 2
        return image[:, top:top + out_size, left:left + out_size].copy()
    t = np.deg2rad(theta)
    matrix = np.array([[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]]) / s
    c_out = (out_size - 1) / 2
    offset = np.array([(h - 1) / 2, (w - 1) / 2]) - matrix @ np.array([c_out, c_out])
    return np.stack([
        ndimage.affine_transform(image[k].astype(np.float64), matrix, offset, output_shape=(out_size, out_size),
                                 order=1, mode="nearest").astype(image.dtype)
        for k in range(c)
    ])


# -- evaluation -----------------------------------------------------------------

@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: true printer, columns: predicted

    @property
    def accuracy(self) -> float:
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else 0.0

    def recalls(self) -> np.ndarray:
        rows = self.counts.sum(axis=1)
        return np.where(rows > 0, np.diag(self.counts) / np.maximum(rows, 1), 0.0)

    def write_tsv(self, path) -> Path:
        path = Path(path)
        n = len(self.counts)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["# accuracy", f"{self.accuracy:.6f}"])
            w.writerow(["true\\predicted"] + [f"printer_{j}" for j in range(n)])
            for i in range(n):
                w.writerow([f"printer_{i}"] + [int(v) for v in self.counts[i]])
        return path

    @classmethod
    def read_tsv(cls, path) -> "ConfusionMatrix":
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.reader(fh, delimiter="\t"))
        return cls(np.array([[int(v) for v in row[1:]] for row in rows[2:]], dtype=np.int64))

    def write_image(self, path, cell: int = 32) -> Path:
        """Row-normalized heat map: white is 0, dark blue is 1."""
        frac = self.counts / np.maximum(self.counts.sum(axis=1, keepdims=True), 1)
        rgb = np.stack([1 - frac, 1 - frac, 1 - 0.4 * frac], axis=-1)
        img = np.kron(rgb, np.ones((cell, cell, 1)))
        Image.fromarray(np.round(img * 255).astype(np.uint8), "RGB").save(path)
        return Path(path)


def evaluate_identification(spec, params, images: np.ndarray, labels, n_printers: int) -> ConfusionMatrix:
    if len(images) == 0:
        raise ValueError("evaluation set is empty")
    counts = np.zeros((n_printers, n_printers), np.int64)
    for img, label in zip(images, labels):
        pred, _ = identify_image(spec, params, img)
        counts[int(label), pred] += 1
    return ConfusionMatrix(counts)


@dataclass
class RobustnessCurve:
    axis: str
    points: list[tuple[float, float, float]]  # (transform value, mean accuracy, std)

    def values(self) -> list[float]:
        return [p[0] for p in self.points]

    def accuracies(self) -> list[float]:
        return [p[1] for p in self.points]

    @property
    def worst(self) -> float:
        return min(self.accuracies())


def robustness_sweep(spec, params1, params2, sources: np.ndarray, labels, axis: str, n_printers: int,
                     out_size: int = 512):
    """Accuracy of two parameter sets on transformed copies of the test documents.

    ``sources`` must be large enough that the transformed centre crop of side
    ``out_size`` stays inside the image.
    """
    if axis == "rotation":
        grid, args = ROTATION_GRID, [(1.0, v) for v in ROTATION_GRID]
    elif axis == "scaling":
        grid, args = SCALING_GRID, [(v, 0.0) for v in SCALING_GRID]
    else:
        raise ValueError(f"axis must be 'rotation' or 'scaling', got {axis!r}")
    curves = []
    for params in (params1, params2):
        points = []
        for value, (s, theta) in zip(grid, args):
            imgs = np.stack([transform_image(x, s, theta, out_size) for x in sources])
            acc = evaluate_identification(spec, params, imgs, labels, n_printers).accuracy
            points.append((value, acc, 0.0))
        curves.append(RobustnessCurve(axis, points))
    return curves[0], curves[1]


def write_robustness_tsv(path, curves: dict[str, RobustnessCurve]) -> Path:
    """``curves`` is keyed "model:axis"."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["model", "axis", "value", "accuracy", "std"])
        for key, curve in curves.items():
            model = key.split(":")[0]
            for value, acc, std in curve.points:
                w.writerow([model, curve.axis, f"{value:g}", f"{acc:.6f}", f"{std:.6f}"])
    return path


def read_robustness_tsv(path) -> dict[tuple[str, str], RobustnessCurve]:
    out: dict[tuple[str, str], RobustnessCurve] = {}
    with open(path, encoding="utf-8") as fh:
        for row in list(csv.reader(fh, delimiter="\t"))[1:]:
            key = (row[0], row[1])
            out.setdefault(key, RobustnessCurve(row[1], [])).points.append(
                (float(row[2]), float(row[3]), float(row[4])))
    return out


# -- full run ---------------------------------------------------------------------

class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


@dataclass
class RunResult:
    run_dir: Path
    accuracy: float
    block_accuracy: float
    confusion: ConfusionMatrix
    decomposition: DecompositionReport
    robustness: dict[str, RobustnessCurve]
    timings: dict[str, float] = field(default_factory=dict)
    refinement: RefinementReport | None = None
    confusion_phase1: ConfusionMatrix | None = None
    block_accuracy_phase1: float | None = None


def new_run_dir(parent, seed: int) -> Path:
    parent = Path(parent)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    for k in range(1000):
        name = f"run-{stamp}-seed{seed}" + (f"-{k}" if k else "")
        path = parent / name
        try:
            path.mkdir(parents=True)
            return path
        except FileExistsError:
            continue
    raise RuntimeError("could not allocate a run directory")


def render_patches(printers, count: int, seed: int):
    """``count`` annotated 64x64 samples cycling over ``printers``; returns (rgb, cmyk, keys)."""
    samples = [render(printers[i % len(printers)], 64, 64, seed + i, seed + i + 7_919) for i in range(count)]
    if not samples:
        return np.zeros((0, 3, 64, 64), np.float32), np.zeros((0, 4, 64, 64), np.float32), []
    keys = [f"{s.printer_id}:{s.seed[0]}:{s.seed[1]}" for s in samples]
    return np.concatenate([s.rgb for s in samples]), np.concatenate([s.cmyk for s in samples]), keys


def gan_data(cfg: RunConfig, seed: int):
    """Synthetic and real-domain 64x64 training samples for the refiner."""
    synth = render_patches(cfg.printers(), cfg.gan_synth, seed)[0]
    real = render_patches(cfg.real_printers(), cfg.gan_real, seed + 3_000_017)[0]
    return synth, real


def hcd_data(cfg: RunConfig, count: int, seed: int):
    return render_patches(cfg.printers(), count, seed)


def document_split(cfg: RunConfig, labels) -> tuple[list[int], list[int], list[int]]:
    """The (train, validation, test) document indices of the configured cross-validation slot."""
    return crossval_split(labels, cfg.seed)[cfg.cv_config]


def document_crops(cfg: RunConfig, images: np.ndarray) -> np.ndarray:
    return np.stack([transform_image(x, out_size=cfg.image_size) for x in images])


def identification_sets(cfg: RunConfig, images: np.ndarray, labels, split):
    """Training and validation regions cut from the centre crops of the split's documents."""
    labels = np.asarray(labels)
    tr, va, _ = split
    tr_regions, tr_labels = cut_regions(document_crops(cfg, images[tr]), labels[tr], cfg.blocks_per_printer,
                                        cfg.seed * 7 + 5)
    n_val = max(8, cfg.blocks_per_printer // 8)
    va_regions, va_labels = cut_regions(document_crops(cfg, images[va]), labels[va], n_val, cfg.seed * 7 + 6)
    return tr_regions, tr_labels, va_regions, va_labels


def run_experiment(cfg: RunConfig, run_dir=None, progress=None) -> RunResult:
    """Generate data, train every stage, evaluate, and write checkpoints and reports.

    Stage failures raise :class:`StageError`; artifacts written so far stay on disk.
    """
    run_dir = Path(run_dir) if run_dir is not None else new_run_dir(cfg.out_dir, cfg.seed)
    ckpt = run_dir / "checkpoints"
    reports = run_dir / "reports"
    ckpt.mkdir(parents=True, exist_ok=True)
    reports.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    timings: dict[str, float] = {}
    state: dict = {}
    say = progress or (lambda msg: log.info(msg))

    def stage(name):
        def wrap(fn):
            t0 = time.perf_counter()
            say(f"[{name}] start")
            try:
                fn()
            except Exception as exc:
                raise StageError(name, exc) from exc
            timings[name] = time.perf_counter() - t0
            say(f"[{name}] done in {timings[name]:.1f}s")
        return wrap

    seed = cfg.seed

    @stage("refiner")
    def _():
        synth, real = gan_data(cfg, seed * 7 + 1)
        res = train_refiner(cfg.gan_config(), synth, real, seed)
        save_checkpoint(res.refiner, ckpt / "refiner.ckpt")
        save_checkpoint(res.discriminator, ckpt / "discriminator.ckpt")
        state["refiner"] = res
        if cfg.gan_holdout:
            held_synth = render_patches(cfg.printers(), cfg.gan_holdout, seed * 7 + 8)[0]
            held_real = render_patches(cfg.real_printers(), cfg.gan_holdout, seed * 7 + 9)[0]
            rep = evaluate_refinement(res.refiner_spec, res.refiner, held_synth, held_real, seed,
                                      cfg.gan_disc_width, cfg.probe_steps)
            rep.write_tsv(reports / "refinement.tsv")
            state["refinement"] = rep

    @stage("decomposition")
    def _():
        rgb, cmyk, keys = hcd_data(cfg, cfg.hcd_train, seed * 7 + 2)
        ev_rgb, ev_cmyk, _ = hcd_data(cfg, cfg.hcd_eval, seed * 7 + 3)
        if not cfg.skip_refine:
            r = state["refiner"]
            rgb = refine(r.refiner_spec, r.refiner, rgb)
            ev_rgb = refine(r.refiner_spec, r.refiner, ev_rgb)
        res = train_hcd(cfg.hcd_config(), rgb, cmyk, seed, keys)
        save_checkpoint(res.params, ckpt / "hcd.ckpt")
        rep = evaluate_decomposition(res.spec, res.params, ev_rgb, ev_cmyk)
        rep.write_tsv(reports / "decomposition.tsv")
        state["hcd"], state["decomposition"] = res, rep

    @stage("documents")
    def _():
        docs = render_documents(cfg.real_printers(), cfg.images_per_printer, source_size(cfg.image_size), seed * 7 + 4)
        state["docs"], state["split"] = docs, document_split(cfg, docs.labels)

    @stage("phase1")
    def _():
        docs = state["docs"]
        state["sets"] = sets = identification_sets(cfg, docs.images, docs.labels, state["split"])
        hcd = state["hcd"]
        c1 = cfg.pi_config(1)
        init = transfer_init(hcd.params, hcd.spec, c1.spec(), seed)
        state["pi1"] = p1 = train_phase1(c1, *sets, init, seed)
        save_checkpoint(p1.params, ckpt / "pi_phase1.ckpt")

    @stage("phase2")
    def _():
        p2 = train_phase2(cfg.pi_config(2), *state["sets"], state["pi1"].params, seed + 1, cfg.policy())
        save_checkpoint(p2.params, ckpt / "pi.ckpt")
        state["pi2"] = p2

    @stage("evaluation")
    def _():
        docs = state["docs"]
        _, _, te = state["split"]
        spec = state["pi1"].spec
        test_images, test_labels = document_crops(cfg, docs.images[te]), docs.labels[te]
        cm1 = evaluate_identification(spec, state["pi1"].params, test_images, test_labels, cfg.n_printers)
        cm = evaluate_identification(spec, state["pi2"].params, test_images, test_labels, cfg.n_printers)
        cm.write_tsv(reports / "confusion.tsv")
        cm.write_image(reports / "confusion.png")
        cm1.write_tsv(reports / "confusion_phase1.tsv")
        curves = {}
        for axis in ("rotation", "scaling"):
            c1, c2 = robustness_sweep(spec, state["pi1"].params, state["pi2"].params, docs.images[te],
                                      test_labels, axis, cfg.n_printers, cfg.image_size)
            curves[f"phase1:{axis}"], curves[f"phase2:{axis}"] = c1, c2
        write_robustness_tsv(reports / "robustness.tsv", curves)
        blocks = np.concatenate([tile_blocks(img) for img in test_images])
        block_labels = np.repeat(test_labels, (cfg.image_size // BLOCK) ** 2)
        state["block_acc"] = block_accuracy(spec, state["pi2"].params, blocks, block_labels)
        state["block_acc1"] = block_accuracy(spec, state["pi1"].params, blocks, block_labels)
        state["cm"], state["cm1"], state["curves"] = cm, cm1, curves

    cm = state["cm"]
    with open(reports / "summary.tsv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["image_accuracy_phase1", f"{state['cm1'].accuracy:.6f}"])
        w.writerow(["block_accuracy_phase1", f"{state['block_acc1']:.6f}"])
        w.writerow(["image_accuracy", f"{cm.accuracy:.6f}"])
        w.writerow(["block_accuracy", f"{state['block_acc']:.6f}"])
        for name, secs in timings.items():
            w.writerow([f"seconds_{name}", f"{secs:.1f}"])
    return RunResult(run_dir, cm.accuracy, state["block_acc"], cm, state["decomposition"], state["curves"], timings,
                     state.get("refinement"), state["cm1"], state["block_acc1"])

