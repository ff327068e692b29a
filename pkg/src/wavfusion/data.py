"""Feature-file format, manifests, dataset splits, and the seeded synthetic
multimodal generator that stands in for pretrained feature extractors.

Feature file layout (little-endian):

    magic   4 bytes  b"WFTF"
    version u32      currently 1
    T, D    u32 each
    payload T*D float32, row-major

Dataset directory layout: ``manifest.tsv`` plus ``features/<id>.<modality>.wftf``.
Manifest lines are tab-separated: id, integer label, then the audio, text and
visual feature paths relative to the dataset directory (empty field = modality
absent).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .model import MODALITIES
from .rng import Prng

FEATURE_MAGIC = b"WFTF"
FEATURE_VERSION = 1


# -- feature files ---------------------------------------------------------------


def write_feature(path, matrix) -> None:
    arr = np.asarray(matrix, dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"feature matrix must be [T x D] with T, D >= 1; got shape {list(arr.shape)}")
    if not np.isfinite(arr).all():
        raise DataError("feature matrix contains non-finite values")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_feature(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != FEATURE_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r} at offset 0 in {path}; expected {FEATURE_MAGIC!r}")
    if len(blob) < 16:
        raise FormatError(f"truncated header at offset {len(blob)} in {path}; need 16 bytes")
    version, rows, cols = struct.unpack_from("<III", blob, 4)
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature version {version} at offset 4 in {path}")
    if rows < 1 or cols < 1:
        raise FormatError(f"invalid dimensions {rows} x {cols} at offset 8 in {path}")
    expect = 16 + 4 * rows * cols
    if len(blob) != expect:
        raise FormatError(f"payload size mismatch at offset 16 in {path}: "
                          f"expected {expect} bytes total, found {len(blob)}")
    return np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=16).reshape(rows, cols).copy()


# -- manifest --------------------------------------------------------------------


@dataclass
class ManifestEntry:
    uid: str
    label: int
    paths: dict  # modality -> relative path (present modalities only)


@dataclass
class UtteranceSample:
    uid: str
    label: int
    features: dict  # modality -> [T x D] float array


def write_manifest(path, entries) -> None:
    lines = []
    for e in entries:
        cells = [e.uid, str(e.label)] + [e.paths.get(m, "") for m in MODALITIES]
        lines.append("\t".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> list[ManifestEntry]:
    entries = []
    seen = set()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        cells = line.split("\t")
        if len(cells) != 2 + len(MODALITIES):
            raise DataError(f"{path}:{lineno}: expected {2 + len(MODALITIES)} fields, got {len(cells)}")
        uid, label_text = cells[0], cells[1]
        if uid in seen:
            raise DataError(f"{path}:{lineno}: duplicate utterance id {uid!r}")
        seen.add(uid)
        try:
            label = int(label_text)
        except ValueError:
            raise DataError(f"{path}:{lineno}: label {label_text!r} is not an integer") from None
        if label < 0:
            raise DataError(f"{path}:{lineno}: negative label {label}")
        paths = {m: cell for m, cell in zip(MODALITIES, cells[2:]) if cell}
        entries.append(ManifestEntry(uid, label, paths))
    return entries


@dataclass
class Dataset:
    samples: list
    num_classes: int
    feature_dims: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)


def load_dataset(root, num_classes: int | None = None) -> Dataset:
    """Load every sample referenced by ``<root>/manifest.tsv``; verifies that
    referenced files exist and labels fit in [0, num_classes)."""
    root = Path(root)
    entries = read_manifest(root / "manifest.tsv")
    if not entries:
        raise DataError(f"{root}: manifest is empty")
    samples = []
    dims: dict = {}
    for e in entries:
        feats = {}
        for m, rel in e.paths.items():
            fpath = root / rel
            if not fpath.exists():
                raise DataError(f"{root}: sample {e.uid} references missing file {rel}")
            mat = read_feature(fpath)
            if m in dims and dims[m] != mat.shape[1]:
                raise DataError(f"{root}: modality {m!r} width {mat.shape[1]} of {e.uid} "
                                f"conflicts with {dims[m]}")
            dims[m] = mat.shape[1]
            feats[m] = mat
        samples.append(UtteranceSample(e.uid, e.label, feats))
    max_label = max(s.label for s in samples)
    if num_classes is None:
        num_classes = max_label + 1
    elif max_label >= num_classes:
        raise DataError(f"{root}: label {max_label} outside [0, {num_classes})")
    return Dataset(samples, num_classes, dims)


# -- synthetic generator -------------------------------------------------------------


@dataclass
class SynthSpec:
    """Knobs of the synthetic multimodal dataset.

    Per modality, each class gets a mean vector drawn once from seeded noise
    and scaled by ``mu`` (times the per-modality ``mu_scale``); a sample's
    sequence rows are that mean plus ``rho`` times a per-sample latent shared
    across modalities (through fixed per-modality projections) plus
    independent noise scaled by ``sigma``. ``mean_groups`` lets several
    classes share one mean in a given modality, so that modality alone
    carries only partial class signal.
    """
    classes: int = 4
    per_class: int = 20
    dims: dict = field(default_factory=lambda: {"a": 12, "t": 10, "v": 8})
    seq_len: dict = field(default_factory=lambda: {"a": (6, 10), "t": (4, 8), "v": (3, 6)})
    mu: float = 2.0
    rho: float = 0.5
    sigma: float = 1.0
    seed: int = 0
    latent_dim: int = 8
    mean_groups: dict = field(default_factory=dict)   # modality -> list of class groups
    mu_scale: dict = field(default_factory=dict)      # modality -> factor (default 1.0)

    def validate(self):
        if self.classes < 1 or self.per_class < 1:
            raise ConfigError("synthetic spec needs at least one class and one sample per class")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1]; got {self.rho}")
        if self.mu < 0 or self.sigma < 0:
            raise ConfigError("scales mu and sigma must be non-negative")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be positive")
        for m in self.dims:
            if m not in MODALITIES:
                raise ConfigError(f"unknown modality {m!r}")
            lo, hi = self.seq_len[m]
            if lo < 1 or hi < lo:
                raise ConfigError(f"bad sequence length range {lo}..{hi} for {m!r}")
        for m, groups in self.mean_groups.items():
            flat = sorted(c for g in groups for c in g)
            if flat != list(range(self.classes)):
                raise ConfigError(f"mean_groups[{m!r}] must partition range({self.classes})")


def _class_group(spec: SynthSpec, modality: str, klass: int) -> int:
    groups = spec.mean_groups.get(modality)
    if not groups:
        return klass
    for gi, group in enumerate(groups):
        if klass in group:
            return gi
    raise ConfigError(f"class {klass} missing from mean_groups[{modality!r}]")


def generate_synthetic(spec: SynthSpec, out_dir) -> Path:
    """Write a complete dataset directory; identical spec => identical bytes."""
    spec.validate()
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)

    root = Prng(spec.seed)
    modality_list = sorted(spec.dims)
    means = {}
    projections = {}
    for mi, m in enumerate(modality_list):
        dim = spec.dims[m]
        scale = spec.mu * spec.mu_scale.get(m, 1.0)
        mean_rng = root.child(1000 + mi)
        group_means = {}
        for klass in range(spec.classes):
            gi = _class_group(spec, m, klass)
            if gi not in group_means:
                group_means[gi] = mean_rng.child(gi).normal(dim) * scale
            means[(m, klass)] = group_means[gi]
        proj = root.child(2000 + mi).normal(spec.latent_dim * dim)
        projections[m] = proj.reshape(spec.latent_dim, dim) / np.sqrt(spec.latent_dim)

    entries = []
    total = spec.classes * spec.per_class
    for idx in range(total):
        klass = idx // spec.per_class
        uid = f"utt{idx:05d}"
        srng = root.child(idx)
        latent = srng.child(0).normal(spec.latent_dim)
        paths = {}
        for mi, m in enumerate(modality_list):
            mrng = srng.child(1 + mi)
            lo, hi = spec.seq_len[m]
            t_len = mrng.randint(lo, hi + 1)
            noise = mrng.normal(t_len * spec.dims[m]).reshape(t_len, spec.dims[m])
            rows = means[(m, klass)] + spec.rho * (latent @ projections[m]) + spec.sigma * noise
            rel = f"features/{uid}.{m}.wftf"
            write_feature(out_dir / rel, rows.astype("<f4"))
            paths[m] = rel
        entries.append(ManifestEntry(uid, klass, paths))
    write_manifest(out_dir / "manifest.tsv", entries)
    return out_dir


# -- splits -----------------------------------------------------------------------


@dataclass
class RatioSplit:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    seed: int = 0


@dataclass
class KFold:
    k: int
    fold: int
    seed: int = 0
    val_fraction: float = 0.1


def split(items: list, policy):
    """Partition ``items`` into (train, val, test); deterministic under seed."""
    n = len(items)
    if isinstance(policy, RatioSplit):
        order = Prng(policy.seed, stream=7).permutation(n)
        n_val = int(round(policy.val * n))
        n_test = int(round(policy.test * n))
        if n_val + n_test >= n:
            raise ConfigError(f"split fractions leave no training data for {n} samples")
        test = [items[i] for i in order[:n_test]]
        val = [items[i] for i in order[n_test:n_test + n_val]]
        train = [items[i] for i in order[n_test + n_val:]]
        return train, val, test
    if isinstance(policy, KFold):
        if policy.fold >= policy.k or policy.fold < 0:
            raise ConfigError(f"fold index {policy.fold} outside [0, {policy.k})")
        if policy.k < 2 or policy.k > n:
            raise ConfigError(f"cannot make {policy.k} folds from {n} samples")
        order = Prng(policy.seed, stream=7).permutation(n)
        folds = [order[i::policy.k] for i in range(policy.k)]
        test = [items[i] for i in folds[policy.fold]]
        rest = [items[i] for f in range(policy.k) if f != policy.fold for i in folds[f]]
        n_val = int(round(policy.val_fraction * len(rest)))
        return rest[n_val:], rest[:n_val], test
    raise ConfigError(f"unknown split policy {policy!r}")
