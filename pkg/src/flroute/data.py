"""Synthetic routability corpus with planted per-family heterogeneity.

Every client owns designs from a single benchmark family. A design is a
blueprint (cell clusters, macros, nets); each placement jitters that blueprint
and rasterizes four feature channels. Hotspot labels come from a hidden
family rule over smoothed, unscaled channels, while the features handed to the
model are rescaled per family, so clients differ both in what they see and in
how it maps to hotspots.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from flroute.errors import ConfigurationError, FormatError

CHANNEL_NAMES = ("cell_density", "routing_blockage", "rudy", "flyline_pins")
FAMILY_NAMES = {1: "itc99", 2: "iscas89", 3: "iwls05", 4: "ispd15"}

SAMPLE_MAGIC = b"FGRD"
SAMPLE_VERSION = 1
SAMPLE_HEADER = struct.Struct("<4siiii")
MANIFEST_NAME = "manifest.txt"
CORPUS_MANIFEST = "corpus.txt"

MIN_HOTSPOT_RATE = 0.02
MAX_HOTSPOT_RATE = 0.40

# designs per client (train + test), following the benchmark-to-client layout
# of nine clients drawn from four suites
DEFAULT_FAMILIES = (1, 1, 1, 2, 2, 2, 3, 3, 4)
DEFAULT_DESIGNS = (6, 3, 4, 10, 10, 9, 9, 10, 13)
DEFAULT_PLACEMENTS = {1: 12, 2: 10, 3: 10, 4: 6}


def rudy_map(nets, width: int, height: int) -> np.ndarray:
    """Rectangular uniform wire density.

    ``nets`` holds half-open cell rectangles ``(x0, y0, x1, y1)``. Each net adds
    ``(w + h) / (w * h)`` to every cell of its bounding box; a zero-width or
    zero-height box counts as a single cell.
    """
    out = np.zeros((height, width))
    for x0, y0, x1, y1 in nets:
        x0, y0, x1, y1 = int(x0), int(y0), int(x1), int(y1)
        if x1 < x0 or y1 < y0:
            raise ConfigurationError(f"net rectangle {(x0, y0, x1, y1)} is inverted")
        x1, y1 = max(x1, x0 + 1), max(y1, y0 + 1)
        if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
            raise ConfigurationError(f"net rectangle {(x0, y0, x1, y1)} leaves the {width}x{height} grid")
        w, h = x1 - x0, y1 - y0
        out[y0:y1, x0:x1] += (w + h) / (w * h)
    return out


@dataclass
class Dataset:
    """Stacked samples: features (n, c, h, w) float64, labels (n, h, w) uint8."""

    x: np.ndarray
    y: np.ndarray
    design_ids: list[str]

    def __len__(self) -> int:
        return len(self.x)

    def __post_init__(self) -> None:
        if len(self.x) != len(self.y) or len(self.x) != len(self.design_ids):
            raise ConfigurationError("dataset arrays disagree on sample count")

    @property
    def designs(self) -> list[str]:
        return sorted(set(self.design_ids))

    def samples(self):
        return list(zip(self.x, self.y))

    @classmethod
    def concat(cls, parts: list["Dataset"]) -> "Dataset":
        return cls(
            np.concatenate([p.x for p in parts]),
            np.concatenate([p.y for p in parts]),
            [d for p in parts for d in p.design_ids],
        )


@dataclass
class ClientData:
    client_id: int
    family_id: int
    train: Dataset
    test: Dataset

    @property
    def n_train(self) -> int:
        return len(self.train)


@dataclass
class CorpusConfig:
    clients: int = 9
    families: tuple[int, ...] = DEFAULT_FAMILIES
    designs_per_client: tuple[int, ...] = DEFAULT_DESIGNS
    placements_per_design: dict[int, int] = field(default_factory=lambda: dict(DEFAULT_PLACEMENTS))
    grid: int = 16
    channels: int = 4
    heterogeneity: float = 1.0
    label_noise: float = 0.02
    train_fraction: float = 0.7
    seed: int = 0

    def validate(self) -> None:
        if self.clients < 1:
            raise ConfigurationError("corpus.clients must be >= 1")
        if len(self.families) != self.clients or len(self.designs_per_client) != self.clients:
            raise ConfigurationError("corpus.families and corpus.designs_per_client need one entry per client")
        if any(f not in FAMILY_NAMES for f in self.families):
            raise ConfigurationError(f"family ids must be in {sorted(FAMILY_NAMES)}")
        if any(d < 2 for d in self.designs_per_client):
            raise ConfigurationError("each client needs >= 2 designs (one train, one test)")
        for f in set(self.families):
            if self.placements_per_design.get(f, 0) < 1:
                raise ConfigurationError(f"placements for family {f} must be >= 1")
        if self.grid < 8:
            raise ConfigurationError("corpus.grid must be >= 8")
        if not 1 <= self.channels <= len(CHANNEL_NAMES):
            raise ConfigurationError(f"corpus.channels must be in [1, {len(CHANNEL_NAMES)}]")
        if not 0.0 <= self.label_noise < 0.5:
            raise ConfigurationError("corpus.label_noise must be in [0, 0.5)")
        if self.heterogeneity < 0:
            raise ConfigurationError("corpus.heterogeneity must be >= 0")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigurationError("corpus.train_fraction must be in (0, 1)")

    def snapshot(self) -> dict:
        d = asdict(self)
        d["families"] = list(self.families)
        d["designs_per_client"] = list(self.designs_per_client)
        return d


@dataclass
class FamilyRule:
    """Hidden hotspot rule and feature distortion for one benchmark family."""

    family_id: int
    coef: np.ndarray  # weights on smoothed channels
    interaction: float  # weight on smoothed cell density * rudy
    feature_scale: np.ndarray  # per-channel multiplier applied to model inputs
    feature_offset: np.ndarray  # per-channel additive shift applied to model inputs
    feature_shift: np.ndarray | None = None  # calibration shift the rule never reads
    threshold: float = 0.0
    net_range: tuple[int, int] = (20, 40)
    cluster_range: tuple[int, int] = (2, 4)
    macro_range: tuple[int, int] = (0, 2)
    net_span: int = 5


@dataclass
class DesignBlueprint:
    design_id: str
    family_id: int
    grid: int
    clusters: np.ndarray  # (m, 4): cx, cy, spread, weight
    macros: np.ndarray  # (q, 4) half-open rectangles
    nets: np.ndarray  # (p, 5): anchor cluster, dx, dy, width, height
    pins: np.ndarray  # (p,) pin counts
    coef_offset: np.ndarray


# -- generation -------------------------------------------------------------


_SHARED_COEF = np.array([1.0, 0.6, 1.2, 0.8])
_FAMILY_STYLE = {
    1: dict(net_range=(22, 34), cluster_range=(2, 3), macro_range=(0, 1), net_span=4),
    2: dict(net_range=(26, 40), cluster_range=(3, 4), macro_range=(0, 1), net_span=5),
    3: dict(net_range=(18, 30), cluster_range=(2, 3), macro_range=(1, 2), net_span=6),
    4: dict(net_range=(30, 44), cluster_range=(3, 5), macro_range=(1, 3), net_span=5),
}
_TARGET_RATE = {1: 0.12, 2: 0.16, 3: 0.10, 4: 0.20}
_DESIGN_JITTER = 0.9
_FAMILY_COEF_SPREAD = 0.3
_FAMILY_SCALE_SPREAD = 0.3
_FAMILY_OFFSET_SPREAD = 1.5
_FAMILY_SHIFT_SPREAD = 0.0
# rough per-channel magnitudes of the raw rasters
_CHANNEL_MEAN = np.array([0.4, 0.05, 0.5, 0.6])


def make_family_rules(config: CorpusConfig) -> dict[int, FamilyRule]:
    rng = np.random.default_rng([config.seed, 7919])
    h = config.heterogeneity
    rules = {}
    for fam in sorted(FAMILY_NAMES):
        direction = rng.normal(size=4)
        coef = _SHARED_COEF + h * _FAMILY_COEF_SPREAD * direction
        interaction = 0.5 + h * 0.5 * rng.normal()
        scale = np.exp(h * _FAMILY_SCALE_SPREAD * rng.normal(size=4))
        offset = h * _FAMILY_OFFSET_SPREAD * np.abs(rng.normal(size=4)) * _CHANNEL_MEAN
        style = _FAMILY_STYLE[fam] if h > 0 else _FAMILY_STYLE[1]
        rules[fam] = FamilyRule(fam, coef, interaction, scale, offset, **style)
    # own stream so the rule draws above do not depend on it
    shift_rng = np.random.default_rng([config.seed, 7919, 2])
    for fam in sorted(FAMILY_NAMES):
        rules[fam].feature_shift = h * _FAMILY_SHIFT_SPREAD * np.abs(shift_rng.normal(size=4)) * _CHANNEL_MEAN
    if h > 0:
        for fam, rule in rules.items():
            rule.threshold = _calibrate_threshold(rule, config, _TARGET_RATE[fam])
    else:
        shared = _calibrate_threshold(rules[1], config, 0.14)
        for rule in rules.values():
            rule.threshold = shared
    return rules


def _calibrate_threshold(rule: FamilyRule, config: CorpusConfig, rate: float) -> float:
    rng = np.random.default_rng([config.seed, 104729, rule.family_id])
    scores = []
    for i in range(12):
        bp = _make_blueprint(rng, f"calib{i}", rule, config.grid, jitter=0.0)
        for _ in range(3):
            obs = _observe(_rasterize(bp, rng), rule)
            scores.append(_hidden_score(obs, rule, bp.coef_offset).ravel())
    return float(np.quantile(np.concatenate(scores), 1.0 - rate))


def _make_blueprint(rng, design_id, rule: FamilyRule, grid: int, jitter: float | None = None) -> DesignBlueprint:
    jitter = _DESIGN_JITTER if jitter is None else jitter
    m = rng.integers(rule.cluster_range[0], rule.cluster_range[1] + 1)
    clusters = np.column_stack([
        rng.uniform(2, grid - 2, m),
        rng.uniform(2, grid - 2, m),
        rng.uniform(1.5, 3.5, m),
        rng.uniform(0.5, 1.0, m),
    ])
    q = rng.integers(rule.macro_range[0], rule.macro_range[1] + 1)
    macros = []
    for _ in range(q):
        mw, mh = rng.integers(2, 5, 2)
        x0, y0 = rng.integers(0, grid - mw + 1), rng.integers(0, grid - mh + 1)
        macros.append((x0, y0, x0 + mw, y0 + mh))
    p = rng.integers(rule.net_range[0], rule.net_range[1] + 1)
    nets = np.column_stack([
        rng.integers(0, m, p),
        rng.normal(0, 1.0, p),
        rng.normal(0, 1.0, p),
        rng.integers(1, rule.net_span + 1, p),
        rng.integers(1, rule.net_span + 1, p),
    ])
    pins = rng.integers(2, 9, p)
    return DesignBlueprint(
        design_id, rule.family_id, grid, clusters, np.array(macros, dtype=float).reshape(-1, 4),
        nets, pins, jitter * rng.normal(size=4),
    )


def _rasterize(bp: DesignBlueprint, rng) -> np.ndarray:
    """One jittered placement of a blueprint -> raw (4, g, g) channels."""
    g = bp.grid
    yy, xx = np.mgrid[0:g, 0:g] + 0.5
    clusters = bp.clusters.copy()
    clusters[:, :2] += rng.normal(0, 0.8, (len(clusters), 2))
    clusters[:, :2] = np.clip(clusters[:, :2], 0.5, g - 0.5)

    cell = np.zeros((g, g))
    for cx, cy, spread, weight in clusters:
        cell += weight * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * spread**2))
    cell += rng.uniform(0, 0.05, (g, g))

    block = np.zeros((g, g))
    for x0, y0, x1, y1 in bp.macros.astype(int):
        sx, sy = rng.integers(-1, 2, 2)
        x0, x1 = np.clip([x0 + sx, x1 + sx], 0, g)
        y0, y1 = np.clip([y0 + sy, y1 + sy], 0, g)
        block[y0:y1, x0:x1] = 1.0
    cell *= 1.0 - 0.7 * block

    rects = []
    pin_map = np.zeros((g, g))
    for (anchor, dx, dy, w, h), npins in zip(bp.nets, bp.pins):
        cx, cy, spread, _ = clusters[int(anchor)]
        x0 = int(np.clip(np.floor(cx + spread * dx + rng.normal(0, 0.5) - w / 2), 0, g - w))
        y0 = int(np.clip(np.floor(cy + spread * dy + rng.normal(0, 0.5) - h / 2), 0, g - h))
        rects.append((x0, y0, x0 + int(w), y0 + int(h)))
        px = rng.integers(x0, x0 + int(w), npins)
        py = rng.integers(y0, y0 + int(h), npins)
        np.add.at(pin_map, (py, px), 1.0)
    rudy = rudy_map(rects, g, g)
    # box filter roundoff can dip a hair below zero
    flylines = np.maximum(uniform_filter(pin_map, size=3, mode="constant"), 0.0)
    return np.stack([cell, block, rudy, flylines])


def _observe(raw: np.ndarray, rule: FamilyRule) -> np.ndarray:
    return raw * rule.feature_scale[:, None, None] + rule.feature_offset[:, None, None]


def _hidden_score(obs: np.ndarray, rule: FamilyRule, coef_offset: np.ndarray) -> np.ndarray:
    """The rule reads the observed channels, so a family offset only moves its threshold."""
    smooth = np.stack([uniform_filter(ch, size=3, mode="nearest") for ch in obs])
    smooth = smooth / _CHANNEL_NORM[:, None, None]
    coef = rule.coef + coef_offset
    return np.tensordot(coef, smooth, axes=1) + rule.interaction * smooth[0] * smooth[2]


_CHANNEL_NORM = np.array([1.0, 1.0, 2.0, 1.0])


def _placement(bp: DesignBlueprint, rule: FamilyRule, config: CorpusConfig, rng):
    obs = _observe(_rasterize(bp, rng), rule)
    hot = _hidden_score(obs, rule, bp.coef_offset) > rule.threshold
    flip = rng.random(hot.shape) < config.label_noise
    labels = (hot ^ flip).astype(np.uint8)
    features = (obs + rule.feature_shift[:, None, None])[: config.channels]
    return features, labels


def generate_client(config: CorpusConfig, rules: dict[int, FamilyRule], client_id: int) -> ClientData:
    """Deterministic in (config.seed, client_id); clients can be built independently."""
    rng = np.random.default_rng([config.seed, 31, client_id])
    fam = config.families[client_id - 1]
    rule = rules[fam]
    n_designs = config.designs_per_client[client_id - 1]
    per_design = config.placements_per_design[fam]
    parts = []
    for d in range(n_designs):
        design_id = f"c{client_id}_{FAMILY_NAMES[fam]}_d{d:02d}"
        xs, ys = _design_placements(design_id, rule, config, rng, per_design)
        parts.append(Dataset(np.stack(xs), np.stack(ys), [design_id] * per_design))
    n_train = int(np.clip(round(config.train_fraction * n_designs), 1, n_designs - 1))
    order = rng.permutation(n_designs)
    train = Dataset.concat([parts[i] for i in sorted(order[:n_train])])
    test = Dataset.concat([parts[i] for i in sorted(order[n_train:])])
    return ClientData(client_id, fam, train, test)


def _design_placements(design_id, rule, config, rng, count, max_designs=20, max_tries=10):
    for _ in range(max_designs):
        bp = _make_blueprint(rng, design_id, rule, config.grid)
        xs, ys = [], []
        for _ in range(count):
            for _ in range(max_tries):
                x, y = _placement(bp, rule, config, rng)
                if MIN_HOTSPOT_RATE <= y.mean() <= MAX_HOTSPOT_RATE:
                    xs.append(x)
                    ys.append(y)
                    break
            else:
                break
        if len(xs) == count:
            return xs, ys
    raise ConfigurationError(
        f"could not generate {design_id} with hotspot rate in [{MIN_HOTSPOT_RATE}, {MAX_HOTSPOT_RATE}]"
    )


def generate_corpus(config: CorpusConfig | None = None) -> list[ClientData]:
    config = config or CorpusConfig()
    config.validate()
    rules = make_family_rules(config)
    return [generate_client(config, rules, k) for k in range(1, config.clients + 1)]


def check_leakage(corpus: list[ClientData]) -> None:
    """Raise if any design shows up in two splits or two clients."""
    owner: dict[str, tuple[int, str]] = {}
    for client in corpus:
        for split, ds in (("train", client.train), ("test", client.test)):
            for design in ds.designs:
                prev = owner.setdefault(design, (client.client_id, split))
                if prev != (client.client_id, split):
                    raise ConfigurationError(f"design {design} appears in {prev} and {(client.client_id, split)}")


# -- on-disk format ---------------------------------------------------------


def encode_sample(x: np.ndarray, y: np.ndarray) -> bytes:
    c, h, w = x.shape
    return (
        SAMPLE_HEADER.pack(SAMPLE_MAGIC, SAMPLE_VERSION, w, h, c)
        + np.ascontiguousarray(x, dtype="<f8").tobytes()
        + np.ascontiguousarray(y, dtype=np.uint8).tobytes()
    )


def decode_sample(buf: bytes, path=None, expect: tuple[int, int, int] | None = None):
    """Parse one sample file; ``expect`` is (w, h, c) from the manifest."""
    if len(buf) < SAMPLE_HEADER.size:
        raise FormatError(f"truncated header ({len(buf)} bytes)", path, len(buf))
    magic, version, w, h, c = SAMPLE_HEADER.unpack_from(buf)
    if magic != SAMPLE_MAGIC:
        raise FormatError(f"bad magic {magic!r}", path, 0)
    if version != SAMPLE_VERSION:
        raise FormatError(f"unsupported version {version}", path, 4)
    for offset, name, value in ((8, "width", w), (12, "height", h), (16, "channels", c)):
        if value < 1:
            raise FormatError(f"{name} {value} must be >= 1", path, offset)
    if expect is not None:
        for offset, name, value, want in zip((8, 12, 16), ("width", "height", "channels"), (w, h, c), expect):
            if value != want:
                raise FormatError(f"{name} {value} disagrees with manifest ({want})", path, offset)
    n_float = w * h * c
    size = SAMPLE_HEADER.size + 8 * n_float + w * h
    if len(buf) != size:
        raise FormatError(f"expected {size} bytes, found {len(buf)}", path, min(len(buf), size))
    x = np.frombuffer(buf, dtype="<f8", count=n_float, offset=SAMPLE_HEADER.size).reshape(c, h, w)
    y = np.frombuffer(buf, dtype=np.uint8, offset=SAMPLE_HEADER.size + 8 * n_float).reshape(h, w)
    if not np.all(np.isfinite(x)):
        raise FormatError("non-finite feature value", path, SAMPLE_HEADER.size)
    if np.any(y > 1):
        bad = int(np.argmax(y > 1))
        raise FormatError("label byte not in {0, 1}", path, SAMPLE_HEADER.size + 8 * n_float + bad)
    return x.astype(np.float64), y.copy()


def atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _client_dir(root: Path, client_id: int) -> Path:
    return root / f"client_{client_id:02d}"


def save_corpus(corpus: list[ClientData], directory, config: CorpusConfig | None = None) -> Path:
    """Write one directory per client: a text manifest plus one binary file per sample."""
    root = Path(directory)
    if not corpus:
        raise ConfigurationError("corpus has no clients")
    for client in corpus:
        if client.n_train < 1 or len(client.test) < 1:
            raise ConfigurationError(f"client {client.client_id} needs >= 1 train and >= 1 test sample")
    root.mkdir(parents=True, exist_ok=True)
    lines = ["format = flroute-corpus", "version = 1", f"clients = {len(corpus)}"]
    if config is not None:
        for key, value in config.snapshot().items():
            lines.append(f"config.{key} = {_fmt_value(value)}")
    atomic_write(root / CORPUS_MANIFEST, ("\n".join(lines) + "\n").encode())
    for client in corpus:
        cdir = _client_dir(root, client.client_id)
        cdir.mkdir(exist_ok=True)
        _, c, h, w = client.train.x.shape
        lines = [
            f"client_id = {client.client_id}",
            f"family_id = {client.family_id}",
            f"grid = {w} {h}",
            f"channels = {c}",
            f"channel_names = {','.join(CHANNEL_NAMES[:c])}",
            f"train_count = {len(client.train)}",
            f"test_count = {len(client.test)}",
        ]
        for split, ds in (("train", client.train), ("test", client.test)):
            for design in ds.designs:
                lines.append(f"design = {design} {split} {ds.design_ids.count(design)}")
        for split, ds in (("train", client.train), ("test", client.test)):
            seen: dict[str, int] = {}
            for x, y, design in zip(ds.x, ds.y, ds.design_ids):
                j = seen.get(design, 0)
                seen[design] = j + 1
                name = f"{split}_{design}_p{j:03d}.fgrd"
                atomic_write(cdir / name, encode_sample(x, y))
                lines.append(f"sample = {split} {design} {name}")
        atomic_write(cdir / MANIFEST_NAME, ("\n".join(lines) + "\n").encode())
    return root


def _fmt_value(value) -> str:
    if isinstance(value, dict):
        return ",".join(f"{k}:{v}" for k, v in sorted(value.items()))
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _read_manifest(path: Path) -> list[tuple[str, str, int]]:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FormatError("missing manifest", path) from None
    except UnicodeDecodeError as exc:
        raise FormatError(f"manifest is not text: {exc}", path, exc.start) from None
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value'", path)
        key, value = line.split("=", 1)
        entries.append((key.strip(), value.strip(), lineno))
    return entries


def load_client(cdir: Path) -> ClientData:
    mpath = cdir / MANIFEST_NAME
    entries = _read_manifest(mpath)
    header: dict[str, str] = {}
    samples = []
    try:
        for key, value, lineno in entries:
            if key == "sample":
                split, design, name = value.split()
                if split not in ("train", "test") or "/" in name or name.startswith("."):
                    raise ValueError(f"bad sample entry {value!r}")
                samples.append((split, design, name))
            elif key != "design":
                header[key] = value
        client_id = int(header["client_id"])
        family_id = int(header["family_id"])
        w, h = (int(v) for v in header["grid"].split())
        c = int(header["channels"])
        counts = {"train": int(header["train_count"]), "test": int(header["test_count"])}
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed manifest: {exc}", mpath) from None
    split_data: dict[str, tuple[list, list, list]] = {"train": ([], [], []), "test": ([], [], [])}
    for split, design, name in samples:
        fpath = cdir / name
        try:
            buf = fpath.read_bytes()
        except FileNotFoundError:
            raise FormatError("sample listed in manifest is missing", fpath) from None
        x, y = decode_sample(buf, fpath, expect=(w, h, c))
        xs, ys, ds = split_data[split]
        xs.append(x)
        ys.append(y)
        ds.append(design)
    for split, count in counts.items():
        if len(split_data[split][0]) != count or count < 1:
            raise FormatError(f"{split} has {len(split_data[split][0])} samples, manifest says {count}", mpath)
    train, test = (
        Dataset(np.stack(split_data[s][0]), np.stack(split_data[s][1]), split_data[s][2]) for s in ("train", "test")
    )
    return ClientData(client_id, family_id, train, test)


def load_corpus(directory) -> list[ClientData]:
    root = Path(directory)
    entries = _read_manifest(root / CORPUS_MANIFEST)
    header = {k: v for k, v, _ in entries}
    if header.get("format") != "flroute-corpus" or header.get("version") != "1":
        raise FormatError("not an flroute corpus manifest", root / CORPUS_MANIFEST)
    try:
        k = int(header["clients"])
    except (KeyError, ValueError):
        raise FormatError("manifest lacks a client count", root / CORPUS_MANIFEST) from None
    corpus = [load_client(_client_dir(root, i)) for i in range(1, k + 1)]
    for i, client in enumerate(corpus, 1):
        if client.client_id != i:
            raise FormatError(f"directory for client {i} holds client {client.client_id}", _client_dir(root, i))
    return corpus


def corpus_config_from_manifest(directory) -> dict[str, str]:
    entries = _read_manifest(Path(directory) / CORPUS_MANIFEST)
    return {k[len("config."):]: v for k, v, _ in entries if k.startswith("config.")}
