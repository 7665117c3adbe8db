"""Spot ingestion, gene filtering, label binning, splitting and graph assembly.

File contracts:

* Spot CSV: header ``sample_id,x,y,label,<gene1>,<gene2>,...``, UTF-8,
  ``.`` decimal, one spot per row.
* Gene list: plain text, one gene name per line.
* Label map: two-column TSV ``raw_label<TAB>coarse_class_name``; coarse
  class order is defined by first appearance.
* Prepared dataset: a directory with ``manifest.json`` plus one
  ``<sample_id>.graph.json`` per sample holding positions, features,
  edges, edge attributes and labels as nested numeric arrays.

The pipeline is deterministic: the same (file, flags, seed) produces a
bit-identical prepared dataset.
"""

from __future__ import annotations

import csv
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError, ParameterError
from .geometry import RadiusGraph, build_radius_graph
from .ioutil import atomic_write_text, dump_json, read_json

_REQUIRED_COLUMNS = ("sample_id", "x", "y", "label")
_SAMPLE_ID_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


@dataclass
class SpotTable:
    """Raw ingested spots; ``class_ids`` is populated by :func:`bin_labels`."""

    sample_ids: list[str]
    positions: np.ndarray        # (n, 2)
    expression: np.ndarray       # (n, num_genes)
    raw_labels: list[str]
    gene_names: list[str]
    class_ids: np.ndarray | None = None

    @property
    def num_spots(self) -> int:
        return len(self.sample_ids)

    def sample_order(self) -> list[str]:
        """Distinct sample ids in first-appearance order."""
        seen: dict[str, None] = {}
        for sid in self.sample_ids:
            seen.setdefault(sid)
        return list(seen)

    def rows_for(self, sample_id: str) -> np.ndarray:
        return np.array([i for i, sid in enumerate(self.sample_ids)
                         if sid == sample_id], dtype=np.int64)


@dataclass(frozen=True)
class LabelMap:
    mapping: dict[str, int]
    class_names: tuple[str, ...]

    def validate(self) -> None:
        used = set(self.mapping.values())
        if used != set(range(len(self.class_names))):
            raise DataError(
                f"label map classes are not dense 0..{len(self.class_names) - 1}: "
                f"{sorted(used)}")


@dataclass(frozen=True)
class DatasetSplit:
    train_sample_ids: tuple[str, ...]
    holdout_sample_ids: tuple[str, ...]
    seed: int


@dataclass(eq=False)
class GraphSample:
    """One tissue slide as a graph."""

    sample_id: str
    node_features: np.ndarray    # (n, d)
    positions: np.ndarray        # (n, 2)
    graph: RadiusGraph
    labels: np.ndarray           # (n,) class indices

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]


@dataclass(frozen=True)
class SyntheticConfig:
    num_samples: int = 20
    spots_per_sample: int = 300
    num_genes: int = 32
    num_classes: int = 3
    region_seeds_per_class: int = 4
    expression_mode: str = "informative"
    class_separation: float = 1.0
    noise_scale: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if min(self.num_samples, self.spots_per_sample, self.num_genes,
               self.region_seeds_per_class) < 1:
            raise ParameterError("all synthetic counts must be positive")
        if self.num_classes != 3:
            raise ParameterError("synthetic generator is fixed at 3 classes")
        if self.expression_mode not in ("informative", "noise_only"):
            raise ParameterError(
                f"expression_mode must be 'informative' or 'noise_only', "
                f"got {self.expression_mode!r}")


# ---------------------------------------------------------------------------
# ingestion


def load_spot_table(path) -> SpotTable:
    """Parse a spot CSV; errors carry the offending 1-based line number."""
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        for i, col in enumerate(_REQUIRED_COLUMNS):
            if i >= len(header) or header[i] != col:
                raise DataError(
                    f"{path}:1: missing or misplaced required column {col!r} "
                    f"(header must start with {','.join(_REQUIRED_COLUMNS)})")
        gene_names = header[4:]
        width = len(header)
        sample_ids: list[str] = []
        raw_labels: list[str] = []
        positions: list[tuple[float, float]] = []
        expression: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise DataError(
                    f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            if not row[0]:
                raise DataError(f"{path}:{lineno}: empty sample_id")
            try:
                positions.append((float(row[1]), float(row[2])))
                expression.append([float(v) for v in row[4:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric value ({exc})") from None
            sample_ids.append(row[0])
            raw_labels.append(row[3])
    return SpotTable(
        sample_ids=sample_ids,
        positions=np.array(positions, dtype=np.float64).reshape(-1, 2),
        expression=np.array(expression, dtype=np.float64).reshape(-1, len(gene_names)),
        raw_labels=raw_labels,
        gene_names=gene_names,
    )


def write_spot_table(path, table: SpotTable) -> None:
    rows = [["sample_id", "x", "y", "label", *table.gene_names]]
    for i in range(table.num_spots):
        rows.append([table.sample_ids[i],
                     repr(float(table.positions[i, 0])),
                     repr(float(table.positions[i, 1])),
                     table.raw_labels[i],
                     *[repr(float(v)) for v in table.expression[i]]])
    out = "\n".join(",".join(r) for r in rows) + "\n"
    atomic_write_text(path, out)


def load_gene_list(path) -> list[str]:
    names = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines()]
    names = [n for n in names if n]
    if not names:
        raise DataError(f"{path}: gene list is empty")
    return names


def load_label_map(path) -> LabelMap:
    mapping: dict[str, int] = {}
    class_names: list[str] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(),
                                  start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'raw_label<TAB>class_name'")
        raw, cls = parts[0].strip(), parts[1].strip()
        if cls not in class_names:
            class_names.append(cls)
        if raw in mapping:
            raise DataError(f"{path}:{lineno}: duplicate raw label {raw!r}")
        mapping[raw] = class_names.index(cls)
    lm = LabelMap(mapping=mapping, class_names=tuple(class_names))
    lm.validate()
    return lm


def write_label_map(path, label_map: LabelMap) -> None:
    lines = [f"{raw}\t{label_map.class_names[idx]}"
             for raw, idx in label_map.mapping.items()]
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# pipeline operations


def filter_genes(table: SpotTable, gene_list: list[str]) -> SpotTable:
    """Restrict expression to the listed genes, in list order.

    Genes missing from the table are dropped from the list with a warning;
    zero overlap is an error.
    """
    if not gene_list:
        raise ParameterError("gene list must be non-empty")
    index = {g: i for i, g in enumerate(table.gene_names)}
    kept = [g for g in gene_list if g in index]
    missing = len(gene_list) - len(kept)
    if missing:
        warnings.warn(f"{missing} listed gene(s) not present in the table; skipped",
                      stacklevel=2)
    if not kept:
        raise DataError("no listed gene is present in the table (empty feature set)")
    cols = np.array([index[g] for g in kept], dtype=np.int64)
    return SpotTable(
        sample_ids=list(table.sample_ids),
        positions=table.positions.copy(),
        expression=table.expression[:, cols].copy(),
        raw_labels=list(table.raw_labels),
        gene_names=kept,
        class_ids=None if table.class_ids is None else table.class_ids.copy(),
    )


def bin_labels(table: SpotTable, label_map: LabelMap) -> SpotTable:
    """Attach coarse class indices from the raw-label map (must be total)."""
    label_map.validate()
    unmapped = sorted(set(table.raw_labels) - set(label_map.mapping))
    if unmapped:
        raise DataError(f"raw label(s) missing from the label map: {unmapped}")
    class_ids = np.array([label_map.mapping[l] for l in table.raw_labels],
                         dtype=np.int64)
    return SpotTable(
        sample_ids=list(table.sample_ids),
        positions=table.positions.copy(),
        expression=table.expression.copy(),
        raw_labels=list(table.raw_labels),
        gene_names=list(table.gene_names),
        class_ids=class_ids,
    )


def select_holdout(table: SpotTable, k: int, min_classes: int, seed: int) -> DatasetSplit:
    """Hold out k samples drawn uniformly from those whose spots cover at
    least ``min_classes`` distinct raw labels (thresholded pre-binning)."""
    if k < 1:
        raise ParameterError("holdout size k must be >= 1")
    order = table.sample_order()
    distinct: dict[str, set[str]] = {sid: set() for sid in order}
    for sid, raw in zip(table.sample_ids, table.raw_labels):
        distinct[sid].add(raw)
    candidates = [sid for sid in order if len(distinct[sid]) >= min_classes]
    if len(candidates) < k:
        raise DataError(
            f"only {len(candidates)} sample(s) cover >= {min_classes} raw labels; "
            f"cannot hold out {k}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(candidates), size=k, replace=False)
    holdout = {candidates[i] for i in chosen}
    train = [sid for sid in order if sid not in holdout]
    if not train:
        raise DataError("holdout selection leaves an empty training set")
    return DatasetSplit(train_sample_ids=tuple(sorted(train)),
                        holdout_sample_ids=tuple(sorted(holdout)),
                        seed=seed)


def fit_feature_scaler(table: SpotTable, train_sample_ids) -> tuple[np.ndarray, np.ndarray]:
    """Per-gene mean/std over training spots; zero-variance genes keep std 1."""
    train_set = set(train_sample_ids)
    rows = np.array([i for i, sid in enumerate(table.sample_ids) if sid in train_set],
                    dtype=np.int64)
    if rows.size == 0:
        raise DataError("no training spots to fit the feature scaler on")
    sub = table.expression[rows]
    mean = sub.mean(axis=0)
    std = sub.std(axis=0, ddof=0)
    std = np.where(std > 0.0, std, 1.0)
    return mean, std


def assemble_graphs(table: SpotTable, split: DatasetSplit, radius: float,
                    standardize: bool = False):
    """Build one GraphSample per sample id.

    Node order is the stable file order within each sample. When
    ``standardize`` is set, features are z-scored per gene with statistics
    fit on training spots only (holdout reuses them). Returns
    (train_graphs, holdout_graphs, scaler) where scaler is
    ``{"mean": [...], "std": [...]}`` or None.
    """
    if table.class_ids is None:
        raise ContractError("table must be binned before graph assembly")
    if table.class_ids.size and table.class_ids.max() >= 3:
        raise DataError("graph assembly expects 3 coarse classes; "
                        f"saw class index {int(table.class_ids.max())}")
    all_ids = set(split.train_sample_ids) | set(split.holdout_sample_ids)
    present = set(table.sample_order())
    if all_ids != present:
        raise ContractError("split sample ids do not match the table")

    features = table.expression
    scaler = None
    if standardize:
        mean, std = fit_feature_scaler(table, split.train_sample_ids)
        features = (features - mean) / std
        scaler = {"mean": mean.tolist(), "std": std.tolist()}

    def build(sample_ids) -> list[GraphSample]:
        out = []
        for sid in sample_ids:
            rows = table.rows_for(sid)
            if rows.size < 2:
                warnings.warn(f"sample {sid!r} has {rows.size} spot(s); "
                              "kept as an edgeless graph", stacklevel=2)
            pos = table.positions[rows]
            out.append(GraphSample(
                sample_id=sid,
                node_features=features[rows].copy(),
                positions=pos.copy(),
                graph=build_radius_graph(pos, radius),
                labels=table.class_ids[rows].copy(),
            ))
        return out

    return build(split.train_sample_ids), build(split.holdout_sample_ids), scaler


# ---------------------------------------------------------------------------
# synthetic data


def synthetic_class_names(num_classes: int = 3) -> tuple[str, ...]:
    return tuple(f"region_{chr(ord('a') + i)}" for i in range(num_classes))


def generate_synthetic(config: SyntheticConfig) -> tuple[SpotTable, LabelMap]:
    """Desk-scale synthetic slides with spatially contiguous class regions.

    One fixed layout of ``num_classes * region_seeds_per_class`` sites is
    drawn per dataset (round-robin class assignment), shared by every
    sample; each spot's raw label is its nearest site, so binning the
    site labels recovers the class regions. Positions are uniform in the
    unit square. In ``informative`` mode expression is the class pattern
    (entries +-class_separation) plus Gaussian noise; in ``noise_only``
    mode it is pure noise, so labels depend on position alone. Per-sample
    streams are split off the root seed, one generator per sample.
    """
    config.validate()
    seeds = np.random.SeedSequence(config.seed).spawn(config.num_samples + 1)
    root = np.random.default_rng(seeds[0])
    num_sites = config.num_classes * config.region_seeds_per_class
    sites = root.uniform(size=(num_sites, 2))
    site_class = np.arange(num_sites, dtype=np.int64) % config.num_classes
    patterns = root.choice([-1.0, 1.0], size=(config.num_classes, config.num_genes))

    gene_names = [f"g{g:03d}" for g in range(config.num_genes)]
    sample_ids: list[str] = []
    raw_labels: list[str] = []
    positions = []
    expression = []
    for s in range(config.num_samples):
        rng = np.random.default_rng(seeds[s + 1])
        sid = f"s{s:02d}"
        pos = rng.uniform(size=(config.spots_per_sample, 2))
        d2 = ((pos[:, None, :] - sites[None, :, :]) ** 2).sum(axis=2)
        nearest = d2.argmin(axis=1)
        expr = rng.standard_normal((config.spots_per_sample, config.num_genes))
        expr *= config.noise_scale
        if config.expression_mode == "informative":
            expr += config.class_separation * patterns[site_class[nearest]]
        positions.append(pos)
        expression.append(expr)
        sample_ids.extend([sid] * config.spots_per_sample)
        raw_labels.extend(f"site_{i:02d}" for i in nearest)

    class_names = synthetic_class_names(config.num_classes)
    label_map = LabelMap(
        mapping={f"site_{i:02d}": int(site_class[i]) for i in range(num_sites)},
        class_names=class_names,
    )
    table = SpotTable(
        sample_ids=sample_ids,
        positions=np.concatenate(positions, axis=0),
        expression=np.concatenate(expression, axis=0),
        raw_labels=raw_labels,
        gene_names=gene_names,
    )
    return table, label_map


# ---------------------------------------------------------------------------
# prepared-dataset directory


def _graph_sample_to_json(sample: GraphSample) -> dict:
    return {
        "sample_id": sample.sample_id,
        "positions": sample.positions.tolist(),
        "features": sample.node_features.tolist(),
        "edges": sample.graph.edges.tolist(),
        "edge_attr": sample.graph.edge_attr.tolist(),
        "labels": sample.labels.tolist(),
        "radius": sample.graph.radius,
    }


def _graph_sample_from_json(doc: dict) -> GraphSample:
    edges = np.array(doc["edges"], dtype=np.int64).reshape(-1, 2)
    features = np.array(doc["features"], dtype=np.float64)
    n = features.shape[0]
    graph = RadiusGraph(
        num_nodes=n,
        edges=edges,
        edge_attr=np.array(doc["edge_attr"], dtype=np.float64).reshape(-1, 3),
        radius=float(doc["radius"]),
    )
    return GraphSample(
        sample_id=doc["sample_id"],
        node_features=features,
        positions=np.array(doc["positions"], dtype=np.float64).reshape(-1, 2),
        graph=graph,
        labels=np.array(doc["labels"], dtype=np.int64),
    )


def save_prepared(out_dir, train: list[GraphSample], holdout: list[GraphSample],
                  manifest: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for sample in [*train, *holdout]:
        if not _SAMPLE_ID_RE.match(sample.sample_id):
            raise DataError(
                f"sample id {sample.sample_id!r} is not filesystem-safe")
        atomic_write_text(out_dir / f"{sample.sample_id}.graph.json",
                          dump_json(_graph_sample_to_json(sample)))
    atomic_write_text(out_dir / "manifest.json", dump_json(manifest))


def load_prepared(data_dir):
    """Read a prepared dataset directory -> (train, holdout, manifest)."""
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{data_dir}: not a prepared dataset (no manifest.json)")
    manifest = read_json(manifest_path)

    def read_samples(ids) -> list[GraphSample]:
        out = []
        for sid in ids:
            doc = read_json(data_dir / f"{sid}.graph.json")
            out.append(_graph_sample_from_json(doc))
        return out

    split = manifest["split"]
    return read_samples(split["train"]), read_samples(split["holdout"]), manifest
