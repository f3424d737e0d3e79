"""CSV ingestion, validation, histogram binning, and categorical encoding.

The pipeline is: ``load_csv`` turns a file plus a :class:`Schema` into a
validated :class:`Dataset`; ``fit_bins`` turns a Dataset into a
:class:`BinnedMatrix` whose per-feature uint16 codes feed the tree builder.
Numeric features are discretized on (equal-frequency) quantile boundaries,
binary categoricals become a single 0/1 indicator, and higher-cardinality
categoricals are replaced by an ordered target-statistic column that is then
binned like any numeric feature.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import PredictionError, SchemaError, ValidationError

FEATURE_KINDS = ("numeric", "categorical")


@dataclass(frozen=True)
class Schema:
    """Declared layout of a claim table.

    feature_columns is an ordered sequence of (name, kind) pairs with kind in
    {"numeric", "categorical"}.  ts_smoothing is the additive smoothing of the
    target-statistic encoder and seed drives its row permutation.
    """

    response_column: str
    feature_columns: tuple[tuple[str, str], ...]
    exposure_column: str | None = None
    max_bins: int = 255
    ts_smoothing: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "feature_columns",
                           tuple((str(n), str(k)) for n, k in self.feature_columns))
        names = [n for n, _ in self.feature_columns]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        for n, k in self.feature_columns:
            if k not in FEATURE_KINDS:
                raise SchemaError(f"feature {n!r} has unknown kind {k!r}")
        if self.response_column in names:
            raise SchemaError("response column cannot also be a feature")
        if self.exposure_column is not None and self.exposure_column in names:
            raise SchemaError("exposure column cannot also be a feature")
        if self.max_bins < 2:
            raise SchemaError("max_bins must be at least 2")
        if self.ts_smoothing < 0:
            raise SchemaError("ts_smoothing must be nonnegative")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.feature_columns)

    def to_dict(self) -> dict:
        return {
            "response_column": self.response_column,
            "exposure_column": self.exposure_column,
            "features": [{"name": n, "kind": k} for n, k in self.feature_columns],
            "max_bins": self.max_bins,
            "ts_smoothing": self.ts_smoothing,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        try:
            features = tuple((f["name"], f["kind"]) for f in d["features"])
            return cls(
                response_column=d["response_column"],
                feature_columns=features,
                exposure_column=d.get("exposure_column"),
                max_bins=int(d.get("max_bins", 255)),
                ts_smoothing=float(d.get("ts_smoothing", 1.0)),
                seed=int(d.get("seed", 0)),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from exc

    @classmethod
    def from_json_file(cls, path) -> "Schema":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class CategoricalColumn:
    """Interned category codes; categories are sorted case-sensitively."""

    codes: np.ndarray             # int32, index into categories
    categories: tuple[str, ...]

    @classmethod
    def from_values(cls, values) -> "CategoricalColumn":
        arr = np.asarray(values, dtype=object)
        cats = tuple(sorted(set(arr.tolist())))
        lookup = {c: i for i, c in enumerate(cats)}
        codes = np.fromiter((lookup[v] for v in arr.tolist()), dtype=np.int32, count=len(arr))
        return cls(codes=codes, categories=cats)

    def codes_for(self, values) -> np.ndarray:
        """Codes for new raw values; unseen categories map to -1."""
        lookup = {c: i for i, c in enumerate(self.categories)}
        return np.fromiter((lookup.get(v, -1) for v in values), dtype=np.int32, count=len(values))


@dataclass
class Dataset:
    """Validated columnar claim table: counts y, exposures w, feature columns."""

    y: np.ndarray
    w: np.ndarray
    numeric: dict[str, np.ndarray] = field(default_factory=dict)
    categorical: dict[str, CategoricalColumn] = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.int64)
        self.w = np.asarray(self.w, dtype=np.float64)
        n = self.y.shape[0]
        if self.w.shape[0] != n:
            raise ValidationError("y and w must have the same length")
        if np.any(self.y < 0):
            row = int(np.argmax(self.y < 0))
            raise ValidationError(f"negative claim count at row {row}", row=row)
        if np.any(~(self.w > 0)):
            row = int(np.argmax(~(self.w > 0)))
            raise ValidationError(f"nonpositive exposure at row {row}", row=row)
        for name, col in self.numeric.items():
            col = np.asarray(col, dtype=np.float64)
            if col.shape[0] != n:
                raise ValidationError(f"column {name!r} has wrong length")
            if not np.all(np.isfinite(col)):
                row = int(np.argmax(~np.isfinite(col)))
                raise ValidationError(f"non-finite value in {name!r} at row {row}", row=row)
            self.numeric[name] = col
        for name, col in self.categorical.items():
            if col.codes.shape[0] != n:
                raise ValidationError(f"column {name!r} has wrong length")

    @property
    def n_rows(self) -> int:
        return int(self.y.shape[0])

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(self.numeric) + tuple(self.categorical)

    def take(self, indices) -> "Dataset":
        """Row subset preserving the given order (used by CV folds)."""
        idx = np.asarray(indices)
        return Dataset(
            y=self.y[idx],
            w=self.w[idx],
            numeric={k: v[idx] for k, v in self.numeric.items()},
            categorical={
                k: CategoricalColumn(codes=v.codes[idx], categories=v.categories)
                for k, v in self.categorical.items()
            },
        )


def load_csv(path, schema: Schema) -> Dataset:
    """Read an RFC-4180 CSV under ``schema`` into a validated Dataset.

    Raises SchemaError when a declared column is missing from the header,
    ValidationError (with the 0-based data-row index) on bad cell values.
    Missing values are rejected; row order is preserved.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        col_idx = {name: i for i, name in enumerate(header)}
        needed = [schema.response_column] + list(schema.feature_names)
        if schema.exposure_column is not None:
            needed.append(schema.exposure_column)
        for name in needed:
            if name not in col_idx:
                raise SchemaError(f"{path}: column {name!r} not found in header")

        y_idx = col_idx[schema.response_column]
        w_idx = col_idx[schema.exposure_column] if schema.exposure_column else None
        feat_idx = [(name, kind, col_idx[name]) for name, kind in schema.feature_columns]

        ys: list[int] = []
        ws: list[float] = []
        numeric_raw: dict[str, list[float]] = {n: [] for n, k, _ in feat_idx if k == "numeric"}
        categorical_raw: dict[str, list[str]] = {n: [] for n, k, _ in feat_idx if k == "categorical"}

        for row_num, row in enumerate(reader):
            if len(row) < len(header):
                raise ValidationError(f"row {row_num}: expected {len(header)} fields, got {len(row)}",
                                      row=row_num)
            raw_y = row[y_idx]
            try:
                fy = float(raw_y)
            except ValueError:
                raise ValidationError(f"row {row_num}: claim count {raw_y!r} is not a number",
                                      row=row_num) from None
            if not fy.is_integer() or fy < 0:
                raise ValidationError(
                    f"row {row_num}: claim count must be a nonnegative integer, got {raw_y!r}",
                    row=row_num)
            ys.append(int(fy))
            if w_idx is None:
                ws.append(1.0)
            else:
                try:
                    fw = float(row[w_idx])
                except ValueError:
                    raise ValidationError(f"row {row_num}: exposure {row[w_idx]!r} is not a number",
                                          row=row_num) from None
                if not fw > 0:
                    raise ValidationError(f"row {row_num}: exposure must be positive, got {fw}",
                                          row=row_num)
                ws.append(fw)
            for name, kind, i in feat_idx:
                cell = row[i]
                if cell == "":
                    raise ValidationError(f"row {row_num}: missing value in column {name!r}",
                                          row=row_num)
                if kind == "numeric":
                    try:
                        numeric_raw[name].append(float(cell))
                    except ValueError:
                        raise ValidationError(
                            f"row {row_num}: column {name!r} value {cell!r} is not numeric",
                            row=row_num) from None
                else:
                    categorical_raw[name].append(cell)

    return Dataset(
        y=np.asarray(ys, dtype=np.int64),
        w=np.asarray(ws, dtype=np.float64),
        numeric={n: np.asarray(v, dtype=np.float64) for n, v in numeric_raw.items()},
        categorical={n: CategoricalColumn.from_values(v) for n, v in categorical_raw.items()},
    )


# ---------------------------------------------------------------------------
# Target-statistic encoding
# ---------------------------------------------------------------------------

@dataclass
class TargetStatEncoder:
    """Smoothed conditional-mean encoder fitted on the full training data.

    The fitting pass produces leakage-free per-row values (each row sees only
    rows preceding it under a seeded permutation); at prediction time the
    full-data sums stored here are used.  Unseen categories map to the prior.
    """

    feature: str
    categories: tuple[str, ...]
    sums: np.ndarray          # per-category sum of y over the full data
    counts: np.ndarray        # per-category row counts
    prior: float              # total claims / total exposure
    smoothing: float
    seed: int

    def encode_codes(self, codes: np.ndarray) -> np.ndarray:
        """Full-data encoding for interned codes; -1 (unseen) maps to prior."""
        a = self.smoothing
        if a > 0:
            values = (self.sums + a * self.prior) / (self.counts + a)
        else:
            with np.errstate(invalid="ignore"):
                values = np.where(self.counts > 0, self.sums / np.maximum(self.counts, 1), self.prior)
        out = np.full(codes.shape[0], self.prior, dtype=np.float64)
        seen = codes >= 0
        out[seen] = values[codes[seen]]
        return out

    def encode_values(self, values) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.categories)}
        codes = np.fromiter((lookup.get(v, -1) for v in values), dtype=np.int32, count=len(values))
        return self.encode_codes(codes)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "categories": list(self.categories),
            "sums": self.sums.tolist(),
            "counts": self.counts.tolist(),
            "prior": self.prior,
            "smoothing": self.smoothing,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TargetStatEncoder":
        return cls(
            feature=d["feature"],
            categories=tuple(d["categories"]),
            sums=np.asarray(d["sums"], dtype=np.float64),
            counts=np.asarray(d["counts"], dtype=np.int64),
            prior=float(d["prior"]),
            smoothing=float(d["smoothing"]),
            seed=int(d["seed"]),
        )


def encode_categorical(data: Dataset, feature: str, seed: int,
                       smoothing: float = 1.0) -> tuple[np.ndarray, TargetStatEncoder]:
    """Ordered target-statistic encoding of one categorical feature.

    Row i's encoded value is (sum_y + a*prior_i) / (count + a) accumulated
    over the rows of the same category that precede i in a seeded random
    permutation.  prior_i is the mean rate with row i left out, so changing
    y at row i never changes row i's own encoding, not even through the
    smoothing term; at prediction time the returned encoder uses the plain
    global rate.  Returns the leakage-free training column plus that encoder.
    """
    col = data.categorical[feature]
    n = data.n_rows
    prior = float(data.y.sum() / data.w.sum())
    y = data.y.astype(np.float64)
    denom = data.w.sum() - data.w
    with np.errstate(divide="ignore", invalid="ignore"):
        loo_prior = np.where(denom > 0, (data.y.sum() - y) / np.maximum(denom, 1e-300), 0.0)

    perm = np.random.default_rng(seed).permutation(n)
    cats_in_order = col.codes[perm]
    y_in_order = y[perm]
    # Stable sort by category keeps permutation order inside each group, so a
    # grouped exclusive prefix sum gives each row its predecessors' totals.
    order = np.argsort(cats_in_order, kind="stable")
    grouped_cats = cats_in_order[order]
    grouped_y = y_in_order[order]
    incl = np.cumsum(grouped_y)
    excl = incl - grouped_y
    starts = np.concatenate(([True], grouped_cats[1:] != grouped_cats[:-1]))
    start_pos = np.nonzero(starts)[0]
    group_of = np.cumsum(starts) - 1
    base = excl[start_pos][group_of] if start_pos.size else np.zeros(0)
    prefix_sum = excl - base
    prefix_count = np.arange(n) - start_pos[group_of]

    a = smoothing
    row_prior = loo_prior[perm][order]
    if a > 0:
        enc_sorted = (prefix_sum + a * row_prior) / (prefix_count + a)
    else:
        enc_sorted = np.where(prefix_count > 0,
                              prefix_sum / np.maximum(prefix_count, 1), row_prior)
    encoded = np.empty(n, dtype=np.float64)
    encoded[perm[order]] = enc_sorted

    n_cats = len(col.categories)
    sums = np.bincount(col.codes, weights=y, minlength=n_cats)
    counts = np.bincount(col.codes, minlength=n_cats).astype(np.int64)
    encoder = TargetStatEncoder(feature=feature, categories=col.categories,
                                sums=sums, counts=counts, prior=prior,
                                smoothing=a, seed=seed)
    return encoded, encoder


# ---------------------------------------------------------------------------
# Histogram binning
# ---------------------------------------------------------------------------

def quantile_boundaries(values: np.ndarray, max_bins: int) -> np.ndarray:
    """Ascending cut points for equal-frequency binning.

    With at most max_bins distinct values every distinct value gets its own
    bin; otherwise cuts are taken at the lower empirical quantiles and
    duplicates merged.  A value equal to a boundary falls in the bin to its
    left; the overall maximum never becomes a boundary.
    """
    distinct = np.unique(values)
    if distinct.size <= max_bins:
        return distinct[:-1].astype(np.float64)
    qs = np.arange(1, max_bins) / max_bins
    cuts = np.unique(np.quantile(values, qs, method="lower"))
    return cuts[cuts < distinct[-1]].astype(np.float64)


def assign_bins(values: np.ndarray, boundaries: np.ndarray) -> np.ndarray:
    """Bin index per value: count of boundaries strictly below it."""
    return np.searchsorted(boundaries, values, side="left").astype(np.uint16)


@dataclass
class BinnedFeature:
    """One column of the binned design plus everything needed to rebuild it."""

    name: str
    source: str
    kind: str                      # "numeric" | "indicator" | "target_stat"
    boundaries: np.ndarray
    positive_category: str | None = None
    encoder: TargetStatEncoder | None = None

    @property
    def bin_count(self) -> int:
        return int(self.boundaries.size) + 1

    def raw_column(self, data: Dataset) -> np.ndarray:
        if self.kind == "numeric":
            if self.source not in data.numeric:
                raise PredictionError(f"missing feature column {self.source!r}")
            return data.numeric[self.source]
        if self.source not in data.categorical:
            raise PredictionError(f"missing feature column {self.source!r}")
        col = data.categorical[self.source]
        if self.kind == "indicator":
            raw = np.asarray([col.categories[c] for c in col.codes], dtype=object)
            return (raw == self.positive_category).astype(np.float64)
        return self.encoder.encode_values([col.categories[c] for c in col.codes])

    def transform(self, data: Dataset) -> np.ndarray:
        return assign_bins(self.raw_column(data), self.boundaries)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "source": self.source,
            "kind": self.kind,
            "boundaries": self.boundaries.tolist(),
            "positive_category": self.positive_category,
            "encoder": self.encoder.to_dict() if self.encoder is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinnedFeature":
        return cls(
            name=d["name"],
            source=d["source"],
            kind=d["kind"],
            boundaries=np.asarray(d["boundaries"], dtype=np.float64),
            positive_category=d.get("positive_category"),
            encoder=TargetStatEncoder.from_dict(d["encoder"]) if d.get("encoder") else None,
        )


@dataclass
class BinnedMatrix:
    """Fitted per-feature discretization plus the training codes.

    ``codes`` is laid out feature-major, shape (n_features, n_rows), so the
    tree builder's histogram kernel scans contiguous memory per feature.
    """

    features: list[BinnedFeature]
    codes: np.ndarray

    @property
    def n_rows(self) -> int:
        return int(self.codes.shape[1])

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def bin_counts(self) -> np.ndarray:
        return np.asarray([f.bin_count for f in self.features], dtype=np.int64)

    def transform(self, data: Dataset) -> np.ndarray:
        """Codes for new data under the fitted boundaries/encoders."""
        out = np.empty((len(self.features), data.n_rows), dtype=np.uint16)
        for i, f in enumerate(self.features):
            out[i] = f.transform(data)
        return out


def fit_bins(data: Dataset, schema: Schema) -> BinnedMatrix:
    """Discretize every schema feature; deterministic given data and schema.

    Constant features end up with a single bin (unsplittable, not an error).
    Binary categoricals turn into one indicator of the lexicographically
    larger category; higher-cardinality categoricals go through the ordered
    target-statistic encoder seeded by schema.seed.
    """
    features: list[BinnedFeature] = []
    columns: list[np.ndarray] = []
    for name, kind in schema.feature_columns:
        if kind == "numeric":
            col = data.numeric[name]
            features.append(BinnedFeature(name=name, source=name, kind="numeric",
                                          boundaries=quantile_boundaries(col, schema.max_bins)))
            columns.append(col)
        else:
            cats = data.categorical[name].categories
            if len(cats) <= 2:
                positive = cats[-1]
                col = (data.categorical[name].codes == len(cats) - 1).astype(np.float64)
                features.append(BinnedFeature(
                    name=f"{name}={positive}", source=name, kind="indicator",
                    boundaries=quantile_boundaries(col, schema.max_bins),
                    positive_category=positive))
                columns.append(col)
            else:
                col, encoder = encode_categorical(data, name, seed=schema.seed,
                                                  smoothing=schema.ts_smoothing)
                features.append(BinnedFeature(
                    name=name, source=name, kind="target_stat",
                    boundaries=quantile_boundaries(col, schema.max_bins),
                    encoder=encoder))
                columns.append(col)
    codes = np.empty((len(features), data.n_rows), dtype=np.uint16)
    for i, (feat, col) in enumerate(zip(features, columns)):
        codes[i] = assign_bins(col, feat.boundaries)
    return BinnedMatrix(features=features, codes=codes)
