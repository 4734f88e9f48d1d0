"""Dataset ingestion, deterministic splits, and synthetic generators.

CSV convention: one header row, float columns, last column is the regression
target.  Rows containing NaN are dropped and counted.  Three small public
time series ship with the package (monthly airline passengers, monthly Mauna
Loa CO2, and a yearly sunspot series standing in for solar irradiance); the
UCI benchmark tables are loaded from user-supplied files, with a checksum
recorded for the Boston housing table.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .util import SpecError

DATA_DIR = Path(__file__).parent / "data"

BOSTON_SHA256 = "dabe774132cf1f35464a048f213b1d4f39f64ad9efb1157d64d457702f72e19b"


@dataclass
class Dataset:
    name: str
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    dropped_rows: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx: np.ndarray, suffix: str = "") -> "Dataset":
        return Dataset(
            name=self.name + suffix,
            X=self.X[idx],
            y=self.y[idx],
            feature_names=self.feature_names,
        )


def load_csv(path, name: str | None = None) -> Dataset:
    """Parse a header+float CSV; last column is the target; NaN rows dropped."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows: list[list[float]] = []
        dropped = 0
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            parsed = []
            for col_no, cell in enumerate(row, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: unparseable cell at row {line_no}, column {col_no}: {cell!r}"
                    ) from None
            if any(math.isnan(v) for v in parsed):
                dropped += 1
                continue
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    if data.shape[1] < 2:
        raise ValueError(f"{path}: need at least one feature column plus a target")
    return Dataset(
        name=name or path.stem,
        X=data[:, :-1],
        y=data[:, -1],
        feature_names=tuple(header[:-1]),
        dropped_rows=dropped,
    )


def _bundled(name: str) -> Dataset:
    return load_csv(DATA_DIR / f"{name}.csv", name=name)


def airline() -> Dataset:
    """Monthly international airline passenger totals, 1949-1960 (thousands)."""
    return _bundled("airline")


def mauna() -> Dataset:
    """Monthly mean atmospheric CO2 at Mauna Loa, 1958-2001 (ppm)."""
    return _bundled("mauna")


def solar() -> Dataset:
    """Yearly sunspot numbers, 1700-2008 (solar-activity stand-in series)."""
    return _bundled("solar")


def boston(path=None, verify_checksum: bool = True) -> Dataset:
    """Boston housing table (506 x 13 features + medv target), user supplied.

    Set KERNELNET_BOSTON or pass the path explicitly.  The file hash is
    checked against the canonical table unless verify_checksum=False.
    """
    if path is None:
        path = os.environ.get("KERNELNET_BOSTON")
    if path is None:
        raise FileNotFoundError(
            "boston dataset is not bundled; pass path= or set KERNELNET_BOSTON"
        )
    if verify_checksum:
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        if digest != BOSTON_SHA256:
            raise ValueError(
                f"{path}: sha256 {digest} does not match the canonical boston table"
            )
    ds = load_csv(path, name="boston")
    return ds


NAMED_DATASETS = {
    "airline": airline,
    "mauna": mauna,
    "solar": solar,
}


def load_named(name: str, path=None) -> Dataset:
    if name == "boston":
        return boston(path)
    if name in NAMED_DATASETS:
        return NAMED_DATASETS[name]()
    if path is not None:
        return load_csv(path, name=name)
    raise SpecError(f"unknown dataset {name!r} and no path given")


# ---------------------------------------------------------------------------
# splits


def random_split(ds: Dataset, train_frac: float, rng: np.random.Generator):
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must be in (0, 1)")
    if ds.n < 2:
        raise ValueError("need at least 2 rows to split")
    perm = rng.permutation(ds.n)
    n_train = max(1, int(round(train_frac * ds.n)))
    n_train = min(n_train, ds.n - 1)
    return perm[:n_train], perm[n_train:]


def random_splits(ds: Dataset, repeats: int = 10, train_frac: float = 0.9, seed: int = 0):
    """Deterministic list of (train_idx, test_idx) pairs, one rng per repeat."""
    out = []
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        out.append(random_split(ds, train_frac, rng))
    return out


def pca_split(ds: Dataset, tail_frac: float = 1.0 / 15.0):
    """Deterministic extrapolation split along the top principal component.

    Centers X, projects onto the leading right singular vector (sign fixed by
    its largest-magnitude entry), sorts with original index as tiebreak, and
    assigns the top and bottom ceil(n * tail_frac) points to the test set.
    """
    if ds.n < int(np.ceil(1.0 / tail_frac)):
        raise ValueError(f"need at least {int(np.ceil(1.0 / tail_frac))} rows")
    centered = ds.X - ds.X.mean(axis=0)
    if not np.any(centered):
        raise ValueError("all rows identical: top principal component undefined")
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s[0] <= 0:
        raise ValueError("zero-variance inputs: top principal component undefined")
    direction = vt[0]
    pivot = int(np.argmax(np.abs(direction)))
    if direction[pivot] < 0:
        direction = -direction
    proj = centered @ direction
    order = np.argsort(proj, kind="stable")
    k = int(np.ceil(ds.n * tail_frac))
    test = np.concatenate([order[:k], order[-k:]])
    train = order[k:-k]
    return np.sort(train), np.sort(test)


# ---------------------------------------------------------------------------
# synthetic generators


def _mvn_sample(K: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    K = K + 1e-10 * np.mean(np.diag(K)) * np.eye(K.shape[0])
    low = np.linalg.cholesky(K)
    return low @ rng.standard_normal(K.shape[0])


def _grid_draw(spec, grid: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    from .graph import ParameterStore, forward_matrix

    store = ParameterStore.from_spec(spec, 1)
    K = forward_matrix(spec, store, grid[:, None], grid[:, None]).values
    return _mvn_sample(K, rng)


def synth_generate(kind: str, seed: int = 0) -> Dataset:
    """Deterministic synthetic datasets.

    fig1_2d       y = (cos 2x1 + cos 2x2) * sqrt(|x1 x2|), 100 points in [-6, 6]^2
    gp_sample_1d  draw from an rbf+periodic GP; 100 points on [-12, 0] u [6, 14],
                  truth curve on a dense grid in extras
    neuron_toy    draw from a lin + rbf*periodic GP; 100 points on [-10, 10]
    """
    from .graph import LinearSpec, NetworkSpec, PrimitiveSlot, ProductSpec
    from .primitives import Primitive
    from .util import RAW_ZERO, softplus_inverse as spi

    rng = np.random.default_rng(seed)
    if kind == "fig1_2d":
        X = rng.uniform(-6.0, 6.0, size=(100, 2))
        y = (np.cos(2 * X[:, 0]) + np.cos(2 * X[:, 1])) * np.sqrt(np.abs(X[:, 0] * X[:, 1]))
        return Dataset("fig1_2d", X, y, ("x1", "x2"))

    if kind == "gp_sample_1d":
        grid = np.linspace(-13.0, 15.0, 561)
        spec = NetworkSpec(
            (
                PrimitiveSlot(Primitive("rbf"), np.array([spi(1.0), spi(2.0)])),
                PrimitiveSlot(Primitive("per"), np.array([spi(1.0), spi(1.0), spi(3.0)])),
            ),
            (LinearSpec(1, np.full((1, 2), spi(1.0))),),
        )
        f = _grid_draw(spec, grid, rng)
        left = rng.uniform(-12.0, 0.0, size=50)
        right = rng.uniform(6.0, 14.0, size=50)
        xs = np.sort(np.concatenate([left, right]))
        ys = np.interp(xs, grid, f) + 0.05 * rng.standard_normal(100)
        return Dataset(
            "gp_sample_1d", xs[:, None], ys, ("x",),
            extras={"grid_x": grid, "grid_y": f},
        )

    if kind == "neuron_toy":
        grid = np.linspace(-10.0, 10.0, 481)
        z = RAW_ZERO
        one = spi(1.0)
        # pre-product pairs: (lin, bias 1), (rbf, per) -> lin + rbf*per
        mix = LinearSpec(
            4,
            np.array([[one, z, z], [z, z, z], [z, one, z], [z, z, one]]),
            np.array([z, one, z, z]),
        )
        spec = NetworkSpec(
            (
                PrimitiveSlot(Primitive("lin"), np.array([spi(0.05)])),
                PrimitiveSlot(Primitive("rbf"), np.array([spi(1.0), spi(2.0)])),
                PrimitiveSlot(Primitive("per"), np.array([spi(1.0), spi(1.0), spi(2.5)])),
            ),
            (mix, ProductSpec(2), LinearSpec(1, np.full((1, 2), spi(1.0)))),
        )
        f = _grid_draw(spec, grid, rng)
        xs = np.sort(rng.uniform(-10.0, 10.0, size=100))
        ys = np.interp(xs, grid, f) + 0.05 * rng.standard_normal(100)
        return Dataset(
            "neuron_toy", xs[:, None], ys, ("x",),
            extras={"grid_x": grid, "grid_y": f},
        )

    raise SpecError(f"unknown synthetic dataset {kind!r}")
