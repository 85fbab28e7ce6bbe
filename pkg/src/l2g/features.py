"""Descriptor storage: local feature sets, global features, and their files.

Local descriptor sets are persisted in the "L2GF" format: a little-endian
header (magic, version u32, image count u32, descriptor dim u32) followed,
per image, by (id length u32, UTF-8 id, descriptor count u32, row-major
float32 descriptors).  Global features use the sibling "L2GG" format with
the per-image vector count fixed to 1.  Descriptor payloads are float32;
that is the canonical representation, so save/load round-trips are
bit-exact.  Computations upcast to float64 where it matters.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import binio
from .errors import (
    DescriptorCapExceeded,
    DimensionMismatch,
    DuplicateId,
    FormatError,
    IoFailure,
    ZeroNormDescriptor,
)

# Rows are accepted as unit-norm if within NORM_TOL of 1; rows off by at
# most RENORM_TOL are silently renormalized, anything further is an error.
NORM_TOL = 1e-4
RENORM_TOL = 1e-2

DEFAULT_DESCRIPTOR_CAP = 600


def _normalize_rows(rows: np.ndarray) -> np.ndarray:
    """Renormalize rows whose norm is recoverable; reject the rest."""
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    bad = np.abs(norms - 1.0) > RENORM_TOL
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ZeroNormDescriptor(
            f"descriptor row {i} has norm {norms[i]:.6g}, "
            f"outside the {RENORM_TOL} renormalization tolerance"
        )
    needs = np.abs(norms - 1.0) > NORM_TOL
    if np.any(needs):
        rows = rows.copy()
        rows[needs] = (rows[needs].astype(np.float64) / norms[needs, None]).astype(
            np.float32
        )
    return rows


@dataclass(frozen=True)
class LocalFeatureSet:
    """One image's set of unit-norm local descriptors, shape (n, d)."""

    image_id: str
    descriptors: np.ndarray

    def __post_init__(self):
        desc = np.ascontiguousarray(self.descriptors, dtype=np.float32)
        object.__setattr__(self, "descriptors", desc)
        if desc.ndim != 2 or desc.shape[0] < 1 or desc.shape[1] < 2:
            raise DimensionMismatch(
                f"descriptors must be (n>=1, d>=2), got {desc.shape}"
            )
        norms = np.linalg.norm(desc.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            i = int(np.argmax(np.abs(norms - 1.0)))
            raise ZeroNormDescriptor(
                f"image {self.image_id!r}: row {i} has norm {norms[i]:.6g}"
            )

    @classmethod
    def from_raw(
        cls, image_id: str, descriptors: np.ndarray, cap: int = DEFAULT_DESCRIPTOR_CAP
    ) -> "LocalFeatureSet":
        """Build a set from raw rows, renormalizing within tolerance."""
        desc = np.ascontiguousarray(descriptors, dtype=np.float32)
        if desc.ndim != 2 or desc.shape[0] < 1 or desc.shape[1] < 2:
            raise DimensionMismatch(
                f"descriptors must be (n>=1, d>=2), got {desc.shape}"
            )
        if desc.shape[0] > cap:
            raise DescriptorCapExceeded(
                f"image {image_id!r} has {desc.shape[0]} descriptors, cap is {cap}"
            )
        return cls(image_id, _normalize_rows(desc))

    @property
    def n(self) -> int:
        return self.descriptors.shape[0]

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]

    @cached_property
    def unit_f64(self) -> np.ndarray:
        """Float64 rows renormalized exactly; the compute-side view.

        The stored float32 payload is only unit to ~1e-7, which the power
        modulation would amplify; inner products are taken on this view.
        """
        rows = self.descriptors.astype(np.float64)
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        return rows


@dataclass(frozen=True)
class GlobalFeature:
    """A single unit-norm global descriptor for one image."""

    image_id: str
    vector: np.ndarray

    def __post_init__(self):
        vec = np.ascontiguousarray(self.vector, dtype=np.float32).reshape(-1)
        object.__setattr__(self, "vector", vec)
        norm = float(np.linalg.norm(vec.astype(np.float64)))
        if abs(norm - 1.0) > NORM_TOL:
            raise ZeroNormDescriptor(
                f"global feature {self.image_id!r} has norm {norm:.6g}"
            )


class FeatureCollection:
    """Ordered, immutable list of LocalFeatureSet with unique ids.

    Iteration order equals file order and is stable across save/load.
    An optional parallel list of global features may be attached.
    """

    def __init__(
        self,
        sets: list[LocalFeatureSet],
        globals_: list[GlobalFeature] | None = None,
    ):
        self._sets = list(sets)
        seen: set[str] = set()
        for s in self._sets:
            if s.image_id in seen:
                raise DuplicateId(f"duplicate image_id {s.image_id!r}")
            seen.add(s.image_id)
        dims = {s.dim for s in self._sets}
        if len(dims) > 1:
            raise DimensionMismatch(f"mixed descriptor dimensions: {sorted(dims)}")
        if globals_ is not None:
            if len(globals_) != len(self._sets):
                raise DimensionMismatch(
                    "global feature list must parallel the local sets"
                )
            for s, g in zip(self._sets, globals_):
                if s.image_id != g.image_id:
                    raise DuplicateId(
                        f"global feature id {g.image_id!r} does not match {s.image_id!r}"
                    )
        self.globals = list(globals_) if globals_ is not None else None
        self._ordinal = {s.image_id: i for i, s in enumerate(self._sets)}

    def __len__(self) -> int:
        return len(self._sets)

    def __iter__(self):
        return iter(self._sets)

    def __getitem__(self, ordinal: int) -> LocalFeatureSet:
        return self._sets[ordinal]

    @property
    def image_ids(self) -> list[str]:
        return [s.image_id for s in self._sets]

    @property
    def dim(self) -> int:
        return self._sets[0].dim if self._sets else 0

    def ordinal_of(self, image_id: str) -> int:
        return self._ordinal[image_id]


class GlobalStore:
    """Lookup table image_id -> unit-norm global vector."""

    def __init__(self, features: list[GlobalFeature]):
        seen: set[str] = set()
        dims = set()
        for g in features:
            if g.image_id in seen:
                raise DuplicateId(f"duplicate image_id {g.image_id!r}")
            seen.add(g.image_id)
            dims.add(g.vector.shape[0])
        if len(dims) > 1:
            raise DimensionMismatch(f"mixed global dimensions: {sorted(dims)}")
        self._features = list(features)
        self._by_id = {g.image_id: g.vector for g in features}

    def __len__(self) -> int:
        return len(self._features)

    def __iter__(self):
        return iter(self._features)

    @property
    def dim(self) -> int:
        return self._features[0].vector.shape[0] if self._features else 0

    def get(self, image_id: str) -> np.ndarray | None:
        return self._by_id.get(image_id)

    def matrix(self, image_ids: list[str]) -> np.ndarray:
        """Stack vectors for the given ids, float64; KeyError if absent."""
        return np.stack(
            [self._by_id[i].astype(np.float64) for i in image_ids], axis=0
        )


def save_collection(collection: FeatureCollection, path: str | os.PathLike) -> None:
    """Write a collection in the L2GF format (locals only)."""
    try:
        with open(path, "wb") as f:
            f.write(binio.MAGIC_FEATURES)
            binio.write_u32(f, binio.FORMAT_VERSION)
            binio.write_u32(f, len(collection))
            binio.write_u32(f, collection.dim)
            for s in collection:
                binio.write_string(f, s.image_id)
                binio.write_u32(f, s.n)
                binio.write_f32_array(f, s.descriptors)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_collection(
    path: str | os.PathLike, cap: int = DEFAULT_DESCRIPTOR_CAP
) -> FeatureCollection:
    """Read an L2GF file, renormalizing descriptor rows within tolerance."""
    try:
        with open(path, "rb") as f:
            binio.expect_magic(f, binio.MAGIC_FEATURES)
            binio.expect_version(f)
            count = binio.read_u32(f)
            dim = binio.read_u32(f)
            sets = []
            for _ in range(count):
                image_id = binio.read_string(f)
                n = binio.read_u32(f)
                rows = binio.read_f32_array(f, n * dim).reshape(n, dim)
                sets.append(LocalFeatureSet.from_raw(image_id, rows, cap=cap))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return FeatureCollection(sets)


def save_globals(store: GlobalStore, path: str | os.PathLike) -> None:
    """Write global features in the L2GG format (one vector per image)."""
    try:
        with open(path, "wb") as f:
            f.write(binio.MAGIC_GLOBALS)
            binio.write_u32(f, binio.FORMAT_VERSION)
            binio.write_u32(f, len(store))
            binio.write_u32(f, store.dim)
            for g in store:
                binio.write_string(f, g.image_id)
                binio.write_u32(f, 1)
                binio.write_f32_array(f, g.vector)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_globals(path: str | os.PathLike) -> GlobalStore:
    try:
        with open(path, "rb") as f:
            binio.expect_magic(f, binio.MAGIC_GLOBALS)
            binio.expect_version(f)
            count = binio.read_u32(f)
            dim = binio.read_u32(f)
            features = []
            for _ in range(count):
                image_id = binio.read_string(f)
                n = binio.read_u32(f)
                if n != 1:
                    raise FormatError(
                        f"global feature record for {image_id!r} has {n} vectors"
                    )
                vec = binio.read_f32_array(f, dim)
                features.append(GlobalFeature(image_id, vec))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return GlobalStore(features)


def concat_collections(collections: list[FeatureCollection]) -> FeatureCollection:
    """Concatenate collections in order (database followed by distractors)."""
    sets: list[LocalFeatureSet] = []
    for c in collections:
        sets.extend(c)
    return FeatureCollection(sets)


@dataclass
class Manifest:
    """JSON manifest listing the feature files of one benchmark."""

    database: list[str] = field(default_factory=list)
    queries: str | None = None
    distractors: list[str] = field(default_factory=list)
    globals: str | None = None
    ground_truth: str | None = None


def save_manifest(manifest: Manifest, path: str | os.PathLike) -> None:
    payload = {
        "schema": "l2g/manifest-v1",
        "database": manifest.database,
        "queries": manifest.queries,
        "distractors": manifest.distractors,
        "globals": manifest.globals,
        "ground_truth": manifest.ground_truth,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def load_manifest(path: str | os.PathLike) -> Manifest:
    """Read a manifest; relative entries are resolved against its directory."""
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(entry):
        if entry is None:
            return None
        return entry if os.path.isabs(entry) else os.path.join(base, entry)

    def resolve_list(value):
        if value is None:
            return []
        if isinstance(value, str):
            value = [value]
        return [resolve(v) for v in value]

    return Manifest(
        database=resolve_list(payload.get("database")),
        queries=resolve(payload.get("queries")),
        distractors=resolve_list(payload.get("distractors")),
        globals=resolve(payload.get("globals")),
        ground_truth=resolve(payload.get("ground_truth")),
    )
