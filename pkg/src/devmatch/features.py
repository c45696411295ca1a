"""Pair features for device/cookie candidates.

A row holds 67 slots numbered 1..67 (stored 0-based). Slots 1-21 copy
device and cookie fields, 22-26 are set cardinalities, 27 is a reserved
constant zero, and 28-67 sum and average the IP aggregate vector x_a and
the joint behaviour vectors z_ab over the shared-IP set I.
"""
from __future__ import annotations

import csv
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .candidates import BlockingThresholds, CandidateSet, rare_ips
from .datamodel import COOKIE, DEVICE, Catalog, Handle

N_FEATURES = 67

DEVICE_FIELD_SLOTS = range(1, 12)
COOKIE_FIELD_SLOTS = range(12, 22)
OWNER_SLOTS = (24, 25, 26)
RESERVED_SLOT = 27

# Slots copied from categorical/anonymous columns, where -1 encodes "missing".
MISSING_SLOTS = tuple(range(1, 10)) + tuple(range(12, 21))

FEATURE_NAMES = (
    "device_type", "device_os", "device_country", "device_anon_c0", "device_anon_c1",
    "device_anon_c2", "device_anon_5", "device_anon_6", "device_anon_7",
    "device_n_ips", "device_n_properties",
    "cookie_computer_os", "cookie_browser_version", "cookie_country", "cookie_anon_c0",
    "cookie_anon_c1", "cookie_anon_c2", "cookie_anon_5", "cookie_anon_6", "cookie_anon_7",
    "cookie_n_ips",
    "shared_ips", "shared_rare_ips", "n_other_devices", "ips_shared_with_other_devices",
    "properties_shared_with_other_devices", "reserved",
    *(f"ipagg_sum_{n}" for n in ("is_cell", "total_freq", "c0", "c1", "c2")),
    *(f"ipagg_mean_{n}" for n in ("is_cell", "total_freq", "c0", "c1", "c2")),
    *(f"device_ip_sum_{n}" for n in ("freq", "c1", "c2", "c3", "c4", "c5")),
    *(f"device_ip_mean_{n}" for n in ("freq", "c1", "c2", "c3", "c4", "c5")),
    *(f"cookie_ip_sum_{n}" for n in ("freq", "c1", "c2", "c3", "c4", "c5")),
    *(f"cookie_ip_mean_{n}" for n in ("freq", "c1", "c2", "c3", "c4", "c5")),
    *(f"ip_sum_diff_{n}" for n in ("freq", "c1", "c2", "c3", "c4", "c5")),
)
assert len(FEATURE_NAMES) == N_FEATURES


def slot(k: int) -> int:
    """0-based column of 1-based feature number ``k``."""
    return k - 1


def missing_mask() -> np.ndarray:
    mask = np.zeros(N_FEATURES, dtype=np.bool_)
    mask[[slot(k) for k in MISSING_SLOTS]] = True
    return mask


class DeviceLabels(Mapping):
    """device_id -> Handle, with the reverse index from known handle to devices."""

    def __init__(self, handles: Mapping[str, Handle | str] = ()):
        self._handles: dict[str, Handle] = {}
        self._by_handle: dict[str, set[str]] = {}
        for did, h in dict(handles).items():
            h = h if isinstance(h, Handle) else Handle.parse(h)
            self._handles[did] = h
            if h.known:
                self._by_handle.setdefault(h.value, set()).add(did)

    @classmethod
    def of(cls, labels) -> "DeviceLabels":
        return labels if isinstance(labels, cls) else cls(labels)

    @classmethod
    def from_catalog(cls, catalog: Catalog, device_ids: Iterable[str] | None = None) -> "DeviceLabels":
        ids = catalog.devices if device_ids is None else device_ids
        return cls({d: catalog.devices[d].handle for d in ids if catalog.devices[d].handle.known})

    def __getitem__(self, did):
        return self._handles[did]

    def __iter__(self):
        return iter(self._handles)

    def __len__(self):
        return len(self._handles)

    def devices_with(self, handle: str) -> frozenset[str]:
        return frozenset(self._by_handle.get(handle, ()))

    def augmented(self, extra: Mapping[str, Handle | str]) -> "DeviceLabels":
        merged: dict[str, Handle | str] = dict(self._handles)
        merged.update(extra)
        return DeviceLabels(merged)


@dataclass(frozen=True)
class PairContext:
    I_D1: frozenset[str]
    I_D2: frozenset[str]
    I_C1: frozenset[str]
    I_C2: frozenset[str]
    P_D: frozenset[str]
    I: frozenset[str]
    O: frozenset[str]
    I_O: frozenset[str]
    P_O: frozenset[str]


@dataclass
class FeatureRow:
    device_id: str
    cookie_id: str
    values: np.ndarray
    label: bool | None = None

    def __getitem__(self, k: int) -> float:
        """1-based slot access."""
        return float(self.values[k - 1])


def owner_sets(catalog: Catalog, device_id: str, cookie_id: str, labels) -> tuple[frozenset, frozenset, frozenset]:
    """(O, I_O, P_O) for a pair under the given device labels."""
    labels = DeviceLabels.of(labels)
    handle = catalog.cookies[cookie_id].handle
    if not handle.known:
        return frozenset(), frozenset(), frozenset()
    others = labels.devices_with(handle.value) - {device_id}
    ips: set[str] = set()
    props: set[str] = set()
    for did in others:
        ips |= catalog.ips_of(DEVICE, did)
        props |= catalog.properties_of(DEVICE, did)
    return frozenset(others), frozenset(ips), frozenset(props)


def build_context(
    catalog: Catalog,
    device_id: str,
    cookie_id: str,
    labeled_device_handles,
    thresholds: BlockingThresholds = BlockingThresholds(),
) -> PairContext:
    if device_id not in catalog.devices:
        raise KeyError(f"unknown device_id {device_id!r}")
    if cookie_id not in catalog.cookies:
        raise KeyError(f"unknown cookie_id {cookie_id!r}")
    d1 = catalog.ips_of(DEVICE, device_id)
    c1 = catalog.ips_of(COOKIE, cookie_id)
    d2 = frozenset(rare_ips(catalog, d1, thresholds.r1_dev, thresholds.r1_cook))
    c2 = frozenset(rare_ips(catalog, c1, thresholds.r1_dev, thresholds.r1_cook))
    rare_shared = d2 & c2
    shared = rare_shared if rare_shared else d1 & c1
    others, ips_o, props_o = owner_sets(catalog, device_id, cookie_id, labeled_device_handles)
    return PairContext(
        I_D1=d1, I_D2=d2, I_C1=c1, I_C2=c2,
        P_D=catalog.properties_of(DEVICE, device_id),
        I=shared, O=others, I_O=ips_o, P_O=props_o,
    )


def extract_features(catalog: Catalog, device_id: str, cookie_id: str, context: PairContext) -> FeatureRow:
    dev = catalog.devices[device_id]
    cook = catalog.cookies[cookie_id]
    v = np.zeros(N_FEATURES, dtype=np.float64)
    v[0:11] = (
        dev.device_type, dev.device_os, dev.country, dev.anon_c0, dev.anon_c1, dev.anon_c2,
        dev.anon_5, dev.anon_6, dev.anon_7,
        len(context.I_D1), len(catalog.properties_of(DEVICE, device_id)),
    )
    v[11:21] = (
        cook.computer_os, cook.browser_version, cook.country, cook.anon_c0, cook.anon_c1,
        cook.anon_c2, cook.anon_5, cook.anon_6, cook.anon_7, len(context.I_C1),
    )
    v[21] = len(context.I_D1 & context.I_C1)
    v[22] = len(context.I_D2 & context.I_C2)
    v[23] = len(context.O)
    v[24] = len(context.I_D1 & context.I_O)
    v[25] = len(context.P_D & context.P_O)

    n = len(context.I)
    if n:
        x_sum = [0] * 5
        zd_sum = [0] * 6
        zc_sum = [0] * 6
        for ip in context.I:
            for j, value in enumerate(catalog.aggregate(ip).vector):
                x_sum[j] += value
            od = catalog.observation(DEVICE, device_id, ip)
            if od is not None:
                for j, value in enumerate(od.joint_vector):
                    zd_sum[j] += value
            oc = catalog.observation(COOKIE, cookie_id, ip)
            if oc is not None:
                for j, value in enumerate(oc.joint_vector):
                    zc_sum[j] += value
        x = np.array(x_sum, dtype=np.float64)
        zd = np.array(zd_sum, dtype=np.float64)
        zc = np.array(zc_sum, dtype=np.float64)
        v[27:32] = x
        v[32:37] = x / n
        v[37:43] = zd
        v[43:49] = zd / n
        v[49:55] = zc
        v[55:61] = zc / n
        v[61:67] = zd - zc
    return FeatureRow(device_id, cookie_id, v)


def pair_label(catalog: Catalog, device_id: str, cookie_id: str) -> bool | None:
    dh = catalog.devices[device_id].handle
    if not dh.known:
        return None
    ch = catalog.cookies[cookie_id].handle
    return ch.known and ch.value == dh.value


def _rows_for_devices(catalog, items, labels, thresholds) -> list[FeatureRow]:
    labels = DeviceLabels.of(labels)
    rows = []
    for did, cookie_ids in items:
        for cid in cookie_ids:
            ctx = build_context(catalog, did, cid, labels, thresholds)
            row = extract_features(catalog, did, cid, ctx)
            row.label = pair_label(catalog, did, cid)
            rows.append(row)
    return rows


_worker_state: dict = {}


def _init_worker(catalog, labels, thresholds):
    _worker_state["args"] = (catalog, labels, thresholds)


def _worker_chunk(items):
    catalog, labels, thresholds = _worker_state["args"]
    return _rows_for_devices(catalog, items, labels, thresholds)


def build_dataset(
    catalog: Catalog,
    candidate_sets: Mapping[str, CandidateSet] | Iterable[CandidateSet],
    labeled_device_handles,
    thresholds: BlockingThresholds = BlockingThresholds(),
    n_jobs: int = 1,
) -> list[FeatureRow]:
    """One row per (device, candidate cookie), ordered by device then cookie id.

    With ``n_jobs > 1`` devices are split into contiguous chunks, extracted
    in worker processes and stitched back in the serial order.
    """
    if isinstance(candidate_sets, Mapping):
        candidate_sets = candidate_sets.values()
    items = sorted((cs.device_id, tuple(sorted(cs.cookie_ids))) for cs in candidate_sets)
    labels = DeviceLabels.of(labeled_device_handles)
    if n_jobs <= 1 or len(items) < 2:
        return _rows_for_devices(catalog, items, labels, thresholds)
    n_chunks = min(len(items), n_jobs * 4)
    bounds = np.linspace(0, len(items), n_chunks + 1).astype(int)
    chunks = [items[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(n_jobs, initializer=_init_worker, initargs=(catalog, labels, thresholds)) as pool:
        parts = list(pool.map(_worker_chunk, chunks))
    return [row for part in parts for row in part]


def recompute_owner_features(catalog: Catalog, rows: Sequence[FeatureRow], labeled_device_handles) -> list[FeatureRow]:
    """Copy of ``rows`` with slots 24-26 refreshed under new device labels.

    Nothing else depends on O, I_O or P_O, so the remaining slots are kept.
    """
    labels = DeviceLabels.of(labeled_device_handles)
    out = []
    for row in rows:
        others, ips_o, props_o = owner_sets(catalog, row.device_id, row.cookie_id, labels)
        values = row.values.copy()
        values[23] = len(others)
        values[24] = len(catalog.ips_of(DEVICE, row.device_id) & ips_o)
        values[25] = len(catalog.properties_of(DEVICE, row.device_id) & props_o)
        out.append(FeatureRow(row.device_id, row.cookie_id, values, row.label))
    return out


def to_matrix(rows: Sequence[FeatureRow]) -> np.ndarray:
    if not rows:
        return np.zeros((0, N_FEATURES), dtype=np.float64)
    return np.vstack([r.values for r in rows])


def to_labels(rows: Sequence[FeatureRow]) -> np.ndarray:
    if any(r.label is None for r in rows):
        raise ValueError("rows contain unlabeled pairs")
    return np.array([1.0 if r.label else 0.0 for r in rows], dtype=np.float64)


def write_dataset_csv(path, rows: Sequence[FeatureRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["device_id", "cookie_id", *(f"f{k}" for k in range(1, N_FEATURES + 1)), "label"])
        for r in rows:
            label = "" if r.label is None else int(r.label)
            writer.writerow([r.device_id, r.cookie_id, *(repr(float(x)) for x in r.values), label])


def read_dataset_csv(path) -> list[FeatureRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for rec in reader:
            label = None if rec[-1] == "" else rec[-1] == "1"
            values = np.array([float(x) for x in rec[2:2 + N_FEATURES]], dtype=np.float64)
            rows.append(FeatureRow(rec[0], rec[1], values, label))
    return rows


_LABEL_BYTE = {None: 255, False: 0, True: 1}
_BYTE_LABEL = {v: k for k, v in _LABEL_BYTE.items()}
_ROW = struct.Struct("<" + "d" * N_FEATURES + "B")


def cache_path(directory, content_hash: str):
    return Path(directory) / f"features-{content_hash[:16]}.bin"


def write_binary_cache(path, rows: Sequence[FeatureRow]) -> None:
    """Row count (u64 LE), then per row 67 f64 LE values and a label byte (255 = none)."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(rows)))
        for r in rows:
            fh.write(_ROW.pack(*r.values.tolist(), _LABEL_BYTE[r.label]))


def read_binary_cache(path) -> tuple[np.ndarray, list[bool | None]]:
    with open(path, "rb") as fh:
        data = fh.read()
    (n,) = struct.unpack_from("<Q", data, 0)
    if len(data) != 8 + n * _ROW.size:
        raise ValueError(f"{path}: truncated feature cache")
    values = np.empty((n, N_FEATURES), dtype=np.float64)
    labels = []
    for i, rec in enumerate(_ROW.iter_unpack(data[8:])):
        values[i] = rec[:N_FEATURES]
        labels.append(_BYTE_LABEL[rec[N_FEATURES]])
    return values, labels
