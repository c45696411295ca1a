"""Hand-built worlds for unit tests."""
import csv
from pathlib import Path

from devmatch.datamodel import SCHEMAS, TABLE_FILES, ingest


def device_row(did, handle="-1", **kw):
    row = dict(drawbridge_handle=handle, device_id=did, device_type="dt", device_os="os",
               country="c", anonymous_c0="1", anonymous_c1="a1", anonymous_c2="a2",
               anonymous_5="1", anonymous_6="2", anonymous_7="3")
    row.update(kw)
    return row


def cookie_row(cid, handle="-1", **kw):
    row = dict(drawbridge_handle=handle, cookie_id=cid, computer_os_type="os",
               computer_browser_version="b", country="c", anonymous_c0="0", anonymous_c1="a1",
               anonymous_c2="a2", anonymous_5="4", anonymous_6="5", anonymous_7="6")
    row.update(kw)
    return row


def write_tables(directory, devices=(), cookies=(), ips=(), ipagg=(), props=(), categories=()):
    """``ips`` entries: (kind, owner, ip, freq, c1..c5) with kind "d"/"c" (missing counters are 0).
    ``ipagg`` entries: (ip, is_cell, total, c0, c1, c2). ``props``: (kind, owner, property, count)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ind = {"d": "0", "c": "1"}
    tables = {
        "devices": [[r[c] for c in SCHEMAS["devices"]] for r in devices],
        "cookies": [[r[c] for c in SCHEMAS["cookies"]] for r in cookies],
        "ip": [[o, ind[k], ip, *(list(vals) + [0] * (6 - len(vals)))] for k, o, ip, *vals in ips],
        "ipagg": [list(r) for r in ipagg],
        "property": [[o, ind[k], p, n] for k, o, p, n in props],
        "property_category": [list(r) for r in categories],
    }
    for name, rows in tables.items():
        with open(d / TABLE_FILES[name], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(SCHEMAS[name])
            w.writerows(rows)
    return d


def make_catalog(directory, **tables):
    return ingest(write_tables(directory, **tables))
