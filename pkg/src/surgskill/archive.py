"""Byte-reproducible ``.npz`` container used for checkpoints and crop caches.

``numpy.savez`` stamps the current time into every zip entry, so two saves of
identical arrays differ on disk.  This writer pins the entry timestamps and
stores a JSON metadata document alongside the arrays.
"""
import io
import json
import zipfile

import numpy as np

from .errors import InputError

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _entry(zf, name, payload):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def write_archive(path, arrays, meta, kind):
    """Write ``arrays`` (name -> ndarray) and a JSON-serialisable ``meta`` dict."""
    header = {"format": "surgskill-archive", "version": FORMAT_VERSION, "kind": kind, "meta": meta}
    with zipfile.ZipFile(path, "w") as zf:
        _entry(zf, "meta.json", json.dumps(header, sort_keys=True, indent=1).encode("utf-8"))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            _entry(zf, name + ".npy", buf.getvalue())


def read_archive(path, kind):
    """Return ``(arrays, meta)``; raise :class:`InputError` on a foreign or stale file."""
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise InputError(f"{path}: not a readable archive ({exc})") from exc
    with zf:
        try:
            header = json.loads(zf.read("meta.json"))
        except KeyError:
            raise InputError(f"{path}: missing meta.json") from None
        if header.get("format") != "surgskill-archive" or header.get("kind") != kind:
            raise InputError(f"{path}: expected a {kind!r} archive")
        if header.get("version") != FORMAT_VERSION:
            raise InputError(f"{path}: unsupported archive version {header.get('version')}")
        arrays = {}
        for name in zf.namelist():
            if name.endswith(".npy"):
                with zf.open(name) as fh:
                    arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
    return arrays, header["meta"]
