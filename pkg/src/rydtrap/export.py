"""File formats: binary volumes with a one-line text header, and CSV tables.

Floats are written with ``repr``-exact formatting (``%.17g``) so that reruns
with the same seed produce byte-identical files.
"""

import csv
import io
from pathlib import Path

import numpy as np

from .grids import IntensityVolume

VOLUME_MAGIC = "rydtrap-volume-v1"

CURVE_COLUMNS = ("abscissa", "mean", "stderr", "n_samples")
TRAP_COLUMNS = ("site_id", "x_m", "y_m", "z_m", "depth_uK", "nu_x_kHz", "nu_y_kHz", "nu_z_kHz")
FIT_COLUMNS = ("param", "value", "sigma")
SLICE_COLUMNS = ("x_m", "y_m", "z_m", "intensity_W_m2")


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def _header(vol):
    fields = {
        "shape": ",".join(str(n) for n in vol.shape),
        "spacing": ",".join(fmt(s) for s in vol.spacing),
        "origin": ",".join(fmt(o) for o in vol.origin),
        "wavelength": fmt(vol.wavelength),
        "power": fmt(vol.total_power),
        "dtype": "<f8",
        "order": "C",
    }
    return VOLUME_MAGIC + " " + " ".join(f"{k}={v}" for k, v in fields.items()) + "\n"


def write_volume(path, vol):
    """Header line (shape, spacings, origin, wavelength, power), then raw little-endian doubles."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(_header(vol).encode("ascii"))
        f.write(np.ascontiguousarray(vol.values, dtype="<f8").tobytes())
    return path


def read_volume(path):
    with open(path, "rb") as f:
        line = f.readline().decode("ascii").split()
        if not line or line[0] != VOLUME_MAGIC:
            raise ValueError(f"{path}: not a volume file")
        meta = dict(item.split("=", 1) for item in line[1:])
        data = f.read()
    shape = tuple(int(n) for n in meta["shape"].split(","))
    values = np.frombuffer(data, dtype=meta.get("dtype", "<f8"))
    if values.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {np.prod(shape)} samples, found {values.size}")
    return IntensityVolume(
        values.reshape(shape).astype(float),
        tuple(float(s) for s in meta["spacing"].split(",")),
        tuple(float(o) for o in meta["origin"].split(",")),
        total_power=float(meta["power"]),
        wavelength=float(meta["wavelength"]),
    )


def _write_rows(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())
    return Path(path)


def write_slice(path, vol, axis, index):
    """CSV of one grid plane (``axis`` 0, 1 or 2 held at ``index``)."""
    xs, ys, zs = vol.axes()
    sel = [slice(None)] * 3
    sel[axis] = index
    grids = np.meshgrid(xs, ys, zs, indexing="ij")
    cols = [g[tuple(sel)].ravel() for g in grids] + [vol.values[tuple(sel)].ravel()]
    return _write_rows(path, SLICE_COLUMNS, zip(*cols))


def write_curve(path, curve):
    return _write_rows(path, CURVE_COLUMNS, curve.rows())


def read_curve(path):
    arr = np.genfromtxt(path, delimiter=",", names=True)
    return arr


def write_traps(path, sites):
    """``sites``: iterable of (site_id, TrapCharacterization)."""
    rows = []
    for sid, tc in sites:
        rows.append((sid, *tc.center, tc.depth_uK, *(np.asarray(tc.frequencies) / 1e3)))
    return _write_rows(path, TRAP_COLUMNS, rows)


def write_fit(path, result):
    return _write_rows(path, FIT_COLUMNS, result.rows())


def write_table(path, header, rows):
    return _write_rows(path, header, rows)
