"""File formats: grid functions, weights, operator families, trees, reports.

CSV carries a '#'-prefixed header (so bodies stay plot-ready), binary carries
a short magic + struct header. All floats are written with repr(), which is
the shortest round-trip form, so identical inputs always produce identical
bytes; manifests are the only files carrying a timestamp.
"""

from __future__ import annotations

import csv
import datetime
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .dyadic import GridFunction
from .errors import SerializationError, ShapeError
from .reducing import METHOD_NAMES, ReducingFamily
from .stopping import GenerationTree
from .weights import MatrixWeight

__all__ = [
    "save_grid_function",
    "load_grid_function",
    "save_weight",
    "load_weight",
    "export_reducing_family",
    "tree_to_dict",
    "save_generation_tree",
    "equivalence_to_dict",
    "equivalence_rows",
    "write_csv",
    "write_json",
    "sha256_file",
    "write_manifest",
]

_GF_MAGIC = b"HWGF\x01"
_MW_MAGIC = b"HWMW\x01"


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_csv(path, header: list, rows) -> Path:
    """CSV with fixed '\\n' line ends and repr floats; returns the path."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _infer_fmt(path, fmt):
    if fmt is not None:
        if fmt not in ("csv", "binary"):
            raise SerializationError(f"format must be 'csv' or 'binary', got {fmt!r}")
        return fmt
    return "csv" if Path(path).suffix.lower() == ".csv" else "binary"


# ---------------------------------------------------------------------------
# grid functions: flat cell values, row-major, header (d, n, L)


def save_grid_function(f: GridFunction, path, fmt: str | None = None) -> Path:
    path = Path(path)
    flat = f.values.reshape(-1, f.n)
    if _infer_fmt(path, fmt) == "csv":
        with open(path, "w", newline="") as fh:
            fh.write(f"# haarweight grid-function v1 d={f.d} n={f.n} L={f.level}\n")
            w = csv.writer(fh, lineterminator="\n")
            for row in flat:
                w.writerow([_fmt(x) for x in row])
    else:
        with open(path, "wb") as fh:
            fh.write(_GF_MAGIC)
            fh.write(struct.pack("<3q", f.d, f.n, f.level))
            fh.write(np.ascontiguousarray(flat, dtype=np.float64).tobytes())
    return path


def _parse_header(line: str, kind: str) -> tuple:
    parts = line.strip().split()
    if parts[:3] != ["#", "haarweight", kind]:
        raise SerializationError(f"not a haarweight {kind} file: {line.strip()!r}")
    kv = dict(part.split("=", 1) for part in parts[4:] if "=" in part)
    try:
        return int(kv["d"]), int(kv["n"]), int(kv["L"])
    except KeyError as exc:
        raise SerializationError(f"header missing field {exc}") from exc


def load_grid_function(path, fmt: str | None = None) -> GridFunction:
    path = Path(path)
    if _infer_fmt(path, fmt) == "csv":
        with open(path) as fh:
            d, n, level = _parse_header(fh.readline(), "grid-function")
            flat = np.array(
                [[float(x) for x in row] for row in csv.reader(fh) if row]
            )
    else:
        raw = path.read_bytes()
        if raw[: len(_GF_MAGIC)] != _GF_MAGIC:
            raise SerializationError(f"bad magic in {path}")
        d, n, level = struct.unpack_from("<3q", raw, len(_GF_MAGIC))
        flat = np.frombuffer(raw, dtype=np.float64, offset=len(_GF_MAGIC) + 24)
        flat = flat.reshape(-1, n).copy()
    cells = (1 << level) ** d
    if flat.shape != (cells, n):
        raise SerializationError(
            f"{path}: {flat.shape[0]} rows of width {flat.shape[1] if flat.ndim == 2 else '?'}, "
            f"expected {cells} x {n}"
        )
    return GridFunction(d, n, level, flat.reshape(((1 << level),) * d + (n,)))


# ---------------------------------------------------------------------------
# weights: lower-triangle entries per cell, family metadata as JSON


def _tril_indices(n: int):
    return np.tril_indices(n)


def save_weight(weight: MatrixWeight, path, fmt: str | None = None) -> Path:
    path = Path(path)
    i, j = _tril_indices(weight.n)
    flat = weight.cells.reshape(-1, weight.n, weight.n)[:, i, j]
    meta = json.dumps(_jsonable(weight.meta or {}), sort_keys=True)
    if _infer_fmt(path, fmt) == "csv":
        with open(path, "w", newline="") as fh:
            fh.write(
                f"# haarweight matrix-weight v1 d={weight.d} n={weight.n} L={weight.level}\n"
            )
            fh.write(f"# meta {meta}\n")
            w = csv.writer(fh, lineterminator="\n")
            for row in flat:
                w.writerow([_fmt(x) for x in row])
    else:
        blob = meta.encode()
        with open(path, "wb") as fh:
            fh.write(_MW_MAGIC)
            fh.write(struct.pack("<4q", weight.d, weight.n, weight.level, len(blob)))
            fh.write(blob)
            fh.write(np.ascontiguousarray(flat, dtype=np.float64).tobytes())
    return path


def load_weight(path, fmt: str | None = None) -> MatrixWeight:
    path = Path(path)
    if _infer_fmt(path, fmt) == "csv":
        with open(path) as fh:
            d, n, level = _parse_header(fh.readline(), "matrix-weight")
            meta_line = fh.readline().strip()
            if not meta_line.startswith("# meta "):
                raise SerializationError(f"{path}: missing meta header line")
            meta = json.loads(meta_line[len("# meta ") :])
            flat = np.array(
                [[float(x) for x in row] for row in csv.reader(fh) if row]
            )
    else:
        raw = path.read_bytes()
        if raw[: len(_MW_MAGIC)] != _MW_MAGIC:
            raise SerializationError(f"bad magic in {path}")
        d, n, level, mlen = struct.unpack_from("<4q", raw, len(_MW_MAGIC))
        off = len(_MW_MAGIC) + 32
        meta = json.loads(raw[off : off + mlen].decode())
        flat = np.frombuffer(raw, dtype=np.float64, offset=off + mlen)
        flat = flat.reshape(-1, n * (n + 1) // 2).copy()
    cells = (1 << level) ** d
    width = n * (n + 1) // 2
    if flat.shape != (cells, width):
        raise SerializationError(
            f"{path}: body shape {flat.shape}, expected {cells} x {width}"
        )
    i, j = _tril_indices(n)
    mats = np.zeros((cells, n, n))
    mats[:, i, j] = flat
    mats[:, j, i] = flat  # diagonal written twice, harmlessly
    try:
        return MatrixWeight(d, n, level, mats.reshape(((1 << level),) * d + (n, n)), meta)
    except ShapeError as exc:  # pragma: no cover - header/body mismatch above
        raise SerializationError(str(exc)) from exc


# ---------------------------------------------------------------------------
# reducing families: one row per cube


def export_reducing_family(family: ReducingFamily, path) -> Path:
    """CSV rows (level, index, method, kappa, V entries, V' entries)."""
    n = family.n
    header = ["level", "index", "method", "kappa"]
    header += [f"v_{i}_{j}" for i in range(n) for j in range(n)]
    header += [f"vd_{i}_{j}" for i in range(n) for j in range(n)]

    def rows():
        for lvl in range(family.max_depth + 1):
            v = family.v[lvl].reshape(-1, n, n)
            vd = family.v_dual[lvl].reshape(-1, n, n)
            kap = family.kappa[lvl].reshape(-1)
            meth = family.method[lvl].reshape(-1)
            for idx in range(v.shape[0]):
                yield (
                    [lvl, idx, METHOD_NAMES[int(meth[idx])], kap[idx]]
                    + list(v[idx].reshape(-1))
                    + list(vd[idx].reshape(-1))
                )

    return write_csv(path, header, rows())


# ---------------------------------------------------------------------------
# stopping trees


def _reason(info: dict) -> str:
    if info["fired1"] and info["fired2"]:
        return "both"
    return "growth" if info["fired1"] else "shrink"


def tree_to_dict(tree: GenerationTree) -> dict:
    gens = []
    for g in tree.generations:
        gens.append(
            {
                "index": g.index,
                "floor_hit": g.floor_hit,
                "roots": [{"level": r.level, "index": list(r.index)} for r in g.roots],
                "stopping": [
                    {
                        "level": c.level,
                        "index": list(c.index),
                        "reason": _reason(info),
                        "test1": float(info["test1"]),
                        "test2": float(info["test2"]),
                    }
                    for c, info in g.stopping
                ],
            }
        )
    cfg = tree.config
    return {
        "schema_version": 1,
        "d": tree.d,
        "p": cfg.p,
        "lambda1": cfg.lambda1,
        "lambda2": cfg.lambda2,
        "floor_level": tree.floor_level,
        "generation_count": tree.generation_count(),
        "generations": gens,
    }


def save_generation_tree(tree: GenerationTree, path) -> Path:
    return write_json(path, tree_to_dict(tree))


# ---------------------------------------------------------------------------
# equivalence reports: JSON summary + one CSV row per test function


def equivalence_to_dict(rep) -> dict:
    return {
        "p": rep.p,
        "char": rep.char,
        "count": rep.count,
        "seed": rep.seed,
        "spectra": list(rep.spectra),
        "skipped": rep.skipped,
        "max_ratio": rep.max_ratio,
        "max_inverse_ratio": rep.max_inverse_ratio,
        "exponent_upper": rep.exponent_upper,
        "exponent_lower": rep.exponent_lower,
        "c1_emp": rep.c1_emp,
        "c2_emp": rep.c2_emp,
        "quantiles": rep.quantiles(),
        "weight_meta": rep.weight_meta,
    }


def equivalence_rows(rep) -> list:
    return [
        [i, rep.spectrum_of[i], float(rep.ratios[i]), float(1.0 / rep.ratios[i])]
        for i in range(len(rep.ratios))
    ]


# ---------------------------------------------------------------------------
# manifests


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, config_payload: dict, files: list, version: str) -> Path:
    """Manifest listing every output with a content hash.

    The created timestamp is informational only; consumers comparing runs
    must compare the hashed bodies, not the manifest.
    """
    out_dir = Path(out_dir)
    cfg_text = json.dumps(_jsonable(config_payload), sort_keys=True)
    manifest = {
        "schema_version": 1,
        "library_version": version,
        "config_sha256": hashlib.sha256(cfg_text.encode()).hexdigest(),
        "files": {
            str(Path(f).relative_to(out_dir)): sha256_file(f) for f in sorted(files)
        },
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    return write_json(out_dir / "manifest.json", manifest)
