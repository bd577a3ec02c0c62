"""File formats: tensor files, JSON sidecars, PGM export, CSV logs, configs.

Tensor file layout: one line of JSON, a newline, then the raw little-endian
row-major payload (complex values as interleaved real, imaginary pairs)::

    {"magic": "IRT1", "dtype": "c128", "shape": [32, 32], "order": "row-major", "endian": "little"}
"""

import csv
import dataclasses
import json
import os
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

MAGIC = "IRT1"
_DTYPES = {"f64": np.dtype("<f8"), "c128": np.dtype("<c16")}

CSV_HEADER = ["label", "error_s3", "error_recon", "best_phi", "seed"]


def write_tensor(path, array, meta=None):
    """Write ``array`` as a tensor file; ``meta`` goes to ``<path>.json``."""
    array = np.asarray(array)
    dtype = "c128" if np.iscomplexobj(array) else "f64"
    header = {
        "magic": MAGIC,
        "dtype": dtype,
        "shape": [int(s) for s in array.shape],
        "order": "row-major",
        "endian": "little",
    }
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes())
    if meta is not None:
        write_json(sidecar_path(path), meta)
    return path


def read_tensor(path):
    with open(path, "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: unreadable tensor header") from exc
    if header.get("magic") != MAGIC:
        raise FormatError(f"{path}: bad magic {header.get('magic')!r}")
    if header.get("order") != "row-major" or header.get("endian") != "little":
        raise FormatError(f"{path}: unsupported layout")
    dtype = _DTYPES.get(header.get("dtype"))
    if dtype is None:
        raise FormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    shape = tuple(header["shape"])
    expected = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_sidecar(path):
    p = sidecar_path(path)
    return read_json(p) if p.exists() else {}


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def basis_manifest(basis):
    return {
        "n": basis.n,
        "lambda_max": basis.lambda_max,
        "nu_max": basis.nu_max,
        "indices": [[int(a), int(b), float(c)] for a, b, c in zip(basis.nu, basis.q, basis.lam)],
    }


def write_basis(path, basis):
    """Store the ``Psihat`` stack with the ``(nu, q, lambda)`` manifest as sidecar."""
    return write_tensor(path, basis.psi_hat, meta=basis_manifest(basis))


def read_basis(path):
    """Rebuild a basis from a stored manifest.

    The manifest pins the exact index list; the sampled eigenfunctions are
    recomputed and checked against the stored DFT stack.
    """
    from .basis import build_basis

    manifest = read_sidecar(path)
    if not manifest:
        raise FormatError(f"{path}: missing basis manifest")
    basis = build_basis(manifest["n"], count=len(manifest["indices"]))
    stored = [tuple(i[:2]) for i in manifest["indices"]]
    if [(int(a), int(b)) for a, b in zip(basis.nu, basis.q)] != stored:
        basis = build_basis(manifest["n"], bandlimit=manifest["lambda_max"])
        if [(int(a), int(b)) for a, b in zip(basis.nu, basis.q)] != stored:
            raise FormatError(f"{path}: manifest does not match a canonical basis")
    psi_hat = read_tensor(path)
    if psi_hat.shape != basis.psi_hat.shape or not np.allclose(psi_hat, basis.psi_hat, rtol=0, atol=1e-9):
        raise FormatError(f"{path}: stored basis disagrees with the recomputed one")
    return basis


def write_pgm(path, image):
    """16-bit binary PGM (P5) with linear min-max scaling to ``[0, 65535]``.

    A constant image maps to all zeros.  Export only; never read back for
    computation.
    """
    image = np.asarray(image, dtype=float)
    lo, hi = float(image.min()), float(image.max())
    if hi > lo:
        scaled = np.rint((image - lo) / (hi - lo) * 65535)
    else:
        scaled = np.zeros_like(image)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(scaled.astype(">u2").tobytes())
    return {"min": lo, "max": hi}


def append_csv(path, row):
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(CSV_HEADER)
        writer.writerow([_csv_field(row[k]) for k in CSV_HEADER])


def _csv_field(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _parse_bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _optional(conv):
    def parse(s):
        if s is None or str(s).strip().lower() in ("", "none"):
            return None
        return conv(s)

    return parse


@dataclasses.dataclass
class ExperimentConfig:
    """Flat experiment configuration.

    Values come from defaults, then a ``key = value`` file, then ``IRT_<KEY>``
    environment variables, then explicit overrides (command-line flags).
    """

    n: int = 8
    basis_count: int = 100
    bandlimit: float = None
    image: str = "cat"
    m: int = 512
    p: int = None
    gamma: float = None
    sigma: float = 0.0
    seed: int = 0
    b1: float = 1.0
    b2: float = 16 / np.pi
    signed_bins: bool = False
    include_degenerate: bool = True
    one_per_bin: bool = True
    restarts: int = 5
    max_iterations: int = 10000
    gradient_tolerance: float = 1e-10
    init_scale: float = 1.0
    quadrature: int = None
    s3_noise: float = 0.0
    threads: int = 1
    label: str = "run"
    output: str = "."

    def validate(self):
        if self.n < 2:
            raise ConfigError("n must be >= 2")
        if self.bandlimit is None and self.basis_count < 1:
            raise ConfigError("basis_count must be >= 1")
        if self.p is not None and self.gamma is not None:
            raise ConfigError("set at most one of p and gamma")
        for key in ("sigma", "s3_noise"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0")
        for key in ("b1", "b2", "init_scale", "gradient_tolerance"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive")
        if self.restarts < 1 or self.max_iterations < 1:
            raise ConfigError("restarts and max_iterations must be >= 1")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")
        if self.quadrature is not None and self.quadrature < 1:
            raise ConfigError("quadrature must be >= 1")
        return self


_PARSERS = {
    "n": int,
    "basis_count": int,
    "bandlimit": _optional(float),
    "image": str,
    "m": int,
    "p": _optional(int),
    "gamma": _optional(float),
    "sigma": float,
    "seed": int,
    "b1": float,
    "b2": float,
    "signed_bins": _parse_bool,
    "include_degenerate": _parse_bool,
    "one_per_bin": _parse_bool,
    "restarts": int,
    "max_iterations": int,
    "gradient_tolerance": float,
    "init_scale": float,
    "quadrature": _optional(int),
    "s3_noise": float,
    "threads": int,
    "label": str,
    "output": str,
}
# "lambda" is accepted as an alias in files and the environment
_ALIASES = {"lambda": "bandlimit", "k": "basis_count", "count": "basis_count"}


def _coerce(key, value, source):
    key = _ALIASES.get(key, key)
    if key not in _PARSERS:
        raise ConfigError(f"{source}: unknown key {key!r}")
    try:
        return key, _PARSERS[key](value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: bad value for {key}: {value!r}") from exc


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key, val = _coerce(key.lower(), value, f"{source}:{lineno}")
        values[key] = val
    return values


def load_config(path=None, overrides=None, environ=None):
    """Assemble an :class:`ExperimentConfig` (file < environment < overrides)."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(), str(path)))
    environ = os.environ if environ is None else environ
    for name, value in environ.items():
        if name.startswith("IRT_"):
            key, val = _coerce(name[4:].lower(), value, f"environment {name}")
            values[key] = val
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        key, val = _coerce(key, value, "override") if isinstance(value, str) else (_ALIASES.get(key, key), value)
        if key not in _PARSERS:
            raise ConfigError(f"override: unknown key {key!r}")
        values[key] = val
    return ExperimentConfig(**values).validate()


# execution settings that must not leave a trace in reproducible outputs
EXECUTION_KEYS = ("threads", "output")


def config_text(config, exclude=()):
    lines = []
    for f in dataclasses.fields(config):
        if f.name in exclude:
            continue
        v = getattr(config, f.name)
        lines.append(f"{f.name} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"
