"""Command-line pipeline driver.

Every stage reads and writes fixed file names inside the output directory::

    basis        basis.irt, model_coeffs.irt, model_image.irt, config.txt
    invariants   s3_forward.irt, s3hat_forward.irt, s3_target.irt, s3hat_target.irt
    simulate     micrograph.irt
    autocorr     s3_target.irt, s3hat_target.irt  (the debiased estimate)
    recover      recovered_coeffs.irt, recovery_report.json
    evaluate     experiments.csv  (one appended row)
    render       render/*.pgm with exact .irt copies

Errors print one JSON line on stderr.  Exit status is 1 for invalid input
and 2 for numerical failures.
"""

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .autocorr import FREQUENCY, REAL_OFFSETS, S3_NORMALIZED, dft_s3, estimate_s3
from .basis import build_basis, expand, steer, synthesize
from .errors import ConfigError, FormatError, NumericalError, ValidationError
from .forward import PrecomputedWeights, s1, s3_direct
from .grid import centered_dft
from .images import cat_image
from .metrics import error_recon, error_s3
from .recover import RecoveryConfig, build_bins, recover
from .seeding import substream
from .simulate import Micrograph, Placement, simulate

logger = logging.getLogger("rotinv")

BASIS = "basis.irt"
MODEL = "model_coeffs.irt"
MODEL_IMAGE = "model_image.irt"
S3_FORWARD = "s3_forward.irt"
S3HAT_FORWARD = "s3hat_forward.irt"
S3_TARGET = "s3_target.irt"
S3HAT_TARGET = "s3hat_target.irt"
MICROGRAPH = "micrograph.irt"
RECOVERED = "recovered_coeffs.irt"
REPORT = "recovery_report.json"
CSV_LOG = "experiments.csv"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _out(config):
    path = Path(config.output)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(path):
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing input file {path}")
    return path


def _basis_from_config(config):
    if config.bandlimit is not None:
        return build_basis(config.n, bandlimit=config.bandlimit)
    return build_basis(config.n, count=config.basis_count)


def _load_basis(out):
    return io.read_basis(_require(out / BASIS))


def _load_coeffs(path, basis):
    z = io.read_tensor(_require(path))
    if z.shape != (len(basis),):
        raise FormatError(f"{path}: {z.shape[0] if z.ndim else 0} coefficients for a basis of {len(basis)}")
    return z


def _model_image(config, basis):
    if config.image == "cat":
        return cat_image(basis.n)
    if config.image == "random":
        return synthesize(basis.random_coefficients(substream(config.seed, "image")), basis)
    image = io.read_tensor(_require(config.image))
    L = 4 * basis.n
    if image.shape != (L, L) or np.iscomplexobj(image):
        raise FormatError(f"{config.image}: expected a real {L}x{L} image")
    return image


def _write_invariant(path, data, n, space, provenance, extra=None):
    meta = {"n": n, "space": space, "scale": S3_NORMALIZED, "provenance": provenance, **(extra or {})}
    io.write_tensor(path, data, meta)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def cmd_basis(config):
    """Build the basis and expand the model image in it."""
    out = _out(config)
    basis = _basis_from_config(config)
    z0 = expand(_model_image(config, basis), basis)
    io.write_basis(out / BASIS, basis)
    io.write_tensor(out / MODEL, z0, {"basis": BASIS, "image": config.image})
    io.write_tensor(out / MODEL_IMAGE, synthesize(z0, basis), {"basis": BASIS})
    (out / "config.txt").write_text(io.config_text(config, exclude=io.EXECUTION_KEYS))
    return {"basis_size": len(basis), "nu_max": basis.nu_max, "lambda_max": basis.lambda_max}


def cmd_invariants(config):
    """Forward-model invariants, and the recovery target (optionally perturbed)."""
    out = _out(config)
    basis = _load_basis(out)
    z0 = _load_coeffs(out / MODEL, basis)
    n = basis.n
    S3 = s3_direct(z0, basis, N=config.quadrature)
    extra = {"s1": s1(z0, basis)}
    _write_invariant(out / S3_FORWARD, S3, n, REAL_OFFSETS, "forward-model", extra)
    _write_invariant(out / S3HAT_FORWARD, centered_dft(S3, ndim=4), n, FREQUENCY, "forward-model", extra)
    target = S3
    provenance = "forward-model"
    if config.s3_noise > 0:
        noise = substream(config.seed, "s3-noise").standard_normal(S3.shape)
        target = S3 + noise * (config.s3_noise * np.linalg.norm(S3) / np.linalg.norm(noise))
        provenance = "forward-model+noise"
        extra = {**extra, "s3_noise": config.s3_noise, "seed": config.seed}
    _write_invariant(out / S3_TARGET, target, n, REAL_OFFSETS, provenance, extra)
    _write_invariant(out / S3HAT_TARGET, centered_dft(target, ndim=4), n, FREQUENCY, provenance, extra)
    return {"error_s3": error_s3(S3, target)}


def cmd_simulate(config):
    """Render a micrograph of rotated copies of the model image."""
    out = _out(config)
    basis = _load_basis(out)
    z0 = _load_coeffs(out / MODEL, basis)
    if config.p is None and config.gamma is None:
        raise ConfigError("simulate needs p or gamma")
    mg = simulate(z0, basis, config.m, config.sigma, config.seed, p=config.p, gamma=config.gamma)
    io.write_tensor(out / MICROGRAPH, mg.pixels, mg.metadata())
    return {"m": mg.m, "p": len(mg.placements), "gamma": mg.gamma}


def _read_micrograph(path):
    pixels = io.read_tensor(_require(path))
    meta = io.read_sidecar(path)
    if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1] or np.iscomplexobj(pixels):
        raise FormatError(f"{path}: not a square real micrograph")
    placements = [Placement(tuple(p["position"]), p["angle"]) for p in meta.get("placements", [])]
    return Micrograph(
        m=pixels.shape[0],
        pixels=pixels,
        n=meta.get("n", 0),
        sigma=meta.get("sigma", 0.0),
        placements=placements,
        gamma=meta.get("gamma", 0.0),
        seed=meta.get("seed"),
    )


def cmd_autocorr(config):
    """Debiased invariant estimate from the micrograph; becomes the recovery target."""
    out = _out(config)
    path = out / MICROGRAPH
    mg = _read_micrograph(path)
    gamma = config.gamma
    if gamma is None:
        gamma = config.p / mg.m**2 if config.p is not None else mg.gamma
    n = _load_basis(out).n if (out / BASIS).exists() else config.n
    est = estimate_s3(mg, n, gamma, threads=config.threads)
    provenance = {"micrograph_sha256": _sha256(path)}
    extra = {k: est.meta[k] for k in ("sigma2_hat", "mean_hat", "gamma", "m")}
    _write_invariant(out / S3_TARGET, est.data, est.n, REAL_OFFSETS, provenance, extra)
    _write_invariant(out / S3HAT_TARGET, dft_s3(est).data, est.n, FREQUENCY, provenance, extra)
    return {"sigma2_hat": extra["sigma2_hat"], "mean_hat": extra["mean_hat"], "gamma": gamma}


def _target_path(out, override):
    return Path(override) if override else out / S3HAT_TARGET


def cmd_recover(config, target=None):
    """Fit coefficients to the binned target bispectrum."""
    out = _out(config)
    basis = _load_basis(out)
    path = _target_path(out, target)
    s3hat = io.read_tensor(_require(path))
    meta = io.read_sidecar(path)
    if meta.get("space", FREQUENCY) != FREQUENCY:
        raise FormatError(f"{path}: recovery needs a frequency-domain target")
    L = 4 * basis.n
    if s3hat.shape != (L, L, L, L):
        raise FormatError(f"{path}: shape {s3hat.shape} does not match n={basis.n}")
    scheme = build_bins(
        basis.n,
        config.b1,
        config.b2,
        one_per_bin=config.one_per_bin,
        signed=config.signed_bins,
        include_degenerate=config.include_degenerate,
    )
    rc = RecoveryConfig(
        restarts=config.restarts,
        max_iterations=config.max_iterations,
        gradient_tolerance=config.gradient_tolerance,
        init_scale=config.init_scale,
        seed=config.seed,
        threads=config.threads,
    )
    weights = PrecomputedWeights(basis, config.quadrature)
    z, report = recover(s3hat, basis, scheme, rc, weights)
    io.write_tensor(out / RECOVERED, z, {"basis": BASIS, "target": path.name, "chosen": report.chosen})
    io.write_json(out / REPORT, report.to_dict())
    best = report.restarts[report.chosen]
    return {"chosen": report.chosen, "final_cost": best.final_cost, "iterations": best.iterations}


def cmd_evaluate(config, s3_ref=None, s3_est=None):
    """Append ``label,error_s3,error_recon,best_phi,seed`` to the CSV log."""
    out = _out(config)
    ref_path = Path(s3_ref) if s3_ref else out / S3_FORWARD
    est_path = Path(s3_est) if s3_est else out / S3_TARGET
    e_s3 = float("nan")
    if ref_path.exists() and est_path.exists():
        e_s3 = error_s3(io.read_tensor(ref_path), io.read_tensor(est_path))
    elif s3_ref or s3_est:
        _require(ref_path)
        _require(est_path)
    e_rec = phi = float("nan")
    if (out / RECOVERED).exists():
        basis = _load_basis(out)
        e_rec, phi = error_recon(_load_coeffs(out / MODEL, basis), _load_coeffs(out / RECOVERED, basis), basis)
    row = {"label": config.label, "error_s3": e_s3, "error_recon": e_rec, "best_phi": phi, "seed": config.seed}
    io.append_csv(out / CSV_LOG, row)
    return row


def _export(folder, name, image):
    io.write_tensor(folder / f"{name}.irt", image)
    scaling = io.write_pgm(folder / f"{name}.pgm", image)
    return {f"{name}.pgm": {"scaling": "linear min-max to [0, 65535]", **scaling}}


def cmd_render(config):
    """PGM exports of the micrograph, model and aligned reconstruction."""
    out = _out(config)
    folder = out / "render"
    folder.mkdir(exist_ok=True)
    written = {}
    if (out / MICROGRAPH).exists():
        written.update(_export(folder, "micrograph", io.read_tensor(out / MICROGRAPH)))
    if (out / BASIS).exists() and (out / MODEL).exists():
        basis = _load_basis(out)
        z0 = _load_coeffs(out / MODEL, basis)
        written.update(_export(folder, "model", synthesize(z0, basis)))
        if (out / RECOVERED).exists():
            z = _load_coeffs(out / RECOVERED, basis)
            _, phi = error_recon(z0, z, basis)
            written.update(_export(folder, "recovered", synthesize(steer(z, phi, basis), basis)))
    if not written:
        raise FormatError(f"nothing to render in {out}")
    io.write_json(folder / "scaling.json", written)
    return {"files": sorted(written)}


COMMANDS = {
    "basis": cmd_basis,
    "invariants": cmd_invariants,
    "simulate": cmd_simulate,
    "autocorr": cmd_autocorr,
    "recover": cmd_recover,
    "evaluate": cmd_evaluate,
    "render": cmd_render,
}


def build_parser():
    parser = _Parser(prog="rotinv", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, func in COMMANDS.items():
        p = sub.add_parser(name, help=func.__doc__.splitlines()[0])
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("-o", "--output", help="working directory for inputs and outputs")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", help="master seed")
        p.add_argument("--threads", help="worker threads (0 = all cores)")
        p.add_argument("--label", help="row label for the CSV log")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "recover":
            p.add_argument("--target", help="frequency-domain target (default: s3hat_target.irt)")
        if name == "evaluate":
            p.add_argument("--s3-ref", help="reference offset-domain invariant (default: s3_forward.irt)")
            p.add_argument("--s3-est", help="estimated offset-domain invariant (default: s3_target.irt)")
    return parser


def _overrides(args):
    values = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip().lower()] = value.strip()
    for key in ("output", "seed", "threads", "label"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    return values


def run(argv=None):
    """Parse ``argv`` and run one command; returns the command's summary dict."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    config = io.load_config(args.config, _overrides(args))
    func = COMMANDS[args.command]
    if args.command == "recover":
        return func(config, target=args.target)
    if args.command == "evaluate":
        return func(config, s3_ref=args.s3_ref, s3_est=args.s3_est)
    return func(config)


def _fail(exc, code):
    line = {"error": type(exc).__name__, "exit": code, "message": str(exc).replace("\n", " ")}
    print(json.dumps(line), file=sys.stderr)
    return code


def main(argv=None):
    try:
        summary = run(argv)
    except (ValidationError, FileNotFoundError) as exc:
        return _fail(exc, 1)
    except NumericalError as exc:
        return _fail(exc, 2)
    print(json.dumps(summary, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
