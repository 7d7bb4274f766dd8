"""Command-line front end: estimate, deblur, synth, probe, eval.

Every command honors --seed (identical invocations are bit-identical),
writes a JSON run manifest with the fully resolved configuration and
per-stage timings, and uses the documented exit codes:
2 unreadable input, 3 degenerate image, 4 malformed kernel file,
5 invalid noise level, 6 mismatched evaluation triple.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .blindestim import EstimationConfig, estimate
from .errors import DegenerateDataError, EstimationError, KernelFileError
from .evalprobe import aggregate, error_ratio, probe_regularizers
from .imgcore import (
    as_image,
    averaging_kernel,
    conv2,
    load_image,
    normalize_kernel,
    random_motion_kernel,
    save_image,
)
from .restore import RestoreConfig, deconvolve

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_UNREADABLE = 2
EXIT_DEGENERATE = 3
EXIT_BAD_KERNEL = 4
EXIT_BAD_NOISE = 5
EXIT_BAD_TRIPLE = 6

SCHEMA_VERSION = 1

_CONFIG_INT_FIELDS = {
    "patch_side", "dict_atoms", "sparsity", "neighbors", "inner_iters",
    "kernel_size", "ksvd_iters", "sample_cap", "bicg_maxiter",
    "min_level_side", "seed",
}


# ---------------------------------------------------------------------------
# kernel text format: line 1 "size", then size rows of decimals
# ---------------------------------------------------------------------------

def write_kernel_file(path, kernel) -> None:
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError(f"kernel must be square, got shape {k.shape}")
    with open(path, "w") as fh:
        fh.write(f"{k.shape[0]}\n")
        for row in k:
            fh.write(" ".join(format(v, ".17g") for v in row) + "\n")


def read_kernel_file(path) -> np.ndarray:
    try:
        with open(path) as fh:
            tokens = fh.read().split()
    except OSError as exc:
        raise KernelFileError(f"cannot read kernel file {path}: {exc}") from exc
    if not tokens:
        raise KernelFileError(f"kernel file {path} is empty")
    try:
        size = int(tokens[0])
        values = np.array(tokens[1:], dtype=np.float64)
    except ValueError as exc:
        raise KernelFileError(f"kernel file {path} is not parseable: {exc}") from exc
    if size < 1 or values.size != size * size:
        raise KernelFileError(
            f"kernel file {path} holds {values.size} values, expected {size * size}")
    kernel = values.reshape(size, size)
    total = kernel.sum()
    if not np.isfinite(total) or total <= 0:
        raise KernelFileError(f"kernel file {path} does not sum to a positive value")
    if abs(total - 1.0) <= 1e-12:  # already normalized to fp precision
        return kernel
    if abs(total - 1.0) > 1e-6:
        warnings.warn(f"kernel file {path} sums to {total:.8f}; renormalizing",
                      UserWarning, stacklevel=2)
    return kernel / total


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------

def load_config_file(path) -> dict:
    """key=value lines; '#' starts a comment; values coerced by field type."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key] = value
    return out


def build_estimation_config(args, overrides: dict | None = None) -> EstimationConfig:
    """Defaults, then config-file entries, then explicit CLI flags."""
    values = {}
    if getattr(args, "config", None):
        for key, raw in load_config_file(args.config).items():
            if key not in EstimationConfig.__dataclass_fields__:
                raise ValueError(f"unknown config key {key!r}")
            if key == "nn_mode":
                values[key] = raw
            elif key in _CONFIG_INT_FIELDS:
                values[key] = int(raw)
            else:
                values[key] = float(raw)
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "kernel_size", None) is not None:
        size = args.kernel_size
        if size % 2 == 0:
            warnings.warn(f"kernel size {size} is even; rounding up to {size + 1}",
                          UserWarning, stacklevel=2)
            size += 1
        values["kernel_size"] = size
    if getattr(args, "inner_iters", None) is not None:
        values["inner_iters"] = args.inner_iters
    if overrides:
        values.update(overrides)
    return EstimationConfig(**values)


def resolve_threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    env = os.environ.get("DEBLUR_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


class ManifestWriter:
    """Collects timings and warnings, then writes the run manifest."""

    def __init__(self, command: str, args):
        self.command = command
        self.argv = list(getattr(args, "_argv", []))
        self.seed = getattr(args, "seed", None)
        self.inputs, self.outputs = [], []
        self.timings = {}
        self.warnings = []
        self.config = {}

    def time_stage(self, name: str):
        writer = self

        class _Stage:
            def __enter__(self):
                self.start = time.perf_counter()
                return self

            def __exit__(self, *exc):
                writer.timings[name] = time.perf_counter() - self.start
                return False

        return _Stage()

    def write(self, path) -> None:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "argv": self.argv,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "timings_sec": {k: round(v, 6) for k, v in self.timings.items()},
            "warnings": self.warnings,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _progress_printer(args):
    def emit(trace):
        if args.json:
            doc = {"event": "iteration", "level": trace.level,
                   "depth": trace.depth, "k": trace.iteration,
                   "tau": trace.tau, "mask": trace.mask_size,
                   "bicg_iterations": trace.bicg_iterations,
                   "bicg_residual": trace.bicg_residual,
                   "delta": trace.delta, "kernel_size": trace.kernel_size}
            print(json.dumps(doc), flush=True)
        elif args.verbose:
            print(f"level {trace.level}/{trace.depth} k={trace.iteration} "
                  f"tau={trace.tau:.4g} |M|={trace.mask_size} "
                  f"bicg={trace.bicg_iterations} res={trace.bicg_residual:.2e} "
                  f"delta={trace.delta:.3e}", file=sys.stderr, flush=True)
    return emit


def _load_input(path):
    try:
        return load_image(path)
    except (OSError, FileNotFoundError) as exc:
        raise SystemExit(_fail(EXIT_UNREADABLE, f"cannot read image {path}: {exc}"))


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _kernel_png(kernel) -> np.ndarray:
    peak = kernel.max()
    return kernel / peak if peak > 0 else kernel


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_estimate(args) -> int:
    manifest = ManifestWriter("estimate", args)
    image = _load_input(args.input)
    manifest.inputs.append(str(args.input))

    stem = Path(args.output) if args.output else Path(args.input).with_suffix("")
    kernel_path = str(stem) + "_kernel.txt"
    kernel_png = str(stem) + "_kernel.png"
    latent_path = str(stem) + "_latent.png"
    manifest_path = args.manifest or str(stem) + "_manifest.json"

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cfg = build_estimation_config(args)
        manifest.config = asdict(cfg)
        manifest.seed = cfg.seed
        try:
            with manifest.time_stage("estimate"):
                kernel, latent = estimate(image, cfg, _progress_printer(args))
        except DegenerateDataError as exc:
            return _fail(EXIT_DEGENERATE, str(exc))
        except EstimationError as exc:
            if isinstance(exc.__cause__, DegenerateDataError):
                return _fail(EXIT_DEGENERATE, str(exc))
            return _fail(EXIT_FAILURE, str(exc))
    manifest.warnings = sorted({str(w.message) for w in caught})

    write_kernel_file(kernel_path, kernel)
    save_image(kernel_png, _kernel_png(kernel))
    save_image(latent_path, latent)
    manifest.outputs += [kernel_path, kernel_png, latent_path]
    manifest.write(manifest_path)
    if args.json:
        print(json.dumps({"event": "done", "kernel": kernel_path,
                          "latent": latent_path, "manifest": manifest_path}))
    else:
        print(f"kernel written to {kernel_path}")
    return EXIT_OK


def cmd_deblur(args) -> int:
    manifest = ManifestWriter("deblur", args)
    image = _load_input(args.input)
    manifest.inputs.append(str(args.input))
    rcfg = RestoreConfig(method=args.method, weight=args.weight,
                         iterations=args.iterations)
    manifest.config = asdict(rcfg)

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if args.blind:
            cfg = build_estimation_config(args)
            manifest.config["estimation"] = asdict(cfg)
            manifest.seed = cfg.seed
            try:
                with manifest.time_stage("estimate"):
                    kernel, _ = estimate(image, cfg, _progress_printer(args))
            except DegenerateDataError as exc:
                return _fail(EXIT_DEGENERATE, str(exc))
        else:
            if not args.kernel:
                return _fail(EXIT_BAD_KERNEL, "either --kernel or --blind is required")
            try:
                kernel = read_kernel_file(args.kernel)
            except KernelFileError as exc:
                return _fail(EXIT_BAD_KERNEL, str(exc))
            manifest.inputs.append(str(args.kernel))
        with manifest.time_stage("deconvolve"):
            restored = deconvolve(image, kernel, rcfg)
    manifest.warnings = sorted({str(w.message) for w in caught})

    out_path = args.output or str(Path(args.input).with_suffix("")) + "_deblurred.png"
    save_image(out_path, restored)
    manifest.outputs.append(out_path)
    manifest.write(args.manifest or str(Path(out_path).with_suffix("")) + "_manifest.json")
    print(f"restored image written to {out_path}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.noise < 0:
        return _fail(EXIT_BAD_NOISE, f"noise percentage must be >= 0, got {args.noise}")
    manifest = ManifestWriter("synth", args)
    image = _load_input(args.input)
    manifest.inputs.append(str(args.input))

    if args.kernel:
        try:
            kernel = read_kernel_file(args.kernel)
        except KernelFileError as exc:
            return _fail(EXIT_BAD_KERNEL, str(exc))
        manifest.inputs.append(str(args.kernel))
    else:
        size = args.kernel_size or 15
        if size % 2 == 0:
            warnings.warn(f"kernel size {size} is even; rounding up to {size + 1}",
                          UserWarning, stacklevel=2)
            size += 1
        kernel = (averaging_kernel(size) if args.generator == "average"
                  else random_motion_kernel(size, args.seed or 0))
    manifest.config = {"noise_percent": args.noise, "generator": args.generator}

    rng = np.random.default_rng(args.seed or 0)
    with manifest.time_stage("synthesize"):
        blurry = conv2(as_image(image), kernel, "replicate")
        if args.noise > 0:
            blurry = blurry + rng.normal(0.0, args.noise / 100.0, size=blurry.shape)

    stem = str(Path(args.input).with_suffix(""))
    out_path = args.output or stem + "_blurry.png"
    kernel_out = args.kernel_out or stem + "_kernel_gt.txt"
    save_image(out_path, np.clip(blurry, 0.0, 1.0), bit_depth=args.bit_depth)
    write_kernel_file(kernel_out, normalize_kernel(kernel))
    manifest.outputs += [out_path, kernel_out]
    manifest.write(args.manifest or stem + "_synth_manifest.json")
    print(f"blurry image written to {out_path}; kernel to {kernel_out}")
    return EXIT_OK


def cmd_probe(args) -> int:
    manifest = ManifestWriter("probe", args)
    cfg = build_estimation_config(args)
    manifest.config = asdict(cfg)
    blur_sizes = [int(s) for s in args.blur_sizes.split(",")]
    kernels = [(f"{s}x{s}", averaging_kernel(s)) for s in blur_sizes]

    def run_one(path):
        return path, probe_regularizers(_load_input(path), kernels, cfg,
                                        p=args.neighbors, seed=cfg.seed)

    with manifest.time_stage("probe"):
        with ThreadPoolExecutor(max_workers=resolve_threads(args)) as pool:
            results = list(pool.map(run_one, args.images))
    manifest.inputs += [str(p) for p in args.images]

    doc = {"schema_version": SCHEMA_VERSION, "command": "probe",
           "blur_sizes": blur_sizes,
           "images": {str(path): report.to_dict() for path, report in results}}
    _emit_report(doc, args, manifest)
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = ManifestWriter("eval", args)
    cfg = build_estimation_config(args)
    rcfg = RestoreConfig(method=args.method, weight=args.weight,
                         iterations=args.iterations)
    manifest.config = {"estimation": asdict(cfg), "restore": asdict(rcfg),
                       "threshold": args.threshold}
    triples = args.triple or []
    if not triples:
        return _fail(EXIT_FAILURE, "at least one --triple SHARP BLURRY KERNEL is required")

    loaded = []
    for sharp_path, blurry_path, kernel_path in triples:
        sharp = _load_input(sharp_path)
        blurry = _load_input(blurry_path)
        try:
            kernel = read_kernel_file(kernel_path)
        except KernelFileError as exc:
            return _fail(EXIT_BAD_KERNEL, str(exc))
        if sharp.shape != blurry.shape:
            return _fail(EXIT_BAD_TRIPLE,
                         f"sharp {sharp.shape} vs blurry {blurry.shape} "
                         f"for {sharp_path} / {blurry_path}")
        loaded.append((sharp_path, sharp, blurry, kernel))
        manifest.inputs += [str(sharp_path), str(blurry_path), str(kernel_path)]

    def run_one(item):
        name, sharp, blurry, true_kernel = item
        kernel_hat, _ = estimate(blurry, cfg)
        with_hat = deconvolve(blurry, kernel_hat, rcfg)
        with_true = deconvolve(blurry, true_kernel, rcfg)
        return name, error_ratio(sharp, with_hat, with_true)

    with manifest.time_stage("evaluate"):
        with ThreadPoolExecutor(max_workers=resolve_threads(args)) as pool:
            results = list(pool.map(run_one, loaded))
    report = aggregate([r for _, r in results], threshold=args.threshold)

    doc = {"schema_version": SCHEMA_VERSION, "command": "eval",
           "per_image": {str(name): float(r) for name, r in results},
           **report.to_dict()}
    _emit_report(doc, args, manifest)
    return EXIT_OK


def _emit_report(doc, args, manifest: ManifestWriter) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n")
        manifest.outputs.append(str(args.output))
        print(f"report written to {args.output}")
    else:
        print(text)
    if getattr(args, "csv", None):
        _write_csv(doc, args.csv)
        manifest.outputs.append(str(args.csv))
    if args.manifest:
        manifest.write(args.manifest)


def _write_csv(doc, path) -> None:
    rows = []
    if doc["command"] == "probe":
        rows.append("image,label,sparse_value,nonlocal_value")
        for image, rep in doc["images"].items():
            for label, sv, nv in zip(rep["labels"], rep["sparse_values"],
                                     rep["nonlocal_values"]):
                rows.append(f"{image},{label},{sv:.9g},{nv:.9g}")
    else:
        rows.append("image,error_ratio")
        for image, ratio in doc["per_image"].items():
            rows.append(f"{image},{ratio:.9g}")
    Path(path).write_text("\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_global_flags(sub):
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--seed", type=int, default=None, help="RNG seed")
    sub.add_argument("--threads", type=int, default=None,
                     help="worker thread bound (env DEBLUR_THREADS as fallback)")
    sub.add_argument("--json", action="store_true",
                     help="machine-readable progress/output")
    sub.add_argument("--verbose", action="store_true")
    sub.add_argument("--manifest", help="run manifest path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgeblur",
        description="Blind motion deblurring via edge-masked patch priors")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("estimate", help="estimate a blur kernel")
    p.add_argument("input")
    p.add_argument("--output", help="output stem (default: input stem)")
    p.add_argument("--kernel-size", type=int, default=None)
    p.add_argument("--inner-iters", type=int, default=None)
    _add_global_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = commands.add_parser("deblur", help="non-blind or blind restoration")
    p.add_argument("input")
    p.add_argument("--kernel", help="kernel text file")
    p.add_argument("--blind", action="store_true",
                   help="estimate the kernel first")
    p.add_argument("--output")
    p.add_argument("--method", default="hyper_laplacian",
                   choices=["hyper_laplacian", "tv_l1", "wiener"])
    p.add_argument("--weight", type=float, default=2e-3)
    p.add_argument("--iterations", type=int, default=30)
    p.add_argument("--kernel-size", type=int, default=None)
    p.add_argument("--inner-iters", type=int, default=None)
    _add_global_flags(p)
    p.set_defaults(func=cmd_deblur)

    p = commands.add_parser("synth", help="synthesize a blurry image")
    p.add_argument("input")
    p.add_argument("--kernel", help="use this kernel file instead of generating")
    p.add_argument("--kernel-size", type=int, default=None)
    p.add_argument("--generator", default="motion", choices=["motion", "average"])
    p.add_argument("--noise", type=float, default=1.0,
                   help="Gaussian noise std as %% of intensity range")
    p.add_argument("--output")
    p.add_argument("--kernel-out")
    p.add_argument("--bit-depth", type=int, default=8, choices=[8, 16])
    _add_global_flags(p)
    p.set_defaults(func=cmd_synth)

    p = commands.add_parser("probe", help="sharp-vs-blurred regularizer probe")
    p.add_argument("images", nargs="+")
    p.add_argument("--blur-sizes", default="2,3,5")
    p.add_argument("--neighbors", type=int, default=None,
                   help="similar patches per query (default: config value)")
    p.add_argument("--output")
    p.add_argument("--csv")
    _add_global_flags(p)
    p.set_defaults(func=cmd_probe)

    p = commands.add_parser("eval", help="error-ratio evaluation on triples")
    p.add_argument("--triple", nargs=3, action="append",
                   metavar=("SHARP", "BLURRY", "KERNEL"))
    p.add_argument("--threshold", type=float, default=3.0)
    p.add_argument("--method", default="hyper_laplacian",
                   choices=["hyper_laplacian", "tv_l1", "wiener"])
    p.add_argument("--weight", type=float, default=2e-3)
    p.add_argument("--iterations", type=int, default=30)
    p.add_argument("--kernel-size", type=int, default=None)
    p.add_argument("--inner-iters", type=int, default=None)
    p.add_argument("--output")
    p.add_argument("--csv")
    _add_global_flags(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = [parser.prog] + argv
    try:
        return args.func(args)
    except SystemExit as exc:  # raised by _load_input with an exit code
        code = exc.code
        return code if isinstance(code, int) else EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
