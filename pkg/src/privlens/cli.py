"""Command-line interface: ``privlens <command> ...``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
Every command writes a provenance JSON next to its outputs. The
``PRIVLENS_SEED`` environment variable overrides the configured seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .optim import NumericalError
from .trainer import PretrainError

log = logging.getLogger("privlens")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
CHANNEL_NAMES = ("r", "g", "b")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers


def _seed_override(seed: int) -> int:
    env = os.environ.get("PRIVLENS_SEED")
    if env is None or env == "":
        return seed
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"PRIVLENS_SEED must be an integer, got {env!r}") from None


def _load_config(path):
    """``(train, optics, data, config_text)``; the shipped defaults when ``path`` is None."""
    if path is None:
        from . import data_path

        text = data_path("default.cfg").read_text()
        train, optics, data = io.parse_config(text, "default.cfg")
    else:
        text = Path(path).read_text()
        train, optics, data = io.parse_config(text, path)
    seed = _seed_override(train.seed)
    if seed != train.seed:
        from dataclasses import replace

        train = replace(train, seed=seed)
    return train, optics, data, text


def _camera(alpha, optics, noise_sigma, seed):
    from .camera import Camera
    from .sensor import SensorConfig

    return Camera(alpha, optics, SensorConfig(noise_sigma=noise_sigma, rng_seed=seed))


def _psf_png(path, kernel, scale=8):
    from PIL import Image

    k = np.asarray(kernel, dtype=float)
    img = np.round(255 * k / k.max()).astype(np.uint8) if k.max() > 0 else np.zeros(k.shape, np.uint8)
    img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    Image.fromarray(img, mode="L").save(path, format="PNG")


def _read_clip(path):
    clip = io.read_tensor(path)
    if clip.ndim != 4 or clip.shape[-1] != 3:
        raise UsageError(f"{path}: expected a (T, H, W, 3) clip, got shape {clip.shape}")
    return clip


def _read_psf_dir(directory):
    d = Path(directory)
    ks = []
    for c in CHANNEL_NAMES:
        k = io.read_tensor(d / f"psf_{c}.pltf")
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise UsageError(f"{d / f'psf_{c}.pltf'}: expected a square kernel, got {k.shape}")
        ks.append(k.astype(float))
    return np.stack(ks)


# --------------------------------------------------------------- commands


def cmd_psf(args):
    _, optics, _, text = _load_config(args.config)
    alpha = io.read_coefficients(args.coeffs)
    cam = _camera(alpha, optics, 0.0, 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kernels = cam.psf.kernels
    for c, k in zip(CHANNEL_NAMES, kernels):
        io.write_tensor(out / f"psf_{c}.pltf", k)
        _psf_png(out / f"psf_{c}.png", k)
    io.write_provenance(
        out,
        "psf",
        config_sha256=io.sha256_bytes(text.encode()),
        coeffs_sha256=io.sha256_file(args.coeffs),
        q=int(alpha.size),
        center_pixel=[float(k[k.shape[0] // 2, k.shape[1] // 2]) for k in kernels],
    )
    print(f"wrote {len(kernels)} PSF channels to {out}")


def cmd_distort(args):
    train, optics, _, text = _load_config(args.config)
    alpha = io.read_coefficients(args.coeffs)
    clip = _read_clip(args.input)
    sigma = train.noise_sigma if args.noise is None else args.noise
    if sigma < 0:
        raise UsageError("--noise must be >= 0")
    cam = _camera(alpha, optics, sigma, train.seed)
    y = cam.capture(clip[None], (7,))[0]
    io.write_tensor(args.out, y)
    out = Path(args.out)
    io.write_provenance(
        out.parent,
        "distort",
        input=str(args.input),
        input_sha256=io.sha256_file(args.input),
        coeffs_sha256=io.sha256_file(args.coeffs),
        config_sha256=io.sha256_bytes(text.encode()),
        noise_sigma=sigma,
        seed=train.seed,
        output=out.name,
    )
    print(f"wrote {out}")


def _save_run(out: Path, result, trainer, data, text):
    from .trainer import TELEMETRY_COLUMNS

    out.mkdir(parents=True, exist_ok=True)
    state = result.state
    io.write_coefficients(out / "alpha.coef", state.alpha)
    io.write_telemetry(out / "telemetry.csv", state.telemetry, TELEMETRY_COLUMNS)
    io.save_network(out / "checkpoint" / "classifier", state.classifier)
    io.save_network(out / "checkpoint" / "adversary", state.adversary)
    (out / "report.json").write_text(result.report.to_json() + "\n")
    (out / "report.txt").write_text(result.report.to_text())
    (out / "attack.json").write_text(json.dumps(result.attack.to_dict(), indent=2) + "\n")
    (out / "config.cfg").write_text(io.format_config(trainer.config, trainer.optics, data))
    io.write_provenance(
        out,
        "train",
        config=text,
        config_sha256=io.sha256_bytes(text.encode()),
        seed=trainer.config.seed,
        data=data,
        upper_bounds=state.upper_bounds,
        alpha_sha256=io.sha256_file(out / "alpha.coef"),
    )


def cmd_train(args):
    from .synthdata import make_dataset
    from .trainer import Trainer

    train, optics, data, text = _load_config(args.config)
    if args.epochs is not None:
        from dataclasses import replace

        train = replace(train, epochs=args.epochs)
    dataset = make_dataset(data["n_train"], data["n_test"], data["master_seed"])
    trainer = Trainer(train, dataset, optics)
    result = trainer.run()
    _save_run(Path(args.out), result, trainer, data, text)
    r = result.report
    print(f"A_C={r.A_C:.4f} A_A={r.A_A:.4f} SSIM={r.ssim_mean:.4f} P={r.P:.4f}")


def cmd_attack(args):
    from .attacks import fresh_adversary_attack
    from .trainer import Trainer

    train, optics, _, text = _load_config(args.config)
    alpha = io.read_coefficients(args.lens)
    dataset = io.load_dataset(args.data)
    cam = _camera(alpha, optics, train.noise_sigma, train.seed)
    trainer = Trainer(train, dataset, optics)
    report = fresh_adversary_attack(cam, dataset, k=args.k, trainer=trainer, epochs=args.epochs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    io.write_provenance(
        out.parent,
        "attack",
        lens_sha256=io.sha256_file(args.lens),
        data_manifest_sha256=io.sha256_file(Path(args.data) / "manifest.jsonl"),
        config_sha256=io.sha256_bytes(text.encode()),
        seed=train.seed,
        k=args.k,
        output=out.name,
    )
    print(f"best C-MAP {report.best:.4f} (chance {report.chance:.4f})")


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise io.FormatError(path, exc.msg, exc.lineno) from None


def cmd_eval(args):
    from .metrics import EvalReport, accuracy

    pred, truth = _load_json(args.pred), _load_json(args.truth)
    if "actions" not in pred or "actions" not in truth:
        raise UsageError("both files need an 'actions' list")
    if "attribute_scores" in pred and "attributes" in truth:
        report = EvalReport.from_predictions(
            pred["actions"], truth["actions"],
            np.asarray(pred["attribute_scores"], dtype=float), np.asarray(truth["attributes"], dtype=int),
            pred.get("ssim_mean", float("nan")),
        )
        text, doc = report.to_text(), report.to_dict()
    else:
        a_c = accuracy(pred["actions"], truth["actions"])
        text, doc = f"A_C={a_c!r}\n", {"A_C": a_c}
    if args.out:
        out = Path(args.out)
        out.write_text(json.dumps(doc, indent=2) + "\n")
        io.write_provenance(
            out.parent, "eval",
            pred_sha256=io.sha256_file(args.pred), truth_sha256=io.sha256_file(args.truth), output=out.name,
        )
    sys.stdout.write(text)


def cmd_synth(args):
    from .synthdata import make_dataset

    if args.n < 20:
        raise UsageError("--n must be at least 20")
    n_test = args.n_test if args.n_test is not None else max(20, args.n // 4)
    seed = _seed_override(args.seed)
    out = Path(args.out)
    make_dataset(args.n, n_test, seed, out=out)
    io.write_provenance(out, "synth", n_train=args.n, n_test=n_test, master_seed=seed,
                        manifest_sha256=io.sha256_file(out / "manifest.jsonl"))
    print(f"wrote {args.n} train and {n_test} test clips to {out}")


def cmd_deconv(args):
    from .attacks import wiener_deconvolve

    if args.k < 0:
        raise UsageError("--k must be >= 0")
    clip = _read_clip(args.input)
    kernels = _read_psf_dir(args.psf)
    x = wiener_deconvolve(clip, kernels, args.k)
    out = Path(args.out) if args.out else Path(args.input).with_suffix(".deconv.pltf")
    io.write_tensor(out, x)
    io.write_provenance(
        out.parent, "deconv",
        input_sha256=io.sha256_file(args.input), K=args.k,
        psf_sha256={c: io.sha256_file(Path(args.psf) / f"psf_{c}.pltf") for c in CHANNEL_NAMES},
        output=out.name,
    )
    print(f"wrote {out}")


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="privlens", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("psf", help="render per-channel PSFs for a coefficient file")
    s.add_argument("--coeffs", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_psf)

    s = sub.add_parser("distort", help="capture a clip through a lens")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--coeffs", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--noise", type=float, help="sensor noise sigma (default from config)")
    s.set_defaults(func=cmd_distort)

    s = sub.add_parser("train", help="pretraining plus adversarial training")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, help="override the configured epoch count")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("attack", help="fresh-adversary attack on a frozen lens")
    s.add_argument("--lens", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("eval", help="score predictions against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--n", type=int, required=True, help="training clips")
    s.add_argument("--n-test", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("deconv", help="Wiener deconvolution of a clip")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--psf", required=True, help="directory written by 'psf'")
    s.add_argument("--k", type=float, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_deconv)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("privlens: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                args.func(args)
        else:
            args.func(args)
    except (NumericalError, FloatingPointError, PretrainError) as exc:
        print(f"privlens: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ValueError, OSError) as exc:
        print(f"privlens: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
