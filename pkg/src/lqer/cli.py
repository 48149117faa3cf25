"""Command-line interface.

Exit codes: 0 success, 2 argument error, 3 format error, 4 numerical error,
5 calibration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from . import io as lio
from .calibration import profile_channels, scale_matrix
from .errors import ArgumentError, LqerError
from .formats import QuantConfig, activation_config, avg_bitwidth_exact, factor_config, overhead_fraction
from .reconstruction import approximation_error, energy_fraction, normalized_spectra, quant_error
from .runtime import (
    METHODS,
    HarnessConfig,
    HarnessLayer,
    build_layer,
    forward,
    output_error,
    run_harness,
    standard_scenario,
)

DEFAULT_MAX_SAMPLES = 32


def _fmt(x: float) -> str:
    return repr(float(x))


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _dims(text: str) -> tuple[int, int]:
    try:
        m, n = text.lower().split("x")
        return int(m), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MxN, got {text!r}")


def _add_format(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("weight format")
    g.add_argument("--format", choices=["mxint", "int"], default="mxint")
    g.add_argument("--bits", type=int, default=4, help="mantissa / integer bits")
    g.add_argument("--exp-bits", type=int, default=4, help="MXINT shared exponent bits")
    g.add_argument("--block", type=int, default=16, help="MXINT block size")
    g.add_argument("--group", type=int, default=128, help="int group size")


def _add_runtime(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("activation and factor formats")
    g.add_argument("--act-bits", type=int, default=8, help="MXINT activation bits, 0 disables")
    g.add_argument("--factor-bits", type=int, default=8, help="MXINT low-rank factor bits, 0 disables")


def _weight_cfg(args) -> QuantConfig:
    if args.format == "mxint":
        return QuantConfig("mxint", args.bits, args.exp_bits, args.block, "col")
    return QuantConfig("int", args.bits, 4, args.group, "col")


def _act_cfg(args) -> QuantConfig | None:
    return activation_config(args.act_bits) if args.act_bits else None


def _factor_cfg(args) -> QuantConfig | None:
    return factor_config(args.factor_bits) if args.factor_bits else None


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    lio.atomic_write(path, buf.getvalue().encode())


# commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sc = standard_scenario(
        args.seed,
        width=args.width,
        depth=args.depth,
        tokens=args.tokens,
        n_calib=args.samples,
        outlier_channels=args.outlier_channels,
        outlier_gain=args.outlier_gain,
        spread=args.spread,
    )
    for i, layer in enumerate(sc.layers):
        lio.save_matrix(out / f"w{i}.lqmx", layer.weight)
    for i, x in enumerate(sc.calib_samples):
        lio.save_matrix(out / f"calib{i:02d}.lqmx", x)
    lio.save_matrix(out / "eval.lqmx", sc.x_eval)
    print(f"wrote {len(sc.layers)} weight files, {len(sc.calib_samples)} calibration samples and eval.lqmx to {out}")
    return 0


def cmd_calibrate(args) -> int:
    paths = args.inputs[: args.max_samples]
    samples = [lio.load_matrix(p) for p in paths]
    a_bar = profile_channels(samples)
    profile = scale_matrix(a_bar, sample_count=len(samples), floor_dead=args.floor_dead_channels)
    lio.save_profile(args.out, profile)
    print(f"channels: {profile.channels}")
    print(f"samples: {profile.sample_count}")
    print(f"a_bar min: {_fmt(profile.a_bar.min())}")
    print(f"a_bar max: {_fmt(profile.a_bar.max())}")
    print(f"scale condition max(s)/min(s): {_fmt(profile.s_diag.max() / profile.s_diag.min())}")
    if profile.floored_channels:
        print(f"floored dead channels: {list(profile.floored_channels)}")
    return 0


def cmd_quantize(args) -> int:
    weights = [lio.load_matrix(p) for p in args.weights]
    profiles = [lio.load_profile(p) for p in args.profile or []]
    if args.method == "l2qer" and len(profiles) != len(weights):
        raise ArgumentError(f"method l2qer needs one --profile per weight file ({len(weights)}), got {len(profiles)}")
    cfg = _weight_cfg(args)
    act, fq = _act_cfg(args), _factor_cfg(args)
    layers = []
    for i, w in enumerate(weights):
        profile = profiles[i] if args.method == "l2qer" else None
        if profile is not None and profile.channels != w.shape[0]:
            raise ArgumentError(
                f"profile for layer {i} has {profile.channels} channels but weight has {w.shape[0]} rows"
            )
        lq = build_layer(w, cfg, args.method, args.k, profile, act, fq)
        e_q = quant_error(w, lq.w_q)
        if lq.correction is None:
            e_a = float(np.abs(e_q).sum() / e_q.size)
            rel = 1.0 if e_q.any() else 0.0
        else:
            rep = approximation_error(e_q, lq.correction)
            e_a, rel = rep.e_a, rep.rel_frobenius
        print(f"layer {i} ({Path(args.weights[i]).name}): method={args.method} k={args.k} e_a={_fmt(e_a)} rel_frobenius={_fmt(rel)}")
        nonlin = args.nonlinearity if i + 1 < len(weights) else "none"
        layers.append(lio.BundleLayer(lq, nonlin, Path(args.weights[i]).stem))
    meta = {
        "seed": args.seed,
        "method": args.method,
        "k": args.k,
        "profile_digests": [p.digest() for p in profiles],
    }
    lio.save_bundle(args.out, lio.Bundle(layers, meta))
    return 0


def cmd_spectrum(args) -> int:
    w = lio.load_matrix(args.weights)
    profile = lio.load_profile(args.profile)
    if profile.channels != w.shape[0]:
        raise ArgumentError(f"profile has {profile.channels} channels but weight has {w.shape[0]} rows")
    lq = build_layer(w, _weight_cfg(args), "plain")
    plain, scaled = normalized_spectra(quant_error(w, lq.w_q), profile)
    _write_csv(
        args.out,
        ["index", "sigma_plain", "sigma_scaled"],
        [[i, _fmt(a), _fmt(b)] for i, (a, b) in enumerate(zip(plain, scaled))],
    )
    top = min(8, plain.size)
    print(f"top-{top} energy fraction: plain={_fmt(energy_fraction(plain, top))} scaled={_fmt(energy_fraction(scaled, top))}")
    return 0


def cmd_rank_sweep(args) -> int:
    weights = [lio.load_matrix(p) for p in args.weights]
    layers = [
        HarnessLayer(w, args.nonlinearity if i + 1 < len(weights) else "none") for i, w in enumerate(weights)
    ]
    calib = [lio.load_matrix(p) for p in args.calib[:DEFAULT_MAX_SAMPLES]]
    x_eval = lio.load_matrix(args.input) if args.input else np.vstack(calib)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise ArgumentError(f"unknown method {m!r}")
    ks = args.ks or [1 << i for i in range(int(np.log2(min(min(w.shape) for w in weights))) + 1)]
    cfg = HarnessConfig(_weight_cfg(args), _act_cfg(args), _factor_cfg(args), args.floor_dead_channels)
    records = run_harness(layers, methods, ks, calib, x_eval, cfg)
    header = ["method", "k"] + [f"layer{i}_error" for i in range(len(layers))] + ["end_to_end_error"]
    rows = [[r.method, r.k, *map(_fmt, r.layer_errors), _fmt(r.end_to_end)] for r in records]
    _write_csv(args.out, header, rows)
    for r in records:
        print(f"{r.method:6s} k={r.k:<5d} end_to_end={_fmt(r.end_to_end)}")
    return 0


def cmd_eval(args) -> int:
    bundle = lio.load_bundle(args.bundle)
    x = lio.load_matrix(args.input)
    h = ref = x
    has_ref = all(bl.layer.reference_w is not None for bl in bundle.layers)
    for i, bl in enumerate(bundle.layers):
        y = forward(bl.layer, h)
        if has_ref:
            y_ref = ref @ bl.layer.reference_w
            rel, max_abs = output_error(y_ref, forward(bl.layer, ref))
            print(f"layer {i}: rel_frobenius={_fmt(rel)} max_abs={_fmt(max_abs)}")
            ref = np.maximum(y_ref, 0.0) if bl.nonlinearity == "relu" else y_ref
        h = np.maximum(y, 0.0) if bl.nonlinearity == "relu" else y
    if has_ref:
        rel, max_abs = output_error(ref, h)
        print(f"end_to_end: rel_frobenius={_fmt(rel)} max_abs={_fmt(max_abs)}")
    if args.out:
        lio.save_matrix(args.out, h)
    return 0


def cmd_report(args) -> int:
    low = _weight_cfg(args)
    high = QuantConfig("mxint", args.high_bits, args.high_exp_bits, args.high_block, "col")
    total_bits = 0
    total_elems = 0
    print("m\tn\tk\tavg_bits\toverhead")
    for m, n in args.dims:
        bits = avg_bitwidth_exact(low, (m, n), args.k, high)
        over = overhead_fraction((m, n), args.k) if args.k > 0 else 0.0
        total_bits += bits * m * n
        total_elems += m * n
        print(f"{m}\t{n}\t{args.k}\t{_fmt(bits)}\t{_fmt(over)}")
    print(f"weighted mean avg_bits: {_fmt(total_bits / total_elems)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lqer", description="Low-rank quantization error reconstruction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic weights and outlier-heavy activations")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--tokens", type=int, default=128)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--outlier-channels", type=int, default=2)
    p.add_argument("--outlier-gain", type=float, default=100.0)
    p.add_argument("--spread", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="build an activation scale profile")
    p.add_argument("inputs", nargs="+", help="activation sample matrices (tokens x channels)")
    p.add_argument("--out", required=True)
    p.add_argument("--max-samples", type=int, default=DEFAULT_MAX_SAMPLES)
    p.add_argument("--floor-dead-channels", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("quantize", help="quantize weights and write a bundle")
    p.add_argument("--weights", nargs="+", required=True)
    p.add_argument("--method", choices=METHODS, default="l2qer")
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--profile", nargs="+")
    p.add_argument("--nonlinearity", choices=["relu", "none"], default="relu")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_format(p)
    _add_runtime(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("spectrum", help="normalized singular values of E_q and S E_q")
    p.add_argument("--weights", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_format(p)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("rank-sweep", help="output error versus rank for each method")
    p.add_argument("--weights", nargs="+", required=True)
    p.add_argument("--calib", nargs="+", required=True)
    p.add_argument("--input", help="evaluation activations (default: stacked calibration samples)")
    p.add_argument("--methods", default="plain,lqer,l2qer")
    p.add_argument("--ks", type=_int_list)
    p.add_argument("--nonlinearity", choices=["relu", "none"], default="relu")
    p.add_argument("--floor-dead-channels", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_format(p)
    _add_runtime(p)
    p.set_defaults(func=cmd_rank_sweep)

    p = sub.add_parser("eval", help="run a bundle on activations")
    p.add_argument("--bundle", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="average bitwidth and low-rank overhead")
    p.add_argument("--dims", type=_dims, nargs="+", required=True)
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--high-bits", type=int, default=8)
    p.add_argument("--high-exp-bits", type=int, default=4)
    p.add_argument("--high-block", type=int, default=16)
    _add_format(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LqerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ArgumentError.exit_code


if __name__ == "__main__":
    sys.exit(main())
