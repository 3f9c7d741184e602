"""Command-line front end.

Subcommands cover the full pipeline: corpus construction (distort,
make-corpus), analysis artifacts (analyze, resynth), per-utterance
optimization (enhance), the batch regressor (train, apply), evaluation
(eval), and adjoint verification (gradcheck).  Exit codes: 0 success,
1 usage or validation problem, 2 runtime failure.

A config file holds `key=value` lines (# comments allowed); keys are
flag names with dashes as underscores (`--in` is `in_path`).  Explicit
flags always win over config values.
"""

import argparse
import hashlib
import os
import sys

import numpy as np

from .audio import FrameLayout, read_wav, resample, write_wav
from .blocks import grad_check, lp2poles
from .channel import (CHANNEL_PRESETS, channel_preset, design_fir, make_pair,
                      read_manifest, write_manifest)
from .enhance import (EnhanceConfig, apply_regressor, enhance_fit,
                      load_regressor, save_regressor, train_regressor,
                      write_trace)
from .errors import DspError
from .lpc import burg_formants, lpc_analyze, lpc_synthesize, track_pitch
from .metrics import evaluate_pair


class _CliError(Exception):
    """Usage/validation problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _CliError(message)


def _add_layout_flags(p):
    p.add_argument("--slot-len", type=int, default=46,
                   help="samples per coefficient slot")
    p.add_argument("--slots-per-frame", type=int, default=120,
                   help="slots per analysis frame")
    p.add_argument("--order", type=int, default=11, help="predictor order")


def _add_work_rate(p):
    p.add_argument("--work-rate", type=int, default=11025,
                   help="analysis/synthesis sample rate")


def _layout_of(args) -> FrameLayout:
    return FrameLayout(args.slot_len, args.slots_per_frame, args.order)


def _add_enhance_flags(p):
    p.add_argument("--target-rate", type=int, default=22050,
                   help="output sample rate")
    p.add_argument("--iters", type=int, default=500, help="optimizer iterations")
    p.add_argument("--lr", type=float, default=1e-3, help="optimizer step size")
    p.add_argument("--wave-weight", type=float, default=1.0,
                   help="weight of the waveform MSE term")
    p.add_argument("--lp-weight", type=float, default=0.3,
                   help="weight of the coefficient-distance term")
    p.add_argument("--pairing", choices=("conjugate", "free"),
                   default="free", help="pole pairing mode")
    p.add_argument("--mel-floor", type=float, default=1.0,
                   help="mel power floor relative to unit signal RMS")


def _enhance_cfg(args) -> EnhanceConfig:
    return EnhanceConfig(layout=_layout_of(args), work_rate=args.work_rate,
                         target_rate=args.target_rate, n_iters=args.iters,
                         lr=args.lr, wave_weight=args.wave_weight,
                         lp_weight=args.lp_weight, pairing_mode=args.pairing,
                         mel_floor=args.mel_floor)


def build_parser():
    top = _Parser(prog="difflpc",
                  description="All-pole speech modelling, transmission-loss "
                              "simulation, and analysis-by-synthesis "
                              "enhancement")
    sub = top.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    parsers = {}

    def cmd(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None,
                       help="key=value config file; flags override it")
        parsers[name] = p
        return p

    p = cmd("distort", "push a clean wav through a channel preset plus noise")
    p.add_argument("--in", dest="in_path", required=True, help="clean input wav")
    p.add_argument("--out", required=True, help="distorted output wav")
    p.add_argument("--preset", default="concrete_5cm",
                   choices=sorted(CHANNEL_PRESETS),
                   help="transmission-loss preset")
    p.add_argument("--snr", type=float, default=0.0,
                   help="pink-noise SNR in dB (inf for none)")
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument("--taps", type=int, default=513, help="FIR length (odd)")
    p.add_argument("--rate", type=int, default=22050,
                   help="processing rate; input is resampled if needed")
    p.add_argument("--clean-out", default=None,
                   help="also write the trimmed, aligned clean wav here")

    p = cmd("analyze", "write analysis CSVs: coefficients, poles, formants, pitch")
    p.add_argument("--in", dest="in_path", required=True, help="input wav")
    p.add_argument("--out", required=True,
                   help="output stem; writes <stem>.coeffs.csv, .poles.csv, "
                        ".formants.csv, .pitch.csv")
    _add_layout_flags(p)
    _add_work_rate(p)

    p = cmd("resynth", "analysis/synthesis round trip at the input's rate")
    p.add_argument("--in", dest="in_path", required=True, help="input wav")
    p.add_argument("--out", required=True, help="resynthesized wav (float32)")
    _add_layout_flags(p)

    p = cmd("enhance", "fit pole parameters against a clean reference")
    p.add_argument("--distorted", required=True, help="distorted input wav")
    p.add_argument("--clean", required=True, help="clean reference wav")
    p.add_argument("--out", required=True, help="enhanced output wav")
    p.add_argument("--trace", default=None, help="loss trace CSV path")
    _add_layout_flags(p)
    _add_work_rate(p)
    _add_enhance_flags(p)

    p = cmd("train", "fit the feature regressor on a corpus manifest")
    p.add_argument("--manifest", required=True, help="JSONL corpus manifest")
    p.add_argument("--model", required=True, help="model JSON to write")
    p.add_argument("--epochs", type=int, default=5, help="training epochs")
    p.add_argument("--seed", type=int, default=0, help="pair-shuffling seed")
    _add_layout_flags(p)
    _add_work_rate(p)
    _add_enhance_flags(p)

    p = cmd("apply", "enhance a wav with a trained regressor")
    p.add_argument("--model", required=True, help="model JSON from train")
    p.add_argument("--in", dest="in_path", required=True, help="distorted wav")
    p.add_argument("--out", required=True, help="enhanced output wav")

    p = cmd("eval", "score a test wav against its clean reference")
    p.add_argument("--clean", required=True, help="clean reference wav")
    p.add_argument("--test", required=True, help="wav to score")
    p.add_argument("--report", required=True, help="report JSON path")
    p.add_argument("--hist", default=None,
                   help="stem for formant histogram CSVs "
                        "(<stem>.f1.csv, <stem>.f2.csv)")
    _add_layout_flags(p)
    _add_work_rate(p)

    p = cmd("gradcheck", "verify analytic adjoints against finite differences")
    p.add_argument("--op", default="all",
                   choices=("poles2lp", "lp2wav", "composed", "all"),
                   help="which block to check")
    p.add_argument("--eps", type=float, default=1e-6, help="difference step")
    p.add_argument("--seed", type=int, default=0, help="test point seed")
    p.add_argument("--tol", type=float, default=None,
                   help="override the per-block error tolerances")

    p = cmd("make-corpus", "distort every wav in a directory, write a manifest")
    p.add_argument("--clean-dir", required=True, help="directory of clean wavs")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--manifest", required=True, help="manifest JSONL to write")
    p.add_argument("--presets", default="concrete_5cm",
                   help="comma-separated channel presets")
    p.add_argument("--snrs", default="-3,0,3",
                   help="comma-separated SNRs in dB")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--taps", type=int, default=513, help="FIR length (odd)")
    p.add_argument("--rate", type=int, default=22050,
                   help="processing rate; inputs are resampled if needed")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")

    return top, parsers


def _load_config(path) -> dict:
    if not os.path.exists(path):
        raise _CliError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise _CliError(f"{path}:{lineno}: expected key=value")
            key, _, val = line.partition("=")
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def _apply_config(parser, args, argv):
    if not getattr(args, "config", None):
        return
    cfg = _load_config(args.config)
    lookup = {}
    for action in parser._actions:
        if action.dest in ("help", "config"):
            continue
        lookup[action.dest] = action
        for opt in action.option_strings:
            lookup[opt.lstrip("-").replace("-", "_")] = action
    for key, raw in cfg.items():
        action = lookup.get(key)
        if action is None:
            raise _CliError(f"unknown config key {key!r}")
        explicit = any(tok == opt or tok.startswith(opt + "=")
                       for tok in argv for opt in action.option_strings)
        if explicit:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                value = action.type(raw)
            except ValueError as exc:
                raise _CliError(f"config key {key!r}: {exc}") from exc
        else:
            value = raw
        if action.choices is not None and value not in action.choices:
            raise _CliError(f"config key {key!r}: invalid choice {value!r}")
        setattr(args, action.dest, value)


def _require_file(path, what):
    if not os.path.isfile(path):
        raise _CliError(f"{what} not found: {path}")


# ---------------------------------------------------------------------------
# subcommand bodies


def _cmd_distort(args) -> int:
    _require_file(args.in_path, "input wav")
    clean = read_wav(args.in_path)
    if clean.rate != args.rate:
        clean = resample(clean, args.rate)
    chan = design_fir(channel_preset(args.preset, args.rate), args.taps,
                      args.rate)
    distorted, trimmed = make_pair(clean, chan, args.snr, args.seed)
    # channel losses run 40+ dB; float keeps the output above the
    # quantization floor
    write_wav(args.out, distorted, bit_depth="32f")
    if args.clean_out:
        write_wav(args.clean_out, trimmed, bit_depth="32f")
    print(f"wrote {args.out} ({distorted.duration:.2f} s, "
          f"{args.preset}, {args.snr:g} dB SNR)")
    return 0


def _write_coeff_csv(path, coeffs):
    order = coeffs.shape[0]
    lines = ["slot," + ",".join(f"a{p + 1}" for p in range(order))]
    for s in range(coeffs.shape[1]):
        lines.append(f"{s}," + ",".join(f"{v:.10g}" for v in coeffs[:, s]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_pole_csv(path, coeffs):
    order = coeffs.shape[0]
    head = ",".join(f"re{p + 1},im{p + 1}" for p in range(order))
    lines = ["slot," + head]
    for s in range(coeffs.shape[1]):
        roots = lp2poles(coeffs[:, s])
        roots = roots[np.lexsort((roots.imag, roots.real))]
        cells = []
        for r in roots:
            cells.append(f"{r.real:.10g}")
            cells.append(f"{r.imag:.10g}")
        lines.append(f"{s}," + ",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _cmd_analyze(args) -> int:
    _require_file(args.in_path, "input wav")
    buf = read_wav(args.in_path)
    layout = _layout_of(args)
    work = resample(buf, args.work_rate)
    frames = lpc_analyze(work, layout)
    coeffs = np.concatenate([fr.coeffs for fr in frames], axis=1)
    paths = {
        "coeffs": f"{args.out}.coeffs.csv",
        "poles": f"{args.out}.poles.csv",
        "formants": f"{args.out}.formants.csv",
        "pitch": f"{args.out}.pitch.csv",
    }
    _write_coeff_csv(paths["coeffs"], coeffs)
    _write_pole_csv(paths["poles"], coeffs)
    burg_formants(buf).to_csv(paths["formants"])
    track_pitch(buf).to_csv(paths["pitch"])
    for path in paths.values():
        print(f"wrote {path}")
    return 0


def _cmd_resynth(args) -> int:
    _require_file(args.in_path, "input wav")
    buf = read_wav(args.in_path)
    frames = lpc_analyze(buf, _layout_of(args))
    out = lpc_synthesize(frames)
    write_wav(args.out, out, bit_depth="32f")
    n = len(out)
    err = float(np.max(np.abs(out.samples - buf.samples[:n])))
    print(f"wrote {args.out} (round-trip max deviation {err:.3e})")
    return 0


def _cmd_enhance(args) -> int:
    _require_file(args.distorted, "distorted wav")
    _require_file(args.clean, "clean wav")
    distorted = read_wav(args.distorted)
    clean = read_wav(args.clean)
    result = enhance_fit(distorted, clean, _enhance_cfg(args))
    write_wav(args.out, result.enhanced, bit_depth="32f")
    if args.trace:
        write_trace(args.trace, result.trace)
        print(f"wrote {args.trace}")
    first, best = result.trace[0].total, result.trace[result.best_iter].total
    print(f"wrote {args.out} (loss {first:.5g} -> {best:.5g} "
          f"at iteration {result.best_iter}"
          + (", stopped early)" if result.stopped_early else ")"))
    return 0


def _resolve_manifest_paths(entries, manifest_path):
    base = os.path.dirname(os.path.abspath(manifest_path))
    out = []
    for rec in entries:
        rec = dict(rec)
        for key in ("clean_path", "distorted_path"):
            if not os.path.isabs(rec[key]):
                rec[key] = os.path.join(base, rec[key])
            _require_file(rec[key], f"manifest entry {rec['id']!r} {key}")
        out.append(rec)
    return out


def _cmd_train(args) -> int:
    _require_file(args.manifest, "manifest")
    entries = _resolve_manifest_paths(read_manifest(args.manifest), args.manifest)
    cfg = _enhance_cfg(args)
    model, history = train_regressor(
        entries, cfg, epochs=args.epochs, seed=args.seed, lr=args.lr,
        callback=lambda e, l: print(f"epoch {e}: mean loss {l:.6g}"))
    save_regressor(model, args.model)
    print(f"wrote {args.model}")
    return 0


def _cmd_apply(args) -> int:
    _require_file(args.model, "model JSON")
    _require_file(args.in_path, "input wav")
    model = load_regressor(args.model)
    out = apply_regressor(model, read_wav(args.in_path))
    write_wav(args.out, out, bit_depth="32f")
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    _require_file(args.clean, "clean wav")
    _require_file(args.test, "test wav")
    report = evaluate_pair(read_wav(args.clean), read_wav(args.test),
                           _layout_of(args), args.work_rate)
    report.write_json(args.report)
    print(f"wrote {args.report}")
    if args.hist:
        for key in report.formant_diff:
            path = f"{args.hist}.{key}.csv"
            report.write_histogram_csv(path, key)
            print(f"wrote {path}")
    for key, val in report.summary().items():
        cell = f"{val:.4f}" if np.isfinite(val) else "NA"
        print(f"  {key}: {cell}")
    return 0


_GRADCHECK_TOL = {"poles2lp": 1e-5, "lp2wav": 1e-5, "composed": 1e-4}


def _cmd_gradcheck(args) -> int:
    ops = ("poles2lp", "lp2wav", "composed") if args.op == "all" else (args.op,)
    failed = False
    for op in ops:
        err = grad_check(op, eps=args.eps, seed=args.seed)
        tol = args.tol if args.tol is not None else _GRADCHECK_TOL[op]
        ok = err <= tol
        failed |= not ok
        print(f"{op}: max relative error {err:.3e} "
              f"(tolerance {tol:g}) {'ok' if ok else 'FAIL'}")
    if failed:
        print("gradient check failed", file=sys.stderr)
        return 2
    return 0


def _derive_seed(master: int, utt_id: str) -> int:
    digest = hashlib.blake2b(f"{master}:{utt_id}".encode(),
                             digest_size=4).digest()
    return int.from_bytes(digest, "big")


def _corpus_item(job):
    in_path, out_dir, utt_id, preset, snr_db, seed, taps, rate = job
    clean = read_wav(in_path)
    if clean.rate != rate:
        clean = resample(clean, rate)
    chan = design_fir(channel_preset(preset, rate), taps, rate)
    distorted, trimmed = make_pair(clean, chan, snr_db, seed)
    clean_path = os.path.join(out_dir, f"{utt_id}.clean.wav")
    dist_path = os.path.join(out_dir, f"{utt_id}.wav")
    write_wav(clean_path, trimmed, bit_depth="32f")
    write_wav(dist_path, distorted, bit_depth="32f")
    return {"id": utt_id, "clean_path": clean_path,
            "distorted_path": dist_path, "snr_db": snr_db,
            "channel_preset": preset, "seed": seed}


def _cmd_make_corpus(args) -> int:
    if not os.path.isdir(args.clean_dir):
        raise _CliError(f"clean dir not found: {args.clean_dir}")
    wavs = sorted(f for f in os.listdir(args.clean_dir)
                  if f.lower().endswith(".wav"))
    if not wavs:
        raise _CliError(f"no wav files in {args.clean_dir}")
    presets = [p.strip() for p in args.presets.split(",") if p.strip()]
    for p in presets:
        if p not in CHANNEL_PRESETS:
            raise _CliError(f"unknown preset {p!r}")
    try:
        snrs = [float(s) for s in args.snrs.split(",") if s.strip()]
    except ValueError as exc:
        raise _CliError(f"bad --snrs: {exc}") from exc
    os.makedirs(args.out_dir, exist_ok=True)

    jobs = []
    for fname in wavs:
        stem = os.path.splitext(fname)[0]
        for preset in presets:
            for snr in snrs:
                utt_id = f"{stem}__{preset}__snr{snr:g}"
                jobs.append((os.path.join(args.clean_dir, fname), args.out_dir,
                             utt_id, preset, snr,
                             _derive_seed(args.seed, utt_id), args.taps,
                             args.rate))
    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            entries = list(pool.map(_corpus_item, jobs))
    else:
        entries = [_corpus_item(j) for j in jobs]
    # store paths relative to the manifest so the corpus moves as a unit
    base = os.path.dirname(os.path.abspath(args.manifest))
    for rec in entries:
        for key in ("clean_path", "distorted_path"):
            rec[key] = os.path.relpath(os.path.abspath(rec[key]), base)
    write_manifest(args.manifest, entries)
    print(f"wrote {args.manifest} ({len(entries)} utterances)")
    return 0


_DISPATCH = {
    "distort": _cmd_distort,
    "analyze": _cmd_analyze,
    "resynth": _cmd_resynth,
    "enhance": _cmd_enhance,
    "train": _cmd_train,
    "apply": _cmd_apply,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "make-corpus": _cmd_make_corpus,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    top, parsers = build_parser()
    try:
        args = top.parse_args(argv)
        _apply_config(parsers[args.command], args, argv)
        return _DISPATCH[args.command](args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DspError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
