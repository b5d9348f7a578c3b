"""Command-line entry points: inpaint, synth, eval, serve.

Exit codes: 0 success, 2 input/usage error, 3 pipeline completed but
degraded to the single-image fill (no usable proposals).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .core import (PipelineConfig, RefillError, load_hole_mask, load_image,
                   save_hole_mask, save_image)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DEGRADED = 3

REGIME_ALIASES = {
    "CS": "both", "C": "color", "S": "spatial", "NONE": "none",
    "BOTH": "both", "COLOR": "color", "SPATIAL": "spatial",
}


def _load_config(spec: str | None) -> PipelineConfig:
    if not spec:
        return PipelineConfig()
    text = spec if spec.lstrip().startswith("{") else Path(spec).read_text()
    return PipelineConfig.from_json(text)


def _parse_disable(spec: str | None) -> dict:
    if not spec:
        return {}
    toggles = {}
    for tok in spec.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if not tok.isdigit() or int(tok) < 1:
            raise ValueError(f"--disable expects 1-based ids, got {tok!r}")
        toggles[int(tok)] = False
    return toggles


def cmd_inpaint(args) -> int:
    from .artifacts import result_artifacts, save_artifacts
    from .pipeline import fill_only_composite, run_pipeline

    try:
        cfg = _load_config(args.config)
        toggles = dict(cfg.proposal_toggles)
        toggles.update(_parse_disable(args.disable))
        cfg = cfg.with_overrides(proposal_toggles=toggles)
        cfg.validate()
        target = load_image(args.target)
        mask = load_hole_mask(args.mask)
        source = load_image(args.source)
    except (OSError, ValueError, RefillError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT

    try:
        if args.fill_only:
            composite = fill_only_composite(target, mask, cfg)
            result = None
        else:
            result = run_pipeline(target, mask, source, cfg,
                                  poisson=args.poisson,
                                  posthoc=args.posthoc_fill)
            composite = result.composite
    except RefillError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(out, composite)
    if args.dump and result is not None:
        save_artifacts(result_artifacts(result), args.dump)
    if result is not None and result.degraded:
        for note in result.notes:
            print(f"warning: {note}", file=sys.stderr)
        return EXIT_DEGRADED
    return EXIT_OK


def cmd_synth(args) -> int:
    from .harness import SynthRegime, brush_hole, feature_texture, synth_pair

    name = REGIME_ALIASES.get(args.regime.upper(), args.regime)
    try:
        if name != "mixed":
            SynthRegime.from_name(name)  # validates early
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT

    out = Path(args.out)
    names = ("both", "color", "spatial", "none")
    for k in range(args.count):
        pair_dir = out if args.count == 1 else out / f"pair_{k:03d}"
        pair_dir.mkdir(parents=True, exist_ok=True)
        seed = args.seed + k
        pick = name
        if name == "mixed":
            # four regimes with equal probability
            pick = names[np.random.default_rng([args.seed, k]).integers(4)]
        gt = feature_texture(args.height, args.width, seed=seed)
        tgt, src, truth = synth_pair(
            gt, SynthRegime.from_name(pick, seed=seed,
                                      max_corner_px=args.max_corner_px))
        mask = brush_hole((args.height, args.width), seed=seed)
        save_image(pair_dir / "gt.png", gt)
        save_image(pair_dir / "target.png", tgt)
        save_image(pair_dir / "source.png", src)
        save_hole_mask(pair_dir / "mask.png", mask)
        record = {"regime": pick, "seed": seed, **truth.to_dict()}
        (pair_dir / "truth.json").write_text(json.dumps(record, indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .harness import eval_run
    from .report import render_figures

    try:
        cfg = _load_config(args.config)
        cfg.validate()
        report = eval_run(args.pairs, cfg, out_path=args.out)
    except (OSError, ValueError, RefillError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    figures = render_figures(report, Path(args.out).parent)
    print(f"wrote {args.out} (+ json, {len(figures)} figures); "
          f"mean hole PSNR {report.aggregates['mean_psnr_hole']:.2f} dB")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    store = args.store or os.environ.get("REFILL_STORE") or "./refill_sessions"
    app = create_app(store_dir=store)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="refill",
        description="Reference-guided inpainting: align a second photo of the "
                    "same scene, transfer its content into the hole, and fuse "
                    "per-proposal candidates by confidence.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inpaint", help="fill a hole using a reference image")
    p.add_argument("--target", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file (or inline JSON) of config overrides")
    p.add_argument("--dump", help="directory for intermediate artifacts")
    p.add_argument("--disable", help="comma-separated 1-based proposal ids to zero out")
    p.add_argument("--poisson", action="store_true",
                   help="gradient-domain paste instead of direct compositing")
    p.add_argument("--posthoc-fill", action="store_true",
                   help="re-synthesize hole areas the fusion left to the fallback")
    p.add_argument("--fill-only", action="store_true",
                   help="skip the reference entirely; single-image fill")
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("synth", help="generate synthetic evaluation pairs")
    p.add_argument("--regime", default="CS",
                   help="CS | C | S | none | mixed (aliases: both/color/spatial)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--height", type=int, default=192)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--max-corner-px", type=float, default=16.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="run the pipeline over a pairs directory")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True, help="CSV path; JSON and figures land beside it")
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="start the HTTP session service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--store", help="session directory (default $REFILL_STORE or ./refill_sessions)")
    p.set_defaults(func=cmd_serve)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
