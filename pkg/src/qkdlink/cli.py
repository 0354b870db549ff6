"""Command-line surface.

Subcommands:
    simulate   one operating point, Monte Carlo end to end (or analytic
               with --paper-scale); writes a JSON manifest and a CSV row
    sweep      loss sweep with common random numbers; CSV table + plot data
    optimize   intensity/probability search maximizing the predicted SKR
    analyze    finite-key analysis of an external counts file, no simulation
    listen     run the receiver role of a two-process session on a socket
    connect    run the transmitter role against a listening peer

Exit codes: 0 success, 1 runtime failure, 2 validation failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import (
    CONFIG_FORMAT_VERSION,
    ConfigError,
    RunConfig,
    config_to_dict,
    load_config,
    parse_config,
    save_config,
)
from .core import binary_entropy
from .finitekey import analyze, load_tallies
from .harness import SessionConfig, connect_session, serve_session
from .photonics import StopTargetUnreachable, run_link
from .postproc import PaSeed, confirm, privacy_amplify, reconcile, sift
from .presets import INTENSITY_SCHEDULE
from .rates import SearchSpec, optimize_intensities, predict_skr

PAPER_SCALE_NZ = 10**9
DESK_SCALE_NZ = 10**5

_CSV_FIELDS = [
    "loss_db", "detector", "mode", "skr_bps", "qber_z", "qber_x",
    "s_z0_lower", "s_z1_lower", "phi_z_upper", "lambda_ec",
    "key_length_l", "n_z", "status",
]


def _apply_cli_overrides(cfg: RunConfig, args) -> RunConfig:
    params, channel, det_z, det_x, run = (
        cfg.params, cfg.channel, cfg.detector_z, cfg.detector_x, cfg.run
    )
    if getattr(args, "loss_db", None) is not None:
        channel = dataclasses.replace(channel, channel_loss_db=args.loss_db)
    if getattr(args, "detector", None) is not None:
        from .presets import detector_preset
        det_z = det_x = detector_preset(args.detector)
    p_over = {}
    for name in ("mu1", "mu2"):
        v = getattr(args, name, None)
        if v is not None:
            p_over[name] = v
    if getattr(args, "p_mu1", None) is not None:
        p_over["p_mu"] = (args.p_mu1, 1.0 - args.p_mu1 - params.p_mu[2], params.p_mu[2])
    if p_over:
        params = params.with_overrides(**p_over)
    if getattr(args, "target_nz", None) is not None:
        run = dataclasses.replace(run, target_nz=args.target_nz)
    if getattr(args, "frames", None) is not None:
        if args.frames <= 0:
            raise ConfigError("--frames", "must be a positive count")
        run = dataclasses.replace(run, max_frames=args.frames)
    if getattr(args, "seed", None) is not None:
        run = dataclasses.replace(run, seed=args.seed)
    if getattr(args, "schedule", False):
        name = det_z.name
        if name not in INTENSITY_SCHEDULE:
            raise ConfigError("--schedule", f"no intensity schedule for detector {name!r}")
        sched = INTENSITY_SCHEDULE[name]
        loss = channel.channel_loss_db
        key = min(sched, key=lambda L: abs(L - loss))
        mu1, mu2 = sched[key]
        params = params.with_overrides(mu1=mu1, mu2=mu2)
    return RunConfig(params=params, channel=channel,
                     detector_z=det_z, detector_x=det_x, run=run)


def _load_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = parse_config({})
    if getattr(args, "overrides", None):
        over = load_config(args.overrides)
        over_raw = json.loads(Path(args.overrides).read_text())
        # only sections present in the overrides file replace the base config
        merged = config_to_dict(cfg)
        for section in ("params", "channel", "detector_z", "detector_x", "run"):
            if section in over_raw:
                merged[section] = config_to_dict(over)[section]
        cfg = parse_config(merged)
    return _apply_cli_overrides(cfg, args)


def _simulate_point(cfg: RunConfig, paper_scale: bool, deterministic: bool) -> dict:
    """One operating point; returns a manifest dictionary."""
    manifest = {
        "format_version": CONFIG_FORMAT_VERSION,
        "config": config_to_dict(cfg),
        "mode": "analytic" if paper_scale else "monte-carlo",
        "seed": cfg.run.seed,
    }
    if not deterministic:
        manifest["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")

    if paper_scale:
        report = predict_skr(cfg.params, cfg.channel, cfg.detector_z, cfg.detector_x,
                             n_z=PAPER_SCALE_NZ, f_ec=cfg.run.f_ec)
        from .rates import expected_rates
        rates = expected_rates(cfg.params, cfg.channel, cfg.detector_z, cfg.detector_x)
        manifest.update({
            "n_z": PAPER_SCALE_NZ,
            "qber_z": rates.qber_z,
            "qber_x": rates.qber_x,
            "report": report.to_dict(),
        })
        return manifest

    target = cfg.run.target_nz if cfg.run.target_nz is not None else (
        None if cfg.run.max_frames is not None else DESK_SCALE_NZ
    )
    result = run_link(
        cfg.params, cfg.channel, cfg.detector_z, cfg.detector_x,
        target_nz=target, max_frames=cfg.run.max_frames, seed=cfg.run.seed,
        adversary_fraction=cfg.run.adversary_fraction, record_events=True,
    )
    pairs = list(result.event_pairs())
    if not pairs:
        raise StopTargetUnreachable("no detections recorded; nothing to post-process")
    sifted = sift([p[0] for p in pairs], [p[1] for p in pairs])
    tallies = sifted.tallies
    rng = np.random.default_rng(np.random.SeedSequence([cfg.run.seed, 2]))

    # disclose a sample for the error estimate, then reconcile and amplify
    n_key = len(sifted.key_alice)
    k = int(round(cfg.run.sample_fraction * n_key))
    k = min(max(k, 1), max(n_key - 1, 0)) if n_key > 1 else 0
    positions = np.sort(rng.choice(n_key, size=k, replace=False)) if k else np.array([], int)
    sample = [
        (int(sifted.key_alice.frame_indices[i]),
         int(sifted.key_alice.bits[i]), int(sifted.key_bob.bits[i]))
        for i in positions
    ]
    errs = sum(1 for _, a, b in sample if a != b)
    qber_sample = errs / len(sample) if sample else 0.0
    keep = np.ones(n_key, dtype=bool)
    keep[positions] = False
    key_a, key_b, lambda_ec = reconcile(
        sifted.key_alice.bits[keep], sifted.key_bob.bits[keep],
        qber_sample, f_ec=cfg.run.f_ec,
    )
    report = analyze(tallies, cfg.params, lambda_ec=lambda_ec,
                     elapsed_protocol_time=result.elapsed_protocol_time)
    l = min(report.key_length_l, len(key_a))
    final_ok = None
    if l > 0:
        seed_bits = PaSeed.random(l, len(key_a), rng)
        final_a = privacy_amplify(key_a, l, seed_bits)
        final_b = privacy_amplify(key_b, l, seed_bits)
        final_ok = confirm(final_a, final_b, tag_bits=cfg.run.tag_bits,
                           seed=np.random.default_rng(cfg.run.seed + 3))
    manifest.update({
        "n_z": int(tallies.n_z_total),
        "frames": result.frames,
        "elapsed_protocol_time": result.elapsed_protocol_time,
        "double_clicks_discarded": result.double_clicks_discarded,
        "clicks_by_origin": dict(result.truth.by_origin),
        "qber_z": tallies.qber_z(),
        "qber_x": tallies.qber_x(),
        "qber_z_sample": qber_sample,
        "disclosed_sample_bits": len(sample),
        "tallies": tallies.to_dict(),
        "report": report.to_dict(),
        "key_length_extracted": int(l),
        "confirmation_passed": final_ok,
    })
    return manifest


def cmd_simulate(args) -> int:
    cfg = _load_run_config(args)
    manifest = _simulate_point(cfg, args.paper_scale, args.deterministic)
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    rep = manifest["report"]
    row = {
        "loss_db": cfg.channel.channel_loss_db,
        "detector": cfg.detector_z.name,
        "mode": manifest["mode"],
        "skr_bps": rep["skr"],
        "qber_z": manifest["qber_z"],
        "qber_x": manifest["qber_x"],
        "s_z0_lower": rep["s_z0_lower"],
        "s_z1_lower": rep["s_z1_lower"],
        "phi_z_upper": rep["phi_z_upper"],
        "lambda_ec": rep["lambda_ec"],
        "key_length_l": rep["key_length_l"],
        "n_z": manifest["n_z"],
        "status": "ok",
    }
    with open(outdir / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        writer.writerow(row)
    print(f"SKR {rep['skr']:.3f} bit/s, l = {rep['key_length_l']} bits, "
          f"QBER_Z {manifest['qber_z']:.4f}, QBER_X {manifest['qber_x']:.4f}")
    print(f"manifest: {outdir / 'manifest.json'}")
    return 0


def _sweep_point(payload):
    """Worker for one sweep point (top level for pickling)."""
    cfg_dict, loss, detector, schedule, paper_scale, deterministic, seed, ref_loss = payload
    cfg = parse_config(cfg_dict)
    channel = dataclasses.replace(cfg.channel, channel_loss_db=loss)
    from .presets import detector_preset
    det = detector_preset(detector) if detector else cfg.detector_z
    params = cfg.params
    if schedule and det.name in INTENSITY_SCHEDULE:
        sched = INTENSITY_SCHEDULE[det.name]
        key = min(sched, key=lambda L: abs(L - loss))
        params = params.with_overrides(mu1=sched[key][0], mu2=sched[key][1])
    run = dataclasses.replace(cfg.run, seed=seed)
    point_cfg = RunConfig(params=params, channel=channel,
                          detector_z=det, detector_x=det, run=run)
    try:
        if paper_scale:
            manifest = _simulate_point(point_cfg, True, deterministic)
        else:
            # common random numbers: candidate draws shared across losses via
            # the reference channel at the lowest loss
            target = run.target_nz if run.target_nz is not None else (
                None if run.max_frames is not None else DESK_SCALE_NZ
            )
            ref_channel = dataclasses.replace(channel, channel_loss_db=ref_loss)
            result = run_link(
                params, channel, det, det,
                target_nz=target, max_frames=run.max_frames, seed=seed,
                crn_reference_channel=ref_channel,
            )
            qz = result.tallies.qber_z()
            lambda_ec = run.f_ec * result.tallies.n_z_total * binary_entropy(qz)
            report = analyze(result.tallies, params, lambda_ec=lambda_ec,
                             elapsed_protocol_time=result.elapsed_protocol_time)
            manifest = {
                "qber_z": qz,
                "qber_x": result.tallies.qber_x(),
                "n_z": int(result.tallies.n_z_total),
                "report": report.to_dict(),
            }
        rep = manifest["report"]
        return _row_from(loss, det.name, paper_scale, manifest, rep, "ok")
    except Exception as exc:  # per-point failure: mark and continue
        return {
            "loss_db": loss, "detector": det.name,
            "mode": "analytic" if paper_scale else "monte-carlo",
            "skr_bps": "", "qber_z": "", "qber_x": "", "s_z0_lower": "",
            "s_z1_lower": "", "phi_z_upper": "", "lambda_ec": "",
            "key_length_l": "", "n_z": "",
            "status": f"failed: {type(exc).__name__}: {exc}",
        }


def _row_from(loss, det_name, paper_scale, manifest, rep, status):
    return {
        "loss_db": loss,
        "detector": det_name,
        "mode": "analytic" if paper_scale else "monte-carlo",
        "skr_bps": rep["skr"],
        "qber_z": manifest["qber_z"],
        "qber_x": manifest["qber_x"],
        "s_z0_lower": rep["s_z0_lower"],
        "s_z1_lower": rep["s_z1_lower"],
        "phi_z_upper": rep["phi_z_upper"],
        "lambda_ec": rep["lambda_ec"],
        "key_length_l": rep["key_length_l"],
        "n_z": manifest["n_z"],
        "status": status,
    }


def cmd_sweep(args) -> int:
    cfg = _load_run_config(args)
    losses = [float(x) for x in args.losses.split(",") if x.strip()]
    if not losses:
        raise ConfigError("--losses", "loss list must be nonempty")
    detectors = args.detectors.split(",") if args.detectors else [None]
    ref_loss = min(losses)
    cfg_dict = config_to_dict(cfg)

    payloads = [
        (cfg_dict, loss, det, args.schedule, args.paper_scale,
         args.deterministic, cfg.run.seed, ref_loss)
        for det in detectors for loss in losses
    ]
    if args.workers > 1 and not args.paper_scale:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_point, payloads))
    else:
        rows = [_sweep_point(p) for p in payloads]

    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    # plain plot data: one block per detector, loss vs SKR
    lines = ["# loss_db skr_bps  (one block per detector)"]
    for det in detectors:
        name = det if det else cfg.detector_z.name
        lines.append(f"# detector {name}")
        for row in rows:
            if row["detector"] == name and row["status"] == "ok":
                lines.append(f"{row['loss_db']} {row['skr_bps']}")
        lines.append("")
    (outdir / "sweep.dat").write_text("\n".join(lines))
    for row in rows:
        print(f"{row['loss_db']:6.1f} dB  {row['detector']:18s} "
              f"SKR {row['skr_bps'] if row['skr_bps'] != '' else 'n/a':>12} bit/s  {row['status']}")
    return 0


def cmd_optimize(args) -> int:
    cfg = _load_run_config(args)

    def bounds(text):
        if text is None:
            return None
        lo, hi = (float(x) for x in text.split(","))
        return (lo, hi)

    spec = SearchSpec(
        mu1_bounds=bounds(args.mu1_bounds),
        mu2_bounds=bounds(args.mu2_bounds),
        p_mu1_bounds=bounds(args.p_mu1_bounds),
        p_z_alice_bounds=bounds(args.p_z_alice_bounds),
        p_z_bob_bounds=bounds(args.p_z_bob_bounds),
        grid_points=args.grid_points,
        rounds=args.rounds,
    )
    n_z = PAPER_SCALE_NZ if args.paper_scale else (cfg.run.target_nz or DESK_SCALE_NZ)
    result = optimize_intensities(cfg.params, cfg.channel,
                                  cfg.detector_z, cfg.detector_x,
                                  spec=spec, n_z=n_z, f_ec=cfg.run.f_ec)
    out_cfg = RunConfig(params=result.params, channel=cfg.channel,
                        detector_z=cfg.detector_z, detector_x=cfg.detector_x,
                        run=cfg.run)
    save_config(out_cfg, args.out)
    p = result.params
    print(f"optimized: mu1={p.mu1:.4f} mu2={p.mu2:.4f} p_mu1={p.p_mu[0]:.4f} "
          f"p_z_alice={p.p_z_alice:.3f} p_z_bob={p.p_z_bob:.3f} SKR={result.skr:.3f} bit/s")
    print(f"written: {args.out}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _load_run_config(args)
    try:
        tallies = load_tallies(args.counts)
    except (ValueError, OSError) as exc:
        raise ConfigError("counts", str(exc)) from None
    report = analyze(tallies, cfg.params, f_ec=cfg.run.f_ec,
                     elapsed_protocol_time=args.elapsed)
    out = {
        "format_version": CONFIG_FORMAT_VERSION,
        "counts_file": args.counts,
        "tallies": tallies.to_dict(),
        "report": report.to_dict(),
    }
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _session_config(cfg: RunConfig) -> SessionConfig:
    return SessionConfig(
        params=cfg.params, channel=cfg.channel,
        detector_z=cfg.detector_z, detector_x=cfg.detector_x,
        quantum_seed=cfg.run.seed,
        target_nz=cfg.run.target_nz, max_frames=cfg.run.max_frames,
        sample_fraction=cfg.run.sample_fraction, tag_bits=cfg.run.tag_bits,
        f_ec=cfg.run.f_ec, adversary_fraction=cfg.run.adversary_fraction,
    )


def _finish_session(result, args) -> int:
    manifest = dict(result.manifest)
    manifest["aborted"] = result.aborted
    manifest["abort_reason"] = result.abort_reason
    if args.manifest_out:
        Path(args.manifest_out).write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if result.aborted:
        print(f"session aborted: {result.abort_reason}")
        return 1
    key = result.key_alice if result.key_alice is not None else result.key_bob
    if args.key_out and key is not None:
        Path(args.key_out).write_text(np.packbits(key).tobytes().hex() + "\n")
    print(f"session complete: {len(key)} key bits")
    return 0


def cmd_listen(args) -> int:
    cfg = _load_run_config(args)
    result = serve_session(_session_config(cfg), args.host, args.port, seed=cfg.run.seed)
    return _finish_session(result, args)


def cmd_connect(args) -> int:
    cfg = _load_run_config(args)
    result = connect_session(_session_config(cfg), args.host, args.port, seed=cfg.run.seed)
    return _finish_session(result, args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qkdlink",
        description="Desk-scale simulator of a one-decoy time-bin BB84 link.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, output=True):
        p.add_argument("--config", help="JSON run configuration file")
        p.add_argument("--overrides", help="partial config file merged over --config")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--deterministic", action="store_true",
                       help="omit timestamps so identical runs are byte-identical")
        if output:
            p.add_argument("--output-dir", default="qkdlink-out",
                           help="directory for manifests and tables")

    p = sub.add_parser("simulate", help="single operating point, end to end")
    common(p)
    p.add_argument("--loss-db", type=float, default=None)
    p.add_argument("--detector", help="detector preset for both arms")
    p.add_argument("--mu1", type=float, default=None)
    p.add_argument("--mu2", type=float, default=None)
    p.add_argument("--p-mu1", dest="p_mu1", type=float, default=None)
    p.add_argument("--target-nz", dest="target_nz", type=int, default=None)
    p.add_argument("--frames", type=int, default=None, help="frame budget")
    p.add_argument("--schedule", action="store_true",
                   help="take mu1/mu2 from the per-loss intensity schedule")
    p.add_argument("--paper-scale", action="store_true",
                   help="analytic mode at n_Z = 1e9 instead of Monte Carlo")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="loss sweep, CSV table + plot data")
    common(p)
    p.add_argument("--losses", required=True, help="comma-separated losses in dB")
    p.add_argument("--detectors", help="comma-separated detector presets")
    p.add_argument("--schedule", action="store_true")
    p.add_argument("--paper-scale", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--target-nz", dest="target_nz", type=int, default=None)
    p.add_argument("--frames", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("optimize", help="search intensities maximizing predicted SKR")
    common(p, output=False)
    p.add_argument("--loss-db", type=float, default=None)
    p.add_argument("--detector", help="detector preset for both arms")
    p.add_argument("--mu1-bounds", default="0.05,0.9", help="lo,hi (or 'pin')")
    p.add_argument("--mu2-bounds", default="0.01,0.5")
    p.add_argument("--p-mu1-bounds", dest="p_mu1_bounds", default="0.2,0.95")
    p.add_argument("--p-z-alice-bounds", dest="p_z_alice_bounds", default=None)
    p.add_argument("--p-z-bob-bounds", dest="p_z_bob_bounds", default=None)
    p.add_argument("--grid-points", type=int, default=9)
    p.add_argument("--rounds", type=int, default=4)
    p.add_argument("--paper-scale", action="store_true")
    p.add_argument("--target-nz", dest="target_nz", type=int, default=None)
    p.add_argument("--out", default="optimized.json")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("analyze", help="finite-key analysis of a counts file")
    common(p, output=False)
    p.add_argument("--counts", required=True, help="JSON or delimited counts file")
    p.add_argument("--elapsed", type=float, default=None,
                   help="protocol time in seconds, for the SKR")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_analyze)

    for name, fn in (("listen", cmd_listen), ("connect", cmd_connect)):
        p = sub.add_parser(name, help=f"{name} role of a two-process session")
        common(p, output=False)
        p.add_argument("--host", default="127.0.0.1")
        p.add_argument("--port", type=int, required=True)
        p.add_argument("--target-nz", dest="target_nz", type=int, default=None)
        p.add_argument("--key-out", default=None, help="write the final key (hex)")
        p.add_argument("--manifest-out", default=None)
        p.set_defaults(func=fn)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except StopTargetUnreachable as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
