"""Command-line interface.

Subcommands: synth (phantom datasets), train (k-fold cross-validated
training), infer (sliced inference with curve fitting), eval (MADLBP and
Hausdorff tables), ablate (down/upsampling variant sweep), and gradcheck
(finite-difference verification of the tensor engine).

Exit codes: 0 success, 1 computational failure, 2 usage or I/O error.
Every command writes a run.json provenance record next to its outputs and
is reproducible from (config file, flags, seed).
"""

import argparse
import json
import os
import shutil
import sys
import time

import numpy as np

from . import __version__, data, gradcheck, metrics, phantom, postproc
from ._runtime import tune_runtime
from .network import ConfigError, NetworkConfig, build_network, load_checkpoint, save_checkpoint
from .tensor import TensorND, no_grad
from .training import (
    TrainConfig,
    TrainingError,
    cross_validate,
    tiles_from_volume,
    train,
)

OVERLAY_COLORS = {"EP": (255, 0, 0), "BL": (0, 255, 0), "EN": (255, 165, 0)}

ABLATION_VARIANTS = (
    ("max_pool2", "nearest_conv3"),
    ("avg_pool2", "nearest_conv3"),
    ("strided_conv2", "nearest_conv3"),
    ("max_pool2", "bilinear"),
    ("max_pool2", "bilinear_conv3"),
    ("max_pool2", "unpool"),
    ("max_pool2", "frac_strided_conv"),
)


class UsageError(ValueError):
    pass


def _load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path}: invalid JSON: {e}")
    if not isinstance(raw, dict):
        raise UsageError(f"config file {path}: expected a JSON object")
    return raw


def _split_config(raw):
    """Partition flat config keys into network/training configs."""
    net_fields = set(NetworkConfig.__dataclass_fields__)
    train_fields = set(TrainConfig.__dataclass_fields__)
    net_kw, train_kw = {}, {}
    for key, value in raw.items():
        if key in net_fields:
            net_kw[key] = value
        elif key in train_fields:
            train_kw[key] = value
        else:
            raise UsageError(f"unknown config field {key!r}")
    return net_kw, train_kw


def _write_run_record(out_path, command, args_dict, started):
    record = {
        "command": command,
        "config": args_dict,
        "seed": args_dict.get("seed"),
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "version": __version__,
    }
    if os.path.isdir(out_path):
        path = os.path.join(out_path, "run.json")
    else:
        path = str(out_path) + ".run.json"
    with open(path, "w") as f:
        json.dump(record, f, indent=1, default=str)


def _volume_dirs(root):
    found = []
    if os.path.isfile(os.path.join(root, "manifest.json")):
        found.append(root)
    for entry in sorted(os.listdir(root)):
        sub = os.path.join(root, entry)
        if os.path.isdir(sub) and os.path.isfile(os.path.join(sub, "manifest.json")):
            found.append(sub)
    if not found:
        raise UsageError(f"no volume manifests under {root}")
    return found


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args):
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    profile = data.get_profile(args.profile)
    os.makedirs(args.out, exist_ok=True)
    n_scans = args.bscans if args.bscans else profile.bscans_per_volume
    for vi in range(args.volumes):
        vseed = int(np.random.SeedSequence((args.seed, vi)).generate_state(1)[0])
        name = f"vol{vi:03d}"
        vol = phantom.synth_volume(vseed, profile, n_bscans=n_scans, name=name)
        data.save_volume(vol, os.path.join(args.out, name))
        print(f"wrote {name}: {n_scans} B-scans of {profile.height_px}x{profile.width_px}")
    _write_run_record(args.out, "synth", vars(args), started)
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _load_dataset(root):
    samples = []
    for vdir in _volume_dirs(root):
        vol = data.load_volume(vdir)
        vol.name = os.path.basename(os.path.abspath(vdir))
        samples.extend(tiles_from_volume(vol))
    return samples


def cmd_train(args):
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    tune_runtime()
    raw = _load_config_file(args.config)
    net_kw, train_kw = _split_config(raw)
    if args.folds is not None:
        train_kw["folds"] = args.folds
    if args.seed is not None:
        train_kw["seed"] = args.seed
    net_config = NetworkConfig(**net_kw)
    cfg = TrainConfig(**train_kw)
    dataset = _load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    print(f"{len(dataset)} tiles from {args.data}; folds={cfg.folds}")
    if cfg.folds == 1:
        net = build_network(net_config, seed=cfg.seed, dtype=np.float32)
        net, hist = train(net, dataset, cfg, log=print)
        histories = [hist]
        nets = [net]
        best_idx = 0
    else:
        _, histories, nets = cross_validate(dataset, cfg, net_config, log=print)
        best_idx = int(np.argmin([h.best_val_loss for h in histories]))
    for f, (net_f, hist) in enumerate(zip(nets, histories)):
        save_checkpoint(net_f, os.path.join(args.out, f"fold{f}.ckpt"))
        hist.to_csv(os.path.join(args.out, f"fold{f}_history.csv"))
    shutil.copyfile(os.path.join(args.out, f"fold{best_idx}.ckpt"), os.path.join(args.out, "best.ckpt"))
    print(f"best fold: {best_idx} (val loss {histories[best_idx].best_val_loss:.6f})")
    _write_run_record(args.out, "train", {**vars(args), "network": net_config.to_dict(),
                                          "training": cfg.to_dict()}, started)
    return 0


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------


def _pad_height(tile, factor):
    h = tile.shape[0]
    pad = (-h) % factor
    if pad == 0:
        return tile, h
    return np.pad(tile, ((0, pad), (0, 0)), mode="edge"), h


def infer_volume(net, vol, batch_size=2, strict=True):
    """Slice, predict, and reassemble every B-scan; returns (label maps, curves)."""
    factor = 2 ** (net.config.depth - 1)
    label_maps = []
    curve_sets = []
    with no_grad():
        for scan in vol.bscans:
            slices = data.slice_width(scan)
            tiles = [t.astype(net.dtype) / 255.0 for t in slices.tiles_of(scan)]
            padded = [_pad_height(t, factor) for t in tiles]
            score_tiles = []
            for i in range(0, len(padded), batch_size):
                chunk = padded[i : i + batch_size]
                x = TensorND(np.stack([c[0] for c in chunk])[:, None])
                probs = net.forward(x, "eval").values
                for (tile, orig_h), scores in zip(chunk, probs):
                    score_tiles.append(scores[:, :orig_h, :])
            scores = data.reassemble(score_tiles, slices)
            labels = data.scores_to_labels(scores)
            label_maps.append(labels)
            curve_sets.append(postproc.fit_all_interfaces(labels, vol.profile, strict=strict))
    return label_maps, curve_sets


def _write_overlay(path, scan, curves):
    from PIL import Image

    h, w = scan.shape
    rgb = np.repeat(scan[:, :, None], 3, axis=2)
    for name, color in OVERLAY_COLORS.items():
        curve = curves.get(name)
        if curve is None:
            continue
        ys = np.clip(np.rint(curve.y_of_x if hasattr(curve, "y_of_x") else curve), 0, h - 1).astype(int)
        for dy in (-1, 0, 1):
            rows = np.clip(ys + dy, 0, h - 1)
            rgb[rows, np.arange(w)] = color
    Image.fromarray(rgb, "RGB").save(path)


def cmd_infer(args):
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    tune_runtime()
    if not os.path.isfile(args.model):
        raise UsageError(f"model checkpoint not found: {args.model}")
    net = load_checkpoint(args.model)
    vol = data.load_volume(args.volume)
    out_dir = args.out
    os.makedirs(os.path.join(out_dir, "labels"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "curves"), exist_ok=True)
    if args.overlay:
        os.makedirs(os.path.join(out_dir, "overlays"), exist_ok=True)
    label_maps, curve_sets = infer_volume(net, vol)
    for i, (labels, curves) in enumerate(zip(label_maps, curve_sets)):
        data.save_labelmap(os.path.join(out_dir, "labels", f"{i:04d}.pgm"), labels)
        data.write_curves(os.path.join(out_dir, "curves", f"{i:04d}.csv"),
                          {k: c.y_of_x for k, c in curves.items()})
        if args.overlay:
            _write_overlay(os.path.join(out_dir, "overlays", f"{i:04d}.png"), vol.bscans[i], curves)
    print(f"inferred {len(label_maps)} B-scans -> {out_dir}")
    _write_run_record(out_dir, "infer", vars(args), started)
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _fitted_curves_for_scan(csv_path, width, profile):
    raw = data.read_curves(csv_path)
    fitted = {}
    for name, (xs, ys) in raw.items():
        pts = postproc.ColumnPoints(name, xs, ys)
        fitted[name] = postproc.fit_lowess(pts, width=width, profile=profile,
                                           clip_height=profile.height_px)
    return fitted


def _curve_csvs(volume_dir):
    cdir = os.path.join(volume_dir, "curves")
    if not os.path.isdir(cdir):
        return {}
    return {fn: os.path.join(cdir, fn) for fn in sorted(os.listdir(cdir)) if fn.endswith(".csv")}


def _volume_metrics(pred_dir, truth_dir, profile, group):
    """Per-volume MADLBP/HD records, averaged over the volume's B-scans."""
    pred_csvs = _curve_csvs(pred_dir)
    truth_csvs = _curve_csvs(truth_dir)
    shared = sorted(set(pred_csvs) & set(truth_csvs))
    if not shared:
        return None
    width = profile.width_px
    sums = {name: {"madlbp": 0.0, "hd": 0.0} for name in data.INTERFACES}
    for fn in shared:
        pred = _fitted_curves_for_scan(pred_csvs[fn], width, profile)
        truth = _fitted_curves_for_scan(truth_csvs[fn], width, profile)
        for name in data.INTERFACES:
            G = metrics.PointSet.from_curve(truth[name].y_of_x, profile, "truth")
            S = metrics.PointSet.from_curve(pred[name].y_of_x, profile, "pred")
            sums[name]["madlbp"] += metrics.madlbp(G, S, width)
            sums[name]["hd"] += metrics.hausdorff(G, S)
    vol_name = os.path.basename(os.path.abspath(truth_dir))
    return [
        {
            "group": group,
            "volume": vol_name,
            "interface": name,
            "madlbp": sums[name]["madlbp"] / len(shared),
            "hd": sums[name]["hd"] / len(shared),
        }
        for name in data.INTERFACES
    ]


def _matched_volumes(pred_root, truth_root):
    truth_dirs = {os.path.basename(os.path.abspath(d)): d for d in _volume_dirs(truth_root)}
    matched, skipped = [], []
    for name in sorted(truth_dirs):
        pred_dir = os.path.join(pred_root, name)
        if os.path.isdir(pred_dir):
            matched.append((name, pred_dir, truth_dirs[name]))
        else:
            skipped.append(name)
    return matched, skipped


def cmd_eval(args):
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    matched, skipped = _matched_volumes(args.pred, args.truth)
    for name in skipped:
        print(f"skipping {name}: not present in {args.pred}", file=sys.stderr)
    if not matched:
        raise UsageError("no volumes matched between prediction and truth trees")
    records = []
    for name, pred_dir, truth_dir in matched:
        vol_manifest = os.path.join(truth_dir, "manifest.json")
        with open(vol_manifest) as f:
            profile = data.DeviceProfile.from_dict(json.load(f)["profile"])
        recs = _volume_metrics(pred_dir, truth_dir, profile, group=f"{profile.name} vs grader1")
        if recs is None:
            print(f"skipping {name}: no shared curve files", file=sys.stderr)
            continue
        records.extend(recs)
        if args.grader2:
            g2_dir = os.path.join(args.grader2, name)
            if os.path.isdir(g2_dir):
                records.extend(_volume_metrics(pred_dir, g2_dir, profile, group=f"{profile.name} vs grader2") or [])
                records.extend(_volume_metrics(g2_dir, truth_dir, profile, group=f"{profile.name} inter-grader") or [])
    if not records:
        raise UsageError("nothing to evaluate; all volumes skipped")
    report = metrics.build_report(records)
    if args.compare:
        tree_a, tree_b = args.compare
        recs_a, recs_b = [], []
        for name, _, truth_dir in matched:
            with open(os.path.join(truth_dir, "manifest.json")) as f:
                profile = data.DeviceProfile.from_dict(json.load(f)["profile"])
            for tree, dest in ((tree_a, recs_a), (tree_b, recs_b)):
                r = _volume_metrics(os.path.join(tree, name), truth_dir, profile, group="compare")
                if r:
                    dest.extend(r)
        for iface in data.INTERFACES:
            for metric_name in ("madlbp", "hd"):
                a = [r[metric_name] for r in recs_a if r["interface"] == iface]
                b = [r[metric_name] for r in recs_b if r["interface"] == iface]
                if len(a) == len(b) and len(a) >= 2:
                    t, p = metrics.paired_t_test(a, b)
                    report.t_tests.append({"interface": iface, "metric": metric_name, "t": t, "p": p})
                    print(f"compare {iface} {metric_name}: t={t:.4f} p={p:.4f}")
    report.to_csv(args.out)
    print(report.to_text())
    _write_run_record(args.out, "eval", vars(args), started)
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------


def cmd_ablate(args):
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    tune_runtime()
    raw = _load_config_file(args.config)
    net_kw, train_kw = _split_config(raw)
    if args.seed is not None:
        train_kw["seed"] = args.seed
    cfg = TrainConfig(**train_kw)
    dataset = _load_dataset(args.data)
    vols = sorted({s.volume_id for s in dataset})
    if len(vols) < 2:
        raise UsageError("ablation needs at least 2 volumes (train + held-out)")
    n_hold = max(1, len(vols) // 4)
    held = set(vols[-n_hold:])
    train_set = [s for s in dataset if s.volume_id not in held]
    hold_set = [s for s in dataset if s.volume_id in held]
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for down_mode, up_mode in ABLATION_VARIANTS:
        variant = f"down={down_mode}+up={up_mode}"
        print(f"[{variant}] training")
        net_config = NetworkConfig(**{**net_kw, "down_mode": down_mode, "up_mode": up_mode})
        net = build_network(net_config, seed=cfg.seed, dtype=np.float32)
        net, hist = train(net, train_set, cfg)
        row = {"variant": variant, "val_loss": hist.best_val_loss}
        for iface in data.INTERFACES:
            row[f"{iface}_madlbp_px"] = 0.0
            row[f"{iface}_hd_um"] = 0.0
        stats = _holdout_metrics(net, hold_set, args.data)
        row.update(stats)
        rows.append(row)
        print(f"[{variant}] " + "  ".join(f"{k}={v:.4f}" for k, v in stats.items()))
    header = ["variant", "val_loss"] + [f"{i}_{m}" for i in data.INTERFACES for m in ("madlbp_px", "hd_um")]
    table_path = os.path.join(args.out, "ablation.csv")
    with open(table_path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(row.get(h, "")) if h == "variant" else f"{row.get(h, 0.0):.6f}" for h in header) + "\n")
    print(f"wrote {table_path}")
    _write_run_record(args.out, "ablate", vars(args), started)
    return 0


def _holdout_metrics(net, hold_set, data_root):
    """MADLBP/HD of fitted predictions vs fitted truth on held-out volumes.

    A variant whose model fails to segment an interface gets NaN for that
    cell rather than aborting the sweep.
    """
    vol_names = sorted({s.volume_id for s in hold_set})
    sums = {name: {"madlbp_px": 0.0, "hd_um": 0.0} for name in data.INTERFACES}
    count = 0
    failed = set()
    for vol_name in vol_names:
        vol = data.load_volume(os.path.join(data_root, vol_name))
        label_maps, curve_sets = infer_volume(net, vol, strict=False)
        for i, pred_curves in enumerate(curve_sets):
            for name in data.INTERFACES:
                if name not in pred_curves:
                    failed.add(name)
                    continue
                xs = np.arange(vol.profile.width_px, dtype=np.float64)
                pts = postproc.ColumnPoints(name, xs, vol.curves[i][name])
                truth = postproc.fit_lowess(pts, width=vol.profile.width_px,
                                            profile=vol.profile,
                                            clip_height=vol.profile.height_px)
                G = metrics.PointSet.from_curve(truth.y_of_x, vol.profile)
                S = metrics.PointSet.from_curve(pred_curves[name].y_of_x, vol.profile)
                sums[name]["madlbp_px"] += metrics.madlbp(G, S, vol.profile.width_px)
                sums[name]["hd_um"] += metrics.hausdorff(G, S)
            count += 1
    out = {}
    for name in data.INTERFACES:
        for m in ("madlbp_px", "hd_um"):
            out[f"{name}_{m}"] = float("nan") if name in failed or count == 0 else sums[name][m] / count
    return out


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def cmd_gradcheck(args):
    reports = gradcheck.run_suite(cases_per_op=args.cases, tol=args.tol)
    failed = False
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:22s} max_rel_err={r.max_rel_err:.3e}  cases={r.cases}  {status}")
        failed = failed or not r.passed
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="cornet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic phantom volumes")
    p.add_argument("--out", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--volumes", type=int, required=True)
    p.add_argument("--bscans", type=int, default=None, help="override B-scans per volume")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train with k-fold cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON file with network/training fields")
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run inference on one volume")
    p.add_argument("--model", required=True)
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overlay", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="MADLBP/Hausdorff report between curve trees")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grader2", default=None)
    p.add_argument("--compare", nargs=2, metavar=("TREE_A", "TREE_B"), default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train the 7 down/upsampling variants")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference checks for every op")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command == "synth" and args.volumes < 1:
        print("error: --volumes must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (UsageError, data.DataError, ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (TrainingError, postproc.FitError, metrics.MetricError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
