"""Batch pipeline driver.

Subcommands: spatialize | target-mask | features | train | enhance |
evaluate.  Every derived artifact carries the effective config hash; a
command refuses to touch a manifest written under a different hash unless
--force is given.  Exit code 0 on success, 2 on partial failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import enhance as enh
from . import features as feat
from . import hswobm, metrics, neural, spatial, synth
from .audio_io import BinauralSignal, Signal, read_wav, write_wav
from .config import ConfigError, config_hash, dump_config, load_config
from .transforms import StftConfig, TFGrid, istft, stft

log = logging.getLogger("binaural_masking")


def _stable_seed(*parts) -> int:
    blob = ":".join(str(p) for p in parts)
    return int(hashlib.sha256(blob.encode()).hexdigest()[:8], 16)


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stft_config(cfg) -> StftConfig:
    s = cfg["stft"]
    return StftConfig(
        window_ms=s["window_ms"], overlap=s["overlap"], window=s["window"]
    )


def _manifest_path(out_dir) -> str:
    return os.path.join(out_dir, "manifest.json")


def _load_manifest(out_dir, cfg, force=False) -> dict:
    path = _manifest_path(out_dir)
    with open(path) as f:
        manifest = json.load(f)
    h = config_hash(cfg)
    if manifest["config_hash"] != h and not force:
        raise ConfigError(
            f"manifest {path} was produced with config {manifest['config_hash']}, "
            f"current config is {h}; pass --force to proceed"
        )
    return manifest


def _save_manifest(out_dir, manifest) -> None:
    with open(_manifest_path(out_dir), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _get_hrir(cfg, azimuth: float):
    rate = cfg["rate"]
    if cfg["hrir"]["synthetic"] or cfg["hrir"]["dir"] is None:
        return spatial.synth_hrir(azimuth, rate)
    return spatial.load_hrir(
        cfg["hrir"]["dir"], azimuth, rate, cfg["hrir"]["grid_deg"]
    )


def _make_noise(kind: str, seed: int, duration_s: float, rate: int) -> Signal:
    if kind == "white":
        rng = np.random.default_rng(seed)
        return Signal(rng.standard_normal(int(round(duration_s * rate))), rate)
    raise ConfigError(f"unknown built-in noise kind {kind!r} (supply WAV noise dirs)")


def _is_train_utt(utt_id: str, fraction: float) -> bool:
    return _stable_seed("split", utt_id) % 1000 < fraction * 1000


def cmd_spatialize(cfg, args) -> int:
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    wavs = sorted(
        f for f in os.listdir(args.corpus) if f.lower().endswith(".wav")
    )
    if not wavs:
        raise ConfigError(f"no WAV files in corpus {args.corpus}")
    rate = cfg["rate"]
    scene_cfg = cfg["scene"]
    rows = []
    status = 0
    for name in wavs:
        utt = os.path.splitext(name)[0]
        mono = read_wav(os.path.join(args.corpus, name))
        if isinstance(mono, BinauralSignal):
            raise ConfigError(f"{name}: corpus utterances must be mono")
        if mono.rate != rate:
            raise ConfigError(f"{name}: rate {mono.rate} != pipeline rate {rate}")
        for azimuth in scene_cfg["azimuths"]:
            try:
                h_src = _get_hrir(cfg, azimuth)
                h_noise = _get_hrir(cfg, scene_cfg["noise_azimuth"])
            except FileNotFoundError as exc:
                log.warning("skipping azimuth %s: %s", azimuth, exc)
                status = 2
                continue
            clean_b = spatial.spatialize(mono, h_src)
            dur = len(clean_b) / rate + 0.5
            for kind in scene_cfg["noise_kinds"]:
                for snr in scene_cfg["snrs_db"]:
                    sid = f"{utt}__az{azimuth:+g}_snr{snr:+g}_{kind}"
                    noise = _make_noise(kind, _stable_seed(cfg["seed"], sid, "noise"), dur, rate)
                    noise_b = spatial.spatialize(noise, h_noise)
                    rng = np.random.default_rng(_stable_seed(cfg["seed"], sid, "crop"))
                    noisy, _ = spatial.mix_at_snr(
                        clean_b, noise_b, snr, rng=rng,
                        speech_level=cfg["mix"]["speech_level"],
                    )
                    clean_path = os.path.join(out_dir, f"{sid}__clean.wav")
                    noisy_path = os.path.join(out_dir, f"{sid}__noisy.wav")
                    write_wav(clean_b, clean_path, float32=True)
                    write_wav(noisy, noisy_path, float32=True)
                    rows.append(
                        {
                            "id": sid,
                            "utterance": utt,
                            "scene": {
                                "azimuth": azimuth,
                                "snr_db": snr,
                                "noise_kind": kind,
                                "noise_azimuth": scene_cfg["noise_azimuth"],
                            },
                            "paths": {
                                "clean": os.path.basename(clean_path),
                                "noisy": os.path.basename(noisy_path),
                            },
                            "hashes": {
                                "clean": _file_sha256(clean_path),
                                "noisy": _file_sha256(noisy_path),
                            },
                        }
                    )
    manifest = {"config_hash": config_hash(cfg), "rows": rows}
    _save_manifest(out_dir, manifest)
    dump_config(cfg, os.path.join(out_dir, "config.json"))
    log.info("spatialize: %d rows", len(rows))
    return status


def _p(out_dir, row, key) -> str:
    """Manifest paths are stored relative to the manifest's directory."""
    return os.path.join(out_dir, row["paths"][key])


def _fresh(out_dir, row, key) -> bool:
    """True if the row's artifact exists and matches its recorded hash."""
    if key not in row["paths"]:
        return False
    path = _p(out_dir, row, key)
    return os.path.exists(path) and row["hashes"].get(key) == _file_sha256(path)


def cmd_target_mask(cfg, args) -> int:
    manifest = _load_manifest(args.out, cfg, args.force)
    h = config_hash(cfg)
    sc = _stft_config(cfg)
    for row in manifest["rows"]:
        if (
            not args.force
            and _fresh(args.out, row, "mask_left")
            and _fresh(args.out, row, "mask_right")
        ):
            continue
        clean = read_wav(_p(args.out, row, "clean"))
        noisy = read_wav(_p(args.out, row, "noisy"))
        mask_l, mask_r = hswobm.compute_hswobm(
            clean,
            noisy,
            weights_kind=cfg["mask"]["weights"],
            config=sc,
            beam_width=cfg["mask"]["beam_width"],
            M=cfg["mask"]["mod_window"],
            lam=cfg["mask"]["clip_lambda"],
        )
        for side, mask in (("left", mask_l), ("right", mask_r)):
            path = os.path.join(args.out, f"{row['id']}__mask_{side}.npz")
            hswobm.save_mask(mask, path, h)
            row["paths"][f"mask_{side}"] = os.path.basename(path)
            row["hashes"][f"mask_{side}"] = _file_sha256(path)
    _save_manifest(args.out, manifest)
    return 0


def cmd_features(cfg, args) -> int:
    manifest = _load_manifest(args.out, cfg, args.force)
    h = config_hash(cfg)
    sc = _stft_config(cfg)
    for row in manifest["rows"]:
        if (
            not args.force
            and _fresh(args.out, row, "feat_left")
            and _fresh(args.out, row, "feat_right")
        ):
            continue
        noisy = read_wav(_p(args.out, row, "noisy"))
        for side, sig in (("left", noisy.left), ("right", noisy.right)):
            f = feat.extract_features(sig, sc)
            path = os.path.join(args.out, f"{row['id']}__feat_{side}.npz")
            feat.save_features(f, path, h)
            row["paths"][f"feat_{side}"] = os.path.basename(path)
            row["hashes"][f"feat_{side}"] = _file_sha256(path)
    _save_manifest(args.out, manifest)
    return 0


def _training_arrays(cfg, manifest, out_dir):
    """Stack features/targets over the manifest, split by utterance id."""
    xs, ts, val_flags = [], [], []
    frac = cfg["train"]["train_fraction"]
    for row in manifest["rows"]:
        is_val = not _is_train_utt(row["utterance"], frac)
        for side in ("left", "right"):
            x = feat.load_features(_p(out_dir, row, f"feat_{side}"))
            mask = hswobm.load_mask(_p(out_dir, row, f"mask_{side}"))
            n = min(len(x), mask.B.shape[1])
            xs.append(x[:n])
            ts.append(mask.B[:, :n].T.astype(np.float64))
            val_flags.append(np.full(n, is_val))
    X = np.concatenate(xs)
    T = np.concatenate(ts)
    val = np.concatenate(val_flags)
    return X, T, np.flatnonzero(val)


def cmd_train(cfg, args) -> int:
    manifest = _load_manifest(args.out, cfg, args.force)
    h = config_hash(cfg)
    X, T, val_idx = _training_arrays(cfg, manifest, args.out)
    tc = cfg["train"]
    mean = np.zeros(X.shape[1])
    std = np.ones(X.shape[1])
    if tc["standardize"]:
        tr_rows = np.setdiff1d(np.arange(len(X)), val_idx)
        if tr_rows.size == 0:
            tr_rows = np.arange(len(X))
        mean = X[tr_rows].mean(axis=0)
        std = X[tr_rows].std(axis=0) + 1e-8
        X = (X - mean) / std
    model = neural.init_model(cfg["seed"], tuple(tc["dims"]), tc["dropout"])
    train_cfg = neural.TrainConfig(
        lr=tc["lr"],
        momentum=tc["momentum"],
        batch_size=tc["batch_size"],
        epochs=tc["epochs"],
        val_split=tc["val_split"],
        patience=tc["patience"],
        seed=cfg["seed"],
        normalize=tc["normalize"],
    )
    if len(val_idx) == 0 or len(val_idx) == len(X):
        val_idx = None  # degenerate split; fall back to random
    model, history = neural.train(model, X, T, config=train_cfg, val_indices=val_idx)
    if tc["standardize"]:
        model = neural.fold_standardization(model, mean, std)
    neural.save_model(model, args.model, h)
    with open(args.model + ".history.json", "w") as f:
        json.dump(history, f, indent=2, sort_keys=True)
    log.info(
        "train: %d samples, best val loss %.6g", len(X), history["best_val_loss"]
    )
    return 0


def cmd_enhance(cfg, args) -> int:
    manifest = _load_manifest(args.out, cfg, args.force)
    h = config_hash(cfg)
    sc = _stft_config(cfg)
    ocfg = enh.OmlsaConfig(
        g_min_db=cfg["omlsa"]["g_min_db"],
        alpha_dd=cfg["omlsa"]["alpha_dd"],
        xi_min_db=cfg["omlsa"]["xi_min_db"],
        p_min=cfg["omlsa"]["p_min"],
        p_max=cfg["omlsa"]["p_max"],
        reference=args.reference_channel or cfg["omlsa"]["reference"],
    )
    model = None
    if args.mask_source == "model":
        model = neural.load_model(args.model)
    for row in manifest["rows"]:
        if (
            not args.force
            and _fresh(args.out, row, "enhanced")
            and _fresh(args.out, row, "gains")
        ):
            continue
        noisy = read_wav(_p(args.out, row, "noisy"))
        if args.mask_source == "oracle":
            mask_l = hswobm.load_mask(
                _p(args.out, row, "mask_left")
            ).B.astype(np.float64)
            mask_r = hswobm.load_mask(
                _p(args.out, row, "mask_right")
            ).B.astype(np.float64)
        else:
            mask_l = neural.forward(
                model, feat.load_features(_p(args.out, row, "feat_left"))
            ).T
            mask_r = neural.forward(
                model, feat.load_features(_p(args.out, row, "feat_right"))
            ).T
        result = enh.enhance_binaural(noisy, mask_l, mask_r, ocfg, sc)
        enh_path = os.path.join(args.out, f"{row['id']}__enhanced.wav")
        write_wav(result.signal, enh_path, float32=True)
        gains_path = os.path.join(args.out, f"{row['id']}__gains.npz")
        np.savez(
            gains_path, version="gain-v1", gain=result.gain, config_hash=h,
            mask_source=args.mask_source,
        )
        row["paths"]["enhanced"] = os.path.basename(enh_path)
        row["paths"]["gains"] = os.path.basename(gains_path)
        row["hashes"]["enhanced"] = _file_sha256(enh_path)
        row["hashes"]["gains"] = _file_sha256(gains_path)
    _save_manifest(args.out, manifest)
    return 0


def _evaluate_row(cfg, row, sc, out_dir) -> metrics.MetricReport:
    clean = read_wav(_p(out_dir, row, "clean"))
    noisy = read_wav(_p(out_dir, row, "noisy"))
    enhanced = read_wav(_p(out_dir, row, "enhanced"))
    if len(enhanced) != len(noisy) or len(clean) != len(noisy):
        raise ValueError("clean/noisy/enhanced length mismatch")
    with np.load(_p(out_dir, row, "gains"), allow_pickle=False) as f:
        gain = np.asarray(f["gain"])

    sr = cfg["metrics"]["silence_range_db"]
    st = {}
    for side in ("left", "right"):
        c, n, e = (getattr(x, side) for x in (clean, noisy, enhanced))
        st[f"stoi_noisy_{side}"] = metrics.stoi(c, n, sc, silence_range_db=sr)
        st[f"stoi_{side}"] = metrics.stoi(c, e, sc, silence_range_db=sr)
        st[f"wstoi_{side}"] = metrics.wstoi(c, e, config=sc, silence_range_db=sr)
        st[f"fw_noisy_{side}"] = metrics.fw_segsnr(c, n, sc)
        st[f"fw_{side}"] = metrics.fw_segsnr(c, e, sc)

    # Cue preservation in the gain-application domain.
    lg = stft(noisy.left, sc).cells
    rg = stft(noisy.right, sc).cells
    enh_grids = (gain * lg, gain * rg)
    energy_mask = metrics.speech_active_cells(
        clean, sc, cfg["metrics"]["ild_energy_range_db"]
    )
    per_freq, ild_scalar = metrics.rms_ild_error(
        (lg, rg), enh_grids, energy_mask=energy_mask, config=sc
    )
    phase_ok = metrics.phase_preserved((lg, rg), enh_grids, sc)
    _, ild_vs_clean = metrics.rms_ild_error(
        clean, enhanced, energy_mask=energy_mask, config=sc
    )

    return metrics.MetricReport(
        stoi_left=st["stoi_left"],
        stoi_right=st["stoi_right"],
        stoi_better_ear=max(st["stoi_left"], st["stoi_right"]),
        wstoi_left=st["wstoi_left"],
        wstoi_right=st["wstoi_right"],
        wstoi_better_ear=max(st["wstoi_left"], st["wstoi_right"]),
        fw_segsnr_left=st["fw_left"],
        fw_segsnr_right=st["fw_right"],
        rms_ild_error=ild_scalar,
        rms_ild_error_per_freq=[None if np.isnan(v) else v for v in per_freq],
        phase_preserved=phase_ok,
        extras={
            "stoi_noisy_better_ear": max(
                st["stoi_noisy_left"], st["stoi_noisy_right"]
            ),
            "stoi_improvement_better_ear": max(st["stoi_left"], st["stoi_right"])
            - max(st["stoi_noisy_left"], st["stoi_noisy_right"]),
            "fw_segsnr_improvement_left": st["fw_left"] - st["fw_noisy_left"],
            "fw_segsnr_improvement_right": st["fw_right"] - st["fw_noisy_right"],
            "rms_ild_error_vs_clean_signal_domain": ild_vs_clean,
        },
    )


def _summarize(rows_out):
    groups = {}
    for entry in rows_out:
        if entry.get("failed"):
            continue
        s = entry["scene"]
        key = (s["noise_kind"], s["snr_db"], s["azimuth"])
        groups.setdefault(key, []).append(entry["report"])
    summary = []
    fields = [
        "stoi_improvement_better_ear",
        "fw_segsnr_improvement_left",
        "fw_segsnr_improvement_right",
        "rms_ild_error",
    ]
    for key in sorted(groups):
        reports = groups[key]
        cell = {"noise_kind": key[0], "snr_db": key[1], "azimuth": key[2],
                "count": len(reports)}
        for f in fields:
            vals = np.array([r[f] for r in reports])
            cell[f + "_mean"] = float(vals.mean())
            cell[f + "_sd"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        summary.append(cell)
    return summary


def _write_plots(summary, out_dir, salt):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = salt

    def save(fig, path):
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)

    by_noise = {}
    for cell in summary:
        by_noise.setdefault(cell["noise_kind"], []).append(cell)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for kind, cells in sorted(by_noise.items()):
        snr_cells = sorted(
            {(c["snr_db"], c["fw_segsnr_improvement_left_mean"],
              c["fw_segsnr_improvement_right_mean"]) for c in cells}
        )
        snrs = [c[0] for c in snr_cells]
        imp = [(c[1] + c[2]) / 2 for c in snr_cells]
        ax.plot(snrs, imp, marker="o", label=kind)
    ax.set_xlabel("input SNR (dB)")
    ax.set_ylabel("fw-segSNR improvement (dB)")
    ax.legend()
    fig.tight_layout()
    save(fig, os.path.join(out_dir, "improvement_vs_snr.svg"))

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for kind, cells in sorted(by_noise.items()):
        az_cells = sorted({(c["azimuth"], c["rms_ild_error_mean"]) for c in cells})
        ax.plot(
            [c[0] for c in az_cells], [c[1] for c in az_cells], marker="o", label=kind
        )
    ax.set_xlabel("source azimuth (deg)")
    ax.set_ylabel("RMS ILD error (dB)")
    ax.legend()
    fig.tight_layout()
    save(fig, os.path.join(out_dir, "ild_error_vs_azimuth.svg"))


def cmd_evaluate(cfg, args) -> int:
    manifest = _load_manifest(args.out, cfg, args.force)
    sc = _stft_config(cfg)
    rows_out = []
    status = 0
    for row in manifest["rows"]:
        entry = {"id": row["id"], "scene": row["scene"]}
        try:
            report = _evaluate_row(cfg, row, sc, args.out)
            entry["report"] = report.to_dict()
        except Exception as exc:
            log.warning("row %s failed: %s", row["id"], exc)
            entry["failed"] = True
            entry["error"] = str(exc)
            status = 2
        rows_out.append(entry)

    reports_path = os.path.join(args.out, "reports.jsonl")
    with open(reports_path, "w") as f:
        for entry in rows_out:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    summary = _summarize(rows_out)
    with open(os.path.join(args.out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    if args.plots:
        _write_plots(summary, args.out, config_hash(cfg))
    log.info("evaluate: %d rows, %d failed",
             len(rows_out), sum(1 for e in rows_out if e.get("failed")))
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="binaural-masking", description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", required=True, help="working/output directory")
        sp.add_argument("--force", action="store_true",
                        help="recompute even when hashes are stale or fresh")

    sp = sub.add_parser("spatialize", help="build binaural clean/noisy scene pairs")
    common(sp)
    sp.add_argument("--corpus", required=True, help="directory of mono WAVs")
    sp.add_argument("--hrir-dir", help="measured HRIR directory (az{+/-}N.wav)")
    sp.add_argument("--synthetic-hrir", action="store_true",
                    help="use the spherical-head synthetic HRIR")

    for name, help_ in (
        ("target-mask", "compute per-ear binary target masks"),
        ("features", "extract 90-dim per-frame features"),
    ):
        sp = sub.add_parser(name, help=help_)
        common(sp)

    sp = sub.add_parser("train", help="train the mask estimator")
    common(sp)
    sp.add_argument("--model", required=True, help="output model file (.npz)")

    sp = sub.add_parser("enhance", help="apply masks via OM-LSA")
    common(sp)
    sp.add_argument("--mask-source", choices=["model", "oracle"], default="model")
    sp.add_argument("--model", help="trained model file (mask-source=model)")
    sp.add_argument("--reference-channel",
                    choices=["better_ear", "average", "left"])

    sp = sub.add_parser("evaluate", help="metric reports, summary and plots")
    common(sp)
    sp.add_argument("--plots", action="store_true", help="emit SVG plots")

    return p


COMMANDS = {
    "spatialize": cmd_spatialize,
    "target-mask": cmd_target_mask,
    "features": cmd_features,
    "train": cmd_train,
    "enhance": cmd_enhance,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "hrir_dir", None):
        overrides["hrir"] = {"dir": args.hrir_dir, "synthetic": False}
    elif getattr(args, "synthetic_hrir", False):
        overrides["hrir"] = {"synthetic": True}
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
