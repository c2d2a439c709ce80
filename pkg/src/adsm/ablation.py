"""Variant table mirroring the ablation rows: DSM, +ADSM, +Scene, +Motion, +Appearance, all.

Scene conditioning and motion weighting change the training loss, so they
need their own checkpoints. The autoregressive ladder and the PSNR
denominator only affect inference and reuse whichever checkpoint matches the
training toggles. One scoring pass per (checkpoint, autoregressive) pair
yields both the with- and without-PSNR raw scores.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .evaluation import LabeledScores, UndefinedAUC, macro_auc, micro_auc
from .scoring import ScoreConfig, assemble_series, score_video
from .training import NcstCheckpoint, TrainConfig, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Variant:
    name: str
    autoregressive: bool
    scene: bool
    motion: bool
    appearance: bool

    @property
    def checkpoint_key(self) -> tuple[bool, bool]:
        return (self.scene, self.motion)


VARIANTS = (
    Variant("DSM", False, False, False, False),
    Variant("+ADSM", True, False, False, False),
    Variant("+ADSM+Scene", True, True, False, False),
    Variant("+ADSM+Motion", True, False, True, False),
    Variant("+ADSM+Appearance", True, False, False, True),
    Variant("Full", True, True, True, True),
)


def variant_train_config(base: TrainConfig, scene: bool, motion: bool) -> TrainConfig:
    return replace(base, scene_condition=scene, motion_weights=motion)


def ablation_run(train_config: TrainConfig, score_config: ScoreConfig, test_videos,
                 checkpoints: dict | None = None, train_videos=None, train_missing: bool = True,
                 variants=VARIANTS) -> list[dict]:
    """Micro/macro AUC per variant on ``test_videos``.

    ``checkpoints`` maps ``(scene, motion)`` to a :class:`NcstCheckpoint`.
    Missing entries are trained when ``train_missing`` (and data is
    available), otherwise the affected variants are reported as absent.
    """
    checkpoints = dict(checkpoints or {})
    needed = {v.checkpoint_key for v in variants}
    for key in sorted(needed):
        if key in checkpoints or not train_missing:
            continue
        log.info("training variant scene=%s motion=%s", *key)
        checkpoints[key] = train(variant_train_config(train_config, *key), videos=train_videos)

    labels = {v.video_id: v.frame_labels for v in test_videos}
    cache: dict[tuple, list] = {}
    rows = []
    for var in variants:
        ckpt: NcstCheckpoint | None = checkpoints.get(var.checkpoint_key)
        row = {"variant": var.name, "autoregressive": var.autoregressive, "scene": var.scene,
               "motion": var.motion, "appearance": var.appearance}
        if ckpt is None:
            rows.append({**row, "status": "absent", "micro_auc": float("nan"), "macro_auc": float("nan"),
                         "excluded_videos": ""})
            continue
        key = (var.checkpoint_key, var.autoregressive)
        if key not in cache:
            model = ckpt.model()
            cfg = replace(score_config, autoregressive=var.autoregressive, appearance=True)
            cache[key] = [score_video(v, model, cfg) for v in test_videos]
        cfg = replace(score_config, autoregressive=var.autoregressive, appearance=var.appearance)
        window = ckpt.config.frames
        series = [assemble_series(s.video_id, s.starts, s.norms, s.psnrs, cfg, window, s.sigmas)
                  for s in cache[key]]
        data = LabeledScores.join({s.video_id: s.indicator for s in series}, labels)
        try:
            micro = micro_auc(data)
            macro, excluded = macro_auc(data)
            status = "ok"
        except UndefinedAUC as exc:
            micro, macro, excluded, status = float("nan"), float("nan"), [], f"undefined: {exc}"
        rows.append({**row, "status": status, "micro_auc": micro, "macro_auc": macro,
                     "excluded_videos": " ".join(excluded)})
    return rows


def write_table(rows: list[dict], path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "micro_auc", "macro_auc", "excluded_videos"])
        for r in rows:
            w.writerow([r["variant"], f"{r['micro_auc']:.9g}", f"{r['macro_auc']:.9g}", r["excluded_videos"]])


def format_table(rows: list[dict]) -> str:
    lines = [f"{'variant':<18} {'AR':>3} {'Scn':>3} {'Mot':>3} {'App':>3} {'micro':>7} {'macro':>7}"]
    for r in rows:
        flags = ["x" if r[k] else "" for k in ("autoregressive", "scene", "motion", "appearance")]
        lines.append(f"{r['variant']:<18} {flags[0]:>3} {flags[1]:>3} {flags[2]:>3} {flags[3]:>3} "
                     f"{r['micro_auc']:7.4f} {r['macro_auc']:7.4f}")
    return "\n".join(lines)


def check_direction(rows: list[dict], margin: float = 0.03, slack: float = 0.01) -> dict:
    """Full beats the DSM baseline by ``margin``; no single-toggle row falls below baseline - ``slack``."""
    by = {r["variant"]: r for r in rows}
    base = by["DSM"]["macro_auc"]
    full = by["Full"]["macro_auc"]
    singles = {k: by[k]["macro_auc"] for k in ("+ADSM", "+ADSM+Scene", "+ADSM+Motion", "+ADSM+Appearance")}
    return {
        "baseline": base,
        "full": full,
        "full_gain": full - base,
        "full_ok": bool(np.isfinite(full) and full - base >= margin),
        "singles": singles,
        "singles_ok": bool(all(np.isfinite(v) and v >= base - slack for v in singles.values())),
    }
