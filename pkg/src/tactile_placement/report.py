"""Rendered outputs: hand heat maps (SVG), sweep analysis files, and the
Markdown/CSV report.

SVG output is byte-deterministic for a fixed input map: fixed float
formatting, no timestamps, stable element order.
"""

import json
import os

import numpy as np

from .analysis import (
    RegionImportanceMap,
    aggregate_by_config,
    convergence_speed,
    moving_average,
    region_importance,
    summarize_run,
)
from .learner import TrainingCurve
from .regions import REGIONS, region_by_name

# viridis anchor colors
_CMAP = (
    (0.000, (68, 1, 84)),
    (0.125, (72, 40, 120)),
    (0.250, (62, 74, 137)),
    (0.375, (49, 104, 142)),
    (0.500, (38, 130, 142)),
    (0.625, (31, 158, 137)),
    (0.750, (53, 183, 121)),
    (0.875, (109, 205, 89)),
    (1.000, (253, 231, 37)),
)


def _color(v: float) -> str:
    v = min(max(float(v), 0.0), 1.0)
    for (x0, c0), (x1, c1) in zip(_CMAP, _CMAP[1:]):
        if v <= x1:
            t = 0.0 if x1 == x0 else (v - x0) / (x1 - x0)
            rgb = tuple(round(a + t * (b - a)) for a, b in zip(c0, c1))
            return "#%02x%02x%02x" % rgb
    return "#%02x%02x%02x" % _CMAP[-1][1]


# stylized hand layout: (x, y, w, h) per region, y down, fingers up,
# thumb on the radial (left) side
_FINGER_X = {"FF": 150, "MF": 250, "RF": 350, "LF": 450}
_LEVEL_Y = {"dis": (60, 56), "mid": (124, 48), "prox": (180, 82), "palm": (290, 78)}


def _region_rects():
    rects = {}
    for r in REGIONS:
        if r.finger == "TH":
            continue
        x = _FINGER_X[r.finger]
        y, h = _LEVEL_Y[r.level]
        rects[r.name] = (x - 36, y, 72, h)
    rects["THdis"] = (20, 168, 72, 52)
    rects["THprox"] = (28, 228, 72, 58)
    rects["THpalm"] = (44, 294, 76, 70)
    return rects


def emit_heatmap(imap: RegionImportanceMap, out_path, title="Region importance (0 = least, 1 = most)",
                 fixed=()) -> str:
    """Write the 19-patch hand heat map as SVG 1.1; returns the path.

    Every region must carry a value in `imap` or be listed in `fixed`
    (rendered gray, for sweep slots that never varied).
    """
    fixed_names = {r.name if hasattr(r, "name") else str(r) for r in fixed}
    have = {r.name for r in imap.normalized}
    missing = [r.name for r in REGIONS if r.name not in have and r.name not in fixed_names]
    if missing:
        raise ValueError(f"heat map is missing regions: {', '.join(missing)}")

    by_name = {r.name: v for r, v in imap.normalized.items()}
    rects = _region_rects()
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        '<svg version="1.1" xmlns="http://www.w3.org/2000/svg" width="560" height="540" '
        'viewBox="0 0 560 540">\n',
        '<rect x="0" y="0" width="560" height="540" fill="#ffffff"/>\n',
        f'<text x="280" y="28" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>\n',
        # palm silhouette
        '<rect x="104" y="282" width="392" height="150" rx="18" fill="none" '
        'stroke="#999999" stroke-width="1.5"/>\n',
    ]
    for r in REGIONS:
        x, y, w, h = rects[r.name]
        if r.name in fixed_names:
            fill, label = "#d9d9d9", "-"
            tcol = "#555555"
        else:
            v = by_name[r.name]
            fill, label = _color(v), f"{v:.3f}"
            tcol = "#ffffff" if v < 0.6 else "#1a1a1a"
        parts.append(
            f'<rect x="{x}" y="{y}" width="{w}" height="{h}" rx="9" fill="{fill}" '
            'stroke="#444444" stroke-width="0.8"/>\n'
        )
        parts.append(
            f'<text x="{x + w // 2}" y="{y + h // 2 - 3}" font-family="sans-serif" '
            f'font-size="11" text-anchor="middle" fill="{tcol}">{r.name}</text>\n'
        )
        parts.append(
            f'<text x="{x + w // 2}" y="{y + h // 2 + 11}" font-family="sans-serif" '
            f'font-size="11" text-anchor="middle" fill="{tcol}">{label}</text>\n'
        )
    # color bar
    n_seg = 40
    x0, x1, yb, hb = 130, 510, 480, 16
    for i in range(n_seg):
        v = i / (n_seg - 1)
        xs = x0 + (x1 - x0) * i / n_seg
        parts.append(
            f'<rect x="{xs:.1f}" y="{yb}" width="{(x1 - x0) / n_seg + 0.5:.1f}" '
            f'height="{hb}" fill="{_color(v)}"/>\n'
        )
    for v, lab in ((0.0, "0 (least)"), (0.5, "0.5"), (1.0, "1 (most)")):
        parts.append(
            f'<text x="{x0 + (x1 - x0) * v:.1f}" y="{yb + 30}" font-family="sans-serif" '
            f'font-size="11" text-anchor="middle">{lab}</text>\n'
        )
    parts.append("</svg>\n")
    data = "".join(parts)
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(data)
    return str(out_path)


# ---------------------------------------------------------------------------
# sweep analysis


def _read_manifest(sweep_dir):
    path = os.path.join(sweep_dir, "manifest.jsonl")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no manifest.jsonl in {sweep_dir}")
    latest = {}
    header = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("kind") == "sweep":
                header = rec
            else:
                latest[rec["run_id"]] = rec
    return header, latest


def analyze_sweep(sweep_dir, out_dir=None, baseline_curve_path=None) -> dict:
    """Fold a sweep directory into metrics/importance/convergence files.

    Writes metrics.csv, importance.csv (when computable), heatmap.svg and
    analysis.json under out_dir (default <sweep_dir>/analysis). Convergence
    anchors to --baseline when given (a curve.csv), else to the sweep's
    declared baseline label, else to the first configuration (flagged).
    """
    header, runs = _read_manifest(sweep_dir)
    if header is None:
        raise ValueError(f"{sweep_dir}: manifest has no sweep header record")
    out_dir = out_dir or os.path.join(sweep_dir, "analysis")
    os.makedirs(out_dir, exist_ok=True)

    summaries = []
    for rec in sorted(runs.values(), key=lambda r: r["run_id"]):
        if rec.get("status") != "done":
            continue
        curve_path = os.path.join(sweep_dir, rec["curve"])
        curve = TrainingCurve.from_csv(curve_path)
        summaries.append(
            summarize_run(rec["label"], rec["seed"], rec["mask"], curve.consecutive_successes)
        )
    if not summaries:
        raise ValueError(f"{sweep_dir}: no completed runs to analyze")
    configs = aggregate_by_config(summaries)

    # convergence anchor
    anchor_label = None
    if baseline_curve_path:
        base_curve = moving_average(
            TrainingCurve.from_csv(baseline_curve_path).consecutive_successes
        )
        anchor_label = f"file:{os.path.basename(baseline_curve_path)}"
    else:
        anchor_label = header.get("baseline_label")
        if anchor_label not in configs:
            anchor_label = sorted(configs, key=lambda lb: _label_order(header, lb))[0]
        base_curve = configs[anchor_label]["curve"]

    convergence = {}
    for label, agg in configs.items():
        convergence[label] = convergence_speed(agg["curve"], base_curve)

    # importance over the varied pool (or all 19) when every region appears
    varied = header.get("varied_pool")
    wanted = [region_by_name(n) for n in varied] if varied else list(REGIONS)
    pairs = [(c["mask"], c["score"]) for c in configs.values()]
    importance = None
    if len(configs) >= 2:
        try:
            importance = region_importance(pairs, wanted)
        except ValueError:
            importance = None

    # ---- files
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write("label,seed,mask,epochs,final_streak,score\n")
        for s in sorted(summaries, key=lambda s: (s.label, s.seed)):
            fh.write(
                f"{s.label},{s.seed},0x{s.mask:05x},{s.epochs},"
                f"{s.final_streak:.6g},{s.score:.6g}\n"
            )
    heatmap_path = None
    if importance is not None:
        with open(os.path.join(out_dir, "importance.csv"), "w", encoding="utf-8") as fh:
            fh.write("region,raw,normalized\n")
            for r, raw, nrm in importance.rows():
                fh.write(f"{r.name},{raw:.6g},{nrm:.6g}\n")
        fixed = [r for r in REGIONS if r not in importance.raw]
        heatmap_path = emit_heatmap(
            importance,
            os.path.join(out_dir, "heatmap.svg"),
            title=f"Region importance: {header.get('experiment', 'sweep')}",
            fixed=fixed,
        )

    analysis = {
        "experiment": header.get("experiment"),
        "description": header.get("description", ""),
        "sweep_dir": os.path.abspath(sweep_dir),
        "anchor": anchor_label,
        "anchor_is_external": bool(baseline_curve_path),
        "config_order": _config_order(header, configs),
        "configs": {
            label: {
                "mask": agg["mask"],
                "seeds": agg["seeds"],
                "score": agg["score"],
                "final_streak": agg["final_streak"],
                "curve": [round(float(v), 6) for v in agg["curve"]],
                "convergence": {
                    "speedup": convergence[label].speedup,
                    "fraction_of_training": convergence[label].fraction_of_training,
                    "reached": convergence[label].reached,
                },
            }
            for label, agg in configs.items()
        },
        "importance": None
        if importance is None
        else {
            "regions": [r.name for r, _, _ in importance.rows()],
            "raw": [raw for _, raw, _ in importance.rows()],
            "normalized": [nrm for _, _, nrm in importance.rows()],
            "range_ratio": importance.range_ratio,
            "degenerate": importance.degenerate,
        },
        "heatmap": os.path.basename(heatmap_path) if heatmap_path else None,
    }
    with open(os.path.join(out_dir, "analysis.json"), "w", encoding="utf-8") as fh:
        json.dump(analysis, fh, indent=2, sort_keys=True)
    return analysis


def _label_order(header, label):
    order = header.get("labels", [])
    return (order.index(label), label) if label in order else (len(order), label)


def _config_order(header, configs):
    return sorted(configs, key=lambda lb: _label_order(header, lb))


# ---------------------------------------------------------------------------
# report


def emit_report(analysis_dirs, out_dir) -> str:
    """Assemble Markdown + CSV tables + heat maps from analyze() outputs.

    Missing inputs degrade to 'unavailable' sections; the report is always
    produced. Returns the report path.
    """
    os.makedirs(out_dir, exist_ok=True)
    analyses = []
    for d in analysis_dirs:
        path = os.path.join(d, "analysis.json")
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                analyses.append((d, json.load(fh)))
    analyses.sort(key=lambda item: (item[1].get("experiment") or "", item[0]))

    lines = ["# Tactile placement report", ""]

    # --- baselines
    b1 = _find_config(analyses, "B1")
    b2 = _find_config(analyses, "B2")
    lines.append("## Baselines: tactile vs no-tactile")
    lines.append("")
    if b1 and b2:
        f1, f2 = b1["final_streak"], b2["final_streak"]
        improvement = (f2 - f1) / abs(f1) * 100.0 if f1 != 0 else float("inf")
        conv = convergence_speed(np.asarray(b2["curve"]), np.asarray(b1["curve"]))
        lines.append("| metric | B1 (no tactile) | B2 (fingertips) |")
        lines.append("| --- | --- | --- |")
        lines.append(f"| final smoothed success streak | {f1:.3f} | {f2:.3f} |")
        lines.append(f"| streak improvement over B1 | - | {improvement:+.1f}% |")
        speed = f"{conv.speedup:.2f}x" + ("" if conv.reached else " (lower bound)")
        lines.append(f"| convergence speed vs B1 final level | 1.00x | {speed} |")
        lines.append("")
        lines.append(
            "Improvement and convergence factors are reported, not asserted; "
            "desk-scale magnitudes are not comparable to full-scale runs."
        )
    else:
        lines.append("_unavailable (need completed B1 and B2 runs)_")
    lines.append("")

    # --- latitude table (Table-I shape)
    e1 = next((a for _, a in analyses if a.get("experiment") == "E1"), None)
    lines.append("## Sensor placement latitude")
    lines.append("")
    if e1:
        labels = e1["config_order"]
        table1 = os.path.join(out_dir, "table1.csv")
        with open(table1, "w", encoding="utf-8") as fh:
            fh.write("metric," + ",".join(labels) + "\n")
            fh.write(
                "consecutive_successes,"
                + ",".join(f"{e1['configs'][lb]['final_streak']:.3f}" for lb in labels)
                + "\n"
            )
            fh.write(
                "convergence_speed,"
                + ",".join(f"{e1['configs'][lb]['convergence']['speedup']:.2f}" for lb in labels)
                + "\n"
            )
        lines.append("| metric | " + " | ".join(labels) + " |")
        lines.append("| --- |" + " --- |" * len(labels))
        lines.append(
            "| consecutive successes | "
            + " | ".join(f"{e1['configs'][lb]['final_streak']:.2f}" for lb in labels)
            + " |"
        )
        lines.append(
            "| convergence speed | "
            + " | ".join(
                f"{e1['configs'][lb]['convergence']['speedup']:.2f}x"
                + ("" if e1["configs"][lb]["convergence"]["reached"] else "*")
                for lb in labels
            )
            + " |"
        )
        lines.append("")
        lines.append(f"Convergence anchored to `{e1['anchor']}`. Entries marked * never "
                     "reached the anchor level (lower bound). See table1.csv.")
    else:
        lines.append("_unavailable (no E1 analysis supplied)_")
    lines.append("")

    # --- importance table (Table-II shape) + heat maps
    with_imp = [(d, a) for d, a in analyses if a.get("importance")]
    lines.append("## Relative importance of the 19 regions")
    lines.append("")
    if with_imp:
        cols = [a.get("experiment") or os.path.basename(d) for d, a in with_imp]
        maps = []
        for d, a in with_imp:
            imp = a["importance"]
            maps.append({name: v for name, v in zip(imp["regions"], imp["normalized"])})
        table2 = os.path.join(out_dir, "table2.csv")
        with open(table2, "w", encoding="utf-8") as fh:
            fh.write("region," + ",".join(cols) + "\n")
            for r in REGIONS:
                cells = [
                    (f"{mp[r.name]:.3f}" if r.name in mp else "-") for mp in maps
                ]
                fh.write(f"{r.name}," + ",".join(cells) + "\n")
        lines.append("| region | " + " | ".join(cols) + " |")
        lines.append("| --- |" + " --- |" * len(cols))
        for r in REGIONS:
            cells = [(f"{mp[r.name]:.3f}" if r.name in mp else "-") for mp in maps]
            lines.append(f"| {r.name} | " + " | ".join(cells) + " |")
        lines.append("")
        for (d, a), col in zip(with_imp, cols):
            ratio = a["importance"]["range_ratio"]
            lines.append(
                f"- `{col}`: raw-score range is {ratio * 100:.1f}% of the minimum"
                + (" (degenerate: all configurations scored equally)"
                   if a["importance"]["degenerate"] else "")
            )
            if a.get("heatmap"):
                src = os.path.join(d, a["heatmap"])
                dst = os.path.join(out_dir, f"heatmap_{col}.svg")
                with open(src, "rb") as s, open(dst, "wb") as t:
                    t.write(s.read())
                lines.append(f"  ![heat map {col}](heatmap_{col}.svg)")
        lines.append("")
        lines.append("See table2.csv.")
    else:
        lines.append("_unavailable (no sweep with a computable importance map)_")
    lines.append("")

    # --- per-experiment config outcomes
    lines.append("## Per-configuration outcomes")
    lines.append("")
    if analyses:
        for d, a in analyses:
            exp = a.get("experiment") or os.path.basename(d)
            lines.append(f"### {exp}")
            if a.get("description"):
                lines.append(f"_{a['description']}_")
            lines.append("")
            lines.append("| configuration | score | final streak | convergence |")
            lines.append("| --- | --- | --- | --- |")
            for lb in a["config_order"]:
                c = a["configs"][lb]
                conv = c["convergence"]
                mark = "" if conv["reached"] else "*"
                lines.append(
                    f"| {lb} | {c['score']:.3f} | {c['final_streak']:.3f} | "
                    f"{conv['speedup']:.2f}x{mark} |"
                )
            lines.append("")
    else:
        lines.append("_unavailable (no analysis directories found)_")
        lines.append("")

    report_path = os.path.join(out_dir, "report.md")
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return report_path


def _find_config(analyses, label):
    for _, a in analyses:
        if label in a.get("configs", {}):
            return a["configs"][label]
    return None
