"""Overlay records (schema ``raid-overlay/1``) for the console and analysis.

A prediction becomes timed polylines (red predicted, blue recommended) plus
engagement-zone polygons; estimator and deception alerts become labeled
markers.  The same records feed the live wire protocol and offline files.
"""
from __future__ import annotations

OVERLAY_SCHEMA = "raid-overlay/1"

ALERT_LABELS = (
    "fearful", "enraged", "zealous",
    "defend-in-place", "assault", "harass", "withdraw",
    "foreign-fighter", "feint",
)


def _normalize_label(label: str) -> str:
    return label.replace("_", "-")


def overlay_payload(pred, graph, sides: dict[str, str]) -> dict:
    """Serialize one PredictionSet against its zone graph."""
    red_lines = []
    blue_lines = []
    for team, pts in sorted(pred.tracks.items()):
        line = {"team": team, "points": [[t, x, y] for t, x, y in pts]}
        if sides.get(team) == "red" and team in pred.red_plan.steps:
            red_lines.append(line)
        elif sides.get(team) == "blue":
            blue_lines.append(line)
    zones = [
        {
            "zone": ez.zone,
            "polygon": [[x, y] for x, y in graph.zone_polygon(ez.zone)],
            "window": [ez.t_start_s, ez.t_end_s],
            "likelihood": ez.likelihood,
        }
        for ez in pred.engagement_zones
    ]
    return {
        "version": OVERLAY_SCHEMA,
        "created_tick": pred.created_tick,
        "horizon_min": pred.horizon_min,
        "variant": pred.variant,
        "truncated": pred.truncated,
        "red_predicted": red_lines,
        "blue_recommended": blue_lines,
        "engagement_zones": zones,
    }


def alert_record(payload: dict, grid=None, graph=None) -> dict:
    """Normalize an estimator or deception alert into an overlay record."""
    label = _normalize_label(payload.get("label", ""))
    rec = {
        "version": OVERLAY_SCHEMA,
        "kind": "alert",
        "label": label,
        "tick": payload.get("first_tick", payload.get("tick", 0)),
        "confidence": payload.get("confidence", 0.0),
    }
    if "team" in payload:
        rec["team"] = payload["team"]
    if "teams" in payload:
        rec["teams"] = payload["teams"]
    if payload.get("label") == "feint" and grid is not None and "zone" in payload:
        center = grid.cell_center(payload["zone"])
        s = grid.cell_size_m
        x0, y0 = center.x_m - s / 2, center.y_m - s / 2
        rec["zone_polygon"] = [
            [x0, y0], [x0 + s, y0], [x0 + s, y0 + s], [x0, y0 + s]]
        rec["x"], rec["y"] = center.x_m, center.y_m
    return rec
