"""Model artifact files: a small JSON envelope around each fit's own encoding."""

from __future__ import annotations

import json
from pathlib import Path

from .aft import AFTFit
from .cox import CoxFit
from .errors import ConvSurvError, SchemaMismatch
from .forest import ForestFit

FORMAT = "convsurv-model"
VERSION = 1
_KINDS = {"cox": CoxFit, "aft": AFTFit, "rsf": ForestFit}


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, shortest round-trip floats, trailing newline."""
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def model_to_json(fit, config: dict | None = None) -> dict:
    return {"format": FORMAT, "version": VERSION, "kind": fit.kind, "config": config, "model": fit.to_json()}


def model_from_json(obj: dict):
    if obj.get("format") != FORMAT:
        raise SchemaMismatch("not a model artifact")
    if obj.get("version") != VERSION:
        raise SchemaMismatch(f"unsupported artifact version {obj.get('version')!r}")
    try:
        cls = _KINDS[obj["kind"]]
    except KeyError:
        raise SchemaMismatch(f"unknown model kind {obj.get('kind')!r}") from None
    return cls.from_json(obj["model"])


def save_model(fit, path: str | Path, config: dict | None = None) -> None:
    Path(path).write_text(dumps(model_to_json(fit, config)), encoding="utf-8")


def load_model(path: str | Path):
    path = Path(path)
    if not path.is_file():
        raise ConvSurvError(f"model artifact not found: {path}", code="E_DATA_NOT_FOUND")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path}: not valid JSON ({exc.msg})") from None
    return model_from_json(obj)
