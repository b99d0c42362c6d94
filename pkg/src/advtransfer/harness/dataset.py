"""On-disk adversarial dataset: ``manifest.jsonl`` plus ``audio/<id>_{clean,adv}.wav``.

Each manifest line is one JSON object with keys ``id``, ``clean_path``,
``adv_path`` (relative to the dataset directory), ``transcript``, ``target``
(an AttackTarget record), ``proxies``, ``snr_db`` and ``config_fingerprint``.
Keys are sorted so identical runs give byte-identical manifests.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Sequence

from ..audio import SAMPLE_RATE, read_wav, write_wav
from ..targets import AttackTarget
from .experiments import AdversarialExample

MANIFEST = "manifest.jsonl"
REQUIRED = ("id", "clean_path", "adv_path", "transcript", "target", "proxies", "snr_db", "config_fingerprint")


class ManifestError(ValueError):
    def __init__(self, path: Path, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line


def _record(ex: AdversarialExample) -> dict:
    return {
        "id": ex.id,
        "clean_path": f"audio/{ex.id}_clean.wav",
        "adv_path": f"audio/{ex.id}_adv.wav",
        "transcript": ex.transcript,
        "target": ex.target.to_dict(),
        "proxies": list(ex.proxies),
        "snr_db": ex.achieved_snr if math.isfinite(ex.achieved_snr) else None,
        "config_fingerprint": ex.config_fingerprint,
    }


def manifest_line(ex: AdversarialExample) -> str:
    return json.dumps(_record(ex), sort_keys=True, allow_nan=False)


def export_dataset(examples: Sequence[AdversarialExample], directory: str | Path,
                   sample_rate: int = SAMPLE_RATE) -> Path:
    """Write the examples that succeeded; failed ones are skipped. Returns the manifest path."""
    root = Path(directory)
    (root / "audio").mkdir(parents=True, exist_ok=True)
    seen = set()
    lines = []
    for ex in examples:
        if not ex.ok:
            continue
        if ex.id in seen:
            raise ValueError(f"duplicate example id {ex.id!r}")
        seen.add(ex.id)
        rec = _record(ex)
        write_wav(root / rec["clean_path"], ex.clean, sample_rate)
        write_wav(root / rec["adv_path"], ex.adversarial, sample_rate)
        lines.append(manifest_line(ex))
    path = root / MANIFEST
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def _parse(path: Path, lineno: int, text: str) -> dict:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(path, lineno, f"invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise ManifestError(path, lineno, "record is not an object")
    missing = [k for k in REQUIRED if k not in rec]
    if missing:
        raise ManifestError(path, lineno, f"missing keys {missing}")
    return rec


def read_manifest(directory: str | Path) -> list[dict]:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {directory}")
    records = []
    for lineno, text in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if text.strip():
            records.append(_parse(path, lineno, text))
    return records


def import_dataset(directory: str | Path) -> list[AdversarialExample]:
    """Inverse of ``export_dataset``; waveforms come back PCM-quantized."""
    root = Path(directory)
    path = root / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {directory}")
    out = []
    for lineno, text in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not text.strip():
            continue
        rec = _parse(path, lineno, text)
        try:
            target = AttackTarget.from_dict(rec["target"])
            clean, _ = read_wav(root / rec["clean_path"])
            adv, _ = read_wav(root / rec["adv_path"])
        except (KeyError, ValueError, OSError) as exc:
            raise ManifestError(path, lineno, str(exc)) from exc
        if clean.shape != adv.shape:
            raise ManifestError(path, lineno, "clean and adversarial audio differ in length")
        snr = rec["snr_db"]
        out.append(AdversarialExample(
            id=rec["id"], clean=clean, delta=adv - clean, target=target, transcript=rec["transcript"],
            proxies=tuple(rec["proxies"]), achieved_snr=math.inf if snr is None else float(snr),
            config_fingerprint=rec["config_fingerprint"],
        ))
    return out
