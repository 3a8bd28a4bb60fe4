"""Visual-reasoning dataset curation: oracle requests, filtering and persistence."""

from __future__ import annotations

import enum
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import __version__
from .backends import call_with_retry
from .control_maps import ControlType, load_image
from .errors import BackendError, DataError, DatasetFormatError
from .reasoning_format import parse_response
from .utils import canonical_json, derive_seed

logger = logging.getLogger(__name__)

TEMPLATE_VERSION = "question-v1"
EMPTY_PROMPT_MARKER = "[EMPTY CAPTION]"
DEFAULT_BLOCKLIST = (
    "ground truth",
    "reference image",
    "the provided image",
    "target image",
    "the original image",
)
DEFAULT_TARGET_PER_TYPE = 6000

_TYPE_NAMES = {
    ControlType.SEG: "segmentation mask",
    ControlType.CANNY: "canny edge map",
    ControlType.HED: "HED edge map",
    ControlType.LINEART: "lineart drawing",
    ControlType.DEPTH: "depth map",
}

SYSTEM_PROMPT = (
    "You write image captions for a layout-conditioned image generator. "
    "The first attached image is the control image; the second, when present, "
    "shows what the final picture should look like. Use the second image only "
    "to resolve details the control image cannot show, such as colours and "
    "background, and never mention it in your reasoning or your caption."
)


class RejectReason(str, enum.Enum):
    BAD_FORMAT = "BAD_FORMAT"
    GT_REFERENCE = "GT_REFERENCE"
    EMPTY_ANSWER = "EMPTY_ANSWER"


@dataclass(frozen=True)
class CurationRecord:
    id: str
    control_type: ControlType
    control_image_path: str
    gt_image_path: str | None
    original_prompt: str
    question_text: str
    response_text: str
    think_text: str
    answer_text: str
    well_formed: bool
    rejected_reason: RejectReason | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["control_type"] = self.control_type.value
        d["rejected_reason"] = self.rejected_reason.value if self.rejected_reason else None
        return d


RECORD_FIELDS = tuple(f.name for f in fields(CurationRecord))
_STR_FIELDS = {"id", "control_image_path", "original_prompt", "question_text", "response_text", "think_text", "answer_text"}


@dataclass(frozen=True)
class CurationRequest:
    id: str
    control_type: ControlType
    control_image_path: str
    gt_image_path: str | None
    original_prompt: str


@dataclass
class Dataset:
    records: list[CurationRecord]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate record ids: {dupes}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def manifest(self) -> dict:
        counts = {t.value: 0 for t in ControlType}
        for r in self.records:
            counts[r.control_type.value] += 1
        return {"counts": counts, "total": len(self.records), "metadata": dict(self.metadata)}


def question_text(control_type: ControlType, original_prompt: str) -> str:
    control_type = ControlType(control_type)
    prompt = original_prompt.strip()
    lines = [
        f"You are given a {_TYPE_NAMES[control_type]} that fixes the layout of a target image, "
        "together with the image's original caption.",
        f'Original caption: "{prompt}"' if prompt else f"Original caption: {EMPTY_PROMPT_MARKER}",
    ]
    if not prompt:
        lines.append("The original caption is empty, so rely on the control image alone.")
    lines += [
        "Analyze the layout structures in the control image. Infer the objects, attributes and "
        "spatial relationships the target image should contain, including ones the caption does "
        "not mention, and write an enriched caption.",
        "Put your reasoning inside <think></think> tags, then the enriched caption inside "
        "<answer></answer> tags.",
    ]
    return "\n".join(lines)


def build_question(control_type: ControlType, original_prompt: str, control_image_path: str | Path) -> str:
    """Instantiate the question template after checking the control image decodes."""
    load_image(control_image_path)
    return question_text(control_type, original_prompt)


def _record_from_response(
    record_id: str,
    control_type: ControlType,
    control_image_path: str,
    gt_image_path: str | None,
    original_prompt: str,
    question: str,
    response: str,
) -> CurationRecord:
    parsed = parse_response(response)
    return CurationRecord(
        id=record_id,
        control_type=ControlType(control_type),
        control_image_path=str(control_image_path),
        gt_image_path=None if gt_image_path is None else str(gt_image_path),
        original_prompt=original_prompt,
        question_text=question,
        response_text=response,
        think_text=parsed.think_text,
        answer_text=parsed.answer_text,
        well_formed=parsed.well_formed,
    )


def curate_record(
    question: str,
    control_image_path: str | Path,
    gt_image_path: str | Path | None,
    oracle,
    *,
    record_id: str,
    control_type: ControlType,
    original_prompt: str,
    seed: int = 0,
    retries: int = 3,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> CurationRecord:
    """Ask the oracle for one reasoning response and parse it into a record.

    Both the control image and (when given) the ground-truth image are
    attached. Transport failures that outlive the retry budget propagate as
    :class:`~reasonctl.errors.BackendError`.
    """
    attachments = [load_image(control_image_path)]
    if gt_image_path is not None:
        attachments.append(load_image(gt_image_path))
    response = call_with_retry(
        lambda: oracle.complete(SYSTEM_PROMPT, question, attachments, seed),
        retries=retries,
        backoff=backoff,
        sleep=sleep,
    )
    return _record_from_response(
        record_id, control_type, str(control_image_path),
        None if gt_image_path is None else str(gt_image_path),
        original_prompt, question, response,
    )  # fmt: skip


def curate(
    requests: Sequence[CurationRequest],
    oracle,
    *,
    seed: int = 0,
    concurrency: int = 8,
    retries: int = 3,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[list[CurationRecord], list[dict]]:
    """Curate a batch of requests; returns ``(records, failures)`` in input order.

    Failed requests never enter ``records``; each becomes a failure row with
    ``error_kind`` and ``error_message``. Oracles that replay a single ordered
    script run with one worker so the output stays reproducible.
    """
    if not getattr(oracle, "concurrent_safe", True):
        concurrency = 1

    def work(req: CurationRequest):
        try:
            question = build_question(req.control_type, req.original_prompt, req.control_image_path)
            rec = curate_record(
                question, req.control_image_path, req.gt_image_path, oracle,
                record_id=req.id, control_type=req.control_type,
                original_prompt=req.original_prompt,
                seed=request_seed(seed, req.id), retries=retries, backoff=backoff, sleep=sleep,
            )  # fmt: skip
            return rec, None
        except (BackendError, DataError) as exc:
            logger.warning("curation of %s failed: %s", req.id, exc)
            return None, exc

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        results = list(pool.map(work, requests))

    records, failures = [], []
    for req, (rec, exc) in zip(requests, results):
        if rec is not None:
            records.append(rec)
            continue
        row = _record_from_response(
            req.id, req.control_type, req.control_image_path, req.gt_image_path,
            req.original_prompt, "", "",
        ).to_dict()  # fmt: skip
        row["error_kind"] = getattr(getattr(exc, "kind", None), "value", type(exc).__name__)
        row["error_message"] = str(exc)
        failures.append(row)
    return records, failures


def request_seed(root: int, record_id: str) -> int:
    return derive_seed(root, "curate", record_id)


def rejection_reason(record: CurationRecord, blocklist: Iterable[str] = DEFAULT_BLOCKLIST) -> RejectReason | None:
    if not record.well_formed:
        return RejectReason.BAD_FORMAT
    if not record.answer_text.strip():
        return RejectReason.EMPTY_ANSWER
    haystack = (record.think_text + "\n" + record.answer_text).lower()
    if any(phrase.lower() in haystack for phrase in blocklist):
        return RejectReason.GT_REFERENCE
    return None


def filter_dataset(
    records: Iterable[CurationRecord],
    blocklist: Iterable[str] = DEFAULT_BLOCKLIST,
    metadata: dict | None = None,
) -> tuple[Dataset, list[CurationRecord]]:
    """Partition records into a kept dataset and rejected records with reasons."""
    blocklist = tuple(blocklist)
    kept, rejected = [], []
    for rec in records:
        reason = rejection_reason(rec, blocklist)
        if reason is None:
            kept.append(replace(rec, rejected_reason=None))
        else:
            rejected.append(replace(rec, rejected_reason=reason))
    return Dataset(kept, dict(metadata or {})), rejected


# --------------------------------------------------------------------------
# JSON-Lines persistence
# --------------------------------------------------------------------------


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    """First line holds the manifest, then one record per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(canonical_json({"manifest": dataset.manifest}) + "\n")
        for rec in dataset.records:
            fh.write(canonical_json(rec.to_dict()) + "\n")


def _record_from_dict(d: dict, line: int) -> CurationRecord:
    if not isinstance(d, dict):
        raise DatasetFormatError("record must be a JSON object", line)
    unknown = sorted(set(d) - set(RECORD_FIELDS))
    if unknown:
        raise DatasetFormatError(f"unknown field(s) {unknown}", line)
    missing = sorted(set(RECORD_FIELDS) - set(d))
    if missing:
        raise DatasetFormatError(f"missing field(s) {missing}", line)
    for name in _STR_FIELDS:
        if not isinstance(d[name], str):
            raise DatasetFormatError(f"field {name!r} must be a string", line)
    if d["gt_image_path"] is not None and not isinstance(d["gt_image_path"], str):
        raise DatasetFormatError("field 'gt_image_path' must be a string or null", line)
    if not isinstance(d["well_formed"], bool):
        raise DatasetFormatError("field 'well_formed' must be a boolean", line)
    try:
        ctype = ControlType(d["control_type"])
        reason = None if d["rejected_reason"] is None else RejectReason(d["rejected_reason"])
    except ValueError as exc:
        raise DatasetFormatError(str(exc), line) from exc
    return CurationRecord(**{**d, "control_type": ctype, "rejected_reason": reason})


def _resolve_paths(rec: CurationRecord, base: Path) -> CurationRecord:
    # Relative image paths are relative to the dataset file.
    def fix(p):
        return p if p is None or Path(p).is_absolute() else str(base / p)

    return replace(rec, control_image_path=fix(rec.control_image_path), gt_image_path=fix(rec.gt_image_path))


def read_dataset(path: str | Path) -> Dataset:
    """Strict reader; relative image paths resolve against the file's directory."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file {path} does not exist")
    manifest = None
    records: list[CurationRecord] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"invalid JSON: {exc.msg}", lineno) from exc
            if manifest is None:
                if not isinstance(obj, dict) or set(obj) != {"manifest"}:
                    raise DatasetFormatError("first line must be the manifest object", lineno)
                manifest = obj["manifest"]
                continue
            records.append(_resolve_paths(_record_from_dict(obj, lineno), path.parent))
    if manifest is None:
        raise DatasetFormatError("file is empty; expected a manifest line", 1)
    try:
        ds = Dataset(records, dict(manifest.get("metadata", {})))
    except DataError as exc:
        raise DatasetFormatError(str(exc)) from exc
    if ds.manifest["counts"] != manifest.get("counts") or ds.manifest["total"] != manifest.get("total"):
        raise DatasetFormatError("manifest counts do not match the records", 1)
    return ds


def write_failures(rows: Sequence[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(canonical_json(row) + "\n")


def dataset_metadata(**extra) -> dict:
    meta = {"template_version": TEMPLATE_VERSION, "tool_version": __version__}
    meta.update(extra)
    return meta
