"""Dataset records, manifest parsing, validation, and participant splits.

A study is a CSV manifest with one row per photographed eating occasion:

    participant_id,image_id,image_path,mask_path,env_label

``env_label`` may be empty for unlabeled data.  Relative paths are resolved
against the manifest's directory, so a dataset directory can be moved as a
unit.
"""

import csv
import io
from dataclasses import dataclass
from pathlib import Path

from . import imgio

MANIFEST_FIELDS = ("participant_id", "image_id", "image_path", "mask_path", "env_label")
MANIFEST_HEADER = ",".join(MANIFEST_FIELDS)

MIN_IMAGE_SIDE = 32


class ManifestError(ValueError):
    """Raised for a missing, malformed, or inconsistent manifest."""


@dataclass(frozen=True)
class EatingOccasionRecord:
    """One photographed eating occasion."""

    participant_id: str
    image_id: str
    image_path: Path
    mask_path: Path
    env_label: str | None = None


@dataclass(frozen=True)
class Violation:
    """One problem found by :func:`validate_dataset`."""

    participant_id: str
    image_id: str
    kind: str
    message: str


class Dataset:
    """An ordered collection of records grouped by participant.

    Record order and participant order (by first appearance) are preserved
    from the manifest, so downstream artifacts are reproducible.
    """

    def __init__(self, records):
        records = tuple(records)
        if not records:
            raise ManifestError("dataset has no records")
        seen = set()
        participants: dict[str, list[int]] = {}
        for i, rec in enumerate(records):
            key = (rec.participant_id, rec.image_id)
            if key in seen:
                raise ManifestError(
                    f"duplicate record for participant {rec.participant_id!r}"
                    f" image {rec.image_id!r}"
                )
            seen.add(key)
            participants.setdefault(rec.participant_id, []).append(i)
        self.records = records
        self._participants = participants

    def __len__(self) -> int:
        return len(self.records)

    def participant_ids(self) -> list[str]:
        return list(self._participants)

    def participant_records(self, participant_id: str) -> list[EatingOccasionRecord]:
        try:
            idxs = self._participants[participant_id]
        except KeyError:
            raise KeyError(f"unknown participant {participant_id!r}") from None
        return [self.records[i] for i in idxs]

    def env_labels(self, participant_id: str) -> list[str]:
        """Ground-truth labels for one participant; raises if any is missing."""
        labels = []
        for rec in self.participant_records(participant_id):
            if not rec.env_label:
                raise ManifestError(
                    f"record {rec.image_id!r} of participant"
                    f" {participant_id!r} has no env_label"
                )
            labels.append(rec.env_label)
        return labels


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint validation/test partition of a dataset by participant."""

    validation: Dataset
    test: Dataset


def _parse_rows(rows, source: str) -> Dataset:
    header = next(rows, None)
    if header is None:
        raise ManifestError(f"{source}: empty manifest")
    if [h.strip() for h in header] != list(MANIFEST_FIELDS):
        raise ManifestError(
            f"{source}: bad header {','.join(header)!r};"
            f" expected {MANIFEST_HEADER!r}"
        )
    records = []
    for lineno, row in enumerate(rows, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(MANIFEST_FIELDS):
            raise ManifestError(
                f"{source}: line {lineno}: expected {len(MANIFEST_FIELDS)}"
                f" fields, got {len(row)}"
            )
        pid, image_id, image_path, mask_path, env = (c.strip() for c in row)
        if not pid or not image_id or not image_path or not mask_path:
            raise ManifestError(f"{source}: line {lineno}: empty required field")
        records.append(
            EatingOccasionRecord(
                participant_id=pid,
                image_id=image_id,
                image_path=Path(image_path),
                mask_path=Path(mask_path),
                env_label=env or None,
            )
        )
    try:
        return Dataset(records)
    except ManifestError as exc:
        raise ManifestError(f"{source}: {exc}") from None


def load_manifest(path) -> Dataset:
    """Parse a manifest CSV into a dataset.

    Relative image/mask paths are resolved against the manifest's parent
    directory.  Raises :class:`ManifestError` on a bad header, a malformed
    row (with its line number), duplicates, or an empty file.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    ds = _parse_rows(iter(csv.reader(io.StringIO(text))), str(path))
    base = path.parent
    resolved = [
        EatingOccasionRecord(
            participant_id=r.participant_id,
            image_id=r.image_id,
            image_path=r.image_path if r.image_path.is_absolute() else base / r.image_path,
            mask_path=r.mask_path if r.mask_path.is_absolute() else base / r.mask_path,
            env_label=r.env_label,
        )
        for r in ds.records
    ]
    return Dataset(resolved)


def dump_manifest(dataset: Dataset, path=None, base=None) -> str:
    """Serialize a dataset back to manifest CSV text.

    Paths are written relative to ``base`` when given (or to ``path``'s
    directory), falling back to the absolute form.  Writes ``path`` when
    provided and always returns the CSV text.
    """
    if base is None and path is not None:
        base = Path(path).parent
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_FIELDS)
    for rec in dataset.records:
        img, msk = rec.image_path, rec.mask_path
        if base is not None:
            try:
                img = img.relative_to(base)
            except ValueError:
                pass
            try:
                msk = msk.relative_to(base)
            except ValueError:
                pass
        writer.writerow(
            [
                rec.participant_id,
                rec.image_id,
                img.as_posix(),
                msk.as_posix(),
                rec.env_label or "",
            ]
        )
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def validate_dataset(dataset: Dataset) -> list[Violation]:
    """Check every record's files and basic study shape.

    Returns an empty list iff every image and mask open successfully with
    matching dimensions, every image is at least 32 pixels on each side, and
    every participant has at least two records.  Violations are reported,
    not raised; exclusion policy is left to the caller.
    """
    out = []
    for rec in dataset.records:
        try:
            iw, ih = imgio.image_size(rec.image_path)
        except Exception as exc:
            out.append(
                Violation(rec.participant_id, rec.image_id, "image-unreadable", str(exc))
            )
            continue
        if iw < MIN_IMAGE_SIDE or ih < MIN_IMAGE_SIDE:
            out.append(
                Violation(
                    rec.participant_id,
                    rec.image_id,
                    "image-too-small",
                    f"{iw}x{ih} is below {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}",
                )
            )
        try:
            mw, mh = imgio.image_size(rec.mask_path)
        except Exception as exc:
            out.append(
                Violation(rec.participant_id, rec.image_id, "mask-unreadable", str(exc))
            )
            continue
        if (mw, mh) != (iw, ih):
            out.append(
                Violation(
                    rec.participant_id,
                    rec.image_id,
                    "size-mismatch",
                    f"image {iw}x{ih} vs mask {mw}x{mh}",
                )
            )
    for pid in dataset.participant_ids():
        n = len(dataset.participant_records(pid))
        if n < 2:
            out.append(
                Violation(
                    pid,
                    "",
                    "participant-too-small",
                    f"participant has {n} record(s); clustering needs at least 2",
                )
            )
    return out


def split_by_participants(dataset: Dataset, validation_ids) -> DatasetSplit:
    """Split into validation (listed participants) and test (the rest).

    Raises ``ValueError`` when a requested id is absent from the dataset or
    when either side would be empty.
    """
    wanted = list(dict.fromkeys(validation_ids))
    known = set(dataset.participant_ids())
    missing = [pid for pid in wanted if pid not in known]
    if missing:
        raise ValueError(f"unknown participant id(s): {', '.join(missing)}")
    val_set = set(wanted)
    val_records = [r for r in dataset.records if r.participant_id in val_set]
    test_records = [r for r in dataset.records if r.participant_id not in val_set]
    if not val_records or not test_records:
        raise ValueError("split leaves one side empty")
    return DatasetSplit(validation=Dataset(val_records), test=Dataset(test_records))
