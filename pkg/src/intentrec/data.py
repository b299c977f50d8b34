"""Exposure/context record types and their tab-separated file format.

A dataset directory holds two files, `exposures.tsv` and `contexts.tsv`,
UTF-8 with a header line. Sequences are 30 comma-separated tokens from
{-1,0,1}; behavior lists are comma-separated item feature ids (may be empty).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .errors import DatasetFormatError

SEQ_LEN = 30
EXPOSURE_COLUMNS = ("user_id", "item_id", "day", "label", "item_feature_id")
CONTEXT_COLUMNS = ("user_id", "day", "y_p", "y_b", "r_p", "sequence", "behaviors")


@dataclass(frozen=True)
class ExposureRecord:
    """One (user, item, day) homepage-block exposure with its click label."""

    user_id: int
    item_id: int
    day: int
    label: int
    item_feature_id: int


@dataclass(frozen=True)
class UserDayContext:
    """Per-user-per-day intent labels and the trailing behavior windows.

    `sequence` covers the 30 days strictly before `day` (oldest first):
    1 = block click, 0 = portal visit without block click, -1 = no visit.
    `r_p` is 1 iff any of the 7 days strictly before `day` had a portal
    visit. `behaviors` are the most recent clicked item feature ids before
    `day`, oldest first.
    """

    user_id: int
    day: int
    y_p: int
    y_b: int
    r_p: int
    sequence: tuple[int, ...]
    behaviors: tuple[int, ...] = ()


@dataclass
class Dataset:
    exposures: list[ExposureRecord] = field(default_factory=list)
    contexts: list[UserDayContext] = field(default_factory=list)

    def context_index(self) -> dict[tuple[int, int], UserDayContext]:
        return {(c.user_id, c.day): c for c in self.contexts}


def _parse_int(raw: str, path, line_no: int, column: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise DatasetFormatError(path, line_no, column, f"not an integer: {raw!r}") from None


def write_dataset(records, contexts, path) -> None:
    """Write exposures.tsv and contexts.tsv under the directory `path`."""
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "exposures.tsv"), "w", encoding="utf-8") as f:
        f.write("\t".join(EXPOSURE_COLUMNS) + "\n")
        for r in records:
            f.write(f"{r.user_id}\t{r.item_id}\t{r.day}\t{r.label}\t{r.item_feature_id}\n")
    with open(os.path.join(path, "contexts.tsv"), "w", encoding="utf-8") as f:
        f.write("\t".join(CONTEXT_COLUMNS) + "\n")
        for c in contexts:
            seq = ",".join(str(t) for t in c.sequence)
            beh = ",".join(str(b) for b in c.behaviors)
            f.write(f"{c.user_id}\t{c.day}\t{c.y_p}\t{c.y_b}\t{c.r_p}\t{seq}\t{beh}\n")


def _read_rows(path, expected_header):
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header.split("\t") != list(expected_header):
            raise DatasetFormatError(path, 1, "header", f"expected {expected_header}, got {header!r}")
        for line_no, line in enumerate(f, start=2):
            fields = line.rstrip("\n").split("\t")
            if len(fields) != len(expected_header):
                raise DatasetFormatError(
                    path, line_no, "row",
                    f"expected {len(expected_header)} tab-separated fields, got {len(fields)}",
                )
            yield line_no, fields


def read_dataset(path) -> Dataset:
    """Read a directory written by write_dataset; inverse up to field equality."""
    ds = Dataset()
    epath = os.path.join(path, "exposures.tsv")
    for line_no, f in _read_rows(epath, EXPOSURE_COLUMNS):
        ds.exposures.append(
            ExposureRecord(
                user_id=_parse_int(f[0], epath, line_no, "user_id"),
                item_id=_parse_int(f[1], epath, line_no, "item_id"),
                day=_parse_int(f[2], epath, line_no, "day"),
                label=_parse_int(f[3], epath, line_no, "label"),
                item_feature_id=_parse_int(f[4], epath, line_no, "item_feature_id"),
            )
        )
    cpath = os.path.join(path, "contexts.tsv")
    for line_no, f in _read_rows(cpath, CONTEXT_COLUMNS):
        seq = tuple(_parse_int(tok, cpath, line_no, "sequence") for tok in f[5].split(","))
        if len(seq) != SEQ_LEN:
            raise DatasetFormatError(cpath, line_no, "sequence", f"expected {SEQ_LEN} tokens, got {len(seq)}")
        bad = [t for t in seq if t not in (-1, 0, 1)]
        if bad:
            raise DatasetFormatError(cpath, line_no, "sequence", f"token outside {{-1,0,1}}: {bad[0]}")
        behaviors = tuple(_parse_int(tok, cpath, line_no, "behaviors") for tok in f[6].split(",") if f[6] != "")
        ds.contexts.append(
            UserDayContext(
                user_id=_parse_int(f[0], cpath, line_no, "user_id"),
                day=_parse_int(f[1], cpath, line_no, "day"),
                y_p=_parse_int(f[2], cpath, line_no, "y_p"),
                y_b=_parse_int(f[3], cpath, line_no, "y_b"),
                r_p=_parse_int(f[4], cpath, line_no, "r_p"),
                sequence=seq,
                behaviors=behaviors,
            )
        )
    return ds
