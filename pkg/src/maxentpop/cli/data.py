"""Panel CSV ingestion and emission.

Layout: UTF-8, comma separated, header ``unit_id,year,population`` with an
optional trailing ``group`` column.  Years and populations are integers;
populations must be at least 1.
"""

from dataclasses import dataclass
import csv
import hashlib
import io
import os

import numpy as np

from ..dynamics import PanelRecord
from ..errors import DomainError, ParseError, ValidationError
from ..model import RankedSample

BASE_HEADER = ("unit_id", "year", "population")
GROUP_HEADER = BASE_HEADER + ("group",)


@dataclass(frozen=True)
class Dataset:
    """Validated panel with its source path and SHA-256 checksum."""

    panel: tuple
    provenance: dict
    groups: dict | None = None

    def group_names(self):
        if self.groups is None:
            return []
        return sorted(set(self.groups.values()))

    def years(self, group=None):
        return sorted({r.year for r in self.records(group)})

    def records(self, group=None, year=None):
        if group is not None and self.groups is None:
            raise DomainError(f"dataset has no group column; cannot select group {group!r}")
        out = []
        for r in self.panel:
            if group is not None and (self.groups is None or self.groups.get(r.unit_id) != group):
                continue
            if year is not None and r.year != year:
                continue
            out.append(r)
        return out

    def ranked(self, group=None, year=None):
        """Descending :class:`RankedSample` of one group in one year."""
        recs = self.records(group, year)
        if not recs:
            raise DomainError(f"empty slice for group={group!r}, year={year!r}")
        # ties keep unit_id order so identical inputs rank identically
        recs = sorted(recs, key=lambda r: (-r.population, r.unit_id))
        sizes = np.array([r.population for r in recs], dtype=float)
        label = f"{group if group is not None else 'all'}:{year}"
        return RankedSample(sizes, label=label, ids=tuple(r.unit_id for r in recs))


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _parse_int(token):
    token = token.strip()
    if not token or not (token.isdigit() or (token[0] in "+-" and token[1:].isdigit())):
        raise ValueError(token)
    return int(token)


def parse_panel_text(text, source="<string>"):
    """Parse CSV text into ``(records, groups)``.

    Raises
    ------
    ParseError
        Bad header or wrong field count (first offending line).
    ValidationError
        Every bad value, duplicate ``(unit_id, year)`` and inconsistent
        group assignment, each naming its line.
    """
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(f"{source}: empty file", line=1) from None
    header = tuple(h.strip() for h in header)
    if header and header[0].startswith("﻿"):
        header = (header[0][1:],) + header[1:]
    if header not in (BASE_HEADER, GROUP_HEADER):
        raise ParseError(f"{source}: header must be {','.join(BASE_HEADER)}[,group], got {','.join(header)}", line=1)
    has_group = header == GROUP_HEADER
    width = len(header)

    records, problems = [], []
    groups = {} if has_group else None
    seen = {}
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise ParseError(f"{source}: expected {width} fields, got {len(row)}", line=line,
                             column=min(len(row), width) + 1)
        uid = row[0].strip()
        bad = False
        if not uid:
            problems.append(f"line {line}, column 1: empty unit_id")
            bad = True
        try:
            year = _parse_int(row[1])
        except ValueError:
            problems.append(f"line {line}, column 2: year {row[1]!r} is not an integer")
            bad = True
        try:
            pop = _parse_int(row[2])
            if pop < 1:
                problems.append(f"line {line}, column 3: population {pop} must be >= 1")
                bad = True
        except ValueError:
            problems.append(f"line {line}, column 3: population {row[2]!r} is not an integer")
            bad = True
        grp = None
        if has_group:
            grp = row[3].strip()
            if not grp:
                problems.append(f"line {line}, column 4: empty group")
                bad = True
            elif uid in groups and groups[uid] != grp:
                problems.append(f"line {line}, column 4: unit {uid!r} already assigned to group {groups[uid]!r}")
                bad = True
        if bad:
            continue
        key = (uid, year)
        if key in seen:
            problems.append(f"line {line}: duplicate (unit_id, year) = ({uid}, {year}); first on line {seen[key]}")
            continue
        seen[key] = line
        if has_group:
            groups[uid] = grp
        records.append(PanelRecord(uid, year, pop, grp))
    if problems:
        raise ValidationError(problems)
    if not records:
        raise ValidationError([f"{source}: no data rows"])
    return records, groups


def ingest(path, encoding="utf-8"):
    """Load and validate a panel CSV file."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode(encoding)
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not valid {encoding}: {exc.reason}") from None
    records, groups = parse_panel_text(text, source=path)
    provenance = {"path": os.path.basename(path), "sha256": hashlib.sha256(raw).hexdigest(),
                  "rows": len(records)}
    return Dataset(panel=tuple(records), provenance=provenance, groups=groups)


def panel_to_csv(panel):
    """CSV text for ``panel``; a ``group`` column is written when any record has one."""
    panel = list(panel)
    with_group = any(r.group is not None for r in panel)
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GROUP_HEADER if with_group else BASE_HEADER)
    for r in panel:
        row = [r.unit_id, r.year, r.population]
        if with_group:
            row.append(r.group if r.group is not None else "")
        w.writerow(row)
    return buf.getvalue()


def emit_panel(panel, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(panel_to_csv(panel))


def write_table(rows, columns, path):
    """Write dict rows as CSV with a header row; floats in ``repr`` form."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)
