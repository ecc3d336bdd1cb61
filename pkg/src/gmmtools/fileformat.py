"""Text persistence: the ``gmm/1`` document format, CSV files and run manifests.

A ``gmm/1`` document is line oriented, one ``key value...`` pair per line::

    format_version gmm/1
    dim 2
    components 1
    name pipe radii
    unit mm
    note measurand_dims 0
    component 0
    weight 1
    mean 10 12
    covariance 0.040000000000000001 0.01 0.01 0.050000000000000003

``covariance`` lists the full d x d matrix row-major.  Floats are written with
17 significant digits, so serialize -> parse -> serialize reproduces the
text byte for byte.  Blank lines and ``#`` comments are ignored on input;
metadata lines (``name``, ``unit``, any number of ``note``) are optional.
"""

from dataclasses import dataclass, field
import csv
import hashlib
import io
import json
import math

import numpy as np

from .core import GaussianMixture
from .errors import FormatError

__all__ = [
    "FORMAT_VERSION",
    "GmmDocument",
    "UnsupportedVersionError",
    "serialize",
    "parse",
    "read_gmm",
    "write_gmm",
    "format_float",
    "write_csv",
    "read_csv_points",
    "sha256_file",
]

FORMAT_VERSION = "gmm/1"


class UnsupportedVersionError(FormatError):
    """Document declares a format version this reader does not know."""


@dataclass(frozen=True)
class GmmDocument:
    mixture: GaussianMixture
    name: str = None
    unit: str = None
    notes: tuple = field(default_factory=tuple)

    def note_value(self, key):
        """Value of the first ``note <key> <value>`` line, or None."""
        for n in self.notes:
            head, _, rest = n.partition(" ")
            if head == key:
                return rest
        return None


def format_float(x):
    x = float(x)
    if not math.isfinite(x):
        return repr(x)
    return format(x, ".17g")


def _floats(values):
    return " ".join(format_float(v) for v in np.ravel(values))


def serialize(doc):
    """Canonical text of a document (LF line endings, trailing newline)."""
    if isinstance(doc, GaussianMixture):
        doc = GmmDocument(doc)
    g = doc.mixture
    lines = [f"format_version {FORMAT_VERSION}", f"dim {g.dim}", f"components {g.n_components}"]
    for key, val in (("name", doc.name), ("unit", doc.unit)):
        if val is not None:
            lines.append(f"{key} {_single_line(val, key)}")
    lines += [f"note {_single_line(n, 'note')}" for n in doc.notes]
    for i in range(g.n_components):
        lines.append(f"component {i}")
        lines.append(f"weight {format_float(g.weights[i])}")
        lines.append(f"mean {_floats(g.means[i])}")
        lines.append(f"covariance {_floats(g.covariances[i])}")
    return "\n".join(lines) + "\n"


def _single_line(text, key):
    text = str(text)
    if "\n" in text or "\r" in text:
        raise FormatError("metadata must fit on one line", field=key)
    return text


class _Lines:
    def __init__(self, text):
        self.items = []
        for no, raw in enumerate(text.splitlines(), start=1):
            s = raw.strip()
            if s and not s.startswith("#"):
                key, _, rest = s.partition(" ")
                self.items.append((no, key, rest.strip()))
        self.pos = 0

    def next(self, expected=None):
        if self.pos >= len(self.items):
            raise FormatError("unexpected end of document", field=expected)
        no, key, rest = self.items[self.pos]
        if expected is not None and key != expected:
            raise FormatError(f"expected '{expected}', found '{key}'", line=no, field=expected)
        self.pos += 1
        return no, key, rest

    def peek_key(self):
        return self.items[self.pos][1] if self.pos < len(self.items) else None


def _parse_int(rest, no, key):
    try:
        return int(rest)
    except ValueError:
        raise FormatError(f"could not parse {rest!r} as an integer", line=no, field=key) from None


def _parse_floats(rest, no, key, count):
    parts = rest.split()
    if len(parts) != count:
        raise FormatError(f"expected {count} numbers, found {len(parts)}", line=no, field=key)
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise FormatError(f"could not parse {rest!r} as numbers", line=no, field=key) from None


def parse(text):
    """Parse and validate a ``gmm/1`` document.

    Raises
    ------
    FormatError
        Malformed text; the message names the line and field.
    UnsupportedVersionError
        Unknown ``format_version``.
    ValidationError
        Well-formed text describing an invalid mixture.
    """
    lines = _Lines(text)
    no, _, version = lines.next("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version!r}", line=no, field="format_version")
    no, _, rest = lines.next("dim")
    d = _parse_int(rest, no, "dim")
    if d < 1:
        raise FormatError("dimension must be positive", line=no, field="dim")
    no, _, rest = lines.next("components")
    K = _parse_int(rest, no, "components")
    if K < 1:
        raise FormatError("component count must be positive", line=no, field="components")
    meta = {"name": None, "unit": None}
    notes = []
    while lines.peek_key() in ("name", "unit", "note"):
        no, key, rest = lines.next()
        if key == "note":
            notes.append(rest)
        elif meta[key] is not None:
            raise FormatError("repeated metadata", line=no, field=key)
        else:
            meta[key] = rest
    w, m, S = [], [], []
    for i in range(K):
        no, _, rest = lines.next("component")
        if _parse_int(rest, no, "component") != i:
            raise FormatError(f"expected component {i}", line=no, field="component")
        no, _, rest = lines.next("weight")
        w.append(_parse_floats(rest, no, "weight", 1)[0])
        no, _, rest = lines.next("mean")
        m.append(_parse_floats(rest, no, "mean", d))
        no, _, rest = lines.next("covariance")
        S.append(_parse_floats(rest, no, "covariance", d * d))
    if lines.peek_key() is not None:
        no, key, _ = lines.next()
        raise FormatError("trailing content after the last component", line=no, field=key)
    g = GaussianMixture(np.array(w), np.array(m).reshape(K, d), np.array(S).reshape(K, d, d))
    return GmmDocument(g, meta["name"], meta["unit"], tuple(notes))


def read_gmm(path):
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def write_gmm(path, doc):
    text = serialize(doc)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return "" if v is None else str(v)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def write_csv(path, header, rows):
    """Write a CSV with a header row, LF endings and 17-digit floats.

    ``path`` of None or "-" returns the text instead of writing it.
    """
    text = csv_text(header, rows)
    if path in (None, "-"):
        return text
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return text


def read_csv_points(path, columns=None):
    """Numeric columns of a CSV file with a header row, as an (N, d) array.

    ``columns`` selects columns by header name; by default every column
    whose name does not start with ``label`` is used.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError("empty CSV file")
    header = [h.strip() for h in rows[0]]
    if columns is None:
        idx = [i for i, h in enumerate(header) if not h.startswith("label")]
    else:
        try:
            idx = [header.index(c) for c in columns]
        except ValueError as exc:
            raise FormatError(f"missing column: {exc}") from None
    data = []
    for no, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        try:
            data.append([float(r[i]) for i in idx])
        except (ValueError, IndexError):
            raise FormatError("could not parse row as numbers", line=no) from None
    if not data:
        raise FormatError("CSV file has no data rows")
    return np.array(data)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, manifest):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"manifest is not valid JSON: {exc}") from None
