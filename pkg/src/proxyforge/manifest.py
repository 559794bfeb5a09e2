"""Plain-text dataset manifest: the labelled/unlabelled role contract.

Format (UTF-8, key-value lines, ``[entry]`` starts each record):

    # proxyforge manifest v1
    root: .
    [entry]
    id: src_0000
    role: source
    image: images/src_0000.ppm
    gt: masks/src_0000.ten

Roles are ``source`` (image + gt), ``target-train`` (image only; gt is
forbidden so held-out labels cannot leak into training), and
``target-eval`` (image + gt, evaluation only). Paths are relative to
``root``, which itself resolves relative to the manifest file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

ROLES = ("source", "target-train", "target-eval")
_HEADER = "# proxyforge manifest v1"
_PATH_KEYS = ("image", "gt", "scoremap", "d1", "d2", "proxy")


class ManifestError(ValueError):
    """Malformed or inconsistent manifest content."""


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    role: str
    image: str
    gt: str | None = None
    scoremap: str | None = None
    d1: str | None = None
    d2: str | None = None
    proxy: str | None = None


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry] = field(default_factory=list)

    def resolve(self, relpath: str) -> Path:
        return self.root / relpath

    def by_role(self, role: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.role == role]

    def entry(self, entry_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise ManifestError(f"no entry with id {entry_id!r}")

    def with_entry(self, entry: ManifestEntry) -> "DatasetManifest":
        """Copy with one entry replaced in place (matched by id) or appended."""
        out = list(self.entries)
        for i, e in enumerate(out):
            if e.id == entry.id:
                out[i] = entry
                break
        else:
            out.append(entry)
        return DatasetManifest(self.root, out)


def replace_entry_paths(
    man: DatasetManifest, entry_id: str, base_dir, rels: dict
) -> DatasetManifest:
    """Attach freshly written artifact paths (given relative to base_dir)
    to one entry, re-expressed relative to the manifest root."""
    from dataclasses import replace

    base_dir = Path(base_dir).resolve()
    root = man.root.resolve()
    fields = {}
    for key, fname in rels.items():
        full = base_dir / fname
        try:
            fields[key] = str(full.relative_to(root))
        except ValueError:
            fields[key] = str(full)
    return man.with_entry(replace(man.entry(entry_id), **fields))


def _validate(man: DatasetManifest, check_files: bool) -> None:
    seen: set[str] = set()
    for e in man.entries:
        if e.id in seen:
            raise ManifestError(f"duplicate entry id {e.id!r}")
        seen.add(e.id)
        if e.role not in ROLES:
            raise ManifestError(f"entry {e.id!r}: unknown role {e.role!r}")
        if e.role == "target-train" and e.gt is not None:
            raise ManifestError(
                f"entry {e.id!r}: target-train entries must not reference ground truth"
            )
        if check_files:
            for key in _PATH_KEYS:
                rel = getattr(e, key)
                if rel is not None and not man.resolve(rel).is_file():
                    raise ManifestError(
                        f"entry {e.id!r}: dangling {key} path {rel!r}"
                    )


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != _HEADER:
        raise ManifestError(f"{path}: missing manifest header line")
    root = path.parent
    entries: list[ManifestEntry] = []
    current: dict[str, str] | None = None

    def flush():
        nonlocal current
        if current is None:
            return
        if "id" not in current or "role" not in current or "image" not in current:
            raise ManifestError(f"{path}: entry missing id/role/image: {current}")
        entries.append(ManifestEntry(**current))
        current = None

    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "[entry]":
            flush()
            current = {}
            continue
        if ":" not in line:
            raise ManifestError(f"{path}:{lineno}: expected 'key: value'")
        key, value = (s.strip() for s in line.split(":", 1))
        if current is None:
            if key == "root":
                root = (path.parent / value).resolve() if value != "." else path.parent
            else:
                raise ManifestError(f"{path}:{lineno}: unexpected top-level key {key!r}")
        else:
            if key not in ("id", "role") + _PATH_KEYS:
                raise ManifestError(f"{path}:{lineno}: unknown entry key {key!r}")
            current[key] = value
    flush()
    man = DatasetManifest(root=root, entries=entries)
    _validate(man, check_files)
    return man


def save_manifest(man: DatasetManifest, path) -> None:
    path = Path(path)
    _validate(man, check_files=False)
    out = [_HEADER, "root: ."]
    for e in man.entries:
        out.append("[entry]")
        out.append(f"id: {e.id}")
        out.append(f"role: {e.role}")
        for key in _PATH_KEYS:
            value = getattr(e, key)
            if value is not None:
                out.append(f"{key}: {value}")
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
