"""Guest image container: flat binary plus a key/value manifest sidecar.

The manifest keeps the binary byte-exact (important for checksum fixtures)
and records where it loads:

    entry 0x00001000
    segment 0x00001000 0 78 rwx
    buddy 0x00002000

``segment`` lines are ``vaddr file-offset length perms``; ``buddy`` lines
name pages that must be breakpoint-backed before the guest runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .asm import Program

__all__ = ["GuestImage", "ImageSegment", "ManifestError", "build_image",
           "write_image", "read_image"]


class ManifestError(Exception):
    pass


@dataclass(frozen=True)
class ImageSegment:
    vaddr: int
    offset: int
    length: int
    perms: str  # subset of "rwx"


@dataclass
class GuestImage:
    entry: int
    segments: list[ImageSegment]
    required_buddy_pages: list[int] = field(default_factory=list)

    def validate(self) -> None:
        spans = sorted((s.vaddr, s.vaddr + s.length) for s in self.segments)
        for (a0, a1), (b0, _b1) in zip(spans, spans[1:]):
            if b0 < a1:
                raise ManifestError("segments overlap")
        for s in self.segments:
            if s.vaddr <= self.entry < s.vaddr + s.length and "x" in s.perms:
                return
        raise ManifestError("entry point is not inside an executable segment")

    def to_manifest(self) -> str:
        lines = [f"entry {self.entry:#010x}"]
        lines += [f"segment {s.vaddr:#010x} {s.offset} {s.length} {s.perms}"
                  for s in self.segments]
        lines += [f"buddy {p:#010x}" for p in self.required_buddy_pages]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_manifest(cls, text: str) -> "GuestImage":
        entry = None
        segments: list[ImageSegment] = []
        buddies: list[int] = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "entry" and len(parts) == 2:
                    entry = int(parts[1], 0)
                elif parts[0] == "segment" and len(parts) == 5:
                    segments.append(ImageSegment(int(parts[1], 0), int(parts[2], 0),
                                                 int(parts[3], 0), parts[4]))
                elif parts[0] == "buddy" and len(parts) == 2:
                    buddies.append(int(parts[1], 0))
                else:
                    raise ValueError
            except ValueError:
                raise ManifestError(f"manifest line {lineno}: cannot parse {raw!r}") from None
        if entry is None or not segments:
            raise ManifestError("manifest needs an entry and at least one segment")
        img = cls(entry=entry, segments=segments, required_buddy_pages=buddies)
        img.validate()
        return img


def build_image(program: Program, perms: str = "rwx",
                buddy_pages: list[int] | None = None) -> tuple[GuestImage, bytes]:
    """Pack an assembled program into (image, binary blob)."""
    blob = bytearray()
    segments = []
    for seg in program.segments:
        segments.append(ImageSegment(seg.base, len(blob), len(seg.data), perms))
        blob += seg.data
    img = GuestImage(entry=program.entry, segments=segments,
                     required_buddy_pages=list(buddy_pages or []))
    img.validate()
    return img, bytes(blob)


def write_image(path: str | Path, image: GuestImage, blob: bytes) -> None:
    path = Path(path)
    path.write_bytes(blob)
    path.with_suffix(path.suffix + ".manifest").write_text(image.to_manifest())


def read_image(path: str | Path) -> tuple[GuestImage, bytes]:
    path = Path(path)
    blob = path.read_bytes()
    manifest = path.with_suffix(path.suffix + ".manifest")
    if not manifest.exists():
        raise ManifestError(f"missing manifest {manifest}")
    return GuestImage.from_manifest(manifest.read_text()), blob
