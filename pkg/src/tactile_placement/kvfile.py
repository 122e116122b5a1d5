"""Small key-value config format shared by the hand description file and the
experiment configs.

Syntax:

    # comment
    [section name]
    key = value
    other = 1.0 2.0 3.0      # values may be scalars or whitespace vectors

Section names may repeat a prefix word to group entries (e.g. ``[link palm]``,
``[joint FFJ3]``). The parser keeps the source line of every key so
validation errors can point at file:line:field.
"""

from dataclasses import dataclass, field


class KVError(ValueError):
    """Parse or validation error carrying file/line/field context."""

    def __init__(self, message, path=None, line=None, key=None):
        loc = path or "<string>"
        if line is not None:
            loc += f":{line}"
        if key is not None:
            loc += f" (field {key!r})"
        super().__init__(f"{loc}: {message}")
        self.path = path
        self.line = line
        self.key = key


@dataclass
class Section:
    name: str
    line: int
    path: str
    entries: dict = field(default_factory=dict)  # key -> (raw value, line)

    def has(self, key) -> bool:
        return key in self.entries

    def keys(self):
        return self.entries.keys()

    def _raw(self, key, default=...):
        if key not in self.entries:
            if default is not ...:
                return default, None
            raise KVError("missing required key", self.path, self.line, f"{self.name}.{key}")
        return self.entries[key]

    def get_str(self, key, default=...):
        raw, _ = self._raw(key, default)
        return raw

    def get_float(self, key, default=...):
        raw, line = self._raw(key, default)
        if raw is default and line is None:
            return default
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise KVError(f"expected a number, got {raw!r}", self.path, line, key) from None

    def get_int(self, key, default=...):
        raw, line = self._raw(key, default)
        if raw is default and line is None:
            return default
        try:
            return int(str(raw), 0)
        except (TypeError, ValueError):
            raise KVError(f"expected an integer, got {raw!r}", self.path, line, key) from None

    def get_bool(self, key, default=...):
        raw, line = self._raw(key, default)
        if raw is default and line is None:
            return default
        val = str(raw).strip().lower()
        if val in ("1", "true", "yes", "on"):
            return True
        if val in ("0", "false", "no", "off"):
            return False
        raise KVError(f"expected a boolean, got {raw!r}", self.path, line, key)

    def get_vec(self, key, n=None, default=...):
        raw, line = self._raw(key, default)
        if raw is default and line is None:
            return default
        parts = str(raw).replace(",", " ").split()
        try:
            vec = [float(p) for p in parts]
        except ValueError:
            raise KVError(f"expected numbers, got {raw!r}", self.path, line, key) from None
        if n is not None and len(vec) != n:
            raise KVError(f"expected {n} values, got {len(vec)}", self.path, line, key)
        return vec

    def line_of(self, key):
        return self.entries[key][1] if key in self.entries else self.line


@dataclass
class KVFile:
    path: str
    sections: list

    def section(self, name):
        for s in self.sections:
            if s.name == name:
                return s
        return None

    def require(self, name) -> Section:
        s = self.section(name)
        if s is None:
            raise KVError(f"missing required section [{name}]", self.path)
        return s

    def sections_with_prefix(self, prefix):
        pre = prefix + " "
        return [s for s in self.sections if s.name.startswith(pre)]


def parse_kv(text: str, path: str = "<string>") -> KVFile:
    sections = []
    current = None
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise KVError("unterminated section header", path, lineno)
            name = line[1:-1].strip()
            if not name:
                raise KVError("empty section name", path, lineno)
            if name in seen:
                raise KVError(f"duplicate section [{name}]", path, lineno)
            seen.add(name)
            current = Section(name, lineno, path)
            sections.append(current)
            continue
        if "=" not in line:
            raise KVError(f"expected 'key = value', got {line!r}", path, lineno)
        if current is None:
            raise KVError("key outside any [section]", path, lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.split("#", 1)[0].strip()
        if not key:
            raise KVError("empty key", path, lineno)
        if key in current.entries:
            raise KVError(f"duplicate key in [{current.name}]", path, lineno, key)
        current.entries[key] = (value, lineno)
    return KVFile(path, sections)


def load_kv(path) -> KVFile:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv(fh.read(), str(path))
