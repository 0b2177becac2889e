"""Line-oriented run configuration files.

Format: `[section]` headers, `key = value` lines, `#` comments. No
nesting, no quoting; values are strings until a typed accessor parses
them. Serialization round-trips to an equal configuration.
"""


class RunConfig:
    def __init__(self, sections=None):
        self.sections = sections or {}

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.sections == other.sections

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    def getint(self, section, key, default=None):
        v = self.get(section, key)
        return default if v is None else int(v)

    def getfloat(self, section, key, default=None):
        v = self.get(section, key)
        return default if v is None else float(v)

    def getbool(self, section, key, default=None):
        v = self.get(section, key)
        if v is None:
            return default
        if v.lower() in ("1", "true", "yes", "on"):
            return True
        if v.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"[{section}] {key}: not a boolean: {v!r}")

    def getlist(self, section, key, default=None):
        v = self.get(section, key)
        return default if v is None else v.split()

    def set(self, section, key, value):
        self.sections.setdefault(section, {})[key] = str(value)

    def to_text(self):
        chunks = []
        for name, body in self.sections.items():
            chunks.append(f"[{name}]")
            for key, value in body.items():
                chunks.append(f"{key} = {value}")
            chunks.append("")
        return "\n".join(chunks)


def parse_config(text):
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if not current:
                raise ValueError(f"line {lineno}: empty section name")
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', "
                             f"got {raw!r}")
        if current is None:
            raise ValueError(f"line {lineno}: key outside any [section]")
        key, value = line.split("=", 1)
        sections[current][key.strip()] = value.strip()
    return RunConfig(sections)


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(cfg.to_text())
