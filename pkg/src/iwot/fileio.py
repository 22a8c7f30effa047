"""Atomic text output helpers.

Every file the package writes goes through write-then-rename so that an
interrupted run leaves either the previous file or no file, never a torn one.
"""

import os
import tempfile


def atomic_write_text(path, text):
    """Write `text` to `path` atomically (temp file in the same directory, then rename)."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def format_float(value):
    """Render a float with enough digits to round-trip exactly."""
    return "%.17g" % float(value)
