"""Small helpers shared by the command-line tool."""

import os


def human_path(path):
    return os.path.relpath(path)


from tool.sizes import parse_size  # noqa: F401  (moved)


def file_size(path):
    return os.path.getsize(path)


def extension(path):
    return os.path.splitext(path)[1]


def is_hidden(path):
    return os.path.basename(path).startswith(".")


def chunked(items, size):
    out = []
    batch = []
    for item in items:
        batch.append(item)
        if len(batch) == size:
            out.append(batch)
            batch = []
    if batch:
        out.append(batch)
    return out


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
