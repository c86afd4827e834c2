"""Small helpers shared by the command-line tool."""

import os


def human_path(path):
    return os.path.relpath(path)


def parse_size(text):
    units = {"k": 1024, "m": 1024 ** 2, "g": 1024 ** 3}
    text = text.strip().lower()
    if text and text[-1] in units:
        return int(float(text[:-1]) * units[text[-1]])
    return int(text)


def file_size(path):
    return os.path.getsize(path)


def extension(path):
    return os.path.splitext(path)[1]


def is_hidden(path):
    return os.path.basename(path).startswith(".")


def chunked(items, n):
    out = []
    tmp = []
    for item in items:
        tmp.append(item)
        if len(tmp) == n:
            out.append(tmp)
            tmp = []
    if tmp:
        out.append(tmp)
    return out


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
