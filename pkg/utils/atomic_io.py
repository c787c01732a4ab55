import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path


@contextmanager
def temp_job_dir(base_dir=None, job_id=None):
    """
    Context manager to create and clean up a scratch directory for one job.
    Usage:
        with temp_job_dir() as job_dir:
            ...
    """
    if base_dir is None:
        base_dir = Path(tempfile.gettempdir()) / "wavegenre"
    if job_id is None:
        job_id = os.urandom(8).hex()
    job_dir = Path(base_dir) / job_id
    job_dir.mkdir(parents=True, exist_ok=True)
    try:
        yield job_dir
    finally:
        shutil.rmtree(job_dir, ignore_errors=True)


@contextmanager
def atomic_write(path):
    """
    Yield a temporary sibling path; on clean exit it replaces ``path`` in one rename.

    The destination is never left half-written: on error the temporary file is removed
    and any previous file at ``path`` stays intact.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    tmp_path = Path(tmp_name)
    try:
        yield tmp_path
        os.replace(tmp_path, path)
    finally:
        if tmp_path.exists():
            tmp_path.unlink()


def write_text_atomic(path, text: str, encoding: str = "utf-8"):
    with atomic_write(path) as tmp:
        tmp.write_text(text, encoding=encoding)
    return Path(path)


def replace_dir(src, dst):
    """Move the directory ``src`` onto ``dst`` in one rename; ``dst`` must be absent or empty."""
    os.replace(src, dst)
    return Path(dst)
