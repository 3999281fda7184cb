import os
import sys
import logging
import platform
import time
import numpy as np
import multiprocess
from tqdm import tqdm
from typing import *


logger = logging.getLogger(__name__)


# ------------------- exceptions -------------------
class IpccfError(Exception):
    """
    Base class of every error raised on purpose by the package.
    `exit_code` is the process status the command line reports for it.
    """
    exit_code = 1


class ConfigError(IpccfError):
    exit_code = 2


class DataError(IpccfError):
    exit_code = 3


class NumericalError(IpccfError):
    exit_code = 4


class CheckpointMismatchError(IpccfError):
    exit_code = 5


class GradCheckSizeError(IpccfError):
    exit_code = 6


class ShapeError(ValueError):
    pass


# ------------------- functional modules -------------------
_PROGRESS = {'enabled': True}


def set_progress(enabled: bool) -> None:
    """
    Globally switch tqdm progress bars on or off (the CLI --quiet flag).
    """
    _PROGRESS['enabled'] = bool(enabled)


def progress(iterable, **kwargs):
    """
    Wrap an iterable in a tqdm progress bar unless progress bars are switched off.
    """
    return tqdm(iterable, disable=not _PROGRESS['enabled'], **kwargs)


# ------------------- multiprocessing -------------------
def process_list_in_parallel(function, data_list, processes: int = None) -> list:
    """
    Map `function` over `data_list` with a multiprocess pool, keeping input order.
    Falls back to a plain loop when a single process is requested.
    """
    processes = processes or multiprocess.cpu_count()
    if processes <= 1 or len(data_list) <= 1:
        return [function(item) for item in data_list]
    with multiprocess.Pool(processes=processes) as pool:
        result = pool.map(function, data_list)
    return result


def chunk_ranges(total: int, chunks: int) -> List[Tuple[int, int]]:
    """
    Split range(total) into at most `chunks` contiguous (start, stop) spans.
    """
    chunks = max(1, min(chunks, total))
    bounds = np.linspace(0, total, chunks + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


# ------------------- seeding -------------------
SEED_STREAMS = ('split', 'init', 'sampling', 'eval')


def seed_streams(seed: int, overrides: Dict[str, Optional[int]] = None) -> Dict[str, int]:
    """
    Expand one master seed into independent named integer seeds, so that changing the
    seed of one stage leaves the others fixed.

    Args:
        seed (int): master seed.
        overrides (dict): optional explicit seed per stream name.

    Returns:
        dict: stream name -> integer seed.
    """
    children = np.random.SeedSequence(seed).spawn(len(SEED_STREAMS))
    streams = {name: int(child.generate_state(1)[0]) for name, child in zip(SEED_STREAMS, children)}
    for name, value in (overrides or {}).items():
        if value is not None:
            streams[name] = int(value)
    return streams


# ------------------- numerical operations -------------------
def ceil_int_div(a: int, b: int) -> int:
    return -(-a // b)


# ------------------- file operations -------------------
def check_and_create_folder(path):
    # Check if the specified path exists
    if not os.path.exists(path):
        os.makedirs(path)
        logger.info(f"Folder created at: {path}")
    else:
        logger.debug(f"Folder already exists at: {path}")


class DirectoryLock:
    """
    Exclusive lock file inside an output directory, holding the pid of its owner. Training
    and evaluation never run concurrently on the same directory. A lock whose owner is no
    longer running (or whose content is unreadable after `stale_seconds`) is replaced.
    """
    def __init__(self, directory: str, name: str = '.ipccf.lock', stale_seconds: float = 60.0):
        self.path = os.path.join(directory, name)
        self.stale_seconds = stale_seconds
        self._fd = None

    def _owner_alive(self) -> bool:
        try:
            with open(self.path, 'r') as handle:
                pid = int(handle.read().strip())
        except FileNotFoundError:
            return False
        except (OSError, ValueError):
            # owner may not have written its pid yet
            try:
                return time.time() - os.path.getmtime(self.path) < self.stale_seconds
            except OSError:
                return False
        if pid <= 0:
            return False
        if pid == os.getpid():
            return True
        try:
            os.kill(pid, 0)
        except ProcessLookupError:
            return False
        except (PermissionError, OverflowError):
            return True
        return True

    def __enter__(self):
        check_and_create_folder(os.path.dirname(self.path) or '.')
        for attempt in range(2):
            try:
                self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                break
            except FileExistsError:
                if attempt or self._owner_alive():
                    raise ConfigError(f"output directory is locked by another run: {self.path}")
                logger.warning(f"Removing stale lock {self.path}")
                try:
                    os.remove(self.path)
                except FileNotFoundError:
                    pass
        os.write(self._fd, str(os.getpid()).encode())
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        if os.path.exists(self.path):
            os.remove(self.path)


# ------------------- system/enviornment -------------------
def get_system_info():
    """
    Get system information including the operating system, version, machine, processor, and Python version.

    Returns:
        dict: A dictionary containing the system information.
    """
    system_info = {
        "System": platform.system(),
        "Version": platform.version(),
        "Machine": platform.machine(),
        "Processor": platform.processor(),
        "Architecture": platform.architecture()[0],
        "Python Build": platform.python_version(),
        "CPU Count": multiprocess.cpu_count(),
    }
    return system_info


def configure_logging(verbose: bool = False) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format='%(asctime)s - %(levelname)s - %(message)s',
                        stream=sys.stderr)
