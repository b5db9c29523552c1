import copy
import hashlib
import json
import os
import random
import tempfile
import threading
import time
import tracemalloc
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
import psutil
import torch


def read_json_as_dict(input_path: str) -> Dict:
    """
    Reads a JSON file and returns its content as a dictionary.
    If input_path is a directory, the first JSON file in the directory is read.
    If input_path is a file, the file is read.

    Args:
        input_path (str): The path to the JSON file or directory containing a JSON file.

    Returns:
        dict: The content of the JSON file as a dictionary.

    Raises:
        ValueError: If the input_path is neither a file nor a directory,
                    or if input_path is a directory without any JSON files.
    """
    if os.path.isdir(input_path):
        json_files = sorted(
            os.path.join(input_path, f)
            for f in os.listdir(input_path)
            if f.endswith(".json")
        )
        if not json_files:
            raise ValueError(f"No JSON files found in the directory {input_path}")
        json_file_path = json_files[0]
    elif os.path.isfile(input_path):
        json_file_path = input_path
    else:
        raise ValueError(f"Input path is neither a file nor a directory: {input_path}")

    with open(json_file_path, "r", encoding="utf-8") as file:
        json_data_as_dict = json.load(file)

    return json_data_as_dict


def set_seeds(seed_value: int) -> None:
    """
    Set the random seeds for Python, NumPy, etc. to ensure
    reproducibility of results.

    Args:
        seed_value (int): The seed value to use for random
            number generation. Must be an integer.

    Returns:
        None
    """
    if isinstance(seed_value, int):
        os.environ["PYTHONHASHSEED"] = str(seed_value)
        random.seed(seed_value)
        np.random.seed(seed_value % 2**32)
        torch.manual_seed(seed_value)
        torch.use_deterministic_algorithms(True, warn_only=True)
    else:
        raise ValueError(f"Invalid seed value: {seed_value}. Cannot set seeds.")


def derive_seed(seed: int, *counters: int) -> int:
    """
    Derive an independent 63-bit seed for a numbered piece of work.

    The run seed is split by a counted key (e.g. `derive_seed(seed, 3, 17)`
    for image 17 of stream 3), so per-item results do not depend on the order
    in which items are processed.
    """
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(counters))
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def make_rng(seed: int, *counters: int) -> np.random.Generator:
    """numpy Generator for a numbered piece of work (see derive_seed)."""
    return np.random.default_rng(derive_seed(seed, *counters))


def deep_update(base: Dict, overrides: Optional[Dict]) -> Dict:
    """Recursively merge `overrides` into a copy of `base`."""
    merged = copy.deepcopy(base)
    for key, value in (overrides or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_update(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def config_fingerprint(resolved_config: Dict) -> str:
    """SHA-256 over the canonical JSON dump of a resolved config."""
    canonical = json.dumps(
        resolved_config,
        default=make_serializable,
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def atomic_write_bytes(file_path: str, payload: bytes) -> None:
    """Write bytes to a temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(file_path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp_")
    try:
        with os.fdopen(fd, "wb") as file:
            file.write(payload)
        os.replace(tmp_path, file_path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def save_dataframe_as_csv(dataframe: pd.DataFrame, file_path: str) -> None:
    """
    Saves a pandas dataframe to a CSV file (written atomically).

    Args:
    - dataframe (pd.DataFrame): The pandas dataframe to be saved.
    - file_path (str): File path and name to save the CSV file.

    Raises:
    - IOError: If an error occurs while saving the CSV file.
    """
    try:
        payload = dataframe.to_csv(index=False).encode("utf-8")
        atomic_write_bytes(file_path, payload)
    except IOError as exc:
        raise IOError(f"Error saving CSV file {file_path}: {exc}") from exc


def save_json(file_path_and_name: str, data: Any) -> None:
    """Save json to a path (directory + filename)"""
    payload = json.dumps(
        data,
        default=make_serializable,
        sort_keys=True,
        indent=4,
        separators=(",", ": "),
    )
    atomic_write_bytes(file_path_and_name, payload.encode("utf-8"))


def make_serializable(obj: Any) -> Union[int, float, List[Union[int, float]], Any]:
    """
    Converts a given object into a serializable format.

    Args:
    - obj: Any Python object

    Returns:
    - If obj is an integer or numpy integer, returns the integer value as an int
    - If obj is a numpy floating-point number, returns the floating-point value
        as a float
    - If obj is a numpy array or torch tensor, returns the array as a list
    - Otherwise, uses the default behavior of the json.JSONEncoder to serialize obj

    """
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    elif isinstance(obj, np.floating):
        return float(obj)
    elif isinstance(obj, np.bool_):
        return bool(obj)
    elif isinstance(obj, np.ndarray):
        return obj.tolist()
    elif isinstance(obj, torch.Tensor):
        return obj.detach().cpu().tolist()
    else:
        return json.JSONEncoder.default(None, obj)


class ResourceTracker(object):
    """
    This class serves as a context manager to track time and
    memory allocated by code executed inside it.
    """

    def __init__(self, logger, monitoring_interval):
        self.logger = logger
        self.monitor = MemoryMonitor(logger=logger, interval=monitoring_interval)

    def __enter__(self):
        self.start_time = time.time()
        tracemalloc.start()
        self.monitor.start()
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.end_time = time.time()
        self.monitor.stop()
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()

        elapsed_time = self.end_time - self.start_time
        peak_python_memory_mb = peak / 1024**2
        process_cpu_peak_memory_mb = self.monitor.get_peak_memory_usage()

        self.logger.info(f"Execution time: {elapsed_time:.2f} seconds")
        self.logger.info(
            f"Peak Python Allocated Memory: {peak_python_memory_mb:.2f} MB"
        )
        self.logger.info(
            f"Peak System RAM Usage (Incremental): {process_cpu_peak_memory_mb:.2f} MB"
        )


class MemoryMonitor:
    """Samples the process RSS on a background thread."""

    def __init__(self, interval=20.0, logger=print):
        self.interval = interval
        self.logger = logger or print
        self.initial_cpu_memory = None
        self.peak_cpu_memory = 0
        self._stop_event = threading.Event()
        self.thread = threading.Thread(target=self.monitor_loop, daemon=True)

    def monitor_memory(self):
        process = psutil.Process(os.getpid())
        total_memory = process.memory_info().rss
        self.peak_cpu_memory = max(self.peak_cpu_memory, total_memory)
        if self.initial_cpu_memory is None:
            self.initial_cpu_memory = self.peak_cpu_memory

    def monitor_loop(self):
        """Runs the monitoring process in a loop."""
        while not self._stop_event.is_set():
            self.monitor_memory()
            self._stop_event.wait(self.interval)

    def start(self):
        """Starts the memory monitoring."""
        self.monitor_memory()
        self.thread.start()

    def stop(self):
        """Stops the periodic monitoring"""
        self._stop_event.set()
        self.thread.join()
        self.monitor_memory()

    def get_peak_memory_usage(self):
        incremental_cpu_peak_memory = (
            self.peak_cpu_memory - (self.initial_cpu_memory or 0)
        ) / (1024**2)
        return incremental_cpu_peak_memory
