"""
Utility code for mpns-lab.
"""
import json
import logging
import os
from datetime import datetime

timing = logging.getLogger("timing")


class ConfigurationError(Exception):
    """
    Exception raised when a configuration file is invalid.
    """


class DimensionError(ValueError):
    """
    Raised when matrix shapes do not line up for an operation.
    """


class DegenerateVarianceError(ValueError):
    """
    Raised when a dependence statistic is asked about a constant sample.
    """


class DivergenceError(RuntimeError):
    """
    Raised when a training loss term becomes non-finite or explodes.
    """

    def __init__(self, term, epoch, value):
        self.term = term
        self.epoch = epoch
        self.value = value
        super().__init__(f"Training diverged at epoch {epoch}: loss term {term} is {value}.")


def setup_timing(log_dir):
    """
    Set up the timing logger.

    Handlers are only added once per process so repeated runs (tests, grid cells) don't duplicate lines.
    """
    if timing.handlers:
        return

    formatter = logging.Formatter('%(message)s')

    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        timing_log_name = os.path.join(log_dir, f"{datetime.now().strftime('%Y-%m-%d_%H-%M-%S')}_timing.log")
        print(f"Logging timing data to {timing_log_name}")
        handler = logging.FileHandler(timing_log_name)
    else:
        print("No log dir provided, logging timing data to stdout.")
        handler = logging.StreamHandler()

    handler.setFormatter(formatter)
    timing.addHandler(handler)
    timing.setLevel(logging.INFO)


class LogTimer:
    """
    Class to time and log our various operations.
    """

    start_time = None
    duration = None

    def __init__(self, timer_type, timer_key):
        self.timer_type = timer_type
        self.timer_key = timer_key

    def __enter__(self):
        self.start_time = datetime.now()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.duration = (datetime.now() - self.start_time).total_seconds()
        log_duration(self.timer_type, self.timer_key, self.duration)


def log_duration(timer_type, timer_key, duration):
    """
    Log timing data to the configured logger.

    timer_type: Top level type of the timer ("generate", "train", "grid"...)
    timer_key: Specific timer ("epoch 3", "s=0.3 full_mpns seed 2", "probe"...)
    duration: Timing in fractional seconds (1.20, 12.345, 0.03)
    """
    stmt = {'time': datetime.now().isoformat(), 'timer': timer_type, 'key': timer_key, 'duration': duration}
    timing.info(json.dumps(stmt))
