# errors.py
"""
Centralized error codes, exit codes, status constants, and messages for the genre pipeline
"""
import logging
import time

logger = logging.getLogger(__name__)


# Process exit codes
EXIT_OK = 0
EXIT_DATA_ERROR = 2
EXIT_USAGE_ERROR = 64
EXIT_NUMERIC_FAILURE = 70


# Round Status Constants
class RoundStatus:
    QUEUED = "QUEUED"
    LOADING = "LOADING"
    TRAINING = "TRAINING"
    PREDICTING = "PREDICTING"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"


# Error Codes and Messages
ERRORS = {
    "USAGE_ERROR": {
        "code": "USAGE_ERROR",
        "message": "Invalid command-line usage or configuration value.",
        "exit_code": EXIT_USAGE_ERROR
    },
    "DATA_ERROR": {
        "code": "DATA_ERROR",
        "message": "The dataset does not satisfy the protocol requirements.",
        "exit_code": EXIT_DATA_ERROR
    },
    "INGESTION_FAILED": {
        "code": "INGESTION_FAILED",
        "message": "Failed to decode audio file.",
        "exit_code": EXIT_DATA_ERROR
    },
    "TRACK_TOO_SHORT": {
        "code": "TRACK_TOO_SHORT",
        "message": "Audio is shorter than the 30 second minimum (661,490 samples at 22,050 Hz).",
        "exit_code": EXIT_DATA_ERROR
    },
    "AUGMENTATION_FAILED": {
        "code": "AUGMENTATION_FAILED",
        "message": "Data augmentation failed for one or more tracks.",
        "exit_code": EXIT_DATA_ERROR
    },
    "PROTOCOL_VIOLATION": {
        "code": "PROTOCOL_VIOLATION",
        "message": "Fold protocol violated (leakage or label inconsistency).",
        "exit_code": EXIT_DATA_ERROR
    },
    "CHECKPOINT_INVALID": {
        "code": "CHECKPOINT_INVALID",
        "message": "Checkpoint is unreadable or incompatible with the architecture.",
        "exit_code": EXIT_DATA_ERROR
    },
    "NUMERIC_FAILURE": {
        "code": "NUMERIC_FAILURE",
        "message": "Training diverged (non-finite loss).",
        "exit_code": EXIT_NUMERIC_FAILURE
    },
    "UNKNOWN_ERROR": {
        "code": "UNKNOWN_ERROR",
        "message": "An unknown error occurred.",
        "exit_code": EXIT_NUMERIC_FAILURE
    }
}


def get_error(code, details=None):
    """Get standardized error record"""
    err = ERRORS.get(code, ERRORS["UNKNOWN_ERROR"]).copy()
    if details:
        err["details"] = details
    return err


def log_stage_timing(stage_name, start_time, end_time=None):
    """Log timing for pipeline stages"""
    if end_time is None:
        end_time = time.time()
    duration = end_time - start_time
    logger.info(f"[TIMING] {stage_name}: {duration:.2f}s")
    return duration
