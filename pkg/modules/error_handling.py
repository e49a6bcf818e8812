"""
Exception hierarchy of the translation pipeline

The decorators at the bottom sit where failures leave the pipeline: MCP
tools answer them as JSON, CLI output errors become exit codes, aborted
units become run log events and backend calls retry transport failures.
"""

import json
import time
from functools import wraps
from typing import Any, Callable, Dict, Iterable, Optional, Tuple, Type
import logging

# Configure logging for error tracking
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


class SeamstressError(Exception):
    """Base class for every error raised by the pipeline"""
    pass


class ValidationError(SeamstressError):
    """Bad input, settings or environment"""
    pass


# --- C analysis -------------------------------------------------------------

class UnbalancedBraces(SeamstressError):
    def __init__(self, file: str, line: int):
        self.file = file
        self.line = line
        super().__init__(f"Unbalanced braces in {file} at line {line}")


class DanglingEndif(SeamstressError):
    def __init__(self, line: int, file: str = ""):
        self.line = line
        self.file = file
        super().__init__(f"#endif without matching #if at {file}:{line}")


class UnterminatedConditional(SeamstressError):
    def __init__(self, line: int, file: str = ""):
        self.line = line
        self.file = file
        super().__init__(f"Conditional opened at {file}:{line} has no #endif")


class MissingHeader(SeamstressError):
    """Quoted include that cannot be resolved. Recorded as a warning, not fatal."""

    def __init__(self, includer: str, name: str):
        self.includer = includer
        self.name = name
        super().__init__(f"{includer}: cannot resolve #include \"{name}\"")


class AmbiguousDefinition(SeamstressError):
    def __init__(self, name: str, locations: Iterable[str] = ()):
        self.name = name
        self.locations = list(locations)
        where = f" ({', '.join(self.locations)})" if self.locations else ""
        super().__init__(f"Multiple non-static definitions of '{name}'{where}")


# --- segmentation / metadata ------------------------------------------------

class FloorReached(SeamstressError):
    def __init__(self, cap: int, floor: int):
        self.cap = cap
        self.floor = floor
        super().__init__(f"Cannot shrink unit size below floor {floor} (current cap {cap})")


class ScanFailure(SeamstressError):
    def __init__(self, file: str, reason: str = "unbalanced braces"):
        self.file = file
        super().__init__(f"Cannot scan Rust source {file}: {reason}")


class UnknownCElement(SeamstressError):
    def __init__(self, name: str, unit_id: str = ""):
        self.name = name
        self.unit_id = unit_id
        super().__init__(f"Mapping names unknown C element '{name}' in unit {unit_id}")


# --- prompts / backend ------------------------------------------------------

class BudgetExceeded(SeamstressError):
    def __init__(self, unit_id: str, est: int, budget: int):
        self.unit_id = unit_id
        self.est = est
        self.budget = budget
        super().__init__(f"Prompt for {unit_id} needs ~{est} tokens, budget is {budget}")


class FormatError(SeamstressError):
    """An LLM answer that cannot be decoded or does not match its schema"""

    def __init__(self, reason: str, truncated: bool = False):
        self.reason = reason
        self.truncated = truncated
        super().__init__(reason)


class ContextOverflow(SeamstressError):
    def __init__(self, needed: int, window: int, unit_id: str = ""):
        self.needed = needed
        self.window = window
        self.unit_id = unit_id
        super().__init__(f"Request for {unit_id} needs {needed} tokens, context window is {window}")


class TransportError(SeamstressError):
    pass


class RateLimited(TransportError):
    pass


class GiveUp(SeamstressError):
    def __init__(self, unit_id: str, last_error: str):
        self.unit_id = unit_id
        self.last_error = last_error
        super().__init__(f"Giving up on {unit_id}: {last_error}")


class ReplayMiss(SeamstressError):
    def __init__(self, digest: str, nearest: Optional[str] = None):
        self.digest = digest
        self.nearest = nearest
        hint = f" (nearest recorded: {nearest})" if nearest else " (transcript is empty)"
        super().__init__(f"No recorded response for envelope {digest}{hint}")


class MissingCredentials(ValidationError):
    def __init__(self, profile: str, env_var: str):
        self.profile = profile
        self.env_var = env_var
        super().__init__(f"Backend '{profile}' needs the {env_var} environment variable")


# --- workspace --------------------------------------------------------------

class WorkspaceExists(SeamstressError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"Workspace already exists at {path} (use --force to overwrite)")


class ToolchainMissing(SeamstressError):
    pass


class CompileTimeout(SeamstressError):
    def __init__(self, seconds: float):
        self.seconds = seconds
        super().__init__(f"Compilation did not finish within {seconds}s")


class PatchError(SeamstressError):
    pass


class PatchOutOfRange(PatchError):
    def __init__(self, start: int, end: int, length: int):
        self.start = start
        self.end = end
        self.length = length
        super().__init__(f"Patch lines {start}-{end} outside file of {length} lines (max end {length + 1})")


class OverlappingPatches(PatchError):
    def __init__(self, first: Tuple[int, int], second: Tuple[int, int]):
        self.first = first
        self.second = second
        super().__init__(f"Patches {first[0]}-{first[1]} and {second[0]}-{second[1]} overlap")


def safe_json_response(func: Callable) -> Callable:
    """
    Run an MCP tool and hand its result back as JSON text

    A failing tool answers {"tool": ..., "error": ...} instead of raising.
    Pipeline errors keep their own message; anything else is prefixed with
    its exception type so a client can tell a bug from a bad project.
    """
    @wraps(func)
    def wrapper(*args, **kwargs) -> str:
        try:
            result = func(*args, **kwargs)
            if isinstance(result, str):
                return result
            return json.dumps(result, indent=2)
        except Exception as e:
            error_msg = str(e) if isinstance(e, SeamstressError) else f"{type(e).__name__}: {e}"
            logger.error(f"❌ Tool {func.__name__} failed: {error_msg}")
            return json.dumps({"tool": func.__name__, "error": error_msg}, indent=2)
    return wrapper


def safe_operation(operation_name: str = "operation"):
    """
    Name the pipeline phase in unexpected failures

    Pipeline errors pass through untouched; anything else is wrapped in a
    SeamstressError whose message starts with the phase.
    """
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs) -> Any:
            try:
                return func(*args, **kwargs)
            except SeamstressError:
                raise
            except Exception as e:
                error_msg = f"{operation_name} failed: {type(e).__name__}: {e}"
                logger.error(f"❌ {error_msg}")
                raise SeamstressError(error_msg) from e
        return wrapper
    return decorator


def safe_file_operation(operation: str):
    """
    Turn a failure to write into the output directory into an error result

    The wrapped call returns {"error": ..., "path": ...} when the OS refuses
    the write (missing directory, permissions, full disk); the CLI prints
    it and exits 1.
    """
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except OSError as e:
                reason = e.strerror or str(e)
                error_msg = f"{operation} failed at {e.filename}: {reason}" if e.filename \
                    else f"{operation} failed: {reason}"
                logger.error(f"❌ {error_msg}")
                return {"error": error_msg, "path": str(e.filename) if e.filename else None}
        return wrapper
    return decorator


def _plain(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)) and all(_plain(v) is v for v in value):
        return list(value)
    return str(value)


def standardize_error_response(error: Exception, context: str = "") -> Dict[str, Any]:
    """
    Fields describing why a unit was aborted, for its `abort` event

    Args:
        error: The error that ended the unit
        context: Where it happened, used in the log line

    Returns:
        {"reason": error class, "message": ..., "details": {...}}; details
        holds the attributes pipeline errors carry (needed and window of a
        ContextOverflow, last_error of a GiveUp, ...)
    """
    reason = type(error).__name__
    details = {k: _plain(v) for k, v in sorted(vars(error).items()) if not k.startswith("_")}
    logger.error(f"❌ {context or 'pipeline'}: {reason}: {error}")
    return {"reason": reason, "message": str(error), "details": details}


def retry_operation(max_retries: int = 3, delay: float = 1.0,
                    retry_on: Tuple[Type[BaseException], ...] = (Exception,),
                    sleep: Callable[[float], None] = time.sleep):
    """
    Retry a backend call with exponential backoff

    Waits delay, 2 * delay, 4 * delay, ... between attempts. Only the errors
    in retry_on (transport failures, rate limits) are retried; the last one
    is raised after max_retries attempts.
    """
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs):
            last_exception = None

            for attempt in range(max_retries):
                try:
                    return func(*args, **kwargs)
                except retry_on as e:
                    last_exception = e
                    if attempt < max_retries - 1:
                        wait_time = delay * (2 ** attempt)
                        logger.warning(f"⚠️ Backend call {attempt + 1}/{max_retries} failed "
                                       f"({type(e).__name__}), retrying in {wait_time}s: {e}")
                        sleep(wait_time)
                    else:
                        logger.error(f"❌ Backend call failed {max_retries} times, giving up: {e}")

            raise last_exception
        return wrapper
    return decorator
