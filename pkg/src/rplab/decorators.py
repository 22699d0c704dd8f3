"""Custom decorators for the laboratory's numerical kernels."""

from functools import wraps
from typing import Any, Callable, Tuple, Type

from numpy.linalg import LinAlgError

from . import logger
from .exceptions import NumericalFailure

# LAPACK drivers for dense symmetric problems, most robust last.
EIGH_DRIVERS: Tuple[str, ...] = ("evr", "evd", "ev")


def retry_with_drivers(
    drivers: Tuple[str, ...] = EIGH_DRIVERS,
    exceptions: Tuple[Type[Exception], ...] = (LinAlgError,),
) -> Callable:
    """
    A decorator to retry a solver call with the next LAPACK driver on failure.

    The wrapped function must accept a ``driver`` keyword argument. An optional
    ``context`` keyword (dict) is forwarded into the NumericalFailure raised
    once every driver has failed, so callers can attach the seed and time of
    the offending snapshot.

    Args:
        drivers (Tuple[str, ...]): Driver names tried in order.
        exceptions (Tuple[Type[Exception], ...]): Exception types that trigger a retry.

    Returns:
        Callable: The wrapped function.
    """
    assert drivers, "At least one driver is required."

    def decorator(func: Callable) -> Callable:
        """The actual decorator."""

        @wraps(func)
        def wrapper(*args: Any, context: Any = None, **kwargs: Any) -> Any:
            log = logger.get_logger()
            last_error: Exception = RuntimeError("no driver attempted")
            for attempt, driver in enumerate(drivers, start=1):
                try:
                    return func(*args, driver=driver, **kwargs)
                except exceptions as e:
                    last_error = e
                    if attempt < len(drivers):
                        log.warning(
                            f"Retry {attempt + 1}/{len(drivers)} for {func.__name__} "
                            f"with driver '{drivers[attempt]}' due to {e}."
                        )
            log.error(
                f"Function {func.__name__} failed with every driver {list(drivers)}.",
                exc_info=last_error,
            )
            details = dict(context or {})
            details["drivers"] = list(drivers)
            raise NumericalFailure(
                f"{func.__name__} did not converge", context=details
            ) from last_error

        return wrapper

    return decorator
