from enum import Enum
from typing import Any, Type

from claip_emo.errors import InvalidConfigValueError


def validate_str_against_enum(value: Any, enum_class: Type[Enum], case_sensitive: bool = True):
    """Checks whether a value is found as the value of a str attribute of the
     given enum_class.

    Returns value if an error is not raised.
    """

    if case_sensitive:
        enum_values = set(item.value for item in enum_class)
        to_test_value = value
    else:
        enum_values = set(item.value.upper() for item in enum_class)
        to_test_value = value.upper()

    if to_test_value not in enum_values:
        raise ValueError(f"{value} is not a valid {enum_class.__name__}")
    return value


def validate_probability(value: float, name: str, allow_one: bool = False) -> float:
    """Raises InvalidConfigValueError unless 0 <= value < 1 (or <= 1)."""
    upper_ok = value <= 1.0 if allow_one else value < 1.0
    if not (0.0 <= value and upper_ok):
        bound = "[0, 1]" if allow_one else "[0, 1)"
        raise InvalidConfigValueError(f"`{name}` must be in {bound}, got {value}")
    return value


def validate_positive_int(value: int, name: str, allow_zero: bool = False) -> int:
    if not isinstance(value, (int,)) or isinstance(value, bool):
        raise InvalidConfigValueError(f"`{name}` must be an integer, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise InvalidConfigValueError(
            f"`{name}` must be {'non-negative' if allow_zero else 'positive'}, got {value}")
    return value
