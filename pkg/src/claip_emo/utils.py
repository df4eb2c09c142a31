import copy
import functools
import hashlib
import json
import os
from typing import Dict, Iterable, List, Optional

import numpy as np

from claip_emo import configs


def dicts_to_jsonl(dicts: List[dict]) -> str:
    """Turns a list of dicts into a JSONL string"""
    return functools.reduce(
        lambda x, y: "{}{}\n".format(x, json.dumps(y, sort_keys=True)),
        dicts, ""
    )


def merge_dicts(base: dict, preferences: dict) -> dict:
    """Merges two dicts together. Fields in the base dict are overwritten by
    the preferences dict
    """
    merged_dicts = copy.deepcopy(base)

    def merge(merged: dict, prefs: dict) -> dict:
        for key in prefs:
            if prefs[key] is None:
                continue
            if not isinstance(prefs[key], dict):
                merged[key] = prefs[key]
            else:
                if key in merged and isinstance(merged[key], dict):
                    merged[key] = merge(merged[key], prefs[key])
                else:
                    merged[key] = prefs[key]
        return merged

    return merge(merged=merged_dicts, prefs=preferences)


def flatten_dict(nested: dict, prefix: str = "") -> Dict[str, object]:
    """Turns {"a": {"b": 1}} into {"a.b": 1}."""
    flat = {}
    for key, value in nested.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten_dict(nested=value, prefix=f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def unflatten_dict(flat: Dict[str, object]) -> dict:
    """Inverse of flatten_dict."""
    nested: dict = {}
    for dotted, value in flat.items():
        parts = dotted.split(".")
        cursor = nested
        for part in parts[:-1]:
            cursor = cursor.setdefault(part, {})
        cursor[parts[-1]] = value
    return nested


def read_env_vars_and_defaults(var: str) -> Optional[str]:
    """Attempts to read an environment variable.
    If none is found, it will attempt to retrieve it from
    configs.default_env_vars(). If still unsuccessful, None is returned.
    """
    try:
        var = os.environ[var]
        if var is not None and len(var) == 0:
            return None
        else:
            return var
    except KeyError:
        try:
            return configs.default_env_vars()[var]
        except KeyError:
            return None


def env_flag_is_set(var: str) -> bool:
    value = read_env_vars_and_defaults(var)
    return value is not None and str(value).lower() in ("1", "true", "yes")


def arrays_checksum(arrays: Iterable[np.ndarray]) -> str:
    """sha256 over the raw bytes of the arrays, in iteration order."""
    digest = hashlib.sha256()
    for array in arrays:
        contiguous = np.ascontiguousarray(array)
        digest.update(str(contiguous.dtype).encode("utf-8"))
        digest.update(str(contiguous.shape).encode("utf-8"))
        digest.update(contiguous.tobytes())
    return digest.hexdigest()
