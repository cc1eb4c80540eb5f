# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

"""
core/i18n.py

Lightweight i18n for CLI console output.
- main.py calls load_language() once the language is resolved
  (--lang flag, then the "language" key of the run config, then "en").
- All console messages go through t(key, **kwargs).
- A missing translation falls back to the key itself (visible, never raising).
- Locale files are flat JSON under <project>/locales/.
"""

import json
from pathlib import Path

from core.logger import get_logger

logger = get_logger()

DEFAULT_LANGUAGE = "en"

# Supported language codes mapped to display labels
SUPPORTED_LANGUAGES: dict[str, str] = {
    "en":    "English",
    "zh_TW": "繁體中文",
}

# Currently loaded translations
_translations: dict = {}

# Currently active language code
_current_language: str = DEFAULT_LANGUAGE


def _resolve_locales_folder() -> Path:
    """locales/ sits under the project root."""
    return Path(__file__).resolve().parent.parent / "locales"


def load_language(lang: str) -> None:
    """
    Load translations for a language code.
    Falls back to DEFAULT_LANGUAGE when the locale file does not exist.
    """
    global _translations, _current_language

    locales_folder = _resolve_locales_folder()
    locale_file = locales_folder / f"{lang}.json"

    if not locale_file.exists():
        logger.warning(f"i18n: locale file not found for '{lang}' — falling back to {DEFAULT_LANGUAGE}")
        lang = DEFAULT_LANGUAGE
        locale_file = locales_folder / f"{DEFAULT_LANGUAGE}.json"

    try:
        with open(locale_file, "r", encoding="utf-8") as f:
            _translations = json.load(f)
        _current_language = lang
        logger.debug(f"i18n: loaded '{lang}' ({len(_translations)} keys)")

    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"i18n: failed to load locale file '{locale_file}' — {type(e).__name__}: {e}")
        _translations = {}
        _current_language = lang


def t(key: str, **kwargs) -> str:
    """
    Translated string for key with optional placeholder substitution.
    Unknown keys come back unchanged.
    """
    text = _translations.get(key, key)

    if kwargs:
        try:
            text = text.format(**kwargs)
        except (KeyError, IndexError) as e:
            logger.warning(f"i18n: missing placeholder {e} in key '{key}'")

    return text


def get_language() -> str:
    """Currently active language code."""
    return _current_language
