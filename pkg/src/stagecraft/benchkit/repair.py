"""Format repair for raw dialogue text.

Writer models return dialogues that are correct in content but sloppy in
form.  repair_format strict-parses first; only when that fails does it run
the ordered, individually toggleable repair passes, re-parsing after each:

1. punctuation  - full-width and smart punctuation to ASCII
2. brackets     - append missing closing brackets
3. quoting      - Python-style literals (single quotes, tuples) to JSON

A dialogue that still refuses to parse raises :class:`RepairFailure`
carrying per-pass diagnostics.
"""
from __future__ import annotations

import ast
import re
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..promptbook import ParseError
from .types import BenchDialogue, dialogue_from_json

_PUNCTUATION_MAP = {
    "，": ",",   # full-width comma
    "：": ":",   # full-width colon
    "；": ";",   # full-width semicolon
    "（": "(",
    "）": ")",
    "［": "[",
    "］": "]",
    "｛": "{",
    "｝": "}",
    "。": ".",   # ideographic full stop
    "“": '"',
    "”": '"',
    "‘": "'",
    "’": "'",
    "＂": '"',
    "、": ",",   # ideographic comma
}

_OPENERS = {"[": "]", "{": "}", "(": ")"}
_CLOSERS = {v: k for k, v in _OPENERS.items()}


class RepairFailure(ValueError):
    """No repair pass produced parseable dialogue text."""

    def __init__(self, message: str, diagnostics: list[dict]):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class RepairReport:
    passes_applied: list[str] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)


def pass_punctuation(text: str) -> str:
    for src, dst in _PUNCTUATION_MAP.items():
        text = text.replace(src, dst)
    return text


def _bracket_tokens(text: str) -> list[str]:
    """Minimal token split: quoted strings, bracket/comma/colon marks, runs."""
    tokens: list[str] = []
    i, n = 0, len(text)
    marks = set("[]{}(),:")
    while i < n:
        ch = text[i]
        if ch in ('"', "'"):
            j = i + 1
            while j < n:
                if text[j] == "\\":
                    j += 2
                    continue
                if text[j] == ch:
                    break
                j += 1
            j = min(j, n - 1)
            tokens.append(text[i: j + 1])
            i = j + 1
        elif ch in marks:
            tokens.append(ch)
            i += 1
        else:
            j = i
            while j < n and text[j] not in marks and text[j] not in ('"', "'"):
                j += 1
            tokens.append(text[i:j])
            i = j
    return tokens


def pass_brackets(text: str) -> str:
    """Rebalance brackets.

    Missing closers are inserted where the structure demands them: before
    an object key that appears while an array is still open, before a
    mismatched closer, and at the end of the text.  Orphan closers drop.
    """
    tokens = _bracket_tokens(text)

    def next_mark(k: int) -> str:
        for token in tokens[k + 1:]:
            if token.strip():
                return token
        return ""

    out: list[str] = []
    stack: list[str] = []

    def emit_closer_before_trailing_comma(closer: str) -> None:
        # `..., ]` is not valid JSON; tuck the closer in front of the comma.
        k = len(out) - 1
        while k >= 0 and not out[k].strip():
            k -= 1
        if k >= 0 and out[k] == ",":
            out.insert(k, closer)
        else:
            out.append(closer)

    for k, token in enumerate(tokens):
        if token and token[0] in ('"', "'"):
            if next_mark(k) == ":":
                # an object key: any array still open here lost its closer
                while stack and stack[-1] == "[":
                    stack.pop()
                    emit_closer_before_trailing_comma("]")
            out.append(token)
        elif token in _OPENERS:
            stack.append(token)
            out.append(token)
        elif token in _CLOSERS:
            opener = _CLOSERS[token]
            if stack and stack[-1] == opener:
                stack.pop()
                out.append(token)
            elif opener in stack:
                while stack and stack[-1] != opener:
                    emit_closer_before_trailing_comma(_OPENERS[stack.pop()])
                stack.pop()
                out.append(token)
            # orphan closer: dropped
        else:
            out.append(token)
    out.extend(_OPENERS[ch] for ch in reversed(stack))
    return "".join(out)


def pass_quoting(text: str) -> str:
    """Python-literal or single-quoted text to JSON; leaves JSON unchanged.

    Tries a literal eval first (handles tuples and clean single quoting);
    when that fails, swaps single quotes for double quotes only at
    structural positions, so apostrophes inside prose survive.
    """
    try:
        value = ast.literal_eval(text.strip())
        if isinstance(value, dict):
            return json.dumps(value)
    except (ValueError, SyntaxError):
        pass
    swapped = re.sub(r"([\{\[,:]\s*)'", r'\1"', text)
    swapped = re.sub(r"'(\s*[\}\],:])", r'"\1', swapped)
    return swapped


# Quoting precedes brackets: the bracket scanner needs sane string
# delimiters before it can trust what is structure and what is prose.
REPAIR_PASSES: tuple[tuple[str, Callable[[str], str]], ...] = (
    ("punctuation", pass_punctuation),
    ("quoting", pass_quoting),
    ("brackets", pass_brackets),
)


def _try_parse(text: str) -> BenchDialogue:
    payload = json.loads(text)
    return dialogue_from_json(payload)


def repair_format(
    raw: str, enabled_passes: Optional[set[str]] = None
) -> tuple[BenchDialogue, RepairReport]:
    """Strict-parse raw dialogue text, repairing its format if necessary."""
    report = RepairReport()
    try:
        dialogue = _try_parse(raw)
        report.diagnostics.append({"pass": "strict", "ok": True})
        return dialogue, report
    except (json.JSONDecodeError, ParseError) as exc:
        report.diagnostics.append({"pass": "strict", "ok": False, "error": str(exc)})

    text = raw
    for name, fn in REPAIR_PASSES:
        if enabled_passes is not None and name not in enabled_passes:
            report.diagnostics.append({"pass": name, "ok": None, "skipped": True})
            continue
        text = fn(text)
        report.passes_applied.append(name)
        try:
            dialogue = _try_parse(text)
            report.diagnostics.append({"pass": name, "ok": True})
            return dialogue, report
        except (json.JSONDecodeError, ParseError) as exc:
            report.diagnostics.append({"pass": name, "ok": False, "error": str(exc)})
    raise RepairFailure("dialogue text is unrepairable", report.diagnostics)
