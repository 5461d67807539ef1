"""Prompt templates and the default in-context examples."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Sequence

PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


@lru_cache(maxsize=None)
def load(name: str) -> str:
    return resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


@dataclass(frozen=True)
class FewShotExample:
    document: str
    graph: str


def default_examples() -> list[FewShotExample]:
    return [FewShotExample(load(f"example{i}_document"), load(f"example{i}_graph")) for i in (1, 2, 3)]


def render_examples(examples: Sequence[FewShotExample]) -> str:
    return "\n\n".join(f'## "Procedural Document":\n{ex.document}\n\n## "Procedural Graph":\n\n{ex.graph}'
                       for ex in examples)


def placeholders(template: str) -> list[str]:
    return PLACEHOLDER.findall(template)


def render(template: str, **values: str) -> str:
    """Fill every ``{name}`` slot; a missing or unused value is an error."""
    wanted = set(placeholders(template))
    if wanted != set(values):
        raise KeyError(f"template wants {sorted(wanted)}, got {sorted(values)}")
    return PLACEHOLDER.sub(lambda m: values[m.group(1)], template)


# Templates without a published wording, used only by the span and
# verbalizer roles. Section headers are fixed so the mock backend can read them.

SPAN_TEMPLATE = """Find the part of the procedural document that describes the control logic of the gateway below.
Copy the relevant clause or sentences verbatim from the document. If the document does not describe this logic, answer NONE.

### Gateway: {gateway}

### Graph fragment:
{fragment}

### Procedural document:
{procedural_document}

### Relevant text:"""

VERBALIZE_TEMPLATE = """Describe in plain English the control logic encoded by the procedural graph fragment below, as one or two sentences.
Use "if ... then ..." for conditions, "otherwise" for exclusive alternatives, "also, if" for inclusive alternatives and "at the same time" for parallel branches.

### Gateway: {gateway}

### Graph fragment:
{fragment}

### Description:"""
