"""Instruction parsing: chat-model prompting plus an offline rule fallback.

A free-form user instruction is turned into three strings: a segmentation
prompt for the grounding detector, an input caption describing the original
image, and an edited caption describing the desired image.  The primary
path builds a few-shot task prompt for a chat model and parses its labelled
answer; the fallback path covers the common instruction shapes with
deterministic rules so the whole pipeline runs offline.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from maskedit.errors import MaskeditError, NeedsChatBackendError, PromptParseError

logger = logging.getLogger(__name__)

# Chat answers may mark "no object to segment" with this sentinel; the
# pipeline maps it to a full-image mask and records a warning.
NONE_NEEDED = "None needed"

KIND_QUESTION = "Is this a photo, a painting or another kind of art?"


@dataclass(frozen=True)
class Instruction:
    text: str

    def __post_init__(self):
        object.__setattr__(self, "text", self.text.strip())
        if not self.text:
            raise MaskeditError("instruction must be non-empty")


@dataclass(frozen=True)
class ParsedPrompts:
    """Segmentation prompt plus the caption pair; an edit must change the caption."""

    segmentation_prompt: str
    input_caption: str
    edited_caption: str

    def __post_init__(self):
        for name in ("segmentation_prompt", "input_caption", "edited_caption"):
            if not getattr(self, name).strip():
                raise MaskeditError(f"{name} must be non-empty")
        if self.input_caption == self.edited_caption:
            raise MaskeditError("input and edited captions must differ")

    @property
    def needs_full_image_mask(self) -> bool:
        return self.segmentation_prompt.strip().lower() == NONE_NEEDED.lower()


@dataclass(frozen=True)
class SceneDescription:
    """Answer of the two-query describer protocol: kind (photo/painting/...) and full text."""

    kind: str
    text: str


_LABEL_PATTERNS = {
    "Segmentation prompt": r"segmentation\s+prompt\s*:",
    "Editing prompt 1": r"editing\s+prompt\s*1\s*:",
    "Editing prompt 2": r"editing\s+prompt\s*2\s*:",
}
_ANY_LABEL = re.compile("|".join(_LABEL_PATTERNS.values()), re.IGNORECASE)


@dataclass(frozen=True)
class PromptTemplate:
    """Few-shot task prompt: a context description plus worked examples.

    Every example must spell out the three labelled answer fields so the
    chat model learns the exact answer form.
    """

    context_description: str
    task_examples: tuple[str, ...]

    def __post_init__(self):
        if not self.task_examples:
            raise MaskeditError("template needs at least one task example")
        for i, example in enumerate(self.task_examples):
            for label, pattern in _LABEL_PATTERNS.items():
                if not re.search(pattern, example, re.IGNORECASE):
                    raise MaskeditError(f"task example {i} is missing the {label!r} field")


_CONTEXT_DESCRIPTION = (
    "You help an image-editing system. Given a user instruction for editing an image, "
    "you provide a short segmentation prompt naming the object(s) to edit, an input "
    "caption describing the original image, and an edited caption describing the "
    "desired image. When no specific object can be named, use the segmentation "
    "prompt \"None needed\"."
)

_TASK_EXAMPLES = (
    "For example, if the user says ``Change the dog to a cat'', you need to give the "
    "segmentation model only the keyword ``Dog''. You also need to give the image editing "
    "model two text prompts: ``Photo of a dog'', and ``Photo of a cat''. Your answer "
    "should be in the form of: Segmentation prompt: Dog. Editing prompt 1: ``Photo of a "
    "dog''. Editing prompt2: ``Photo of a cat''.",
    "If the user says ``Turn the clock into a curtain'', give the segmentation model "
    "``Clock'' and give the image editing model ``Photo of a clock'' and ``Photo of a "
    "curtain''. Your answer should be: Segmentation prompt: Clock. Editing prompt 1: "
    "``Photo of a clock''. Editing prompt 2: ``Photo of a curtain''.",
    "If the user says ``Replace the oranges with apples'', give the segmentation model "
    "``Oranges'' and give the image editing model ``Photo of oranges'' and ``Photo of "
    "apples''. Your answer should be: Segmentation prompt: Oranges. Editing prompt 1: "
    "``Photo of oranges''. Editing prompt 2: ``Photo of apples''.",
    "If the user says ``Make the flowers red'', give the segmentation model ``Flowers'' "
    "and give the image editing model ``Photo of flowers'' and ``Photo of red flowers''. "
    "Your answer should be: Segmentation prompt: Flowers. Editing prompt 1: ``Photo of "
    "flowers''. Editing prompt 2: ``Photo of red flowers''.",
    "If the user says ``Color the lips purple'', give the segmentation model ``Lips'' "
    "and give the image editing model ``Photo of lips'' and ``Photo of purple lips''. "
    "Your answer should be: Segmentation prompt: Lips. Editing prompt 1: ``Photo of "
    "lips''. Editing prompt 2: ``Photo of purple lips''.",
)

DEFAULT_TEMPLATE = PromptTemplate(
    context_description=_CONTEXT_DESCRIPTION,
    task_examples=_TASK_EXAMPLES,
)


@runtime_checkable
class ChatClient(Protocol):
    name: str

    def complete(self, prompt: str) -> str: ...


@runtime_checkable
class VisionDescriber(Protocol):
    name: str

    def answer(self, image: np.ndarray, question: str) -> str: ...


def build_task_prompt(
    instruction: Instruction,
    description: SceneDescription | None,
    template: PromptTemplate = DEFAULT_TEMPLATE,
) -> str:
    """Concatenate context, examples, optional image description, and the instruction.

    Byte-stable for fixed inputs.
    """
    parts = [template.context_description, *template.task_examples]
    tail = []
    if description is not None:
        tail.append(f"Image description: {description.text}")
    tail.append(f"User instruction: ``{instruction.text}''")
    return "\n\n".join(parts) + "\n\n" + "\n".join(tail)


def describe_image(image: np.ndarray, describer: VisionDescriber) -> SceneDescription | None:
    """Two-query protocol: ask the kind, then complete "<kind> of".

    Returns None when the describer fails; the description is optional and
    must never sink the run.
    """
    try:
        kind = describer.answer(image, KIND_QUESTION).strip()
        completion = describer.answer(image, f"{kind} of").strip()
    except Exception as exc:
        logger.warning("describer %r failed, continuing without description: %s", getattr(describer, "name", "?"), exc)
        return None
    if not kind or not completion:
        logger.warning("describer %r gave an empty answer, continuing without description", getattr(describer, "name", "?"))
        return None
    if completion.lower().startswith(kind.lower()):
        text = completion
    else:
        text = f"{kind} of {completion}"
    return SceneDescription(kind=kind, text=text)


def _strip_value(raw: str) -> str:
    value = raw.strip()
    # Quote styles seen in the wild: latex ``...'', straight double/single quotes.
    for opener, closer in (("``", "''"), ('"', '"'), ("'", "'"), ("“", "”")):
        if value.startswith(opener) and value.rstrip(". ").endswith(closer):
            value = value.rstrip(". ").removeprefix(opener).removesuffix(closer)
            break
    return value.strip().rstrip(".").strip()


def parse_llm_response(text: str) -> ParsedPrompts:
    """Extract the three labelled fields from a chat answer, order-insensitive."""
    found: dict[str, str] = {}
    matches = list(_ANY_LABEL.finditer(text))
    for i, match in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        for label, pattern in _LABEL_PATTERNS.items():
            if re.fullmatch(pattern, match.group(0), re.IGNORECASE):
                found.setdefault(label, _strip_value(text[match.end() : end]))
    for label in _LABEL_PATTERNS:
        if label not in found or not found[label]:
            raise PromptParseError(label)
    return ParsedPrompts(
        segmentation_prompt=found["Segmentation prompt"],
        input_caption=found["Editing prompt 1"],
        edited_caption=found["Editing prompt 2"],
    )


def _is_plural(phrase: str) -> bool:
    # trailing -s, except the common singular endings (bus, glass, iris)
    word = phrase.split()[-1].lower()
    return word.endswith("s") and not word.endswith(("ss", "us", "is"))


def _with_article(phrase: str) -> str:
    if _is_plural(phrase):
        return phrase
    article = "an" if phrase[0].lower() in "aeiou" else "a"
    return f"{article} {phrase}"


def _capitalize(phrase: str) -> str:
    return phrase[:1].upper() + phrase[1:]


_REPLACEMENT_RULES = (
    re.compile(r"^change (?:the|all the) (?P<x>.+?) to (?P<y>.+)$", re.IGNORECASE),
    re.compile(r"^turn (?:the|all the) (?P<x>.+?) (?:into|to) (?P<y>.+)$", re.IGNORECASE),
    re.compile(r"^replace (?:the|all the) (?P<x>.+?) with (?P<y>.+)$", re.IGNORECASE),
)
_ATTRIBUTE_RULES = (
    re.compile(r"^make (?:the|all the) (?P<x>.+) (?P<adj>\w+)$", re.IGNORECASE),
    re.compile(r"^color (?:the|all the) (?P<x>.+) (?P<adj>\w+)$", re.IGNORECASE),
)


def fallback_parse(instruction: Instruction) -> ParsedPrompts:
    """Deterministic rule parser for the common instruction shapes.

    Covers "Change the X to Y", "Turn the X into Y", "Replace the X with Y",
    "Make the X ADJ", and "Color the X ADJ"; anything else needs the chat
    backend.
    """
    text = instruction.text.strip().rstrip(".!?").strip()
    for rule in _REPLACEMENT_RULES:
        match = rule.fullmatch(text)
        if match:
            x, y = match.group("x").strip(), match.group("y").strip()
            return ParsedPrompts(
                segmentation_prompt=_capitalize(x),
                input_caption=f"Photo of {_with_article(x)}",
                edited_caption=f"Photo of {y}",
            )
    for rule in _ATTRIBUTE_RULES:
        match = rule.fullmatch(text)
        if match:
            x, adj = match.group("x").strip(), match.group("adj").strip()
            if " like " in f" {x} ":
                break
            return ParsedPrompts(
                segmentation_prompt=_capitalize(x),
                input_caption=f"Photo of {_with_article(x)}",
                edited_caption=f"Photo of {_with_article(f'{adj.lower()} {x}')}",
            )
    raise NeedsChatBackendError(instruction.text)


def format_prompts_response(prompts: ParsedPrompts) -> str:
    """Render prompts in the labelled answer form the template teaches."""
    return (
        f"Segmentation prompt: {prompts.segmentation_prompt}. "
        f"Editing prompt 1: ``{prompts.input_caption}''. "
        f"Editing prompt 2: ``{prompts.edited_caption}''."
    )


_INSTRUCTION_LINE = re.compile(r"User instruction: ``(.+)''")


@dataclass
class RuleChatClient:
    """Offline chat backend: applies the fallback rules to the instruction
    found in the task prompt and answers in the labelled form."""

    name: str = "rule-based"

    def complete(self, prompt: str) -> str:
        matches = _INSTRUCTION_LINE.findall(prompt)
        if not matches:
            raise MaskeditError("task prompt contains no instruction line")
        prompts = fallback_parse(Instruction(matches[-1]))
        return format_prompts_response(prompts)


@dataclass
class ScriptedChatClient:
    """Test/demo chat backend answering from a fixed instruction -> response map."""

    responses: dict[str, str]
    name: str = "scripted-chat"

    def complete(self, prompt: str) -> str:
        matches = _INSTRUCTION_LINE.findall(prompt)
        if matches and matches[-1] in self.responses:
            return self.responses[matches[-1]]
        raise MaskeditError("scripted chat client has no response for this prompt")


@dataclass
class ScriptedDescriber:
    """Test/demo describer answering from a fixed question -> answer map."""

    answers: dict[str, str]
    name: str = "scripted-describer"

    def answer(self, image: np.ndarray, question: str) -> str:
        if question not in self.answers:
            raise MaskeditError(f"scripted describer has no answer for {question!r}")
        return self.answers[question]


@dataclass
class StaticDescriber:
    """Mock-profile describer: fixed kind and completion for any image."""

    kind: str = "Photo"
    completion: str = "a synthetic scene of coloured rectangles"
    name: str = "static-describer"

    def answer(self, image: np.ndarray, question: str) -> str:
        return self.kind if question == KIND_QUESTION else self.completion


@dataclass
class RemoteChatClient:
    """Thin OpenAI-style chat adapter: endpoint + model, key from an env var,
    one retry on failure.  Never used by the offline test suite."""

    endpoint: str
    model: str
    api_key_env: str = "MASKEDIT_CHAT_API_KEY"
    timeout_s: float = 30.0
    name: str = "remote-chat"

    def complete(self, prompt: str) -> str:
        import os

        import requests

        key = os.environ.get(self.api_key_env, "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        payload = {"model": self.model, "messages": [{"role": "user", "content": prompt}]}
        last_error: Exception | None = None
        for _ in range(2):
            try:
                response = requests.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout_s)
                response.raise_for_status()
                return response.json()["choices"][0]["message"]["content"]
            except Exception as exc:
                last_error = exc
        raise MaskeditError(f"chat backend {self.endpoint} failed twice: {last_error}") from last_error
