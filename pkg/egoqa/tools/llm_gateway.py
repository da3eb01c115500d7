"""
Chat-completion gateway: prompt construction from the Jinja2 prompt files,
response post-processing, and pluggable transports (recorded fixtures for
offline runs, LangChain chat model for live runs, recorder in between).
"""
import base64
import hashlib
import json
import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from langchain_core.messages import HumanMessage, SystemMessage
from langchain_core.output_parsers import StrOutputParser
from pydantic import BaseModel, Field, field_validator

from egoqa.config import Config
from egoqa.errors import (
    Exhausted,
    FixtureMissing,
    MalformedResponse,
    MissingInput,
    TransientTransportError,
    TransportError,
)
from egoqa.tools.prompt_loader import PromptLoader

logger = logging.getLogger(__name__)

MAX_OBJECTS = 20
EXCLUDED_OBJECTS = frozenset({"wall", "floor"})
OBJECT_LIST_FRAMES = 8
CUE_IMAGES_PER_MODE = 4


class PromptKind(str, Enum):
    OBJECT_LIST = "object_list"
    CAPTION = "caption"
    COMPREHENSION_QA = "comprehension_qa"
    REFERRING_EXPR = "referring_expr"
    JUDGE_BINARY = "judge_binary"
    JUDGE_OPEN = "judge_open"
    REFINE_QUESTION = "refine_question"


# ============================================================================
# Request model
# ============================================================================

class TextPart(BaseModel):
    type: Literal["text"] = "text"
    text: str


class ImagePart(BaseModel):
    type: Literal["image"] = "image"
    path: Path

    @field_validator("path")
    @classmethod
    def _exists(cls, v: Path) -> Path:
        if not Path(v).is_file():
            raise ValueError(f"image not found: {v}")
        return v

    def file_digest(self) -> str:
        return hashlib.sha256(Path(self.path).read_bytes()).hexdigest()


Part = Union[TextPart, ImagePart]


class ChatMessage(BaseModel):
    role: Literal["system", "user", "assistant"]
    parts: List[Part] = Field(min_length=1)


class RetryPolicy(BaseModel):
    max_attempts: int = Field(default=Config.RETRY_MAX_ATTEMPTS, ge=1)
    base_delay_s: float = Field(default=Config.RETRY_BASE_DELAY_S, ge=0)
    factor: float = Field(default=Config.RETRY_FACTOR, ge=1)

    def delay(self, retry_index: int) -> float:
        return self.base_delay_s * self.factor ** retry_index


class ChatRequest(BaseModel):
    kind: Optional[PromptKind] = None
    model: str = Field(default_factory=lambda: Config.LLM_MODEL)
    messages: List[ChatMessage] = Field(min_length=1)
    temperature: float = Field(default_factory=lambda: Config.LLM_TEMPERATURE)
    max_tokens: int = Field(default_factory=lambda: Config.LLM_MAX_TOKENS, ge=1)
    retry: RetryPolicy = Field(default_factory=RetryPolicy)

    def canonical(self) -> dict:
        """Content that identifies a request; images by file name and content hash"""
        messages = []
        for m in self.messages:
            parts = []
            for p in m.parts:
                if isinstance(p, TextPart):
                    parts.append({"type": "text", "text": p.text})
                else:
                    parts.append({"type": "image", "name": Path(p.path).name, "sha256": p.file_digest()})
            messages.append({"role": m.role, "parts": parts})
        return {
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "messages": messages,
        }

    def digest(self) -> str:
        payload = json.dumps(self.canonical(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    @property
    def part_count(self) -> int:
        return sum(len(m.parts) for m in self.messages)


# ============================================================================
# Prompt construction
# ============================================================================

def _require(kind: PromptKind, inputs: dict, *names: str) -> None:
    missing = [n for n in names if inputs.get(n) is None]
    if missing:
        raise MissingInput(f"{kind.value} prompt needs {', '.join(missing)}")


def _images(paths: Sequence[Path]) -> List[ImagePart]:
    parts = []
    for p in paths:
        if not Path(p).is_file():
            raise MissingInput(f"Image not found: {p}")
        parts.append(ImagePart(path=Path(p)))
    return parts


def _text(name: str, **values) -> TextPart:
    return TextPart(text=PromptLoader.render(name, **values))


def build_prompt(kind: PromptKind, **inputs) -> ChatRequest:
    """
    Render the request for one prompt kind.

    Inputs per kind:
        object_list: frames (8 image paths)
        caption, comprehension_qa: images (4 crop paths then 4 highlight paths)
        referring_expr: qa_pairs (list of (question, answer))
        judge_binary, judge_open: question, ground_truth, prediction [, previous]
        refine_question: question [, keep]

    Raises:
        MissingInput: required input absent or an image file missing
    """
    kind = PromptKind(kind)

    if kind is PromptKind.OBJECT_LIST:
        _require(kind, inputs, "frames")
        frames = list(inputs["frames"])
        if len(frames) != OBJECT_LIST_FRAMES:
            raise MissingInput(f"object_list prompt needs {OBJECT_LIST_FRAMES} frames, got {len(frames)}")
        messages = [
            ChatMessage(role="system", parts=[_text("object_list", max_objects=MAX_OBJECTS)]),
            ChatMessage(role="user", parts=_images(frames)),
        ]
        return ChatRequest(kind=kind, messages=messages)

    if kind in (PromptKind.CAPTION, PromptKind.COMPREHENSION_QA):
        _require(kind, inputs, "images")
        images = list(inputs["images"])
        if len(images) != 2 * CUE_IMAGES_PER_MODE:
            raise MissingInput(f"{kind.value} prompt needs {2 * CUE_IMAGES_PER_MODE} cue images, got {len(images)}")
        task = "caption_task" if kind is PromptKind.CAPTION else "comprehension_task"
        parts: List[Part] = [_text("caption_crop")]
        parts += _images(images[:CUE_IMAGES_PER_MODE])
        parts.append(_text("caption_bbox"))
        parts += _images(images[CUE_IMAGES_PER_MODE:])
        parts.append(_text(task))
        return ChatRequest(kind=kind, messages=[ChatMessage(role="user", parts=parts)])

    if kind is PromptKind.REFERRING_EXPR:
        _require(kind, inputs, "qa_pairs")
        pairs = [{"question": q, "answer": a} for q, a in inputs["qa_pairs"]]
        if not pairs:
            raise MissingInput("referring_expr prompt needs at least one QA pair")
        return ChatRequest(kind=kind, messages=[
            ChatMessage(role="user", parts=[_text("referring_expr", qa_pairs=pairs)]),
        ])

    if kind in (PromptKind.JUDGE_BINARY, PromptKind.JUDGE_OPEN):
        _require(kind, inputs, "question", "ground_truth", "prediction")
        text = _text(
            kind.value,
            question=inputs["question"],
            ground_truth=inputs["ground_truth"],
            prediction=inputs["prediction"],
            previous=inputs.get("previous"),
        )
        return ChatRequest(kind=kind, messages=[ChatMessage(role="user", parts=[text])], temperature=0.0, max_tokens=8)

    _require(kind, inputs, "question")
    text = _text("refine_question", question=inputs["question"], keep=list(inputs.get("keep") or []))
    return ChatRequest(kind=kind, messages=[ChatMessage(role="user", parts=[text])])


# ============================================================================
# Response parsing
# ============================================================================

def _is_word_prefix(prefix: str, phrase: str) -> bool:
    head = prefix.split()
    words = phrase.split()
    return len(head) < len(words) and words[:len(head)] == head


def parse_object_list(raw: str, cap: Optional[int] = MAX_OBJECTS) -> List[str]:
    """
    Semicolon-separated object names -> cleaned list.

    Lowercases, drops wall/floor, exact duplicates and any phrase that starts
    with another listed name ("chair cushion" when "chair" is present), then
    keeps the first `cap` names.
    """
    seen = []
    for piece in (raw or "").split(";"):
        name = " ".join(piece.strip().strip(".").lower().split())
        if not name or name in EXCLUDED_OBJECTS or name in seen:
            continue
        seen.append(name)
    kept = [p for p in seen if not any(_is_word_prefix(q, p) for q in seen)]
    return kept[:cap] if cap is not None else kept


def merge_group_lists(odd: Sequence[str], even: Sequence[str]) -> List[str]:
    """Union of the two frame groups' lists, odd group first"""
    return parse_object_list("; ".join(list(odd) + list(even)), cap=None)


def split_frame_groups(total_frames: int, samples: int = 2 * OBJECT_LIST_FRAMES) -> Tuple[List[int], List[int]]:
    """
    Uniformly sample `samples` frames over the video and split them into the
    odd-numbered (1st, 3rd, ...) and even-numbered (2nd, 4th, ...) groups.
    """
    if total_frames <= 0:
        return [], []
    frames = [int(round(p)) for p in np.linspace(0, total_frames - 1, num=samples)]
    return frames[0::2], frames[1::2]


_QUESTION_RE = re.compile(r"^\s*(?:\d+[.)]\s*)?\**Question\**\s*:\s*(.*)$", re.IGNORECASE)
_ANSWER_RE = re.compile(r"^\s*\**Answer\**\s*:\s*(.*)$", re.IGNORECASE)


def parse_comprehension_qa(raw: str) -> List[Tuple[str, str]]:
    """Question:/Answer: blocks -> [(question, answer)]; unanswered questions dropped"""
    pairs = []
    question = None
    for line in (raw or "").splitlines():
        q = _QUESTION_RE.match(line)
        if q:
            question = q.group(1).strip()
            continue
        a = _ANSWER_RE.match(line)
        if a and question:
            answer = a.group(1).strip()
            if answer:
                pairs.append((question, answer))
            question = None
    return pairs


_BLOCK_RE = re.compile(r"\[(simple|complex) expression\]", re.IGNORECASE)


def parse_referring_expressions(raw: str) -> Tuple[str, str]:
    """
    Returns:
        (simple expression, situational expression)

    Raises:
        MalformedResponse: either block missing or empty
    """
    blocks: Dict[str, str] = {}
    matches = list(_BLOCK_RE.finditer(raw or ""))
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(raw)
        body = " ".join(line.strip() for line in raw[m.end():end].splitlines() if line.strip())
        blocks.setdefault(m.group(1).lower(), body)
    simple = blocks.get("simple", "")
    situational = blocks.get("complex", "")
    if not simple or not situational:
        raise MalformedResponse("Referring-expression response lacks a simple or complex block")
    return simple, situational


# ============================================================================
# Transports
# ============================================================================

class Transport(Protocol):
    def send(self, request: ChatRequest) -> str:
        ...


class MockTransport:
    """Replays recorded responses keyed by request digest; never touches the network"""

    def __init__(self, fixtures: Optional[Dict[str, str]] = None):
        self.fixtures: Dict[str, str] = dict(fixtures or {})
        self.calls: List[str] = []

    @classmethod
    def from_jsonl(cls, path: Path) -> "MockTransport":
        fixtures = {}
        path = Path(path)
        if path.exists():
            for line in path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    record = json.loads(line)
                    fixtures[record["request_digest"]] = record["response_text"]
        else:
            logger.warning(f"Fixture file {path} does not exist; every request will miss")
        return cls(fixtures)

    def add(self, request: ChatRequest, response_text: str) -> None:
        self.fixtures[request.digest()] = response_text

    def send(self, request: ChatRequest) -> str:
        digest = request.digest()
        self.calls.append(digest)
        if digest not in self.fixtures:
            raise FixtureMissing(f"No recorded response for request {digest[:12]} ({request.kind})")
        return self.fixtures[digest]


def _to_langchain(message: ChatMessage):
    if message.role == "system" and all(isinstance(p, TextPart) for p in message.parts):
        return SystemMessage(content="\n\n".join(p.text for p in message.parts))
    content = []
    for p in message.parts:
        if isinstance(p, TextPart):
            content.append({"type": "text", "text": p.text})
        else:
            suffix = Path(p.path).suffix.lstrip(".").lower() or "png"
            mime = "jpeg" if suffix == "jpg" else suffix
            data = base64.b64encode(Path(p.path).read_bytes()).decode("ascii")
            content.append({"type": "image_url", "image_url": {"url": f"data:image/{mime};base64,{data}"}})
    return HumanMessage(content=content)


class LangChainTransport:
    """Live transport over the configured OpenAI-compatible chat endpoint"""

    def send(self, request: ChatRequest) -> str:
        llm = Config.get_llm(temperature=request.temperature, max_tokens=request.max_tokens)
        chain = llm | StrOutputParser()
        try:
            return chain.invoke([_to_langchain(m) for m in request.messages])
        except Exception as e:
            raise TransientTransportError(f"{type(e).__name__}: {e}") from e


class RecordingTransport:
    """Forwards to another transport and appends each exchange to a fixture file"""

    def __init__(self, inner: Transport, path: Path):
        self.inner = inner
        self.path = Path(path)
        self._lock = threading.Lock()

    def send(self, request: ChatRequest) -> str:
        text = self.inner.send(request)
        record = {"request_digest": request.digest(), "response_text": text}
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as f:
                f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
        return text


def make_transport(live: bool, fixtures: Optional[Path] = None, record_to: Optional[Path] = None) -> Transport:
    if not live:
        return MockTransport.from_jsonl(fixtures) if fixtures else MockTransport()
    Config.validate_live()
    transport: Transport = LangChainTransport()
    if record_to:
        transport = RecordingTransport(transport, record_to)
    return transport


# ============================================================================
# Calls
# ============================================================================

def chat(request: ChatRequest, transport: Transport, sleep: Callable[[float], None] = time.sleep) -> str:
    """
    Send one request, retrying transient failures with exponential backoff.

    Raises:
        Exhausted: every attempt failed transiently
        MalformedResponse: empty or non-text response
        FixtureMissing: mock transport has no recording for the request
    """
    digest = request.digest()
    policy = request.retry
    for attempt in range(policy.max_attempts):
        try:
            text = transport.send(request)
        except TransientTransportError as e:
            if attempt + 1 >= policy.max_attempts:
                raise Exhausted(
                    f"Request {digest[:12]} failed {policy.max_attempts} times: {e}"
                ) from e
            delay = policy.delay(attempt)
            logger.warning(f"Request {digest[:12]} attempt {attempt + 1} failed ({e}); retrying in {delay:.1f}s")
            sleep(delay)
            continue

        if not isinstance(text, str) or not text.strip():
            raise MalformedResponse(f"Empty response for request {digest[:12]}")
        logger.info(f"Request {digest[:12]} ({request.kind.value if request.kind else 'raw'}) -> "
                    f"{len(text)} chars, response {hashlib.sha256(text.encode()).hexdigest()[:12]}, "
                    f"{attempt} retries")
        return text
    raise Exhausted(f"Request {digest[:12]}: no attempts allowed")


def chat_many(
    requests: Sequence[ChatRequest],
    transport: Transport,
    max_in_flight: int = Config.LLM_MAX_IN_FLIGHT,
    sleep: Callable[[float], None] = time.sleep,
) -> List[Union[str, TransportError]]:
    """Bounded concurrent chat; results (or the transport error) in request order"""
    results: List[Union[str, TransportError, None]] = [None] * len(requests)
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as executor:
        futures = {executor.submit(chat, req, transport, sleep): idx for idx, req in enumerate(requests)}
        for future in as_completed(futures):
            idx = futures[future]
            try:
                results[idx] = future.result()
            except TransportError as e:
                logger.error(f"Request {idx} failed: {e}")
                results[idx] = e
    return results
