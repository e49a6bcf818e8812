"""
LLM backends

One chat client parameterized by a BackendProfile, plus a replay backend
that answers from a recorded transcript. Both enforce the context-window
check before every request, keep the per-unit conversation memory and
record every exchange to `<out>/transcript/` so a run can be replayed.
"""

import difflib
import logging
import os
import time
from collections import defaultdict, deque
from pathlib import Path
from typing import Any, Callable, Deque, Dict, List, Optional, Union

from .common_utils import canonical_json, digest, read_json, write_json
from .error_handling import (
    ContextOverflow, FormatError, GiveUp, MissingCredentials, RateLimited, ReplayMiss,
    TransportError, ValidationError, retry_operation,
)
from .models import (
    SCHEMA_VERSION, BackendProfile, ConversationMemory, LlmResponsePart, PromptBudget,
    PromptEnvelope, Turn,
)
from .prompts import (
    CHUNK_LINES, CONTINUE_MARKER, assemble_multipart, build_format_retry_section, estimate_tokens,
)

logger = logging.getLogger(__name__)

MAX_PARTS = 20
MAX_FORMAT_RETRIES = 20
CONTINUE_PROMPT = "continue"
SYSTEM_PROMPT = "You are an expert C and Rust programmer. Answer only with the JSON document requested."

EventSink = Callable[..., None]


def envelope_digest(envelope: PromptEnvelope) -> str:
    """Replay key: sha256 of the envelope's canonical form"""
    return digest(canonical_json({"kind": envelope.kind.value,
                                  "schema": envelope.response_schema_id,
                                  "text": envelope.text}))


class TranscriptWriter:
    """Append-only `<dir>/<seq>.json` records of every exchange"""

    def __init__(self, directory: Union[str, Path], profile: Optional[BackendProfile] = None):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.seq = len(list(self.directory.glob("[0-9]*.json")))
        if profile is not None:
            write_json(self.directory / "profile.json",
                       {"name": profile.name, "context_window": profile.context_window,
                        "output_limit": profile.output_limit})

    def record(self, envelope: PromptEnvelope, parts: List[LlmResponsePart]) -> Path:
        self.seq += 1
        path = self.directory / f"{self.seq:05d}.json"
        write_json(path, {
            "schema": SCHEMA_VERSION,
            "seq": self.seq,
            "digest": envelope_digest(envelope),
            "kind": envelope.kind.value,
            "unit_id": envelope.unit_id,
            "response_schema_id": envelope.response_schema_id,
            "envelope_text": envelope.text,
            "parts": [p.to_dict() for p in parts],
        })
        return path

    def record_memory(self, memory: ConversationMemory) -> Path:
        path = self.directory / f"memory_{self.seq:05d}.json"
        write_json(path, memory.to_dict())
        return path


class LlmBackend:
    """
    Common request logic: window check, memory, transcript and format retries

    Subclasses implement `_exchange`, which returns the raw answer parts.
    """

    name = "backend"

    def __init__(self, profile: BackendProfile, transcript: Optional[TranscriptWriter] = None,
                 max_parts: int = MAX_PARTS, max_format_retries: int = MAX_FORMAT_RETRIES,
                 chunk_lines: int = CHUNK_LINES, event_sink: Optional[EventSink] = None):
        self.profile = profile
        self.transcript = transcript
        self.max_parts = max_parts
        self.max_format_retries = max_format_retries
        self.chunk_lines = chunk_lines
        self.event_sink = event_sink
        self.memory = ConversationMemory(unit_id="")

    def budget(self, memory: Optional[ConversationMemory] = None) -> PromptBudget:
        return PromptBudget(context_window=self.profile.context_window,
                            reserved_output=self.profile.output_limit,
                            memory_tokens=memory.est_tokens_total if memory else 0)

    def _event(self, event: str, **fields) -> None:
        if self.event_sink is not None:
            self.event_sink(event, **fields)

    def send(self, envelope: PromptEnvelope, memory: ConversationMemory) -> List[LlmResponsePart]:
        """
        Send one envelope in the conversation held by memory

        Raises:
            ContextOverflow: prompt + memory + reserved output exceed the window
        """
        prompt_tokens = estimate_tokens(envelope.text)
        needed = prompt_tokens + memory.est_tokens_total + self.profile.output_limit
        if needed > self.profile.context_window:
            raise ContextOverflow(needed, self.profile.context_window, envelope.unit_id)

        parts = self._exchange(envelope, memory)
        response = "".join(p.payload_fragment for p in parts)
        memory.turns.append(Turn(prompt=envelope.text, response=response,
                                 est_tokens=prompt_tokens + estimate_tokens(response)))
        if self.transcript is not None:
            self.transcript.record(envelope, parts)
        logger.debug(f"{envelope.kind.value} {envelope.unit_id}: {len(parts)} part(s)")
        return parts

    def _exchange(self, envelope: PromptEnvelope, memory: ConversationMemory) -> List[LlmResponsePart]:
        raise NotImplementedError

    def retry_on_format(self, envelope: PromptEnvelope, memory: ConversationMemory,
                        format_error: FormatError, attempt: int) -> List[LlmResponsePart]:
        """
        Resend with a corrective instruction naming the failure

        Raises:
            GiveUp: attempt reached max_format_retries
        """
        if attempt >= self.max_format_retries:
            raise GiveUp(envelope.unit_id, format_error.reason)
        label, body = build_format_retry_section(format_error, self.chunk_lines)
        corrected = envelope.with_section(label, body, estimate_tokens(f"{envelope.text}\n\n## {label}\n{body}"))
        logger.warning(f"⚠️ {envelope.unit_id}: unusable {envelope.kind.value} answer "
                       f"(attempt {attempt}): {format_error.reason}")
        self._event("format_retry", unit_id=envelope.unit_id, kind=envelope.kind.value,
                    attempt=attempt, reason=format_error.reason)
        return self.send(corrected, memory)

    def request_json(self, envelope: PromptEnvelope, memory: ConversationMemory,
                     validate: Optional[Callable[[Any], None]] = None) -> Any:
        """
        Send an envelope and return its decoded, validated answer

        `validate` may raise FormatError for domain checks beyond the
        schema; such failures are retried like decode errors.
        """
        parts = self.send(envelope, memory)
        attempt = 0
        while True:
            try:
                document = assemble_multipart(parts, envelope.response_schema_id)
                if validate is not None:
                    validate(document)
                return document
            except FormatError as error:
                attempt += 1
                parts = self.retry_on_format(envelope, memory, error, attempt)

    def clear_memory(self, unit_id: str) -> ConversationMemory:
        """Start a fresh conversation; the old one is persisted to the transcript"""
        if self.memory.turns and self.transcript is not None:
            self.transcript.record_memory(self.memory)
        self.memory = ConversationMemory(unit_id=unit_id)
        return self.memory


def create_client(profile: BackendProfile) -> Any:
    """
    OpenAI SDK client for a profile

    Raises:
        MissingCredentials: the profile's key variable is unset
    """
    api_key = os.getenv(profile.api_key_env)
    if not api_key:
        raise MissingCredentials(profile.name, profile.api_key_env)
    from openai import AzureOpenAI, OpenAI

    if profile.provider == "azure":
        if not profile.base_url:
            raise ValidationError(f"Profile {profile.name}: Azure endpoint (base_url) is not configured")
        return AzureOpenAI(api_key=api_key, azure_endpoint=profile.base_url,
                           api_version=profile.api_version or "2024-12-01-preview",
                           timeout=profile.timeout, max_retries=0)
    return OpenAI(api_key=api_key, base_url=profile.base_url, timeout=profile.timeout, max_retries=0)


def extract_text(response: Any, pointer: str) -> str:
    """Follow a JSON pointer such as /choices/0/message/content into a response"""
    document = response.model_dump() if hasattr(response, "model_dump") else response
    node = document
    for token in pointer.strip("/").split("/"):
        token = token.replace("~1", "/").replace("~0", "~")
        if isinstance(node, list):
            try:
                node = node[int(token)]
            except (ValueError, IndexError):
                node = None
        elif isinstance(node, dict):
            node = node.get(token)
        else:
            node = None
        if node is None:
            logger.warning(f"⚠️ Response has no text at {pointer}")
            return ""
    return node if isinstance(node, str) else str(node)


class ChatBackend(LlmBackend):
    """Chat-completions backend driven through the openai SDK"""

    name = "chat"

    def __init__(self, profile: BackendProfile, client: Any = None,
                 client_factory: Callable[[BackendProfile], Any] = create_client,
                 sleep: Callable[[float], None] = time.sleep, **kwargs):
        super().__init__(profile, **kwargs)
        self.client = client if client is not None else client_factory(profile)
        self.sleep = sleep

    def _messages(self, memory: ConversationMemory, prompt: str) -> List[Dict[str, str]]:
        messages = [{"role": "system", "content": SYSTEM_PROMPT}]
        for turn in memory.turns:
            messages.append({"role": "user", "content": turn.prompt})
            messages.append({"role": "assistant", "content": turn.response})
        messages.append({"role": "user", "content": prompt})
        return messages

    def _complete(self, messages: List[Dict[str, str]]) -> str:
        import openai

        @retry_operation(max_retries=self.profile.max_retries, delay=self.profile.backoff_seconds,
                         retry_on=(TransportError,), sleep=self.sleep)
        def call() -> str:
            try:
                response = self.client.chat.completions.create(
                    model=self.profile.model or self.profile.name,
                    messages=messages,
                    max_tokens=self.profile.output_limit,
                )
            except openai.RateLimitError as e:
                raise RateLimited(f"{self.profile.name}: rate limited: {e}") from e
            except openai.AuthenticationError as e:
                raise ValidationError(f"{self.profile.name}: authentication failed: {e}") from e
            except (openai.APIConnectionError, openai.APITimeoutError, openai.InternalServerError) as e:
                raise TransportError(f"{self.profile.name}: {e}") from e
            except openai.APIStatusError as e:
                raise ValidationError(f"{self.profile.name}: request rejected ({e.status_code}): {e}") from e
            return extract_text(response, self.profile.response_text_path)

        return call()

    def _exchange(self, envelope: PromptEnvelope, memory: ConversationMemory) -> List[LlmResponsePart]:
        messages = self._messages(memory, envelope.text)
        parts: List[LlmResponsePart] = []
        for index in range(1, self.max_parts + 1):
            content = self._complete(messages)
            parts.append(LlmResponsePart(part_index=index, payload_fragment=content))
            if not content.rstrip().endswith(CONTINUE_MARKER):
                break
            messages += [{"role": "assistant", "content": content},
                         {"role": "user", "content": CONTINUE_PROMPT}]
        else:
            logger.warning(f"⚠️ {envelope.unit_id}: answer still continuing after {self.max_parts} parts")
        return parts


class ReplayBackend(LlmBackend):
    """
    Answers from `<dir>/<seq>.json` records keyed by envelope digest

    Identical envelopes sent several times are answered in recorded order.
    """

    name = "replay"

    def __init__(self, transcript_dir: Union[str, Path], profile: Optional[BackendProfile] = None, **kwargs):
        self.transcript_dir = Path(transcript_dir)
        if profile is None:
            profile = self._recorded_profile()
        super().__init__(profile, **kwargs)
        self.queues: Dict[str, Deque[List[LlmResponsePart]]] = defaultdict(deque)
        self.texts: Dict[str, str] = {}
        self._load()

    def _recorded_profile(self) -> BackendProfile:
        path = self.transcript_dir / "profile.json"
        if path.is_file():
            data = read_json(path)
            return BackendProfile(name=data["name"], context_window=data["context_window"],
                                  output_limit=data["output_limit"])
        return BackendProfile(name="replay", context_window=200000, output_limit=8192)

    def _load(self) -> None:
        if not self.transcript_dir.is_dir():
            logger.warning(f"⚠️ Replay transcript {self.transcript_dir} does not exist")
            return
        for path in sorted(self.transcript_dir.glob("[0-9]*.json")):
            record = read_json(path)
            key = record.get("digest") or digest(canonical_json({
                "kind": record["kind"], "schema": record["response_schema_id"],
                "text": record["envelope_text"]}))
            self.queues[key].append([LlmResponsePart.from_dict(p) for p in record["parts"]])
            self.texts.setdefault(key, record.get("envelope_text", ""))
        logger.info(f"Loaded {sum(len(q) for q in self.queues.values())} recorded responses "
                    f"from {self.transcript_dir}")

    def _nearest(self, text: str) -> Optional[str]:
        best, best_ratio = None, -1.0
        for key, recorded in self.texts.items():
            ratio = difflib.SequenceMatcher(None, recorded, text, autojunk=False).quick_ratio()
            if ratio > best_ratio:
                best, best_ratio = key, ratio
        return best

    def _exchange(self, envelope: PromptEnvelope, memory: ConversationMemory) -> List[LlmResponsePart]:
        key = envelope_digest(envelope)
        queue = self.queues.get(key)
        if not queue:
            raise ReplayMiss(key, self._nearest(envelope.text))
        return list(queue.popleft())


def record_replay(transcript_dir: Union[str, Path], profile: Optional[BackendProfile] = None,
                  **kwargs) -> ReplayBackend:
    """Backend answering from a recorded or hand-authored transcript"""
    return ReplayBackend(transcript_dir, profile, **kwargs)
