"""
Perception Module
Captioner side of the caption-then-reason evaluator: OCR merging, instruction-blind
caption requests, trajectory captioning and caption-corpus export
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Union

from assets.prompt_templates import CAPTION_TEMPLATES
from utils.errors import CaptionError, GatewayError
from utils.model_gateway import EVALUATION_PARAMS, Backend, ChatMessage, GenerationParams, ModelGateway, Role
from utils.schemas import CaptionRecordModel
from utils.trajectory_core import DomainTag, OcrToken, ScreenshotRef, State, Trajectory, dumps_record

logger = logging.getLogger(__name__)

DEFAULT_MIN_CONFIDENCE = 0.3
ROW_BUCKET = 0.02


@dataclass(frozen=True)
class CaptionRequest:
    screenshot_ref: ScreenshotRef
    ocr_block: str
    prompt_text: str

    def to_messages(self) -> List[ChatMessage]:
        """Screenshot first, then the prompt text ("the screenshot above")"""
        return [ChatMessage(Role.USER, self.prompt_text, (self.screenshot_ref,))]


@dataclass(frozen=True)
class CaptionRecord:
    screenshot_ref: ScreenshotRef
    ocr_block: str
    caption: str
    source_domain: DomainTag
    human_verified: bool = False

    def __post_init__(self):
        if self.source_domain not in (DomainTag.WEB, DomainTag.ANDROID, DomainTag.IOS):
            raise ValueError(f"caption records come from web, android or ios, not {self.source_domain}")
        if self.human_verified and not self.caption.strip():
            raise ValueError("a human-verified caption record needs a caption")

    def to_record(self) -> Dict[str, object]:
        return {
            "screenshot": self.screenshot_ref.sha256,
            "ocr": self.ocr_block,
            "caption": self.caption,
            "domain": DomainTag(self.source_domain).value,
            "human_verified": self.human_verified,
        }


def merge_ocr(tokens: Sequence[OcrToken], min_confidence: float = DEFAULT_MIN_CONFIDENCE) -> str:
    """
    Merge OCR tokens into reading order

    Tokens below min_confidence are dropped. Rows are formed by bucketing the
    bbox-center y at ROW_BUCKET of the screen height, then read left to right.
    Ties fall back to the text itself so the result does not depend on input order.

    Args:
        tokens: OCR tokens with normalized boxes
        min_confidence: Lowest confidence kept

    Returns:
        Token texts joined with newlines ("" when nothing survives)
    """

    kept = [t for t in tokens if t.confidence >= min_confidence]

    def reading_key(token: OcrToken):
        cx, cy = token.center
        return (int(cy // ROW_BUCKET), cx, cy, token.text)

    return "\n".join(t.text for t in sorted(kept, key=reading_key))


def build_caption_request(state: State, min_confidence: float = DEFAULT_MIN_CONFIDENCE) -> CaptionRequest:
    """Inference-time captioner prompt; it only ever sees the screen and its OCR"""

    ocr_block = merge_ocr(state.ocr or (), min_confidence)
    prompt = CAPTION_TEMPLATES["inference"].format(ocr_result=ocr_block)
    return CaptionRequest(state.screenshot_ref, ocr_block, prompt)


def build_caption_collection_request(state: State) -> CaptionRequest:
    """Prompt used to harvest captions from a strong vision model for the caption corpus"""

    return CaptionRequest(state.screenshot_ref, "", CAPTION_TEMPLATES["collection"])


def caption_trajectory(t: Trajectory, gateway: ModelGateway, backend: Backend,
                       params: GenerationParams = EVALUATION_PARAMS,
                       max_workers: int = 4) -> Trajectory:
    """
    Caption every state of a trajectory

    States that already carry a caption are left alone, so a fully captioned
    trajectory comes back unchanged. Requests fan out concurrently; the copy is
    only assembled once every caption arrived.

    Args:
        t: Trajectory whose states carry OCR tokens
        gateway: Model gateway
        backend: Captioner endpoint or scripted backend
        params: Generation parameters
        max_workers: Concurrent caption requests

    Returns:
        Copy of t with a caption on every state

    Raises:
        CaptionError: a request failed; carries the failing state index
    """

    pending = [i for i, s in enumerate(t.states) if s.caption is None]
    if not pending:
        return t

    for i in pending:
        if t.states[i].ocr is None:
            raise ValueError(f"state {i} of {t.task_id} has no OCR tokens; run OCR before captioning")

    requests_by_index = {i: build_caption_request(t.states[i]) for i in pending}

    def run(i: int) -> str:
        return gateway.complete(requests_by_index[i].to_messages(), params, backend)

    captions: Dict[int, str] = {}
    with ThreadPoolExecutor(max_workers=max(1, min(max_workers, len(pending)))) as pool:
        futures = {i: pool.submit(run, i) for i in pending}
        for i in pending:
            try:
                captions[i] = futures[i].result()
            except GatewayError as e:
                for f in futures.values():
                    f.cancel()
                logger.error(f"❌ Captioning {t.task_id} failed at state {i}: {e}")
                raise CaptionError(i, e) from e

    merged = [captions.get(i, s.caption) for i, s in enumerate(t.states)]
    logger.debug(f"Captioned {len(pending)} states of {t.task_id}")
    return t.with_captions(merged)


# ===== Caption corpus =====

def harvest_caption_record(state: State, gateway: ModelGateway, backend: Backend,
                           domain: Union[str, DomainTag],
                           params: GenerationParams = EVALUATION_PARAMS) -> CaptionRecord:
    """Ask a strong vision model for a caption; the record starts unverified"""

    request = build_caption_collection_request(state)
    caption = gateway.complete(request.to_messages(), params, backend)
    ocr_block = merge_ocr(state.ocr or ())
    return CaptionRecord(state.screenshot_ref, ocr_block, caption.strip(), DomainTag(domain))


def export_caption_records(path: Union[str, Path], records: Sequence[CaptionRecord],
                           verified_only: bool = False) -> int:
    """
    Write caption records as JSONL, one canonical line per record

    Args:
        path: Output file
        records: Records to write
        verified_only: Keep only human-verified records

    Returns:
        Number of lines written
    """

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    written = 0
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            if verified_only and not record.human_verified:
                continue
            doc = CaptionRecordModel.model_validate(record.to_record()).model_dump()
            fh.write(dumps_record(doc) + "\n")
            written += 1
    logger.info(f"✅ Wrote {written} caption records to {path}")
    return written


def load_caption_records(path: Union[str, Path]) -> List[CaptionRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = CaptionRecordModel.model_validate_json(line)
            records.append(CaptionRecord(ScreenshotRef(doc.screenshot), doc.ocr, doc.caption,
                                         DomainTag(doc.domain), doc.human_verified))
    return records
