from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ArgumentError
from .vocab import BOS, IMAGE_SENTINEL, PAD, STOP, Vocab

PROMPTS = (
    "What findings do you observe in this CT scan?",
    "Could you summarize the observations from this CT scan?",
    "What abnormalities are present in this CT scan?",
    "How would you interpret the results of this CT scan?",
)
SYSTEM_MESSAGE = "You are a radiology assistant reading a chest CT volume."


@dataclass
class PromptSample:
    system_message: str
    instruction: str
    answer: Optional[str]
    token_ids: List[int] = field(default_factory=list)
    loss_mask: List[int] = field(default_factory=list)

    @property
    def sentinel_index(self) -> int:
        return self.token_ids.index(IMAGE_SENTINEL)


def choose_instruction(rng: np.random.Generator, prompts: Sequence[str] = PROMPTS) -> str:
    return prompts[int(rng.integers(len(prompts)))]


def assemble_prompt(
    vocab: Vocab,
    instruction: str,
    answer: Optional[str] = None,
    system_message: str = SYSTEM_MESSAGE,
    training: bool = False,
) -> PromptSample:
    """Layout: [BOS] system [STOP] <image> instruction [STOP] answer [STOP].

    Only the answer tokens and the final STOP carry loss.
    """
    if training and not answer:
        raise ArgumentError("training samples need an answer")
    ids = [BOS] + vocab.encode(system_message) + [STOP, IMAGE_SENTINEL] + vocab.encode(instruction) + [STOP]
    mask = [0] * len(ids)
    if answer is not None:
        tail = vocab.encode(answer) + [STOP]
        ids += tail
        mask += [1] * len(tail)
    return PromptSample(system_message, instruction, answer, ids, mask)


def expand_for_splice(token_ids: Sequence[int], loss_mask: Sequence[int], n_visual: int) -> Tuple[np.ndarray, np.ndarray]:
    """Target ids/mask aligned with the spliced sequence; visual slots are PAD with mask 0."""
    ids = list(token_ids)
    mask = list(loss_mask)
    if IMAGE_SENTINEL in ids:
        i = ids.index(IMAGE_SENTINEL)
        ids = ids[:i] + [PAD] * n_visual + ids[i + 1:]
        mask = mask[:i] + [0] * n_visual + mask[i + 1:]
    return np.asarray(ids, dtype=np.int64), np.asarray(mask, dtype=np.int64)
