from .generate import generate, next_token_probs, sample_next
from .model import LmConfig, LoraConfig, embed_ids, forward_lm, init_lm, init_lora, splice_embeddings
from .prompt import PROMPTS, SYSTEM_MESSAGE, PromptSample, assemble_prompt, choose_instruction, expand_for_splice
from .vocab import (
    BOS,
    EOS,
    IMAGE_SENTINEL,
    PAD,
    SPECIALS,
    STOP,
    UNK,
    Vocab,
    build_vocab,
    join_tokens,
    normalize_text,
    tokenize,
)
