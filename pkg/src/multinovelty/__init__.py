"""Multi-view prompt enrichment and response-corpus evaluation.

The package enriches prompts with textual and image-derived views before
generation, and scores any response corpus on diversity (MTLD, TF-IDF
semantic diversity, lexical entropy, embedding semantic diversity,
inverted Self-BLEU), sequential novelty, and judge-based correctness.
"""

from .corpus import (
    DecodingParams,
    PromptSpec,
    ResponseRecord,
    RunManifest,
    ViewRecord,
    append_records,
    load_manifest,
    load_prompts,
    read_records,
)
from .correctness import (
    BinaryEvalResult,
    CorrectnessReport,
    CorrectnessVerdict,
    StructureScore,
    classification_metrics,
    correctness_report,
    judge_relevance,
    mse_score,
    score_language_structure,
    summarize_answer,
)
from .diversity import (
    DiversityReport,
    diversity_report,
    lexical_entropy,
    mtld,
    sde,
    sdt,
    self_bleu_diversity,
)
from .novelty import (
    ChatNoveltyJudge,
    EmbeddingThresholdJudge,
    NoveltyLabeling,
    chat_judge,
    detect_novelty,
    embedding_judge,
    novelty_score,
)
from .provider import (
    CachedProvider,
    ChatReply,
    ChatRequest,
    EmbedReply,
    HttpProvider,
    MockProvider,
    ProviderConfig,
    cached,
    load_provider_config,
)
from .textops import cosine_sim, ngrams, tfidf_matrix, tokenize
from .views import (
    ViewRequest,
    assemble_prompt,
    describe_image,
    generate_image_views,
    generate_text_views,
    generate_views,
    rewrite_description,
)

__version__ = "0.1.0"
