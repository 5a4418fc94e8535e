"""dreamground: zero-shot event detection with constrained grounding.

Detection runs in three stages per document. A drafting stage proposes
free-form (event name, trigger) pairs with recall-friendly prompting; a
grounding stage re-expresses the drafts in a closed ontology by decoding
under a tokenizer-aligned finite-state automaton, masking the logits of
every token that would leave the output grammar; a verdict stage keeps
only pairs the model confirms. Evaluation covers trigger identification,
trigger classification, and event identification.
"""

__version__ = "0.1.0"

from .automaton import (
    DecodeSession,
    LogitMask,
    StateTag,
    TokenAutomaton,
    allowed_tokens,
    build_grounder_fsm,
    canonical_output,
    enumerate_language,
    output_segments,
    step,
)
from .backends import (
    DEFAULT_AUTH_ENV,
    BackendDescriptor,
    BackendKind,
    ChatMessage,
    ChatRequest,
    LocalLogitBackend,
    RandomLogitBackend,
    RemoteChatBackend,
    SamplingParams,
    ScriptedBackend,
    complete_chat,
    make_scripted_backend,
    next_token_logits,
)
from .decoding import apply_mask, decode
from .errors import (
    BackendFailureError,
    BackendTimeoutError,
    BudgetExceededError,
    ConfigError,
    ContextOverflowError,
    DreamGroundError,
    EmptyMaskError,
    FixtureConflictError,
    IdMismatchError,
    IllegalTransitionError,
    IoFailureError,
    MalformedOntologyError,
    ParseFailureError,
    ShapeMismatchError,
    UnknownStateError,
    VocabEncodeError,
)
from .evaluation import (
    EvalReport,
    GoldInstance,
    MeanScores,
    Metric,
    Scores,
    aggregate_runs,
    load_dataset,
    make_report,
    map_to_span,
    render_csv,
    render_table,
    report_from_dict,
    report_to_dict,
    score,
)
from .figures import save_report_figures
from .ontology import (
    AtomizationMode,
    AtomizationPolicy,
    Document,
    EventOntology,
    EventType,
    GroundedMention,
    Violation,
    atomize,
    load_ontology,
    validate_mention,
)
from .pipeline import (
    Backends,
    FreeFormMention,
    JudgeVerdict,
    PipelineConfig,
    PromptStyle,
    RunResult,
    RunTrace,
    dreamer,
    grounder,
    judge,
    parse_freeform_json,
    parse_name_list,
    run_document,
)
from .prompts import (
    TEMPLATE_NAMES,
    event_type_block,
    load_template,
    names_block,
    ontology_block,
    pairs_block,
    render,
)
from .vocabulary import EncoderMode, Vocabulary, canonical_token_path, load_vocabulary
