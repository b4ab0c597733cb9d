"""Issue-sensitive caption decoding over discrete speaker distributions.

Turns any base next-token caption distribution into an issue-sensitive
captioner by recursive speaker/listener reasoning applied per decoding
step, with partitions of the image set playing the role of the issue
under discussion. Includes symbolic worlds, a synthetic base speaker, an
exact enumeration oracle, and the coverage/alignment measurement stack.
"""

from .dist import Dist, entropy, log_normalize, mask_renormalize, total_mass
from .engine import (
    MODELS,
    RsaConfig,
    StepState,
    build_step_state,
    caption_level_incremental,
    decode_beam,
    decode_greedy,
    exact_caption_speaker,
    listener_step,
    speaker_step,
    utility_u1,
    utility_u1_issue,
    utility_u2_entropy,
)
from .issues import (
    Context,
    Issue,
    cell_of,
    partition_by_attribute,
    partition_by_qa,
    sample_context,
)
from .metrics import (
    AlignmentReport,
    ClassifierConfig,
    CoverageReport,
    ExtractedPair,
    attribute_coverage,
    classify_caption,
    issue_alignment,
)
from .speakers import (
    SpeakerBackend,
    TemplateSpeakerParams,
    avg_feature_speaker,
    caption_logprob,
    remote_speaker,
    template_speaker,
)
from .worlds import (
    AttributeSchema,
    Lexicon,
    SymbolicImage,
    World,
    bundled_world_path,
    load_world,
    save_world,
    truth_value,
)

__version__ = "0.1.0"
