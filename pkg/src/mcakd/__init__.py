"""Multi-component knowledge distillation for CSI prediction transformers."""

__version__ = "0.1.0"

from .csi import (
    ChannelGenConfig,
    CsiTensor,
    Dataset,
    generate_channel,
    load_dataset,
    make_dataset,
    normalize,
    save_dataset,
)
from .distill import (
    CaKs,
    CaKsModules,
    DistillLosses,
    attention_loss,
    build_caks,
    ca_ks_select,
    embedding_loss,
    hidden_loss,
    masked_token_mse,
    mcakd_loss,
    mse_loss,
)
from .errors import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    DegenerateMaskError,
    FormatError,
    McakdError,
    NumericError,
)
from .evaluate import EvalReport, bench, evaluate, nmse_db, persistence_baseline
from .model import (
    CsiMaskedAutoencoder,
    ModelConfig,
    Taps,
    build_model,
    count_params,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .tokens import (
    MaskSet,
    MaskStrategy,
    PatchSpec,
    TaskSpec,
    TokenBatch,
    make_mask,
    patchify,
    unpatchify,
)
from .train import (
    AlPlSchedule,
    FixedCycle,
    Phase,
    PlateauTriggered,
    TrainConfig,
    distill_student,
    phase_of,
    pretrain_teacher,
)
