from .ema import EMATeacherState, ema_update, ema_update_module
from .losses import cpc_infonce, data2vec_loss, dinosr_loss, hubertpp_loss, info_nce, jepa_loss
from .masking import (
    BlockMaskSpec,
    MultiBlockMask,
    MultiBlockMasker,
    SpanMaskSpec,
    expected_span_coverage,
    sample_multiblock_mask,
    sample_span_mask,
    span_masks,
)
from .models import OBJECTIVES, Objective, build_objective
from .quantize import Codebook, PrototypeBank
from .sinkhorn import sinkhorn_knopp
