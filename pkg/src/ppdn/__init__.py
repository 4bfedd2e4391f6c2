"""Push-pull self-supervised image denoising.

A trainable, evaluable toolkit for denoising without clean targets: two
re-corrupted observations of a noisy image are pushed toward intentionally
degraded views (row shifts and JPEG-quality decay) while a stochastic
shift-consistency term pulls spatial detail back, plus a Monte-Carlo
harness that audits the supervised-equivalence decompositions such
objectives rely on.

Layout:

    image       ImageTensor, PNG I/O, patches, dihedral augmentation
    rng         named reproducible random streams
    noise       AWGN / Poisson corruption and observation pairs
    degrade     stochastic row shifter and JPEG-quality decay
    network     DnCNN-style net, tape autodiff, Adam
    checkpoint  binary model format (magic "PPDN")
    losses      push and pull objectives with exact gradients
    training    the training loop, config files, telemetry, resume
    metrics     PSNR / SSIM and the directory evaluation harness
    theory      Monte-Carlo risk-decomposition and variance checks
    synthetic   procedural natural-statistics test scenes
    cli         `ppdn` command-line entry point
"""

from .degrade import JpegSpec, ShiftSpec, jpeg_compress, jpeg_decay, shift, shift_rows
from .image import (
    ImageTensor,
    PatchSet,
    augment,
    dihedral,
    extract_patches,
    load_image,
    reassemble_patches,
    save_image,
)
from .losses import PullTerms, PushTerms, mse, pull_loss, push_loss, total_step_loss
from .metrics import MetricsReport, evaluate, psnr, ssim
from .network import (
    AdamState,
    ArchConfig,
    DenoiserModel,
    apply_update,
    backward,
    forward,
    forward_with_tape,
    init,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .noise import NoiseSpec, ObservationPair, corrupt, make_observation_pair
from .rng import RngStream
from .synthetic import make_corpus_patches, make_natural_image
from .theory import (
    ConstantReductionResult,
    DecompositionResult,
    verify_constant_reduction,
    verify_n2n,
    verify_nr2n,
    verify_r2r,
)
from .training import TrainConfig, denoise, parse_config, train

__version__ = "0.1.0"
